//! Stochastic subgradient descent on the trimmed objective, and the plain
//! (untrimmed) stochastic gradient reference obtained with trim fraction 1.

use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{rng_for, Stream};
use crate::error::{Error, Result};
use crate::loss::LossModel;
use crate::report::{RunReport, StopReason, SubgradientStep, Trace};
use crate::trimmed::{lexicographic_tuple, trimmed_value, TrimSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SSGDConfig {
    /// Initial step size.
    pub alpha: f64,
    /// Step size at step `k` (from 1) is `alpha / k^delta_decay`.
    pub delta_decay: f64,
    pub batch: usize,
    pub trim_fraction: f64,
    pub epoch_budget: f64,
    pub seed: u64,
    pub w0: Option<Vec<f64>>,
}

impl Default for SSGDConfig {
    fn default() -> Self {
        SSGDConfig {
            alpha: 0.1,
            delta_decay: 0.0,
            batch: 40,
            trim_fraction: 1.0,
            epoch_budget: 100.0,
            seed: 0,
            w0: None,
        }
    }
}

impl SSGDConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.delta_decay >= 0.0) {
            return bad(format!("delta_decay must be nonnegative, got {}", self.delta_decay));
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.trim_fraction > 0.0 && self.trim_fraction <= 1.0) {
            return bad(format!("trim_fraction must lie in (0, 1], got {}", self.trim_fraction));
        }
        if !(self.epoch_budget >= 0.0) {
            return bad(format!("epoch_budget must be nonnegative, got {}", self.epoch_budget));
        }
        Ok(())
    }
}

/// `(1/q_s) * sum` of local gradients over the lexicographic q_s-tuple of
/// the sampled losses, taking the first piece at kinks. Returns the
/// gradient and the sampled trimmed value.
pub fn trimmed_subgradient<M: LossModel + ?Sized>(
    model: &M,
    w: &[f64],
    sample: &[usize],
    trim: TrimSpec,
) -> Result<(Vec<f64>, f64)> {
    let q = trim.for_sample(sample.len());
    if q == 0 {
        return Err(Error::Config(format!(
            "batch of {} points retains no losses at trim fraction {}",
            sample.len(),
            trim.fraction()
        )));
    }
    let (losses, pieces): (Vec<f64>, Vec<_>) = model.points(w, sample)?.into_iter().unzip();
    let tuple = lexicographic_tuple(&losses, q)?;
    let mut g = vec![0.0; model.num_params()];
    let scale = 1.0 / q as f64;
    for &j in &tuple {
        model.add_piece_gradient(w, sample[j], pieces[j].get(0), scale, &mut g);
    }
    Ok((g, trimmed_value(&losses, q)?))
}

/// Run stochastic subgradient descent until `epoch_budget * N` points
/// have been drawn.
pub fn run_ssgd<M: LossModel + ?Sized>(config: &SSGDConfig, model: &M) -> Result<RunReport> {
    config.validate()?;
    let n = model.num_points();
    if n == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    let trim = TrimSpec::from_fraction(config.trim_fraction, n)
        .map_err(|e| Error::Config(format!("trim fraction {} with N = {n}: {e}", config.trim_fraction)))?;
    let mut w = match &config.w0 {
        Some(w0) if w0.len() != model.num_params() => {
            return Err(Error::DimensionMismatch {
                expected: model.num_params(),
                got: w0.len(),
            })
        }
        Some(w0) => w0.clone(),
        None => vec![0.0; model.num_params()],
    };
    let batch = config.batch.min(n);
    let budget = (config.epoch_budget * n as f64).round() as u64;
    let mut rng = rng_for(config.seed, Stream::Solver);

    let start = Instant::now();
    let mut draws = 0u64;
    let mut steps = Vec::new();
    while draws < budget {
        let k = steps.len() + 1;
        let sample = index::sample(&mut rng, n, batch).into_vec();
        draws += batch as u64;
        let (g, batch_objective) = trimmed_subgradient(model, &w, &sample, trim)?;
        let step_size = config.alpha / (k as f64).powf(config.delta_decay);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= step_size * gi;
        }
        if let Some(index) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::Aborted {
                iteration: k,
                reason: format!("weight {index} became non-finite (step size {step_size})"),
            });
        }
        steps.push(SubgradientStep {
            k,
            step_size,
            batch,
            gradient_norm: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
            batch_objective,
        });
    }

    let final_objective = trimmed_value(&model.all_losses(&w)?, trim.q())?;
    Ok(RunReport {
        method: if trim.q() == n { "SGD" } else { "SSGD" }.into(),
        config: serde_json::to_value(config)?,
        seed: config.seed,
        n,
        q: trim.q(),
        final_weights: w,
        final_objective,
        iterations: steps.len(),
        draws,
        stop_reason: StopReason::BudgetExhausted,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        trace: Trace::Subgradient(steps),
    })
}
