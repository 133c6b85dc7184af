//! Manifold sampling trust-region method, deterministic (full data every
//! iteration) and sample-based.
//!
//! Each iteration builds a generator set from the selection functions active
//! at `w`, solves the direction subproblem, then probes the candidate point
//! `w + d`: tuples active there that are not yet in the set are added with
//! gradients evaluated at `w`, and the subproblem is re-solved. The step is
//! accepted when the realized decrease on an independent sample is more than
//! `eta` times the predicted decrease `-tau`.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{rng_for, Stream};
use crate::error::{Error, Result};
use crate::loss::{LossModel, Pieces};
use crate::report::{IterationTrace, RunReport, StopReason, Trace};
use crate::subproblem::{self, SubproblemInstance};
use crate::trimmed::{
    active_tuples_default, same_gradient, selection_gradients, trimmed_value, LocalGradientSource,
    SelectionGradient, TrimSpec,
};

/// `tau` at or above this is treated as no predicted decrease.
pub const NULL_STEP_TAU: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Deterministic,
    Stochastic,
}

/// How many points to draw per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSchedule {
    /// `ceil(max(0.01 N, 1e-6 N / delta^4))`
    Regression,
    /// `ceil(max(40, 1e-6 / delta^4))`
    Mnist,
    /// All `N` points.
    Full,
    /// A fixed size.
    Constant(usize),
}

/// Sample size for radius `delta` over `n` points, capped at `n`.
pub fn sample_schedule(delta: f64, n: usize, schedule: SampleSchedule) -> usize {
    let nf = n as f64;
    let raw = match schedule {
        SampleSchedule::Regression => (0.01 * nf).max(1e-6 * nf / delta.powi(4)),
        SampleSchedule::Mnist => 40f64.max(1e-6 / delta.powi(4)),
        SampleSchedule::Full => nf,
        SampleSchedule::Constant(s) => s as f64,
    };
    // The guard keeps decimal products such as 0.01 * 1000 from rounding up.
    let size = if raw.is_finite() { (raw - 1e-9).ceil().max(1.0) } else { nf };
    (size as usize).min(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once the radius drops below this value.
    DeltaMin(f64),
    /// Stop once `epochs * N` points have been drawn.
    EpochBudget(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub gamma_inc: f64,
    pub gamma_dec: f64,
    pub eta: f64,
    pub delta0: f64,
    /// Starting weights; zeros when absent.
    pub w0: Option<Vec<f64>>,
    pub mode: SolverMode,
    pub stop: StopRule,
    pub schedule: SampleSchedule,
    pub trim_fraction: f64,
    pub seed: u64,
    pub generator_cap: usize,
    pub loop_cap: usize,
    /// Also treat a change of absolute-loss sign at the candidate point as
    /// a new manifold to add.
    pub probe_kinks: bool,
    pub subproblem_tol: f64,
    pub subproblem_max_iter: usize,
    /// Hard cap on iterations regardless of the stop rule.
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gamma_inc: 1.01,
            gamma_dec: 0.99,
            eta: 1e-3,
            delta0: 10.0,
            w0: None,
            mode: SolverMode::Deterministic,
            stop: StopRule::DeltaMin(0.01),
            schedule: SampleSchedule::Full,
            trim_fraction: 1.0,
            seed: 0,
            generator_cap: 50,
            loop_cap: 5,
            probe_kinks: true,
            subproblem_tol: subproblem::DEFAULT_TOL,
            subproblem_max_iter: subproblem::DEFAULT_MAX_ITER,
            max_iterations: 1_000_000,
        }
    }
}

impl SolverConfig {
    /// Deterministic variant stopped at `delta < 0.01`.
    pub fn deterministic(trim_fraction: f64) -> Self {
        SolverConfig {
            trim_fraction,
            ..Default::default()
        }
    }

    /// Sample-based variant with the given schedule and epoch budget.
    pub fn stochastic(trim_fraction: f64, schedule: SampleSchedule, epochs: f64, seed: u64) -> Self {
        SolverConfig {
            mode: SolverMode::Stochastic,
            stop: StopRule::EpochBudget(epochs),
            schedule,
            trim_fraction,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma_inc > 1.0) {
            return bad(format!("gamma_inc must exceed 1, got {}", self.gamma_inc));
        }
        if !(self.gamma_dec > 0.0 && self.gamma_dec < 1.0) {
            return bad(format!("gamma_dec must lie in (0, 1), got {}", self.gamma_dec));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        if !(self.delta0 > 0.0 && self.delta0.is_finite()) {
            return bad(format!("delta0 must be positive, got {}", self.delta0));
        }
        if !(self.trim_fraction > 0.0 && self.trim_fraction <= 1.0) {
            return bad(format!("trim_fraction must lie in (0, 1], got {}", self.trim_fraction));
        }
        if self.generator_cap == 0 || self.loop_cap == 0 {
            return bad("generator_cap and loop_cap must be at least 1".into());
        }
        match (self.mode, self.stop) {
            (SolverMode::Deterministic, StopRule::DeltaMin(d)) if d > 0.0 => Ok(()),
            (SolverMode::Stochastic, StopRule::EpochBudget(e)) if e >= 0.0 => Ok(()),
            (mode, stop) => bad(format!("stop rule {stop:?} does not fit mode {mode:?}")),
        }
    }
}

/// Local gradients of sampled points at `w`.
struct SampledGradients<'a, M: ?Sized> {
    model: &'a M,
    w: &'a [f64],
    sample: &'a [usize],
    pieces: &'a [Pieces],
}

impl<M: LossModel + ?Sized> LocalGradientSource for SampledGradients<'_, M> {
    fn dim(&self) -> usize {
        self.model.num_params()
    }

    fn branch_count(&self, i: usize) -> usize {
        self.pieces[i].len()
    }

    fn add_branch(&self, i: usize, branch: usize, scale: f64, out: &mut [f64]) {
        self.model
            .add_piece_gradient(self.w, self.sample[i], self.pieces[i].get(branch), scale, out);
    }
}

/// Identity of a generator: its sorted tuple and, when kinks are probed,
/// the piece chosen for each member.
type ManifoldKey = (Vec<usize>, Vec<u8>);

fn manifold_key(g: &SelectionGradient, pieces: &[Pieces], with_pieces: bool) -> ManifoldKey {
    let ids = if with_pieces {
        g.tuple.iter().zip(&g.branches).map(|(&i, &b)| pieces[i].get(b as usize)).collect()
    } else {
        Vec::new()
    };
    (g.tuple.clone(), ids)
}

/// Result of the manifold sampling loop for one iteration.
#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub tau: f64,
    pub direction: Vec<f64>,
    /// Generators, with tuple indices local to the sample.
    pub generators: Vec<SelectionGradient>,
    pub passes: usize,
    /// The loop stopped at `loop_cap` while the probe still found new
    /// selection functions.
    pub capped: bool,
    /// Some enumeration hit `generator_cap`.
    pub truncated: bool,
    pub subproblem_converged: bool,
    pub losses_at_w: Vec<f64>,
    pub objective_at_w: f64,
    /// Sampled losses at `w + direction`.
    pub trial_losses: Vec<f64>,
    pub q: usize,
}

/// Build the generator set for `sample` at `w`, solve the subproblem and
/// grow the set from probes at the candidate point until it stabilizes.
pub fn manifold_loop<M: LossModel + ?Sized>(
    model: &M,
    w: &[f64],
    delta: f64,
    sample: &[usize],
    trim: TrimSpec,
    config: &SolverConfig,
) -> Result<LoopOutcome> {
    if sample.is_empty() {
        return Err(Error::invalid("manifold loop needs a nonempty sample"));
    }
    let q = trim.for_sample(sample.len());
    if q == 0 {
        return Err(Error::Config(format!(
            "sample of {} points retains no losses at trim fraction {}",
            sample.len(),
            trim.fraction()
        )));
    }
    let (losses_w, pieces_w): (Vec<f64>, Vec<Pieces>) = model.points(w, sample)?.into_iter().unzip();
    let objective_at_w = trimmed_value(&losses_w, q)?;
    let active = active_tuples_default(&losses_w, q)?;
    let source = SampledGradients {
        model,
        w,
        sample,
        pieces: &pieces_w,
    };
    let first = selection_gradients(&active, &source, &losses_w, q, config.generator_cap)?;
    let mut truncated = first.truncated;
    let mut seen: HashSet<ManifoldKey> = first
        .generators
        .iter()
        .map(|g| manifold_key(g, &pieces_w, config.probe_kinks))
        .collect();
    let mut generators = first.generators;

    let mut passes = 0;
    loop {
        passes += 1;
        let inst = SubproblemInstance {
            gradients: generators.iter().map(|g| g.gradient.clone()).collect(),
            offsets: generators.iter().map(|g| g.offset).collect(),
            radius: delta,
        };
        let sol = subproblem::solve_minmax_ball(&inst, config.subproblem_tol, config.subproblem_max_iter)?;
        let trial: Vec<f64> = w.iter().zip(&sol.direction).map(|(a, b)| a + b).collect();
        let (trial_losses, pieces_y): (Vec<f64>, Vec<Pieces>) = model.points(&trial, sample)?.into_iter().unzip();

        // Tuples active at the candidate point, with gradients and offsets
        // taken at `w`. When probing kinks, the pieces active at the
        // candidate point choose which local gradients to use.
        let active_y = active_tuples_default(&trial_losses, q)?;
        let probe_pieces = if config.probe_kinks { &pieces_y } else { &pieces_w };
        let probe = SampledGradients {
            model,
            w,
            sample,
            pieces: probe_pieces,
        };
        let found = selection_gradients(&active_y, &probe, &losses_w, q, config.generator_cap)?;
        truncated |= found.truncated;
        let fresh: Vec<(ManifoldKey, SelectionGradient)> = found
            .generators
            .into_iter()
            .map(|g| (manifold_key(&g, probe_pieces, config.probe_kinks), g))
            .filter(|(key, g)| {
                !seen.contains(key) && !generators.iter().any(|h| same_gradient(&h.gradient, &g.gradient))
            })
            .collect();

        let done = fresh.is_empty();
        if done || passes >= config.loop_cap {
            return Ok(LoopOutcome {
                tau: sol.tau,
                direction: sol.direction,
                generators,
                passes,
                capped: !done,
                truncated,
                subproblem_converged: sol.converged,
                losses_at_w: losses_w,
                objective_at_w,
                trial_losses,
                q,
            });
        }
        for (key, g) in fresh {
            seen.insert(key);
            generators.push(g);
        }
    }
}

/// `(h(l_S'(w)) - h(l_S'(w + d))) / (-tau)` on the secondary sample.
pub fn acceptance_ratio<M: LossModel + ?Sized>(
    model: &M,
    w: &[f64],
    d: &[f64],
    tau: f64,
    sample: &[usize],
    trim: TrimSpec,
) -> Result<f64> {
    if !(tau < 0.0) {
        return Err(Error::Contract(format!("acceptance ratio needs tau < 0, got {tau}")));
    }
    let q = trim.for_sample(sample.len());
    if q == 0 {
        return Err(Error::Config("secondary sample retains no losses".into()));
    }
    let trial: Vec<f64> = w.iter().zip(d).map(|(a, b)| a + b).collect();
    let before = trimmed_value(&model.losses(w, sample)?, q)?;
    let after = trimmed_value(&model.losses(&trial, sample)?, q)?;
    Ok((before - after) / -tau)
}

/// Run the manifold sampling trust-region method.
pub fn run_ms<M: LossModel + ?Sized>(config: &SolverConfig, model: &M) -> Result<RunReport> {
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
    let deterministic = config.mode == SolverMode::Deterministic;
    let mut rng = rng_for(config.seed, Stream::Solver);
    let full: Vec<usize> = (0..n).collect();
    let budget = match config.stop {
        StopRule::EpochBudget(e) => (e * n as f64).round() as u64,
        StopRule::DeltaMin(_) => u64::MAX,
    };

    let start = Instant::now();
    let mut delta = config.delta0;
    let mut draws = 0u64;
    let mut trace = Vec::new();
    let stop_reason = loop {
        let k = trace.len();
        match config.stop {
            StopRule::DeltaMin(min) if delta < min => break StopReason::RadiusBelowMinimum,
            StopRule::EpochBudget(_) if draws >= budget => break StopReason::BudgetExhausted,
            _ => {}
        }
        if k >= config.max_iterations {
            break StopReason::IterationLimit;
        }

        let size = if deterministic {
            n
        } else {
            sample_schedule(delta, n, config.schedule)
        };
        let primary = if deterministic {
            full.clone()
        } else {
            index::sample(&mut rng, n, size).into_vec()
        };
        let out = manifold_loop(model, &w, delta, &primary, trim, config)?;
        let secondary = if deterministic {
            full.clone()
        } else {
            index::sample(&mut rng, n, size).into_vec()
        };
        draws += (primary.len() + secondary.len()) as u64;

        let (objective, trial_objective, rho) = if out.tau >= NULL_STEP_TAU {
            let objective = if deterministic {
                out.objective_at_w
            } else {
                trimmed_value(&model.losses(&w, &secondary)?, trim.for_sample(secondary.len()))?
            };
            (objective, None, None)
        } else {
            let (before, after) = if deterministic {
                (out.objective_at_w, trimmed_value(&out.trial_losses, out.q)?)
            } else {
                let q2 = trim.for_sample(secondary.len());
                let trial: Vec<f64> = w.iter().zip(&out.direction).map(|(a, b)| a + b).collect();
                (
                    trimmed_value(&model.losses(&w, &secondary)?, q2)?,
                    trimmed_value(&model.losses(&trial, &secondary)?, q2)?,
                )
            };
            (before, Some(after), Some((before - after) / -out.tau))
        };
        if !objective.is_finite() || trial_objective.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Aborted {
                iteration: k,
                reason: format!("non-finite objective (delta = {delta}, tau = {})", out.tau),
            });
        }

        let accepted = rho.is_some_and(|r| r > config.eta);
        trace.push(IterationTrace {
            k,
            delta,
            tau: out.tau,
            rho,
            sample_size_primary: primary.len(),
            sample_size_secondary: secondary.len(),
            accepted,
            generators_used: out.generators.len(),
            loop_passes: out.passes,
            objective,
            trial_objective,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if accepted {
            for (wi, di) in w.iter_mut().zip(&out.direction) {
                *wi += di;
            }
            delta *= config.gamma_inc;
        } else {
            delta *= config.gamma_dec;
        }
    };

    let final_objective = trimmed_value(&model.all_losses(&w)?, trim.q())?;
    Ok(RunReport {
        method: if deterministic { "DMS" } else { "SMS" }.into(),
        config: serde_json::to_value(config)?,
        seed: config.seed,
        n,
        q: trim.q(),
        final_weights: w,
        final_objective,
        iterations: trace.len(),
        draws,
        stop_reason,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        trace: Trace::TrustRegion(trace),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::AffineLosses;

    #[test]
    fn schedule_examples() {
        assert_eq!(sample_schedule(10.0, 1000, SampleSchedule::Regression), 10);
        assert_eq!(sample_schedule(0.01, 1000, SampleSchedule::Regression), 1000);
        assert_eq!(sample_schedule(10.0, 60000, SampleSchedule::Mnist), 40);
        assert_eq!(sample_schedule(0.1, 500, SampleSchedule::Regression), 5);
        assert_eq!(sample_schedule(0.03, 500, SampleSchedule::Regression), 500);
        assert_eq!(sample_schedule(10.0, 30, SampleSchedule::Mnist), 30);
        assert_eq!(sample_schedule(1.0, 77, SampleSchedule::Full), 77);
        assert_eq!(sample_schedule(1.0, 77, SampleSchedule::Constant(16)), 16);
        assert_eq!(sample_schedule(1e-300, 77, SampleSchedule::Mnist), 77);
    }

    fn two_piece() -> AffineLosses {
        // l1(w) = w, l2(w) = 2 - w
        AffineLosses {
            slopes: vec![vec![1.0], vec![-1.0]],
            intercepts: vec![0.0, 2.0],
        }
    }

    #[test]
    fn loop_finds_both_pieces_at_the_tie() {
        let model = two_piece();
        let trim = TrimSpec::new(1, 2).unwrap();
        let out = manifold_loop(&model, &[1.0], 0.5, &[0, 1], trim, &SolverConfig::default()).unwrap();
        assert_eq!(out.generators.len(), 2);
        assert!(out.tau.abs() < 1e-7);
        assert!(out.direction[0].abs() < 1e-7);
    }

    #[test]
    fn loop_discovers_tuple_at_trial_point() {
        // Mean of the two smallest of -2w, w + 0.1 and 0.2. At w = 0 the
        // tuple is {0, 1}; a step of 0.5 swaps the second member for 2.
        let model = AffineLosses {
            slopes: vec![vec![-2.0], vec![1.0], vec![0.0]],
            intercepts: vec![0.0, 0.1, 0.2],
        };
        let trim = TrimSpec::new(2, 3).unwrap();
        let out = manifold_loop(&model, &[0.0], 0.5, &[0, 1, 2], trim, &SolverConfig::default()).unwrap();
        assert_eq!(out.generators.len(), 2);
        assert_eq!(out.generators[1].tuple, vec![0, 2]);
        assert!((out.generators[1].offset - 0.05).abs() < 1e-12);
        assert_eq!(out.passes, 2);
        assert!(!out.capped);
        assert!((out.tau + 0.25).abs() < 1e-7);

        let capped = SolverConfig {
            loop_cap: 1,
            ..Default::default()
        };
        let one = manifold_loop(&model, &[0.0], 0.5, &[0, 1, 2], trim, &capped).unwrap();
        assert_eq!(one.passes, 1);
        assert!(one.capped);
        assert_eq!(one.generators.len(), 1);
    }

    #[test]
    fn smooth_region_is_steepest_descent() {
        let model = AffineLosses {
            slopes: vec![vec![3.0, 4.0], vec![0.0, 1.0]],
            intercepts: vec![0.0, 100.0],
        };
        let trim = TrimSpec::new(1, 2).unwrap();
        let out = manifold_loop(&model, &[0.0, 0.0], 1.0, &[0, 1], trim, &SolverConfig::default()).unwrap();
        assert_eq!(out.passes, 1);
        assert_eq!(out.generators.len(), 1);
        assert!((out.direction[0] + 0.6).abs() < 1e-12 && (out.direction[1] + 0.8).abs() < 1e-12);
        assert!((out.tau + 5.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_examples_and_contract() {
        let model = AffineLosses {
            slopes: vec![vec![1.0]],
            intercepts: vec![0.0],
        };
        let trim = TrimSpec::new(1, 1).unwrap();
        assert_eq!(acceptance_ratio(&model, &[1.0], &[-0.5], -0.5, &[0], trim).unwrap(), 1.0);
        assert_eq!(acceptance_ratio(&model, &[1.0], &[0.0], -0.5, &[0], trim).unwrap(), 0.0);
        assert_eq!(acceptance_ratio(&model, &[1.0], &[0.5], -1.0, &[0], trim).unwrap(), -0.5);
        assert!(matches!(
            acceptance_ratio(&model, &[1.0], &[0.5], 0.0, &[0], trim),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_budget_returns_start() {
        let model = two_piece();
        let mut cfg = SolverConfig::stochastic(0.5, SampleSchedule::Full, 0.0, 1);
        cfg.w0 = Some(vec![0.25]);
        let r = run_ms(&cfg, &model).unwrap();
        assert_eq!(r.final_weights, vec![0.25]);
        assert!(r.trace.is_empty());
        let mut det = SolverConfig::deterministic(0.5);
        det.stop = StopRule::DeltaMin(100.0);
        assert!(run_ms(&det, &model).unwrap().trace.is_empty());
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        c.gamma_inc = 1.0;
        assert!(c.validate().is_err());
        let mut c = SolverConfig::default();
        c.stop = StopRule::EpochBudget(3.0);
        assert!(c.validate().is_err());
        let mut c = SolverConfig::default();
        c.trim_fraction = 0.1;
        assert!(matches!(run_ms(&c, &two_piece()), Err(Error::Config(_))));
    }
}
