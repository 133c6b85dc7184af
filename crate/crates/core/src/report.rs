//! Run reports shared by the trust-region and subgradient solvers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One iteration of the manifold sampling trust-region method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub k: usize,
    /// Radius used at this iteration.
    pub delta: f64,
    pub tau: f64,
    /// `None` for forced null steps (`tau >= -1e-12`).
    pub rho: Option<f64>,
    pub sample_size_primary: usize,
    pub sample_size_secondary: usize,
    pub accepted: bool,
    pub generators_used: usize,
    pub loop_passes: usize,
    /// Sampled trimmed objective at `w^k` on the secondary sample.
    pub objective: f64,
    /// Sampled trimmed objective at `w^k + d^k`, when evaluated.
    pub trial_objective: Option<f64>,
    /// Seconds since the start of the run.
    pub wall_time: f64,
}

/// One step of stochastic subgradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgradientStep {
    pub k: usize,
    pub step_size: f64,
    pub batch: usize,
    pub gradient_norm: f64,
    /// Trimmed objective on the batch at `w^k`.
    pub batch_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "steps", rename_all = "snake_case")]
pub enum Trace {
    TrustRegion(Vec<IterationTrace>),
    Subgradient(Vec<SubgradientStep>),
}

impl Trace {
    pub fn len(&self) -> usize {
        match self {
            Trace::TrustRegion(t) => t.len(),
            Trace::Subgradient(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn trust_region(&self) -> Option<&[IterationTrace]> {
        match self {
            Trace::TrustRegion(t) => Some(t),
            Trace::Subgradient(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RadiusBelowMinimum,
    BudgetExhausted,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    /// Solver configuration as it was run.
    pub config: serde_json::Value,
    pub seed: u64,
    pub n: usize,
    pub q: usize,
    pub final_weights: Vec<f64>,
    /// Trimmed objective over the full dataset at the final weights.
    pub final_objective: f64,
    pub iterations: usize,
    /// Data points drawn, summed over all samples.
    pub draws: u64,
    pub stop_reason: StopReason,
    pub wall_time_seconds: f64,
    pub trace: Trace,
}

impl RunReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
