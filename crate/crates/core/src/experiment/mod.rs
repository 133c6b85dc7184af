//! Config-driven experiment grids: the regression study, the MNIST study,
//! the two tuning sweeps and single runs.
//!
//! An [`ExperimentSpec`] is read from TOML, resolved into a list of
//! [`Cell`]s (one per configuration) and run once per trial with seed
//! `base_seed + trial`.

mod run;
mod table;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::MnistFiles;
use crate::error::{Error, Result};
use crate::manifold::{sample_schedule, SampleSchedule, SolverConfig, SolverMode, StopRule};
use crate::ssgd::SSGDConfig;
use crate::trimmed::floor_count;

pub use run::{run_cell, run_experiment, Prepared};
pub use table::{emit_report, percentile, ReportFormat, ResultRow, ResultTable, SummaryRow, CSV_HEADER, SCHEMA};

/// Fraction of points the regression contamination replaces.
pub const REGRESSION_CONTAMINATION: f64 = 0.4;

/// Fraction kept by the regression grid, `q = floor(0.6 N)`.
pub const REGRESSION_TRIM: f64 = 0.6;

/// 28x28 pixels plus the bias feature.
const MNIST_FEATURES: usize = 785;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RegressionGrid,
    MnistStudy,
    SsgdTuning,
    SmsTuning,
    SingleRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "DMS")]
    Dms,
    #[serde(rename = "SMS")]
    Sms,
    #[serde(rename = "SSGD")]
    Ssgd,
    /// Plain stochastic gradient descent on the untrimmed mean loss.
    #[serde(rename = "SGD", alias = "SGD_untrimmed")]
    Sgd,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Dms => "DMS",
            Method::Sms => "SMS",
            Method::Ssgd => "SSGD",
            Method::Sgd => "SGD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Regression,
    Mnist,
}

/// How `q` is chosen from `N` and the contamination level `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrimRule {
    /// `q = floor(fraction * N)`.
    FixedFraction { fraction: f64 },
    /// `q = floor((1 - p - margin) N)`, one configuration per margin.
    Overestimate { margins: Vec<f64> },
}

/// Shared trust-region settings. Unset fields keep the solver defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub gamma_inc: Option<f64>,
    pub gamma_dec: Option<f64>,
    pub eta: Option<f64>,
    pub delta0: Option<f64>,
    /// Deterministic stop radius.
    pub delta_min: Option<f64>,
    /// Sample-based epoch budget.
    pub epochs: Option<f64>,
    pub schedule: Option<SampleSchedule>,
    pub generator_cap: Option<usize>,
    pub loop_cap: Option<usize>,
    pub probe_kinks: Option<bool>,
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsgdSettings {
    pub alpha: Option<f64>,
    pub delta_decay: Option<f64>,
    pub batch: Option<usize>,
    pub epochs: Option<f64>,
}

/// Sweep axes for the tuning kinds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningGrid {
    /// `gamma_inc = beta`, `gamma_dec = 1 / beta`.
    pub betas: Vec<f64>,
    /// Constant per-iteration sample sizes for the sample-based method.
    pub batch_sizes: Vec<usize>,
    pub delta0s: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Batch sizes for the subgradient method.
    pub ssgd_batches: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSettings {
    pub source: Option<DataSource>,
    /// Directory holding the four MNIST IDX files.
    pub dir: Option<PathBuf>,
    pub n_test: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: PathBuf,
    /// File stem; reports go to `<dir>/<name>.csv`, `<dir>/<name>_summary.csv`
    /// and `<dir>/<name>.json`.
    pub name: Option<String>,
    /// Also write each run's full report, trace included.
    pub run_reports: bool,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings {
            dir: PathBuf::from("results"),
            name: None,
            run_reports: false,
        }
    }
}

/// Experiment description as read from TOML. Empty lists and unset
/// fields take per-kind defaults when the spec is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub dims: Vec<usize>,
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub contamination: Vec<f64>,
    #[serde(default)]
    pub trim: Option<TrimRule>,
    #[serde(default)]
    pub data: DataSettings,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub ssgd: SsgdSettings,
    #[serde(default)]
    pub tuning: TuningGrid,
    #[serde(default)]
    pub output: OutputSettings,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentSpec {
            kind,
            trials: None,
            base_seed: 0,
            methods: Vec::new(),
            dims: Vec::new(),
            sizes: Vec::new(),
            contamination: Vec::new(),
            trim: None,
            data: DataSettings::default(),
            solver: SolverSettings::default(),
            ssgd: SsgdSettings::default(),
            tuning: TuningGrid::default(),
            output: OutputSettings::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid experiment spec: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read spec {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize spec: {e}")))
    }

    pub fn source(&self) -> DataSource {
        self.data.source.unwrap_or(match self.kind {
            ExperimentKind::RegressionGrid | ExperimentKind::SingleRun => DataSource::Regression,
            _ => DataSource::Mnist,
        })
    }

    pub fn trials(&self) -> usize {
        self.trials.unwrap_or(match self.kind {
            ExperimentKind::RegressionGrid => 30,
            ExperimentKind::SingleRun => 1,
            _ => 5,
        })
    }

    pub fn mnist_dir(&self) -> PathBuf {
        self.data.dir.clone().unwrap_or_else(|| PathBuf::from("data/mnist-subset"))
    }

    pub fn output_name(&self) -> String {
        self.output.name.clone().unwrap_or_else(|| {
            match self.kind {
                ExperimentKind::RegressionGrid => "regression_grid",
                ExperimentKind::MnistStudy => "mnist_study",
                ExperimentKind::SsgdTuning => "ssgd_tuning",
                ExperimentKind::SmsTuning => "sms_tuning",
                ExperimentKind::SingleRun => "single_run",
            }
            .to_string()
        })
    }

    /// Check the spec and expand it into one cell per configuration.
    /// Every problem is reported here, before anything runs.
    pub fn resolve(&self) -> Result<Plan> {
        let bad = |msg: String| Err(Error::Config(msg));
        let trials = self.trials();
        if trials == 0 {
            return bad("trials must be at least 1".into());
        }
        let source = self.source();
        let regression = source == DataSource::Regression;
        if regression && self.data.dir.is_some() {
            return bad("data.dir only applies to MNIST data".into());
        }

        let methods = self.methods_or_default()?;
        let sizes = or_default(&self.sizes, if regression { &[500, 2000] } else { &[2000] });
        if sizes.contains(&0) {
            return bad("sizes must be positive".into());
        }
        if regression && sizes.iter().any(|&n| n < 5) {
            return bad("regression sizes must be at least 5 so every outlier class is nonempty".into());
        }
        let dims: Vec<usize> = if regression {
            let dims = or_default(&self.dims, &[5, 10, 20]);
            if dims.contains(&0) {
                return bad("dims must be positive".into());
            }
            dims
        } else {
            if !self.dims.is_empty() {
                return bad("dims are fixed by the MNIST features; leave them unset".into());
            }
            vec![MNIST_FEATURES]
        };
        let contamination = self.contamination_or_default(regression)?;
        let trim = self.trim_or_default(regression)?;

        let mut cells = Vec::new();
        for &n in &sizes {
            for &d in &dims {
                for &p in &contamination {
                    for keep in trim_fractions(&trim, p)? {
                        let q = floor_count(keep, n);
                        if q == 0 || q > n {
                            return bad(format!("q = {q} is invalid for N = {n}, p = {p}"));
                        }
                        for variant in self.variants(&methods, n)? {
                            cells.push(Cell {
                                label: variant.label,
                                solver: variant.solver,
                                source,
                                d,
                                n,
                                p,
                                keep_fraction: keep,
                                q,
                            });
                        }
                    }
                }
            }
        }
        for cell in &cells {
            cell.config(0)?;
        }

        let mnist = if regression {
            None
        } else {
            let files = MnistFiles::in_dir(self.mnist_dir());
            let missing = files.missing();
            if !missing.is_empty() {
                let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
                return bad(format!("missing MNIST files: {}", list.join(", ")));
            }
            let n_test = self.data.n_test.unwrap_or(1000);
            let n_train = sizes.iter().copied().max().unwrap_or(0);
            Some(MnistPlan { files, n_train, n_test })
        };

        Ok(Plan {
            kind: self.kind,
            base_seed: self.base_seed,
            trials,
            cells,
            mnist,
        })
    }

    fn methods_or_default(&self) -> Result<Vec<Method>> {
        let methods = match self.kind {
            ExperimentKind::RegressionGrid => or_default(&self.methods, &[Method::Dms, Method::Sms]),
            ExperimentKind::MnistStudy => or_default(&self.methods, &[Method::Sms, Method::Sgd]),
            ExperimentKind::SsgdTuning => {
                if !self.methods.is_empty() && self.methods != [Method::Ssgd] {
                    return Err(Error::Config("ssgd_tuning only runs SSGD".into()));
                }
                vec![Method::Ssgd]
            }
            ExperimentKind::SmsTuning => {
                if !self.methods.is_empty() && self.methods != [Method::Sms] {
                    return Err(Error::Config("sms_tuning only runs SMS".into()));
                }
                vec![Method::Sms]
            }
            ExperimentKind::SingleRun => {
                if self.methods.len() != 1 {
                    return Err(Error::Config("single_run needs exactly one method".into()));
                }
                self.methods.clone()
            }
        };
        let mut seen = methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != methods.len() {
            return Err(Error::Config("methods are listed more than once".into()));
        }
        Ok(methods)
    }

    fn contamination_or_default(&self, regression: bool) -> Result<Vec<f64>> {
        if regression {
            if self
                .contamination
                .iter()
                .any(|&p| (p - REGRESSION_CONTAMINATION).abs() > 1e-12)
            {
                return Err(Error::Config(format!(
                    "regression contamination is fixed at {REGRESSION_CONTAMINATION}"
                )));
            }
            return Ok(vec![REGRESSION_CONTAMINATION]);
        }
        let defaults: &[f64] = match self.kind {
            ExperimentKind::MnistStudy => &[0.0, 0.1, 0.2, 0.3, 0.4],
            _ => &[0.3],
        };
        let ps = or_default(&self.contamination, defaults);
        if let Some(p) = ps.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::Config(format!("contamination {p} outside [0, 1)")));
        }
        Ok(ps)
    }

    fn trim_or_default(&self, regression: bool) -> Result<TrimRule> {
        let rule = self.trim.clone().unwrap_or(if regression {
            TrimRule::FixedFraction {
                fraction: REGRESSION_TRIM,
            }
        } else if self.kind == ExperimentKind::MnistStudy {
            TrimRule::Overestimate {
                margins: vec![0.05, 0.10],
            }
        } else {
            TrimRule::Overestimate { margins: vec![0.05] }
        });
        match &rule {
            TrimRule::FixedFraction { fraction } if !(*fraction > 0.0 && *fraction <= 1.0) => {
                Err(Error::Config(format!("trim fraction {fraction} outside (0, 1]")))
            }
            TrimRule::Overestimate { margins } if margins.is_empty() => {
                Err(Error::Config("overestimate rule needs at least one margin".into()))
            }
            TrimRule::Overestimate { margins } if margins.iter().any(|m| !(0.0..1.0).contains(m)) => {
                Err(Error::Config("margins must lie in [0, 1)".into()))
            }
            _ => Ok(rule),
        }
    }

    fn solver_config(&self, mode: SolverMode, regression: bool) -> SolverConfig {
        let s = &self.solver;
        let mut c = SolverConfig::default();
        c.gamma_inc = s.gamma_inc.unwrap_or(c.gamma_inc);
        c.gamma_dec = s.gamma_dec.unwrap_or(c.gamma_dec);
        c.eta = s.eta.unwrap_or(c.eta);
        c.delta0 = s.delta0.unwrap_or(c.delta0);
        c.generator_cap = s.generator_cap.unwrap_or(c.generator_cap);
        c.loop_cap = s.loop_cap.unwrap_or(c.loop_cap);
        c.probe_kinks = s.probe_kinks.unwrap_or(c.probe_kinks);
        c.max_iterations = s.max_iterations.unwrap_or(c.max_iterations);
        c.mode = mode;
        match mode {
            SolverMode::Deterministic => {
                c.stop = StopRule::DeltaMin(s.delta_min.unwrap_or(0.01));
                c.schedule = SampleSchedule::Full;
            }
            SolverMode::Stochastic => {
                c.stop = StopRule::EpochBudget(s.epochs.unwrap_or(default_epochs(regression)));
                c.schedule = s.schedule.unwrap_or(if regression {
                    SampleSchedule::Regression
                } else {
                    SampleSchedule::Mnist
                });
            }
        }
        c
    }

    fn ssgd_config(&self, regression: bool) -> SSGDConfig {
        let s = &self.ssgd;
        let d = SSGDConfig::default();
        SSGDConfig {
            alpha: s.alpha.unwrap_or(d.alpha),
            delta_decay: s.delta_decay.unwrap_or(d.delta_decay),
            batch: s.batch.unwrap_or(d.batch),
            epoch_budget: s.epochs.unwrap_or(default_epochs(regression)),
            ..d
        }
    }

    /// Method configurations before `N`, `q` and the seed are known.
    fn variants(&self, methods: &[Method], n: usize) -> Result<Vec<Variant>> {
        let regression = self.source() == DataSource::Regression;
        let mut out = Vec::new();
        match self.kind {
            ExperimentKind::SmsTuning => {
                let g = &self.tuning;
                let betas = or_default(&g.betas, &[2.0, 1.5, 1.33, 1.1, 1.01]);
                let sizes = or_default(&g.batch_sizes, &scaled_batches(n, false));
                let delta0s = or_default(&g.delta0s, &[10.0, 1.0]);
                if let Some(b) = betas.iter().find(|b| !(**b > 1.0)) {
                    return Err(Error::Config(format!("beta must exceed 1, got {b}")));
                }
                if sizes.contains(&0) {
                    return Err(Error::Config("batch sizes must be positive".into()));
                }
                for &beta in &betas {
                    for &s in &sizes {
                        for &delta0 in &delta0s {
                            let mut c = self.solver_config(SolverMode::Stochastic, regression);
                            c.gamma_inc = beta;
                            c.gamma_dec = 1.0 / beta;
                            c.schedule = SampleSchedule::Constant(s);
                            c.delta0 = delta0;
                            out.push(Variant {
                                label: format!("SMS(beta={beta},s={s},delta0={delta0})"),
                                solver: SolverChoice::Manifold(c),
                            });
                        }
                    }
                }
            }
            ExperimentKind::SsgdTuning => {
                let g = &self.tuning;
                let alphas = or_default(&g.alphas, &[10.0, 1.0, 0.1, 0.01, 0.001]);
                let batches = or_default(&g.ssgd_batches, &scaled_batches(n, true));
                for &alpha in &alphas {
                    for &batch in &batches {
                        let mut config = self.ssgd_config(regression);
                        config.alpha = alpha;
                        config.batch = batch;
                        config.delta_decay = 0.0;
                        out.push(Variant {
                            label: format!("SSGD(alpha={alpha},s={batch})"),
                            solver: SolverChoice::Subgradient { config, trimmed: true },
                        });
                    }
                }
            }
            _ => {
                for &m in methods {
                    let solver = match m {
                        Method::Dms => SolverChoice::Manifold(self.solver_config(SolverMode::Deterministic, regression)),
                        Method::Sms => SolverChoice::Manifold(self.solver_config(SolverMode::Stochastic, regression)),
                        Method::Ssgd => SolverChoice::Subgradient {
                            config: self.ssgd_config(regression),
                            trimmed: true,
                        },
                        Method::Sgd => SolverChoice::Subgradient {
                            config: self.ssgd_config(regression),
                            trimmed: false,
                        },
                    };
                    out.push(Variant {
                        label: m.label().to_string(),
                        solver,
                    });
                }
            }
        }
        Ok(out)
    }
}

fn default_epochs(regression: bool) -> f64 {
    if regression {
        100.0
    } else {
        40.0
    }
}

/// Default tuning batch sizes `N/10, N^(2/3), N/100, N^(1/3), N^(1/4)`,
/// led by `N` itself for the subgradient sweep. Rounded up, deduplicated,
/// largest first.
fn scaled_batches(n: usize, with_full: bool) -> Vec<usize> {
    let nf = n as f64;
    let mut sizes: Vec<usize> = [nf / 10.0, nf.powf(2.0 / 3.0), nf / 100.0, nf.cbrt(), nf.powf(0.25)]
        .iter()
        .map(|s| ((s - 1e-9).ceil() as usize).clamp(1, n))
        .collect();
    if with_full {
        sizes.insert(0, n);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes.dedup();
    sizes
}

fn or_default<T: Clone>(given: &[T], default: &[T]) -> Vec<T> {
    if given.is_empty() {
        default.to_vec()
    } else {
        given.to_vec()
    }
}

fn trim_fractions(rule: &TrimRule, p: f64) -> Result<Vec<f64>> {
    match rule {
        TrimRule::FixedFraction { fraction } => Ok(vec![*fraction]),
        TrimRule::Overestimate { margins } => margins
            .iter()
            .map(|m| {
                let keep = 1.0 - p - m;
                if keep > 0.0 {
                    Ok(keep)
                } else {
                    Err(Error::Config(format!("p = {p} with margin {m} keeps no points")))
                }
            })
            .collect(),
    }
}

struct Variant {
    label: String,
    solver: SolverChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverChoice {
    Manifold(SolverConfig),
    /// Untrimmed runs fit the mean loss but still flag with the cell's `q`.
    Subgradient { config: SSGDConfig, trimmed: bool },
}

/// One configuration of the grid, run once per trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Value of the `method` column.
    pub label: String,
    pub solver: SolverChoice,
    pub source: DataSource,
    pub d: usize,
    pub n: usize,
    pub p: f64,
    /// Fraction behind `q`; used both for fitting and for flagging.
    pub keep_fraction: f64,
    /// Number of points kept when flagging outliers.
    pub q: usize,
}

/// Solver configuration for one run of a cell.
#[derive(Debug, Clone, PartialEq)]
pub enum RunConfig {
    Manifold(SolverConfig),
    Subgradient(SSGDConfig),
}

impl Cell {
    /// The smallest sample a run can draw must still keep one loss.
    fn check_sample(&self, size: usize) -> Result<()> {
        if floor_count(self.keep_fraction, size) == 0 {
            return Err(Error::Config(format!(
                "{}: a sample of {size} points keeps no losses at fraction {} (N = {})",
                self.label, self.keep_fraction, self.n
            )));
        }
        Ok(())
    }

    pub fn config(&self, seed: u64) -> Result<RunConfig> {
        match &self.solver {
            SolverChoice::Manifold(c) => {
                let c = SolverConfig {
                    trim_fraction: self.keep_fraction,
                    seed,
                    ..c.clone()
                };
                c.validate()?;
                if c.mode == SolverMode::Stochastic {
                    self.check_sample(sample_schedule(f64::MAX, self.n, c.schedule))?;
                }
                Ok(RunConfig::Manifold(c))
            }
            SolverChoice::Subgradient { config, trimmed } => {
                let c = SSGDConfig {
                    trim_fraction: if *trimmed { self.keep_fraction } else { 1.0 },
                    seed,
                    ..config.clone()
                };
                c.validate()?;
                self.check_sample(c.batch.min(self.n))?;
                Ok(RunConfig::Subgradient(c))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnistPlan {
    pub files: MnistFiles,
    pub n_train: usize,
    pub n_test: usize,
}

/// A validated spec: every configuration, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub kind: ExperimentKind,
    pub base_seed: u64,
    pub trials: usize,
    pub cells: Vec<Cell>,
    pub mnist: Option<MnistPlan>,
}

impl Plan {
    pub fn runs(&self) -> usize {
        self.cells.len() * self.trials
    }

    pub fn seed(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(trial as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_defaults() {
        let plan = ExperimentSpec::new(ExperimentKind::RegressionGrid).resolve().unwrap();
        assert_eq!(plan.trials, 30);
        assert_eq!(plan.cells.len(), 2 * 3 * 2);
        assert!(plan.cells.iter().all(|c| c.q == floor_count(0.6, c.n)));
        assert!(plan.cells.iter().all(|c| c.p == 0.4));
        assert_eq!(plan.runs(), 360);
    }

    #[test]
    fn mnist_q_uses_margin() {
        let mut spec = ExperimentSpec::new(ExperimentKind::MnistStudy);
        spec.data.dir = Some(PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-subset")));
        spec.contamination = vec![0.2];
        let plan = spec.resolve().unwrap();
        let qs: Vec<(String, usize)> = plan.cells.iter().map(|c| (c.label.clone(), c.q)).collect();
        assert_eq!(
            qs,
            vec![
                ("SMS".to_string(), 1500),
                ("SGD".to_string(), 1500),
                ("SMS".to_string(), 1400),
                ("SGD".to_string(), 1400)
            ]
        );
        let RunConfig::Subgradient(sgd) = plan.cells[1].config(3).unwrap() else {
            panic!("expected a subgradient run");
        };
        assert_eq!(sgd.trim_fraction, 1.0);
        assert_eq!(sgd.seed, 3);
    }

    #[test]
    fn tuning_axes() {
        let mut spec = ExperimentSpec::new(ExperimentKind::SmsTuning);
        spec.data.source = Some(DataSource::Regression);
        spec.tuning.betas = vec![1.5, 2.0];
        spec.tuning.batch_sizes = vec![40];
        spec.dims = vec![5];
        let plan = spec.resolve().unwrap();
        // two sizes N, two betas, one batch size, two initial radii
        assert_eq!(plan.cells.len(), 2 * 2 * 2);
        let SolverChoice::Manifold(c) = &plan.cells[3].solver else {
            panic!()
        };
        assert_eq!((c.gamma_inc, c.gamma_dec), (2.0, 0.5));
        assert_eq!(c.schedule, SampleSchedule::Constant(40));
        assert_eq!(c.delta0, 1.0);

        let mut spec = ExperimentSpec::new(ExperimentKind::SsgdTuning);
        spec.data.source = Some(DataSource::Regression);
        spec.ssgd.delta_decay = Some(0.5);
        let plan = spec.resolve().unwrap();
        for cell in &plan.cells {
            let RunConfig::Subgradient(c) = cell.config(0).unwrap() else {
                panic!()
            };
            assert_eq!(c.delta_decay, 0.0);
            assert_eq!(c.trim_fraction, 0.6);
        }
    }

    #[test]
    fn tuning_batches_scale_with_n() {
        assert_eq!(scaled_batches(60000, false), vec![6000, 1533, 600, 40, 16]);
        assert_eq!(scaled_batches(60000, true), vec![60000, 6000, 1533, 600, 40, 16]);
        assert_eq!(scaled_batches(2000, false), vec![200, 159, 20, 13, 7]);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            kind = "regression_grid"
            trials = 2
            base_seed = 7
            methods = ["DMS", "SGD_untrimmed"]
            dims = [3]
            sizes = [50]
            trim = { rule = "fixed_fraction", fraction = 0.6 }

            [solver]
            delta_min = 0.05

            [output]
            dir = "out"
            name = "tiny"
        "#;
        let spec = ExperimentSpec::from_toml(text).unwrap();
        assert_eq!(spec.methods, vec![Method::Dms, Method::Sgd]);
        assert_eq!(ExperimentSpec::from_toml(&spec.to_toml().unwrap()).unwrap(), spec);
        let plan = spec.resolve().unwrap();
        assert_eq!(plan.runs(), 4);
        assert_eq!(plan.seed(1), 8);
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let cases = [
            "kind = \"regression_grid\"\ntrials = 0",
            "kind = \"regression_grid\"\ncontamination = [0.2]",
            "kind = \"regression_grid\"\nsizes = [0]",
            "kind = \"regression_grid\"\ntrim = { rule = \"fixed_fraction\", fraction = 1.5 }",
            "kind = \"regression_grid\"\nmethods = [\"DMS\", \"DMS\"]",
            "kind = \"regression_grid\"\n[solver]\ngamma_inc = 0.5",
            "kind = \"regression_grid\"\nbogus = 1",
            "kind = \"single_run\"",
            "kind = \"mnist_study\"\n[data]\ndir = \"/nonexistent\"",
            "kind = \"mnist_study\"\ncontamination = [0.96]\n[data]\ndir = \"/nonexistent\"",
            "kind = \"nonsense\"",
            "kind = \"regression_grid\"\nmethods = [\"SMS\"]\nsizes = [100]",
        ];
        for text in cases {
            let err = ExperimentSpec::from_toml(text).and_then(|s| s.resolve()).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }
}
