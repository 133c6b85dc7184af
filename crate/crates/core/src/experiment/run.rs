//! Executing a resolved plan.

use crate::data::{contaminate_regression, flip_labels, generate_regression, load_mnist, LabeledDataset};
use crate::error::{Error, Result};
use crate::evaluation::{outlier_report, test_accuracy};
use crate::loss::{AbsRegression, LossModel, SoftmaxClassifier};
use crate::manifold::run_ms;
use crate::par;
use crate::report::RunReport;
use crate::ssgd::run_ssgd;

use super::{Cell, DataSource, ExperimentSpec, Plan, ResultRow, ResultTable, RunConfig};

/// Data loaded once and shared by every run.
#[derive(Debug, Clone, Default)]
pub struct Prepared {
    pub mnist_train: Option<LabeledDataset>,
    pub mnist_test: Option<LabeledDataset>,
}

impl Prepared {
    pub fn load(plan: &Plan) -> Result<Self> {
        let Some(m) = &plan.mnist else {
            return Ok(Prepared::default());
        };
        let (train, test) = load_mnist(&m.files, m.n_train, m.n_test)
            .map_err(|e| Error::Config(format!("cannot load MNIST data: {e}")))?;
        Ok(Prepared {
            mnist_train: Some(train),
            mnist_test: Some(test),
        })
    }
}

/// Run one cell for one trial and score it.
pub fn run_cell(cell: &Cell, trial: usize, seed: u64, prepared: &Prepared) -> Result<(ResultRow, RunReport)> {
    let config = cell.config(seed)?;
    match cell.source {
        DataSource::Regression => {
            let clean = generate_regression(cell.d, cell.n, seed)?;
            let data = contaminate_regression(&clean, seed)?;
            let model = AbsRegression::new(&data)?;
            score(cell, trial, seed, &config, &model, &data, None)
        }
        DataSource::Mnist => {
            let (Some(train), Some(test)) = (&prepared.mnist_train, &prepared.mnist_test) else {
                return Err(Error::Config("MNIST data was not loaded".into()));
            };
            if train.len() < cell.n {
                return Err(Error::Config(format!("N = {} exceeds the {} loaded points", cell.n, train.len())));
            }
            let data = flip_labels(&train.truncated(cell.n), cell.p, seed)?;
            let model = SoftmaxClassifier::new(&data)?;
            score(cell, trial, seed, &config, &model, &data, Some(test))
        }
    }
}

fn score<M: LossModel>(
    cell: &Cell,
    trial: usize,
    seed: u64,
    config: &RunConfig,
    model: &M,
    data: &LabeledDataset,
    test: Option<&LabeledDataset>,
) -> Result<(ResultRow, RunReport)> {
    let report = match config {
        RunConfig::Manifold(c) => run_ms(c, model)?,
        RunConfig::Subgradient(c) => run_ssgd(c, model)?,
    };
    let losses = model.all_losses(&report.final_weights)?;
    let flags = outlier_report(&losses, cell.q, data.outlier_mask())?;
    let accuracy = test.map(|t| test_accuracy(&report.final_weights, t)).transpose()?;
    let row = ResultRow {
        method: cell.label.clone(),
        d: data.dim(),
        n: cell.n,
        p: cell.p,
        q: cell.q,
        trial,
        seed,
        tpr: flags.tpr,
        fpr: flags.fpr,
        accuracy,
        time_s: report.wall_time_seconds,
        iters: report.iterations,
        final_obj: report.final_objective,
    };
    Ok((row, report))
}

/// Resolve `spec`, load its data and run every (configuration, trial)
/// pair on at most `threads` workers (0 keeps the default pool).
///
/// Rows come back ordered by configuration, then trial, whatever the
/// scheduling. The full run reports are returned alongside, in the same
/// order.
pub fn run_experiment(spec: &ExperimentSpec, threads: usize) -> Result<(ResultTable, Vec<RunReport>)> {
    let plan = spec.resolve()?;
    let prepared = Prepared::load(&plan)?;
    let jobs: Vec<(usize, usize)> = (0..plan.cells.len())
        .flat_map(|c| (0..plan.trials).map(move |t| (c, t)))
        .collect();
    let results = par::with_threads(threads, || {
        par::map_tasks(&jobs, |&(c, t)| run_cell(&plan.cells[c], t, plan.seed(t), &prepared))
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut reports = Vec::with_capacity(results.len());
    for result in results {
        let (row, report) = result?;
        rows.push(row);
        reports.push(report);
    }
    let table = ResultTable {
        kind: spec.kind,
        base_seed: spec.base_seed,
        rows,
    };
    Ok((table, reports))
}
