//! `trimfit`: run experiment specs, generate datasets, lint specs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trimfit::data::{contaminate_regression, flip_labels, generate_regression, load_mnist, write_csv, MnistFiles};
use trimfit::experiment::{emit_report, run_experiment, ExperimentKind, ExperimentSpec, ReportFormat};
use trimfit::{Error, Result};

#[derive(Parser)]
#[command(name = "trimfit", version, about = "Trimmed estimators fitted by manifold sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write its reports.
    Run(RunArgs),
    /// Generate a dataset as CSV.
    GenData(GenArgs),
    /// Check a spec without running it.
    Validate {
        spec: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    spec: PathBuf,
    /// Override the spec's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spec's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs serially, 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct GenArgs {
    #[command(subcommand)]
    source: GenSource,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Destination CSV file.
    #[arg(long, global = true, default_value = "data.csv")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum GenSource {
    /// Synthetic linear regression with 40% leverage and vertical outliers.
    Regression {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        /// Skip the contamination step.
        #[arg(long)]
        clean: bool,
    },
    /// MNIST training points with a fraction of labels flipped.
    Mnist {
        #[arg(long, default_value = "data/mnist-subset")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        p: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::GenData(args) => gen_data(args),
        Command::Validate { spec } => validate(&spec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.base_seed = seed;
    }
    if let Some(out) = args.out {
        spec.output.dir = out;
    }
    let plan = spec.resolve()?;
    eprintln!(
        "running {} configurations x {} trials ({} runs)",
        plan.cells.len(),
        plan.trials,
        plan.runs()
    );
    let dir = &spec.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let (table, reports) = run_experiment(&spec, args.threads)?;
    let name = spec.output_name();
    let mut written = emit_report(&table, ReportFormat::Csv, dir.join(format!("{name}.csv")))?;
    written.extend(emit_report(&table, ReportFormat::Json, dir.join(format!("{name}.json")))?);
    if spec.output.run_reports || spec.kind == ExperimentKind::SingleRun {
        for (row, report) in table.rows.iter().zip(&reports) {
            let path = dir.join(format!("{name}_{}_trial{}.json", sanitize(&row.method), row.trial));
            report.write_json(&path)?;
            written.push(path);
        }
    }
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

fn gen_data(args: GenArgs) -> Result<()> {
    let data = match args.source {
        GenSource::Regression { d, n, clean } => {
            let data = generate_regression(d, n, args.seed).map_err(as_config)?;
            if clean {
                data
            } else {
                contaminate_regression(&data, args.seed).map_err(as_config)?
            }
        }
        GenSource::Mnist { data_dir, n, p } => {
            let files = MnistFiles::in_dir(&data_dir);
            if !files.missing().is_empty() {
                return Err(Error::Config(format!("missing MNIST files in {}", data_dir.display())));
            }
            let (train, _) = load_mnist(&files, n, 0).map_err(as_config)?;
            flip_labels(&train, p, args.seed).map_err(as_config)?
        }
    };
    write_csv(&data, &args.out)?;
    println!("{}", args.out.display());
    Ok(())
}

/// Bad generator arguments are the user's configuration, not a crash.
fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidInput(msg) => Error::Config(msg),
        other => other,
    }
}

fn validate(path: &Path) -> Result<()> {
    let spec = ExperimentSpec::load(path)?;
    let plan = spec.resolve()?;
    println!(
        "ok: {:?}, {} configurations x {} trials = {} runs, base seed {}",
        plan.kind,
        plan.cells.len(),
        plan.trials,
        plan.runs(),
        plan.base_seed
    );
    Ok(())
}
