//! Command-line front end.
//!
//! ```text
//! plmm-dml fit      --csv data.csv --group-col id --y-col y --x-cols x --w-cols a,b --z-cols one
//! plmm-dml simulate --scenario nonsmooth_balanced --n-groups 100 --replicates 50 --out reps.csv
//! plmm-dml generate --scenario smooth_balanced --n-groups 20 --out data.csv
//! ```
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 numerical. Failures print a
//! JSON error object on stdout.

mod csv_io;
mod report;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use csv_io::{load_csv, read_csv, write_dataset_csv, CsvSchema};
pub use report::{ErrorReport, FitReport, REPORT_VERSION};

use crate::dml::{dml_fit, DmlConfig};
use crate::error::{Error, Result};
use crate::learners::{LearnerKind, LearnerSpec};
use crate::lmm::LmmOptions;
use crate::sim::{gen_dataset, ScenarioKind, SimScenario};
use crate::study::run_study;

#[derive(Debug, Parser)]
#[command(name = "plmm-dml", version, about = "Cross-fitted inference for partially linear mixed-effects models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the linear coefficients of a grouped CSV dataset.
    Fit(FitArgs),
    /// Monte-Carlo coverage study on synthetic data.
    Simulate(SimulateArgs),
    /// Write one synthetic dataset as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LearnerArg {
    Rf,
    Linear,
    Oracle,
}

#[derive(Debug, Args)]
struct EstimatorArgs {
    #[arg(long, default_value_t = 2)]
    k_folds: usize,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    #[arg(long, value_enum, default_value_t = LearnerArg::Rf)]
    learner: LearnerArg,
    #[arg(long, default_value_t = 500)]
    rf_trees: usize,
    #[arg(long, default_value_t = 5)]
    rf_min_node: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl EstimatorArgs {
    fn config(&self) -> DmlConfig {
        let learner = match self.learner {
            LearnerArg::Rf => LearnerSpec::random_forest()
                .with_trees(self.rf_trees)
                .with_min_node_size(self.rf_min_node),
            LearnerArg::Linear => LearnerSpec::linear(),
            // bound to the scenario's true functions by the study harness
            LearnerArg::Oracle => LearnerSpec {
                kind: LearnerKind::Oracle,
                ..LearnerSpec::random_forest()
            },
        };
        DmlConfig {
            k_folds: self.k_folds,
            repetitions: self.repetitions,
            learner,
            alpha: self.alpha,
            seed: self.seed,
            lmm: LmmOptions::default(),
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value = "group")]
    group_col: String,
    #[arg(long, default_value = "y")]
    y_col: String,
    #[arg(long, value_delimiter = ',', required = true)]
    x_cols: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    w_cols: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    z_cols: Vec<String>,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value = "nonsmooth_balanced")]
    scenario: String,
    #[arg(long, default_value_t = 100)]
    n_groups: usize,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Per-replicate CSV destination; the JSON summary always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value = "nonsmooth_balanced")]
    scenario: String,
    #[arg(long, default_value_t = 100)]
    n_groups: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Reports and errors go to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let err = Error::InvalidConfig(e.to_string().trim_end().to_string());
            return emit_error(&err, stdout);
        }
    };
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(&args, stdout),
        Command::Simulate(args) => cmd_simulate(&args, stdout),
        Command::Generate(args) => cmd_generate(&args, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => emit_error(&e, stdout),
    }
}

fn emit_error(e: &Error, stdout: &mut dyn Write) -> i32 {
    let body = serde_json::to_string_pretty(&ErrorReport::from_error(e)).expect("error report serializes");
    let _ = writeln!(stdout, "{body}");
    e.class().exit_code()
}

fn write_json<T: serde::Serialize>(value: &T, dest: Option<&PathBuf>, stdout: &mut dyn Write) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    match dest {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => writeln!(stdout, "{text}")?,
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs, stdout: &mut dyn Write) -> Result<()> {
    let config = args.estimator.config();
    if config.learner.kind == LearnerKind::Oracle {
        return Err(Error::InvalidConfig(
            "the oracle learner is only available for simulated data".into(),
        ));
    }
    let schema = CsvSchema {
        group_col: args.group_col.clone(),
        y_col: args.y_col.clone(),
        x_cols: args.x_cols.clone(),
        w_cols: args.w_cols.clone(),
        z_cols: args.z_cols.clone(),
    };
    let dataset = load_csv(&args.csv, &schema)?;
    let fit = dml_fit(&dataset, &config)?;
    let report = FitReport::new(&fit, &dataset, &schema.x_cols);
    write_json(&report, args.out.as_ref(), stdout)
}

fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<()> {
    let scenario = SimScenario::new(args.scenario.parse::<ScenarioKind>()?, args.n_groups);
    let config = args.estimator.config();
    let study = run_study(&scenario, args.replicates, &config)?;

    if let Some(path) = &args.out {
        let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        for row in &study.rows {
            wtr.serialize(row).map_err(|e| Error::Numerical(e.to_string()))?;
        }
        wtr.flush()?;
    }
    write_json(&study.summary, None, stdout)
}

fn cmd_generate(args: &GenerateArgs, stdout: &mut dyn Write) -> Result<()> {
    let scenario = SimScenario::new(args.scenario.parse::<ScenarioKind>()?, args.n_groups);
    let dataset = gen_dataset(&scenario, args.seed)?;
    match &args.out {
        Some(path) => {
            write_dataset_csv(&dataset, BufWriter::new(File::create(path)?))?;
        }
        None => {
            write_dataset_csv(&dataset, &mut *stdout)?;
        }
    }
    Ok(())
}
