//! End-to-end experiment driver: configuration, simulation, fits and
//! artifact bundles.
//!
//! A run writes `<out>/<experiment>/<label>/` containing `data.csv`,
//! `fits.json`, `threshold.json`, `summary.csv` (spin experiments),
//! `ratios.csv` (multi-field shuttle maps) and `manifest.json` with the
//! SHA-256 of every other file.

pub mod analysis;
pub mod bundle;
pub mod config;
pub mod error;
pub mod simulate;
pub mod table;

use std::ffi::OsString;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use analysis::Fits;
pub use bundle::Manifest;
pub use config::{Axis, ExperimentConfig, ExperimentKind, Violation};
pub use error::CliError;

use crate::simulate::Table;
use crate::table::{read_charge_csv, Layout, SpinTable};

#[derive(Debug, Parser)]
#[command(name = "shuttlesim", version, about = "Spin-shuttling experiment simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an experiment and write its bundle.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-fit the data of an existing bundle.
    Report {
        /// Bundle directory containing `manifest.json` and `data.csv`.
        bundle: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

/// Outcome of a completed run or report.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub fits: Fits,
}

impl RunSummary {
    /// 0 when every fit succeeded, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.fits.failures() > 0 {
            2
        } else {
            0
        }
    }
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError>
where
    T: Send,
{
    match jobs {
        None => Ok(f()),
        Some(0) => Err(CliError::Config("--jobs must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn rejected(violations: &[Violation]) -> CliError {
    let lines: Vec<String> = violations.iter().map(ToString::to_string).collect();
    CliError::Config(lines.join("; "))
}

/// Simulates, fits and writes the bundle of a configuration.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let violations = config.validate();
    if !violations.is_empty() {
        return Err(rejected(&violations));
    }
    let sim = simulate::simulate(config)?;
    let fits = match &sim.table {
        Table::Spin(t) => analysis::analyze_spin(config.experiment, t),
        Table::Charge(rows) => analysis::analyze_charge(rows),
    };
    let dir = bundle::bundle_dir(config);
    let threshold = sim.threshold.to_json()?;
    let manifest = bundle::write_bundle(
        &dir,
        config,
        &sim.table,
        &threshold,
        &sim.schedule_digest,
        sim.masked_points,
        &fits,
    )?;
    Ok(RunSummary { dir, manifest, fits })
}

/// Re-fits `data.csv` of an existing bundle and rewrites its fit files.
pub fn report_bundle(dir: &Path) -> Result<RunSummary, CliError> {
    let manifest = Manifest::read(dir)?;
    bundle::verify(dir, &manifest)?;
    let kind = manifest.config.experiment;
    let path = dir.join(bundle::DATA);
    let file = File::open(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let (fits, series, spin) = match Layout::of(kind) {
        Some(layout) => {
            let table = SpinTable::read_csv(layout, file)?;
            (analysis::analyze_spin(kind, &table), layout.series, true)
        }
        None => (analysis::analyze_charge(&read_charge_csv(file)?), None, false),
    };
    let manifest = bundle::rewrite_fits(dir, &manifest, &fits, series, spin)?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        manifest,
        fits,
    })
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::load(path).map_err(|e| match e {
        config::LoadError::Io(..) => CliError::Io(e.to_string()),
        config::LoadError::Invalid(v) => CliError::Config(format!("{}:{v}", path.display())),
    })
}

/// Every diagnostic for the file at `path`; empty when it is runnable.
pub fn validate_file(path: &Path) -> Result<Vec<String>, CliError> {
    match ExperimentConfig::load(path) {
        Ok(c) => Ok(c.validate().iter().map(|v| format!("{}: {v}", path.display())).collect()),
        Err(config::LoadError::Invalid(v)) => Ok(vec![format!("{}:{v}", path.display())]),
        Err(e @ config::LoadError::Io(..)) => Err(CliError::Io(e.to_string())),
    }
}

fn print_summary(s: &RunSummary) {
    println!("{}", s.dir.display());
    for l in &s.fits.lines {
        if let analysis::Outcome::Failed { error } = &l.outcome {
            eprintln!("fit failed at B = {} T{}: {error}", l.b_t, series_text(l));
        }
    }
    for n in &s.fits.narrowing {
        if let analysis::Outcome::Failed { error } = &n.outcome {
            eprintln!("narrowing fit failed at B = {} T: {error}", n.b_t);
        }
    }
    if let Some(e) = &s.fits.ratio_error {
        eprintln!("ratio report failed: {e}");
    }
}

fn series_text(l: &analysis::LineFit) -> String {
    match (&l.axis, l.value) {
        (Some(a), Some(v)) => format!(", {a} = {v}"),
        _ => String::new(),
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run { config, seed, jobs, out } => {
            let mut c = load(&config)?;
            if let Some(s) = seed {
                c.master_seed = s;
            }
            if let Some(o) = out {
                c.output_dir = o;
            }
            let summary = with_jobs(jobs, || run_experiment(&c))??;
            print_summary(&summary);
            Ok(summary.exit_code())
        }
        Command::Validate { config } => {
            let diagnostics = validate_file(&config)?;
            for d in &diagnostics {
                println!("{d}");
            }
            Ok(if diagnostics.is_empty() { 0 } else { 1 })
        }
        Command::Report { bundle, jobs } => {
            let summary = with_jobs(jobs, || report_bundle(&bundle))??;
            print_summary(&summary);
            Ok(summary.exit_code())
        }
    }
}

/// Parses `args` (program name first), runs the verb and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
