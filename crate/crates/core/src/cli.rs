//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::{
    self, compare_table, evaluate, run_closed_loop, ExperimentConfig, SimLog, Termination, Variant,
};
use crate::residual::{read_dataset, write_dataset, ResidualForest};

#[derive(Debug, Parser)]
#[command(name = "rfl-mpc", version, about = "Path-tracking MPC with a learned residual model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Drive the training paths with nominal MPC and write the residual dataset.
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the forest on a dataset and write the model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV from `collect`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trees: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
        /// Where to write the fit report (JSON); stderr when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run one closed loop and write its log.
    Run {
        #[command(flatten)]
        common: Common,
        /// Model JSON; nominal MPC when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Path spec, e.g. "S20 L25:90 S20"; the first evaluation path by default.
        #[arg(long)]
        path: Option<String>,
        /// Record wall-clock step times.
        #[arg(long)]
        timing: bool,
    },
    /// Tracking metrics of a log (JSON).
    Eval {
        #[command(flatten)]
        common: Common,
        log: PathBuf,
        /// Baseline log for the percentage improvement.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Compare a baseline log against a candidate log.
    Compare {
        #[command(flatten)]
        common: Common,
        baseline: PathBuf,
        candidate: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn read_log(path: &Path) -> Result<SimLog> {
    let log = SimLog::load(path)?;
    if log.is_empty() {
        return Err(Error::InsufficientData(format!("{} has no steps", path.display())));
    }
    Ok(log)
}

fn execute(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Collect { common } => {
            let cfg = load_config(&common)?;
            let (samples, _) = harness::collect(&cfg)?;
            match &common.out {
                Some(p) => write_dataset(p, &samples)?,
                None => print!("{}", crate::residual::dataset_to_csv(&samples)?),
            }
        }
        Command::Train { common, data, trees, depth, report } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = trees {
                cfg.forest.n_trees = t;
            }
            if let Some(d) = depth {
                cfg.forest.max_depth = d;
            }
            cfg.validate()?;
            let samples = read_dataset(&data)?;
            let (forest, fit) = harness::train(&cfg, &samples)?;
            emit(&common.out, &forest.to_json()?)?;
            let text = serde_json::to_string_pretty(&fit).map_err(Error::from)? + "\n";
            match report {
                Some(p) => std::fs::write(p, text).map_err(Error::from)?,
                None => eprint!("{text}"),
            }
        }
        Command::Run { common, model, path, timing } => {
            let mut cfg = load_config(&common)?;
            cfg.sim.record_timing |= timing;
            let spec = match path.or_else(|| cfg.paths.eval.first().cloned()) {
                Some(s) => s,
                None => return Err(Failure::Usage("no --path given and no evaluation path configured".into())),
            };
            let reference = cfg.build_path(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
            let forest = model.as_deref().map(ResidualForest::load).transpose()?;
            let variant = forest.as_ref().map_or(Variant::Nominal, Variant::Residual);
            let outcome = run_closed_loop(&cfg, &reference, variant)?;
            if let Termination::CorridorExit { t, offset } = outcome.termination {
                eprintln!("corridor exit at t = {t:.2} s (|e1| = {offset:.3} m)");
            }
            emit(&common.out, &outcome.log.to_csv())?;
        }
        Command::Eval { common, log, baseline } => {
            load_config(&common)?;
            let log = read_log(&log)?;
            let base = baseline.as_deref().map(read_log).transpose()?;
            let report = evaluate(&log, base.as_ref())?;
            emit(&common.out, &(serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n"))?;
        }
        Command::Compare { common, baseline, candidate } => {
            load_config(&common)?;
            let table = compare_table(&read_log(&baseline)?, &read_log(&candidate)?)?;
            emit(&common.out, &table)?;
        }
    }
    Ok(())
}

/// Run the CLI; returns the process exit code (0 ok, 1 usage, 2 runtime).
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", line.trim());
            return 1;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            2
        }
    }
}
