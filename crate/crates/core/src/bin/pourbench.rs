use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pourbench::config::ExperimentConfig;
use pourbench::estimator::EstimatorKind;
use pourbench::pipeline::{self, EvalSource, RunOptions};
use pourbench::Error;

#[derive(Parser)]
#[command(name = "pourbench", version, about = "Simulated robot pouring benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config JSON; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created atomically.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent trials.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate plate-feedback trials and write a dataset.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Defaults to the config's trial.n_trials.
        #[arg(long)]
        n_trials: Option<usize>,
    },
    /// Fit an estimator on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// tactile | proprioceptive | multimodal
        #[arg(long)]
        kind: String,
    },
    /// Test-split MSE of a model or baseline.
    EvalOffline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        source: Source,
    },
    /// Closed-loop accuracy grid and generalization sweeps.
    EvalLoop {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        /// Comma-separated grid rows, or `all`.
        #[arg(long, default_value = "all")]
        grid: String,
        /// Skip the novel location and grasp runs.
        #[arg(long)]
        no_sweep: bool,
    },
    /// Combine eval-loop outputs into one summary.
    Report {
        #[command(flatten)]
        common: Common,
        /// eval-loop output directories or report.json files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Source {
    /// Model file from `train`.
    #[arg(long, conflicts_with = "kind")]
    model: Option<PathBuf>,
    /// analytical_fz | oracle
    #[arg(long)]
    kind: Option<String>,
}

impl Source {
    fn resolve(&self) -> pourbench::Result<EvalSource> {
        match (&self.model, self.kind.as_deref()) {
            (Some(p), _) => Ok(EvalSource::Model(p.clone())),
            (None, Some("oracle")) => Ok(EvalSource::Oracle),
            (None, Some(k)) => match EstimatorKind::parse(k)? {
                EstimatorKind::AnalyticalFz => Ok(EvalSource::AnalyticalFz),
                other => Err(Error::Argument(format!("--kind {other} needs --model"))),
            },
            (None, None) => Err(Error::Argument("give --model or --kind".into())),
        }
    }
}

fn load(common: &Common) -> pourbench::Result<(ExperimentConfig, RunOptions)> {
    let config = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let opts = RunOptions {
        config_path: common.config.clone(),
        seed: common.seed.unwrap_or(config.seed),
        jobs: common.jobs,
    };
    Ok((config, opts))
}

fn parse_grid(s: &str) -> pourbench::Result<Option<Vec<usize>>> {
    if s == "all" {
        return Ok(None);
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Argument(format!("bad grid row `{t}`")))
        })
        .collect::<pourbench::Result<Vec<_>>>()
        .map(Some)
}

fn run(cli: Cli) -> pourbench::Result<()> {
    match cli.command {
        Command::Collect { common, n_trials } => {
            let (config, opts) = load(&common)?;
            let n = n_trials.unwrap_or(config.trial.n_trials);
            let s = pipeline::collect(&config, n, &opts, &common.out)?;
            println!("{} trials, manifest sha256 {}", s.manifest.trials.len(), s.manifest_hash);
        }
        Command::Train { common, manifest, kind } => {
            let (config, opts) = load(&common)?;
            let s = pipeline::train_stage(&config, &manifest, EstimatorKind::parse(&kind)?, &opts, &common.out)?;
            println!(
                "{}: train mse {:.6e} -> {:.6e}, best val {:.6e} at epoch {}",
                s.model.kind(),
                s.curves.initial_train,
                s.curves.final_train,
                s.curves.val[s.curves.best_epoch],
                s.curves.best_epoch
            );
        }
        Command::EvalOffline { common, manifest, source } => {
            let (config, opts) = load(&common)?;
            let r = pipeline::eval_offline(&config, &manifest, &source.resolve()?, &opts, &common.out)?;
            println!("{}: test mse {:.6e} N^2 over {} frames", r.estimator, r.mse, r.n_frames);
        }
        Command::EvalLoop {
            common,
            source,
            grid,
            no_sweep,
        } => {
            let (config, opts) = load(&common)?;
            let grid = parse_grid(&grid)?;
            let r = pipeline::eval_loop(&config, &source.resolve()?, grid.as_deref(), !no_sweep, &opts, &common.out)?;
            print!("{}", r.tables());
        }
        Command::Report { common, inputs } => {
            let (config, opts) = load(&common)?;
            let reports = pipeline::report(&config, &inputs, &opts, &common.out)?;
            println!("{} reports combined", reports.len());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Argument(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 4,
        _ => 3,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Argument(_) => "argument",
        Error::Singular { .. } => "singular",
        Error::Shape { .. } => "shape",
        Error::Config { .. } => "config",
        Error::InsufficientTrials { .. } => "insufficient_trials",
        Error::EmptySplit(_) => "empty_split",
        Error::Io { .. } => "io",
        Error::Format { .. } => "format",
        Error::Json(_) => "json",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let mut body = serde_json::json!({
                "error": error_kind(&e),
                "message": e.to_string(),
                "exit_code": code,
            });
            if let Error::Config { path, .. } = &e {
                body["path"] = path.clone().into();
            }
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
