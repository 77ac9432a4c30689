use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybrid_qg::config::ExperimentConfig;
use hybrid_qg::pipeline::{self, RunDir};
use hybrid_qg::{diagnostics, Error};

/// Environment variable naming the directory under which runs are created.
const RUN_ROOT_ENV: &str = "HQG_RUN_ROOT";

#[derive(Parser)]
#[command(name = "hqg", version, about = "Hybrid QG closure training and uncertainty quantification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run directory. Defaults to `$HQG_RUN_ROOT/<config hash prefix>`.
    #[arg(long)]
    run: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run truth simulations and write train/test datasets.
    Generate(Common),
    /// Fit the physical scalars and CNN closure.
    Train(Common),
    /// Draw posterior samples with SG-HMC.
    Sample(Common),
    /// Score forecasts of every variant on held-out truth.
    Evaluate(Common),
    /// Re-render SVG plots from an evaluated run.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
    /// Compare adjoint gradients with finite differences.
    Gradcheck {
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { 2 } else { 1 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

/// Config from `--config`, else the run's snapshot, with overrides applied.
fn resolve(common: &Common, need_file: bool) -> Result<(ExperimentConfig, RunDir), Failure> {
    let mut cfg = match (&common.config, &common.run) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(run)) if !need_file => RunDir::open(run)?.config()?,
        _ => return Err(usage("missing --config")),
    };
    for kv in &common.overrides {
        cfg.apply_override(kv)?;
    }
    cfg.validate()?;
    let dir = match &common.run {
        Some(r) if need_file => RunDir::create(r)?,
        Some(r) => RunDir::open(r)?,
        None => {
            let root = std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            let path = root.join(&cfg.hash()[..12]);
            if need_file {
                RunDir::create(path)?
            } else {
                RunDir::open(path)?
            }
        }
    };
    Ok((cfg, dir))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(c) => {
            let (cfg, dir) = resolve(&c, true)?;
            let data = pipeline::run_generate(&cfg, &dir)?;
            println!(
                "wrote {} train and {} test trajectories to {}",
                data.train.trajectories.len(),
                data.test.trajectories.len(),
                dir.root().display()
            );
        }
        Command::Train(c) => {
            let (cfg, dir) = resolve(&c, false)?;
            let out = pipeline::run_train(&cfg, &dir)?;
            println!(
                "best epoch {}: delta = {:.6}, U1 = {:.6}",
                out.best_epoch, out.theta[0], out.theta[1]
            );
        }
        Command::Sample(c) => {
            let (cfg, dir) = resolve(&c, false)?;
            let chain = pipeline::run_sample(&cfg, &dir)?;
            println!(
                "retained {} samples, {} of {} iterations rejected",
                chain.ensemble.samples.len(),
                chain.rejections,
                chain.iterations
            );
        }
        Command::Evaluate(c) => {
            let (cfg, dir) = resolve(&c, false)?;
            let report = pipeline::run_evaluate(&cfg, &dir)?;
            for v in &report.series.variants {
                let quarter = (v.mse.len() / 4).max(1);
                let mean_mse = v.mse[..quarter].iter().sum::<f64>() / quarter as f64;
                let note = v.blowup.map_or(String::new(), |t| format!(" (blew up at {t} h)"));
                println!("{:>14}: first-quarter MSE {mean_mse:.4e}{note}", v.variant.name());
            }
        }
        Command::Plot { run } => {
            let dir = RunDir::open(run)?;
            pipeline::run_plot(&dir)?;
            println!("plots written to {}", dir.root().display());
        }
        Command::Gradcheck { tolerance } => {
            let checks = diagnostics::gradient_checks()?;
            let mut ok = true;
            for c in &checks {
                println!("{:>8}: max relative error {:.3e}", c.name, c.max_rel_err);
                ok &= c.max_rel_err < tolerance;
            }
            if !ok {
                return Err(Failure {
                    code: 1,
                    message: format!("gradient check above tolerance {tolerance:e}"),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
