//! `ssmrom`: data-driven reduced-order models on spectral submanifolds.

mod config;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use ssmrom::io::{document_kind, read_json};
use ssmrom::manifold::ManifoldDoc;
use ssmrom::normalform::NormalFormDoc;

use config::PipelineConfig;
use pipeline::{Context, StageError, StageResult};

#[derive(Parser)]
#[command(
    name = "ssmrom",
    version,
    about = "Reduced-order models from trajectory data"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the free-decay training and test trajectories.
    Simulate(Common),
    /// Trim and delay-embed the trajectories.
    Embed(Common),
    /// Fit the manifold parametrization.
    FitManifold(Common),
    /// Fit the reduced dynamics and its normal form.
    FitDynamics(Common),
    /// Backbone curves of every mode.
    Backbone(Common),
    /// Forced response curves.
    Frc(Common),
    /// Predict the train and test trajectories and report their errors.
    Predict(Common),
    /// Run every stage in order.
    Pipeline(Common),
    /// Summarize a saved model (`manifold.json` or `normal_form.json`).
    Inspect { model_path: PathBuf },
}

fn context(c: &Common) -> StageResult<Context> {
    let mut cfg = PipelineConfig::load(&c.config).map_err(|e| StageError::Config(e.to_string()))?;
    let base = c.config.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.validate(&base)
        .map_err(|e| StageError::Config(e.to_string()))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(|p| config::resolve(&base, p)))
        .unwrap_or_else(|| PathBuf::from("out"));
    pipeline::prepare_output(&out)?;
    Ok(Context { cfg, base, out })
}

fn inspect(path: &Path) -> StageResult<()> {
    let cfg_err = |e: ssmrom::Error| StageError::Config(format!("inspect: {e}"));
    let value: serde_json::Value = read_json(path).map_err(cfg_err)?;
    let (kind, _) = document_kind(&value)
        .ok_or_else(|| StageError::Config(format!("{} carries no format tag", path.display())))?;
    match kind.as_str() {
        k if k.contains("manifold") => {
            let m = read_json::<ManifoldDoc>(path)
                .and_then(|d| d.to_model::<f64>())
                .map_err(cfg_err)?;
            println!(
                "manifold: dimension {} in {} ambient coordinates, order {}",
                m.dim(),
                m.ambient_dim(),
                m.order()
            );
            println!("equilibrium: {}", m.equilibrium_source());
            println!("coordinates: {}", m.labels().join(", "));
        }
        k if k.contains("normal") => {
            let nf = read_json::<NormalFormDoc>(path)
                .and_then(|d| d.to_model::<f64>())
                .map_err(cfg_err)?;
            println!("normal form: {} modes, order {}", nf.modes(), nf.order());
            for (j, l) in nf.eigenvalues().iter().enumerate() {
                println!("  λ{} = {:.6e} {:+.6e}i", j + 1, l.re, l.im);
            }
            for (j, r) in nf.training_radius.iter().enumerate() {
                println!("  validity: ρ{} ≤ {:.6e}", j + 1, r);
            }
            print!("{}", nf.polar());
        }
        other => {
            return Err(StageError::Config(format!(
                "unknown document kind `{other}`"
            )))
        }
    }
    Ok(())
}

fn run(cli: Cli) -> StageResult<()> {
    let ctx = |c: &Common| context(c);
    match &cli.command {
        Command::Simulate(c) => pipeline::simulate(&ctx(c)?),
        Command::Embed(c) => pipeline::embed(&ctx(c)?),
        Command::FitManifold(c) => pipeline::fit_manifold_stage(&ctx(c)?),
        Command::FitDynamics(c) => pipeline::fit_dynamics(&ctx(c)?),
        Command::Backbone(c) => pipeline::backbone_stage(&ctx(c)?),
        Command::Frc(c) => pipeline::frc_stage(&ctx(c)?),
        Command::Predict(c) => {
            let ctx = ctx(c)?;
            let (train, test) = pipeline::predict(&ctx)?;
            pipeline::validate(&ctx, &train, &test)
        }
        Command::Pipeline(c) => pipeline::pipeline(&ctx(c)?),
        Command::Inspect { model_path } => inspect(model_path),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, msg) = match e {
                StageError::Config(m) => (2, m),
                StageError::Numerical(m) => (3, m),
                StageError::Validation(m) => (4, m),
            };
            error!("{msg}");
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
