//! `vp`: one subcommand per pipeline stage.

mod commands;
mod config;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use vp_core::classifier::ClassifierError;
use vp_core::embed::EmbedError;
use vp_core::explain::ExplainError;
use vp_core::genclient::GenError;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "vp", version, about = "Training-free zero-shot video understanding")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true, env = "VP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Replace every network backend with its deterministic mock.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Threads for data-parallel stages (default: available parallelism).
    #[arg(long, global = true, env = "VP_WORKERS")]
    pub workers: Option<usize>,
    /// Directory receiving all artifacts.
    #[arg(long, global = true, env = "VP_OUT", default_value = "vp-out")]
    pub out: PathBuf,
    /// Generation cache directory (overrides VP_CACHE_DIR and the config).
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Class attributes and descriptions.
    Descriptors {
        #[command(subcommand)]
        action: commands::DescriptorsCmd,
    },
    /// High-level action contexts.
    Hierarchy {
        #[command(subcommand)]
        action: commands::HierarchyCmd,
    },
    /// Per-video textual descriptions.
    Videodesc {
        #[command(subcommand)]
        action: commands::VideodescCmd,
    },
    /// Text classifier matrices.
    Classifier {
        #[command(subcommand)]
        action: commands::ClassifierCmd,
    },
    /// Fuse video embeddings with their description embeddings.
    Fuse(commands::FuseArgs),
    /// Zero-shot classification and top-1 accuracy.
    Classify(commands::ClassifyArgs),
    /// Text-to-video and video-to-text recall at K.
    Retrieve(commands::RetrieveArgs),
    /// Attractor versus distractor time-consistency.
    TimeEval(commands::TimeEvalArgs),
    /// Per-attribute contribution report for one video and class.
    Explain(commands::ExplainArgs),
    /// Sweep a grid of classifier and fusion settings.
    Ablate(commands::AblateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Descriptors { .. } => "descriptors gen",
            Command::Hierarchy { .. } => "hierarchy gen",
            Command::Videodesc { .. } => "videodesc gen",
            Command::Classifier { .. } => "classifier build",
            Command::Fuse(_) => "fuse",
            Command::Classify(_) => "classify",
            Command::Retrieve(_) => "retrieve",
            Command::TimeEval(_) => "time-eval",
            Command::Explain(_) => "explain",
            Command::Ablate(_) => "ablate",
        }
    }
}

pub struct Ctx {
    pub global: GlobalArgs,
    pub config: RunConfig,
}

fn resolve_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(global.config.as_deref())?;
    config.apply_env(|k| std::env::var(k).ok())?;
    if let Some(dir) = &global.cache_dir {
        config.cache_dir = Some(dir.clone());
    }
    if global.mock {
        config.make_hermetic();
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(ctx: &Ctx, command: &Command) -> Result<serde_json::Value> {
    match command {
        Command::Descriptors { action } => commands::descriptors(ctx, action),
        Command::Hierarchy { action } => commands::hierarchy(ctx, action),
        Command::Videodesc { action } => commands::videodesc(ctx, action),
        Command::Classifier { action } => commands::classifier(ctx, action),
        Command::Fuse(a) => commands::fuse(ctx, a),
        Command::Classify(a) => commands::classify(ctx, a),
        Command::Retrieve(a) => commands::retrieve(ctx, a),
        Command::TimeEval(a) => commands::time_eval(ctx, a),
        Command::Explain(a) => commands::explain(ctx, a),
        Command::Ablate(a) => commands::ablate(ctx, a),
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli.global)?;
    std::fs::create_dir_all(&cli.global.out).with_context(|| format!("--out {}", cli.global.out.display()))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.workers {
        anyhow::ensure!(n >= 1, "--workers must be at least 1");
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("worker pool")?;
    let ctx = Ctx {
        global: cli.global.clone(),
        config,
    };
    let provenance = pool.install(|| dispatch(&ctx, &cli.command))?;
    let run = json!({
        "command": cli.command.name(),
        "args": &cli.command,
        "global": &ctx.global,
        "workers": pool.current_num_threads(),
        "config": &ctx.config,
        "template_version": vp_core::genclient::TEMPLATE_VERSION,
        "vp_version": env!("CARGO_PKG_VERSION"),
        "provenance": provenance,
    });
    vp_core::store::write_json(&run, &ctx.global.out.join("run.json"))?;
    Ok(())
}

fn embed_failure(e: &EmbedError) -> bool {
    matches!(e, EmbedError::Transport(_) | EmbedError::Status { .. })
}

/// Exit code 2 for failures of a remote backend, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let backend = err.chain().any(|cause| {
        if let Some(e) = cause.downcast_ref::<GenError>() {
            return e.is_backend_failure();
        }
        if let Some(e) = cause.downcast_ref::<EmbedError>() {
            return embed_failure(e);
        }
        if let Some(ClassifierError::Embedder(e)) = cause.downcast_ref::<ClassifierError>() {
            return embed_failure(e);
        }
        if let Some(ExplainError::Embed(e)) = cause.downcast_ref::<ExplainError>() {
            return embed_failure(e);
        }
        false
    });
    if backend {
        2
    } else {
        1
    }
}

fn report(kind: &str, message: String, chain: Vec<String>) {
    let body = json!({"error": {"kind": kind, "message": message, "chain": chain}});
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.kind().to_string(), vec![e.to_string()]);
            return ExitCode::from(1);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            let kind = if code == 2 { "backend" } else { "validation" };
            report(kind, format!("{err:#}"), err.chain().map(|c| c.to_string()).collect());
            ExitCode::from(code)
        }
    }
}
