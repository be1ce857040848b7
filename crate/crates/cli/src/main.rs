use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use derain_core::guidance::PromptMode;
use derain_core::pipeline::InvertWith;
use derain_core::{Manifest, RunConfig};

mod commands;
mod run;

/// Zero-shot video deraining on a toy diffusion transformer.
#[derive(Debug, Parser)]
#[command(name = "derain", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic training and held-out rain sets.
    GenData,
    /// Train the toy denoiser on the synthetic training set.
    TrainToy,
    /// DDPM-invert a video and check its reconstruction.
    Invert,
    /// Derain `--input`, or the whole held-out set when no input is given.
    Derain,
    /// Per-block impact of attention switching.
    AnalyzeBlocks,
    /// Reconstruction PSNR of SDEdit, DDIM and DDPM inversion over skips.
    SweepInversion,
    /// Rain and background energy of generations per prompt.
    ProbePrompts,
    /// Metrics of `--derained` against the scene in `--input`.
    Evaluate,
    /// Re-run a manifest and compare the output hashes.
    Replay { manifest: PathBuf },
}

#[derive(Debug, Args)]
struct Overrides {
    /// JSON run config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Guidance scale (default 15, or 25 with attention switching).
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Initial denoising steps that follow the plain reconstruction.
    #[arg(long, global = true)]
    t_skip: Option<usize>,
    /// Inference steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// simple, mean, contextual or implicit.
    #[arg(long, global = true)]
    prompt_mode: Option<PromptMode>,
    /// Comma-separated switched blocks.
    #[arg(long, global = true, value_delimiter = ',')]
    blocks: Option<Vec<usize>>,
    /// Comma-separated split blocks, a subset of --blocks.
    #[arg(long, global = true, value_delimiter = ',')]
    blocks_initial: Option<Vec<usize>>,
    #[arg(long, global = true)]
    no_attn_switch: bool,
    /// null or concept.
    #[arg(long, global = true)]
    invert_with: Option<InvertWith>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    derained: Option<PathBuf>,
    /// Training steps for train-toy.
    #[arg(long, global = true)]
    train_steps: Option<usize>,
    /// Output root.
    #[arg(long, global = true, env = "DERAIN_RUN_DIR")]
    out: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.lambda {
            c.lambda = Some(v);
        }
        if let Some(v) = self.t_skip {
            c.t_skip = v;
        }
        if let Some(v) = self.steps {
            c.schedule.steps = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.prompt_mode {
            c.prompt_mode = v;
        }
        if let Some(v) = &self.blocks {
            c.blocks = Some(v.clone());
        }
        if let Some(v) = &self.blocks_initial {
            c.blocks_initial = Some(v.clone());
        }
        if self.no_attn_switch {
            c.attn_switch = false;
        }
        if let Some(v) = self.invert_with {
            c.invert_with = v;
        }
        if let Some(v) = &self.checkpoint {
            c.checkpoint = v.clone();
        }
        if let Some(v) = &self.input {
            c.input = Some(v.clone());
        }
        if let Some(v) = &self.derained {
            c.derained = Some(v.clone());
        }
        if let Some(v) = self.train_steps {
            c.train.steps = v;
        }
        if let Some(v) = &self.out {
            c.output = v.clone();
        }
        Ok(c)
    }
}

fn dispatch(name: &str, cfg: RunConfig) -> anyhow::Result<run::Run> {
    cfg.validate()?;
    let mut r = run::Run::start(name, cfg)?;
    match name {
        "gen-data" => commands::gen_data(&mut r)?,
        "train-toy" => commands::train_toy(&mut r)?,
        "invert" => commands::invert(&mut r)?,
        "derain" => commands::derain(&mut r)?,
        "analyze-blocks" => commands::analyze_blocks(&mut r)?,
        "sweep-inversion" => commands::sweep_inversion(&mut r)?,
        "probe-prompts" => commands::probe_prompts(&mut r)?,
        "evaluate" => commands::evaluate(&mut r)?,
        other => anyhow::bail!("unknown subcommand {other:?}"),
    }
    r.finish()?;
    Ok(r)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = (|| -> anyhow::Result<()> {
        let cfg = cli.overrides.resolve()?;
        let name = match &cli.command {
            Command::GenData => "gen-data",
            Command::TrainToy => "train-toy",
            Command::Invert => "invert",
            Command::Derain => "derain",
            Command::AnalyzeBlocks => "analyze-blocks",
            Command::SweepInversion => "sweep-inversion",
            Command::ProbePrompts => "probe-prompts",
            Command::Evaluate => "evaluate",
            Command::Replay { manifest } => {
                let old = Manifest::load(manifest)?;
                let mut cfg = old.config.clone();
                if let Some(out) = &cli.overrides.out {
                    cfg.output = out.clone();
                }
                let r = dispatch(&old.subcommand, cfg)?;
                let differing = run::compare_outputs(&old, r.manifest());
                if differing.is_empty() {
                    log::info!("replay matches all {} recorded outputs", old.outputs.len());
                    return Ok(());
                }
                anyhow::bail!("replay differs in {differing:?}");
            }
        };
        let r = dispatch(name, cfg)?;
        log::info!("wrote {}", r.dir().display());
        Ok(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
