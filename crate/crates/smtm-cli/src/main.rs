mod commands;
mod params;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use smtm::pipeline::{CacheSizeMode, EngineConfig};

use params::*;

#[derive(Parser)]
#[command(
    name = "smtm",
    about = "Semantic-memory accelerated CNN inference benchmark harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct OutArg {
    /// Output directory for reports and the run manifest.
    #[arg(long, default_value = "smtm-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Model manifest (JSON).
    #[arg(long)]
    model: String,
    /// Weight blob (little-endian f32).
    #[arg(long)]
    weights: String,
}

#[derive(Args, Debug)]
struct EngineArgs {
    /// Exit threshold: non-negative real or `inf` to disable exits.
    #[arg(long, default_value = "1.0", value_parser = parse_tau)]
    tau: f32,
    /// Observation window W (frames) for the forgetting mechanism.
    #[arg(long, default_value_t = 30)]
    window: u32,
    /// Confidence level for adaptive cache sizing, in (0, 1).
    #[arg(long, default_value_t = 0.95)]
    cl: f64,
    /// Constant fast-memory capacity (ignored under --adaptive-size).
    #[arg(long, default_value_t = 5)]
    cache_size: usize,
    /// Choose the fast-memory capacity adaptively each replacement.
    #[arg(long)]
    adaptive_size: bool,
    /// Lower bound for the adaptive capacity.
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    /// Upper bound for the adaptive capacity (defaults to the class count).
    #[arg(long)]
    k_max: Option<usize>,
    /// Update semantic centers online from predicted labels.
    #[arg(long)]
    adaptive_centers: bool,
    /// Restrict center updates to full-inference frames.
    #[arg(long)]
    adapt_full_only: bool,
    /// Exclude the exit layer itself from center updates.
    #[arg(long)]
    exclude_exit_layer: bool,
    /// Fold absence decay into the frequency table every W frames.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    persistent_decay: bool,
    /// Multiplicative decay base for the forgetting mechanism, in (0, 1).
    #[arg(long, default_value_t = 0.25)]
    decay_base: f64,
    /// Recompute scores and fast memory every this many frames.
    #[arg(long, default_value_t = 1)]
    replacement_period: u32,
}

impl EngineArgs {
    fn to_config(&self) -> EngineConfig {
        EngineConfig {
            tau: self.tau,
            window: self.window,
            cl: self.cl,
            k_min: self.k_min,
            k_max: self.k_max.unwrap_or(usize::MAX),
            cache_size_mode: if self.adaptive_size {
                CacheSizeMode::Adaptive
            } else {
                CacheSizeMode::Constant { k: self.cache_size }
            },
            adaptive_centers: self.adaptive_centers,
            persistent_decay: self.persistent_decay,
            replacement_period: self.replacement_period,
            decay_base: self.decay_base,
            adapt_full_frames_only: self.adapt_full_only,
            update_exit_layer: !self.exclude_exit_layer,
        }
    }
}

#[derive(Args, Debug)]
struct RunInputs {
    #[command(flatten)]
    model: ModelArgs,
    /// Warmed center store (from `smtm warmup`).
    #[arg(long)]
    centers: String,
    /// Input trace file.
    #[arg(long)]
    trace: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled trace with a long-tail class mix.
    GenTrace {
        /// Number of object classes.
        #[arg(long, default_value_t = 10)]
        classes: u32,
        /// Total frame count.
        #[arg(long, default_value_t = 1442)]
        frames: usize,
        /// Frame dimensions as CxHxW.
        #[arg(long, default_value = "16x24x24")]
        dims: String,
        /// Zipf exponent of the class marginal.
        #[arg(long, conflicts_with = "freqs")]
        zipf: Option<f64>,
        /// Explicit per-class frequencies (comma separated, summing to 1).
        #[arg(long, value_delimiter = ',')]
        freqs: Option<Vec<f64>>,
        /// Mean run length of same-class bursts.
        #[arg(long, default_value_t = 8.0)]
        burstiness: f64,
        /// Uniform per-element noise amplitude.
        #[arg(long, default_value_t = 0.05)]
        noise: f32,
        /// Stream seed; falls back to SMTM_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Seed for the class templates (defaults to --seed).
        #[arg(long)]
        template_seed: Option<u64>,
        /// Perturb templates by this amplitude (distribution shift).
        #[arg(long, default_value_t = 0.0)]
        template_drift: f32,
        /// Cycle classes in order instead of sampling (warm-up traces).
        #[arg(long)]
        round_robin: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Generate a preset demo model (manifest + weights).
    GenModel {
        /// Preset: six-exit, tiny, or six-exit-head.
        #[arg(long, default_value = "six-exit")]
        preset: String,
        /// Class count for the dense+softmax head presets.
        #[arg(long)]
        head_classes: Option<usize>,
        /// Model name recorded in the manifest.
        #[arg(long, default_value = "demo")]
        name: String,
        /// Weight seed; falls back to SMTM_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Build the global center store from a labeled trace.
    Warmup {
        #[command(flatten)]
        model: ModelArgs,
        /// Labeled warm-up trace.
        #[arg(long)]
        trace: String,
        /// Class count (defaults to max label + 1).
        #[arg(long)]
        classes: Option<u32>,
        /// Cap the stored update counts to control adaptation speed.
        #[arg(long)]
        m_cap: Option<u32>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Print a model's layers, shapes, FLOPs, and exit points.
    InspectModel {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run the semantic-memory pipeline over a trace.
    Run {
        #[command(flatten)]
        inputs: RunInputs,
        #[command(flatten)]
        engine: EngineArgs,
        /// Dump the frequency/time-stamp tables at each replacement.
        #[arg(long)]
        dump_tables: bool,
        /// Dump per-layer similarity rows and separability diagnostics.
        #[arg(long)]
        dump_similarities: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Full inference on every frame; the reference for accuracy drops.
    Baseline {
        #[command(flatten)]
        inputs: RunInputs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Run once per threshold and report the accuracy/latency trade-off.
    Sweep {
        #[command(flatten)]
        inputs: RunInputs,
        #[command(flatten)]
        engine: EngineArgs,
        /// Thresholds to sweep (comma separated; `inf` allowed).
        #[arg(long, value_delimiter = ',', value_parser = parse_tau, required = true)]
        taus: Vec<f32>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Four-cell comparison: {constant, adaptive size} x {frozen, adaptive centers}.
    Ablate {
        #[command(flatten)]
        inputs: RunInputs,
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Re-execute a recorded manifest, reproducing its reports byte for byte.
    Replay {
        /// Path to a manifest.json written by an earlier run.
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
}

fn seed_or_env(cli_seed: Option<u64>) -> Result<u64> {
    if let Some(seed) = cli_seed {
        return Ok(seed);
    }
    match std::env::var("SMTM_SEED") {
        Ok(text) => text
            .parse()
            .with_context(|| format!("SMTM_SEED must be an unsigned integer, got {text:?}")),
        Err(_) => Ok(0),
    }
}

fn parse_dims(text: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = text.split('x').collect();
    if parts.len() != 3 {
        bail!("dims must look like CxHxW, got {text:?}");
    }
    let parse = |s: &str| -> Result<usize> {
        let v: usize = s
            .parse()
            .with_context(|| format!("invalid dimension {s:?}"))?;
        if v == 0 {
            bail!("dimensions must be positive");
        }
        Ok(v)
    };
    Ok((parse(parts[0])?, parse(parts[1])?, parse(parts[2])?))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenTrace {
            classes,
            frames,
            dims,
            zipf,
            freqs,
            burstiness,
            noise,
            seed,
            template_seed,
            template_drift,
            round_robin,
            out,
        } => {
            let seed = seed_or_env(seed)?;
            let (channels, height, width) = parse_dims(&dims)?;
            let params = GenTraceParams {
                classes,
                frames,
                channels,
                height,
                width,
                zipf: if freqs.is_some() {
                    None
                } else {
                    Some(zipf.unwrap_or(1.2))
                },
                freqs,
                burstiness,
                noise,
                seed,
                template_seed: template_seed.unwrap_or(seed),
                template_drift,
                round_robin,
            };
            commands::gen_trace(&params, &out.out)?;
        }
        Command::GenModel {
            preset,
            head_classes,
            name,
            seed,
            out,
        } => {
            let params = GenModelParams {
                preset,
                head_classes,
                name,
                seed: seed_or_env(seed)?,
            };
            commands::gen_model(&params, &out.out)?;
        }
        Command::Warmup {
            model,
            trace,
            classes,
            m_cap,
            out,
        } => {
            let params = WarmupParams {
                model: model.model,
                weights: model.weights,
                trace,
                classes,
                m_cap,
            };
            commands::warmup(&params, &out.out)?;
        }
        Command::InspectModel { model } => {
            commands::inspect_model(&model.model, &model.weights)?;
        }
        Command::Run {
            inputs,
            engine,
            dump_tables,
            dump_similarities,
            out,
        } => {
            let params = RunParams {
                model: inputs.model.model,
                weights: inputs.model.weights,
                centers: inputs.centers,
                trace: inputs.trace,
                engine: engine.to_config(),
                dump_tables,
                dump_similarities,
            };
            commands::run(&params, &out.out)?;
        }
        Command::Baseline { inputs, out } => {
            let params = BaselineParams {
                model: inputs.model.model,
                weights: inputs.model.weights,
                centers: inputs.centers,
                trace: inputs.trace,
            };
            commands::baseline(&params, &out.out)?;
        }
        Command::Sweep {
            inputs,
            engine,
            taus,
            out,
        } => {
            let params = SweepParams {
                model: inputs.model.model,
                weights: inputs.model.weights,
                centers: inputs.centers,
                trace: inputs.trace,
                engine: engine.to_config(),
                taus,
            };
            commands::sweep(&params, &out.out)?;
        }
        Command::Ablate {
            inputs,
            engine,
            out,
        } => {
            let params = AblateParams {
                model: inputs.model.model,
                weights: inputs.model.weights,
                centers: inputs.centers,
                trace: inputs.trace,
                engine: engine.to_config(),
            };
            commands::ablate(&params, &out.out)?;
        }
        Command::Replay { manifest, out } => {
            let text = std::fs::read_to_string(&manifest)
                .with_context(|| format!("reading manifest {manifest:?}"))?;
            let params = Params::from_json(&text)?;
            commands::execute(&params, &out.out)?;
        }
    }
    Ok(())
}
