//! `m3`: sequential recommendation with a gated mixture of three
//! temporal-range encoders, plus dataset preparation, synthetic benchmarks,
//! evaluation, ablation, gate reporting, and long-range-dependence analysis.

mod commands;
mod config;
mod dataset;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use config::{dataset_preset, parse_split, RunConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "m3", version, about = "multi-temporal-range mixture recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonFlags {
    /// TOML run configuration; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for all randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (falls back to the M3_OUT_DIR environment variable).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelFlags {
    /// m3r (GRU short-range encoder) or m3c (TCN short-range encoder).
    #[arg(long)]
    variant: Option<m3_core::model::Variant>,
    /// fixed, bottom, or contextual.
    #[arg(long)]
    gate: Option<m3_core::model::GateType>,
    /// concat or sum.
    #[arg(long)]
    agg: Option<m3_core::model::Aggregation>,
    /// Enabled encoder subset, e.g. TSL or TL.
    #[arg(long)]
    enabled: Option<String>,
    #[arg(long)]
    d_in: Option<usize>,
    #[arg(long)]
    d_enc: Option<usize>,
    #[arg(long)]
    d_out: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    f_in_layers: Option<usize>,
    #[arg(long)]
    f_out_layers: Option<usize>,
    #[arg(long)]
    tcn_layers: Option<usize>,
    #[arg(long)]
    tcn_width: Option<usize>,
    /// identity or relu.
    #[arg(long)]
    f_in_activation: Option<String>,
    /// identity or relu.
    #[arg(long)]
    f_out_activation: Option<String>,
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    label_weight: Option<f64>,
    /// uniform or frequency-proportional negative sampling.
    #[arg(long)]
    sampling: Option<String>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    min_target_pos: Option<usize>,
    #[arg(long)]
    final_position_only: bool,
    /// f64 (default) or f32.
    #[arg(long)]
    precision: Option<config::Precision>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a MovieLens-style ratings CSV into windowed train/val/test
    /// splits plus a vocabulary.
    Prepare {
        #[command(flatten)]
        common: CommonFlags,
        /// Ratings CSV with header userId,movieId,rating,timestamp.
        #[arg(long)]
        input: PathBuf,
        /// Preset: ml20m, ml20m-s, ml20m-m, ml20m-l, ml20m-xl.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        min_item_count: Option<usize>,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        /// Train,validation,test fractions, e.g. 0.8,0.1,0.1.
        #[arg(long)]
        split: Option<String>,
    },
    /// Generate a synthetic dataset with known structure (markov, long-copy,
    /// or mixed-context).
    Synth {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        len: Option<usize>,
        #[arg(long)]
        lag: Option<usize>,
        #[arg(long)]
        copy_prob: Option<f64>,
        #[arg(long)]
        anchors: Option<usize>,
        #[arg(long)]
        home_prob: Option<f64>,
        #[arg(long)]
        detail_prob: Option<f64>,
        #[arg(long)]
        scenario_persistence: Option<f64>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Train a model on a prepared dataset directory.
    Train {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Score a checkpoint on a dataset split (full-vocabulary ranking).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Comma-separated cutoffs.
        #[arg(long, default_value = "5,10,20")]
        n: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per encoder subset and compare test mAP@20.
    Ablate {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated subsets, e.g. T,S,L,TS,TL,SL,TSL.
        #[arg(long, default_value = "T,S,L,TS,TL,SL,TSL")]
        subsets: String,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Long-range-dependence profile of item-embedding covariance traces.
    Lrd {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        /// Read embeddings from a trained checkpoint's input table.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Or from an `item v1 v2 ... vd` text file.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Comma-separated lags, ascending.
        #[arg(long, default_value = "1,2,5,10,20,50")]
        lags: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean gate values per context group.
    Gates {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// context (= ctx-out:0), ctx-out:K, or ctx-in:K.
        #[arg(long, default_value = "context")]
        group_by: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_out_dir(flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    if let Some(dir) = flag {
        return Ok(dir);
    }
    if let Some(dir) = std::env::var_os("M3_OUT_DIR") {
        return Ok(PathBuf::from(dir));
    }
    bail!("no output directory: pass --out-dir or set M3_OUT_DIR")
}

fn load_config(common: &CommonFlags) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_model_flags(cfg: &mut RunConfig, flags: &ModelFlags) {
    if let Some(v) = flags.variant {
        cfg.variant = v;
    }
    if let Some(v) = flags.gate {
        cfg.gate = v;
    }
    if let Some(v) = flags.agg {
        cfg.aggregation = v;
    }
    if let Some(v) = &flags.enabled {
        cfg.enabled = v.clone();
    }
    if let Some(v) = flags.d_in {
        cfg.d_in = v;
    }
    if let Some(v) = flags.d_enc {
        cfg.d_enc = v;
    }
    if let Some(v) = flags.d_out {
        cfg.d_out = v;
    }
    if let Some(v) = flags.embed_dim {
        cfg.embed_dim = v;
    }
    if let Some(v) = flags.f_in_layers {
        cfg.f_in_layers = v;
    }
    if let Some(v) = flags.f_out_layers {
        cfg.f_out_layers = v;
    }
    if let Some(v) = flags.tcn_layers {
        cfg.tcn_layers = v;
    }
    if let Some(v) = flags.tcn_width {
        cfg.tcn_width = v;
    }
    if let Some(v) = &flags.f_in_activation {
        cfg.f_in_activation = parse_activation(v);
    }
    if let Some(v) = &flags.f_out_activation {
        cfg.f_out_activation = parse_activation(v);
    }
}

fn parse_activation(s: &str) -> m3_core::model::Activation {
    match s {
        "identity" => m3_core::model::Activation::Identity,
        _ => m3_core::model::Activation::Relu,
    }
}

fn apply_train_flags(cfg: &mut RunConfig, flags: &TrainFlags) -> anyhow::Result<()> {
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = flags.negatives {
        cfg.negatives = v;
    }
    if let Some(v) = flags.label_weight {
        cfg.label_weight = v;
    }
    if let Some(v) = &flags.sampling {
        cfg.sampling = match v.as_str() {
            "uniform" => m3_core::train::SamplingMode::Uniform,
            "frequency-proportional" => m3_core::train::SamplingMode::FrequencyProportional,
            other => bail!("unknown sampling mode `{other}`"),
        };
    }
    if let Some(v) = flags.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = flags.min_target_pos {
        cfg.min_target_pos = v;
    }
    if flags.final_position_only {
        cfg.final_position_only = true;
    }
    if let Some(v) = flags.precision {
        cfg.precision = v;
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare {
            common,
            input,
            variant,
            min_item_count,
            min_len,
            max_len,
            window,
            split,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(preset) = &variant {
                let (min, max, win) = dataset_preset(preset)?;
                cfg.min_len = min;
                cfg.max_len = max;
                cfg.window = win;
            }
            if let Some(v) = min_item_count {
                cfg.min_item_count = v;
            }
            if let Some(v) = min_len {
                cfg.min_len = v;
            }
            if let Some(v) = max_len {
                cfg.max_len = Some(v);
            }
            if let Some(v) = window {
                cfg.window = v;
            }
            if let Some(s) = &split {
                cfg.split = parse_split(s)?;
            }
            let out_dir = resolve_out_dir(common.out_dir.clone())?;
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("cannot create {}", out_dir.display()))?;
            commands::cmd_prepare(&cfg, &input, &out_dir)
        }
        Command::Synth {
            common,
            kind,
            vocab,
            users,
            len,
            lag,
            copy_prob,
            anchors,
            home_prob,
            detail_prob,
            scenario_persistence,
            split,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(v) = kind {
                cfg.synth_kind = v;
            }
            if let Some(v) = vocab {
                cfg.synth_vocab = v;
            }
            if let Some(v) = users {
                cfg.synth_users = v;
            }
            if let Some(v) = len {
                cfg.synth_len = v;
            }
            if let Some(v) = lag {
                cfg.synth_lag = v;
            }
            if let Some(v) = copy_prob {
                cfg.synth_copy_prob = v;
            }
            if let Some(v) = anchors {
                cfg.synth_anchors = v;
            }
            if let Some(v) = home_prob {
                cfg.synth_home_prob = v;
            }
            if let Some(v) = detail_prob {
                cfg.synth_detail_prob = v;
            }
            if let Some(v) = scenario_persistence {
                cfg.synth_scenario_persistence = v;
            }
            if let Some(s) = &split {
                cfg.split = parse_split(s)?;
            }
            let out_dir = resolve_out_dir(common.out_dir.clone())?;
            std::fs::create_dir_all(&out_dir)?;
            commands::cmd_synth(&cfg, &out_dir)
        }
        Command::Train {
            common,
            data,
            model,
            train,
        } => {
            let mut cfg = load_config(&common)?;
            apply_model_flags(&mut cfg, &model);
            apply_train_flags(&mut cfg, &train)?;
            let out_dir = resolve_out_dir(common.out_dir.clone())?;
            commands::cmd_train(&cfg, &data, &out_dir)
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            n,
            out,
        } => commands::cmd_eval(&checkpoint, &data, &split, &n, out),
        Command::Ablate {
            common,
            data,
            subsets,
            model,
            train,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            apply_model_flags(&mut cfg, &model);
            apply_train_flags(&mut cfg, &train)?;
            commands::cmd_ablate(&cfg, &data, &subsets, out)
        }
        Command::Lrd {
            data,
            split,
            checkpoint,
            embeddings,
            lags,
            out,
        } => commands::cmd_lrd(&data, &split, checkpoint, embeddings, &lags, out),
        Command::Gates {
            checkpoint,
            data,
            split,
            group_by,
            out,
        } => commands::cmd_gates(&checkpoint, &data, &split, &group_by, out),
    }
}
