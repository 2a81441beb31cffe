//! Flat run configuration: defaults, optional TOML config file, then command
//! line flags, in increasing precedence. The fully resolved configuration is
//! written next to every run's outputs.

use anyhow::{bail, Context};
use m3_core::data::DatasetConfig;
use m3_core::model::{Activation, Aggregation, GateType, M3Config, Variant};
use m3_core::train::{LossConfig, SamplingMode, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => bail!("unknown precision `{other}` (expected f32 or f64)"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,

    // dataset preparation
    pub min_len: usize,
    pub max_len: Option<usize>,
    pub window: usize,
    pub min_item_count: usize,
    pub split: (f64, f64, f64),

    // synthetic generation
    pub synth_kind: String,
    pub synth_vocab: usize,
    pub synth_users: usize,
    pub synth_len: usize,
    pub synth_lag: usize,
    pub synth_anchors: usize,
    pub synth_copy_prob: f64,
    pub synth_home_prob: f64,
    pub synth_detail_prob: f64,
    pub synth_scenario_persistence: f64,

    // model architecture
    pub variant: Variant,
    pub d_in: usize,
    pub d_enc: usize,
    pub d_out: usize,
    pub embed_dim: usize,
    pub aggregation: Aggregation,
    pub gate: GateType,
    pub enabled: String,
    pub f_in_activation: Activation,
    pub f_out_activation: Activation,
    pub f_in_layers: usize,
    pub f_out_layers: usize,
    pub tcn_layers: usize,
    pub tcn_width: usize,
    pub ctx_embed_dim: usize,

    // training
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub eval_every: usize,
    pub min_target_pos: usize,
    pub final_position_only: bool,

    // loss
    pub negatives: usize,
    pub label_weight: f64,
    pub sampling: SamplingMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DatasetConfig::default();
        let m = M3Config::default();
        let t = TrainConfig::default();
        let l = LossConfig::default();
        RunConfig {
            seed: 1,
            precision: Precision::F64,
            min_len: d.min_len,
            max_len: d.max_len,
            window: d.window,
            min_item_count: d.min_item_count,
            split: d.split,
            synth_kind: "markov".into(),
            synth_vocab: 50,
            synth_users: 1000,
            synth_len: 50,
            synth_lag: 10,
            synth_anchors: 3,
            synth_copy_prob: 0.8,
            synth_home_prob: 0.9,
            synth_detail_prob: 0.8,
            synth_scenario_persistence: 0.8,
            variant: m.variant,
            d_in: m.d_in,
            d_enc: m.d_enc,
            d_out: m.d_out,
            embed_dim: m.embed_dim,
            aggregation: m.aggregation,
            gate: m.gate,
            enabled: m.enabled.to_string(),
            f_in_activation: m.f_in_activation,
            f_out_activation: m.f_out_activation,
            f_in_layers: m.f_in_layers,
            f_out_layers: m.f_out_layers,
            tcn_layers: m.tcn_layers,
            tcn_width: m.tcn_width,
            ctx_embed_dim: m.ctx_embed_dim,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            epsilon: t.epsilon,
            eval_every: t.eval_every,
            min_target_pos: t.min_target_pos,
            final_position_only: t.final_position_only,
            negatives: l.negatives,
            label_weight: l.label_weight,
            sampling: l.sampling,
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with an optional TOML file; unknown keys are
    /// rejected.
    pub fn load(config_file: Option<&Path>) -> anyhow::Result<Self> {
        match config_file {
            None => Ok(RunConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config file {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("invalid config file {}", path.display()))
            }
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            min_len: self.min_len,
            max_len: self.max_len,
            window: self.window,
            min_item_count: self.min_item_count,
            split: self.split,
        }
    }

    pub fn model_config(
        &self,
        ctx_in_vocab: Vec<usize>,
        ctx_out_vocab: Vec<usize>,
    ) -> anyhow::Result<M3Config> {
        Ok(M3Config {
            variant: self.variant,
            d_in: self.d_in,
            d_enc: self.d_enc,
            d_out: self.d_out,
            embed_dim: self.embed_dim,
            aggregation: self.aggregation,
            gate: self.gate,
            enabled: self.enabled.parse()?,
            f_in_activation: self.f_in_activation,
            f_out_activation: self.f_out_activation,
            f_in_layers: self.f_in_layers,
            f_out_layers: self.f_out_layers,
            tcn_layers: self.tcn_layers,
            tcn_width: self.tcn_width,
            ctx_in_vocab,
            ctx_out_vocab,
            ctx_embed_dim: self.ctx_embed_dim,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            learning_rate: self.learning_rate,
            epsilon: self.epsilon,
            eval_every: self.eval_every,
            min_target_pos: self.min_target_pos,
            final_position_only: self.final_position_only,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            negatives: self.negatives,
            label_weight: self.label_weight,
            sampling: self.sampling,
        }
    }

    pub fn write_resolved(&self, out_dir: &Path) -> anyhow::Result<()> {
        let text = toml::to_string_pretty(self).context("config serialization")?;
        std::fs::write(out_dir.join("resolved_config.toml"), text)?;
        Ok(())
    }
}

/// MovieLens preprocessing presets: (min_len, max_len, window).
pub fn dataset_preset(name: &str) -> anyhow::Result<(usize, Option<usize>, usize)> {
    match name.to_ascii_lowercase().as_str() {
        "ml20m" => Ok((20, None, 300)),
        "ml20m-s" => Ok((20, Some(50), 20)),
        "ml20m-m" => Ok((50, Some(150), 50)),
        "ml20m-l" => Ok((150, Some(300), 150)),
        "ml20m-xl" => Ok((300, None, 300)),
        other => bail!("unknown dataset preset `{other}`"),
    }
}

pub fn parse_split(s: &str) -> anyhow::Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().context("bad split fraction"))
        .collect::<anyhow::Result<_>>()?;
    if parts.len() != 3 {
        bail!("--split expects three comma-separated fractions");
    }
    Ok((parts[0], parts[1], parts[2]))
}
