//! Next-item training: for each window, every position in the target range
//! predicts its successor; losses are sampled-softmax cross-entropy and the
//! optimizer is Adagrad.

mod adagrad;
mod loss;

pub use adagrad::AdagradState;
pub use loss::{sampled_softmax_loss, LossConfig, NegativeSampler, SamplingMode};

use crate::data::DatasetSplits;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{M3Config, M3Model};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::Tape;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub epsilon: f64,
    /// Validation mAP@20 every this many epochs (0 disables evaluation and
    /// best-checkpoint selection).
    pub eval_every: usize,
    /// Smallest prefix length that receives a training target.
    pub min_target_pos: usize,
    /// Train on the final position of each window only.
    pub final_position_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 64,
            seed: 1,
            learning_rate: 0.1,
            epsilon: 1e-8,
            eval_every: 1,
            min_target_pos: 2,
            final_position_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("min_target_pos", self.min_target_pos),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be >= 0".into()));
        }
        Ok(())
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub val_map20: Option<f64>,
}

pub struct TrainOutcome<S: Scalar> {
    pub model: M3Model,
    /// Parameters of the best-validation epoch when evaluation ran,
    /// otherwise the final parameters.
    pub store: ParamStore<S>,
    pub records: Vec<LossRecord>,
    pub best_val_map20: Option<f64>,
}

/// splitmix64; used to derive independent seeds per component.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(root: u64, tag: u64, a: u64, b: u64) -> u64 {
    mix(mix(mix(mix(root) ^ tag) ^ a) ^ b)
}

const TAG_INIT: u64 = 0x11;
const TAG_SHUFFLE: u64 = 0x22;
const TAG_NEGATIVES: u64 = 0x33;

/// Target event indices of a window: each index is predicted from the events
/// before it.
pub fn target_positions(window_len: usize, config: &TrainConfig) -> Vec<usize> {
    if window_len < 2 {
        return Vec::new();
    }
    if config.final_position_only {
        if window_len - 1 >= config.min_target_pos {
            vec![window_len - 1]
        } else {
            Vec::new()
        }
    } else {
        (config.min_target_pos.max(1)..window_len).collect()
    }
}

pub fn train<S: Scalar>(
    splits: &DatasetSplits,
    model_config: M3Config,
    config: &TrainConfig,
    loss_config: &LossConfig,
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    model_config.validate()?;
    if splits.train.is_empty() {
        return Err(Error::EmptyInput("training split is empty".into()));
    }
    let vocab_size = splits.vocabulary.len();
    if loss_config.negatives == 0 || loss_config.negatives > vocab_size.saturating_sub(1) {
        return Err(Error::InvalidConfig(format!(
            "negatives must be in 1..={} for a vocabulary of {vocab_size}",
            vocab_size - 1
        )));
    }

    if splits
        .train
        .iter()
        .all(|w| target_positions(w.events.len(), config).is_empty())
    {
        return Err(Error::InvalidConfig(
            "no window in the training split yields a target position".into(),
        ));
    }

    let mut store: ParamStore<S> = ParamStore::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TAG_INIT, 0, 0));
    let model = M3Model::init(model_config, vocab_size, &mut store, &mut init_rng)?;
    let sampler = NegativeSampler::new(loss_config.sampling, &splits.vocabulary)?;
    let mut optimizer = AdagradState::new(
        &store,
        S::of_f64(config.learning_rate),
        S::of_f64(config.epsilon),
    );
    let label_weight = S::of_f64(loss_config.label_weight);

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ParamStore<S>)> = None;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..splits.train.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TAG_SHUFFLE, epoch as u64, 0));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0f64;
        let mut epoch_examples = 0usize;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let batch_loss = run_batch(
                &model,
                &mut store,
                splits,
                batch,
                epoch,
                config,
                loss_config,
                &sampler,
                label_weight,
            )
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged {
                    epoch,
                    batch: batch_idx,
                },
                other => other,
            })?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            optimizer.step(&mut store);
            epoch_loss += batch_loss;
            epoch_examples += 1;
            step += 1;
        }

        let mean_loss = epoch_loss / epoch_examples.max(1) as f64;
        let val = if config.eval_every > 0
            && epoch % config.eval_every == 0
            && !splits.validation.is_empty()
        {
            let report = evaluate(&model, &store, &splits.validation, &[20], vocab_size)?;
            let map20 = report.map_at(20).expect("requested n");
            if best.as_ref().map_or(true, |(b, _)| map20 > *b) {
                best = Some((map20, store.clone()));
            }
            Some(map20)
        } else {
            None
        };
        records.push(LossRecord {
            epoch,
            step,
            loss: mean_loss,
            val_map20: val,
        });
    }

    let (best_val_map20, store) = match best {
        Some((v, s)) => (Some(v), s),
        None => (None, store),
    };
    Ok(TrainOutcome {
        model,
        store,
        records,
        best_val_map20,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_batch<S: Scalar>(
    model: &M3Model,
    store: &mut ParamStore<S>,
    splits: &DatasetSplits,
    batch: &[usize],
    epoch: usize,
    config: &TrainConfig,
    loss_config: &LossConfig,
    sampler: &NegativeSampler,
    label_weight: S,
) -> Result<f64> {
    let mut batch_loss = 0.0f64;
    let mut contributing = 0usize;
    for &window_idx in batch {
        let window = &splits.train[window_idx];
        let targets = target_positions(window.events.len(), config);
        if targets.is_empty() {
            continue;
        }
        let mut neg_rng = ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            TAG_NEGATIVES,
            epoch as u64,
            window_idx as u64,
        ));

        let mut tape = Tape::new();
        let state = model.prepare(&mut tape, store, &window.events)?;
        let mut window_loss = None;
        for &target_idx in &targets {
            let (z_out, _) =
                model.output_at(&mut tape, store, &state, &window.events, target_idx - 1)?;
            let label = window.events[target_idx].item;
            let negatives = sampler.sample(label, loss_config.negatives, &mut neg_rng)?;
            let loss = sampled_softmax_loss(
                &mut tape,
                label,
                &negatives,
                label_weight,
                |tape, candidates| model.candidate_logits(tape, store, z_out, candidates),
            )?;
            window_loss = Some(match window_loss {
                None => loss,
                Some(acc) => tape.add(acc, loss)?,
            });
        }
        let total = window_loss.expect("nonempty targets");
        let scaled = tape.scale(
            total,
            S::of_f64(1.0 / (targets.len() as f64 * batch.len() as f64)),
        )?;
        tape.backward(scaled, store)?;
        batch_loss +=
            tape.value(total).scalar_value().as_f64() / targets.len() as f64;
        contributing += 1;
    }
    Ok(batch_loss / contributing.max(1) as f64)
}

/// `epoch,step,loss,val_map20` with an empty last field when no validation
/// ran that epoch.
pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,step,loss,val_map20")?;
    for r in records {
        match r.val_map20 {
            Some(v) => writeln!(out, "{},{},{},{}", r.epoch, r.step, r.loss, v)?,
            None => writeln!(out, "{},{},{},", r.epoch, r.step, r.loss)?,
        }
    }
    Ok(())
}
