//! Sampled-softmax cross-entropy: logits are computed for the label plus a
//! random negative subset of the vocabulary only.

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    Uniform,
    FrequencyProportional,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    /// Negatives per example; must stay below the vocabulary size.
    pub negatives: usize,
    /// Label weight w_l applied to every example's cross-entropy.
    pub label_weight: f64,
    pub sampling: SamplingMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            negatives: 100,
            label_weight: 1.0,
            sampling: SamplingMode::Uniform,
        }
    }
}

/// Draws distinct negatives, never equal to the label.
pub struct NegativeSampler {
    vocab_size: usize,
    /// Cumulative frequency distribution; empty in uniform mode.
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(mode: SamplingMode, vocab: &Vocabulary) -> Result<Self> {
        if vocab.len() < 2 {
            return Err(Error::InvalidConfig(
                "negative sampling needs at least two items".into(),
            ));
        }
        let cumulative = match mode {
            SamplingMode::Uniform => Vec::new(),
            SamplingMode::FrequencyProportional => {
                let total: u64 = vocab.counts().iter().sum();
                if total == 0 {
                    return Err(Error::InvalidConfig(
                        "frequency-proportional sampling needs nonzero counts".into(),
                    ));
                }
                let mut cum = Vec::with_capacity(vocab.len());
                let mut acc = 0.0;
                for &c in vocab.counts() {
                    acc += c as f64 / total as f64;
                    cum.push(acc);
                }
                cum
            }
        };
        Ok(NegativeSampler {
            vocab_size: vocab.len(),
            cumulative,
        })
    }

    pub fn sample(&self, label: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if k > self.vocab_size - 1 {
            return Err(Error::InvalidConfig(format!(
                "{k} negatives requested from a vocabulary of {}",
                self.vocab_size
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(k + 1);
        seen.insert(label);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let candidate = if self.cumulative.is_empty() {
                rng.gen_range(0..self.vocab_size)
            } else {
                let x: f64 = rng.gen();
                self.cumulative.partition_point(|&c| c <= x).min(self.vocab_size - 1)
            };
            if seen.insert(candidate) {
                out.push(candidate);
            }
        }
        Ok(out)
    }
}

/// w_l * (-log softmax(logits)[label]) over the candidate set
/// {label} ∪ negatives. The negatives are canonically sorted first, so the
/// loss is exactly invariant to their order.
///
/// `logits_for` receives the candidate list (label first) and must return a
/// 1×(k+1) logit row on the tape.
pub fn sampled_softmax_loss<S: Scalar>(
    tape: &mut Tape<S>,
    label: usize,
    negatives: &[usize],
    label_weight: S,
    logits_for: impl FnOnce(&mut Tape<S>, &[usize]) -> Result<Var>,
) -> Result<Var> {
    let mut negs = negatives.to_vec();
    negs.sort_unstable();
    if negs.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(
            "negatives must be sampled without replacement".into(),
        ));
    }
    if negs.binary_search(&label).is_ok() {
        return Err(Error::InvalidArgument(format!(
            "label {label} appears in the negative set"
        )));
    }
    let mut candidates = Vec::with_capacity(negs.len() + 1);
    candidates.push(label);
    candidates.extend(negs);

    let logits = logits_for(tape, &candidates)?;
    let got = tape.value(logits).shape().to_vec();
    if tape.value(logits).numel() != candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "scores builder returned shape {got:?} for {} candidates",
            candidates.len()
        )));
    }

    let lse = tape.log_sum_exp(logits)?;
    let mut onehot = vec![S::zero(); candidates.len()];
    onehot[0] = S::one();
    let onehot = tape.constant(Tensor::row(onehot))?;
    let picked = tape.mul(logits, onehot)?;
    let label_logit = tape.reduce_sum(picked)?;
    let neg_label = tape.scale(label_logit, -S::one())?;
    let nll = tape.add(lse, neg_label)?;
    tape.scale(nll, label_weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn const_logits(values: Vec<f64>) -> impl FnOnce(&mut Tape<f64>, &[usize]) -> Result<Var> {
        move |tape, candidates| {
            assert_eq!(candidates.len(), values.len());
            tape.constant(Tensor::row(values))
        }
    }

    #[test]
    fn equal_logits_give_ln_k() {
        let mut tape = Tape::new();
        let loss =
            sampled_softmax_loss(&mut tape, 3, &[5], 1.0, const_logits(vec![0.7, 0.7])).unwrap();
        assert!((tape.value(loss).scalar_value() - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn two_candidate_hand_value() {
        // label logit 2, negative logit 0: -log(e^2 / (e^2 + 1))
        let mut tape = Tape::new();
        let loss =
            sampled_softmax_loss(&mut tape, 0, &[9], 1.0, const_logits(vec![2.0, 0.0])).unwrap();
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((tape.value(loss).scalar_value() - expected).abs() < 1e-12);
        assert!((tape.value(loss).scalar_value() - 0.126928).abs() < 1e-5);
    }

    #[test]
    fn label_weight_scales_loss() {
        let mut tape = Tape::new();
        let loss =
            sampled_softmax_loss(&mut tape, 0, &[1], 2.5, const_logits(vec![0.0, 0.0])).unwrap();
        assert!((tape.value(loss).scalar_value() - 2.5 * (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn label_in_negatives_rejected() {
        let mut tape = Tape::<f64>::new();
        let res = sampled_softmax_loss(&mut tape, 4, &[2, 4], 1.0, |t, c| {
            t.constant(Tensor::row(vec![0.0; c.len()]))
        });
        assert!(res.is_err());
    }

    #[test]
    fn duplicate_negatives_rejected() {
        let mut tape = Tape::<f64>::new();
        let res = sampled_softmax_loss(&mut tape, 4, &[2, 2], 1.0, |t, c| {
            t.constant(Tensor::row(vec![0.0; c.len()]))
        });
        assert!(res.is_err());
    }

    #[test]
    fn loss_invariant_to_negative_order() {
        let logits = |tape: &mut Tape<f64>, candidates: &[usize]| {
            // logit value tied to the item id so order matters if unsorted
            tape.constant(Tensor::row(
                candidates.iter().map(|&c| (c as f64).sin()).collect(),
            ))
        };
        let mut t1 = Tape::new();
        let l1 = sampled_softmax_loss(&mut t1, 0, &[3, 9, 5, 7], 1.0, logits).unwrap();
        let mut t2 = Tape::new();
        let l2 = sampled_softmax_loss(&mut t2, 0, &[7, 5, 9, 3], 1.0, logits).unwrap();
        assert_eq!(t1.value(l1).scalar_value(), t2.value(l2).scalar_value());
    }

    #[test]
    fn full_candidate_set_equals_exact_cross_entropy() {
        // negatives = all non-label items: sampled softmax == full softmax
        let logits = vec![0.3, -1.0, 0.9, 0.1];
        let label = 2usize;
        let mut tape = Tape::new();
        let all_others: Vec<usize> = (0..4).filter(|&v| v != label).collect();
        let l = {
            let logits = logits.clone();
            sampled_softmax_loss(&mut tape, label, &all_others, 1.0, move |t, c| {
                t.constant(Tensor::row(c.iter().map(|&v| logits[v]).collect()))
            })
            .unwrap()
        };
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
        let exact = -(logits[label] - max - z.ln());
        assert!((tape.value(l).scalar_value() - exact).abs() < 1e-12);
    }

    #[test]
    fn sampler_draws_distinct_non_label() {
        let vocab = Vocabulary::identity(50);
        let sampler = NegativeSampler::new(SamplingMode::Uniform, &vocab).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let negs = sampler.sample(7, 20, &mut rng).unwrap();
            assert_eq!(negs.len(), 20);
            let set: std::collections::HashSet<_> = negs.iter().collect();
            assert_eq!(set.len(), 20);
            assert!(!negs.contains(&7));
        }
    }

    #[test]
    fn frequency_proportional_prefers_frequent_items() {
        let mut vocab = Vocabulary::identity(3);
        vocab.set_count(0, 900);
        vocab.set_count(1, 90);
        vocab.set_count(2, 10);
        let sampler =
            NegativeSampler::new(SamplingMode::FrequencyProportional, &vocab).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hits = [0usize; 3];
        for _ in 0..2000 {
            for v in sampler.sample(2, 1, &mut rng).unwrap() {
                hits[v] += 1;
            }
        }
        assert!(hits[0] > hits[1], "{hits:?}");
        assert_eq!(hits[2], 0); // label excluded
    }
}
