//! Synthetic sequence generators with planted temporal structure. Each
//! generator also yields the exact Bayes-optimal next-item distribution so
//! that learned models can be scored against the best achievable predictor.

use super::{Event, UserSequence, Vocabulary};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// First-order chain: next item drawn from `transition[last]`.
#[derive(Debug, Clone)]
pub struct MarkovParams {
    pub transition: Vec<Vec<f64>>,
    pub n_users: usize,
    pub seq_len: usize,
}

/// Next item repeats the item `lag` steps earlier with probability
/// `copy_prob`, otherwise uniform.
#[derive(Debug, Clone)]
pub struct LongCopyParams {
    pub vocab: usize,
    pub lag: usize,
    pub copy_prob: f64,
    pub n_users: usize,
    pub seq_len: usize,
}

/// Per-step binary scenario feature: under `detail` (1) the next item follows
/// a last-item conditional; under `home` (0) it follows a long-range
/// distribution anchored on the user's earliest items.
///
/// The scenario driving the next transition is the serving context, attached
/// to each event as `ctx_out`; the scenario under which an item was consumed
/// is attached as `ctx_in`. Scenarios form a sticky two-state chain, so the
/// input-side annotation carries partial information about the serving one.
#[derive(Debug, Clone)]
pub struct MixedContextParams {
    pub vocab: usize,
    /// Number of leading events acting as the user's long-term anchors.
    pub n_anchors: usize,
    /// Probability that a `home` draw follows the anchor distribution.
    pub home_prob: f64,
    /// Probability of the fixed successor `(last + 1) mod vocab` in the
    /// `detail` scenario.
    pub detail_prob: f64,
    /// Probability that the scenario persists from one step to the next.
    pub scenario_persistence: f64,
    pub n_users: usize,
    pub seq_len: usize,
}

#[derive(Debug, Clone)]
pub enum SyntheticKind {
    Markov(MarkovParams),
    LongCopy(LongCopyParams),
    MixedContext(MixedContextParams),
}

/// Exact next-item distribution of the generating process.
#[derive(Debug, Clone)]
pub enum BayesOracle {
    Markov { transition: Vec<Vec<f64>> },
    LongCopy { vocab: usize, lag: usize, copy_prob: f64 },
    MixedContext {
        vocab: usize,
        n_anchors: usize,
        home_prob: f64,
        detail_prob: f64,
    },
}

impl BayesOracle {
    /// Distribution of the next item given the events observed so far.
    pub fn next_dist(&self, prefix: &[Event]) -> Vec<f64> {
        match self {
            BayesOracle::Markov { transition } => {
                let last = prefix.last().expect("nonempty prefix").item;
                transition[last].clone()
            }
            BayesOracle::LongCopy { vocab, lag, copy_prob } => {
                copy_dist(prefix, *vocab, *lag, *copy_prob)
            }
            BayesOracle::MixedContext {
                vocab,
                n_anchors,
                home_prob,
                detail_prob,
            } => {
                let last = prefix.last().expect("nonempty prefix");
                let scenario = last.ctx_out.first().copied().unwrap_or(0);
                if scenario == 1 {
                    let mut dist = vec![(1.0 - detail_prob) / *vocab as f64; *vocab];
                    dist[(last.item + 1) % vocab] += detail_prob;
                    dist
                } else {
                    let anchors: Vec<usize> = prefix
                        .iter()
                        .take(*n_anchors)
                        .map(|e| e.item)
                        .collect();
                    let mut dist = vec![(1.0 - home_prob) / *vocab as f64; *vocab];
                    for &a in &anchors {
                        dist[a] += home_prob / anchors.len() as f64;
                    }
                    dist
                }
            }
        }
    }
}

fn copy_dist(prefix: &[Event], vocab: usize, lag: usize, copy_prob: f64) -> Vec<f64> {
    // Predicting position `prefix.len()`; the copy source sits `lag` steps
    // before it.
    if prefix.len() >= lag {
        let source = prefix[prefix.len() - lag].item;
        let mut dist = vec![(1.0 - copy_prob) / vocab as f64; vocab];
        dist[source] += copy_prob;
        dist
    } else {
        vec![1.0 / vocab as f64; vocab]
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub sequences: Vec<UserSequence>,
    pub vocabulary: Vocabulary,
    pub oracle: BayesOracle,
}

pub fn generate_synthetic(kind: &SyntheticKind, seed: u64) -> Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = match kind {
        SyntheticKind::Markov(p) => generate_markov(p, &mut rng),
        SyntheticKind::LongCopy(p) => generate_long_copy(p, &mut rng),
        SyntheticKind::MixedContext(p) => generate_mixed(p, &mut rng),
    }?;
    let mut counts = vec![0u64; ds.vocabulary.len()];
    for seq in &ds.sequences {
        for e in &seq.events {
            counts[e.item] += 1;
        }
    }
    for (i, c) in counts.into_iter().enumerate() {
        ds.vocabulary.set_count(i, c);
    }
    Ok(ds)
}

fn validate_dims(n_users: usize, seq_len: usize) -> Result<()> {
    if n_users == 0 || seq_len < 2 {
        return Err(Error::InvalidConfig(
            "synthetic generation needs n_users >= 1 and seq_len >= 2".into(),
        ));
    }
    Ok(())
}

fn generate_markov(params: &MarkovParams, rng: &mut ChaCha8Rng) -> Result<SyntheticDataset> {
    validate_dims(params.n_users, params.seq_len)?;
    let vocab = params.transition.len();
    if vocab == 0 {
        return Err(Error::InvalidConfig("empty transition matrix".into()));
    }
    for (i, row) in params.transition.iter().enumerate() {
        if row.len() != vocab {
            return Err(Error::InvalidConfig(format!(
                "transition row {i} has {} entries, expected {vocab}",
                row.len()
            )));
        }
        if row.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "transition row {i} has a negative entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "transition row {i} sums to {sum}, not a stochastic matrix"
            )));
        }
    }

    let sequences = (0..params.n_users)
        .map(|u| {
            let mut items = Vec::with_capacity(params.seq_len);
            items.push(rng.gen_range(0..vocab));
            for _ in 1..params.seq_len {
                let last = *items.last().expect("nonempty");
                items.push(sample_from(&params.transition[last], rng));
            }
            UserSequence {
                user: format!("u{u}"),
                events: items.into_iter().map(Event::item).collect(),
            }
        })
        .collect();

    Ok(SyntheticDataset {
        sequences,
        vocabulary: Vocabulary::identity(vocab),
        oracle: BayesOracle::Markov {
            transition: params.transition.clone(),
        },
    })
}

fn generate_long_copy(params: &LongCopyParams, rng: &mut ChaCha8Rng) -> Result<SyntheticDataset> {
    validate_dims(params.n_users, params.seq_len)?;
    if params.lag < 1 || params.vocab == 0 || !(0.0..=1.0).contains(&params.copy_prob) {
        return Err(Error::InvalidConfig(
            "long-copy needs lag >= 1, vocab >= 1, copy_prob in [0, 1]".into(),
        ));
    }
    let sequences = (0..params.n_users)
        .map(|u| {
            let mut items: Vec<usize> = Vec::with_capacity(params.seq_len);
            for t in 0..params.seq_len {
                let copied = t >= params.lag && rng.gen_bool(params.copy_prob);
                let item = if copied {
                    items[t - params.lag]
                } else {
                    rng.gen_range(0..params.vocab)
                };
                items.push(item);
            }
            UserSequence {
                user: format!("u{u}"),
                events: items.into_iter().map(Event::item).collect(),
            }
        })
        .collect();

    Ok(SyntheticDataset {
        sequences,
        vocabulary: Vocabulary::identity(params.vocab),
        oracle: BayesOracle::LongCopy {
            vocab: params.vocab,
            lag: params.lag,
            copy_prob: params.copy_prob,
        },
    })
}

fn generate_mixed(params: &MixedContextParams, rng: &mut ChaCha8Rng) -> Result<SyntheticDataset> {
    validate_dims(params.n_users, params.seq_len)?;
    if params.n_anchors < 1
        || params.vocab == 0
        || !(0.0..=1.0).contains(&params.home_prob)
        || !(0.0..=1.0).contains(&params.detail_prob)
        || !(0.0..=1.0).contains(&params.scenario_persistence)
    {
        return Err(Error::InvalidConfig(
            "mixed-context needs n_anchors >= 1, vocab >= 1, probabilities in [0, 1]".into(),
        ));
    }
    let vocab = params.vocab;
    let sequences = (0..params.n_users)
        .map(|u| {
            // scenario[t] governs the transition from event t to event t+1
            let mut scenarios: Vec<usize> = Vec::with_capacity(params.seq_len);
            scenarios.push(usize::from(rng.gen_bool(0.5)));
            for t in 1..params.seq_len {
                let keep = rng.gen_bool(params.scenario_persistence);
                scenarios.push(if keep { scenarios[t - 1] } else { 1 - scenarios[t - 1] });
            }
            let mut items: Vec<usize> = Vec::with_capacity(params.seq_len);
            items.push(rng.gen_range(0..vocab));
            for t in 1..params.seq_len {
                let item = if scenarios[t - 1] == 1 {
                    if rng.gen_bool(params.detail_prob) {
                        (items[t - 1] + 1) % vocab
                    } else {
                        rng.gen_range(0..vocab)
                    }
                } else if rng.gen_bool(params.home_prob) {
                    items[rng.gen_range(0..params.n_anchors.min(t))]
                } else {
                    rng.gen_range(0..vocab)
                };
                items.push(item);
            }
            UserSequence {
                user: format!("u{u}"),
                events: items
                    .into_iter()
                    .enumerate()
                    .map(|(t, item)| Event {
                        item,
                        // the scenario the item was consumed under
                        ctx_in: vec![scenarios[t.saturating_sub(1)]],
                        // the scenario of the upcoming request
                        ctx_out: vec![scenarios[t]],
                        timestamp: None,
                    })
                    .collect(),
            }
        })
        .collect();

    Ok(SyntheticDataset {
        sequences,
        vocabulary: Vocabulary::identity(vocab),
        oracle: BayesOracle::MixedContext {
            vocab,
            n_anchors: params.n_anchors,
            home_prob: params.home_prob,
            detail_prob: params.detail_prob,
        },
    })
}

fn sample_from(dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        cum += p;
        if x < cum {
            return i;
        }
    }
    dist.len() - 1
}
