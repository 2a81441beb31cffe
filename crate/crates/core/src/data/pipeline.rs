//! Filtering, windowing, and user-level splitting.

use super::{DatasetConfig, Event, RawSequence, UserSequence, Vocabulary};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Drops events whose item occurs fewer than `min_item_count` times in the
/// whole corpus, builds the vocabulary over the survivors, and remaps events
/// to dense indices. Users whose sequences become empty are dropped.
pub fn filter_items(
    sequences: &[RawSequence],
    min_item_count: usize,
) -> Result<(Vec<UserSequence>, Vocabulary)> {
    if min_item_count < 1 {
        return Err(Error::InvalidArgument(
            "min_item_count must be >= 1".into(),
        ));
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for seq in sequences {
        for e in &seq.events {
            *counts.entry(e.item.as_str()).or_default() += 1;
        }
    }
    let vocab = Vocabulary::from_counts(
        counts
            .into_iter()
            .filter(|(_, c)| *c >= min_item_count as u64)
            .map(|(raw, c)| (raw.to_string(), c)),
    );

    let mut out = Vec::new();
    for seq in sequences {
        let events: Vec<Event> = seq
            .events
            .iter()
            .filter_map(|e| {
                vocab.index_of(&e.item).map(|item| Event {
                    item,
                    ctx_in: Vec::new(),
                    ctx_out: Vec::new(),
                    timestamp: e.timestamp,
                })
            })
            .collect();
        if !events.is_empty() {
            out.push(UserSequence {
                user: seq.user.clone(),
                events,
            });
        }
    }
    Ok((out, vocab))
}

/// Cuts each sequence into consecutive non-overlapping windows.
///
/// Sequences shorter than `min_len` are discarded; longer ones are first
/// truncated to their last `max_len` events, then sliced front-to-back into
/// windows of `window` events. A final partial window is kept iff it still
/// has at least `min_len` events.
pub fn generate_windows(
    sequences: &[UserSequence],
    config: &DatasetConfig,
) -> Result<Vec<UserSequence>> {
    config.validate()?;
    let mut windows = Vec::new();
    for seq in sequences {
        if seq.events.len() < config.min_len {
            continue;
        }
        let events = match config.max_len {
            Some(max) if seq.events.len() > max => &seq.events[seq.events.len() - max..],
            _ => &seq.events[..],
        };
        for chunk in events.chunks(config.window) {
            if chunk.len() >= config.min_len {
                windows.push(UserSequence {
                    user: seq.user.clone(),
                    events: chunk.to_vec(),
                });
            }
        }
    }
    Ok(windows)
}

/// Partitions windows by user: all of a user's windows land in the same
/// split. Deterministic under `seed` and independent of input order.
pub fn split_users(
    sequences: &[UserSequence],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<UserSequence>, Vec<UserSequence>, Vec<UserSequence>)> {
    let total = fractions.0 + fractions.1 + fractions.2;
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions sum to {total}, expected 1"
        )));
    }

    let mut by_user: BTreeMap<&str, Vec<&UserSequence>> = BTreeMap::new();
    for seq in sequences {
        by_user.entry(seq.user.as_str()).or_default().push(seq);
    }
    let mut users: Vec<&str> = by_user.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    users.shuffle(&mut rng);

    let n = users.len();
    let n_train = ((fractions.0 * n as f64).round() as usize).min(n);
    let n_val = (((fractions.0 + fractions.1) * n as f64).round() as usize)
        .min(n)
        .saturating_sub(n_train);

    let mut splits = (Vec::new(), Vec::new(), Vec::new());
    for (i, user) in users.iter().enumerate() {
        let bucket = if i < n_train {
            &mut splits.0
        } else if i < n_train + n_val {
            &mut splits.1
        } else {
            &mut splits.2
        };
        bucket.extend(by_user[user].iter().map(|s| (*s).clone()));
    }
    // Stable content order inside each split regardless of the shuffle.
    for split in [&mut splits.0, &mut splits.1, &mut splits.2] {
        split.sort_by(|a, b| a.user.cmp(&b.user));
    }
    Ok(splits)
}
