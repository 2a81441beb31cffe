//! Ranking metrics (mAP@n with one target per instance) and the
//! encoder-ablation harness.

use crate::data::{DatasetSplits, UserSequence};
use crate::error::{Error, Result};
use crate::model::{EncoderSet, M3Config, M3Model};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::train::{train, LossConfig, TrainConfig};

/// mAP@n values in ascending n order plus the instance count.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub map: Vec<(usize, f64)>,
    pub n_examples: usize,
}

impl MetricsReport {
    pub fn map_at(&self, n: usize) -> Option<f64> {
        self.map.iter().find(|(m, _)| *m == n).map(|(_, v)| *v)
    }
}

/// Average precision with a single target: AP = 1/rank if rank <= n else 0.
/// Each ranking must cover the candidate set without duplicates.
pub fn map_at_n(rankings: &[Vec<usize>], targets: &[usize], n: usize) -> Result<f64> {
    if rankings.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rankings for {} targets",
            rankings.len(),
            targets.len()
        )));
    }
    if rankings.is_empty() {
        return Err(Error::EmptyInput("mAP over zero instances".into()));
    }
    let mut aps = Vec::with_capacity(rankings.len());
    for (ranking, &target) in rankings.iter().zip(targets) {
        let mut seen = vec![false; ranking.len()];
        for &item in ranking {
            if item >= ranking.len() || seen[item] {
                return Err(Error::InvalidArgument(format!(
                    "ranking is not a permutation: duplicate or out-of-range item {item}"
                )));
            }
            seen[item] = true;
        }
        let rank = 1 + ranking
            .iter()
            .position(|&v| v == target)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("target {target} missing from ranking"))
            })?;
        aps.push(if rank <= n { 1.0 / rank as f64 } else { 0.0 });
    }
    Ok(mean_sorted(aps))
}

/// Sum in sorted order so the result is independent of instance order.
fn mean_sorted(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite AP"));
    let n = values.len();
    values.into_iter().sum::<f64>() / n as f64
}

/// Scores the final event of each window against the full vocabulary and
/// reports mAP@n for every requested n.
pub fn evaluate<S: Scalar>(
    model: &M3Model,
    store: &ParamStore<S>,
    windows: &[UserSequence],
    ns: &[usize],
    vocab_size: usize,
) -> Result<MetricsReport> {
    if model.vocab_size != vocab_size {
        return Err(Error::InvalidArgument(format!(
            "checkpoint vocabulary {} does not match dataset vocabulary {vocab_size}",
            model.vocab_size
        )));
    }
    if windows.is_empty() {
        return Err(Error::EmptyInput("evaluation over zero windows".into()));
    }
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();

    let mut ranks = Vec::with_capacity(windows.len());
    for w in windows {
        if w.events.len() < 2 {
            return Err(Error::InvalidArgument(
                "evaluation windows need at least two events".into(),
            ));
        }
        let (prefix, target) = w.events.split_at(w.events.len() - 1);
        let out = model.score_all(store, prefix)?;
        ranks.push(out.scores.rank_of(target[0].item));
    }

    let map = ns
        .iter()
        .map(|&n| {
            let aps: Vec<f64> = ranks
                .iter()
                .map(|&r| if r <= n { 1.0 / r as f64 } else { 0.0 })
                .collect();
            (n, mean_sorted(aps))
        })
        .collect();
    Ok(MetricsReport {
        map,
        n_examples: windows.len(),
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub subset: EncoderSet,
    pub map20: f64,
}

/// Trains one model per encoder subset with identical seeds and
/// hyperparameters and reports test mAP@20 for each.
pub fn ablate<S: Scalar>(
    splits: &DatasetSplits,
    base: &M3Config,
    train_config: &TrainConfig,
    loss_config: &LossConfig,
    subsets: &[EncoderSet],
) -> Result<Vec<AblationRow>> {
    if subsets.is_empty() {
        return Err(Error::EmptyInput("ablation over zero subsets".into()));
    }
    let mut rows = Vec::with_capacity(subsets.len());
    for &subset in subsets {
        let mut config = base.clone();
        config.enabled = subset;
        let outcome = train::<S>(splits, config, train_config, loss_config)?;
        let report = evaluate(
            &outcome.model,
            &outcome.store,
            &splits.test,
            &[20],
            splits.vocabulary.len(),
        )?;
        rows.push(AblationRow {
            subset,
            map20: report.map_at(20).expect("requested n"),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_target_ap_cases() {
        // rank 1 -> 1.0; rank 3 @5 -> 1/3; rank 7 @5 -> 0
        let ranking: Vec<usize> = (0..8).collect();
        assert_eq!(map_at_n(&[ranking.clone()], &[0], 5).unwrap(), 1.0);
        assert!((map_at_n(&[ranking.clone()], &[2], 5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(map_at_n(&[ranking], &[6], 5).unwrap(), 0.0);
    }

    #[test]
    fn mean_over_instances() {
        let r: Vec<usize> = (0..4).collect();
        let m = map_at_n(&[r.clone(), r], &[0, 3], 2).unwrap();
        assert_eq!(m, 0.5);
    }

    #[test]
    fn duplicates_rejected() {
        assert!(map_at_n(&[vec![0, 0, 1]], &[1], 2).is_err());
    }

    #[test]
    fn matches_enumeration_oracle_small_vocab() {
        // Independent oracle: AP from the grading-by-position definition,
        // sum over positions of precision@k * rel(k), single relevant item.
        fn ap_oracle(ranking: &[usize], target: usize, n: usize) -> f64 {
            let mut hits = 0.0;
            let mut ap = 0.0;
            for (pos, &item) in ranking.iter().take(n).enumerate() {
                if item == target {
                    hits += 1.0;
                    ap += hits / (pos + 1) as f64;
                }
            }
            ap
        }
        // all permutations of vocab 4, all targets, several n
        let mut perms = vec![vec![]];
        for _ in 0..4 {
            let mut next = Vec::new();
            for p in &perms {
                for v in 0..4usize {
                    if !p.contains(&v) {
                        let mut q = p.clone();
                        q.push(v);
                        next.push(q);
                    }
                }
            }
            perms = next;
        }
        for p in &perms {
            for target in 0..4 {
                for n in 1..=4 {
                    let ours = map_at_n(&[p.clone()], &[target], n).unwrap();
                    assert_eq!(ours, ap_oracle(p, target, n));
                }
            }
        }
    }

    #[test]
    fn monotone_in_n() {
        let rankings: Vec<Vec<usize>> = vec![
            vec![3, 1, 0, 2, 4],
            vec![0, 4, 2, 3, 1],
            vec![4, 3, 2, 1, 0],
        ];
        let targets = vec![2, 3, 0];
        let m5 = map_at_n(&rankings, &targets, 2).unwrap();
        let m10 = map_at_n(&rankings, &targets, 3).unwrap();
        let m20 = map_at_n(&rankings, &targets, 5).unwrap();
        assert!(m5 <= m10 && m10 <= m20);
    }

    use crate::data::{Event, UserSequence};
    use crate::model::{M3Config, M3Model};
    use crate::params::ParamStore;
    use rand::SeedableRng;

    fn windows_vocab5() -> Vec<UserSequence> {
        // targets 0, 2, 4 as each window's final event
        [(0usize, 0usize), (1, 2), (2, 4)]
            .iter()
            .map(|&(u, target)| UserSequence {
                user: format!("u{u}"),
                events: vec![Event::item(1), Event::item(3), Event::item(target)],
            })
            .collect()
    }

    fn constant_score_model() -> (M3Model, ParamStore<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut store: ParamStore<f64> = ParamStore::new();
        let cfg = M3Config {
            d_in: 4,
            d_enc: 4,
            d_out: 4,
            embed_dim: 4,
            ..M3Config::default()
        };
        let model = M3Model::init(cfg, 5, &mut store, &mut rng).unwrap();
        // zero output embeddings: every item scores 0, ties broken by index
        let q_out = store.by_name("embed.q_out").unwrap();
        store.value_mut(q_out).fill(0.0);
        (model, store)
    }

    #[test]
    fn equal_scores_rank_by_index() {
        // ranks become 1, 3, 5; AP@5 = (1 + 1/3 + 1/5) / 3
        let (model, store) = constant_score_model();
        let report = evaluate(&model, &store, &windows_vocab5(), &[2, 5], 5).unwrap();
        let expected5 = (1.0 + 1.0 / 3.0 + 1.0 / 5.0) / 3.0;
        assert!((report.map_at(5).unwrap() - expected5).abs() < 1e-15);
        assert!((report.map_at(2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_invariant_to_instance_order() {
        let (model, store) = constant_score_model();
        let windows = windows_vocab5();
        let mut reversed = windows.clone();
        reversed.reverse();
        let a = evaluate(&model, &store, &windows, &[5, 10], 5).unwrap();
        let b = evaluate(&model, &store, &reversed, &[5, 10], 5).unwrap();
        assert_eq!(a.map, b.map);
    }

    #[test]
    fn vocabulary_mismatch_rejected() {
        let (model, store) = constant_score_model();
        assert!(evaluate(&model, &store, &windows_vocab5(), &[5], 9).is_err());
    }
}
