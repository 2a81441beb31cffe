//! Event sequences: ingestion, filtering, windowing, user splits, and
//! synthetic generators with known Bayes-optimal predictors.

mod format;
mod movielens;
mod pipeline;
mod synthetic;

pub use format::{read_vocabulary, read_windows, write_vocabulary, write_windows};
pub use movielens::load_movielens;
pub use pipeline::{filter_items, generate_windows, split_users};
pub use synthetic::{
    generate_synthetic, BayesOracle, LongCopyParams, MarkovParams, MixedContextParams,
    SyntheticDataset, SyntheticKind,
};

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// One logged interaction over the dense item vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub item: usize,
    /// Categorical feature indices consumed on the input side of the model.
    pub ctx_in: Vec<usize>,
    /// Categorical feature indices describing the serving context.
    pub ctx_out: Vec<usize>,
    /// Seconds; used only for ordering, optional after ingestion.
    pub timestamp: Option<i64>,
}

impl Event {
    pub fn item(item: usize) -> Self {
        Event {
            item,
            ctx_in: Vec::new(),
            ctx_out: Vec::new(),
            timestamp: None,
        }
    }
}

/// Time-ordered events of one user (or one window thereof).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user: String,
    pub events: Vec<Event>,
}

/// An event as it comes out of a raw log, before any vocabulary exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub item: String,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSequence {
    pub user: String,
    pub events: Vec<RawEvent>,
}

/// Preprocessing parameters: length filters, window size, train/val/test
/// fractions.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetConfig {
    pub min_len: usize,
    pub max_len: Option<usize>,
    pub window: usize,
    pub min_item_count: usize,
    pub split: (f64, f64, f64),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            min_len: 20,
            max_len: None,
            window: 300,
            min_item_count: 20,
            split: (0.8, 0.1, 0.1),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len < 2 {
            return Err(Error::InvalidConfig("min_len must be >= 2".into()));
        }
        if self.window < 2 {
            return Err(Error::InvalidConfig("window must be >= 2".into()));
        }
        let total = self.split.0 + self.split.1 + self.split.2;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions sum to {total}, expected 1"
            )));
        }
        if self.split.0 < 0.0 || self.split.1 < 0.0 || self.split.2 < 0.0 {
            return Err(Error::InvalidConfig("split fractions must be >= 0".into()));
        }
        Ok(())
    }
}

/// Bijection between raw item ids and dense indices, with frequency counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    raw: Vec<String>,
    counts: Vec<u64>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from (raw id, count) pairs ordered by descending
    /// count with ascending raw id as tie-break, so construction is
    /// independent of input order.
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut pairs: Vec<(String, u64)> = counts.into_iter().collect();
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab = Vocabulary::default();
        for (raw, count) in pairs {
            vocab.index.insert(raw.clone(), vocab.raw.len());
            vocab.raw.push(raw);
            vocab.counts.push(count);
        }
        vocab
    }

    /// Identity mapping for synthetic corpora whose items are already dense.
    pub fn identity(n: usize) -> Self {
        let mut vocab = Vocabulary::default();
        for i in 0..n {
            vocab.index.insert(i.to_string(), i);
            vocab.raw.push(i.to_string());
            vocab.counts.push(0);
        }
        vocab
    }

    /// Builds a vocabulary preserving the given (raw id, count) order.
    pub fn from_ordered(entries: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        for (raw, count) in entries {
            if vocab.index.insert(raw.clone(), vocab.raw.len()).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary entry `{raw}`"
                )));
            }
            vocab.raw.push(raw);
            vocab.counts.push(count);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn index_of(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw_of(&self, index: usize) -> &str {
        &self.raw[index]
    }

    pub fn count_of(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn set_count(&mut self, index: usize, count: u64) {
        self.counts[index] = count;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

/// Train/validation/test windows plus the vocabulary they are indexed by.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<UserSequence>,
    pub validation: Vec<UserSequence>,
    pub test: Vec<UserSequence>,
    pub vocabulary: Vocabulary,
}
