//! Basket generation, the personal top-frequency baseline and ranking metrics.

mod generate;
mod rank_match;
mod report;

pub use generate::{GenerationMode, Predictor};
pub use rank_match::{rank_match, RankMatch, RankMatchMatrix};
pub use report::{
    evaluate, quartiles, size_bucket, tenure_bucket, write_matrix_csv, write_per_k_csv, BucketRow, CustomerResult,
    EvalConfig, EvalReport, KRow, Quartiles, SIZE_BUCKETS, TENURE_BUCKETS,
};

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::{CategoryId, CustomerHistory};
use crate::error::{Error, Result};

/// Categories with scores, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedBasket {
    items: Vec<(CategoryId, f64)>,
}

impl RankedBasket {
    /// Rejects duplicates and increasing scores.
    pub fn new(items: Vec<(CategoryId, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, &(c, s)) in items.iter().enumerate() {
            if !seen.insert(c) {
                return Err(Error::InvalidConfig(format!("category {c} ranked twice")));
            }
            if i > 0 && s > items[i - 1].1 {
                return Err(Error::InvalidConfig(format!("score rises at rank {}", i + 1)));
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[(CategoryId, f64)] {
        &self.items
    }

    pub fn ids(&self) -> Vec<CategoryId> {
        self.items.iter().map(|&(c, _)| c).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.items.truncate(k);
    }

    /// 1-based position of `c`, if present.
    pub fn position(&self, c: CategoryId) -> Option<usize> {
        self.items.iter().position(|&(x, _)| x == c).map(|p| p + 1)
    }
}

/// Every category the customer bought, with the number of sessions it
/// appears in, most frequent first and ties by ascending id.
pub fn frequency_ranking(history: &CustomerHistory) -> Vec<(CategoryId, usize)> {
    let mut counts: BTreeMap<CategoryId, usize> = BTreeMap::new();
    for s in history.sessions() {
        for &c in s.categories() {
            *counts.entry(c).or_default() += 1;
        }
    }
    let mut ranked: Vec<_> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Personal top-frequency baseline: at most `k` categories, scored by raw
/// session counts.
pub fn ptop(history: &CustomerHistory, k: usize) -> Result<RankedBasket> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let items = frequency_ranking(history)
        .into_iter()
        .take(k)
        .map(|(c, n)| (c, n as f64))
        .collect();
    Ok(RankedBasket { items })
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    Ok(())
}

fn hits(predicted: &RankedBasket, actual: &[CategoryId], k: usize) -> usize {
    let actual: HashSet<_> = actual.iter().collect();
    predicted.items.iter().take(k).filter(|(c, _)| actual.contains(c)).count()
}

/// `|top-k ∩ actual| / |actual|`.
pub fn recall_at_k(predicted: &RankedBasket, actual: &[CategoryId], k: usize) -> Result<f64> {
    check_k(k)?;
    let distinct = actual.iter().collect::<HashSet<_>>().len();
    if distinct == 0 {
        return Err(Error::EmptyBasket);
    }
    Ok(hits(predicted, actual, k) as f64 / distinct as f64)
}

/// `|top-k ∩ actual| / k`, also when fewer than `k` categories were predicted.
pub fn precision_at_k(predicted: &RankedBasket, actual: &[CategoryId], k: usize) -> Result<f64> {
    check_k(k)?;
    Ok(hits(predicted, actual, k) as f64 / k as f64)
}

/// Anything that ranks categories for a customer's next basket.
pub trait Recommender: Sync {
    fn name(&self) -> &str;
    /// Upper bound on `k`.
    fn num_categories(&self) -> usize;
    fn recommend(&self, history: &CustomerHistory, k: usize) -> Result<RankedBasket>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PTop {
    pub num_categories: usize,
}

impl Recommender for PTop {
    fn name(&self) -> &str {
        "ptop"
    }

    fn num_categories(&self) -> usize {
        self.num_categories
    }

    fn recommend(&self, history: &CustomerHistory, k: usize) -> Result<RankedBasket> {
        ptop(history, k)
    }
}
