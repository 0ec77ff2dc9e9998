//! Synthetic purchase histories with planted structure.
//!
//! Each customer follows one archetype:
//!
//! - `Frequency`: every category has a fixed per-session inclusion
//!   probability. Ranking by past frequency is close to optimal here.
//! - `Alternating`: two disjoint bundles A and B, used on even and odd
//!   sessions respectively. Frequency ranking cannot tell which comes next.
//! - `Periodic`: one category appears on every r-th session on top of a
//!   frequency-style base.
//! - `Complementary`: planted category pairs that co-occur with high
//!   probability on top of a frequency-style base.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::history::{CustomerHistory, Dataset, Session};
use super::vocab::{CategoryId, CategoryVocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Frequency,
    Alternating,
    Periodic,
    Complementary,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::Frequency,
        Archetype::Alternating,
        Archetype::Periodic,
        Archetype::Complementary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::Frequency => "frequency",
            Archetype::Alternating => "alternating",
            Archetype::Periodic => "periodic",
            Archetype::Complementary => "complementary",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown archetype {s:?}")))
    }
}

/// Relative archetype weights, e.g. `frequency:0.5,alternating:0.5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeMix(pub Vec<(Archetype, f64)>);

impl Default for ArchetypeMix {
    fn default() -> Self {
        Self(Archetype::ALL.iter().map(|&a| (a, 1.0)).collect())
    }
}

impl ArchetypeMix {
    pub fn only(a: Archetype) -> Self {
        Self(vec![(a, 1.0)])
    }

    pub fn weight(&self, a: Archetype) -> f64 {
        self.0.iter().filter(|(x, _)| *x == a).map(|(_, w)| w).sum()
    }

    fn pick(&self, rng: &mut impl Rng) -> Archetype {
        let total: f64 = self.0.iter().map(|(_, w)| w).sum();
        let mut x = rng.random::<f64>() * total;
        for &(a, w) in &self.0 {
            if x < w {
                return a;
            }
            x -= w;
        }
        self.0.iter().rev().find(|(_, w)| *w > 0.0).expect("validated").0
    }
}

impl fmt::Display for ArchetypeMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(a, w)| format!("{a}:{w}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for ArchetypeMix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, weight) = match part.split_once(':') {
                Some((n, w)) => (
                    n,
                    w.parse::<f64>()
                        .map_err(|_| Error::InvalidConfig(format!("bad archetype weight in {part:?}")))?,
                ),
                None => (part, 1.0),
            };
            out.push((name.parse()?, weight));
        }
        Ok(Self(out))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub customers: usize,
    pub categories: usize,
    pub min_sessions: usize,
    pub max_sessions: usize,
    pub min_gap_days: i64,
    pub max_gap_days: i64,
    pub mix: ArchetypeMix,
    /// Categories per alternating bundle.
    pub bundle_size: usize,
    /// Preferred categories per frequency-style profile.
    pub favorites: usize,
    pub min_favorite_prob: f64,
    pub max_favorite_prob: f64,
    pub background_prob: f64,
    pub min_period: usize,
    pub max_period: usize,
    pub pairs: usize,
    pub pair_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            customers: 1000,
            categories: 35,
            min_sessions: 6,
            max_sessions: 20,
            min_gap_days: 1,
            max_gap_days: 14,
            mix: ArchetypeMix::default(),
            bundle_size: 3,
            favorites: 5,
            min_favorite_prob: 0.5,
            max_favorite_prob: 0.95,
            background_prob: 0.02,
            min_period: 2,
            max_period: 4,
            pairs: 2,
            pair_prob: 0.9,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.customers == 0 {
            return bad("customers must be at least 1".into());
        }
        if self.categories == 0 {
            return bad("categories must be at least 1".into());
        }
        if self.min_sessions == 0 || self.min_sessions > self.max_sessions {
            return bad(format!(
                "session range {}..={} is empty",
                self.min_sessions, self.max_sessions
            ));
        }
        if self.min_gap_days < 1 || self.min_gap_days > self.max_gap_days {
            return bad(format!(
                "gap range {}..={} must be non-empty and start at 1 or more",
                self.min_gap_days, self.max_gap_days
            ));
        }
        if self.mix.0.is_empty()
            || self.mix.0.iter().any(|(_, w)| !(*w >= 0.0 && w.is_finite()))
            || self.mix.0.iter().map(|(_, w)| w).sum::<f64>() <= 0.0
        {
            return bad(format!("archetype mix {} needs non-negative weights with a positive sum", self.mix));
        }
        for (name, p) in [
            ("min_favorite_prob", self.min_favorite_prob),
            ("max_favorite_prob", self.max_favorite_prob),
            ("background_prob", self.background_prob),
            ("pair_prob", self.pair_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.min_favorite_prob > self.max_favorite_prob {
            return bad("min_favorite_prob exceeds max_favorite_prob".into());
        }
        let uses = |a| self.mix.weight(a) > 0.0;
        let base_need = |extra: usize| self.favorites.max(1) + extra;
        if uses(Archetype::Frequency) && self.favorites.max(1) > self.categories {
            return bad(format!("{} favorites exceed {} categories", self.favorites, self.categories));
        }
        if uses(Archetype::Alternating) && (self.bundle_size == 0 || 2 * self.bundle_size > self.categories) {
            return bad(format!(
                "two disjoint bundles of {} need more than {} categories",
                self.bundle_size, self.categories
            ));
        }
        if uses(Archetype::Periodic) {
            if self.min_period < 2 || self.min_period > self.max_period {
                return bad(format!("period range {}..={} invalid", self.min_period, self.max_period));
            }
            if base_need(1) > self.categories {
                return bad("periodic profile needs favorites + 1 categories".into());
            }
        }
        if uses(Archetype::Complementary) && (self.pairs == 0 || base_need(2 * self.pairs) > self.categories) {
            return bad("complementary profile needs favorites + 2·pairs categories".into());
        }
        Ok(())
    }
}

/// Independent per-category inclusion probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyProfile {
    pub probs: Vec<f64>,
}

impl FrequencyProfile {
    /// Draws one basket; falls back to the most likely category when every
    /// Bernoulli draw fails.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<CategoryId> {
        let mut out: Vec<CategoryId> = self
            .probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0 && rng.random::<f64>() < p)
            .map(|(c, _)| c)
            .collect();
        if out.is_empty() {
            out.push(self.top());
        }
        out
    }

    fn top(&self) -> CategoryId {
        let mut best = 0;
        for (c, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = c;
            }
        }
        best
    }

    fn random(cfg: &SyntheticConfig, excluded: &[CategoryId], rng: &mut impl Rng) -> Self {
        let pool: Vec<CategoryId> = (0..cfg.categories).filter(|c| !excluded.contains(c)).collect();
        let mut probs = vec![0.0; cfg.categories];
        for &c in &pool {
            probs[c] = cfg.background_prob;
        }
        let k = cfg.favorites.max(1).min(pool.len());
        for i in sample(rng, pool.len(), k) {
            probs[pool[i]] = rng.random_range(cfg.min_favorite_prob..=cfg.max_favorite_prob);
        }
        Self { probs }
    }
}

/// A generated dataset plus each customer's archetype, in customer order.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub archetypes: Vec<Archetype>,
}

pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    generate_labeled(cfg, seed).map(|s| s.dataset)
}

pub fn generate_labeled(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let vocab = CategoryVocab::numbered(cfg.categories)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = cfg.customers.saturating_sub(1).to_string().len().max(4);

    let mut customers = Vec::with_capacity(cfg.customers);
    let mut archetypes = Vec::with_capacity(cfg.customers);
    for i in 0..cfg.customers {
        let archetype = cfg.mix.pick(&mut rng);
        let n = rng.random_range(cfg.min_sessions..=cfg.max_sessions);
        let mut day = rng.random_range(0..=cfg.max_gap_days);
        let mut days = Vec::with_capacity(n);
        for _ in 0..n {
            days.push(day);
            day += rng.random_range(cfg.min_gap_days..=cfg.max_gap_days);
        }
        let baskets = baskets_for(archetype, cfg, n, &mut rng);
        let sessions = days
            .into_iter()
            .zip(baskets)
            .map(|(d, b)| Session::new(d, b))
            .collect::<Result<Vec<_>>>()?;
        customers.push(CustomerHistory::new(format!("c{i:0width$}"), sessions));
        archetypes.push(archetype);
    }
    let mut dataset = Dataset::new(vocab, customers)?;
    dataset.rebase_days();
    Ok(SyntheticDataset { dataset, archetypes })
}

fn baskets_for(a: Archetype, cfg: &SyntheticConfig, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<CategoryId>> {
    match a {
        Archetype::Frequency => {
            let profile = FrequencyProfile::random(cfg, &[], rng);
            (0..n).map(|_| profile.sample(rng)).collect()
        }
        Archetype::Alternating => {
            let picked = sample(rng, cfg.categories, 2 * cfg.bundle_size).into_vec();
            let (a, b) = picked.split_at(cfg.bundle_size);
            alternating_baskets(a, b, n)
        }
        Archetype::Periodic => {
            let target = rng.random_range(0..cfg.categories);
            let period = rng.random_range(cfg.min_period..=cfg.max_period);
            let phase = rng.random_range(0..period);
            let base = FrequencyProfile::random(cfg, &[target], rng);
            (0..n)
                .map(|i| {
                    let mut b = base.sample(rng);
                    if i % period == phase {
                        b.push(target);
                    }
                    b
                })
                .collect()
        }
        Archetype::Complementary => {
            let picked = sample(rng, cfg.categories, 2 * cfg.pairs).into_vec();
            let pairs: Vec<(CategoryId, CategoryId)> = picked.chunks(2).map(|p| (p[0], p[1])).collect();
            let base = FrequencyProfile::random(cfg, &picked, rng);
            let anchor_probs: Vec<f64> = pairs
                .iter()
                .map(|_| rng.random_range(cfg.min_favorite_prob..=cfg.max_favorite_prob))
                .collect();
            (0..n)
                .map(|_| {
                    let mut b = base.sample(rng);
                    for (&(x, y), &p) in pairs.iter().zip(&anchor_probs) {
                        if rng.random::<f64>() < p {
                            b.push(x);
                            if rng.random::<f64>() < cfg.pair_prob {
                                b.push(y);
                            }
                        }
                    }
                    b
                })
                .collect()
        }
    }
}

/// Session `2i` gets bundle `a`, session `2i + 1` gets bundle `b`.
pub fn alternating_baskets(a: &[CategoryId], b: &[CategoryId], n: usize) -> Vec<Vec<CategoryId>> {
    (0..n)
        .map(|i| if i % 2 == 0 { a.to_vec() } else { b.to_vec() })
        .collect()
}
