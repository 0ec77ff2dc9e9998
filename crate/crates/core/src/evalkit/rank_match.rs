use serde::{Deserialize, Serialize};

use super::{frequency_ranking, RankedBasket};
use crate::data::CustomerHistory;

/// `(true_rank, predicted_rank)` pairs for one customer, 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankMatch {
    pub pairs: Vec<(usize, usize)>,
    /// Top-`R` history categories absent from the predicted top `R`.
    pub misses: usize,
}

/// Matches the customer's `R` most frequent categories against their
/// positions in the first `R` predictions.
pub fn rank_match(history: &CustomerHistory, predicted: &RankedBasket, r: usize) -> RankMatch {
    let mut pairs = Vec::new();
    let mut misses = 0;
    for (i, (c, _)) in frequency_ranking(history).into_iter().take(r).enumerate() {
        match predicted.position(c).filter(|&p| p <= r) {
            Some(p) => pairs.push((i + 1, p)),
            None => misses += 1,
        }
    }
    RankMatch { pairs, misses }
}

/// `counts[i][j]`: how often true rank `i+1` was predicted at rank `j+1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankMatchMatrix {
    pub r: usize,
    pub counts: Vec<Vec<u64>>,
    pub misses: u64,
}

impl RankMatchMatrix {
    pub fn new(r: usize) -> Self {
        Self {
            r,
            counts: vec![vec![0; r]; r],
            misses: 0,
        }
    }

    pub fn add(&mut self, m: &RankMatch) {
        for &(i, j) in &m.pairs {
            self.counts[i - 1][j - 1] += 1;
        }
        self.misses += m.misses as u64;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn exact_fraction(&self) -> f64 {
        let trace: u64 = (0..self.r).map(|i| self.counts[i][i]).sum();
        ratio(trace, self.total())
    }

    pub fn within_one_fraction(&self) -> f64 {
        let near: u64 = (0..self.r)
            .flat_map(|i| (0..self.r).map(move |j| (i, j)))
            .filter(|&(i, j)| i.abs_diff(j) <= 1)
            .map(|(i, j)| self.counts[i][j])
            .sum();
        ratio(near, self.total())
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Session;

    fn basket(ids: &[usize]) -> RankedBasket {
        RankedBasket::new(ids.iter().map(|&c| (c, 0.0)).collect()).unwrap()
    }

    fn history() -> CustomerHistory {
        // frequency order: 3 (x3), 1 (x2), 0 (x1)
        CustomerHistory::new(
            "c",
            vec![
                Session::new(0, [3, 1]).unwrap(),
                Session::new(1, [3, 1, 0]).unwrap(),
                Session::new(2, [3]).unwrap(),
            ],
        )
    }

    #[test]
    fn diagonal_when_orders_agree() {
        let m = rank_match(&history(), &basket(&[3, 1, 0]), 3);
        assert_eq!(m.pairs, vec![(1, 1), (2, 2), (3, 3)]);
        assert_eq!(m.misses, 0);
    }

    #[test]
    fn swapped_pair() {
        let m = rank_match(&history(), &basket(&[1, 3]), 2);
        assert_eq!(m.pairs, vec![(1, 2), (2, 1)]);
    }

    #[test]
    fn omitted_category_is_a_miss() {
        let m = rank_match(&history(), &basket(&[3, 5]), 2);
        assert_eq!(m.pairs, vec![(1, 1)]);
        assert_eq!(m.misses, 1);
        // beyond the top R also counts as a miss
        let m = rank_match(&history(), &basket(&[5, 6, 1, 3]), 2);
        assert_eq!(m.misses, 2);
    }

    #[test]
    fn matrix_fractions() {
        let mut mat = RankMatchMatrix::new(3);
        mat.add(&rank_match(&history(), &basket(&[3, 1, 0]), 3));
        mat.add(&rank_match(&history(), &basket(&[1, 3, 0]), 3));
        assert_eq!(mat.total(), 6);
        assert!((mat.exact_fraction() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(mat.within_one_fraction(), 1.0);
        assert_eq!(RankMatchMatrix::new(2).exact_fraction(), 0.0);
    }
}
