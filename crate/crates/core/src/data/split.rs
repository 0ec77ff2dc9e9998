use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::history::{CustomerHistory, Dataset, Session};
use crate::error::{Error, Result};

/// A customer's modeling history paired with their held-out final session.
#[derive(Debug, Clone, PartialEq)]
pub struct TestPair {
    pub history: CustomerHistory,
    pub target: Session,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Vec<TestPair>,
}

pub fn filter_eligible(ds: &Dataset, min_sessions: usize) -> Dataset {
    ds.with_customers(
        ds.customers
            .iter()
            .filter(|c| c.len() >= min_sessions)
            .cloned()
            .collect(),
    )
}

/// Holds out every customer's last session as a test target, then splits the
/// remaining histories into train and validation customers.
pub fn holdout_split(ds: &Dataset, val_frac: f64, seed: u64) -> Result<SplitDataset> {
    if !(val_frac > 0.0 && val_frac < 1.0) {
        return Err(Error::InvalidConfig(format!("val_frac {val_frac} not in (0, 1)")));
    }
    let mut test = Vec::with_capacity(ds.customers.len());
    for c in &ds.customers {
        if c.len() < 2 {
            return Err(Error::InsufficientHistory {
                customer: c.customer_id.clone(),
                sessions: c.len(),
                needed: 2,
            });
        }
        let (history, target) = c.split_last().expect("len checked");
        test.push(TestPair { history, target });
    }

    let n = test.len();
    let mut n_val = (val_frac * n as f64).round() as usize;
    if n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    order[..n_val].iter().for_each(|&i| is_val[i] = true);

    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (pair, val) in test.iter().zip(is_val) {
        if val {
            validation.push(pair.history.clone());
        } else {
            train.push(pair.history.clone());
        }
    }
    Ok(SplitDataset {
        train: ds.with_customers(train),
        validation: ds.with_customers(validation),
        test,
    })
}
