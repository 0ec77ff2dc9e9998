use std::collections::HashSet;

use super::vocab::{CategoryId, CategoryVocab};
use crate::error::{Error, Result};

/// One shopping event: a day stamp and a deduplicated category set, stored in
/// ascending id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub day: i64,
    categories: Vec<CategoryId>,
}

impl Session {
    pub fn new(day: i64, categories: impl IntoIterator<Item = CategoryId>) -> Result<Self> {
        if day < 0 {
            return Err(Error::InvalidConfig(format!("negative session day {day}")));
        }
        let mut categories: Vec<_> = categories.into_iter().collect();
        categories.sort_unstable();
        categories.dedup();
        if categories.is_empty() {
            return Err(Error::InvalidConfig(format!("empty session on day {day}")));
        }
        Ok(Self { day, categories })
    }

    pub fn categories(&self) -> &[CategoryId] {
        &self.categories
    }

    pub fn contains(&self, c: CategoryId) -> bool {
        self.categories.binary_search(&c).is_ok()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub(crate) fn merge(&mut self, other: &Session) {
        self.categories.extend_from_slice(&other.categories);
        self.categories.sort_unstable();
        self.categories.dedup();
    }
}

/// A customer's sessions in strictly increasing day order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CustomerHistory {
    pub customer_id: String,
    sessions: Vec<Session>,
}

impl CustomerHistory {
    /// Sorts sessions by day and merges sessions sharing a day.
    pub fn new(customer_id: impl Into<String>, mut sessions: Vec<Session>) -> Self {
        sessions.sort_by_key(|s| s.day);
        let mut merged: Vec<Session> = Vec::with_capacity(sessions.len());
        for s in sessions {
            match merged.last_mut() {
                Some(last) if last.day == s.day => last.merge(&s),
                _ => merged.push(s),
            }
        }
        Self {
            customer_id: customer_id.into(),
            sessions: merged,
        }
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn first_day(&self) -> Option<i64> {
        self.sessions.first().map(|s| s.day)
    }

    pub fn last_day(&self) -> Option<i64> {
        self.sessions.last().map(|s| s.day)
    }

    pub fn distinct_categories(&self) -> usize {
        self.sessions
            .iter()
            .flat_map(|s| s.categories.iter())
            .collect::<HashSet<_>>()
            .len()
    }

    /// Splits off the final session.
    pub fn split_last(&self) -> Option<(CustomerHistory, Session)> {
        let (last, rest) = self.sessions.split_last()?;
        Some((
            CustomerHistory {
                customer_id: self.customer_id.clone(),
                sessions: rest.to_vec(),
            },
            last.clone(),
        ))
    }

    pub(crate) fn shift_days(&mut self, delta: i64) {
        self.sessions.iter_mut().for_each(|s| s.day += delta);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: CategoryVocab,
    pub customers: Vec<CustomerHistory>,
    /// Calendar date of day 0.
    pub epoch: String,
}

pub const DEFAULT_EPOCH: &str = "1970-01-01";

impl Dataset {
    pub fn new(vocab: CategoryVocab, customers: Vec<CustomerHistory>) -> Result<Self> {
        let ds = Self {
            vocab,
            customers,
            epoch: DEFAULT_EPOCH.to_string(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.customers {
            if !seen.insert(c.customer_id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate customer id {:?}",
                    c.customer_id
                )));
            }
            for w in c.sessions.windows(2) {
                if w[0].day >= w[1].day {
                    return Err(Error::InvalidConfig(format!(
                        "customer {:?}: sessions not strictly ordered by day",
                        c.customer_id
                    )));
                }
            }
            for s in &c.sessions {
                if let Some(&bad) = s.categories.iter().find(|&&id| !self.vocab.is_category(id)) {
                    return Err(Error::InvalidToken {
                        id: bad,
                        vocab_size: self.vocab.size(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn num_sessions(&self) -> usize {
        self.customers.iter().map(|c| c.len()).sum()
    }

    /// Shifts all days so the earliest session falls on day 0.
    pub fn rebase_days(&mut self) {
        if let Some(min) = self.customers.iter().filter_map(|c| c.first_day()).min() {
            self.customers.iter_mut().for_each(|c| c.shift_days(-min));
        }
    }

    pub fn with_customers(&self, customers: Vec<CustomerHistory>) -> Dataset {
        Dataset {
            vocab: self.vocab.clone(),
            customers,
            epoch: self.epoch.clone(),
        }
    }
}
