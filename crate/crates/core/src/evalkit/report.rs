use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{precision_at_k, rank_match, recall_at_k, RankMatch, RankMatchMatrix, Recommender};
use crate::data::TestPair;
use crate::error::{Error, Result};

/// Prior-session-count buckets, inclusive bounds.
pub const TENURE_BUCKETS: [(&str, usize, usize); 5] =
    [("1-2", 1, 2), ("3-4", 3, 4), ("5-7", 5, 7), ("8-10", 8, 10), ("11+", 11, usize::MAX)];

/// Held-out basket size buckets, inclusive bounds.
pub const SIZE_BUCKETS: [(&str, usize, usize); 4] =
    [("<5", 0, 4), ("5-14", 5, 14), ("15-29", 15, 29), ("30+", 30, usize::MAX)];

/// Depth at which the segment breakdowns are reported.
const BREAKDOWN_K: usize = 10;

fn bucket(table: &[(&'static str, usize, usize)], n: usize) -> &'static str {
    table
        .iter()
        .find(|&&(_, lo, hi)| (lo..=hi).contains(&n))
        .map(|b| b.0)
        .unwrap_or(table[0].0)
}

pub fn tenure_bucket(prior_sessions: usize) -> &'static str {
    bucket(&TENURE_BUCKETS, prior_sessions)
}

pub fn size_bucket(basket_size: usize) -> &'static str {
    bucket(&SIZE_BUCKETS, basket_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Side of the rank-match matrix.
    pub rank_r: usize,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: (2..=14).collect(),
            rank_r: 10,
            threads: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidConfig("ks must be a non-empty list of positive values".into()));
        }
        if self.rank_r == 0 {
            return Err(Error::InvalidConfig("rank_r must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Quartiles with linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some(Quartiles {
        q25: at(0.25),
        median: at(0.5),
        q75: at(0.75),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub recall_mean: f64,
    pub recall: Quartiles,
    pub precision_mean: f64,
    pub precision: Quartiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: String,
    pub customers: usize,
    /// Mean recall@10; absent for empty buckets.
    pub recall_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerResult {
    pub customer_id: String,
    pub prior_sessions: usize,
    pub basket_size: usize,
    /// Aligned with the report's `ks`.
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub customers: usize,
    pub ks: Vec<usize>,
    pub per_k: Vec<KRow>,
    pub rank_match: RankMatchMatrix,
    pub exact_match: f64,
    pub within_one: f64,
    pub tenure: Vec<BucketRow>,
    pub basket_size: Vec<BucketRow>,
    pub per_customer: Vec<CustomerResult>,
}

impl EvalReport {
    pub fn row(&self, k: usize) -> Option<&KRow> {
        self.per_k.iter().find(|r| r.k == k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn score_pair(system: &dyn Recommender, pair: &TestPair, cfg: &EvalConfig) -> Result<(CustomerResult, RankMatch)> {
    let deepest = cfg.ks.iter().copied().chain([cfg.rank_r, BREAKDOWN_K]).max().unwrap_or(1);
    let k_max = deepest.min(system.num_categories());
    let predicted = system.recommend(&pair.history, k_max)?;
    let actual = pair.target.categories();
    let recall = cfg.ks.iter().map(|&k| recall_at_k(&predicted, actual, k)).collect::<Result<_>>()?;
    let precision = cfg.ks.iter().map(|&k| precision_at_k(&predicted, actual, k)).collect::<Result<_>>()?;
    let result = CustomerResult {
        customer_id: pair.history.customer_id.clone(),
        prior_sessions: pair.history.len(),
        basket_size: actual.len(),
        recall,
        precision,
        recall_at_10: recall_at_k(&predicted, actual, BREAKDOWN_K)?,
    };
    Ok((result, rank_match(&pair.history, &predicted, cfg.rank_r)))
}

fn breakdown(
    table: &[(&'static str, usize, usize)],
    results: &[CustomerResult],
    key: impl Fn(&CustomerResult) -> usize,
) -> Vec<BucketRow> {
    table
        .iter()
        .map(|&(label, lo, hi)| {
            let vals: Vec<f64> = results
                .iter()
                .filter(|r| (lo..=hi).contains(&key(r)))
                .map(|r| r.recall_at_10)
                .collect();
            BucketRow {
                bucket: label.to_string(),
                customers: vals.len(),
                recall_mean: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
            }
        })
        .collect()
}

/// Scores `system` on every test pair. Pairs are processed in customer-id
/// order so the aggregates do not depend on input order or thread count.
pub fn evaluate(system: &dyn Recommender, test: &[TestPair], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::InvalidConfig("no test pairs to evaluate".into()));
    }
    let mut pairs: Vec<&TestPair> = test.iter().collect();
    pairs.sort_by(|a, b| a.history.customer_id.cmp(&b.history.customer_id));

    let threads = match cfg.threads {
        0 => thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(pairs.len());
    let chunk = pairs.len().div_ceil(threads);
    let scored: Vec<Result<(CustomerResult, RankMatch)>> = thread::scope(|s| {
        let handles: Vec<_> = pairs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|p| score_pair(system, p, cfg)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });

    let mut results = Vec::with_capacity(scored.len());
    let mut matrix = RankMatchMatrix::new(cfg.rank_r);
    for s in scored {
        let (r, m) = s?;
        matrix.add(&m);
        results.push(r);
    }

    let n = results.len() as f64;
    let per_k = cfg
        .ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let rec: Vec<f64> = results.iter().map(|r| r.recall[i]).collect();
            let prec: Vec<f64> = results.iter().map(|r| r.precision[i]).collect();
            KRow {
                k,
                recall_mean: rec.iter().sum::<f64>() / n,
                recall: quartiles(&rec).expect("non-empty"),
                precision_mean: prec.iter().sum::<f64>() / n,
                precision: quartiles(&prec).expect("non-empty"),
            }
        })
        .collect();

    Ok(EvalReport {
        system: system.name().to_string(),
        customers: results.len(),
        ks: cfg.ks.clone(),
        per_k,
        exact_match: matrix.exact_fraction(),
        within_one: matrix.within_one_fraction(),
        rank_match: matrix,
        tenure: breakdown(&TENURE_BUCKETS, &results, |r| r.prior_sessions),
        basket_size: breakdown(&SIZE_BUCKETS, &results, |r| r.basket_size),
        per_customer: results,
    })
}

/// One row per `(system, k)`.
pub fn write_per_k_csv(path: &Path, reports: &[&EvalReport]) -> Result<()> {
    let mut out = String::from(
        "system,k,customers,recall_mean,recall_q25,recall_median,recall_q75,\
         precision_mean,precision_q25,precision_median,precision_q75\n",
    );
    for r in reports {
        for row in &r.per_k {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.system,
                row.k,
                r.customers,
                row.recall_mean,
                row.recall.q25,
                row.recall.median,
                row.recall.q75,
                row.precision_mean,
                row.precision.q25,
                row.precision.median,
                row.precision.q75
            )
            .expect("string write");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// `R × R` counts with a header of predicted ranks.
pub fn write_matrix_csv(path: &Path, m: &RankMatchMatrix) -> Result<()> {
    let mut out = String::from("true_rank");
    for j in 1..=m.r {
        write!(out, ",pred_{j}").expect("string write");
    }
    out.push('\n');
    for (i, row) in m.counts.iter().enumerate() {
        write!(out, "{}", i + 1).expect("string write");
        for c in row {
            write!(out, ",{c}").expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CustomerHistory, Session};
    use crate::evalkit::{frequency_ranking, RankedBasket};

    /// Returns exactly the held-out basket, in history-frequency order.
    struct Oracle(Vec<TestPair>);

    impl Recommender for Oracle {
        fn name(&self) -> &str {
            "oracle"
        }
        fn num_categories(&self) -> usize {
            20
        }
        fn recommend(&self, h: &CustomerHistory, k: usize) -> Result<RankedBasket> {
            let pair = self.0.iter().find(|p| p.history.customer_id == h.customer_id).unwrap();
            let target = pair.target.categories();
            let ids: Vec<usize> = frequency_ranking(h)
                .into_iter()
                .map(|(c, _)| c)
                .filter(|c| target.contains(c))
                .take(k)
                .collect();
            RankedBasket::new(ids.iter().map(|&c| (c, 1.0)).collect())
        }
    }

    fn pair(id: &str, sessions: &[&[usize]], target: &[usize]) -> TestPair {
        TestPair {
            history: CustomerHistory::new(
                id,
                sessions
                    .iter()
                    .enumerate()
                    .map(|(d, s)| Session::new(d as i64, s.iter().copied()).unwrap())
                    .collect(),
            ),
            target: Session::new(sessions.len() as i64, target.iter().copied()).unwrap(),
        }
    }

    #[test]
    fn quartile_interpolation() {
        let q = quartiles(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((q.q25, q.median, q.q75), (1.75, 2.5, 3.25));
        let single = quartiles(&[0.4]).unwrap();
        assert_eq!((single.q25, single.median, single.q75), (0.4, 0.4, 0.4));
        assert!(quartiles(&[]).is_none());
    }

    #[test]
    fn buckets() {
        assert_eq!(tenure_bucket(1), "1-2");
        assert_eq!(tenure_bucket(7), "5-7");
        assert_eq!(tenure_bucket(10), "8-10");
        assert_eq!(tenure_bucket(11), "11+");
        assert_eq!(size_bucket(4), "<5");
        assert_eq!(size_bucket(14), "5-14");
        assert_eq!(size_bucket(30), "30+");
    }

    #[test]
    fn oracle_system_is_perfect() {
        // the target only contains categories seen before, so the oracle can
        // list the whole basket in frequency order
        let test = vec![
            pair("b", &[&[0, 1], &[1, 2]], &[0, 1]),
            pair("a", &[&[3], &[3, 4], &[4, 5, 3]], &[3, 4, 5]),
        ];
        let oracle = Oracle(test.clone());
        let cfg = EvalConfig {
            ks: vec![2, 3],
            rank_r: 3,
            threads: 2,
        };
        let rep = evaluate(&oracle, &test, &cfg).unwrap();
        for r in &rep.per_customer {
            let at = cfg.ks.iter().position(|&k| k == r.basket_size).unwrap();
            assert_eq!(r.recall[at], 1.0);
        }
        assert_eq!(rep.per_customer[0].customer_id, "a");
        assert_eq!(rep.exact_match, 1.0);
        assert_eq!(rep.tenure[0].customers, 1);
        assert_eq!(rep.tenure[1].customers, 1);
    }

    #[test]
    fn single_customer_quartiles_collapse() {
        let test = vec![pair("x", &[&[0, 1, 2], &[0, 1]], &[0, 5])];
        let rep = evaluate(&crate::evalkit::PTop { num_categories: 6 }, &test, &EvalConfig::default()).unwrap();
        for row in &rep.per_k {
            assert_eq!(row.recall.q25, row.recall.median);
            assert_eq!(row.recall.q75, row.recall_mean);
        }
        assert_eq!(rep.per_k[0].recall_mean, 0.5);
    }

    #[test]
    fn thread_count_does_not_change_report() {
        let test: Vec<TestPair> = (0..9)
            .map(|i| pair(&format!("c{i}"), &[&[i % 3, 4], &[i % 5, 4]], &[i % 4]))
            .collect();
        let sys = crate::evalkit::PTop { num_categories: 6 };
        let one = evaluate(&sys, &test, &EvalConfig { threads: 1, ..EvalConfig::default() }).unwrap();
        let many = evaluate(&sys, &test, &EvalConfig { threads: 4, ..EvalConfig::default() }).unwrap();
        assert_eq!(one.to_json().unwrap(), many.to_json().unwrap());
    }

    #[test]
    fn csv_exports() {
        let test = vec![pair("x", &[&[0, 1], &[0]], &[0])];
        let rep = evaluate(
            &crate::evalkit::PTop { num_categories: 3 },
            &test,
            &EvalConfig {
                ks: vec![2, 6, 10],
                rank_r: 2,
                threads: 1,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_per_k_csv(&dir.path().join("k.csv"), &[&rep]).unwrap();
        let text = fs::read_to_string(dir.path().join("k.csv")).unwrap();
        let ks: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(ks, vec!["2", "6", "10"]);
        write_matrix_csv(&dir.path().join("m.csv"), &rep.rank_match).unwrap();
        let m = fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert_eq!(m, "true_rank,pred_1,pred_2\n1,1,0\n2,0,1\n");
    }
}
