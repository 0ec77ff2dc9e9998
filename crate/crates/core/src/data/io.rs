//! JSONL dataset files: one customer per line, categories by name.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::history::{CustomerHistory, Dataset, Session};
use super::vocab::CategoryVocab;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub day: i64,
    pub categories: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomerRecord {
    pub customer_id: String,
    pub sessions: Vec<SessionRecord>,
}

/// Counts of repairs applied while loading.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct LoadReport {
    pub duplicate_categories: usize,
    pub merged_sessions: usize,
}

impl CustomerRecord {
    pub fn from_history(h: &CustomerHistory, vocab: &CategoryVocab) -> Self {
        Self {
            customer_id: h.customer_id.clone(),
            sessions: h
                .sessions()
                .iter()
                .map(|s| SessionRecord {
                    day: s.day,
                    categories: s.categories().iter().map(|&c| vocab.name(c).to_string()).collect(),
                })
                .collect(),
        }
    }

    /// Resolves names and builds a history. Days are taken as-is (no rebasing).
    pub fn into_history(self, vocab: &CategoryVocab, report: &mut LoadReport) -> Result<CustomerHistory> {
        let mut sessions = Vec::with_capacity(self.sessions.len());
        for s in self.sessions {
            let ids = s
                .categories
                .iter()
                .map(|n| vocab.id(n))
                .collect::<Result<Vec<_>>>()?;
            let session = Session::new(s.day, ids.iter().copied())?;
            report.duplicate_categories += ids.len() - session.len();
            sessions.push(session);
        }
        let n = sessions.len();
        let h = CustomerHistory::new(self.customer_id, sessions);
        report.merged_sessions += n - h.len();
        Ok(h)
    }
}

/// Parses a single customer history from a JSON object in the dataset line
/// format.
pub fn parse_history(json: &str, vocab: &CategoryVocab) -> Result<CustomerHistory> {
    let rec: CustomerRecord = serde_json::from_str(json)?;
    rec.into_history(vocab, &mut LoadReport::default())
}

pub fn load_dataset(data: &Path, vocab: &Path) -> Result<Dataset> {
    let vocab = CategoryVocab::load(vocab)?;
    load_customers(data, vocab).map(|(ds, _)| ds)
}

/// Reads a JSONL dataset against an existing vocabulary. Sessions are sorted,
/// same-day sessions merged, duplicate categories dropped and days rebased
/// so the earliest session is day 0.
pub fn load_customers(path: &Path, vocab: CategoryVocab) -> Result<(Dataset, LoadReport)> {
    let reader = BufReader::new(File::open(path)?);
    let mut report = LoadReport::default();
    let mut customers = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: CustomerRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let h = rec.into_history(&vocab, &mut report).map_err(|e| match e {
            e @ Error::UnknownCategory(_) => e,
            other => parse_err(other.to_string()),
        })?;
        customers.push(h);
    }
    if report.duplicate_categories > 0 {
        log::warn!(
            "{}: removed {} duplicate category entries",
            path.display(),
            report.duplicate_categories
        );
    }
    if report.merged_sessions > 0 {
        log::warn!("{}: merged {} same-day sessions", path.display(), report.merged_sessions);
    }
    let mut ds = Dataset::new(vocab, customers)?;
    ds.rebase_days();
    Ok((ds, report))
}

pub fn save_dataset(ds: &Dataset, data: &Path, vocab: &Path) -> Result<()> {
    ds.vocab.save(vocab)?;
    let mut w = BufWriter::new(File::create(data)?);
    for c in &ds.customers {
        serde_json::to_writer(&mut w, &CustomerRecord::from_history(c, &ds.vocab))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn vocab() -> CategoryVocab {
        CategoryVocab::new(vec!["dairy".into(), "produce".into(), "beverages".into()]).unwrap()
    }

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("data.jsonl");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn minimal_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            r#"{"customer_id":"c1","sessions":[{"day":0,"categories":["dairy"]}]}"#,
        );
        let (ds, _) = load_customers(&p, vocab()).unwrap();
        assert_eq!(ds.customers.len(), 1);
        assert_eq!(ds.customers[0].len(), 1);
    }

    #[test]
    fn out_of_order_sessions_sorted_and_rebased() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            r#"{"customer_id":"c1","sessions":[{"day":12,"categories":["dairy"]},{"day":5,"categories":["produce","produce"]}]}"#,
        );
        let (ds, report) = load_customers(&p, vocab()).unwrap();
        let days: Vec<_> = ds.customers[0].sessions().iter().map(|s| s.day).collect();
        assert_eq!(days, vec![0, 7]);
        assert_eq!(report.duplicate_categories, 1);
    }

    #[test]
    fn unknown_category_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            r#"{"customer_id":"c1","sessions":[{"day":0,"categories":["unknown_xyz"]}]}"#,
        );
        let err = load_customers(&p, vocab()).unwrap_err();
        assert!(err.to_string().contains("unknown_xyz"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "{\"customer_id\":\"c1\",\"sessions\":[]}\n{not json}\n",
        );
        match load_customers(&p, vocab()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn same_day_merge_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            r#"{"customer_id":"c1","sessions":[{"day":1,"categories":["dairy"]},{"day":1,"categories":["beverages"]}]}"#,
        );
        let (ds, report) = load_customers(&p, vocab()).unwrap();
        assert_eq!(report.merged_sessions, 1);
        assert_eq!(ds.customers[0].sessions()[0].categories(), &[0, 2]);
    }
}
