use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Dense category id. Real categories occupy `0..num_categories()`, followed
/// by PAD and BOS.
pub type CategoryId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryVocab {
    names: Vec<String>,
    index: HashMap<String, CategoryId>,
}

impl CategoryVocab {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidConfig("vocabulary has no categories".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate category {n:?}")));
            }
        }
        Ok(Self { names, index })
    }

    /// `cat_00`, `cat_01`, ... used by the synthetic generator.
    pub fn numbered(n: usize) -> Result<Self> {
        let width = n.saturating_sub(1).to_string().len().max(2);
        Self::new((0..n).map(|i| format!("cat_{i:0width$}")).collect())
    }

    pub fn num_categories(&self) -> usize {
        self.names.len()
    }

    /// Total vocabulary size including PAD and BOS.
    pub fn size(&self) -> usize {
        self.names.len() + 2
    }

    pub fn pad(&self) -> CategoryId {
        self.names.len()
    }

    pub fn bos(&self) -> CategoryId {
        self.names.len() + 1
    }

    pub fn is_category(&self, id: CategoryId) -> bool {
        id < self.names.len()
    }

    pub fn id(&self, name: &str) -> Result<CategoryId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownCategory(name.to_string()))
    }

    pub fn name(&self, id: CategoryId) -> &str {
        match id {
            i if i < self.names.len() => &self.names[i],
            i if i == self.pad() => "<pad>",
            i if i == self.bos() => "<bos>",
            _ => "<invalid>",
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn load(path: &Path) -> Result<Self> {
        let names: Vec<String> = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::new(names)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.names)? + "\n")?;
        Ok(())
    }
}
