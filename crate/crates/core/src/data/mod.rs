//! Categories, sessions and customer histories, plus dataset I/O, splitting
//! and synthetic generation.

mod history;
mod io;
mod split;
mod synthetic;
mod vocab;

pub use history::{CustomerHistory, Dataset, Session, DEFAULT_EPOCH};
pub use io::{load_customers, load_dataset, parse_history, save_dataset, CustomerRecord, LoadReport, SessionRecord};
pub use split::{filter_eligible, holdout_split, SplitDataset, TestPair};
pub use synthetic::{
    alternating_baskets, generate_labeled, generate_synthetic, Archetype, ArchetypeMix, FrequencyProfile,
    SyntheticConfig, SyntheticDataset,
};
pub use vocab::{CategoryId, CategoryVocab};
