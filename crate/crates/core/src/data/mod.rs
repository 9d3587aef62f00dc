//! Interaction logs, chronological splits, training-instance sampling and
//! synthetic planted-category data.

mod ingest;
mod sampling;
mod split;
mod synthetic;

pub use ingest::{
    dedup_earliest, ingest, parse_csv, parse_jsonl, read_labels_csv, write_interactions_csv,
    write_labels_csv, LogFormat,
};
pub use sampling::{
    instance_at, make_batch, sample_instance, InteractedItems, SamplingConfig, TrainBatch,
    TrainInstance, NEGATIVE_RETRIES,
};
pub use split::{build_split, DatasetSplit, EvalRecord, Sequence};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

use thiserror::Error;

/// One positive user–item interaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

impl Interaction {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: i64) -> Self {
        Self { user_id: user_id.into(), item_id: item_id.into(), timestamp }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("schema error: line {line}: missing field `{field}`")]
    MissingField { line: u64, field: &'static str },
    #[error("malformed row at line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("unknown log format `{0}` (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error("interactions span {windows:.2} day windows; at least 3 are required")]
    SpanTooShort { windows: f64 },
    #[error("no interactions")]
    Empty,
    #[error("user {user} has interacted with every item; no negative found after {retries} draws")]
    CatalogExhausted { user: usize, retries: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}
