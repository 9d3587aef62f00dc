//! Multi-interest user modelling for candidate matching.
//!
//! Items and learned hyper-categories share a unit-norm embedding space.
//! A user's history is softly assigned to the hyper-categories to form one
//! interest vector per category; optionally a GRU summarizes the items
//! routed to each category and the two views are averaged. Candidates are
//! retrieved by their best inner product with any interest.

#![allow(clippy::needless_range_loop)]

use std::fmt;
use std::str::FromStr;

pub mod data;
pub mod embedding;
pub mod eval;
pub mod interest;
pub mod linalg;
pub mod losses;
pub mod retrieval;
pub mod trainer;

pub use data::{build_split, DataError, DatasetSplit, Interaction};
pub use embedding::{Checkpoint, EmbeddingError, EmbeddingStore, GruParams};
pub use interest::{InterestEncoder, InterestSet};
pub use linalg::Matrix;
pub use retrieval::{retrieve, RetrievalError, RetrievalResult};
pub use trainer::{train, TrainConfig, TrainError, TrainOutcome};

/// Training stage; also selects how interests are built when serving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Stage {
    /// Soft interests only.
    Pretrain = 0,
    /// Soft and GRU-encoded hard interests, averaged.
    Finetune = 1,
}

impl Stage {
    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Stage::Pretrain),
            1 => Some(Stage::Finetune),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        })
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}
