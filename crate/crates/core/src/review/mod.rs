//! Human-in-the-loop quality checks for captioning data.
//!
//! Images are ingested per source into batches. Inspectors look at a 10%
//! sample of each batch and accept it or flag its worst items. Flagged
//! sources accumulate returns and are blacklisted at five. Every change is an
//! [`Event`]; the state is a fold over the event log, so replaying the log
//! rebuilds it exactly.

mod captioner;
mod state;
mod store;

pub use captioner::{CaptionError, CaptionRequest, Captioner, MockCaptioner};
pub use state::{
    sample_ids, sample_size, Batch, BatchStatus, Decision, Event, IngestOutcome, LabelItem, NewItem, ReviewState,
    SourceLedger, Stage, CaptionVersion, ItemState, BLACKLIST_AT, MAX_WORST,
};
pub use store::{ExportRecord, RelabelReport, Store, StoreConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which question the captioner is asked about an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptKind {
    /// Overall scene, with attention to anything unusual.
    A,
    /// Traffic participants and control elements.
    B,
    /// Lane position and the right way to drive.
    C,
}

impl PromptKind {
    pub fn prompt(self) -> &'static str {
        match self {
            PromptKind::A => {
                "Explain what is going on in this driving scene, point out anything out of the ordinary, and suggest how the driver should respond."
            }
            PromptKind::B => {
                "Go through the road users and traffic controls visible here, such as lights, signs, vehicles and pedestrians, and describe each one."
            }
            PromptKind::C => "Say which lane the ego vehicle is in and how it ought to be driven at this moment.",
        }
    }
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("unknown batch {0}")]
    UnknownBatch(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("item {0} already exists")]
    DuplicateItem(String),
    #[error("batch {batch} cannot {action} while {status:?}")]
    InvalidTransition {
        batch: String,
        status: BatchStatus,
        action: &'static str,
    },
    #[error("{0}")]
    InvalidDecision(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("corrupt store: {0}")]
    Corrupt(String),
}
