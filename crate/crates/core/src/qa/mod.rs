//! QA pair generation for the benchmark tasks.
//!
//! Scenes are JSON Lines files of [`FrameRecord`]s. Each task turns scene
//! annotations into question/answer pairs: questions come from a template
//! bank, and location answers are written with the space vocabulary so they
//! can be decoded back into grid cells.

mod answer;
mod fps;
mod generate;
pub mod synthetic;
mod scene;
mod template;
mod types;

pub use answer::{decode_answer, encode_cells, DecodedAnswer};
pub use fps::{fps_sample, FPS_CAP, FPS_THRESHOLD};
pub use generate::{scene_seed, task_counts, write_jsonl, GenConfig, Generator};
pub use scene::{load_calibs, load_scene_file, load_scenes_dir, parse_scene, Scene};
pub use template::{
    extract_placeholders, fill_template, task_slots, AnswerSchema, Binding, SlotKind, Template,
    TemplateBank,
};
pub use types::{
    Command, EgoState, FramePoint, FrameRecord, FrameRef, QaMeta, QaPair, StructuredGt, TaskKind,
};

use thiserror::Error;

use crate::spatial::SpatialError;

#[derive(Debug, Error)]
pub enum QaError {
    #[error("{source_name}:{line}:{column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("template error: {0}")]
    Template(String),
    #[error("no binding for placeholder {{{0}}}")]
    MissingBinding(String),
    #[error("placeholder {{{name}}} in template {template} got a value of the wrong kind")]
    BindingType { name: String, template: String },
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("scene {scene}: {message}")]
    Scene { scene: String, message: String },
    #[error("no usable candidates: {0}")]
    NoCandidates(String),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}
