//! Evaluation metrics: box localization rates, assignment matching,
//! caption metrics and trajectory errors.
//!
//! Every function here is pure. Rates are returned in percent, distances in
//! meters, and text scores on their natural `[0, 1]` scale (CIDEr aside).

mod boxes;
mod hungarian;
mod text;
mod trajectory;

pub use boxes::{normalize_category, pr_at_k, pr_star_at_k, BoxAnswer};
pub use hungarian::{hungarian, Assignment};
pub use text::{
    bleu, corpus_bleu, cider, ngram_diversity, rescale_cider, rouge_l, tokenize, BleuScores,
    CiderScores, BLEU_EPSILON, CIDER_SIGMA, ROUGE_BETA,
};
pub use trajectory::ade_fde;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("corpus of {0} sentences is too small for document frequencies")]
    CorpusTooSmall(usize),
    #[error("no sentence has at least {0} tokens")]
    NoNgrams(usize),
}

pub(crate) fn check_len(left: usize, right: usize) -> Result<(), MetricsError> {
    if left != right {
        return Err(MetricsError::LengthMismatch { left, right });
    }
    Ok(())
}
