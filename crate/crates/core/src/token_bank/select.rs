//! Frame selection: soft (attention over all tokens), hard (top-N frames by
//! prompt similarity) and manual (frames nearest to known timestamps).

use serde::{Deserialize, Serialize};

use super::{BankError, BankParams, ProjectedStack, TimestampEncoder, TokenStack};
use crate::tensor::{mhca, mhca_backward, Matrix, MhcaOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Soft,
    Hard,
    Manual,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selected {
    /// `n x d` attended features.
    Features(Matrix),
    /// Chosen frame indices with their raw `S x d` tokens.
    Frames { indices: Vec<usize>, tokens: Vec<Matrix> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutput {
    pub mode: SelectionMode,
    pub selected: Selected,
    /// One score per frame of the input stack.
    pub relevance: Vec<f64>,
}

/// Everything the soft-selection backward pass needs.
#[derive(Debug, Clone)]
pub struct SoftTrace {
    pub prompt_attn: MhcaOutput,
    pub keys: Matrix,
    pub values: Matrix,
    pub select_attn: MhcaOutput,
    pub relevance: Vec<f64>,
}

impl SoftTrace {
    pub fn features(&self) -> &Matrix {
        &self.select_attn.output
    }
}

#[derive(Debug, Clone)]
pub struct SoftGrads {
    pub queries: Matrix,
    pub prompt_attn: [Matrix; 4],
    pub select_attn: [Matrix; 4],
    pub prompt: Matrix,
    pub projected: Vec<Matrix>,
    pub stack: Vec<Matrix>,
}

fn check_prompt(prompt: &Matrix, bank: &BankParams) -> Result<(), BankError> {
    if prompt.rows() == 0 {
        return Err(BankError::EmptyPrompt);
    }
    if prompt.cols() != bank.queries.cols() {
        return Err(BankError::Shape(format!(
            "prompt width {} does not match query width {}",
            prompt.cols(),
            bank.queries.cols()
        )));
    }
    Ok(())
}

/// Keys for the selection attention: each projected token with its frame's
/// timestamp embedding appended.
fn timestamped_keys(
    projected: &ProjectedStack,
    stack: &TokenStack,
    timestamps: &dyn TimestampEncoder,
) -> Result<Matrix, BankError> {
    let mut blocks = Vec::with_capacity(projected.len());
    for (frame, offset) in projected.frames().iter().zip(stack.offsets_from_latest()) {
        let stamp = timestamps.encode(offset)?;
        let repeated = Matrix::vstack(&vec![stamp; frame.rows()])?;
        blocks.push(frame.concat_cols(&repeated)?);
    }
    Ok(Matrix::vstack(&blocks)?)
}

/// Mean attention mass per frame: head-averaged weights summed over each
/// frame's tokens, averaged over queries.
fn frame_mass(weights: &Matrix, frames: usize, per_frame: usize) -> Vec<f64> {
    let mut out = vec![0.0; frames];
    for r in 0..weights.rows() {
        for (j, w) in weights.row(r).iter().enumerate() {
            out[j / per_frame] += w;
        }
    }
    let n = weights.rows() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

pub fn soft_select_traced(
    bank: &BankParams,
    prompt: &Matrix,
    stack: &TokenStack,
    projected: &ProjectedStack,
    timestamps: &dyn TimestampEncoder,
) -> Result<SoftTrace, BankError> {
    check_prompt(prompt, bank)?;
    projected.check_aligned(stack)?;
    let prompt_attn = mhca(&bank.queries, prompt, prompt, &bank.prompt_attn)?;
    let keys = timestamped_keys(projected, stack, timestamps)?;
    let values = stack.flatten();
    let select_attn = mhca(&prompt_attn.output, &keys, &values, &bank.select_attn)?;
    let relevance = frame_mass(&select_attn.mean_weights(), stack.len(), stack.tokens_per_frame());
    Ok(SoftTrace {
        prompt_attn,
        keys,
        values,
        select_attn,
        relevance,
    })
}

/// Attends the learned queries, conditioned on the prompt, over every token
/// of the stack with time-stamped keys.
pub fn soft_select(
    bank: &BankParams,
    prompt: &Matrix,
    stack: &TokenStack,
    projected: &ProjectedStack,
    timestamps: &dyn TimestampEncoder,
) -> Result<SelectionOutput, BankError> {
    let trace = soft_select_traced(bank, prompt, stack, projected, timestamps)?;
    Ok(SelectionOutput {
        mode: SelectionMode::Soft,
        selected: Selected::Features(trace.select_attn.output),
        relevance: trace.relevance,
    })
}

/// Gradients of `sum(E_vis * grad_out)` with respect to every input of
/// [`soft_select`] except the timestamp embeddings.
pub fn soft_select_backward(
    bank: &BankParams,
    prompt: &Matrix,
    stack: &TokenStack,
    trace: &SoftTrace,
    grad_out: &Matrix,
) -> Result<SoftGrads, BankError> {
    let sel = mhca_backward(
        &trace.prompt_attn.output,
        &trace.keys,
        &trace.values,
        &bank.select_attn,
        &trace.select_attn,
        grad_out,
    )?;
    let text_dim = bank.queries.cols();
    let per_frame = stack.tokens_per_frame();
    let mut projected = Vec::with_capacity(stack.len());
    let mut frames = Vec::with_capacity(stack.len());
    for f in 0..stack.len() {
        let (lo, hi) = (f * per_frame, (f + 1) * per_frame);
        projected.push(sel.key.slice_rows(lo, hi).slice_cols(0, text_dim));
        frames.push(sel.value.slice_rows(lo, hi));
    }
    let pr = mhca_backward(
        &bank.queries,
        prompt,
        prompt,
        &bank.prompt_attn,
        &trace.prompt_attn,
        &sel.query,
    )?;
    Ok(SoftGrads {
        queries: pr.query,
        prompt: pr.key.add(&pr.value)?,
        prompt_attn: [pr.w_q, pr.w_k, pr.w_v, pr.w_o],
        select_attn: [sel.w_q, sel.w_k, sel.w_v, sel.w_o],
        projected,
        stack: frames,
    })
}

/// Score of every frame: mean over queries and the frame's projected tokens
/// of the scaled dot product.
pub fn frame_scores(
    bank: &BankParams,
    prompt: &Matrix,
    projected: &ProjectedStack,
) -> Result<Vec<f64>, BankError> {
    check_prompt(prompt, bank)?;
    if projected.dim() != bank.queries.cols() {
        return Err(BankError::Shape(format!(
            "projected width {} does not match query width {}",
            projected.dim(),
            bank.queries.cols()
        )));
    }
    let q = mhca(&bank.queries, prompt, prompt, &bank.prompt_attn)?.output;
    // the double mean factorizes into a dot product of means
    let qbar = q.mean_rows();
    let scale = 1.0 / (q.cols() as f64).sqrt();
    Ok(projected
        .frames()
        .iter()
        .map(|f| {
            let pbar = f.mean_rows();
            qbar.data().iter().zip(pbar.data()).map(|(a, b)| a * b).sum::<f64>() * scale
        })
        .collect())
}

/// Returns the raw tokens of the `n` best-scoring frames, best first, ties
/// broken by earlier index. Relevance holds the raw frame scores.
pub fn hard_select(
    bank: &BankParams,
    prompt: &Matrix,
    stack: &TokenStack,
    projected: &ProjectedStack,
    n: usize,
) -> Result<SelectionOutput, BankError> {
    projected.check_aligned(stack)?;
    if n == 0 || n > stack.len() {
        return Err(BankError::FrameCount {
            requested: n,
            available: stack.len(),
        });
    }
    let scores = frame_scores(bank, prompt, projected)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(n);
    let tokens = order.iter().map(|&i| stack.frame(i).clone()).collect();
    Ok(SelectionOutput {
        mode: SelectionMode::Hard,
        selected: Selected::Frames {
            indices: order,
            tokens,
        },
        relevance: scores,
    })
}

/// Index of the frame closest in time to `t`, earlier index on ties.
pub fn nearest_frame(timestamps: &[f64], t: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, ts) in timestamps.iter().enumerate() {
        let d = (ts - t).abs();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Picks the frame nearest to each ground-truth time. Relevance is the share
/// of picks each frame received.
pub fn manual_select(stack: &TokenStack, gt_timestamps: &[f64]) -> Result<SelectionOutput, BankError> {
    if gt_timestamps.is_empty() {
        return Err(BankError::FrameCount {
            requested: 0,
            available: stack.len(),
        });
    }
    if gt_timestamps.iter().any(|t| !t.is_finite()) {
        return Err(BankError::NanTimestamp);
    }
    let indices: Vec<usize> = gt_timestamps
        .iter()
        .map(|&t| nearest_frame(stack.timestamps(), t).expect("stack is non-empty"))
        .collect();
    let mut relevance = vec![0.0; stack.len()];
    for &i in &indices {
        relevance[i] += 1.0 / indices.len() as f64;
    }
    let tokens = indices.iter().map(|&i| stack.frame(i).clone()).collect();
    Ok(SelectionOutput {
        mode: SelectionMode::Manual,
        selected: Selected::Frames { indices, tokens },
        relevance,
    })
}
