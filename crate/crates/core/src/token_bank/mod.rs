//! Time-aware visual token bank.
//!
//! Frame features are compressed by slot attention into a fixed number of
//! tokens per frame, projected into the text space by a light Q-former, and
//! then selected against a prompt, either softly by attention over
//! time-stamped keys or by picking whole frames.

mod qformer;
mod select;
mod slot;
mod stack;
mod timestamp;

pub use qformer::{qformer_backward, qformer_lite, qformer_lite_traced, QFormerGrads, QFormerParams, QFormerTrace};
pub use select::{
    frame_scores, hard_select, manual_select, nearest_frame, soft_select, soft_select_backward,
    soft_select_traced, Selected, SelectionMode, SelectionOutput, SoftGrads, SoftTrace,
};
pub use slot::{slot_attention, GruParams, SlotAttentionOutput, SlotParams};
pub use stack::{ProjectedStack, TokenStack, TokenStackFile};
pub use timestamp::{
    encode_timestamp_sinusoidal, encode_timestamp_textual, render_timestamp, CharEmbedding,
    SinusoidalTimestamps, TextEncoder, TextualTimestamps, TimestampEncoder,
};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Matrix, MhcaParams, TensorError};

pub const CHECKPOINT_FORMAT: &str = "embodia-token-bank/1";

#[derive(Debug, Error)]
pub enum BankError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("token stack has no frames")]
    EmptyStack,
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("timestamp is not finite")]
    NanTimestamp,
    #[error("frame timestamps must be non-decreasing")]
    UnorderedTimestamps,
    #[error("cannot select {requested} frames from {available}")]
    FrameCount { requested: usize, available: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankConfig {
    /// Visual feature width `d`.
    pub visual_dim: usize,
    /// Text embedding width `d'`.
    pub text_dim: usize,
    /// Number of learned selection queries.
    pub n_queries: usize,
    pub heads: usize,
    /// Slots per frame, which is also the number of Q-former queries.
    pub tokens_per_frame: usize,
    pub slot_iters: usize,
    pub seed: u64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            visual_dim: 64,
            text_dim: 32,
            n_queries: 128,
            heads: 4,
            tokens_per_frame: 32,
            slot_iters: 3,
            seed: 0,
        }
    }
}

/// All learned state of the bank. Immutable once built; every forward call
/// is a pure function of these parameters and its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BankParams {
    pub config: BankConfig,
    /// `n x d'`
    pub queries: Matrix,
    /// Queries attend over the prompt.
    pub prompt_attn: MhcaParams,
    /// Prompt-conditioned queries attend over time-stamped tokens; output
    /// width `d`.
    pub select_attn: MhcaParams,
    pub slot: SlotParams,
    pub qformer: QFormerParams,
    pub text: CharEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub config: BankConfig,
    pub tensors: Vec<TensorEntry>,
}

/// JSON checkpoint: a manifest of named shapes plus row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub data: BTreeMap<String, Vec<f64>>,
}

impl BankParams {
    pub fn init(config: &BankConfig) -> Result<Self, BankError> {
        let c = config;
        if c.visual_dim == 0 || c.text_dim == 0 || c.n_queries == 0 || c.tokens_per_frame == 0 {
            return Err(BankError::Shape("bank dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let (d, dt) = (c.visual_dim, c.text_dim);
        Ok(Self {
            config: *c,
            queries: Matrix::seeded_uniform(c.n_queries, dt, 1, &mut rng),
            prompt_attn: MhcaParams::init(dt, dt, dt, dt, dt, c.heads, &mut rng)?,
            select_attn: MhcaParams::init(dt, 2 * dt, d, dt, d, c.heads, &mut rng)?,
            slot: SlotParams::init(d, c.tokens_per_frame, c.slot_iters, c.seed ^ 0x5107, &mut rng),
            qformer: QFormerParams::init(c.tokens_per_frame, d, dt, c.heads, &mut rng)?,
            text: CharEmbedding::seeded(dt, c.seed.wrapping_add(1)),
        })
    }

    fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("queries".to_string(), &self.queries)];
        let attn_names = ["w_q", "w_k", "w_v", "w_o"];
        for (prefix, attn) in [("prompt_attn", &self.prompt_attn), ("select_attn", &self.select_attn)] {
            for (n, m) in attn_names.iter().zip(attn.tensors()) {
                out.push((format!("{prefix}.{n}"), m));
            }
        }
        for (n, m) in self.slot.named_tensors() {
            out.push((format!("slot.{n}"), m));
        }
        for (n, m) in self.qformer.named_tensors() {
            out.push((format!("qformer.{n}"), m));
        }
        out.push(("text.table".to_string(), self.text.table()));
        out
    }

    fn named_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.queries];
        out.extend(self.prompt_attn.tensors_mut());
        out.extend(self.select_attn.tensors_mut());
        out.extend(self.slot.tensors_mut());
        out.extend(self.qformer.tensors_mut());
        out.push(self.text.table_mut());
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let named = self.named();
        Checkpoint {
            manifest: Manifest {
                format: CHECKPOINT_FORMAT.to_string(),
                seed: self.config.seed,
                config: self.config,
                tensors: named
                    .iter()
                    .map(|(n, m)| TensorEntry {
                        name: n.clone(),
                        shape: [m.rows(), m.cols()],
                    })
                    .collect(),
            },
            data: named.into_iter().map(|(n, m)| (n, m.data().to_vec())).collect(),
        }
    }

    /// Rebuilds parameters from a checkpoint, checking every tensor's name
    /// and shape against a fresh layout for the recorded config.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, BankError> {
        if ckpt.manifest.format != CHECKPOINT_FORMAT {
            return Err(BankError::Checkpoint(format!(
                "unsupported format {:?}",
                ckpt.manifest.format
            )));
        }
        let mut params = Self::init(&ckpt.manifest.config)?;
        let layout: Vec<(String, [usize; 2])> = params
            .named()
            .into_iter()
            .map(|(n, m)| (n, [m.rows(), m.cols()]))
            .collect();
        let listed: Vec<(String, [usize; 2])> = ckpt
            .manifest
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.shape))
            .collect();
        if layout != listed {
            return Err(BankError::Checkpoint("tensor manifest does not match the config".into()));
        }
        for ((name, shape), slot) in layout.iter().zip(params.named_mut()) {
            let values = ckpt
                .data
                .get(name)
                .ok_or_else(|| BankError::Checkpoint(format!("missing tensor {name}")))?;
            *slot = Matrix::new(shape[0], shape[1], values.clone())
                .map_err(|e| BankError::Checkpoint(format!("tensor {name}: {e}")))?;
        }
        if ckpt.data.len() != layout.len() {
            return Err(BankError::Checkpoint("checkpoint has unlisted tensors".into()));
        }
        Ok(params)
    }

    /// Compresses each frame's `HW x d` features into slot tokens and their
    /// text-space projections. Frames are processed in parallel.
    pub fn encode_video(
        &self,
        frame_features: &[Matrix],
        timestamps: Vec<f64>,
    ) -> Result<(TokenStack, ProjectedStack), BankError> {
        if frame_features.is_empty() {
            return Err(BankError::EmptyStack);
        }
        let encoded: Vec<(Matrix, Matrix)> = frame_features
            .par_iter()
            .map(|f| {
                let slots = slot_attention(f, &self.slot)?.slots;
                let proj = qformer_lite(&slots, &self.qformer)?;
                Ok((slots, proj))
            })
            .collect::<Result<_, BankError>>()?;
        let (slots, proj): (Vec<_>, Vec<_>) = encoded.into_iter().unzip();
        Ok((TokenStack::new(slots, timestamps)?, ProjectedStack::new(proj)?))
    }

    /// Projects an existing token stack through the Q-former.
    pub fn project(&self, stack: &TokenStack) -> Result<ProjectedStack, BankError> {
        let frames = stack
            .frames()
            .par_iter()
            .map(|f| qformer_lite(f, &self.qformer))
            .collect::<Result<Vec<_>, _>>()?;
        ProjectedStack::new(frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BankConfig {
        BankConfig {
            visual_dim: 8,
            text_dim: 4,
            n_queries: 3,
            heads: 2,
            tokens_per_frame: 5,
            slot_iters: 2,
            seed: 3,
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = BankParams::init(&tiny()).unwrap();
        let json = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back.manifest.seed, 3);
        assert_eq!(BankParams::from_checkpoint(&back).unwrap(), p);
    }

    #[test]
    fn checkpoint_rejects_tampering() {
        let p = BankParams::init(&tiny()).unwrap();
        let mut c = p.to_checkpoint();
        c.data.get_mut("queries").unwrap().pop();
        assert!(BankParams::from_checkpoint(&c).is_err());
        let mut c = p.to_checkpoint();
        c.manifest.tensors[0].shape = [4, 3];
        assert!(BankParams::from_checkpoint(&c).is_err());
        let mut c = p.to_checkpoint();
        c.manifest.format = "other".into();
        assert!(BankParams::from_checkpoint(&c).is_err());
    }

    #[test]
    fn same_seed_same_params() {
        assert_eq!(BankParams::init(&tiny()).unwrap(), BankParams::init(&tiny()).unwrap());
        let other = BankConfig { seed: 4, ..tiny() };
        assert_ne!(BankParams::init(&tiny()).unwrap(), BankParams::init(&other).unwrap());
    }

    #[test]
    fn encode_video_shapes() {
        let cfg = tiny();
        let p = BankParams::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frames: Vec<Matrix> = (0..3).map(|_| Matrix::seeded_uniform(10, 8, 1, &mut rng)).collect();
        let (stack, proj) = p.encode_video(&frames, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!((stack.len(), stack.tokens_per_frame(), stack.dim()), (3, 5, 8));
        assert_eq!((proj.len(), proj.tokens_per_frame(), proj.dim()), (3, 5, 4));
        assert_eq!(p.project(&stack).unwrap(), proj);
    }
}
