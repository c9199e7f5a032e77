//! Slot attention: a fixed set of slots competes for input features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::BankError;
use crate::tensor::ops::{layer_norm_rows, linear, sigmoid, softmax, Axis};
use crate::tensor::Matrix;

const LN_EPS: f64 = 1e-5;
const ATTN_EPS: f64 = 1e-8;

/// GRU cell weights; inputs and hidden state share width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Matrix,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Matrix,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Matrix,
}

impl GruParams {
    fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mut m = |r, c| Matrix::seeded_uniform(r, c, d, rng);
        Self {
            w_z: m(d, d),
            u_z: m(d, d),
            b_z: m(1, d),
            w_r: m(d, d),
            u_r: m(d, d),
            b_r: m(1, d),
            w_h: m(d, d),
            u_h: m(d, d),
            b_h: m(1, d),
        }
    }

    fn step(&self, x: &Matrix, h: &Matrix) -> Result<Matrix, BankError> {
        let z = x.matmul(&self.w_z)?.add(&linear(h, &self.u_z, &self.b_z)?)?.map(sigmoid);
        let r = x.matmul(&self.w_r)?.add(&linear(h, &self.u_r, &self.b_r)?)?.map(sigmoid);
        let cand = x
            .matmul(&self.w_h)?
            .add(&r.hadamard(&h.matmul(&self.u_h)?)?)?
            .add_row_broadcast(&self.b_h)?
            .map(f64::tanh);
        // h' = (1 - z) * cand + z * h
        let keep = z.hadamard(h)?;
        let fresh = z.map(|v| 1.0 - v).hadamard(&cand)?;
        Ok(fresh.add(&keep)?)
    }

    pub fn tensors(&self) -> [&Matrix; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h,
            &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }
}

/// Learned parameters and schedule of a slot attention module.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotParams {
    pub n_slots: usize,
    pub iters: usize,
    /// Seed of the Gaussian slot initialization; fixed so outputs are
    /// deterministic.
    pub init_seed: u64,
    pub slot_mu: Matrix,
    pub slot_log_sigma: Matrix,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub gru: GruParams,
    pub mlp_w1: Matrix,
    pub mlp_b1: Matrix,
    pub mlp_w2: Matrix,
    pub mlp_b2: Matrix,
}

impl SlotParams {
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        n_slots: usize,
        iters: usize,
        init_seed: u64,
        rng: &mut R,
    ) -> Self {
        let hidden = 2 * dim;
        Self {
            n_slots,
            iters,
            init_seed,
            slot_mu: Matrix::seeded_uniform(1, dim, dim, rng),
            slot_log_sigma: Matrix::seeded_uniform(1, dim, dim, rng),
            w_q: Matrix::seeded_uniform(dim, dim, dim, rng),
            w_k: Matrix::seeded_uniform(dim, dim, dim, rng),
            w_v: Matrix::seeded_uniform(dim, dim, dim, rng),
            gru: GruParams::init(dim, rng),
            mlp_w1: Matrix::seeded_uniform(dim, hidden, dim, rng),
            mlp_b1: Matrix::seeded_uniform(1, hidden, dim, rng),
            mlp_w2: Matrix::seeded_uniform(hidden, dim, hidden, rng),
            mlp_b2: Matrix::seeded_uniform(1, dim, hidden, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    /// Zeroes the residual MLP so each iteration's output is the GRU state.
    pub fn with_identity_mlp(mut self) -> Self {
        for m in [&mut self.mlp_w1, &mut self.mlp_b1, &mut self.mlp_w2, &mut self.mlp_b2] {
            *m = Matrix::zeros(m.rows(), m.cols());
        }
        self
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out = vec![
            ("slot_mu", &self.slot_mu),
            ("slot_log_sigma", &self.slot_log_sigma),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
        ];
        let gru_names = ["gru.w_z", "gru.u_z", "gru.b_z", "gru.w_r", "gru.u_r", "gru.b_r", "gru.w_h", "gru.u_h", "gru.b_h"];
        out.extend(gru_names.into_iter().zip(self.gru.tensors()));
        out.extend([
            ("mlp_w1", &self.mlp_w1),
            ("mlp_b1", &self.mlp_b1),
            ("mlp_w2", &self.mlp_w2),
            ("mlp_b2", &self.mlp_b2),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![
            &mut self.slot_mu,
            &mut self.slot_log_sigma,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
        ];
        out.extend(self.gru.tensors_mut());
        out.extend([
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
        ]);
        out
    }

    fn initial_slots(&self) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(self.init_seed);
        let d = self.dim();
        let mut slots = Matrix::zeros(self.n_slots, d);
        for s in 0..self.n_slots {
            for j in 0..d {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let v = self.slot_mu.get(0, j) + self.slot_log_sigma.get(0, j).exp() * noise;
                slots.set(s, j, v);
            }
        }
        slots
    }
}

/// Result of [`slot_attention`], including the last iteration's attention.
#[derive(Debug, Clone)]
pub struct SlotAttentionOutput {
    /// `n_slots x d`
    pub slots: Matrix,
    /// `HW x n_slots`, softmax over slots for each input.
    pub attention: Matrix,
    /// Per-slot weighted mean of the value projections, `n_slots x d`.
    pub read: Matrix,
}

/// Runs slot attention over `features` (`HW x d`).
pub fn slot_attention(features: &Matrix, params: &SlotParams) -> Result<SlotAttentionOutput, BankError> {
    if features.rows() == 0 {
        return Err(BankError::EmptyInput("slot attention features"));
    }
    if params.n_slots == 0 || params.iters == 0 {
        return Err(BankError::Shape("slot attention needs at least one slot and one iteration".into()));
    }
    if features.cols() != params.dim() {
        return Err(BankError::Shape(format!(
            "features have width {}, slot attention expects {}",
            features.cols(),
            params.dim()
        )));
    }
    let inputs = layer_norm_rows(features, LN_EPS);
    let keys = inputs.matmul(&params.w_k)?;
    let values = inputs.matmul(&params.w_v)?;
    let scale = 1.0 / (params.dim() as f64).sqrt();

    let mut slots = params.initial_slots();
    let mut attention = Matrix::zeros(0, 0);
    let mut read = Matrix::zeros(0, 0);
    for _ in 0..params.iters {
        let prev = slots.clone();
        let q = layer_norm_rows(&slots, LN_EPS).matmul(&params.w_q)?;
        let logits = keys.matmul(&q.transpose())?.scale(scale);
        // competition: each input distributes its mass over the slots
        attention = softmax(&logits, Axis::Row);
        let mut weights = attention.map(|a| a + ATTN_EPS);
        let totals = weights.sum_rows();
        for r in 0..weights.rows() {
            for (w, t) in weights.row_mut(r).iter_mut().zip(totals.data()) {
                *w /= t;
            }
        }
        read = weights.transpose().matmul(&values)?;
        slots = params.gru.step(&read, &prev)?;
        let hidden = linear(&layer_norm_rows(&slots, LN_EPS), &params.mlp_w1, &params.mlp_b1)?
            .map(|v| v.max(0.0));
        slots = slots.add(&linear(&hidden, &params.mlp_w2, &params.mlp_b2)?)?;
    }
    Ok(SlotAttentionOutput {
        slots,
        attention,
        read,
    })
}
