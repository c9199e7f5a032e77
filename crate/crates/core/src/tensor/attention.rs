//! Multi-head cross attention with an explicit backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{matmul_backward, softmax, softmax_backward, Axis};
use super::{Matrix, TensorError};

/// Projection weights of one multi-head cross attention block.
///
/// Queries, keys and values are projected to a shared model width that is
/// split evenly across heads; the concatenated head contexts are mapped to
/// the output width by `w_o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhcaParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub heads: usize,
}

impl MhcaParams {
    /// Seeded uniform init in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(
        query_dim: usize,
        key_dim: usize,
        value_dim: usize,
        model_dim: usize,
        out_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let params = Self {
            w_q: Matrix::seeded_uniform(query_dim, model_dim, query_dim, rng),
            w_k: Matrix::seeded_uniform(key_dim, model_dim, key_dim, rng),
            w_v: Matrix::seeded_uniform(value_dim, model_dim, value_dim, rng),
            w_o: Matrix::seeded_uniform(model_dim, out_dim, model_dim, rng),
            heads,
        };
        params.validate()?;
        Ok(params)
    }

    /// Identity projections (square, all widths equal to `dim`).
    pub fn identity(dim: usize, heads: usize) -> Result<Self, TensorError> {
        let params = Self {
            w_q: Matrix::identity(dim),
            w_k: Matrix::identity(dim),
            w_v: Matrix::identity(dim),
            w_o: Matrix::identity(dim),
            heads,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn model_dim(&self) -> usize {
        self.w_q.cols()
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim() / self.heads
    }

    pub fn out_dim(&self) -> usize {
        self.w_o.cols()
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.heads == 0 {
            return Err(TensorError::ZeroHeads);
        }
        let dm = self.w_q.cols();
        if self.w_k.cols() != dm || self.w_v.cols() != dm || self.w_o.rows() != dm {
            return Err(TensorError::mismatch("mhca params", &self.w_q, &self.w_o));
        }
        if dm % self.heads != 0 {
            return Err(TensorError::HeadsNotDivisor {
                heads: self.heads,
                width: dm,
            });
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Matrix; 4] {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]
    }
}

/// Forward result of [`mhca`], kept around for the backward pass and for
/// inspecting attention weights.
#[derive(Debug, Clone)]
pub struct MhcaOutput {
    /// `nq x out_dim`
    pub output: Matrix,
    /// Per head, `nq x nk` attention weights; every row sums to one.
    pub weights: Vec<Matrix>,
    /// Concatenated head contexts before the output projection, `nq x model_dim`.
    pub context: Matrix,
    /// `query · w_q`
    pub q_proj: Matrix,
    /// `key · w_k`
    pub k_proj: Matrix,
    /// `value · w_v`
    pub v_proj: Matrix,
}

impl MhcaOutput {
    /// Attention weights averaged over heads, `nq x nk`.
    pub fn mean_weights(&self) -> Matrix {
        let mut acc = Matrix::zeros(self.weights[0].rows(), self.weights[0].cols());
        for w in &self.weights {
            acc.add_assign(w).expect("head weights share a shape");
        }
        acc.scale(1.0 / self.weights.len() as f64)
    }
}

/// Gradients of a scalar loss with respect to every input of [`mhca`].
#[derive(Debug, Clone)]
pub struct MhcaGrads {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
}

impl MhcaGrads {
    pub fn param_tensors(&self) -> [&Matrix; 4] {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o]
    }
}

/// Multi-head cross attention of `query` over (`key`, `value`).
///
/// Per head: `softmax((Q Wq)_h (K Wk)_h^T / sqrt(d_head)) (V Wv)_h`, heads
/// concatenated and projected by `w_o`.
pub fn mhca(
    query: &Matrix,
    key: &Matrix,
    value: &Matrix,
    params: &MhcaParams,
) -> Result<MhcaOutput, TensorError> {
    params.validate()?;
    if key.rows() != value.rows() {
        return Err(TensorError::mismatch("mhca key/value rows", key, value));
    }
    if key.rows() == 0 {
        return Err(TensorError::Empty("mhca keys"));
    }
    let q_proj = query.matmul(&params.w_q)?;
    let k_proj = key.matmul(&params.w_k)?;
    let v_proj = value.matmul(&params.w_v)?;

    let dh = params.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut context = Matrix::zeros(query.rows(), params.model_dim());
    let mut weights = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = q_proj.slice_cols(lo, hi);
        let kh = k_proj.slice_cols(lo, hi);
        let vh = v_proj.slice_cols(lo, hi);
        let scores = qh.matmul(&kh.transpose())?.scale(scale);
        let a = softmax(&scores, Axis::Row);
        context.set_cols(lo, &a.matmul(&vh)?);
        weights.push(a);
    }
    let output = context.matmul(&params.w_o)?;
    Ok(MhcaOutput {
        output,
        weights,
        context,
        q_proj,
        k_proj,
        v_proj,
    })
}

/// Backward pass of [`mhca`] for upstream gradient `grad_out` (`nq x out_dim`).
pub fn mhca_backward(
    query: &Matrix,
    key: &Matrix,
    value: &Matrix,
    params: &MhcaParams,
    fwd: &MhcaOutput,
    grad_out: &Matrix,
) -> Result<MhcaGrads, TensorError> {
    if grad_out.shape() != fwd.output.shape() {
        return Err(TensorError::mismatch("mhca_backward", &fwd.output, grad_out));
    }
    let (grad_context, w_o) = matmul_backward(&fwd.context, &params.w_o, grad_out)?;

    let dh = params.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut grad_q_proj = Matrix::zeros(fwd.q_proj.rows(), fwd.q_proj.cols());
    let mut grad_k_proj = Matrix::zeros(fwd.k_proj.rows(), fwd.k_proj.cols());
    let mut grad_v_proj = Matrix::zeros(fwd.v_proj.rows(), fwd.v_proj.cols());
    for (h, a) in fwd.weights.iter().enumerate() {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = fwd.q_proj.slice_cols(lo, hi);
        let kh = fwd.k_proj.slice_cols(lo, hi);
        let vh = fwd.v_proj.slice_cols(lo, hi);
        let grad_ctx_h = grad_context.slice_cols(lo, hi);

        let (grad_a, grad_vh) = matmul_backward(a, &vh, &grad_ctx_h)?;
        let grad_scores = softmax_backward(a, &grad_a, Axis::Row)?.scale(scale);
        let grad_qh = grad_scores.matmul(&kh)?;
        let grad_kh = grad_scores.transpose().matmul(&qh)?;

        grad_q_proj.set_cols(lo, &grad_qh);
        grad_k_proj.set_cols(lo, &grad_kh);
        grad_v_proj.set_cols(lo, &grad_vh);
    }

    let (grad_query, w_q) = matmul_backward(query, &params.w_q, &grad_q_proj)?;
    let (grad_key, w_k) = matmul_backward(key, &params.w_k, &grad_k_proj)?;
    let (grad_value, w_v) = matmul_backward(value, &params.w_v, &grad_v_proj)?;
    Ok(MhcaGrads {
        query: grad_query,
        key: grad_key,
        value: grad_value,
        w_q,
        w_k,
        w_v,
        w_o,
    })
}
