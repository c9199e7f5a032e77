//! A one-block stand-in for a Q-former: learned queries read a frame's
//! tokens through cross attention, then a small feed-forward net maps the
//! result into the text embedding width.

use rand::Rng;

use super::BankError;
use crate::tensor::ops::{linear, matmul_backward};
use crate::tensor::{mhca, mhca_backward, Matrix, MhcaOutput, MhcaParams};

#[derive(Debug, Clone, PartialEq)]
pub struct QFormerParams {
    /// Learned queries, `S x d`.
    pub queries: Matrix,
    pub attn: MhcaParams,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Intermediate values kept for [`qformer_backward`].
#[derive(Debug, Clone)]
pub struct QFormerTrace {
    pub attn: MhcaOutput,
    pub hidden: Matrix,
    pub output: Matrix,
}

#[derive(Debug, Clone)]
pub struct QFormerGrads {
    pub queries: Matrix,
    pub attn: [Matrix; 4],
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub tokens: Matrix,
}

impl QFormerParams {
    pub fn init<R: Rng + ?Sized>(
        n_queries: usize,
        dim: usize,
        text_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, BankError> {
        let hidden = 2 * dim;
        Ok(Self {
            queries: Matrix::seeded_uniform(n_queries, dim, 1, rng),
            attn: MhcaParams::init(dim, dim, dim, dim, dim, heads, rng)?,
            w1: Matrix::seeded_uniform(dim, hidden, dim, rng),
            b1: Matrix::seeded_uniform(1, hidden, dim, rng),
            w2: Matrix::seeded_uniform(hidden, text_dim, hidden, rng),
            b2: Matrix::seeded_uniform(1, text_dim, hidden, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.queries.cols()
    }

    pub fn text_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let [wq, wk, wv, wo] = self.attn.tensors();
        vec![
            ("queries", &self.queries),
            ("attn.w_q", wq),
            ("attn.w_k", wk),
            ("attn.w_v", wv),
            ("attn.w_o", wo),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.queries];
        out.extend(self.attn.tensors_mut());
        out.extend([&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]);
        out
    }
}

pub fn qformer_lite_traced(tokens: &Matrix, params: &QFormerParams) -> Result<QFormerTrace, BankError> {
    if tokens.cols() != params.dim() {
        return Err(BankError::Shape(format!(
            "frame tokens have width {}, q-former expects {}",
            tokens.cols(),
            params.dim()
        )));
    }
    let attn = mhca(&params.queries, tokens, tokens, &params.attn)?;
    let hidden = linear(&attn.output, &params.w1, &params.b1)?.map(f64::tanh);
    let output = linear(&hidden, &params.w2, &params.b2)?;
    Ok(QFormerTrace {
        attn,
        hidden,
        output,
    })
}

/// Projects one frame's `S x d` tokens to `n_queries x d'`.
pub fn qformer_lite(tokens: &Matrix, params: &QFormerParams) -> Result<Matrix, BankError> {
    Ok(qformer_lite_traced(tokens, params)?.output)
}

pub fn qformer_backward(
    tokens: &Matrix,
    params: &QFormerParams,
    trace: &QFormerTrace,
    grad_out: &Matrix,
) -> Result<QFormerGrads, BankError> {
    if grad_out.shape() != trace.output.shape() {
        return Err(BankError::Shape("q-former upstream gradient has the wrong shape".into()));
    }
    let (grad_hidden, w2) = matmul_backward(&trace.hidden, &params.w2, grad_out)?;
    let b2 = grad_out.sum_rows();
    let grad_pre = grad_hidden.hadamard(&trace.hidden.map(|h| 1.0 - h * h))?;
    let (grad_attn_out, w1) = matmul_backward(&trace.attn.output, &params.w1, &grad_pre)?;
    let b1 = grad_pre.sum_rows();
    let g = mhca_backward(
        &params.queries,
        tokens,
        tokens,
        &params.attn,
        &trace.attn,
        &grad_attn_out,
    )?;
    Ok(QFormerGrads {
        queries: g.query,
        tokens: g.key.add(&g.value)?,
        attn: [g.w_q, g.w_k, g.w_v, g.w_o],
        w1,
        b1,
        w2,
        b2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{finite_diff_check, flatten, unflatten_into};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token_gives_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = QFormerParams::init(32, 8, 6, 2, &mut rng).unwrap();
        let tokens = Matrix::seeded_uniform(1, 8, 1, &mut rng);
        let out = qformer_lite(&tokens, &p).unwrap();
        assert_eq!(out.shape(), (32, 6));
        let first = Matrix::row_vector(out.row(0)).unwrap();
        for r in 1..32 {
            assert!(Matrix::row_vector(out.row(r)).unwrap().max_abs_diff(&first) < 1e-12);
        }
    }

    #[test]
    fn shape_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = QFormerParams::init(32, 8, 6, 2, &mut rng).unwrap();
        for s in [1, 7, 32] {
            let t = Matrix::seeded_uniform(s, 8, 1, &mut rng);
            assert_eq!(qformer_lite(&t, &p).unwrap().shape(), (32, 6));
        }
        assert!(qformer_lite(&Matrix::zeros(3, 5), &p).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = QFormerParams::init(4, 8, 6, 2, &mut rng).unwrap();
        let tokens = Matrix::seeded_uniform(5, 8, 1, &mut rng);
        let g_out = Matrix::seeded_uniform(4, 6, 1, &mut rng);

        let trace = qformer_lite_traced(&tokens, &p).unwrap();
        let g = qformer_backward(&tokens, &p, &trace, &g_out).unwrap();
        let mut analytic = flatten(&[&g.queries]);
        analytic.extend(flatten(&g.attn.iter().collect::<Vec<_>>()));
        analytic.extend(flatten(&[&g.w1, &g.b1, &g.w2, &g.b2, &g.tokens]));

        let mut base = p.clone();
        let mut point = flatten(&base.named_tensors().iter().map(|(_, m)| *m).collect::<Vec<_>>());
        point.extend(tokens.data());
        let n_params = point.len() - tokens.data().len();
        let report = finite_diff_check(
            |x| {
                unflatten_into(&mut base.tensors_mut(), &x[..n_params]);
                let t = Matrix::new(5, 8, x[n_params..].to_vec()).unwrap();
                let out = qformer_lite(&t, &base).unwrap();
                out.hadamard(&g_out).unwrap().sum()
            },
            &point,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
