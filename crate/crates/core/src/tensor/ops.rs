use super::{Matrix, TensorError};

/// Direction along which a softmax normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Each row sums to one.
    Row,
    /// Each column sums to one.
    Col,
}

/// Max-subtracted softmax along `axis`.
pub fn softmax(x: &Matrix, axis: Axis) -> Matrix {
    match axis {
        Axis::Row => {
            let mut out = x.clone();
            for r in 0..out.rows() {
                softmax_in_place(out.row_mut(r));
            }
            out
        }
        Axis::Col => softmax(&x.transpose(), Axis::Row).transpose(),
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Gradient of a softmax with respect to its logits, given the softmax
/// output `y` and upstream gradient `grad_y`.
pub fn softmax_backward(y: &Matrix, grad_y: &Matrix, axis: Axis) -> Result<Matrix, TensorError> {
    if y.shape() != grad_y.shape() {
        return Err(TensorError::mismatch("softmax_backward", y, grad_y));
    }
    match axis {
        Axis::Row => {
            let mut out = Matrix::zeros(y.rows(), y.cols());
            for r in 0..y.rows() {
                let (yr, gr) = (y.row(r), grad_y.row(r));
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for (o, (a, g)) in out.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                    *o = a * (g - dot);
                }
            }
            Ok(out)
        }
        Axis::Col => {
            Ok(softmax_backward(&y.transpose(), &grad_y.transpose(), Axis::Row)?.transpose())
        }
    }
}

/// Gradients of `a · b` with respect to `a` and `b`.
pub fn matmul_backward(
    a: &Matrix,
    b: &Matrix,
    grad_out: &Matrix,
) -> Result<(Matrix, Matrix), TensorError> {
    if grad_out.shape() != (a.rows(), b.cols()) {
        return Err(TensorError::mismatch("matmul_backward", a, grad_out));
    }
    let grad_a = grad_out.matmul(&b.transpose())?;
    let grad_b = a.transpose().matmul(grad_out)?;
    Ok((grad_a, grad_b))
}

/// Affine map `x · w + b` where `b` is a `1 x out` row.
pub fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix, TensorError> {
    x.matmul(w)?.add_row_broadcast(b)
}

/// Row-wise layer normalization without learned affine parameters.
pub fn layer_norm_rows(x: &Matrix, eps: f64) -> Matrix {
    let mut out = x.clone();
    let n = x.cols() as f64;
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
