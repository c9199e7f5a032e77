use super::{check_len, MetricsError};

/// Average and final Euclidean displacement between two trajectories whose
/// points share a dimension (2D or 3D).
pub fn ade_fde(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> Result<(f64, f64), MetricsError> {
    check_len(pred.len(), gt.len())?;
    if gt.is_empty() {
        return Err(MetricsError::Empty("trajectory"));
    }
    let mut dists = Vec::with_capacity(gt.len());
    for (p, g) in pred.iter().zip(gt) {
        check_len(p.len(), g.len())?;
        if p.iter().chain(g).any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite("trajectory"));
        }
        dists.push(p.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
    }
    let ade = dists.iter().sum::<f64>() / dists.len() as f64;
    Ok((ade, *dists.last().expect("non-empty")))
}
