use serde::{Deserialize, Serialize};

use super::{check_len, hungarian, MetricsError};

/// A localized answer: box center in meters plus its category label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxAnswer {
    pub center: [f64; 3],
    pub category: String,
}

impl BoxAnswer {
    pub fn new(center: [f64; 3], category: &str) -> Self {
        Self {
            center,
            category: normalize_category(category),
        }
    }

    fn distance(&self, other: &BoxAnswer) -> f64 {
        self.center
            .iter()
            .zip(other.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Strictly closer than `k` meters and the same normalized category.
    pub fn hits(&self, gt: &BoxAnswer, k: f64) -> bool {
        self.distance(gt) < k && normalize_category(&self.category) == normalize_category(&gt.category)
    }
}

/// Lowercases and collapses runs of whitespace.
pub fn normalize_category(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_finite(items: &[BoxAnswer], what: &'static str) -> Result<(), MetricsError> {
    if items.iter().any(|b| b.center.iter().any(|v| !v.is_finite())) {
        return Err(MetricsError::NonFinite(what));
    }
    Ok(())
}

/// Percentage of aligned pairs whose prediction hits its ground truth.
pub fn pr_at_k(preds: &[BoxAnswer], gts: &[BoxAnswer], k: f64) -> Result<f64, MetricsError> {
    check_len(preds.len(), gts.len())?;
    if gts.is_empty() {
        return Err(MetricsError::Empty("box answers"));
    }
    check_finite(preds, "predicted centers")?;
    check_finite(gts, "ground-truth centers")?;
    let hits = preds.iter().zip(gts).filter(|(p, g)| p.hits(g, k)).count();
    Ok(100.0 * hits as f64 / gts.len() as f64)
}

/// Like [`pr_at_k`] for unordered sets: predictions are first matched to
/// ground truths by minimum total center distance. Unmatched ground truths
/// are misses; an empty ground-truth set scores 0.
pub fn pr_star_at_k(preds: &[BoxAnswer], gts: &[BoxAnswer], k: f64) -> Result<f64, MetricsError> {
    check_finite(preds, "predicted centers")?;
    check_finite(gts, "ground-truth centers")?;
    if preds.is_empty() || gts.is_empty() {
        return Ok(0.0);
    }
    let cost: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| gts.iter().map(|g| p.distance(g)).collect())
        .collect();
    let matching = hungarian(&cost)?;
    let hits = matching
        .pairs()
        .filter(|&(p, g)| preds[p].hits(&gts[g], k))
        .count();
    Ok(100.0 * hits as f64 / gts.len() as f64)
}
