use super::QaError;

pub const FPS_THRESHOLD: f64 = 1.5;
pub const FPS_CAP: usize = 200;

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Greedy farthest-point sampling. Starts at the point nearest the centroid,
/// then repeatedly adds the point farthest from everything chosen so far,
/// until that distance drops below `threshold` or `cap` points are chosen.
/// Returns indices in selection order; ties go to the lower index.
pub fn fps_sample(points: &[[f64; 3]], threshold: f64, cap: usize) -> Result<Vec<usize>, QaError> {
    if points.is_empty() {
        return Err(QaError::EmptyInput("point set"));
    }
    if !(threshold > 0.0) || cap == 0 {
        return Err(QaError::InvalidArgument(format!(
            "fps needs a positive threshold and cap, got {threshold} and {cap}"
        )));
    }
    let n = points.len() as f64;
    let mut centroid = [0.0; 3];
    for p in points {
        for k in 0..3 {
            centroid[k] += p[k] / n;
        }
    }
    let mut seed = 0;
    for (i, p) in points.iter().enumerate() {
        if dist(p, &centroid) < dist(&points[seed], &centroid) {
            seed = i;
        }
    }
    let mut chosen = vec![seed];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist(p, &points[seed])).collect();
    while chosen.len() < cap {
        let (best, &far) = nearest
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (i, d)| if *d > *acc.1 { (i, d) } else { acc });
        if far < threshold {
            break;
        }
        chosen.push(best);
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(dist(p, &points[best]));
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_and_close_pair() {
        assert_eq!(fps_sample(&[[1.0, 2.0, 3.0]], 1.5, 200).unwrap(), vec![0]);
        let two = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(fps_sample(&two, 1.5, 200).unwrap().len(), 1);
    }

    #[test]
    fn cap_and_errors() {
        let line: Vec<[f64; 3]> = (0..50).map(|i| [i as f64 * 2.0, 0.0, 0.0]).collect();
        assert_eq!(fps_sample(&line, 1.5, 7).unwrap().len(), 7);
        assert_eq!(fps_sample(&line, 1.5, 200).unwrap().len(), 50);
        assert!(fps_sample(&[], 1.5, 10).is_err());
        assert!(fps_sample(&line, 0.0, 10).is_err());
    }

    #[test]
    fn seed_is_nearest_to_centroid() {
        let pts = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [4.0, 0.0, 0.0]];
        assert_eq!(fps_sample(&pts, 1.5, 200).unwrap(), vec![2, 1, 0]);
    }
}
