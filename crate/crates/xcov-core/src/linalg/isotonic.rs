//! Least-squares monotone regression via pool-adjacent-violators.

use super::LinalgError;

/// Non-decreasing least-squares fit of `y` over strictly increasing
/// abscissae `x`. Returns the fitted value at each input position; pooled
/// blocks carry their mean, so block means are preserved.
pub fn pava_isotonic(x: &[f64], y: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if x.len() != y.len() {
        return Err(LinalgError::LengthMismatch { left: x.len(), right: y.len() });
    }
    for i in 1..x.len() {
        if x[i] <= x[i - 1] {
            return Err(LinalgError::NotStrictlyIncreasing { index: i });
        }
    }
    let n = y.len();
    if n == 0 {
        return Ok(Vec::new());
    }

    // Blocks carry (mean, weight); merging adjacent violators keeps the
    // weighted mean, which is exactly the least-squares pooled level.
    let mut means: Vec<f64> = Vec::with_capacity(n);
    let mut weights: Vec<usize> = Vec::with_capacity(n);
    for &yi in y {
        means.push(yi);
        weights.push(1);
        while means.len() > 1 {
            let k = means.len();
            if means[k - 2] <= means[k - 1] {
                break;
            }
            let w = weights[k - 2] + weights[k - 1];
            let merged =
                (means[k - 2] * weights[k - 2] as f64 + means[k - 1] * weights[k - 1] as f64)
                    / w as f64;
            means.truncate(k - 1);
            weights.truncate(k - 1);
            means[k - 2] = merged;
            weights[k - 2] = w;
        }
    }

    let mut out = Vec::with_capacity(n);
    for (m, w) in means.iter().zip(&weights) {
        out.extend(std::iter::repeat(*m).take(*w));
    }
    Ok(out)
}
