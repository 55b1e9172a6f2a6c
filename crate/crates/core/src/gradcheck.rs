//! Finite-difference utilities for checking analytic gradients.

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_differences<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    (0..point.len()).map(|i| central_difference_at(&f, point, i, step)).collect()
}

/// Central difference along a single coordinate.
pub fn central_difference_at<F>(f: F, point: &[f64], index: usize, step: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    x[index] = point[index] + step;
    let plus = f(&x);
    x[index] = point[index] - step;
    let minus = f(&x);
    (plus - minus) / (2.0 * step)
}

/// `|a - b| / max(|a|, |b|)`, with gradients both below `floor` treated as agreeing.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)` of two gradient vectors.
pub fn vector_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < ZERO_FLOOR {
        0.0
    } else {
        diff / scale
    }
}

/// Default magnitude below which both gradients count as zero.
pub const ZERO_FLOOR: f64 = 1e-9;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |v: &[f64]| v[0] * v[0] + 2.0 * v[0] * v[1] + v[1] * v[1];
        let g = central_differences(f, &[1.0, 2.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8 && (g[1] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-12, -1e-12, 1e-9), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-9) - 0.1 / 1.1).abs() < 1e-12);
    }
}
