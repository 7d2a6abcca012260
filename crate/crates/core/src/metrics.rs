//! Error measures used by tests, verification suites and the sweep.

use crate::tensor::Tensor;

/// Per-row relative error: `max_j |a_tj − r_tj| / max_j |r_tj|`.
///
/// Normalizing by the reference row's magnitude keeps the measure
/// scale-free for unnormalized outputs, whose rows grow with `t`. A zero
/// reference row falls back to absolute error.
pub fn row_relative_errors(actual: &Tensor, reference: &Tensor) -> Vec<f64> {
    assert_eq!(actual.shape(), reference.shape(), "shape mismatch");
    actual
        .iter_rows()
        .zip(reference.iter_rows())
        .map(|(a, r)| {
            let diff = a
                .iter()
                .zip(r)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            let scale = r.iter().fold(0.0f64, |m, y| m.max(y.abs()));
            if scale > 0.0 {
                diff / scale
            } else {
                diff
            }
        })
        .collect()
}

pub fn max_row_relative_error(actual: &Tensor, reference: &Tensor) -> f64 {
    row_relative_errors(actual, reference)
        .into_iter()
        .fold(0.0, f64::max)
}

pub fn max_abs_error(actual: &Tensor, reference: &Tensor) -> f64 {
    assert_eq!(actual.shape(), reference.shape(), "shape mismatch");
    actual
        .data()
        .iter()
        .zip(reference.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// `max |a − r| / max |r|` over the whole tensor.
pub fn normwise_relative_error(actual: &Tensor, reference: &Tensor) -> f64 {
    let diff = max_abs_error(actual, reference);
    let scale = reference.max_abs();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// `|a − f| / max(|a|, |f|, 1e-8)`, the per-coordinate measure for gradients.
pub fn gradient_relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}
