//! Huber loss applied by iteratively reweighted least squares.

use crate::solver::linearize::TermJacobianRow;

pub const DEFAULT_HUBER_DELTA: f64 = 0.1;

/// IRLS weight: 1 inside the quadratic zone, `delta / |e|` outside.
pub fn huber_weight(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a < delta {
        1.0
    } else {
        delta / a
    }
}

/// Huber loss scaled to match `e^2` in the quadratic zone.
pub fn huber_loss(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a < delta {
        e * e
    } else {
        (2.0 * a - delta) * delta
    }
}

/// Scales a row by the square root of its IRLS weight.
pub fn reweight(row: &mut TermJacobianRow, delta: f64) {
    let w = huber_weight(row.residual, delta);
    if w != 1.0 {
        row.scale(w.sqrt());
    }
}
