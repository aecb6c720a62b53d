//! Analytical linearization of the residual terms.
//!
//! With left perturbations `R -> exp(dphi^) R` a map point moves by
//! `-E dphi`, so to first order
//!
//! ```text
//! e ~= e_op + dp^T dG
//!          - dp^T (dG/dp) E(t) dphi(t)
//!          - G . (E(t) dphi(t) - E(t') dphi(t'))
//! ```
//!
//! where `t' = t - dt`. Each event-time perturbation is then distributed
//! onto its two bracketing control poses.

use nalgebra::{Matrix2, RowVector2, RowVector3, Vector2};
use smallvec::SmallVec;

use crate::error::Result;
use crate::events::ResidualTerm;
use crate::geometry::{e_matrix, MapPoint, MapSize};
use crate::panorama::GradientMap;
use crate::trajectory::Trajectory;

/// Source of map gradients and their spatial derivatives at a map point.
pub trait GradientField {
    fn size(&self) -> MapSize;
    fn gradient(&self, p: &MapPoint) -> Vector2<f64>;
    /// Rows `(d gx/du, d gx/dv)` and `(d gy/du, d gy/dv)`.
    fn gradient_jacobian(&self, p: &MapPoint) -> Matrix2<f64>;
}

impl GradientField for GradientMap {
    fn size(&self) -> MapSize {
        GradientMap::size(self)
    }

    fn gradient(&self, p: &MapPoint) -> Vector2<f64> {
        self.sample_nn(p)
    }

    fn gradient_jacobian(&self, p: &MapPoint) -> Matrix2<f64> {
        self.hessian_nn(p)
    }
}

/// One row of the Jacobian, stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct TermJacobianRow {
    /// `(control pose, d e / d dphi_pose)`; indices distinct and ascending.
    pub poses: SmallVec<[(u32, RowVector3<f64>); 4]>,
    /// Valid-pixel index.
    pub pixel: u32,
    /// `d e / d beta_pixel`.
    pub map: RowVector2<f64>,
    pub residual: f64,
}

impl TermJacobianRow {
    fn add_pose(&mut self, pose: usize, block: RowVector3<f64>) {
        if block == RowVector3::zeros() {
            return;
        }
        let pose = pose as u32;
        match self.poses.binary_search_by_key(&pose, |(p, _)| *p) {
            Ok(i) => self.poses[i].1 += block,
            Err(i) => self.poses.insert(i, (pose, block)),
        }
    }

    /// Scales the row and its residual by `s`.
    pub fn scale(&mut self, s: f64) {
        for (_, b) in self.poses.iter_mut() {
            *b *= s;
        }
        self.map *= s;
        self.residual *= s;
    }

    pub fn is_finite(&self) -> bool {
        self.residual.is_finite()
            && self.map.iter().all(|v| v.is_finite())
            && self.poses.iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }
}

/// Linearizes `term` at the operating point `(traj, field)`.
///
/// Fails with [`crate::Error::NearPole`] when either bearing is too close to
/// a pole for the projection Jacobian to exist.
pub fn linearize_term<F: GradientField + ?Sized>(
    term: &ResidualTerm,
    field: &F,
    traj: &Trajectory,
) -> Result<TermJacobianRow> {
    let size = field.size();
    let e_now = e_matrix(&term.bearing, size)?;
    let e_prev = e_matrix(&term.bearing_prev, size)?;
    let g = field.gradient(&term.point);
    let dg = field.gradient_jacobian(&term.point);
    let dp = term.displacement;

    let row_now: RowVector3<f64> = -(dp.transpose() * dg * e_now) - g.transpose() * e_now;
    let row_prev: RowVector3<f64> = g.transpose() * e_prev;

    let mut row = TermJacobianRow {
        poses: SmallVec::new(),
        pixel: term.pixel,
        map: dp.transpose(),
        residual: g.dot(&dp) - term.measured,
    };
    let now = traj.perturbation_at(term.weights);
    let prev = traj.perturbation_at(term.weights_prev);
    for (pp, r) in [(now, row_now), (prev, row_prev)] {
        row.add_pose(pp.index, r * pp.blocks[0]);
        row.add_pose(pp.index + 1, r * pp.blocks[1]);
    }
    Ok(row)
}
