//! Rotation and photometric error metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{build_terms, residual, EventStream};
use crate::exec::{self, Execution};
use crate::panorama::{GradientMap, ValidMask};
use crate::trajectory::Trajectory;

/// RMS over `times` of the angle between `estimate` and `reference`, in degrees.
pub fn are_rmse(estimate: &Trajectory, reference: &Trajectory, times: &[f64]) -> Result<f64> {
    if times.is_empty() {
        return Err(Error::Dimension("no evaluation timestamps".into()));
    }
    let mut sum = 0.0;
    for &t in times {
        let a = estimate.interpolate(t)?;
        let b = reference.interpolate(t)?;
        sum += a.angle_to(&b).powi(2);
    }
    Ok((sum / times.len() as f64).sqrt().to_degrees())
}

/// [`are_rmse`] evaluated at the estimate's control-pose times.
pub fn are_rmse_at_knots(estimate: &Trajectory, reference: &Trajectory) -> Result<f64> {
    are_rmse(estimate, reference, &estimate.times())
}

/// Left-multiplies `traj` so that it agrees with `reference` at `t0`.
pub fn align_at(traj: &Trajectory, reference: &Trajectory, t0: f64) -> Result<Trajectory> {
    let est = traj.interpolate(t0)?;
    let rf = reference.interpolate(t0)?;
    Ok(traj.left_multiplied(&(rf * est.inverse())))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotometricError {
    /// Sum of squared residuals over surviving terms.
    pub phe: f64,
    pub n_terms: usize,
    pub n_dropped: usize,
}

/// Unweighted, unregularized sum of squared residuals.
pub fn photometric_error(
    stream: &EventStream,
    traj: &Trajectory,
    map: &GradientMap,
    mask: &ValidMask,
    contrast: f64,
    exec: Execution,
) -> Result<PhotometricError> {
    let terms = build_terms(stream, traj, mask, contrast, exec)?;
    let phe = exec::sum_chunks(&terms.terms, exec, |t| residual(t, map).powi(2));
    Ok(PhotometricError {
        phe,
        n_terms: terms.terms.len(),
        n_dropped: terms.stats.dropped.total(),
    })
}

/// Evaluation summary written by the command-line tool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub are_deg_rmse: Option<f64>,
    pub phe: Option<f64>,
    pub n_terms: usize,
    pub n_dropped: usize,
}

impl Metrics {
    pub fn with_photometric(mut self, p: &PhotometricError) -> Self {
        self.phe = Some(p.phe);
        self.n_terms = p.n_terms;
        self.n_dropped = p.n_dropped;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.9e}"));
        let mut s = String::new();
        let _ = writeln!(s, "are_deg_rmse {}", opt(self.are_deg_rmse));
        let _ = writeln!(s, "phe {}", opt(self.phe));
        let _ = writeln!(s, "n_terms {}", self.n_terms);
        let _ = writeln!(s, "n_dropped {}", self.n_dropped);
        s
    }
}
