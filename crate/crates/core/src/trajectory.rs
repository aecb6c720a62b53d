//! Continuous-time rotation trajectory over fixed-rate control poses.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, left_jacobian, left_jacobian_inv, log_so3, Rotation};

/// Slack when testing whether a timestamp lies inside the span.
const SPAN_SLACK: f64 = 1e-9;
const KNOT_SNAP: f64 = 1e-9;

/// A timestamped orientation, as read from a trajectory file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampedRotation {
    pub t: f64,
    pub rotation: Rotation,
}

/// Segment index and fraction locating a time between two control poses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseWeights {
    /// Zero-based index of the control pose at or before `t`.
    pub index: usize,
    pub tau: f64,
}

/// First-order effect of control-pose perturbations on the pose at time `t`:
/// `dphi(t) = blocks[0] * dphi_index + blocks[1] * dphi_(index+1)`.
#[derive(Clone, Copy, Debug)]
pub struct PosePerturbation {
    pub index: usize,
    /// Scalar interpolation weights `(1 - tau, tau)`.
    pub weights: [f64; 2],
    pub blocks: [Matrix3<f64>; 2],
}

/// Control poses `R_0 .. R_{n-1}` at `t_i = t0 + i / rate`, interpolated along
/// the SO(3) geodesic between neighbours.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    t0: f64,
    rate: f64,
    poses: Vec<Rotation>,
    /// `log(R_i^T R_{i+1})` for every segment.
    segments: Vec<Vector3<f64>>,
}

impl Trajectory {
    pub fn new(t0: f64, rate: f64, poses: Vec<Rotation>) -> Result<Self> {
        if !(t0.is_finite() && rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidTrajectory(format!(
                "start time {t0} and rate {rate} must be finite with a positive rate"
            )));
        }
        if poses.len() < 2 {
            return Err(Error::InvalidTrajectory(format!(
                "need at least two control poses, got {}",
                poses.len()
            )));
        }
        if let Some(i) = poses
            .iter()
            .position(|r| !(r.orthonormality_error() < 1e-9))
        {
            return Err(Error::InvalidTrajectory(format!(
                "control pose {i} is not a rotation"
            )));
        }
        let segments = poses
            .windows(2)
            .map(|w| {
                if w[0] == w[1] {
                    Vector3::zeros()
                } else {
                    log_so3(&(w[0].inverse() * w[1]))
                }
            })
            .collect();
        Ok(Trajectory {
            t0,
            rate,
            poses,
            segments,
        })
    }

    /// Samples `f` at `n` control-pose timestamps.
    pub fn from_fn(t0: f64, rate: f64, n: usize, f: impl Fn(f64) -> Rotation) -> Result<Self> {
        let poses = (0..n).map(|i| f(t0 + i as f64 / rate)).collect();
        Self::new(t0, rate, poses)
    }

    /// Resamples timestamped orientations onto a uniform grid at `rate`,
    /// starting at the first sample. The grid ends at or before the last sample.
    pub fn resample(samples: &[StampedRotation], rate: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidTrajectory(
                "need at least two timestamped orientations".into(),
            ));
        }
        if let Some(i) = samples.windows(2).position(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidTrajectory(format!(
                "timestamps must increase strictly (sample {})",
                i + 1
            )));
        }
        let t0 = samples[0].t;
        let span = samples[samples.len() - 1].t - t0;
        let n = (span * rate + 1e-6).floor() as usize + 1;
        let mut poses = Vec::with_capacity(n);
        let mut j = 0;
        for i in 0..n {
            let t = t0 + i as f64 / rate;
            while j + 2 < samples.len() && samples[j + 1].t <= t + SPAN_SLACK {
                j += 1;
            }
            let (a, b) = (&samples[j], &samples[j + 1]);
            let tau = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
            let pose = if (t - a.t).abs() <= SPAN_SLACK {
                a.rotation
            } else if (t - b.t).abs() <= SPAN_SLACK {
                b.rotation
            } else {
                let xi = log_so3(&(a.rotation.inverse() * b.rotation));
                a.rotation * exp_so3(&(xi * tau))
            };
            poses.push(pose);
        }
        Self::new(t0, rate, poses)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn poses(&self) -> &[Rotation] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn time_of(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.rate
    }

    pub fn end_time(&self) -> f64 {
        self.time_of(self.poses.len() - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.poses.len()).map(|i| self.time_of(i)).collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 - SPAN_SLACK && t <= self.end_time() + SPAN_SLACK
    }

    pub fn interp_weights(&self, t: f64) -> Result<PoseWeights> {
        if !self.contains(t) || !t.is_finite() {
            return Err(Error::OutOfSpan {
                t,
                start: self.t0,
                end: self.end_time(),
            });
        }
        let mut s = ((t - self.t0) * self.rate).max(0.0);
        // Knot times computed as t0 + i / rate land on the knot exactly.
        if (s - s.round()).abs() < KNOT_SNAP {
            s = s.round();
        }
        let last = self.poses.len() - 2;
        let index = (s.floor() as usize).min(last);
        let tau = (s - index as f64).clamp(0.0, 1.0);
        Ok(PoseWeights { index, tau })
    }

    /// `R(t) = R_i exp(tau log(R_i^T R_{i+1}))`.
    pub fn interpolate(&self, t: f64) -> Result<Rotation> {
        let w = self.interp_weights(t)?;
        Ok(self.at_weights(w))
    }

    pub fn at_weights(&self, w: PoseWeights) -> Rotation {
        if w.tau == 0.0 {
            self.poses[w.index]
        } else if w.tau == 1.0 {
            self.poses[w.index + 1]
        } else {
            self.poses[w.index] * exp_so3(&(self.segments[w.index] * w.tau))
        }
    }

    /// Linearizes the interpolated pose with respect to left perturbations
    /// `R_i -> exp(dphi_i^) R_i` of the two bracketing control poses.
    ///
    /// Writing `Q = R_{i+1} R_i^T = exp(psi^)`, so that `R(t) = exp(tau psi^) R_i`:
    /// `dphi(t) = (exp(tau psi^) - D Q) dphi_i + D dphi_{i+1}` with
    /// `D = tau J_l(tau psi) J_l(psi)^-1`. The two blocks always sum to the
    /// identity and reduce to `((1 - tau) I, tau I)` when the poses coincide.
    pub fn pose_perturbation_jacobian(&self, t: f64) -> Result<PosePerturbation> {
        let w = self.interp_weights(t)?;
        Ok(self.perturbation_at(w))
    }

    pub fn perturbation_at(&self, w: PoseWeights) -> PosePerturbation {
        let PoseWeights { index, tau } = w;
        let weights = [1.0 - tau, tau];
        if tau == 0.0 {
            return PosePerturbation {
                index,
                weights,
                blocks: [Matrix3::identity(), Matrix3::zeros()],
            };
        }
        let ri = self.poses[index].matrix();
        let psi = ri * self.segments[index];
        let q = self.poses[index + 1].matrix() * ri.transpose();
        let partial = exp_so3(&(psi * tau));
        let d = left_jacobian(&(psi * tau)) * left_jacobian_inv(&psi) * tau;
        PosePerturbation {
            index,
            weights,
            blocks: [partial.matrix() - d * q, d],
        }
    }

    /// Left-multiplies every control pose by `exp` of its 3-vector slice of `delta`.
    pub fn apply_update(&self, delta: &[f64]) -> Result<Trajectory> {
        let expected = 3 * self.poses.len();
        if delta.len() != expected {
            return Err(Error::UpdateLength {
                got: delta.len(),
                expected,
            });
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteUpdate);
        }
        let poses = self
            .poses
            .iter()
            .zip(delta.chunks_exact(3))
            .map(|(r, d)| {
                if d.iter().all(|&v| v == 0.0) {
                    *r
                } else {
                    exp_so3(&Vector3::new(d[0], d[1], d[2])) * *r
                }
            })
            .collect();
        Trajectory::new(self.t0, self.rate, poses)
    }

    /// Left-multiplies every control pose by `r`.
    pub fn left_multiplied(&self, r: &Rotation) -> Trajectory {
        let poses = self.poses.iter().map(|p| *r * *p).collect();
        Trajectory::new(self.t0, self.rate, poses).expect("rotation composition stays valid")
    }
}
