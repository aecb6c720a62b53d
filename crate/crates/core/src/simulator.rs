//! Ideal event-camera simulator over a log-intensity panorama, plus the
//! synthetic scenes and corruptions used by the end-to-end tests.
//!
//! The simulator samples the panorama bilinearly, independent of the
//! solver's nearest-neighbour gradient lookup.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::events::Event;
use crate::exec::{self, Execution};
use crate::geometry::{exp_so3, project_equirect, CameraModel, MapSize, Rotation};
use crate::panorama::{GradientMap, IntensityMap};
use crate::trajectory::Trajectory;

/// Fraction of `C` a level change may fall short by and still fire.
const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub contrast: f64,
    /// Sampling step in seconds.
    pub dt: f64,
    pub camera: CameraModel,
    pub trajectory: Trajectory,
    /// Ground-truth log intensity.
    pub map: IntensityMap,
}

/// Renders events for every sensor pixel; output is sorted by time, then row,
/// then column.
pub fn simulate_events(cfg: &SimConfig, exec: Execution) -> Result<Vec<Event>> {
    let c = cfg.contrast;
    if !(c > 0.0) {
        return Err(Error::Config(format!("contrast threshold must be positive, got {c}")));
    }
    if !(cfg.dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {}", cfg.dt)));
    }
    let traj = &cfg.trajectory;
    let span = traj.end_time() - traj.t0();
    let n_steps = (span / cfg.dt + 1e-9).floor() as usize;
    if n_steps < 2 {
        return Err(Error::Config(format!(
            "trajectory span {span} s covers fewer than two steps of {} s",
            cfg.dt
        )));
    }
    let times: Vec<f64> = (0..=n_steps).map(|k| traj.t0() + k as f64 * cfg.dt).collect();
    let rotations = times
        .iter()
        .map(|&t| traj.interpolate(t))
        .collect::<Result<Vec<Rotation>>>()?;

    let cam = &cfg.camera;
    let size = cfg.map.size();
    let width = cam.width() as usize;
    let n_pixels = cam.n_pixels();
    let per_chunk = exec::map_ranges(n_pixels, exec::chunk_len(n_pixels, 64), exec, |s, e| {
        let mut events = Vec::new();
        for px in s..e {
            let (x, y) = (px % width, px / width);
            let b = cam.pixel_bearing(x as f64, y as f64)?;
            let level = |r: &Rotation| -> Result<f64> {
                Ok(cfg.map.sample_bilinear(&project_equirect(&r.rotate(&b), size)?))
            };
            let mut reference = level(&rotations[0])?;
            let mut prev = reference;
            for k in 1..times.len() {
                let cur = level(&rotations[k])?;
                let change = cur - prev;
                if change.abs() >= 2.0 * c {
                    return Err(Error::StepTooCoarse {
                        change: change.abs(),
                        limit: 2.0 * c,
                    });
                }
                let fire = c * (1.0 - THRESHOLD_SLACK);
                loop {
                    let polarity: i8 = if cur - reference >= fire {
                        1
                    } else if reference - cur >= fire {
                        -1
                    } else {
                        break;
                    };
                    reference += f64::from(polarity) * c;
                    let frac = ((reference - prev) / change).clamp(0.0, 1.0);
                    let t = times[k - 1] + frac * (times[k] - times[k - 1]);
                    events.push(Event::new(t, x as u16, y as u16, polarity));
                }
                prev = cur;
            }
        }
        Ok(events)
    });
    let mut events = Vec::new();
    for chunk in per_chunk {
        events.extend(chunk?);
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.y.cmp(&b.y)).then(a.x.cmp(&b.x)));
    Ok(events)
}

/// Forward-difference gradients of a log-intensity panorama.
pub fn true_gradient_map(map: &IntensityMap) -> GradientMap {
    map.forward_gradient()
}

/// Smooth random log-intensity panorama: a few long-wavelength sinusoids
/// with integer azimuth frequencies, so the image is seamless in `u`.
///
/// The amplitude is large compared with typical contrast thresholds, which
/// keeps per-event displacements short and the linearized model accurate.
pub fn procedural_panorama(size: MapSize, seed: u64) -> IntensityMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[f64; 4]> = (0..PANORAMA_WAVES)
        .map(|_| {
            let ku = rng.random_range(1..=PANORAMA_MAX_FREQUENCY) as f64;
            let ku = if rng.random_bool(0.5) { ku } else { -ku };
            let kv = rng.random_range(0.3..PANORAMA_MAX_FREQUENCY as f64 / 2.0);
            let amplitude = PANORAMA_AMPLITUDE * rng.random_range(0.5..1.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            [ku, kv, amplitude, phase]
        })
        .collect();
    let (w, h) = (size.width as f64, size.height as f64);
    IntensityMap::from_fn(size, |col, row| {
        let u = 2.0 * PI * col as f64 / w;
        let v = PI * row as f64 / h;
        waves
            .iter()
            .map(|[ku, kv, a, ph]| a * (ku * u + kv * v + ph).sin())
            .sum()
    })
}

const PANORAMA_WAVES: usize = 6;
const PANORAMA_MAX_FREQUENCY: i64 = 3;
const PANORAMA_AMPLITUDE: f64 = 4.0;

/// Smooth rotation profile used to build synthetic sequences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PanningMotion {
    /// Constant yaw rate in rad/s.
    pub yaw_rate: f64,
    /// Amplitudes of the sinusoidal yaw, pitch and roll wobble in rad.
    pub wobble: [f64; 3],
    /// Wobble frequencies in Hz.
    pub frequency: [f64; 3],
}

impl Default for PanningMotion {
    fn default() -> Self {
        PanningMotion {
            yaw_rate: 0.3,
            wobble: [0.05, 0.08, 0.05],
            frequency: [0.7, 0.9, 1.3],
        }
    }
}

impl PanningMotion {
    pub fn rotation_at(&self, t: f64) -> Rotation {
        let s = |i: usize| self.wobble[i] * (2.0 * PI * self.frequency[i] * t).sin();
        let yaw = exp_so3(&Vector3::new(0.0, self.yaw_rate * t + s(0), 0.0));
        let pitch = exp_so3(&Vector3::new(s(1), 0.0, 0.0));
        let roll = exp_so3(&Vector3::new(0.0, 0.0, s(2)));
        yaw * pitch * roll
    }

    /// Samples the motion at `sample_rate` over `[0, duration]`.
    pub fn trajectory(&self, duration: f64, sample_rate: f64) -> Result<Trajectory> {
        let n = (duration * sample_rate + 1e-6).floor() as usize + 1;
        Trajectory::from_fn(0.0, sample_rate, n, |t| self.rotation_at(t))
    }
}

/// Left-perturbs every control pose except the first by an isotropic
/// Gaussian rotation with the given RMS angle.
pub fn perturb_trajectory(traj: &Trajectory, rms_deg: f64, seed: u64) -> Result<Trajectory> {
    let sigma = rms_deg.to_radians() / 3f64.sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poses = traj
        .poses()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if i == 0 {
                *r
            } else {
                let n = Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
                exp_so3(&n) * *r
            }
        })
        .collect();
    Trajectory::new(traj.t0(), traj.rate(), poses)
}

/// Adds `fraction * len` spurious events at uniformly random pixels, times
/// and polarities, keeping the stream time-sorted.
pub fn inject_outliers(events: &[Event], cam: &CameraModel, fraction: f64, seed: u64) -> Vec<Event> {
    let mut out = events.to_vec();
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return out;
    };
    let n = (fraction * events.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let t = rng.random_range(first.t..=last.t);
        let x = rng.random_range(0..cam.width()) as u16;
        let y = rng.random_range(0..cam.height()) as u16;
        let p = if rng.random_bool(0.5) { 1 } else { -1 };
        out.push(Event::new(t, x, y, p));
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.y.cmp(&b.y)).then(a.x.cmp(&b.x)));
    out
}
