//! Joint refinement of control poses and the gradient map.

pub mod linearize;
pub mod linsolve;
pub mod normal;
pub mod robust;

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{build_terms, count_warped_events, residual, DropCounts, EventStream, TermSet};
use crate::exec::{self, Execution};
use crate::geometry::MapSize;
use crate::panorama::{GradientMap, ValidMask, DEFAULT_VALID_THRESHOLD};
use crate::trajectory::Trajectory;

pub use linearize::{linearize_term, GradientField, TermJacobianRow};
pub use linsolve::{cg_solve, dense_solve, schur_solve, solve, SolverBackend, Step};
pub use normal::{accumulate, NormalEquations};
pub use robust::{huber_loss, huber_weight, reweight, DEFAULT_HUBER_DELTA};

/// Consecutive rejections at high damping after which the loop gives up.
const STALL_REJECTIONS: usize = 5;
const STALL_LAMBDA: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub contrast: f64,
    pub eta: f64,
    /// Control-pose rate in Hz.
    pub pose_rate: f64,
    pub map_size: MapSize,
    pub valid_threshold: u32,
    pub huber: bool,
    pub huber_delta: f64,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_iterations: usize,
    /// Relative loss decrease below which an accepted step ends the loop.
    pub tolerance: f64,
    pub backend: SolverBackend,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            contrast: crate::events::DEFAULT_CONTRAST,
            eta: 5.0,
            pose_rate: 20.0,
            map_size: MapSize::new(1024, 512),
            valid_threshold: DEFAULT_VALID_THRESHOLD,
            huber: false,
            huber_delta: DEFAULT_HUBER_DELTA,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            max_iterations: 50,
            tolerance: 1e-6,
            backend: SolverBackend::Schur,
            execution: Execution::Parallel,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.into())) };
        check(self.contrast > 0.0, "contrast must be positive")?;
        check(self.eta >= 0.0, "eta must be non-negative")?;
        check(self.pose_rate > 0.0, "pose rate must be positive")?;
        check(self.map_size.width >= 2 && self.map_size.height >= 2, "map must be at least 2x2")?;
        check(self.huber_delta > 0.0, "huber delta must be positive")?;
        check(self.lambda_init > 0.0, "initial damping must be positive")?;
        check(self.lambda_up > 1.0, "damping increase factor must exceed 1")?;
        check(self.lambda_down > 1.0, "damping decrease factor must exceed 1")?;
        check(self.tolerance >= 0.0, "tolerance must be non-negative")?;
        Ok(())
    }

    fn data_loss(&self, e: f64) -> f64 {
        if self.huber {
            huber_loss(e, self.huber_delta)
        } else {
            e * e
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda: f64,
    /// Regularized loss at the operating point.
    pub loss: f64,
    /// Regularized loss at the candidate, absent when the step failed.
    pub candidate_loss: Option<f64>,
    pub pose_step_norm: f64,
    pub map_step_norm: f64,
    pub accepted: bool,
    pub n_terms: usize,
    pub cg_iterations: usize,
    /// Reason the step could not be evaluated, if any.
    pub failure: Option<String>,
}

/// Wall time of the three main steps of one iteration, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTiming {
    pub evaluate: f64,
    pub form: f64,
    pub solve: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub config: SolverConfig,
    pub n_events: usize,
    pub n_pairable: usize,
    pub n_valid_pixels: usize,
    pub initial_loss: f64,
    pub initial_phe: f64,
    /// PhE after fitting the map alone at the initial trajectory.
    pub initial_fitted_phe: f64,
    pub final_loss: f64,
    pub final_phe: f64,
    pub final_n_terms: usize,
    pub final_dropped: DropCounts,
    /// Terms skipped during linearization for lack of a projection Jacobian.
    pub linearization_skips: usize,
    pub termination: Termination,
    pub iterations: Vec<IterationRecord>,
    /// Kept out of the serialized report so reports are reproducible.
    #[serde(skip)]
    pub timings: Vec<IterationTiming>,
}

impl OptimizationReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "events {}", self.n_events);
        let _ = writeln!(s, "pairable {}", self.n_pairable);
        let _ = writeln!(s, "valid_pixels {}", self.n_valid_pixels);
        let _ = writeln!(s, "initial_loss {:.12e}", self.initial_loss);
        let _ = writeln!(s, "initial_phe {:.12e}", self.initial_phe);
        let _ = writeln!(s, "initial_fitted_phe {:.12e}", self.initial_fitted_phe);
        let _ = writeln!(s, "final_loss {:.12e}", self.final_loss);
        let _ = writeln!(s, "final_phe {:.12e}", self.final_phe);
        let _ = writeln!(s, "final_terms {}", self.final_n_terms);
        let _ = writeln!(
            s,
            "dropped out_of_span={} near_pole={} invalid_pixel={}",
            self.final_dropped.out_of_span,
            self.final_dropped.near_pole,
            self.final_dropped.invalid_pixel
        );
        let _ = writeln!(s, "termination {:?}", self.termination);
        let _ = writeln!(s, "# iter lambda loss candidate pose_step map_step accepted terms cg");
        for r in &self.iterations {
            let cand = r
                .candidate_loss
                .map_or_else(|| "-".to_string(), |c| format!("{c:.12e}"));
            let _ = writeln!(
                s,
                "{} {:.3e} {:.12e} {} {:.6e} {:.6e} {} {} {}",
                r.iteration,
                r.lambda,
                r.loss,
                cand,
                r.pose_step_norm,
                r.map_step_norm,
                r.accepted,
                r.n_terms,
                r.cg_iterations
            );
        }
        s
    }

    /// Timing breakdown as JSON, with totals per step.
    pub fn timing_json(&self) -> String {
        let total = self.timings.iter().fold(IterationTiming::default(), |a, t| IterationTiming {
            evaluate: a.evaluate + t.evaluate,
            form: a.form + t.form,
            solve: a.solve + t.solve,
        });
        serde_json::to_string_pretty(&serde_json::json!({
            "total": total,
            "iterations": self.timings,
        }))
        .expect("timing serializes")
    }

    pub fn timing_text(&self) -> String {
        let mut s = String::from("# iter evaluate_s form_s solve_s\n");
        for (i, t) in self.timings.iter().enumerate() {
            let _ = writeln!(s, "{} {:.6} {:.6} {:.6}", i + 1, t.evaluate, t.form, t.solve);
        }
        s
    }
}

/// Result of [`optimize`].
#[derive(Clone, Debug)]
pub struct Optimization {
    pub trajectory: Trajectory,
    pub map: GradientMap,
    pub mask: ValidMask,
    pub report: OptimizationReport,
}

/// Objective value and terms at one operating point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub terms: TermSet,
    pub residuals: Vec<f64>,
    /// Sum of per-term losses (squared or Huber).
    pub data_loss: f64,
    /// Loss of terms whose nearest pixel is invalid, where the gradient is zero.
    pub invalid_loss: f64,
    /// `eta * |beta|^2`.
    pub regularization: f64,
    /// Unweighted sum of squared residuals.
    pub phe: f64,
}

impl Evaluation {
    pub fn loss(&self) -> f64 {
        self.data_loss + self.invalid_loss + self.regularization
    }
}

/// Builds the valid mask from events warped with `traj`.
pub fn build_mask(
    stream: &EventStream,
    traj: &Trajectory,
    config: &SolverConfig,
) -> Result<ValidMask> {
    let counts = count_warped_events(stream, traj, config.map_size, config.execution);
    ValidMask::build(config.map_size, counts, config.valid_threshold)
}

/// Evaluates the regularized objective at `(traj, map)`.
pub fn evaluate(
    stream: &EventStream,
    traj: &Trajectory,
    map: &GradientMap,
    mask: &ValidMask,
    config: &SolverConfig,
) -> Result<Evaluation> {
    let exec = config.execution;
    let terms = build_terms(stream, traj, mask, config.contrast, exec)?;
    let residuals: Vec<f64> = exec::map_chunks(&terms.terms, exec::chunk_len(terms.terms.len(), 8192), exec, |_, c| {
        c.iter().map(|t| residual(t, map)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let data_loss = exec::sum_chunks(&residuals, exec, |e| config.data_loss(*e));
    let phe = exec::sum_chunks(&residuals, exec, |e| e * e);
    let regularization = config.eta * map.squared_norm(mask);
    let invalid_loss = terms.stats.dropped.invalid_pixel as f64 * config.data_loss(config.contrast);
    Ok(Evaluation {
        terms,
        residuals,
        data_loss,
        invalid_loss,
        regularization,
        phe,
    })
}

/// Linearizes every term, skipping those whose bearings have no projection
/// Jacobian, and applies Huber reweighting when enabled.
pub fn linearize_all(
    terms: &TermSet,
    map: &GradientMap,
    traj: &Trajectory,
    config: &SolverConfig,
) -> (Vec<TermJacobianRow>, usize) {
    let exec = config.execution;
    let parts = exec::map_chunks(&terms.terms, exec::chunk_len(terms.terms.len(), 4096), exec, |_, c| {
        let mut rows = Vec::with_capacity(c.len());
        let mut skipped = 0usize;
        for t in c {
            match linearize_term(t, map, traj) {
                Ok(mut row) => {
                    if config.huber {
                        reweight(&mut row, config.huber_delta);
                    }
                    rows.push(row);
                }
                Err(_) => skipped += 1,
            }
        }
        (rows, skipped)
    });
    let mut rows = Vec::with_capacity(terms.terms.len());
    let mut skipped = 0;
    for (r, s) in parts {
        rows.extend(r);
        skipped += s;
    }
    (rows, skipped)
}

fn map_operating_point(map: &GradientMap, mask: &ValidMask) -> Vec<Vector2<f64>> {
    mask.valid_pixels().iter().map(|&p| map.at(p as usize)).collect()
}

fn apply_map_step(map: &GradientMap, mask: &ValidMask, step: &[Vector2<f64>]) -> GradientMap {
    let mut out = map.clone();
    for (&p, d) in mask.valid_pixels().iter().zip(step) {
        let p = p as usize;
        out.set(p, map.at(p) + d);
    }
    out
}

/// Least-squares map for a fixed trajectory.
///
/// The residual is linear in the map, so a single undamped step from the
/// zero map is the exact minimizer of `sum e^2 + eta |beta|^2`.
pub fn fit_map(
    stream: &EventStream,
    traj: &Trajectory,
    mask: &ValidMask,
    config: &SolverConfig,
) -> Result<GradientMap> {
    let zero = GradientMap::zeros(mask.size());
    let terms = build_terms(stream, traj, mask, config.contrast, config.execution)?;
    let rows: Vec<TermJacobianRow> = terms
        .terms
        .iter()
        .map(|t| TermJacobianRow {
            poses: Default::default(),
            pixel: t.pixel,
            map: t.displacement.transpose(),
            residual: -t.measured,
        })
        .collect();
    let mut ne = accumulate(&rows, 1, mask.n_valid(), config.execution)?;
    ne.apply_regularization(config.eta, &vec![Vector2::zeros(); mask.n_valid()]);
    let mut pixels = Vec::with_capacity(mask.n_valid());
    for (a, b) in ne.a22.iter().zip(&ne.b2) {
        // Pixels without a constraint in either direction keep a zero gradient.
        let sol = a
            .cholesky()
            .map(|c| c.solve(b))
            .or_else(|| a.pseudo_inverse(1e-12).ok().map(|p| p * b))
            .unwrap_or_else(Vector2::zeros);
        pixels.push(sol);
    }
    Ok(apply_map_step(&zero, mask, &pixels))
}

/// Levenberg-Marquardt refinement of poses and map.
///
/// The first control pose is held fixed. The valid mask is built once from
/// the initial trajectory and frozen.
pub fn optimize(
    stream: &EventStream,
    traj0: &Trajectory,
    map0: &GradientMap,
    config: &SolverConfig,
) -> Result<Optimization> {
    config.validate()?;
    if map0.size() != config.map_size {
        return Err(Error::Dimension(format!(
            "initial map is {}x{}, configured map is {}x{}",
            map0.size().width,
            map0.size().height,
            config.map_size.width,
            config.map_size.height
        )));
    }
    if traj0.len() < 2 {
        return Err(Error::InvalidTrajectory("need at least two control poses".into()));
    }
    let mask = build_mask(stream, traj0, config)?;
    let mut map = map0.clone();
    map.zero_invalid(&mask);
    let mut traj = traj0.clone();

    let initial_fitted_phe = {
        let fitted = fit_map(stream, traj0, &mask, config)?;
        evaluate(stream, traj0, &fitted, &mask, config)?.phe
    };

    let mut timing = IterationTiming::default();
    let start = Instant::now();
    let mut current = evaluate(stream, &traj, &map, &mask, config)?;
    timing.evaluate += start.elapsed().as_secs_f64();
    let initial_loss = current.loss();
    let initial_phe = current.phe;
    log::info!(
        "start: {} terms, {} valid pixels, loss {:.6e}, PhE {:.6e}",
        current.terms.terms.len(),
        mask.n_valid(),
        initial_loss,
        initial_phe
    );

    let mut lambda = config.lambda_init;
    let mut records = Vec::new();
    let mut timings = Vec::new();
    let mut linearization_skips = 0;
    let mut rejections = 0usize;
    let mut termination = Termination::MaxIterations;
    let mut system: Option<NormalEquations> = None;

    for iteration in 1..=config.max_iterations {
        if system.is_none() {
            let t = Instant::now();
            let (rows, skipped) = linearize_all(&current.terms, &map, &traj, config);
            linearization_skips = skipped;
            let mut ne = accumulate(&rows, traj.len(), mask.n_valid(), config.execution)?;
            ne.apply_regularization(config.eta, &map_operating_point(&map, &mask));
            system = Some(ne);
            timing.form += t.elapsed().as_secs_f64();
        }
        let ne = system.as_ref().expect("system formed above");

        let t = Instant::now();
        let solved = solve(ne, lambda, config.backend, config.execution);
        timing.solve += t.elapsed().as_secs_f64();

        let mut record = IterationRecord {
            iteration,
            lambda,
            loss: current.loss(),
            candidate_loss: None,
            pose_step_norm: 0.0,
            map_step_norm: 0.0,
            accepted: false,
            n_terms: current.terms.terms.len(),
            cg_iterations: 0,
            failure: None,
        };

        let candidate = solved.and_then(|step| {
            record.pose_step_norm = step.poses.norm();
            record.map_step_norm = step.pixels.iter().map(|p| p.norm_squared()).sum::<f64>().sqrt();
            record.cg_iterations = step.iterations;
            if !step.is_finite() {
                return Err(Error::NonFiniteUpdate);
            }
            let new_traj = traj.apply_update(&step.full_pose_update())?;
            let new_map = apply_map_step(&map, &mask, &step.pixels);
            let t = Instant::now();
            let eval = evaluate(stream, &new_traj, &new_map, &mask, config);
            timing.evaluate += t.elapsed().as_secs_f64();
            Ok((new_traj, new_map, eval?))
        });

        let mut converged = false;
        match candidate {
            Ok((new_traj, new_map, eval)) if eval.loss() < current.loss() => {
                record.candidate_loss = Some(eval.loss());
                record.accepted = true;
                let decrease = (current.loss() - eval.loss()) / current.loss().max(f64::MIN_POSITIVE);
                converged = decrease < config.tolerance;
                traj = new_traj;
                map = new_map;
                current = eval;
                lambda /= config.lambda_down;
                rejections = 0;
                system = None;
            }
            outcome => {
                match outcome {
                    Ok((_, _, eval)) => record.candidate_loss = Some(eval.loss()),
                    Err(e) => record.failure = Some(e.to_string()),
                }
                lambda *= config.lambda_up;
                if lambda >= STALL_LAMBDA {
                    rejections += 1;
                }
            }
        }
        log::debug!(
            "iter {iteration}: lambda {:.1e} loss {:.6e} candidate {:?} accepted {}",
            record.lambda,
            record.loss,
            record.candidate_loss,
            record.accepted
        );
        records.push(record);
        timings.push(std::mem::take(&mut timing));
        if converged {
            termination = Termination::Converged;
            break;
        }
        if rejections >= STALL_REJECTIONS {
            termination = Termination::Stalled;
            break;
        }
    }

    log::info!(
        "done: {:?} after {} iterations, loss {:.6e}, PhE {:.6e}",
        termination,
        records.len(),
        current.loss(),
        current.phe
    );
    let report = OptimizationReport {
        config: config.clone(),
        n_events: current.terms.stats.n_events,
        n_pairable: current.terms.stats.n_pairable,
        n_valid_pixels: mask.n_valid(),
        initial_loss,
        initial_phe,
        initial_fitted_phe,
        final_loss: current.loss(),
        final_phe: current.phe,
        final_n_terms: current.terms.terms.len(),
        final_dropped: current.terms.stats.dropped,
        linearization_skips,
        termination,
        iterations: records,
        timings,
    };
    Ok(Optimization {
        trajectory: traj,
        map,
        mask,
        report,
    })
}
