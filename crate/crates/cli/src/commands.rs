//! The four subcommands.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use emba::io;
use emba::metrics::{align_at, are_rmse_at_knots, photometric_error, Metrics};
use emba::simulator::{
    inject_outliers, perturb_trajectory, procedural_panorama, simulate_events, true_gradient_map, SimConfig,
};
use emba::solver::build_mask;
use emba::trajectory::StampedRotation;
use emba::{optimize, poisson_reconstruct, EventStream, GradientMap, IntensityMap, Trajectory};

use crate::config::{EventFormat, RunConfig};

/// How a successful run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Refinement stopped without meeting the convergence test.
    NotConverged,
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| anyhow!("missing required option --{key}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn prepare_out(cfg: &RunConfig, command: &str) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create output directory {}", cfg.out.display()))?;
    write(&cfg.out.join("manifest.txt"), &cfg.manifest(command))
}

/// Loads a trajectory at the rate implied by its own sample spacing.
fn read_native_trajectory(path: &Path) -> Result<Trajectory> {
    let samples = io::read_trajectory_samples(path)?;
    native(&samples).with_context(|| format!("trajectory {}", path.display()))
}

fn native(samples: &[StampedRotation]) -> Result<Trajectory> {
    let (first, last) = match samples {
        [first, .., last] => (first, last),
        _ => bail!("need at least two samples"),
    };
    let rate = (samples.len() - 1) as f64 / (last.t - first.t);
    Ok(Trajectory::resample(samples, rate)?)
}

fn read_stream(cfg: &RunConfig) -> Result<EventStream> {
    let path = required(&cfg.events, "events")?;
    let events = io::read_events(path)?;
    Ok(EventStream::new(events, cfg.camera()?)?)
}

fn check_size(map: &IntensityMap, cfg: &RunConfig, path: &Path) -> Result<()> {
    let s = map.size();
    if s != cfg.map_size() {
        bail!(
            "{} is {}x{}, configured map is {}x{}",
            path.display(),
            s.width,
            s.height,
            cfg.map_width,
            cfg.map_height
        );
    }
    Ok(())
}

fn write_metrics(cfg: &RunConfig, metrics: &Metrics) -> Result<()> {
    write(&cfg.out.join("metrics.json"), &metrics.to_json())?;
    write(&cfg.out.join("metrics.txt"), &metrics.to_text())
}

pub fn refine(cfg: &RunConfig) -> Result<Outcome> {
    prepare_out(cfg, "refine")?;
    let stream = read_stream(cfg)?;
    let traj0 = io::read_trajectory(required(&cfg.trajectory, "trajectory")?, cfg.pose_rate)?;
    let map0 = match &cfg.init_map {
        Some(path) => {
            let intensity = io::read_log_intensity(path)?;
            check_size(&intensity, cfg, path)?;
            intensity.forward_gradient()
        }
        None => GradientMap::zeros(cfg.map_size()),
    };
    let solver = cfg.solver_config();
    let result = optimize(&stream, &traj0, &map0, &solver)?;
    let report = &result.report;

    let out = &cfg.out;
    io::write_trajectory(&out.join("trajectory.txt"), &result.trajectory)?;
    io::write_gradient_map(&out.join("gradient"), &result.map)?;
    io::write_mask_pgm(&out.join("mask.pgm"), &result.mask)?;
    let intensity = poisson_reconstruct(&result.map, Some(&result.mask), solver.execution)?;
    io::write_pfm(&out.join("intensity.pfm"), intensity.map.size(), intensity.map.data())?;
    io::write_intensity_pgm(&out.join("intensity.pgm"), &intensity.map, Some(&result.mask))?;
    write(&out.join("report.json"), &report.to_json())?;
    write(&out.join("report.txt"), &report.to_text())?;
    write(&out.join("timing.json"), &report.timing_json())?;
    write(&out.join("timing.txt"), &report.timing_text())?;

    if let Some(path) = &cfg.reference {
        let reference = read_native_trajectory(path)?;
        let aligned = align_at(&result.trajectory, &reference, result.trajectory.t0())?;
        let metrics = Metrics {
            are_deg_rmse: Some(are_rmse_at_knots(&aligned, &reference)?),
            phe: Some(report.final_phe),
            n_terms: report.final_n_terms,
            n_dropped: report.final_dropped.total(),
        };
        write_metrics(cfg, &metrics)?;
    }
    log::info!(
        "PhE {:.6e} -> {:.6e} ({:?})",
        report.initial_fitted_phe,
        report.final_phe,
        report.termination
    );
    Ok(if report.converged() { Outcome::Success } else { Outcome::NotConverged })
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    prepare_out(cfg, "simulate")?;
    let camera = cfg.camera()?;
    let size = cfg.map_size();
    let panorama = match &cfg.panorama {
        Some(path) => {
            let map = io::read_log_intensity(path)?;
            check_size(&map, cfg, path)?;
            map
        }
        None => procedural_panorama(size, cfg.seed),
    };
    let sample_rate = 1.0 / cfg.sim_dt;
    let (truth, control) = match &cfg.trajectory {
        Some(path) => {
            let samples = io::read_trajectory_samples(path)?;
            (Trajectory::resample(&samples, sample_rate)?, Trajectory::resample(&samples, cfg.pose_rate)?)
        }
        None => {
            let motion = cfg.motion();
            (motion.trajectory(cfg.duration, sample_rate)?, motion.trajectory(cfg.duration, cfg.pose_rate)?)
        }
    };
    let sim = SimConfig { contrast: cfg.contrast, dt: cfg.sim_dt, camera, trajectory: truth.clone(), map: panorama.clone() };
    let mut events = simulate_events(&sim, cfg.execution())?;
    if events.is_empty() {
        log::warn!("the camera never moved far enough to trigger an event; writing an empty event file");
    }
    if cfg.outlier_fraction > 0.0 {
        events = inject_outliers(&events, &camera, cfg.outlier_fraction, cfg.seed);
    }
    let init = perturb_trajectory(&control, cfg.perturb_deg, cfg.seed)?;

    let out = &cfg.out;
    match cfg.event_format {
        EventFormat::Text => io::write_events_text(&out.join("events.txt"), &events)?,
        EventFormat::Binary => io::write_events_binary(&out.join("events.bin"), &events)?,
    }
    io::write_trajectory(&out.join("trajectory_gt.txt"), &truth)?;
    io::write_trajectory(&out.join("trajectory_init.txt"), &init)?;
    io::write_pfm(&out.join("panorama.pfm"), size, panorama.data())?;
    io::write_intensity_pgm(&out.join("panorama.pgm"), &panorama, None)?;
    io::write_gradient_map(&out.join("gradient_gt"), &true_gradient_map(&panorama))?;
    log::info!("{} events written to {}", events.len(), out.display());
    Ok(Outcome::Success)
}

pub fn evaluate(cfg: &RunConfig) -> Result<Outcome> {
    prepare_out(cfg, "evaluate")?;
    let estimate = read_native_trajectory(required(&cfg.trajectory, "trajectory")?)?;
    let reference = read_native_trajectory(required(&cfg.reference, "reference")?)?;
    let aligned = align_at(&estimate, &reference, estimate.t0())?;
    let mut metrics = Metrics { are_deg_rmse: Some(are_rmse_at_knots(&aligned, &reference)?), ..Default::default() };
    if let (Some(_), Some(prefix)) = (&cfg.events, &cfg.gradient) {
        let stream = read_stream(cfg)?;
        let map = io::read_gradient_map(prefix)?;
        if map.size() != cfg.map_size() {
            bail!("gradient map size differs from the configured map size");
        }
        let mask = build_mask(&stream, &aligned, &cfg.solver_config())?;
        let phe = photometric_error(&stream, &aligned, &map, &mask, cfg.contrast, cfg.execution())?;
        metrics = metrics.with_photometric(&phe);
    }
    write_metrics(cfg, &metrics)?;
    Ok(Outcome::Success)
}

pub fn reconstruct(cfg: &RunConfig) -> Result<Outcome> {
    prepare_out(cfg, "reconstruct")?;
    let g = io::read_gradient_map(required(&cfg.gradient, "gradient")?)?;
    let solution = poisson_reconstruct(&g, None, cfg.execution())?;
    io::write_pfm(&cfg.out.join("intensity.pfm"), g.size(), solution.map.data())?;
    io::write_intensity_pgm(&cfg.out.join("intensity.pgm"), &solution.map, None)?;
    log::info!(
        "Poisson solve: {} iterations, relative residual {:.3e}",
        solution.iterations,
        solution.relative_residual
    );
    Ok(Outcome::Success)
}
