use emba::events::{build_terms, residual};
use emba::simulator::{
    inject_outliers, perturb_trajectory, procedural_panorama, simulate_events, true_gradient_map, PanningMotion,
    SimConfig,
};
use emba::solver::{accumulate, build_mask, evaluate, fit_map, linearize_all, solve};
use emba::{
    optimize, CameraModel, EventStream, Execution, GradientMap, IntensityMap, MapSize, SolverBackend, SolverConfig,
    Trajectory,
};
use nalgebra::{Matrix2, Vector2};

const CONTRAST: f64 = 0.2;

fn camera() -> CameraModel {
    CameraModel::new(45.0, 45.0, 23.5, 23.5, 48, 48).unwrap()
}

struct Instance {
    stream: EventStream,
    truth: Trajectory,
    panorama: IntensityMap,
}

fn simulate(panorama: IntensityMap, motion: PanningMotion, duration: f64) -> Instance {
    let dense = motion.trajectory(duration, 1000.0).unwrap();
    let events = simulate_events(
        &SimConfig { contrast: CONTRAST, dt: 1e-3, camera: camera(), trajectory: dense, map: panorama.clone() },
        Execution::Parallel,
    )
    .unwrap();
    let truth = motion.trajectory(duration, 20.0).unwrap();
    Instance { stream: EventStream::new(events, camera()).unwrap(), truth, panorama }
}

fn size() -> MapSize {
    MapSize::new(256, 128)
}

fn procedural() -> Instance {
    simulate(procedural_panorama(size(), 3), PanningMotion::default(), 1.0)
}

fn config() -> SolverConfig {
    SolverConfig { map_size: size(), max_iterations: 8, ..Default::default() }
}

fn assert_monotone(report: &emba::OptimizationReport) {
    let mut last = report.initial_loss;
    for it in &report.iterations {
        assert_eq!(it.loss, last);
        if it.accepted {
            let c = it.candidate_loss.unwrap();
            assert!(c < last);
            last = c;
        }
    }
    assert_eq!(report.final_loss, last);
}

#[test]
fn ground_truth_on_exact_instance_is_a_fixed_point() {
    // A log-intensity ramp in azimuth under constant yaw: every event moves
    // exactly C / slope pixels, so all residuals vanish at the truth.
    let slope = 0.1;
    let ramp = IntensityMap::from_fn(size(), |col, _| slope * col as f64);
    let motion = PanningMotion { yaw_rate: 0.3, wobble: [0.0; 3], frequency: [1.0; 3] };
    let inst = simulate(ramp, motion, 1.0);
    let cfg = SolverConfig { eta: 0.0, max_iterations: 1, ..config() };
    let out = optimize(&inst.stream, &inst.truth, &true_gradient_map(&inst.panorama), &cfg).unwrap();
    let it = &out.report.iterations[0];
    assert!(it.n_terms > 5000);
    assert!(out.report.initial_phe < 1e-12 * it.n_terms as f64);
    assert!(it.pose_step_norm < 1e-6, "pose step {}", it.pose_step_norm);
    assert!(it.map_step_norm < 1e-6, "map step {}", it.map_step_norm);
}

#[test]
fn map_step_from_zero_is_the_per_pixel_closed_form() {
    let inst = procedural();
    let cfg = config();
    let mask = build_mask(&inst.stream, &inst.truth, &cfg).unwrap();
    let zero = GradientMap::zeros(size());
    let terms = build_terms(&inst.stream, &inst.truth, &mask, CONTRAST, Execution::Parallel).unwrap();
    let (rows, _) = linearize_all(&terms, &zero, &inst.truth, &cfg);
    let mut ne = accumulate(&rows, inst.truth.len(), mask.n_valid(), Execution::Parallel).unwrap();
    ne.apply_regularization(cfg.eta, &vec![Vector2::zeros(); mask.n_valid()]);
    // The pose block is empty at a zero map; a negligible damping keeps it invertible.
    let step = solve(&ne, 1e-12, SolverBackend::Schur, Execution::Parallel).unwrap();
    assert_eq!(step.poses.amax(), 0.0);

    let mut a = vec![Matrix2::<f64>::identity() * cfg.eta; mask.n_valid()];
    let mut b = vec![Vector2::<f64>::zeros(); mask.n_valid()];
    for t in &terms.terms {
        let k = t.pixel as usize;
        a[k] += t.displacement * t.displacement.transpose();
        b[k] += t.displacement * t.measured;
    }
    let fitted = fit_map(&inst.stream, &inst.truth, &mask, &cfg).unwrap();
    for (k, &p) in mask.valid_pixels().iter().enumerate() {
        let expected = a[k].try_inverse().unwrap() * b[k];
        let scale = expected.norm().max(1e-3);
        assert!((step.pixels[k] - expected).norm() / scale < 1e-9);
        assert!((fitted.at(p as usize) - expected).norm() / scale < 1e-9);
    }
}

#[test]
fn objective_matches_independent_sum() {
    let inst = procedural();
    let cfg = config();
    let mask = build_mask(&inst.stream, &inst.truth, &cfg).unwrap();
    let map = fit_map(&inst.stream, &inst.truth, &mask, &cfg).unwrap();
    let traj = perturb_trajectory(&inst.truth, 0.5, 1).unwrap();
    let eval = evaluate(&inst.stream, &traj, &map, &mask, &cfg).unwrap();
    let terms = build_terms(&inst.stream, &traj, &mask, CONTRAST, Execution::Sequential).unwrap();
    let data: f64 = terms.terms.iter().map(|t| residual(t, &map).powi(2)).sum();
    let reg: f64 = mask.valid_pixels().iter().map(|&p| map.at(p as usize).norm_squared()).sum::<f64>() * cfg.eta;
    let invalid = terms.stats.dropped.invalid_pixel as f64 * CONTRAST * CONTRAST;
    let expected = data + reg + invalid;
    assert!((eval.loss() - expected).abs() <= 1e-9 * expected);
    assert!((eval.phe - data).abs() <= 1e-9 * data);
}

#[test]
fn refinement_is_monotone_keeps_gauge_and_lowers_photometric_error() {
    let inst = procedural();
    let init = perturb_trajectory(&inst.truth, 1.0, 5).unwrap();
    let out = optimize(&inst.stream, &init, &GradientMap::zeros(size()), &config()).unwrap();
    assert_monotone(&out.report);
    assert!(out.report.iterations.iter().any(|i| i.accepted));
    assert_eq!(out.trajectory.poses()[0], init.poses()[0]);
    assert!(out.report.final_phe <= 0.6 * out.report.initial_fitted_phe);
    for &p in out.mask.valid_pixels() {
        assert!(out.map.at(p as usize).iter().all(|v| v.is_finite()));
    }
    for p in 0..size().n_pixels() {
        if !out.mask.is_valid(p) {
            assert_eq!(out.map.at(p), Vector2::zeros());
        }
    }
}

#[test]
fn huber_loss_decreases_with_outliers() {
    let inst = procedural();
    let events = inject_outliers(inst.stream.events(), &camera(), 0.05, 9);
    let stream = EventStream::new(events, camera()).unwrap();
    let init = perturb_trajectory(&inst.truth, 1.0, 5).unwrap();
    let cfg = SolverConfig { huber: true, ..config() };
    let out = optimize(&stream, &init, &GradientMap::zeros(size()), &cfg).unwrap();
    assert_monotone(&out.report);
    assert!(out.report.final_loss < out.report.initial_loss);
}

#[test]
fn schur_and_cg_agree_along_a_run() {
    let inst = procedural();
    let init = perturb_trajectory(&inst.truth, 1.0, 5).unwrap();
    let run = |backend| {
        let cfg = SolverConfig { backend, max_iterations: 4, ..config() };
        optimize(&inst.stream, &init, &GradientMap::zeros(size()), &cfg).unwrap()
    };
    let schur = run(SolverBackend::Schur);
    let cg = run(SolverBackend::Cg);
    for (a, b) in schur.report.iterations.iter().zip(&cg.report.iterations) {
        assert_eq!(a.accepted, b.accepted);
        let rel = (a.pose_step_norm - b.pose_step_norm).abs() / a.pose_step_norm.max(1e-12);
        assert!(rel < 1e-6, "pose step norms {} vs {}", a.pose_step_norm, b.pose_step_norm);
        let rel = (a.map_step_norm - b.map_step_norm).abs() / a.map_step_norm.max(1e-12);
        assert!(rel < 1e-6, "map step norms {} vs {}", a.map_step_norm, b.map_step_norm);
    }
    for (a, b) in schur.trajectory.poses().iter().zip(cg.trajectory.poses()) {
        assert!(a.angle_to(b) < 1e-6);
    }
}

#[test]
fn sequential_and_parallel_runs_are_identical() {
    let inst = procedural();
    let init = perturb_trajectory(&inst.truth, 1.0, 5).unwrap();
    let run = |execution| {
        let cfg = SolverConfig { execution, max_iterations: 3, ..config() };
        optimize(&inst.stream, &init, &GradientMap::zeros(size()), &cfg).unwrap()
    };
    let a = run(Execution::Sequential);
    let b = run(Execution::Parallel);
    assert_eq!(a.trajectory.poses(), b.trajectory.poses());
    assert_eq!(a.map.gx(), b.map.gx());
    assert_eq!(a.map.gy(), b.map.gy());
    let strip = |r: &emba::OptimizationReport| {
        let mut r = r.clone();
        r.config.execution = Execution::Sequential;
        r.to_json()
    };
    assert_eq!(strip(&a.report), strip(&b.report));
}
