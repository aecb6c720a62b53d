//! The simulator agrees with the linearized generation model at ground truth.

use emba::events::{build_terms, residual};
use emba::simulator::{procedural_panorama, simulate_events, true_gradient_map, PanningMotion, SimConfig};
use emba::solver::{build_mask, SolverConfig};
use emba::{CameraModel, EventStream, Execution, MapSize};

#[test]
fn mean_squared_residual_is_below_quarter_threshold_squared() {
    let size = MapSize::new(512, 256);
    let camera = CameraModel::new(110.0, 110.0, 63.5, 63.5, 128, 128).unwrap();
    let panorama = procedural_panorama(size, 1);
    let truth = PanningMotion::default().trajectory(0.6, 1000.0).unwrap();
    let contrast = 0.2;
    let events = simulate_events(
        &SimConfig { contrast, dt: 1e-3, camera, trajectory: truth.clone(), map: panorama.clone() },
        Execution::Parallel,
    )
    .unwrap();
    let stream = EventStream::new(events, camera).unwrap();
    let config = SolverConfig { map_size: size, ..Default::default() };
    let mask = build_mask(&stream, &truth, &config).unwrap();
    let gradient = true_gradient_map(&panorama);
    let terms = build_terms(&stream, &truth, &mask, contrast, Execution::Parallel).unwrap();
    assert!(terms.terms.len() > 10_000);
    let mean = terms.terms.iter().map(|t| residual(t, &gradient).powi(2)).sum::<f64>() / terms.terms.len() as f64;
    assert!(mean < (0.5 * contrast).powi(2), "mean squared residual {mean}");
}
