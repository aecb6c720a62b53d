//! Mosaicing bundle adjustment for rotating event cameras.
//!
//! Camera rotations sampled at a fixed rate and a two-channel panoramic
//! gradient map are refined jointly by minimizing the linearized
//! event-generation residuals with Levenberg-Marquardt. The intensity
//! panorama is recovered from the refined gradients by Poisson integration.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod events;
pub mod exec;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod panorama;
pub mod simulator;
pub mod solver;
pub mod trajectory;

pub use error::{Error, Result};
pub use events::{Event, EventStream};
pub use exec::Execution;
pub use geometry::{CameraModel, MapPoint, MapSize, Rotation};
pub use panorama::{poisson_reconstruct, GradientMap, IntensityMap, ValidMask};
pub use solver::{optimize, Optimization, OptimizationReport, SolverBackend, SolverConfig};
pub use trajectory::Trajectory;
