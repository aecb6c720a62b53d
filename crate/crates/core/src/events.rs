//! Event ingestion, per-pixel temporal pairing, warping onto the panorama,
//! and association of residual terms with gradient-map pixels.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::{is_near_pole, project_equirect, CameraModel, MapPoint, MapSize};
use crate::panorama::{nearest_pixel, GradientMap, ValidMask};
use crate::trajectory::{PoseWeights, Trajectory};

/// Default contrast threshold (log-intensity).
pub const DEFAULT_CONTRAST: f64 = 0.2;

/// One brightness-change measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: u16,
    pub y: u16,
    /// `+1` or `-1`.
    pub polarity: i8,
}

impl Event {
    pub fn new(t: f64, x: u16, y: u16, polarity: i8) -> Self {
        Event { t, x, y, polarity }
    }
}

/// An event with a predecessor at the same camera pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventPair {
    /// Index of the event in the stream.
    pub index: usize,
    /// Timestamp of the previous event at the same pixel.
    pub prev_t: f64,
}

impl EventPair {
    pub fn dt(&self, events: &[Event]) -> f64 {
        events[self.index].t - self.prev_t
    }
}

/// Pairs each event with the previous event at the same pixel, regardless of polarity.
/// The first event at a pixel produces no pair.
///
/// Returns the pairs and the last-event timestamp per camera pixel (`NaN`
/// where no event occurred).
pub fn pair_events(events: &[Event], cam: &CameraModel) -> Result<(Vec<EventPair>, Vec<f64>)> {
    let width = cam.width() as usize;
    let mut last = vec![f64::NAN; cam.n_pixels()];
    let mut pairs = Vec::with_capacity(events.len());
    let mut previous = f64::NEG_INFINITY;
    for (index, e) in events.iter().enumerate() {
        if !(e.t >= previous) {
            return Err(Error::NonMonotonicTime {
                index,
                t: e.t,
                previous,
            });
        }
        previous = e.t;
        if u32::from(e.x) >= cam.width() || u32::from(e.y) >= cam.height() {
            return Err(Error::PixelOutOfBounds {
                x: e.x.into(),
                y: e.y.into(),
                width: cam.width(),
                height: cam.height(),
            });
        }
        let px = e.y as usize * width + e.x as usize;
        let prev_t = last[px];
        if !prev_t.is_nan() && e.t > prev_t {
            pairs.push(EventPair { index, prev_t });
        }
        last[px] = e.t;
    }
    Ok((pairs, last))
}

/// A validated, time-sorted event stream with its pixel pairing.
#[derive(Clone, Debug)]
pub struct EventStream {
    events: Vec<Event>,
    pairs: Vec<EventPair>,
    last_event: Vec<f64>,
    /// Unit-less camera bearings `K^-1 x^h`, one per sensor pixel.
    bearings: Vec<Vector3<f64>>,
    camera: CameraModel,
}

impl EventStream {
    pub fn new(events: Vec<Event>, camera: CameraModel) -> Result<Self> {
        let (pairs, last_event) = pair_events(&events, &camera)?;
        let mut bearings = Vec::with_capacity(camera.n_pixels());
        for y in 0..camera.height() {
            for x in 0..camera.width() {
                bearings.push(camera.pixel_bearing(x as f64, y as f64)?);
            }
        }
        Ok(EventStream {
            events,
            pairs,
            last_event,
            bearings,
            camera,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn pairs(&self) -> &[EventPair] {
        &self.pairs
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn last_event_times(&self) -> &[f64] {
        &self.last_event
    }

    pub fn bearing(&self, e: &Event) -> &Vector3<f64> {
        &self.bearings[e.y as usize * self.camera.width() as usize + e.x as usize]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// `project_equirect(R(t) K^-1 x^h)`.
pub fn warp_event(
    x: f64,
    y: f64,
    t: f64,
    traj: &Trajectory,
    cam: &CameraModel,
    size: MapSize,
) -> Result<MapPoint> {
    let z = traj.interpolate(t)?.rotate(&cam.pixel_bearing(x, y)?);
    project_equirect(&z, size)
}

/// Number of in-span events landing on each map pixel.
pub fn count_warped_events(
    stream: &EventStream,
    traj: &Trajectory,
    size: MapSize,
    exec: Execution,
) -> Vec<u32> {
    let events = stream.events();
    let hits = exec::map_chunks(events, exec::chunk_len(events.len(), 8192), exec, |_, chunk| {
        chunk
            .iter()
            .filter_map(|e| warp_pixel(stream, e, traj, size))
            .collect::<Vec<u32>>()
    });
    let mut counts = vec![0u32; size.n_pixels()];
    for p in hits.into_iter().flatten() {
        counts[p as usize] += 1;
    }
    counts
}

fn warp_pixel(stream: &EventStream, e: &Event, traj: &Trajectory, size: MapSize) -> Option<u32> {
    let w = traj.interp_weights(e.t).ok()?;
    let z = traj.at_weights(w).rotate(stream.bearing(e));
    let p = project_equirect(&z, size).ok()?;
    let (c, r) = nearest_pixel(&p, size);
    Some((r * size.width + c) as u32)
}

/// One event's association with the map at the current operating point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualTerm {
    /// Index of the event in the stream.
    pub event: u32,
    /// Measured contrast `polarity * C`.
    pub measured: f64,
    pub t: f64,
    pub t_prev: f64,
    /// Rotated bearings `R(t) K^-1 x^h` at both times.
    pub bearing: Vector3<f64>,
    pub bearing_prev: Vector3<f64>,
    pub point: MapPoint,
    pub point_prev: MapPoint,
    /// `point - point_prev`, azimuth wrapped.
    pub displacement: Vector2<f64>,
    /// Map pixel nearest to `point`.
    pub map_pixel: u32,
    /// Valid-pixel index of `map_pixel`.
    pub pixel: u32,
    pub weights: PoseWeights,
    pub weights_prev: PoseWeights,
}

/// Why a pairable event produced no residual term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    OutOfSpan,
    NearPole,
    InvalidPixel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub out_of_span: usize,
    pub near_pole: usize,
    pub invalid_pixel: usize,
}

impl DropCounts {
    pub fn total(&self) -> usize {
        self.out_of_span + self.near_pole + self.invalid_pixel
    }

    fn record(&mut self, reason: DropReason) {
        match reason {
            DropReason::OutOfSpan => self.out_of_span += 1,
            DropReason::NearPole => self.near_pole += 1,
            DropReason::InvalidPixel => self.invalid_pixel += 1,
        }
    }

    fn merge(&mut self, other: &DropCounts) {
        self.out_of_span += other.out_of_span;
        self.near_pole += other.near_pole;
        self.invalid_pixel += other.invalid_pixel;
    }
}

/// Bookkeeping from one association pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStats {
    pub n_events: usize,
    pub n_pairable: usize,
    pub dropped: DropCounts,
    /// In-span events warped onto each map pixel at their own timestamp.
    pub map_counts: Vec<u32>,
}

/// Residual terms plus the statistics of the pass that produced them.
#[derive(Clone, Debug)]
pub struct TermSet {
    pub terms: Vec<ResidualTerm>,
    pub stats: EventStats,
}

/// Associates a single paired event with the map at trajectory `traj`.
pub fn associate(
    stream: &EventStream,
    pair: &EventPair,
    traj: &Trajectory,
    mask: &ValidMask,
    contrast: f64,
) -> Result<ResidualTerm, DropReason> {
    let e = &stream.events()[pair.index];
    let size = mask.size();
    let w = traj.interp_weights(e.t).map_err(|_| DropReason::OutOfSpan)?;
    let w_prev = traj
        .interp_weights(pair.prev_t)
        .map_err(|_| DropReason::OutOfSpan)?;
    let b = stream.bearing(e);
    let z = traj.at_weights(w).rotate(b);
    let z_prev = traj.at_weights(w_prev).rotate(b);
    if is_near_pole(&z) || is_near_pole(&z_prev) {
        return Err(DropReason::NearPole);
    }
    let point = project_equirect(&z, size).map_err(|_| DropReason::NearPole)?;
    let point_prev = project_equirect(&z_prev, size).map_err(|_| DropReason::NearPole)?;
    let (c, r) = nearest_pixel(&point, size);
    let map_pixel = r * size.width + c;
    let pixel = mask
        .valid_index(map_pixel)
        .ok_or(DropReason::InvalidPixel)?;
    Ok(ResidualTerm {
        event: pair.index as u32,
        measured: f64::from(e.polarity) * contrast,
        t: e.t,
        t_prev: pair.prev_t,
        bearing: z,
        bearing_prev: z_prev,
        point,
        point_prev,
        displacement: point.displacement_from(&point_prev, size),
        map_pixel: map_pixel as u32,
        pixel: pixel as u32,
        weights: w,
        weights_prev: w_prev,
    })
}

/// Associates every paired event with the map at trajectory `traj`.
///
/// Terms are emitted for pairs whose two timestamps are in span, whose
/// bearings avoid the poles, and whose current map point rounds to a valid
/// pixel; every other pair is counted under its drop reason.
pub fn build_terms(
    stream: &EventStream,
    traj: &Trajectory,
    mask: &ValidMask,
    contrast: f64,
    exec: Execution,
) -> Result<TermSet> {
    if !(contrast > 0.0) {
        return Err(Error::Config(format!("contrast threshold must be positive, got {contrast}")));
    }
    let size = mask.size();
    let pairs = stream.pairs();
    let parts = exec::map_chunks(pairs, exec::chunk_len(pairs.len(), 8192), exec, |_, chunk| {
        let mut terms = Vec::with_capacity(chunk.len());
        let mut dropped = DropCounts::default();
        for pair in chunk {
            match associate(stream, pair, traj, mask, contrast) {
                Ok(t) => terms.push(t),
                Err(reason) => dropped.record(reason),
            }
        }
        (terms, dropped)
    });
    let mut terms = Vec::with_capacity(pairs.len());
    let mut dropped = DropCounts::default();
    for (t, d) in parts {
        terms.extend(t);
        dropped.merge(&d);
    }
    let stats = EventStats {
        n_events: stream.len(),
        n_pairable: pairs.len(),
        dropped,
        map_counts: count_warped_events(stream, traj, size, exec),
    };
    if terms.is_empty() {
        return Err(Error::NoTerms {
            dropped: dropped.total(),
        });
    }
    Ok(TermSet { terms, stats })
}

/// `e_k = G(p(t_k)) . dp - polarity * C`.
pub fn residual(term: &ResidualTerm, g: &GradientMap) -> f64 {
    g.sample_nn(&term.point).dot(&term.displacement) - term.measured
}
