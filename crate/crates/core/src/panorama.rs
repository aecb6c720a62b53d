//! Panoramic gradient map, valid-pixel mask, and Poisson reconstruction.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::{MapPoint, MapSize};

/// Default event count a map pixel must exceed to be optimized.
pub const DEFAULT_VALID_THRESHOLD: u32 = 5;

/// Nearest pixel `(col, row)` of a map point: azimuth wraps, elevation clamps.
pub fn nearest_pixel(p: &MapPoint, size: MapSize) -> (usize, usize) {
    let w = size.width as i64;
    let col = (p.u.round() as i64).rem_euclid(w) as usize;
    let row = (p.v.round().max(0.0) as usize).min(size.height - 1);
    (col, row)
}

/// Two-channel brightness-gradient panorama (`g_x`, `g_y` per pixel).
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMap {
    size: MapSize,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientMap {
    pub fn zeros(size: MapSize) -> Self {
        GradientMap {
            size,
            gx: vec![0.0; size.n_pixels()],
            gy: vec![0.0; size.n_pixels()],
        }
    }

    pub fn from_channels(size: MapSize, gx: Vec<f64>, gy: Vec<f64>) -> Result<Self> {
        if gx.len() != size.n_pixels() || gy.len() != size.n_pixels() {
            return Err(Error::Dimension(format!(
                "gradient channels hold {} and {} values for a {}x{} map",
                gx.len(),
                gy.len(),
                size.width,
                size.height
            )));
        }
        if gx.iter().chain(&gy).any(|v| !v.is_finite()) {
            return Err(Error::Dimension("gradient map contains non-finite values".into()));
        }
        Ok(GradientMap { size, gx, gy })
    }

    pub fn size(&self) -> MapSize {
        self.size
    }

    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy(&self) -> &[f64] {
        &self.gy
    }

    pub fn at(&self, pixel: usize) -> Vector2<f64> {
        Vector2::new(self.gx[pixel], self.gy[pixel])
    }

    pub fn set(&mut self, pixel: usize, g: Vector2<f64>) {
        self.gx[pixel] = g.x;
        self.gy[pixel] = g.y;
    }

    pub fn pixel_index(&self, col: usize, row: usize) -> usize {
        row * self.size.width + col
    }

    /// Gradient at the pixel nearest to `p`. Touches exactly one pixel.
    pub fn sample_nn(&self, p: &MapPoint) -> Vector2<f64> {
        let (c, r) = nearest_pixel(p, self.size);
        self.at(self.pixel_index(c, r))
    }

    /// Spatial derivative of the gradient at the pixel nearest to `p`.
    pub fn hessian_nn(&self, p: &MapPoint) -> Matrix2<f64> {
        let (c, r) = nearest_pixel(p, self.size);
        self.hessian_at(c, r)
    }

    /// Central differences of both channels; rows are
    /// `(d gx/du, d gx/dv)` and `(d gy/du, d gy/dv)`. Wrapped in `u`,
    /// one-sided at the top and bottom rows.
    pub fn hessian_at(&self, col: usize, row: usize) -> Matrix2<f64> {
        let MapSize { width, height } = self.size;
        let left = self.pixel_index((col + width - 1) % width, row);
        let right = self.pixel_index((col + 1) % width, row);
        let (up, down, span) = if height == 1 {
            (row, row, 1.0)
        } else if row == 0 {
            (0, 1, 1.0)
        } else if row == height - 1 {
            (row - 1, row, 1.0)
        } else {
            (row - 1, row + 1, 2.0)
        };
        let up = self.pixel_index(col, up);
        let down = self.pixel_index(col, down);
        Matrix2::new(
            (self.gx[right] - self.gx[left]) * 0.5,
            (self.gx[down] - self.gx[up]) / span,
            (self.gy[right] - self.gy[left]) * 0.5,
            (self.gy[down] - self.gy[up]) / span,
        )
    }

    /// Sets every pixel outside `mask` to zero.
    pub fn zero_invalid(&mut self, mask: &ValidMask) {
        for p in 0..self.size.n_pixels() {
            if !mask.is_valid(p) {
                self.gx[p] = 0.0;
                self.gy[p] = 0.0;
            }
        }
    }

    /// Sum of squared gradient magnitudes over valid pixels.
    pub fn squared_norm(&self, mask: &ValidMask) -> f64 {
        mask.valid_pixels()
            .iter()
            .map(|&p| self.gx[p as usize].powi(2) + self.gy[p as usize].powi(2))
            .sum()
    }
}

/// Pixels receiving more than `threshold` warped events.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidMask {
    size: MapSize,
    threshold: u32,
    counts: Vec<u32>,
    /// Valid-pixel index per map pixel, `u32::MAX` when invalid.
    index: Vec<u32>,
    pixels: Vec<u32>,
}

impl ValidMask {
    pub fn build(size: MapSize, counts: Vec<u32>, threshold: u32) -> Result<Self> {
        if counts.len() != size.n_pixels() {
            return Err(Error::Dimension(format!(
                "{} event counts for a {}x{} map",
                counts.len(),
                size.width,
                size.height
            )));
        }
        let mut index = vec![u32::MAX; counts.len()];
        let mut pixels = Vec::new();
        for (p, &c) in counts.iter().enumerate() {
            if c > threshold {
                index[p] = pixels.len() as u32;
                pixels.push(p as u32);
            }
        }
        if pixels.is_empty() {
            return Err(Error::EmptyMask { threshold });
        }
        Ok(ValidMask {
            size,
            threshold,
            counts,
            index,
            pixels,
        })
    }

    /// Every pixel valid; used when reconstructing maps that carry no mask.
    pub fn all_valid(size: MapSize) -> Self {
        let n = size.n_pixels();
        ValidMask {
            size,
            threshold: 0,
            counts: vec![1; n],
            index: (0..n as u32).collect(),
            pixels: (0..n as u32).collect(),
        }
    }

    /// Mask from explicit flags (e.g. a mask image). Counts are 1 or 0.
    pub fn from_flags(size: MapSize, flags: &[bool]) -> Result<Self> {
        let counts = flags.iter().map(|&f| u32::from(f)).collect();
        Self::build(size, counts, 0)
    }

    pub fn size(&self) -> MapSize {
        self.size
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn n_valid(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_valid(&self, pixel: usize) -> bool {
        self.index[pixel] != u32::MAX
    }

    pub fn valid_index(&self, pixel: usize) -> Option<usize> {
        match self.index[pixel] {
            u32::MAX => None,
            i => Some(i as usize),
        }
    }

    /// Map pixel of each valid index.
    pub fn valid_pixels(&self) -> &[u32] {
        &self.pixels
    }
}

/// Log-intensity panorama.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityMap {
    size: MapSize,
    data: Vec<f64>,
}

impl IntensityMap {
    pub fn new(size: MapSize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size.n_pixels() {
            return Err(Error::Dimension(format!(
                "{} intensity values for a {}x{} map",
                data.len(),
                size.width,
                size.height
            )));
        }
        Ok(IntensityMap { size, data })
    }

    pub fn from_fn(size: MapSize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(size.n_pixels());
        for row in 0..size.height {
            for col in 0..size.width {
                data.push(f(col, row));
            }
        }
        IntensityMap { size, data }
    }

    pub fn size(&self) -> MapSize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.size.width + col]
    }

    /// Bilinear sample at a continuous map point; `u` wraps, `v` clamps.
    pub fn sample_bilinear(&self, p: &MapPoint) -> f64 {
        let MapSize { width, height } = self.size;
        let u = p.u.rem_euclid(width as f64);
        let v = p.v.clamp(0.0, (height - 1) as f64);
        let c0 = u.floor();
        let r0 = v.floor();
        let (fu, fv) = (u - c0, v - r0);
        let c0 = (c0 as usize) % width;
        let c1 = (c0 + 1) % width;
        let r0 = r0 as usize;
        let r1 = (r0 + 1).min(height - 1);
        let top = self.at(c0, r0) * (1.0 - fu) + self.at(c1, r0) * fu;
        let bottom = self.at(c0, r1) * (1.0 - fu) + self.at(c1, r1) * fu;
        top * (1.0 - fv) + bottom * fv
    }

    /// Forward-difference gradient: wrapped in `u`, zero `g_y` on the last row.
    pub fn forward_gradient(&self) -> GradientMap {
        let MapSize { width, height } = self.size;
        let mut gx = vec![0.0; self.data.len()];
        let mut gy = vec![0.0; self.data.len()];
        for row in 0..height {
            for col in 0..width {
                let p = row * width + col;
                gx[p] = self.at((col + 1) % width, row) - self.data[p];
                if row + 1 < height {
                    gy[p] = self.at(col, row + 1) - self.data[p];
                }
            }
        }
        GradientMap {
            size: self.size,
            gx,
            gy,
        }
    }

    /// Subtracts the mean over the valid pixels of `mask` (or all pixels).
    pub fn remove_mean(&mut self, mask: Option<&ValidMask>) {
        let mean = match mask {
            Some(m) => {
                m.valid_pixels()
                    .iter()
                    .map(|&p| self.data[p as usize])
                    .sum::<f64>()
                    / m.n_valid() as f64
            }
            None => self.data.iter().sum::<f64>() / self.data.len() as f64,
        };
        self.data.iter_mut().for_each(|v| *v -= mean);
    }
}

/// Root-mean-square difference after removing each map's mean.
pub fn rmse_mean_aligned(a: &IntensityMap, b: &IntensityMap) -> f64 {
    let n = a.data.len() as f64;
    let ma = a.data.iter().sum::<f64>() / n;
    let mb = b.data.iter().sum::<f64>() / n;
    let ss: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| ((x - ma) - (y - mb)).powi(2))
        .sum();
    (ss / n).sqrt()
}

/// Result of a Poisson solve.
#[derive(Clone, Debug)]
pub struct PoissonSolution {
    pub map: IntensityMap,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Relative residual at which the Poisson solve stops.
pub const POISSON_TOLERANCE: f64 = 1e-8;

/// Least-squares integration of a gradient field.
///
/// Minimizes `|D M - g|^2`, where `D` is the forward-difference gradient
/// (periodic in `u`, Neumann at the top and bottom rows), by conjugate
/// gradient on `D^T D M = D^T g`, the 5-point Laplacian against the
/// backward-difference divergence. Pixels outside `mask` contribute zero
/// gradient. The result has zero mean over the valid region.
pub fn poisson_reconstruct(
    g: &GradientMap,
    mask: Option<&ValidMask>,
    exec: Execution,
) -> Result<PoissonSolution> {
    let size = g.size();
    if let Some(m) = mask {
        if m.size() != size {
            return Err(Error::Dimension("mask and gradient map sizes differ".into()));
        }
    }
    let MapSize { width, height } = size;
    let n = size.n_pixels();
    let masked = |p: usize| mask.is_none_or(|m| m.is_valid(p));
    let gx: Vec<f64> = (0..n).map(|p| if masked(p) { g.gx[p] } else { 0.0 }).collect();
    let gy: Vec<f64> = (0..n)
        .map(|p| {
            if masked(p) && p / width + 1 < height {
                g.gy[p]
            } else {
                0.0
            }
        })
        .collect();

    // rhs = D^T g = -(backward-difference divergence)
    let mut rhs = vec![0.0; n];
    exec::for_each_chunk_mut(&mut rhs, width, exec, |start, row_vals| {
        let row = start / width;
        for (col, out) in row_vals.iter_mut().enumerate() {
            let p = start + col;
            let left = row * width + (col + width - 1) % width;
            let mut v = gx[left] - gx[p];
            if row > 0 {
                v += gy[p - width];
            }
            v -= gy[p];
            *out = v;
        }
    });

    let laplacian = |x: &[f64], out: &mut [f64]| {
        exec::for_each_chunk_mut(out, width, exec, |start, row_vals| {
            let row = start / width;
            for (col, o) in row_vals.iter_mut().enumerate() {
                let p = start + col;
                let xl = x[row * width + (col + width - 1) % width];
                let xr = x[row * width + (col + 1) % width];
                let mut acc = 2.0 * x[p] - xl - xr;
                if row > 0 {
                    acc += x[p] - x[p - width];
                }
                if row + 1 < height {
                    acc += x[p] - x[p + width];
                }
                *o = acc;
            }
        });
    };
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        exec::map_ranges(n, width.max(1024), exec, |s, e| {
            a[s..e].iter().zip(&b[s..e]).map(|(x, y)| x * y).sum::<f64>()
        })
        .into_iter()
        .sum()
    };

    let mut x = vec![0.0; n];
    let mut r = rhs.clone();
    let mut d = r.clone();
    let mut ad = vec![0.0; n];
    let rhs_norm = dot(&rhs, &rhs).sqrt();
    let mut rr = dot(&r, &r);
    let max_iter = 10 * width;
    let mut iterations = 0;
    let mut rel = if rhs_norm > 0.0 { rr.sqrt() / rhs_norm } else { 0.0 };

    while rel > POISSON_TOLERANCE && iterations < max_iter {
        laplacian(&d, &mut ad);
        let dad = dot(&d, &ad);
        if dad <= 0.0 {
            break;
        }
        let alpha = rr / dad;
        for i in 0..n {
            x[i] += alpha * d[i];
            r[i] -= alpha * ad[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            d[i] = r[i] + beta * d[i];
        }
        iterations += 1;
        rel = rr.sqrt() / rhs_norm;
    }
    if rel > POISSON_TOLERANCE {
        return Err(Error::CgNotConverged {
            iterations,
            residual: rel,
        });
    }
    let mut map = IntensityMap { size, data: x };
    map.remove_mean(mask);
    Ok(PoissonSolution {
        map,
        iterations,
        relative_residual: rel,
    })
}
