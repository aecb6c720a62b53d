//! SO(3) algebra, the pinhole camera, and the equirectangular panorama
//! projection with its analytical derivatives.
//!
//! Panorama convention: azimuth is measured from +z toward +x and maps to
//! `u`; elevation grows with +y and maps to `v`, so camera-down lands at the
//! bottom of the panorama.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix2x3, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SMALL_ANGLE: f64 = 1e-8;

/// Half-width of the pole guard band in normalized `y`.
pub const POLE_GUARD: f64 = 1e-9;

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues' formula, with a second-order Taylor expansion for tiny angles.
pub fn exp_so3(omega: &Vector3<f64>) -> Rotation {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Inverse of [`exp_so3`]; the returned vector has norm in `[0, pi]`.
pub fn log_so3(r: &Rotation) -> Vector3<f64> {
    let m = &r.0;
    let skew = vee(&(m - m.transpose())) * 0.5;
    let s = skew.norm();
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);

    if theta < SMALL_ANGLE {
        return skew * (1.0 + theta * theta / 6.0);
    }
    if c > -0.9 {
        return skew * (theta / s);
    }

    // Close to a half turn: recover the axis from the symmetric part,
    // n n^T = ((R + R^T)/2 - cos(theta) I) / (1 - cos(theta)).
    let sym = (m + m.transpose()) * 0.5;
    let outer = (sym - Matrix3::identity() * c) / (1.0 - c);
    let k = (0..3)
        .max_by(|&i, &j| outer[(i, i)].total_cmp(&outer[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = outer.column(k).into();
    axis /= outer[(k, k)].max(0.0).sqrt();
    axis.normalize_mut();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Left Jacobian of SO(3): `exp((phi + d)^) ~= exp((J_l(phi) d)^) exp(phi^)`.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let (a, b) = if theta < 1e-5 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let b = if theta < 1e-5 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * b
}

/// A 3D rotation stored as an orthonormal matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    pub fn exp(omega: &Vector3<f64>) -> Self {
        exp_so3(omega)
    }

    pub fn log(&self) -> Vector3<f64> {
        log_so3(self)
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Builds a rotation from a quaternion, normalizing it first.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Rotation(*q.to_rotation_matrix().matrix())
    }

    /// Unit quaternion `(w, x, y, z)` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Geodesic angle to `other`, in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (self.inverse() * *other).log().norm()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Maximum deviation of `R R^T` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.0 * self.0.transpose() - Matrix3::identity()).abs().max();
        e.max((self.0.determinant() - 1.0).abs())
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Pinhole intrinsics plus sensor size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    k: Matrix3<f64>,
    k_inv: Matrix3<f64>,
    width: u32,
    height: u32,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        Self::from_matrix(k, width, height)
    }

    pub fn from_matrix(k: Matrix3<f64>, width: u32, height: u32) -> Result<Self> {
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) || k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("focal lengths must be positive and finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::Config("sensor size must be non-zero".into()));
        }
        let k_inv = k
            .try_inverse()
            .ok_or_else(|| Error::Config("intrinsic matrix is singular".into()))?;
        Ok(CameraModel {
            k,
            k_inv,
            width,
            height,
        })
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// `K^-1 x^h` for a pixel inside the sensor. Not normalized.
    pub fn pixel_bearing(&self, x: f64, y: f64) -> Result<Vector3<f64>> {
        let inside = x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64;
        if !inside {
            return Err(Error::PixelOutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.k_inv * Vector3::new(x, y, 1.0))
    }
}

/// Panorama dimensions in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapSize {
    pub width: usize,
    pub height: usize,
}

impl MapSize {
    pub fn new(width: usize, height: usize) -> Self {
        MapSize { width, height }
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Map pixels per radian of azimuth.
    pub fn u_scale(&self) -> f64 {
        self.width as f64 / (2.0 * PI)
    }

    /// Map pixels per radian of elevation.
    pub fn v_scale(&self) -> f64 {
        self.height as f64 / PI
    }
}

/// Continuous panorama coordinates; `u` is kept in `[0, width)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapPoint {
    pub u: f64,
    pub v: f64,
}

impl MapPoint {
    /// Shortest displacement `self - from`, with the azimuth difference
    /// wrapped into `[-width/2, width/2)`.
    pub fn displacement_from(&self, from: &MapPoint, size: MapSize) -> nalgebra::Vector2<f64> {
        let w = size.width as f64;
        let mut du = self.u - from.u;
        if du >= 0.5 * w {
            du -= w;
        } else if du < -0.5 * w {
            du += w;
        }
        nalgebra::Vector2::new(du, self.v - from.v)
    }
}

fn wrap_u(u: f64, width: f64) -> f64 {
    let w = u.rem_euclid(width);
    if w >= width {
        0.0
    } else {
        w
    }
}

pub fn is_near_pole(z: &Vector3<f64>) -> bool {
    let n = z.norm();
    n == 0.0 || z.y.abs() / n >= 1.0 - POLE_GUARD
}

pub fn project_equirect(z: &Vector3<f64>, size: MapSize) -> Result<MapPoint> {
    let n = z.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroBearing);
    }
    let azimuth = z.x.atan2(z.z);
    let elevation = (z.y / n).clamp(-1.0, 1.0).asin();
    let w = size.width as f64;
    Ok(MapPoint {
        u: wrap_u((azimuth / (2.0 * PI) + 0.5) * w, w),
        v: (elevation / PI + 0.5) * size.height as f64,
    })
}

/// Inverse of [`project_equirect`]: the unit bearing seen at map point `p`.
pub fn unproject_equirect(p: &MapPoint, size: MapSize) -> Vector3<f64> {
    let azimuth = (p.u / size.width as f64 - 0.5) * 2.0 * PI;
    let elevation = (p.v / size.height as f64 - 0.5) * PI;
    let c = elevation.cos();
    Vector3::new(c * azimuth.sin(), elevation.sin(), c * azimuth.cos())
}

/// Jacobian of [`project_equirect`] with respect to the (unnormalized) bearing.
pub fn jac_equirect(z: &Vector3<f64>, size: MapSize) -> Result<Matrix2x3<f64>> {
    if z.norm() == 0.0 {
        return Err(Error::ZeroBearing);
    }
    if is_near_pole(z) {
        return Err(Error::NearPole);
    }
    let r2 = z.norm_squared();
    let rho2 = z.x * z.x + z.z * z.z;
    let rho = rho2.sqrt();
    let su = size.u_scale();
    let sv = size.v_scale();
    Ok(Matrix2x3::new(
        su * z.z / rho2,
        0.0,
        -su * z.x / rho2,
        -sv * z.y * z.x / (r2 * rho),
        sv * rho / r2,
        -sv * z.y * z.z / (r2 * rho),
    ))
}

/// `E = (d pi / d z) z^`.
///
/// Under the left perturbation `z -> exp(dphi^) z` the map point moves by
/// `-E dphi` to first order.
pub fn e_matrix(z: &Vector3<f64>, size: MapSize) -> Result<Matrix2x3<f64>> {
    Ok(jac_equirect(z, size)? * hat(z))
}
