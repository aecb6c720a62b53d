//! Solvers for the damped normal equations `(A + lambda I) x = b`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3x2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::solver::normal::NormalEquations;

/// Relative pivot below which a factorization is declared singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;
/// Relative residual at which conjugate gradient stops.
pub const CG_TOLERANCE: f64 = 1e-10;
/// Largest system the dense backend will factor.
pub const DENSE_LIMIT: usize = 6000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverBackend {
    #[default]
    Schur,
    Cg,
    Dense,
}

impl std::str::FromStr for SolverBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "schur" => Ok(SolverBackend::Schur),
            "cg" => Ok(SolverBackend::Cg),
            "dense" => Ok(SolverBackend::Dense),
            other => Err(Error::Config(format!(
                "unknown solver '{other}' (expected schur, cg or dense)"
            ))),
        }
    }
}

impl std::fmt::Display for SolverBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverBackend::Schur => "schur",
            SolverBackend::Cg => "cg",
            SolverBackend::Dense => "dense",
        })
    }
}

/// Solution of one damped system.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    /// Free-pose increments, three per pose after the gauge pose.
    pub poses: DVector<f64>,
    /// Per valid pixel gradient increment.
    pub pixels: Vec<Vector2<f64>>,
    /// Conjugate-gradient iterations, zero for direct solvers.
    pub iterations: usize,
}

impl Step {
    /// Pose increments for all control poses with zero for the gauge pose.
    pub fn full_pose_update(&self) -> Vec<f64> {
        let mut v = vec![0.0; 3];
        v.extend(self.poses.iter().copied());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.poses.iter().all(|v| v.is_finite())
            && self.pixels.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Largest absolute component over all unknowns.
    pub fn max_abs(&self) -> f64 {
        let p = self.poses.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.pixels
            .iter()
            .fold(p, |m, g| m.max(g[0].abs()).max(g[1].abs()))
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let np = self.poses.len();
        let mut v = DVector::zeros(np + 2 * self.pixels.len());
        v.rows_mut(0, np).copy_from(&self.poses);
        for (i, g) in self.pixels.iter().enumerate() {
            v[np + 2 * i] = g[0];
            v[np + 2 * i + 1] = g[1];
        }
        v
    }

    fn from_vector(v: &DVector<f64>, n_pose_unknowns: usize, iterations: usize) -> Self {
        let n_pixels = (v.len() - n_pose_unknowns) / 2;
        Step {
            poses: v.rows(0, n_pose_unknowns).into_owned(),
            pixels: (0..n_pixels)
                .map(|i| {
                    Vector2::new(v[n_pose_unknowns + 2 * i], v[n_pose_unknowns + 2 * i + 1])
                })
                .collect(),
            iterations,
        }
    }
}

pub fn solve(
    ne: &NormalEquations,
    lambda: f64,
    backend: SolverBackend,
    exec: Execution,
) -> Result<Step> {
    match backend {
        SolverBackend::Schur => schur_solve(ne, lambda, exec),
        SolverBackend::Cg => cg_solve(ne, lambda, exec),
        SolverBackend::Dense => dense_solve(ne, lambda),
    }
}

fn invert_block(a: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let det = a.determinant();
    let scale = a.abs().max().max(f64::MIN_POSITIVE);
    if !(det.abs() > PIVOT_TOLERANCE * scale * scale) {
        return Err(Error::SingularSystem {
            pivot: det / (scale * scale),
        });
    }
    Ok(Matrix2::new(a[(1, 1)], -a[(0, 1)], -a[(1, 0)], a[(0, 0)]) / det)
}

fn cholesky_solve(mut a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    a = (&a + a.transpose()) * 0.5;
    let max_diag = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let chol = nalgebra::Cholesky::new(a).ok_or(Error::SingularSystem { pivot: 0.0 })?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v * v));
    if !(min_pivot > PIVOT_TOLERANCE * max_diag) {
        return Err(Error::SingularSystem {
            pivot: min_pivot / max_diag,
        });
    }
    Ok(chol.solve(b))
}

/// Eliminates the map block and factors the reduced pose system.
pub fn schur_solve(ne: &NormalEquations, lambda: f64, exec: Execution) -> Result<Step> {
    let n_pix = ne.n_pixels();
    let np = 3 * ne.n_free_poses;
    let damp = Matrix2::identity() * lambda;
    let inv22 = ne
        .a22
        .iter()
        .map(|a| invert_block(&(a + damp)))
        .collect::<Result<Vec<_>>>()?;

    let chunk = n_pix.div_ceil(16).max(4096);
    let partials = exec::map_ranges(n_pix, chunk, exec, |s, e| {
        let mut s_mat = DMatrix::<f64>::zeros(np, np);
        let mut rhs = DVector::<f64>::zeros(np);
        for (p, inv) in inv22.iter().enumerate().take(e).skip(s) {
            let blocks = &ne.a12[p];
            let scaled: Vec<(usize, Matrix3x2<f64>)> = blocks
                .iter()
                .map(|(f, b)| (*f as usize, b * inv))
                .collect();
            for (fi, w) in &scaled {
                let mut r = rhs.fixed_rows_mut::<3>(3 * fi);
                r -= w * ne.b2[p];
                for (fj, bj) in blocks {
                    let mut v = s_mat.fixed_view_mut::<3, 3>(3 * fi, 3 * *fj as usize);
                    v -= w * bj.transpose();
                }
            }
        }
        (s_mat, rhs)
    });
    let mut s_mat = ne.a11.clone();
    for i in 0..np {
        s_mat[(i, i)] += lambda;
    }
    let mut rhs = ne.b1.clone();
    for (s, r) in partials {
        s_mat += s;
        rhs += r;
    }
    let poses = cholesky_solve(s_mat, &rhs)?;

    let pixels = (0..n_pix)
        .map(|p| {
            let mut r = ne.b2[p];
            for (f, b) in &ne.a12[p] {
                r -= b.transpose() * poses.fixed_rows::<3>(3 * *f as usize);
            }
            inv22[p] * r
        })
        .collect();
    Ok(Step {
        poses,
        pixels,
        iterations: 0,
    })
}

/// `y = (A + lambda I) x` in the partitioned layout.
fn apply(ne: &NormalEquations, lambda: f64, x: &Step, exec: Execution) -> Step {
    let n_pix = ne.n_pixels();
    let mut poses = &ne.a11 * &x.poses + &x.poses * lambda;
    for p in 0..n_pix {
        for (f, b) in &ne.a12[p] {
            let mut r = poses.fixed_rows_mut::<3>(3 * *f as usize);
            r += b * x.pixels[p];
        }
    }
    let parts = exec::map_ranges(n_pix, exec::chunk_len(n_pix, 4096), exec, |s, e| {
        (s..e)
            .map(|p| {
                let mut y = ne.a22[p] * x.pixels[p] + x.pixels[p] * lambda;
                for (f, b) in &ne.a12[p] {
                    y += b.transpose() * x.poses.fixed_rows::<3>(3 * *f as usize);
                }
                y
            })
            .collect::<Vec<_>>()
    });
    Step {
        poses,
        pixels: parts.into_iter().flatten().collect(),
        iterations: 0,
    }
}

/// Jacobi-preconditioned conjugate gradient on the full system.
pub fn cg_solve(ne: &NormalEquations, lambda: f64, exec: Execution) -> Result<Step> {
    let (_, b) = ne.to_dense_rhs();
    let np = 3 * ne.n_free_poses;
    let n = b.len();
    let mut diag = DVector::zeros(n);
    for i in 0..np {
        diag[i] = ne.a11[(i, i)] + lambda;
    }
    for (p, a) in ne.a22.iter().enumerate() {
        diag[np + 2 * p] = a[(0, 0)] + lambda;
        diag[np + 2 * p + 1] = a[(1, 1)] + lambda;
    }
    if let Some(d) = diag.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::SingularSystem { pivot: *d });
    }
    let inv_diag = diag.map(|d| 1.0 / d);

    let b_norm = b.norm();
    let mut x = DVector::zeros(n);
    if b_norm == 0.0 {
        return Ok(Step::from_vector(&x, np, 0));
    }
    let mut r = b.clone();
    let mut z = r.component_mul(&inv_diag);
    let mut d = z.clone();
    let mut rz = r.dot(&z);
    let max_iter = 10 * n;
    for it in 1..=max_iter {
        let ad = apply(ne, lambda, &Step::from_vector(&d, np, 0), exec).to_vector();
        let dad = d.dot(&ad);
        if !(dad > 0.0) {
            return Err(Error::SingularSystem { pivot: dad });
        }
        let alpha = rz / dad;
        x.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &ad, 1.0);
        let rel = r.norm() / b_norm;
        if rel <= CG_TOLERANCE {
            return Ok(Step::from_vector(&x, np, it));
        }
        z = r.component_mul(&inv_diag);
        let rz_new = r.dot(&z);
        d = &z + &d * (rz_new / rz);
        rz = rz_new;
    }
    Err(Error::CgNotConverged {
        iterations: max_iter,
        residual: r.norm() / b_norm,
    })
}

/// Cholesky of the assembled dense system. Intended for small problems.
pub fn dense_solve(ne: &NormalEquations, lambda: f64) -> Result<Step> {
    let n = ne.n_unknowns();
    if n > DENSE_LIMIT {
        return Err(Error::Config(format!(
            "dense solver limited to {DENSE_LIMIT} unknowns, system has {n}"
        )));
    }
    let (mut a, b) = ne.to_dense();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let x = cholesky_solve(a, &b)?;
    Ok(Step::from_vector(&x, 3 * ne.n_free_poses, 0))
}

impl NormalEquations {
    fn to_dense_rhs(&self) -> (usize, DVector<f64>) {
        let np = 3 * self.n_free_poses;
        let mut b = DVector::zeros(self.n_unknowns());
        b.rows_mut(0, np).copy_from(&self.b1);
        for (p, g) in self.b2.iter().enumerate() {
            b[np + 2 * p] = g[0];
            b[np + 2 * p + 1] = g[1];
        }
        (np, b)
    }
}
