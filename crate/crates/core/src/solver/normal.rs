//! Cumulative formation of the partitioned normal equations.
//!
//! `A = sum_k r_k r_k^T` and `b = -sum_k r_k e_k` are accumulated row by
//! row without materializing the Jacobian. Because each row touches one map
//! pixel, the map-map block is block-diagonal with 2x2 blocks.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix3x2, Vector2};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::solver::linearize::TermJacobianRow;

/// Pose-pixel coupling blocks of one valid pixel, keyed by free-pose index.
pub type CouplingBlocks = Vec<(u32, Matrix3x2<f64>)>;

/// Partitioned system `[A11 A12; A12^T A22] [da; db] = [b1; b2]`.
///
/// The first control pose is the gauge and has no unknowns: free pose `f`
/// corresponds to control pose `f + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalEquations {
    pub n_free_poses: usize,
    pub a11: DMatrix<f64>,
    /// Per valid pixel, its coupling blocks sorted by free-pose index.
    pub a12: Vec<CouplingBlocks>,
    pub a22: Vec<Matrix2<f64>>,
    pub b1: DVector<f64>,
    pub b2: Vec<Vector2<f64>>,
}

impl NormalEquations {
    pub fn zeros(n_poses: usize, n_pixels: usize) -> Self {
        let n_free = n_poses.saturating_sub(1);
        NormalEquations {
            n_free_poses: n_free,
            a11: DMatrix::zeros(3 * n_free, 3 * n_free),
            a12: vec![Vec::new(); n_pixels],
            a22: vec![Matrix2::zeros(); n_pixels],
            b1: DVector::zeros(3 * n_free),
            b2: vec![Vector2::zeros(); n_pixels],
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.a22.len()
    }

    pub fn n_unknowns(&self) -> usize {
        3 * self.n_free_poses + 2 * self.n_pixels()
    }

    /// Looks up the coupling block between a free pose and a pixel.
    pub fn coupling(&self, free_pose: usize, pixel: usize) -> Option<&Matrix3x2<f64>> {
        let blocks = &self.a12[pixel];
        blocks
            .binary_search_by_key(&(free_pose as u32), |(p, _)| *p)
            .ok()
            .map(|i| &blocks[i].1)
    }

    /// Adds `eta I` to every map block and `-eta beta_op` to the map RHS.
    ///
    /// Pixels outside the valid set are not unknowns; their regularized
    /// update is `-beta_op = 0`, so they stay zero.
    pub fn apply_regularization(&mut self, eta: f64, beta_op: &[Vector2<f64>]) {
        if eta == 0.0 {
            return;
        }
        for ((a, b), g) in self.a22.iter_mut().zip(self.b2.iter_mut()).zip(beta_op) {
            *a += Matrix2::identity() * eta;
            *b -= g * eta;
        }
    }

    /// Dense `(A, b)` with unknowns ordered as free poses then pixels.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let np = 3 * self.n_free_poses;
        let n = self.n_unknowns();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        a.view_mut((0, 0), (np, np)).copy_from(&self.a11);
        b.rows_mut(0, np).copy_from(&self.b1);
        for (p, blocks) in self.a12.iter().enumerate() {
            let col = np + 2 * p;
            for (f, blk) in blocks {
                let row = 3 * *f as usize;
                a.view_mut((row, col), (3, 2)).copy_from(blk);
                a.view_mut((col, row), (2, 3)).copy_from(&blk.transpose());
            }
            a.view_mut((col, col), (2, 2)).copy_from(&self.a22[p]);
            b.rows_mut(col, 2).copy_from(&self.b2[p]);
        }
        (a, b)
    }
}

fn free_index(pose: u32) -> Option<usize> {
    (pose as usize).checked_sub(1)
}

/// Accumulates rows into the normal equations.
///
/// Pose-pose sums are reduced over fixed row chunks in order; map and coupling
/// blocks are owned by their pixel and summed in row order. Results do not
/// depend on `exec`.
pub fn accumulate(
    rows: &[TermJacobianRow],
    n_poses: usize,
    n_pixels: usize,
    exec: Execution,
) -> Result<NormalEquations> {
    if let Some(term) = rows.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFiniteContribution { term });
    }
    if let Some(r) = rows
        .iter()
        .find(|r| r.pixel as usize >= n_pixels || r.poses.iter().any(|(p, _)| *p as usize >= n_poses))
    {
        return Err(Error::Dimension(format!(
            "row references pixel {} or a pose beyond {n_poses}",
            r.pixel
        )));
    }

    let mut ne = NormalEquations::zeros(n_poses, n_pixels);
    let np = 3 * ne.n_free_poses;

    // Pose block: partial upper-triangular sums per chunk.
    let chunk = (rows.len().div_ceil(16)).max(16_384);
    let partials = exec::map_chunks(rows, chunk, exec, |_, chunk| {
        let mut a = DMatrix::<f64>::zeros(np, np);
        let mut b = DVector::<f64>::zeros(np);
        for row in chunk {
            for (i, (pi, ri)) in row.poses.iter().enumerate() {
                let Some(fi) = free_index(*pi) else { continue };
                let mut bi = b.fixed_rows_mut::<3>(3 * fi);
                bi -= ri.transpose() * row.residual;
                for (pj, rj) in &row.poses[i..] {
                    let Some(fj) = free_index(*pj) else { continue };
                    let blk: Matrix3<f64> = ri.transpose() * rj;
                    let mut view = a.fixed_view_mut::<3, 3>(3 * fi, 3 * fj);
                    view += blk;
                }
            }
        }
        (a, b)
    });
    for (a, b) in partials {
        ne.a11 += a;
        ne.b1 += b;
    }
    // Mirror the upper block triangle; diagonal blocks were summed whole.
    for bi in 0..ne.n_free_poses {
        for bj in (bi + 1)..ne.n_free_poses {
            let upper = ne.a11.fixed_view::<3, 3>(3 * bi, 3 * bj).transpose();
            ne.a11.fixed_view_mut::<3, 3>(3 * bj, 3 * bi).copy_from(&upper);
        }
    }

    // Map and coupling blocks, grouped by pixel.
    let mut start = vec![0usize; n_pixels + 1];
    for r in rows {
        start[r.pixel as usize + 1] += 1;
    }
    for p in 0..n_pixels {
        start[p + 1] += start[p];
    }
    let mut fill = start.clone();
    let mut order = vec![0u32; rows.len()];
    for (k, r) in rows.iter().enumerate() {
        let p = r.pixel as usize;
        order[fill[p]] = k as u32;
        fill[p] += 1;
    }
    let pixel_parts = exec::map_ranges(n_pixels, exec::chunk_len(n_pixels, 2048), exec, |s, e| {
        (s..e)
            .map(|p| {
                let mut a22 = Matrix2::zeros();
                let mut b2 = Vector2::zeros();
                let mut a12: CouplingBlocks = Vec::new();
                for &k in &order[start[p]..start[p + 1]] {
                    let row = &rows[k as usize];
                    let m = row.map;
                    a22 += m.transpose() * m;
                    b2 -= m.transpose() * row.residual;
                    for (pose, r) in &row.poses {
                        let Some(f) = free_index(*pose) else { continue };
                        let blk = r.transpose() * m;
                        let f = f as u32;
                        match a12.binary_search_by_key(&f, |(q, _)| *q) {
                            Ok(i) => a12[i].1 += blk,
                            Err(i) => a12.insert(i, (f, blk)),
                        }
                    }
                }
                (a22, b2, a12)
            })
            .collect::<Vec<_>>()
    });
    for (p, (a22, b2, a12)) in pixel_parts.into_iter().flatten().enumerate() {
        ne.a22[p] = a22;
        ne.b2[p] = b2;
        ne.a12[p] = a12;
    }
    Ok(ne)
}
