//! Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! The rotations diagonalize the Gram matrix of the smaller side implicitly,
//! acting on the columns of the matrix itself, so small singular values keep
//! full relative accuracy instead of being squared away.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const MAX_SWEEPS: usize = 100;

/// Ordered singular triples: `m ≈ u · diag(s) · vᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u · diag(s) · vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, &s) in self.s.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul_tr(&self.v).expect("svd factor shapes")
    }

    /// Keeps the leading `k` triples.
    pub fn truncate(&self, k: usize) -> SvdResult {
        let k = k.min(self.s.len());
        SvdResult {
            u: self.u.columns_range(0, k),
            s: self.s[..k].to_vec(),
            v: self.v.columns_range(0, k),
        }
    }

    /// Number of singular values strictly above `tol`.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        self.s.iter().filter(|&&s| s > tol).count()
    }
}

/// Thin SVD with `k = min(rows, cols)` triples, singular values descending.
///
/// Sign convention: the first entry of each column of `v` whose magnitude
/// exceeds `1e-12` is positive.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose())?;
        let mut out = SvdResult { u: t.v, s: t.s, v: t.u };
        fix_signs(&mut out);
        return Ok(out);
    }
    svd_tall(m)
}

fn svd_tall(m: &Matrix) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    let mut w: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON * (rows.max(1) as f64).sqrt();
    let mut converged = cols < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NoConvergence {
            routine: "one-sided Jacobi SVD",
            sweeps: MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut u_raw = Matrix::zeros(rows, cols);
    let mut v_mat = Matrix::zeros(cols, cols);
    for (dst, &src) in order.iter().enumerate() {
        if norms[src] > 0.0 {
            let col: Vec<f64> = w[src].iter().map(|x| x / norms[src]).collect();
            u_raw.set_column(dst, &col);
        }
        v_mat.set_column(dst, &v[src]);
    }
    // Zero columns get completed to an orthonormal basis here.
    let u = orthonormalize_columns(&u_raw);

    let mut out = SvdResult { u, s, v: v_mat };
    fix_signs(&mut out);
    Ok(out)
}

fn fix_signs(out: &mut SvdResult) {
    for j in 0..out.v.cols() {
        let first = (0..out.v.rows()).map(|i| out.v[(i, j)]).find(|x| x.abs() > 1e-12);
        if matches!(first, Some(x) if x < 0.0) {
            for i in 0..out.v.rows() {
                out.v[(i, j)] = -out.v[(i, j)];
            }
            for i in 0..out.u.rows() {
                out.u[(i, j)] = -out.u[(i, j)];
            }
        }
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gram–Schmidt (two passes) over the columns of `m`.
///
/// Columns that are numerically dependent on their predecessors are replaced
/// by the standard basis vector with the largest residual, so the result
/// always has orthonormal columns when `cols <= rows`.
pub fn orthonormalize_columns(m: &Matrix) -> Matrix {
    let (rows, cols) = m.shape();
    assert!(cols <= rows, "cannot orthonormalize {cols} columns in R^{rows}");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for j in 0..cols {
        let original = m.column(j);
        let norm0 = dot(&original, &original).sqrt();
        let mut col = original;
        project_out(&mut col, &basis);
        let norm = dot(&col, &col).sqrt();
        if norm0 > 0.0 && norm > 1e-10 * norm0 {
            col.iter_mut().for_each(|x| *x /= norm);
        } else {
            col = completion_vector(rows, &basis);
        }
        basis.push(col);
    }
    Matrix::from_columns(rows, &basis)
}

fn project_out(col: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let proj = dot(col, b);
            for (x, y) in col.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
    }
}

fn completion_vector(rows: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..rows {
        let mut e = vec![0.0; rows];
        e[i] = 1.0;
        project_out(&mut e, basis);
        let n = dot(&e, &e).sqrt();
        if best.as_ref().is_none_or(|(bn, _)| n > *bn + 1e-12) {
            best = Some((n, e));
        }
    }
    let (n, mut e) = best.expect("rows > 0");
    e.iter_mut().for_each(|x| *x /= n);
    e
}
