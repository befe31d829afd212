use super::matrix::Matrix;
use crate::error::{invalid, Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, values descending, vectors as columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEigen {
    /// `vectors · diag(f(values)) · vectorsᵀ`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &lambda) in self.values.iter().enumerate() {
            let fl = f(lambda);
            for i in 0..n {
                scaled[(i, j)] *= fl;
            }
        }
        scaled.matmul_tr(&self.vectors).expect("square factors")
    }
}

/// Largest `|s_ij − s_ji|`.
pub fn asymmetry(s: &Matrix) -> f64 {
    let n = s.rows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(s: &Matrix) -> Result<()> {
    if s.rows() != s.cols() {
        return Err(Error::Shape {
            op: "symmetric eigendecomposition",
            lhs: s.shape(),
            rhs: (s.cols(), s.rows()),
        });
    }
    let gap = asymmetry(s);
    if gap > 1e-10 * s.frobenius_norm().max(1.0) {
        return Err(Error::NotSymmetric(gap));
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eigen(s: &Matrix) -> Result<SymEigen> {
    check_symmetric(s)?;
    let n = s.rows();
    // Symmetrize so rounding-level asymmetry does not bias the rotations.
    let mut a = s.clone();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();

    let mut extra_sweep_done = false;
    let mut sweeps = 0;
    loop {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= OFF_DIAGONAL_TOL * scale {
            // One more sweep after the tolerance is met cleans up the
            // quadratically small remainder.
            if extra_sweep_done || off == 0.0 {
                break;
            }
            extra_sweep_done = true;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence {
                routine: "cyclic Jacobi eigensolver",
                sweeps,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        if matches!(col.iter().find(|x| x.abs() > 1e-12), Some(x) if *x < 0.0) {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        vectors.set_column(dst, &col);
    }
    Ok(SymEigen { values, vectors })
}

/// `e^{−s·t}` for symmetric positive semidefinite `s` and `t ≥ 0`.
pub fn expm_neg(s: &Matrix, t: f64) -> Result<Matrix> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("expm_neg needs finite t >= 0, got {t}")));
    }
    let eig = sym_eigen(s)?;
    let floor = -1e-10 * s.frobenius_norm().max(1.0);
    if let Some(&lambda) = eig.values.iter().find(|&&l| l < floor) {
        return Err(invalid(format!("expm_neg needs a PSD input, found eigenvalue {lambda:e}")));
    }
    Ok(eig.apply_fn(|lambda| (-lambda.max(0.0) * t).exp()))
}
