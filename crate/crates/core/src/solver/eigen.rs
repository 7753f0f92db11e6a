//! Cyclic Jacobi eigensolver for dense symmetric matrices.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("Jacobi iteration did not converge within {sweeps} sweeps (off-diagonal norm {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Eigen-decomposition `M = V diag(lambda) V'` with ascending eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigResult {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    /// `max_k |M v_k - lambda_k v_k|_2`.
    pub residual: f64,
    pub sweeps: usize,
}

impl SymEigResult {
    pub fn max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Spectral norm `max |lambda|`.
    pub fn norm(&self) -> f64 {
        self.max().abs().max(self.min().abs())
    }
}

fn off_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for q in 1..n {
        for p in 0..q {
            acc += a[(p, q)] * a[(p, q)];
        }
    }
    (2.0 * acc).sqrt()
}

/// Full spectrum of the symmetric part of `m`.
///
/// Rotations are applied in fixed row-cyclic order, so identical input bits
/// give identical output bits.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<SymEigResult, EigenError> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(EigenError::NotSquare { rows, cols });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(EigenError::NonFinite);
    }
    let n = rows;
    let sym = (m + m.transpose()) * 0.5;
    let mut a = sym.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm();

    let mut sweeps = 0;
    loop {
        let off = off_norm(&a);
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(EigenError::NoConvergence { sweeps, off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // negligible against both diagonal entries after a few sweeps
                if sweeps > 4
                    && app.abs() + 100.0 * apq.abs() == app.abs()
                    && aqq.abs() + 100.0 * apq.abs() == aqq.abs()
                {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    let new_rp = c * arp - s * arq;
                    let new_rq = s * arp + c * arq;
                    a[(r, p)] = new_rp;
                    a[(p, r)] = new_rp;
                    a[(r, q)] = new_rq;
                    a[(q, r)] = new_rq;
                }
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &v.column(src));
    }
    let mut residual: f64 = 0.0;
    for k in 0..n {
        let vk = eigenvectors.column(k);
        let r = &sym * vk - vk * eigenvalues[k];
        residual = residual.max(r.norm());
    }
    Ok(SymEigResult {
        eigenvalues,
        eigenvectors,
        residual,
        sweeps,
    })
}
