//! Wold's iterative partial least squares.
//!
//! Each iteration extracts the leading singular-vector pair of the
//! cross-covariance `X^T Y`, forms scores `t = X u`, deflates both blocks by
//! their rank-one OLS fit on `t`, and accumulates the rank-one regression
//! coefficient contribution. The final coefficient matrix is the sum over
//! iterations.
//!
//! The leading pair is computed by an eigendecomposition of the smaller Gram
//! matrix of `X^T Y`, so only `min(dx, dy)` ever needs to be small.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};
use crate::pca::sign_fix;

/// Fitted PLS model. Loadings are stored one pair per extracted component;
/// `regression_coeffs` maps centered inputs to centered outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlsModel {
    /// Unit input-space loadings `u^r`, one row per component (`R x dx`).
    pub x_loadings: DMatrix<f64>,
    /// Unit output-space loadings `v^r`, one row per component (`R x dy`).
    pub y_loadings: DMatrix<f64>,
    /// `dx x dy`, the sum of per-iteration rank-one coefficient matrices.
    pub regression_coeffs: DMatrix<f64>,
    pub n_components: usize,
}

impl PlsModel {
    /// Predict centered outputs from centered inputs: `X w`.
    pub fn predict(&self, x_centered: &DMatrix<f64>) -> DMatrix<f64> {
        x_centered * &self.regression_coeffs
    }
}

/// Leading singular triple (sigma, u, v) of `c` via the smaller-side Gram
/// eigendecomposition.
fn leading_singular_pair(c: &DMatrix<f64>) -> (f64, DVector<f64>, DVector<f64>) {
    let (dx, dy) = (c.nrows(), c.ncols());
    if dx <= dy {
        let gram = c * c.transpose(); // dx x dx
        let eig = gram.symmetric_eigen();
        let mut best = 0;
        for i in 0..dx {
            if eig.eigenvalues[i] > eig.eigenvalues[best] {
                best = i;
            }
        }
        let sigma = eig.eigenvalues[best].max(0.0).sqrt();
        let mut u: DVector<f64> = eig.eigenvectors.column(best).into();
        u /= u.norm();
        let v = if sigma > 0.0 {
            c.transpose() * &u / sigma
        } else {
            DVector::zeros(dy)
        };
        (sigma, u, v)
    } else {
        let gram = c.transpose() * c; // dy x dy
        let eig = gram.symmetric_eigen();
        let mut best = 0;
        for i in 0..dy {
            if eig.eigenvalues[i] > eig.eigenvalues[best] {
                best = i;
            }
        }
        let sigma = eig.eigenvalues[best].max(0.0).sqrt();
        let mut v: DVector<f64> = eig.eigenvectors.column(best).into();
        v /= v.norm();
        let u = if sigma > 0.0 {
            c * &v / sigma
        } else {
            DVector::zeros(dx)
        };
        (sigma, u, v)
    }
}

/// Fit Wold PLS between pre-centered blocks. Stops early (reporting fewer
/// components) when the remaining cross-covariance is numerically zero.
pub fn pls_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, n_components: usize) -> Result<PlsModel> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(MorphoError::DimensionMismatch(format!(
            "X has {n} rows, Y has {}",
            y.nrows()
        )));
    }
    if n < 2 {
        return Err(MorphoError::Invalid(format!(
            "PLS needs at least 2 samples, got {n}"
        )));
    }
    let dx = x.ncols();
    let dy = y.ncols();
    let max_r = n_components.min(dx).min(n - 1);

    let mut xr = x.clone();
    let mut yr = y.clone();
    let mut x_loadings = Vec::new();
    let mut y_loadings = Vec::new();
    let mut coeffs = DMatrix::zeros(dx, dy);
    let scale0 = (x.norm() * y.norm()).max(1.0);

    for _ in 0..max_r {
        let c = xr.transpose() * &yr;
        let (sigma, mut u, mut v) = leading_singular_pair(&c);
        if sigma <= 1e-12 * scale0 {
            break;
        }
        // deterministic sign: largest-magnitude entry of u positive
        let before = u.clone();
        sign_fix(&mut u);
        if (u.clone() - before).norm() > 0.0 {
            v = -v;
        }

        let t = &xr * &u;
        let tt = t.norm_squared();
        if tt <= 1e-300 {
            break;
        }
        // rank-one OLS of each block on the x-scores
        let p = xr.transpose() * &t / tt;
        let q = yr.transpose() * &t / tt;
        // OLS slope of y-scores on x-scores
        let s = &yr * &v;
        let b = t.dot(&s) / tt;

        coeffs += &u * v.transpose() * b;
        xr -= &t * p.transpose();
        yr -= &t * q.transpose();
        x_loadings.push(u);
        y_loadings.push(v);
    }

    let r = x_loadings.len();
    let mut xl = DMatrix::zeros(r, dx);
    let mut yl = DMatrix::zeros(r, dy);
    for (i, u) in x_loadings.iter().enumerate() {
        xl.row_mut(i).copy_from(&u.transpose());
    }
    for (i, v) in y_loadings.iter().enumerate() {
        yl.row_mut(i).copy_from(&v.transpose());
    }
    Ok(PlsModel {
        x_loadings: xl,
        y_loadings: yl,
        regression_coeffs: coeffs,
        n_components: r,
    })
}

/// Orthonormal basis (rows) spanning the input-space loadings, via modified
/// Gram-Schmidt. Rank-deficient loading sets produce a reduced basis with a
/// warning on stderr.
pub fn pls_dr_basis(model: &PlsModel) -> Result<DMatrix<f64>> {
    if model.n_components == 0 {
        return Err(MorphoError::Invalid(
            "PLS model has no components; cannot build a DR basis".into(),
        ));
    }
    let dx = model.x_loadings.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for i in 0..model.n_components {
        let mut v = model.x_loadings.row(i).transpose();
        for q in &basis {
            let c = q.dot(&v);
            v -= q * c;
        }
        let norm = v.norm();
        if norm < 1e-10 {
            eprintln!(
                "warning: PLS loading {i} is linearly dependent; basis reduced to {} vectors",
                basis.len()
            );
            continue;
        }
        basis.push(v / norm);
    }
    let mut out = DMatrix::zeros(basis.len(), dx);
    for (i, q) in basis.iter().enumerate() {
        out.row_mut(i).copy_from(&q.transpose());
    }
    Ok(out)
}
