//! Ridge-penalized logistic regression fitted by damped Newton steps with an
//! Armijo backtracking line search. Deterministic: initialization is always at
//! zero coefficients, no randomness anywhere.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};

const GRAD_TOL: f64 = 1e-6;
const MAX_ITER: usize = 200;

/// Fitted logistic classifier. Coefficients are split between shape features
/// and confounder covariates; `confounder_coeffs` is empty when the model was
/// fitted without adjustment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    pub shape_coeffs: DVector<f64>,
    pub confounder_coeffs: DVector<f64>,
    pub intercept: f64,
    pub ridge: f64,
}

impl LogisticModel {
    pub fn n_features(&self) -> usize {
        self.shape_coeffs.len() + self.confounder_coeffs.len()
    }

    fn full_coeffs(&self) -> DVector<f64> {
        let mut w = DVector::zeros(self.n_features());
        w.rows_mut(0, self.shape_coeffs.len())
            .copy_from(&self.shape_coeffs);
        w.rows_mut(self.shape_coeffs.len(), self.confounder_coeffs.len())
            .copy_from(&self.confounder_coeffs);
        w
    }

    /// Probability of the positive class for one feature row
    /// (shape features followed by confounders, matching the fit layout).
    pub fn predict_proba(&self, features: &DVector<f64>) -> f64 {
        let z = self.full_coeffs().dot(features) + self.intercept;
        sigmoid(z)
    }

    /// Flip the decision direction (negate all coefficients and intercept).
    /// Used to pin the sign convention of derived shape patterns.
    pub fn flipped(&self) -> LogisticModel {
        LogisticModel {
            shape_coeffs: -&self.shape_coeffs,
            confounder_coeffs: -&self.confounder_coeffs,
            intercept: -self.intercept,
            ridge: self.ridge,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean cross-entropy of the observed classes plus `ridge/2 * ||w||^2`
/// (intercept unpenalized).
pub fn logistic_objective(
    features: &DMatrix<f64>,
    labels: &[u8],
    coeffs: &DVector<f64>,
    intercept: f64,
    ridge: f64,
) -> f64 {
    let n = features.nrows() as f64;
    let z = features * coeffs;
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let zi = z[i] + intercept;
        // -[y log p + (1-y) log(1-p)] in a numerically stable form:
        // log(1 + exp(zi)) - y*zi
        let softplus = if zi > 0.0 {
            zi + (-zi).exp().ln_1p()
        } else {
            zi.exp().ln_1p()
        };
        loss += softplus - f64::from(y) * zi;
    }
    loss / n + 0.5 * ridge * coeffs.norm_squared()
}

/// Gradient of [`logistic_objective`] with respect to `(coeffs, intercept)`;
/// the intercept derivative is the last entry.
pub fn logistic_gradient(
    features: &DMatrix<f64>,
    labels: &[u8],
    coeffs: &DVector<f64>,
    intercept: f64,
    ridge: f64,
) -> DVector<f64> {
    let n = features.nrows();
    let d = features.ncols();
    let z = features * coeffs;
    let mut residual = DVector::zeros(n);
    for (i, &y) in labels.iter().enumerate() {
        residual[i] = sigmoid(z[i] + intercept) - f64::from(y);
    }
    let mut grad = DVector::zeros(d + 1);
    let gw = features.transpose() * &residual / n as f64 + coeffs * ridge;
    grad.rows_mut(0, d).copy_from(&gw);
    grad[d] = residual.sum() / n as f64;
    grad
}

/// Fit on a combined feature matrix; all columns are treated as shape
/// features. See [`logistic_fit_adjusted`] for the split variant.
pub fn logistic_fit(features: &DMatrix<f64>, labels: &[u8], ridge: f64) -> Result<LogisticModel> {
    let (coeffs, intercept, _) = fit_inner(features, labels, ridge)?;
    Ok(LogisticModel {
        shape_coeffs: coeffs,
        confounder_coeffs: DVector::zeros(0),
        intercept,
        ridge,
    })
}

/// Fit on shape features concatenated with confounder covariates; the fitted
/// coefficients are split back accordingly.
pub fn logistic_fit_adjusted(
    shape_features: &DMatrix<f64>,
    confounders: &DMatrix<f64>,
    labels: &[u8],
    ridge: f64,
) -> Result<LogisticModel> {
    let n = shape_features.nrows();
    if confounders.nrows() != n {
        return Err(MorphoError::DimensionMismatch(format!(
            "shape features have {n} rows, confounders {}",
            confounders.nrows()
        )));
    }
    let d_s = shape_features.ncols();
    let d_m = confounders.ncols();
    let mut features = DMatrix::zeros(n, d_s + d_m);
    features.columns_mut(0, d_s).copy_from(shape_features);
    features.columns_mut(d_s, d_m).copy_from(confounders);
    let (coeffs, intercept, _) = fit_inner(&features, labels, ridge)?;
    Ok(LogisticModel {
        shape_coeffs: coeffs.rows(0, d_s).into_owned(),
        confounder_coeffs: coeffs.rows(d_s, d_m).into_owned(),
        intercept,
        ridge,
    })
}

/// Fit and return the per-iteration objective trace (testing hook for the
/// monotone-decrease contract).
pub fn logistic_fit_trace(
    features: &DMatrix<f64>,
    labels: &[u8],
    ridge: f64,
) -> Result<(LogisticModel, Vec<f64>)> {
    let (coeffs, intercept, trace) = fit_inner(features, labels, ridge)?;
    Ok((
        LogisticModel {
            shape_coeffs: coeffs,
            confounder_coeffs: DVector::zeros(0),
            intercept,
            ridge,
        },
        trace,
    ))
}

fn fit_inner(
    features: &DMatrix<f64>,
    labels: &[u8],
    ridge: f64,
) -> Result<(DVector<f64>, f64, Vec<f64>)> {
    let n = features.nrows();
    let d = features.ncols();
    if labels.len() != n {
        return Err(MorphoError::DimensionMismatch(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if ridge < 0.0 {
        return Err(MorphoError::InvalidConfig("ridge must be >= 0".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == n {
        return Err(MorphoError::SingleClass);
    }

    let mut w = DVector::zeros(d);
    let mut b = 0.0;
    let mut obj = logistic_objective(features, labels, &w, b, ridge);
    let mut trace = vec![obj];

    for _ in 0..MAX_ITER {
        let grad = logistic_gradient(features, labels, &w, b, ridge);
        if grad.norm() <= GRAD_TOL {
            check_separation(features, labels, &w, b, ridge, obj)?;
            return Ok((w, b, trace));
        }

        // Newton system on the (d+1)-dim extended parameter vector
        let z = features * &w;
        let mut s = DVector::zeros(n);
        for i in 0..n {
            let p = sigmoid(z[i] + b);
            s[i] = (p * (1.0 - p)).max(1e-12);
        }
        let mut h = DMatrix::zeros(d + 1, d + 1);
        let xs = {
            let mut m = features.clone();
            for i in 0..n {
                let row = m.row(i) * s[i];
                m.row_mut(i).copy_from(&row);
            }
            m
        };
        let hww = features.transpose() * &xs / n as f64;
        h.view_mut((0, 0), (d, d)).copy_from(&hww);
        for j in 0..d {
            h[(j, j)] += ridge;
        }
        let hwb = xs.row_sum().transpose() / n as f64;
        for j in 0..d {
            h[(j, d)] = hwb[j];
            h[(d, j)] = hwb[j];
        }
        h[(d, d)] = s.sum() / n as f64;

        let step = match solve_spd(&h, &grad) {
            Some(s) => s,
            None => grad.clone(), // fall back to gradient direction
        };

        // Armijo backtracking on the Newton direction
        let mut alpha = 1.0;
        let descent = grad.dot(&step);
        let mut moved = false;
        for _ in 0..60 {
            let w_new = &w - step.rows(0, d) * alpha;
            let b_new = b - alpha * step[d];
            let obj_new = logistic_objective(features, labels, &w_new, b_new, ridge);
            if obj_new <= obj - 1e-4 * alpha * descent {
                w = w_new;
                b = b_new;
                obj = obj_new;
                trace.push(obj);
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }

    let grad = logistic_gradient(features, labels, &w, b, ridge);
    if grad.norm() <= GRAD_TOL {
        check_separation(features, labels, &w, b, ridge, obj)?;
        return Ok((w, b, trace));
    }
    if ridge == 0.0 {
        return Err(MorphoError::SeparableData);
    }
    Err(MorphoError::NonConvergence(format!(
        "logistic gradient norm {:.3e} after {MAX_ITER} iterations",
        grad.norm()
    )))
}

/// Without a ridge penalty the maximum-likelihood optimum does not exist on
/// (quasi-)separated data; the gradient criterion is then met at a boundary
/// point with perfect classification and vanishing loss.
fn check_separation(
    features: &DMatrix<f64>,
    labels: &[u8],
    w: &DVector<f64>,
    b: f64,
    ridge: f64,
    objective: f64,
) -> Result<()> {
    if ridge > 0.0 {
        return Ok(());
    }
    let z = features * w;
    let all_correct = labels
        .iter()
        .enumerate()
        .all(|(i, &y)| (z[i] + b > 0.0) == (y == 1));
    if all_correct && objective < 1e-4 {
        return Err(MorphoError::SeparableData);
    }
    Ok(())
}

/// Solve `h x = g` for symmetric positive definite `h`, with diagonal jitter
/// escalation if the factorization fails.
fn solve_spd(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let d = h.nrows();
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut m = h.clone();
        if jitter > 0.0 {
            for j in 0..d {
                m[(j, j)] += jitter;
            }
        }
        if let Some(chol) = m.cholesky() {
            return Some(chol.solve(g));
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 100.0 };
    }
    None
}
