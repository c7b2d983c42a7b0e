//! Principal component analysis with covariance whitening of directions.
//!
//! For tall-thin shape data (`n << 3N`) the eigendecomposition is done on the
//! `n x n` Gram matrix; for wide-short data on the `p x p` covariance. Both
//! routes yield identical components up to sign, fixed deterministically.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::align::ShapeMatrix;
use crate::error::{MorphoError, Result};

/// Fitted PCA: centering mean, orthonormal component rows, descending
/// per-component variances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `K x p`, orthonormal rows, leading right singular directions.
    pub components: DMatrix<f64>,
    /// Descending sample variances (singular values squared over `n - 1`).
    pub variances: DVector<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    /// Scores of one shape: `P (x - mean)`.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.components * (x - &self.mean)
    }

    /// Row-wise scores for a data matrix.
    pub fn project_all(&self, data: &ShapeMatrix) -> DMatrix<f64> {
        let n = data.nrows();
        let centered = data - DVector::from_element(n, 1.0) * self.mean.transpose();
        centered * self.components.transpose()
    }

    /// `mean + P^T z`.
    pub fn reconstruct(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.mean + self.components.transpose() * z
    }

    /// Smallest number of leading modes whose variances reach `fraction` of
    /// the total fitted variance.
    pub fn modes_for_variance(&self, fraction: f64) -> usize {
        let total: f64 = self.variances.iter().sum();
        if total <= 0.0 {
            return self.n_components().min(1);
        }
        let mut acc = 0.0;
        for (k, v) in self.variances.iter().enumerate() {
            acc += v;
            if acc >= fraction * total {
                return k + 1;
            }
        }
        self.n_components()
    }
}

/// Versioned on-disk form of a PCA model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaModelFile {
    pub kind: String,
    pub version: u32,
    pub mean: DVector<f64>,
    pub components: DMatrix<f64>,
    pub variances: DVector<f64>,
}

pub const PCA_MODEL_KIND: &str = "pca_model";

impl PcaModelFile {
    pub fn from_model(model: &PcaModel) -> Self {
        PcaModelFile {
            kind: PCA_MODEL_KIND.to_string(),
            version: 1,
            mean: model.mean.clone(),
            components: model.components.clone(),
            variances: model.variances.clone(),
        }
    }

    pub fn into_model(self) -> PcaModel {
        PcaModel {
            mean: self.mean,
            components: self.components,
            variances: self.variances,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| MorphoError::Invalid(format!("model serialization failed: {e}")))?;
        std::fs::write(path, json).map_err(|e| MorphoError::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MorphoError::io(path, e))?;
        let file: PcaModelFile = serde_json::from_str(&text)
            .map_err(|e| MorphoError::parse("model JSON", path, e.to_string()))?;
        if file.kind != PCA_MODEL_KIND {
            return Err(MorphoError::parse(
                "model JSON",
                path,
                format!("kind {:?} is not a PCA model", file.kind),
            ));
        }
        Ok(file)
    }
}

/// Fix the sign of a direction so its largest-magnitude entry is positive.
pub(crate) fn sign_fix(v: &mut DVector<f64>) {
    let mut best = 0usize;
    let mut mag = 0.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > mag {
            mag = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        *v = -&*v;
    }
}

/// Fit PCA on row-per-sample data.
pub fn pca_fit(data: &ShapeMatrix, n_components: usize) -> Result<PcaModel> {
    let n = data.nrows();
    let p = data.ncols();
    if n < 2 {
        return Err(MorphoError::Invalid(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }
    let max_k = (n - 1).min(p);
    if n_components == 0 || n_components > max_k {
        return Err(MorphoError::InvalidConfig(format!(
            "n_components = {n_components} out of range; must be in 1..={max_k} (min(n - 1, p))"
        )));
    }
    let mean: DVector<f64> = data.row_mean().transpose();
    let centered = data - DVector::from_element(n, 1.0) * mean.transpose();

    let (mut components, variances) = if p <= n {
        // covariance route: eigen of (p x p) A^T A / (n - 1)
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let k = n_components.min(p);
        let mut comps = DMatrix::zeros(k, p);
        let mut vars = DVector::zeros(k);
        for (row, &idx) in order.iter().take(k).enumerate() {
            comps
                .row_mut(row)
                .copy_from(&eig.eigenvectors.column(idx).transpose());
            vars[row] = eig.eigenvalues[idx].max(0.0);
        }
        (comps, vars)
    } else {
        // Gram route: eigen of (n x n) A A^T, components = A^T u / sqrt(lambda)
        let gram = &centered * centered.transpose();
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let k = n_components.min(n - 1);
        let mut comps = DMatrix::zeros(k, p);
        let mut vars = DVector::zeros(k);
        let scale = eig.eigenvalues[order[0]].max(1.0);
        for (row, &idx) in order.iter().take(k).enumerate() {
            let lambda = eig.eigenvalues[idx].max(0.0);
            if lambda > 1e-12 * scale {
                let dir = centered.transpose() * eig.eigenvectors.column(idx) / lambda.sqrt();
                comps.row_mut(row).copy_from(&dir.transpose());
            }
            // near-zero modes keep a zero row; variance is ~0 anyway
            vars[row] = lambda / (n as f64 - 1.0);
        }
        (comps, vars)
    };

    for i in 0..components.nrows() {
        let mut row = components.row(i).transpose();
        sign_fix(&mut row);
        components.row_mut(i).copy_from(&row.transpose());
    }
    // enforce descending order strictly (symmetric_eigen order is unspecified)
    for i in 1..variances.len() {
        debug_assert!(variances[i] <= variances[i - 1] + 1e-9);
    }
    Ok(PcaModel {
        mean,
        components,
        variances,
    })
}

/// Whiten a direction by the PCA covariance square root restricted to the
/// first `k_modes` components, then normalize:
/// `Sigma^{1/2} w / || Sigma^{1/2} w ||` with
/// `Sigma^{1/2} = sum_k sqrt(var_k) p_k p_k^T`.
pub fn pca_whiten_direction(
    model: &PcaModel,
    w: &DVector<f64>,
    k_modes: usize,
) -> Result<DVector<f64>> {
    if k_modes == 0 || k_modes > model.n_components() {
        return Err(MorphoError::InvalidConfig(format!(
            "k_modes = {k_modes} out of range (model has {} components)",
            model.n_components()
        )));
    }
    if w.len() != model.dim() {
        return Err(MorphoError::DimensionMismatch(format!(
            "direction has length {}, model dimension is {}",
            w.len(),
            model.dim()
        )));
    }
    let mut out = DVector::zeros(model.dim());
    for k in 0..k_modes {
        let p_k = model.components.row(k).transpose();
        let coeff = p_k.dot(w) * model.variances[k].max(0.0).sqrt();
        out += p_k * coeff;
    }
    let norm = out.norm();
    if norm <= 1e-300 {
        return Err(MorphoError::ZeroAfterWhitening);
    }
    Ok(out / norm)
}
