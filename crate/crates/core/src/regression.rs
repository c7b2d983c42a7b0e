//! Regression mode of the framework: predict a continuous variable from
//! shape with a PLS regression, and synthesize the representative shape of a
//! target value as the minimal-Mahalanobis-distance shape constrained to
//! predict that value.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::align::ShapeMatrix;
use crate::error::{MorphoError, Result};
use crate::mesh::ShapeVector;
use crate::pca::{pca_fit, PcaModel};
use crate::pls::{pls_fit, PlsModel};

/// Fitted shape-to-value regression. The PCA (restricted to the modes
/// covering 99% variance) supplies the covariance for the Mahalanobis metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeRegressionModel {
    pub pls: PlsModel,
    pub mean_shape: DVector<f64>,
    pub value_mean: f64,
    pub value_sd: f64,
    pub pca_for_metric: PcaModel,
}

impl ShapeRegressionModel {
    /// Flattened regression coefficients (3N-vector).
    pub fn coefficients(&self) -> DVector<f64> {
        self.pls.regression_coeffs.column(0).into_owned()
    }

    /// Predicted value for one shape.
    pub fn predict(&self, shape: &ShapeVector) -> Result<f64> {
        if shape.len() != self.mean_shape.len() {
            return Err(MorphoError::DimensionMismatch(format!(
                "shape has length {}, model {}",
                shape.len(),
                self.mean_shape.len()
            )));
        }
        Ok(self.value_mean + self.coefficients().dot(&(&shape.coords - &self.mean_shape)))
    }
}

/// Fit the PLS shape-to-value regression (no confounders in this model).
pub fn regression_fit(
    shapes: &ShapeMatrix,
    values: &[f64],
    n_components: usize,
) -> Result<ShapeRegressionModel> {
    let n = shapes.nrows();
    if values.len() != n {
        return Err(MorphoError::DimensionMismatch(format!(
            "{n} shapes but {} target values",
            values.len()
        )));
    }
    if n < n_components + 2 {
        return Err(MorphoError::Invalid(format!(
            "regression needs at least n_components + 2 = {} subjects, got {n}",
            n_components + 2
        )));
    }
    let value_mean = values.iter().sum::<f64>() / n as f64;
    let value_var = values.iter().map(|v| (v - value_mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if value_var <= 0.0 {
        return Err(MorphoError::ConstantColumn("<regression target>".into()));
    }
    let mean_shape: DVector<f64> = shapes.row_mean().transpose();
    let centered = shapes - DVector::from_element(n, 1.0) * mean_shape.transpose();
    let y = DMatrix::from_fn(n, 1, |i, _| values[i] - value_mean);
    let pls = pls_fit(&centered, &y, n_components)?;

    // PCA metric restricted to the 99%-variance modes
    let full = pca_fit(shapes, (n - 1).min(shapes.ncols()))?;
    let k = full.modes_for_variance(0.99);
    let pca_for_metric = PcaModel {
        mean: full.mean.clone(),
        components: full.components.rows(0, k).into_owned(),
        variances: full.variances.rows(0, k).into_owned(),
    };
    Ok(ShapeRegressionModel {
        pls,
        mean_shape,
        value_mean,
        value_sd: value_var.sqrt(),
        pca_for_metric,
    })
}

/// The shape with minimal Mahalanobis distance to the mean (PCA-subspace
/// pseudo-inverse covariance) among all shapes predicting value `b`:
/// `x = mean + (b - c) * Sigma w / (w^T Sigma w)`.
///
/// Targets more than three training standard deviations from the mean are
/// allowed but flagged on stderr.
pub fn representative_for_value(model: &ShapeRegressionModel, b: f64) -> Result<ShapeVector> {
    if !b.is_finite() {
        return Err(MorphoError::Invalid("target value must be finite".into()));
    }
    if (b - model.value_mean).abs() > 3.0 * model.value_sd {
        eprintln!(
            "warning: target {b} is more than 3 SD from the training mean {:.3}",
            model.value_mean
        );
    }
    let w = model.coefficients();
    let pca = &model.pca_for_metric;
    // Sigma w = sum_k var_k p_k (p_k . w)
    let mut sigma_w = DVector::zeros(w.len());
    let mut denom = 0.0;
    for k in 0..pca.n_components() {
        let p_k = pca.components.row(k).transpose();
        let c = p_k.dot(&w);
        sigma_w += p_k * (pca.variances[k] * c);
        denom += pca.variances[k] * c * c;
    }
    if denom <= 1e-300 {
        return Err(MorphoError::DegenerateMetric);
    }
    let delta = b - model.value_mean;
    ShapeVector::new(&model.mean_shape + sigma_w * (delta / denom))
}

/// Seeded k-fold cross-validated coefficient of determination.
pub fn regression_cv_r2(
    shapes: &ShapeMatrix,
    values: &[f64],
    n_components: usize,
    folds: usize,
    seed: u64,
) -> Result<f64> {
    let n = shapes.nrows();
    if folds < 2 || folds > n {
        return Err(MorphoError::InvalidConfig(format!(
            "folds = {folds} out of range for {n} subjects"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let overall_mean = values.iter().sum::<f64>() / n as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let val: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let mut train_shapes = DMatrix::zeros(train.len(), shapes.ncols());
        for (r, &i) in train.iter().enumerate() {
            train_shapes.row_mut(r).copy_from(&shapes.row(i));
        }
        let train_values: Vec<f64> = train.iter().map(|&i| values[i]).collect();
        let model = regression_fit(&train_shapes, &train_values, n_components)?;
        for &i in &val {
            let pred = model.predict(&ShapeVector {
                coords: shapes.row(i).transpose(),
            })?;
            ss_res += (values[i] - pred).powi(2);
            ss_tot += (values[i] - overall_mean).powi(2);
        }
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Versioned on-disk form of the regression model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionModelFile {
    pub kind: String,
    pub version: u32,
    pub target_column: String,
    pub n_components: usize,
    pub template: crate::mesh::TriMesh,
    pub model: ShapeRegressionModel,
}

pub const REGRESSION_MODEL_KIND: &str = "regression_model";

impl RegressionModelFile {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| MorphoError::Invalid(format!("model serialization failed: {e}")))?;
        std::fs::write(path, json).map_err(|e| MorphoError::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MorphoError::io(path, e))?;
        let model: RegressionModelFile = serde_json::from_str(&text)
            .map_err(|e| MorphoError::parse("model JSON", path, e.to_string()))?;
        if model.kind != REGRESSION_MODEL_KIND {
            return Err(MorphoError::parse(
                "model JSON",
                path,
                format!("kind {:?} is not a regression model", model.kind),
            ));
        }
        Ok(model)
    }
}
