//! Confounder standardization and confounding deflation.
//!
//! A shape-prediction model (PLS from standardized confounders to centered
//! shapes) is trained on a designated subpopulation, typically the controls.
//! Deflation subtracts the confounder-predicted component from every subject
//! of both classes, leaving residuals in the original shape range.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::align::ShapeMatrix;
use crate::cohort::Cohort;
use crate::error::{MorphoError, Result};
use crate::pca::{pca_whiten_direction, PcaModel};
use crate::pls::pls_fit;

/// Which subpopulation trains the shape-prediction model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeflationTraining {
    Controls,
    Cases,
    Both,
}

impl DeflationTraining {
    pub fn as_str(self) -> &'static str {
        match self {
            DeflationTraining::Controls => "controls",
            DeflationTraining::Cases => "cases",
            DeflationTraining::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "controls" => Some(DeflationTraining::Controls),
            "cases" => Some(DeflationTraining::Cases),
            "both" => Some(DeflationTraining::Both),
            _ => None,
        }
    }

    pub fn select(self, cohort: &Cohort) -> Vec<usize> {
        match self {
            DeflationTraining::Controls => cohort.class_indices(0),
            DeflationTraining::Cases => cohort.class_indices(1),
            DeflationTraining::Both => (0..cohort.n_subjects()).collect(),
        }
    }
}

/// Per-column standardization parameters estimated on a training subset and
/// reused verbatim for every other subject.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfounderStandardization {
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl ConfounderStandardization {
    /// Estimate means and sample SDs of the named columns over `subset` rows.
    pub fn fit(cohort: &Cohort, columns: &[String], subset: &[usize]) -> Result<Self> {
        if subset.len() < 2 {
            return Err(MorphoError::Invalid(format!(
                "standardization subset has {} subjects; at least 2 required",
                subset.len()
            )));
        }
        let mut means = Vec::with_capacity(columns.len());
        let mut sds = Vec::with_capacity(columns.len());
        for name in columns {
            let j = cohort.demographics.column_index(name).ok_or_else(|| {
                MorphoError::MissingColumn {
                    column: name.clone(),
                    path: "<demographics>".into(),
                }
            })?;
            let vals: Vec<f64> = subset
                .iter()
                .map(|&i| cohort.demographics.values[(i, j)])
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            if sd <= 0.0 || !sd.is_finite() {
                return Err(MorphoError::ConstantColumn(name.clone()));
            }
            means.push(mean);
            sds.push(sd);
        }
        Ok(ConfounderStandardization {
            columns: columns.to_vec(),
            means,
            sds,
        })
    }

    /// Standardized confounder matrix (`indices.len() x m`) for the given rows.
    pub fn apply(&self, cohort: &Cohort, indices: &[usize]) -> Result<DMatrix<f64>> {
        let m = self.columns.len();
        let mut out = DMatrix::zeros(indices.len(), m);
        for (c, name) in self.columns.iter().enumerate() {
            let j = cohort.demographics.column_index(name).ok_or_else(|| {
                MorphoError::MissingColumn {
                    column: name.clone(),
                    path: "<demographics>".into(),
                }
            })?;
            for (r, &i) in indices.iter().enumerate() {
                let v = cohort.demographics.values[(i, j)];
                if !v.is_finite() {
                    return Err(MorphoError::MissingValue {
                        subject: cohort.ids[i].clone(),
                        column: name.clone(),
                    });
                }
                out[(r, c)] = (v - self.means[c]) / self.sds[c];
            }
        }
        Ok(out)
    }
}

/// Fitted confounding-deflation model: PLS regression coefficients mapping
/// standardized confounders to shape displacement, with the training-subset
/// mean and standardization parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeflationModel {
    /// `m x 3N`: row per confounder.
    pub coeffs: DMatrix<f64>,
    /// Training-subset mean shape.
    pub training_mean: DVector<f64>,
    pub standardization: ConfounderStandardization,
    pub training_subset: Vec<String>,
    pub n_pls_components: usize,
}

impl DeflationModel {
    /// Predicted shape for standardized confounder row `m_std`:
    /// `training_mean + m_std^T coeffs`. Equals the training mean exactly at
    /// mean confounders.
    pub fn predict_shape(&self, m_std: &DVector<f64>) -> DVector<f64> {
        &self.training_mean + self.coeffs.transpose() * m_std
    }

    pub fn confounder_index(&self, name: &str) -> Option<usize> {
        self.standardization.columns.iter().position(|c| c == name)
    }
}

/// Train the shape-prediction model on one subpopulation.
///
/// Confounders are standardized on the training subset; shapes are only
/// centered (on the training-subset mean). The number of PLS components
/// defaults to the confounder count.
pub fn deflation_fit(
    cohort: &Cohort,
    confounders: &[String],
    training: &[usize],
    n_components: Option<usize>,
) -> Result<DeflationModel> {
    if training.is_empty() {
        return Err(MorphoError::Invalid(
            "empty deflation training subset".into(),
        ));
    }
    if confounders.is_empty() {
        return Err(MorphoError::InvalidConfig(
            "no confounder columns given for deflation".into(),
        ));
    }
    let standardization = ConfounderStandardization::fit(cohort, confounders, training)?;
    let m_std = standardization.apply(cohort, training)?;

    let n = training.len();
    let p = cohort.n_coords();
    let mut shapes = DMatrix::zeros(n, p);
    for (r, &i) in training.iter().enumerate() {
        shapes.row_mut(r).copy_from(&cohort.shapes.row(i));
    }
    let training_mean: DVector<f64> = shapes.row_mean().transpose();
    let centered = &shapes - DVector::from_element(n, 1.0) * training_mean.transpose();

    let r = n_components.unwrap_or(confounders.len());
    let pls = pls_fit(&m_std, &centered, r)?;
    Ok(DeflationModel {
        coeffs: pls.regression_coeffs,
        training_mean,
        standardization,
        training_subset: training.iter().map(|&i| cohort.ids[i].clone()).collect(),
        n_pls_components: pls.n_components,
    })
}

/// Remove the confounder-predicted shape component from every subject:
/// `X_res = X - m_std^T coeffs`, keeping residuals in the original range.
/// Consumes raw cohorts only; re-deflating an already deflated cohort is an
/// error.
pub fn deflate(model: &DeflationModel, cohort: &Cohort) -> Result<Cohort> {
    if cohort.deflated {
        return Err(MorphoError::AlreadyDeflated);
    }
    let residuals = deflate_shapes(model, cohort)?;
    cohort.with_shapes(residuals, true)
}

/// The residual shape matrix for all subjects of `cohort`.
pub fn deflate_shapes(model: &DeflationModel, cohort: &Cohort) -> Result<ShapeMatrix> {
    let all: Vec<usize> = (0..cohort.n_subjects()).collect();
    let m_std = model.standardization.apply(cohort, &all)?;
    Ok(&cohort.shapes - m_std * &model.coeffs)
}

/// The whitened, normalized shape pattern most associated with one
/// confounder, visualized as if it were a discriminating shape.
pub fn confounder_pattern(
    model: &DeflationModel,
    confounder: &str,
    pca: &PcaModel,
    k_modes: usize,
) -> Result<DVector<f64>> {
    let idx = model
        .confounder_index(confounder)
        .ok_or_else(|| MorphoError::MissingColumn {
            column: confounder.to_string(),
            path: "<deflation model>".into(),
        })?;
    let row = model.coeffs.row(idx).transpose();
    if row.norm() <= 1e-300 {
        return Err(MorphoError::Invalid(format!(
            "confounder {confounder:?} has a zero coefficient row"
        )));
    }
    pca_whiten_direction(pca, &row, k_modes)
}
