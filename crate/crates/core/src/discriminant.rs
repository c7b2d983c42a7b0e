//! The end-to-end classification pipeline: optional confounding deflation,
//! linear dimensionality reduction (PCA, PLS, or PCA followed by PLS),
//! logistic classification with optional confounder adjustment, coefficient
//! back-projection to full shape space, covariance whitening, scoring,
//! representative shapes and cross-validated model selection.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::align::ShapeMatrix;
use crate::cohort::Cohort;
use crate::confound::{
    deflate, deflate_shapes, deflation_fit, ConfounderStandardization, DeflationModel,
    DeflationTraining,
};
use crate::error::{MorphoError, Result};
use crate::logistic::{logistic_fit, logistic_fit_adjusted, LogisticModel};
use crate::mesh::{ShapeVector, TriMesh};
use crate::pca::{pca_fit, pca_whiten_direction, PcaModel};
use crate::pls::{pls_dr_basis, pls_fit, PlsModel};

/// Dimensionality-reduction method for the shape block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrMethod {
    Pca,
    Pls,
    PcaPls,
}

impl DrMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DrMethod::Pca => "pca",
            DrMethod::Pls => "pls",
            DrMethod::PcaPls => "pca+pls",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pca" => Some(DrMethod::Pca),
            "pls" => Some(DrMethod::Pls),
            "pca+pls" | "pca_pls" => Some(DrMethod::PcaPls),
            _ => None,
        }
    }
}

/// Full pipeline configuration. Defaults follow the best cross-validated
/// configuration (20 PCA modes feeding a 3-component PLS).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dr_method: DrMethod,
    pub pca_modes: usize,
    pub pls_modes: usize,
    /// Add standardized confounders as classifier covariates.
    pub adjust: bool,
    /// Remove confounder-predicted shape before DR.
    pub deflate: bool,
    pub deflate_train: DeflationTraining,
    /// PLS components for the deflation model; defaults to the confounder count.
    pub deflate_components: Option<usize>,
    pub confounders: Vec<String>,
    pub ridge: f64,
    pub cv_folds: usize,
    pub seed: u64,
    /// Modes used for whitening; defaults to the modes covering 99% variance.
    pub whiten_modes: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dr_method: DrMethod::PcaPls,
            pca_modes: 20,
            pls_modes: 3,
            adjust: false,
            deflate: false,
            deflate_train: DeflationTraining::Controls,
            deflate_components: None,
            confounders: Vec::new(),
            ridge: 1e-6,
            cv_folds: 10,
            seed: 0,
            whiten_modes: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dr_method == DrMethod::PcaPls && self.pls_modes > self.pca_modes {
            return Err(MorphoError::InvalidConfig(format!(
                "pca+pls requires pls_modes <= pca_modes ({} > {})",
                self.pls_modes, self.pca_modes
            )));
        }
        if (self.adjust || self.deflate) && self.confounders.is_empty() {
            return Err(MorphoError::InvalidConfig(
                "adjust/deflate requested but no confounder columns given".into(),
            ));
        }
        if self.ridge < 0.0 {
            return Err(MorphoError::InvalidConfig("ridge must be >= 0".into()));
        }
        if self.cv_folds < 2 {
            return Err(MorphoError::InvalidConfig("cv_folds must be >= 2".into()));
        }
        Ok(())
    }
}

/// The most discriminating shape pattern: raw back-projected classifier
/// coefficients and the whitened unit pattern used for visualization.
/// `score_sd` is the standard deviation of the training shapes projected onto
/// the unit pattern, in millimetres; representative shapes are clamped to
/// three of them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscriminativePattern {
    pub raw_coeffs: DVector<f64>,
    pub standardized: DVector<f64>,
    pub score_sd: f64,
    pub mean_shape: ShapeVector,
}

/// Everything produced by one pipeline fit.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub config: PipelineConfig,
    pub logistic: LogisticModel,
    pub pattern: DiscriminativePattern,
    /// PCA of the (possibly deflated) training shapes; used for DR when the
    /// method includes PCA and always for whitening.
    pub pca: PcaModel,
    pub pls: Option<PlsModel>,
    /// Orthonormal rows; in shape space for PLS, in PCA-score space for
    /// PCA+PLS.
    pub pls_basis: Option<DMatrix<f64>>,
    pub deflation: Option<DeflationModel>,
    pub standardization: Option<ConfounderStandardization>,
    pub whiten_modes: usize,
}

/// Back-project reduced-space coefficients to full shape space through the
/// transposed orthonormal embeddings: PLS basis first (when present), then
/// the leading PCA components (when present).
pub fn backproject(
    w_red: &DVector<f64>,
    pca: Option<&PcaModel>,
    pls_basis: Option<&DMatrix<f64>>,
) -> Result<DVector<f64>> {
    let mid = match pls_basis {
        Some(basis) => {
            if w_red.len() != basis.nrows() {
                return Err(MorphoError::DimensionMismatch(format!(
                    "coefficients have {} entries, PLS basis has {} vectors",
                    w_red.len(),
                    basis.nrows()
                )));
            }
            basis.transpose() * w_red
        }
        None => w_red.clone(),
    };
    match pca {
        Some(model) => {
            if mid.len() > model.n_components() {
                return Err(MorphoError::DimensionMismatch(format!(
                    "coefficients need {} PCA components, model has {}",
                    mid.len(),
                    model.n_components()
                )));
            }
            let p_k = model.components.rows(0, mid.len());
            Ok(p_k.transpose() * mid)
        }
        None => Ok(mid),
    }
}

/// Remodelling score of one aligned shape: `<w_X, x - mean>` with the raw
/// (un-whitened) coefficients.
pub fn score(pattern: &DiscriminativePattern, shape: &ShapeVector) -> Result<f64> {
    if shape.len() != pattern.raw_coeffs.len() {
        return Err(MorphoError::DimensionMismatch(format!(
            "shape has length {}, pattern {}",
            shape.len(),
            pattern.raw_coeffs.len()
        )));
    }
    Ok(pattern
        .raw_coeffs
        .dot(&(&shape.coords - &pattern.mean_shape.coords)))
}

/// Representative shape `mean + lambda * w_hat`. `lambda` is in millimetres
/// along the unit pattern and is clamped to three training standard
/// deviations with a warning.
pub fn representative_shape(pattern: &DiscriminativePattern, lambda: f64) -> ShapeVector {
    let limit = 3.0 * pattern.score_sd;
    let used = if lambda.abs() > limit && limit > 0.0 {
        let clamped = lambda.signum() * limit;
        eprintln!("warning: lambda {lambda} outside 3 standard deviations; clamped to {clamped}");
        clamped
    } else {
        lambda
    };
    ShapeVector {
        coords: &pattern.mean_shape.coords + &pattern.standardized * used,
    }
}

/// Dot product of the standardized unit patterns; coincides with the Pearson
/// correlation of the raw scores over the population used for whitening.
pub fn pattern_similarity(a: &DiscriminativePattern, b: &DiscriminativePattern) -> Result<f64> {
    if a.standardized.len() != b.standardized.len() {
        return Err(MorphoError::DimensionMismatch(format!(
            "patterns live in different spaces ({} vs {})",
            a.standardized.len(),
            b.standardized.len()
        )));
    }
    Ok(a.standardized.dot(&b.standardized))
}

/// Reduced shape features for the given shapes under a fitted pipeline's DR.
pub(crate) fn reduced_features(pipe: &FittedPipeline, shapes: &ShapeMatrix) -> DMatrix<f64> {
    let n = shapes.nrows();
    let centered = shapes - DVector::from_element(n, 1.0) * pipe.pca.mean.transpose();
    match pipe.config.dr_method {
        DrMethod::Pca => {
            let p_k = pipe.pca.components.rows(0, pipe.config.pca_modes);
            &centered * p_k.transpose()
        }
        DrMethod::Pls => {
            let basis = pipe
                .pls_basis
                .as_ref()
                .expect("PLS pipeline carries a basis");
            &centered * basis.transpose()
        }
        DrMethod::PcaPls => {
            let p_k = pipe.pca.components.rows(0, pipe.config.pca_modes);
            let scores = &centered * p_k.transpose();
            let basis = pipe
                .pls_basis
                .as_ref()
                .expect("PCA+PLS pipeline carries a basis");
            scores * basis.transpose()
        }
    }
}

/// Fit the full pipeline on an aligned cohort.
pub fn fit_pipeline(cohort: &Cohort, config: &PipelineConfig) -> Result<FittedPipeline> {
    config.validate()?;
    if !cohort.has_both_classes() {
        return Err(MorphoError::SingleClass);
    }
    let n = cohort.n_subjects();
    let p = cohort.n_coords();

    // 1. optional confounding deflation
    let (working, deflation) = if config.deflate {
        let training = config.deflate_train.select(cohort);
        let model = deflation_fit(
            cohort,
            &config.confounders,
            &training,
            config.deflate_components,
        )?;
        (deflate(&model, cohort)?, Some(model))
    } else {
        (cohort.clone(), None)
    };

    // 2. dimensionality reduction; the PCA doubles as the whitening estimate
    let max_modes = (n - 1).min(p);
    if config.dr_method != DrMethod::Pls && config.pca_modes > max_modes {
        return Err(MorphoError::InvalidConfig(format!(
            "pca_modes = {} exceeds min(n - 1, 3N) = {max_modes}",
            config.pca_modes
        )));
    }
    let pca = pca_fit(&working.shapes, max_modes)?;
    let centered = &working.shapes - DVector::from_element(n, 1.0) * pca.mean.transpose();
    let labels_centered = {
        let mean = working.labels.iter().map(|&l| f64::from(l)).sum::<f64>() / n as f64;
        DMatrix::from_fn(n, 1, |i, _| f64::from(working.labels[i]) - mean)
    };

    let (features, pls, pls_basis): (DMatrix<f64>, Option<PlsModel>, Option<DMatrix<f64>>) =
        match config.dr_method {
            DrMethod::Pca => {
                let p_k = pca.components.rows(0, config.pca_modes);
                (&centered * p_k.transpose(), None, None)
            }
            DrMethod::Pls => {
                let pls = pls_fit(&centered, &labels_centered, config.pls_modes)?;
                let basis = pls_dr_basis(&pls)?;
                let features = &centered * basis.transpose();
                (features, Some(pls), Some(basis))
            }
            DrMethod::PcaPls => {
                // prefilter with PCA; scores deliberately not standardized
                let p_k = pca.components.rows(0, config.pca_modes).into_owned();
                let scores = &centered * p_k.transpose();
                let pls = pls_fit(&scores, &labels_centered, config.pls_modes)?;
                let basis = pls_dr_basis(&pls)?;
                let features = scores * basis.transpose();
                (features, Some(pls), Some(basis))
            }
        };

    // 3. logistic classification, optionally adjusted by confounders
    let (logistic, standardization) = if config.adjust {
        let all: Vec<usize> = (0..n).collect();
        let std = ConfounderStandardization::fit(&working, &config.confounders, &all)?;
        let m_std = std.apply(&working, &all)?;
        (
            logistic_fit_adjusted(&features, &m_std, &working.labels, config.ridge)?,
            Some(std),
        )
    } else {
        (
            logistic_fit(&features, &working.labels, config.ridge)?,
            None,
        )
    };

    // 4. back-projection and standardization
    let pca_for_backproject = match config.dr_method {
        DrMethod::Pls => None,
        _ => Some(&pca),
    };
    let mut raw = backproject(
        &logistic.shape_coeffs,
        pca_for_backproject,
        pls_basis.as_ref(),
    )?;
    let whiten_modes = config
        .whiten_modes
        .unwrap_or_else(|| pca.modes_for_variance(0.99))
        .min(pca.n_components());
    let mut standardized = pca_whiten_direction(&pca, &raw, whiten_modes)?;

    // sign convention: mean case score is positive
    let mut case_sum = 0.0;
    let mut control_sum = 0.0;
    let (mut n_case, mut n_control) = (0.0, 0.0);
    for i in 0..n {
        let s = raw.dot(&(working.shapes.row(i).transpose() - &pca.mean));
        if working.labels[i] == 1 {
            case_sum += s;
            n_case += 1.0;
        } else {
            control_sum += s;
            n_control += 1.0;
        }
    }
    if case_sum / n_case < control_sum / n_control {
        raw = -raw;
        standardized = -standardized;
    }

    // spread of the training shapes along the unit pattern
    let proj: Vec<f64> = (0..n)
        .map(|i| standardized.dot(&(working.shapes.row(i).transpose() - &pca.mean)))
        .collect();
    let proj_mean = proj.iter().sum::<f64>() / n as f64;
    let score_sd =
        (proj.iter().map(|v| (v - proj_mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();

    let pattern = DiscriminativePattern {
        raw_coeffs: raw,
        standardized,
        score_sd,
        mean_shape: ShapeVector {
            coords: pca.mean.clone(),
        },
    };
    Ok(FittedPipeline {
        config: config.clone(),
        logistic,
        pattern,
        pca,
        pls,
        pls_basis,
        deflation,
        standardization,
        whiten_modes,
    })
}

/// Mean validation cross-entropy over seeded stratified folds. All fitting
/// (deflation, DR, logistic) happens inside each training fold.
pub fn cross_validate(cohort: &Cohort, config: &PipelineConfig) -> Result<f64> {
    config.validate()?;
    let folds = config.cv_folds;
    let controls = cohort.class_indices(0);
    let cases = cohort.class_indices(1);
    if controls.len() < folds || cases.len() < folds {
        return Err(MorphoError::InvalidConfig(format!(
            "{folds} folds exceed a class count ({} controls, {} cases)",
            controls.len(),
            cases.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut fold_of = vec![0usize; cohort.n_subjects()];
    for class in [&controls, &cases] {
        let mut idx = class.clone();
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            fold_of[i] = pos % folds;
        }
    }

    let mut losses: Vec<f64> = Vec::with_capacity(cohort.n_subjects());
    for f in 0..folds {
        let train: Vec<usize> = (0..cohort.n_subjects())
            .filter(|&i| fold_of[i] != f)
            .collect();
        let val: Vec<usize> = (0..cohort.n_subjects())
            .filter(|&i| fold_of[i] == f)
            .collect();
        let train_cohort = cohort.subset(&train);
        let val_cohort = cohort.subset(&val);
        let pipe = fit_pipeline(&train_cohort, config)?;
        losses.extend(validation_losses(&pipe, &val_cohort)?);
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Per-subject cross-entropy of a fitted pipeline on held-out subjects.
pub(crate) fn validation_losses(pipe: &FittedPipeline, val: &Cohort) -> Result<Vec<f64>> {
    let shapes = match &pipe.deflation {
        Some(model) => deflate_shapes(model, val)?,
        None => val.shapes.clone(),
    };
    let features = reduced_features(pipe, &shapes);
    let m_std = match &pipe.standardization {
        Some(std) => {
            let all: Vec<usize> = (0..val.n_subjects()).collect();
            Some(std.apply(val, &all)?)
        }
        None => None,
    };
    let mut losses = Vec::with_capacity(val.n_subjects());
    for i in 0..val.n_subjects() {
        let mut feats: Vec<f64> = features.row(i).iter().copied().collect();
        if let Some(m) = &m_std {
            feats.extend(m.row(i).iter());
        }
        let x = DVector::from_vec(feats);
        let p = pipe.logistic.predict_proba(&x).clamp(1e-12, 1.0 - 1e-12);
        let y = f64::from(val.labels[i]);
        losses.push(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()));
    }
    Ok(losses)
}

/// Versioned on-disk form of a fitted pipeline (everything needed to score
/// shapes and export representative meshes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscriminantModelFile {
    pub kind: String,
    pub version: u32,
    pub config: PipelineConfig,
    pub template: TriMesh,
    pub mean: DVector<f64>,
    pub raw_coeffs: DVector<f64>,
    pub standardized: DVector<f64>,
    pub score_sd: f64,
    pub logistic: LogisticModel,
    pub standardization: Option<ConfounderStandardization>,
    pub deflation: Option<DeflationModel>,
    pub whiten_modes: usize,
}

pub const DISCRIMINANT_MODEL_KIND: &str = "discriminant_model";
pub const MODEL_VERSION: u32 = 1;

impl DiscriminantModelFile {
    pub fn from_fit(pipe: &FittedPipeline, template: &TriMesh) -> Self {
        DiscriminantModelFile {
            kind: DISCRIMINANT_MODEL_KIND.to_string(),
            version: MODEL_VERSION,
            config: pipe.config.clone(),
            template: template.clone(),
            mean: pipe.pattern.mean_shape.coords.clone(),
            raw_coeffs: pipe.pattern.raw_coeffs.clone(),
            standardized: pipe.pattern.standardized.clone(),
            score_sd: pipe.pattern.score_sd,
            logistic: pipe.logistic.clone(),
            standardization: pipe.standardization.clone(),
            deflation: pipe.deflation.clone(),
            whiten_modes: pipe.whiten_modes,
        }
    }

    pub fn pattern(&self) -> DiscriminativePattern {
        DiscriminativePattern {
            raw_coeffs: self.raw_coeffs.clone(),
            standardized: self.standardized.clone(),
            score_sd: self.score_sd,
            mean_shape: ShapeVector {
                coords: self.mean.clone(),
            },
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| MorphoError::Invalid(format!("model serialization failed: {e}")))?;
        std::fs::write(path, json).map_err(|e| MorphoError::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MorphoError::io(path, e))?;
        let model: DiscriminantModelFile = serde_json::from_str(&text)
            .map_err(|e| MorphoError::parse("model JSON", path, e.to_string()))?;
        if model.kind != DISCRIMINANT_MODEL_KIND {
            return Err(MorphoError::parse(
                "model JSON",
                path,
                format!("kind {:?} is not a discriminant model", model.kind),
            ));
        }
        if model.version != MODEL_VERSION {
            return Err(MorphoError::parse(
                "model JSON",
                path,
                format!("unsupported model version {}", model.version),
            ));
        }
        Ok(model)
    }
}

#[cfg(test)]
pub(crate) mod testkit {
    use super::*;
    use crate::cohort::Demographics;
    use crate::mesh::RegionLabel;
    use rand::Rng;

    /// Vector-space synthetic cohort: class effect along a known unit
    /// direction, optional confounder effect along another, iid noise.
    pub struct VectorCohort {
        pub cohort: Cohort,
        pub class_dir: DVector<f64>,
        pub conf_dir: DVector<f64>,
    }

    pub struct VectorCohortSpec {
        pub n_per_class: usize,
        pub dim: usize,
        pub class_magnitude: f64,
        pub conf_slope: f64,
        /// Added to the confounder mean of the case class (imbalance).
        pub conf_case_shift: f64,
        /// Cosine between the confounder and class directions (0 = orthogonal).
        pub conf_overlap: f64,
        pub noise_sd: f64,
    }

    pub fn make_vector_cohort(rng: &mut impl Rng, spec: &VectorCohortSpec) -> VectorCohort {
        let p = spec.dim;
        let n = 2 * spec.n_per_class;
        let class_dir = DVector::from_fn(p, |_, _| rng.gen::<f64>() * 2.0 - 1.0).normalize();
        let mut ortho = DVector::from_fn(p, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let c = class_dir.dot(&ortho);
        ortho -= &class_dir * c;
        let ortho = ortho.normalize();
        let conf_dir = (&class_dir * spec.conf_overlap
            + ortho * (1.0 - spec.conf_overlap * spec.conf_overlap).sqrt())
        .normalize();

        let template = DVector::from_fn(p, |i, _| (i as f64 * 0.61).cos() * 8.0);
        let mut shapes = DMatrix::zeros(n, p);
        let mut demo = DMatrix::zeros(n, 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = u8::from(i >= spec.n_per_class);
            labels.push(label);
            let conf: f64 = rng.gen::<f64>() * 2.0 - 1.0
                + if label == 1 {
                    spec.conf_case_shift
                } else {
                    0.0
                };
            demo[(i, 0)] = conf;
            demo[(i, 1)] = f64::from(label);
            let mut x = template.clone()
                + &class_dir * (f64::from(label) * spec.class_magnitude)
                + &conf_dir * (spec.conf_slope * conf);
            for k in 0..p {
                x[k] += (rng.gen::<f64>() * 2.0 - 1.0) * spec.noise_sd;
            }
            shapes.row_mut(i).copy_from(&x.transpose());
        }
        let mesh = crate::mesh::TriMesh::new(
            (0..p / 3).map(|i| [i as f64, 0.0, 0.0]).collect(),
            vec![],
            vec![RegionLabel::Rv; p / 3],
        )
        .unwrap();
        VectorCohort {
            cohort: Cohort {
                ids: (0..n).map(|i| format!("s{i:03}")).collect(),
                shapes,
                template: mesh,
                demographics: Demographics {
                    columns: vec!["bmi".into(), "class".into()],
                    values: demo,
                },
                labels,
                deflated: false,
            },
            class_dir,
            conf_dir,
        }
    }
}
