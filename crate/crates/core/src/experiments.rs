//! The semi-synthetic imbalance study: rank-weighted downsampling of one
//! class, multi-seed stability of the discriminative pattern, comparison of
//! deflation training populations, and the dummy-variable confounding
//! demonstration.
//!
//! Every experiment is a pure function of (cohort, config, seed); seeds run
//! concurrently on independent random streams and reports are emitted as
//! fixed-schema CSV.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution as _, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::confound::{confounder_pattern, deflation_fit, DeflationTraining};
use crate::discriminant::{fit_pipeline, PipelineConfig};
use crate::error::{MorphoError, Result};
use crate::mesh::fmt_f64;
use crate::pca::{pca_fit, pca_whiten_direction, PcaModel};
use crate::regression::regression_fit;

/// Rank-weighted downsampling of one class: subjects are ranked ascending by
/// the weight column and kept with probability proportional to their rank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DownsampleSpec {
    /// Class to downsample (0 = controls, 1 = cases).
    pub target_class: u8,
    pub keep_fraction: f64,
    pub weight_column: String,
    pub seed: u64,
}

/// Sequential weighted draws without replacement: at each step index `i` is
/// drawn with probability `weights[i]` over the remaining total. Returns the
/// chosen positions in draw order.
pub fn weighted_sample_without_replacement(
    weights: &[f64],
    k: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k.min(weights.len()) {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = remaining.len() - 1;
        for (pos, &i) in remaining.iter().enumerate() {
            u -= weights[i];
            if u <= 0.0 {
                chosen = pos;
                break;
            }
        }
        picked.push(remaining.remove(chosen));
    }
    picked
}

/// Downsample the target class, leaving the other class untouched. The kept
/// subset size is `ceil(keep_fraction * class size)`; ties in the weight
/// column are broken by subject id so ranks are deterministic.
pub fn downsample(cohort: &Cohort, spec: &DownsampleSpec) -> Result<Cohort> {
    if !(spec.keep_fraction > 0.0 && spec.keep_fraction <= 1.0) {
        return Err(MorphoError::InvalidConfig(format!(
            "keep_fraction = {} outside (0, 1]",
            spec.keep_fraction
        )));
    }
    let class: Vec<usize> = cohort.class_indices(spec.target_class);
    if class.is_empty() {
        return Err(MorphoError::Invalid(format!(
            "no subjects in target class {}",
            spec.target_class
        )));
    }
    let weights_col = cohort
        .demographics
        .column(&spec.weight_column)
        .ok_or_else(|| MorphoError::MissingColumn {
            column: spec.weight_column.clone(),
            path: "<demographics>".into(),
        })?;
    let keep = (spec.keep_fraction * class.len() as f64).ceil() as usize;
    if keep == class.len() {
        return Ok(cohort.clone());
    }

    // ranks ascending by weight, ties by subject id
    let mut order: Vec<usize> = class.clone();
    order.sort_by(|&a, &b| {
        weights_col[a]
            .partial_cmp(&weights_col[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| cohort.ids[a].cmp(&cohort.ids[b]))
    });
    let ranks: Vec<f64> = (1..=order.len()).map(|r| r as f64).collect();

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let drawn = weighted_sample_without_replacement(&ranks, keep, &mut rng);
    let mut selected: Vec<usize> = drawn.iter().map(|&pos| order[pos]).collect();
    selected.extend(cohort.class_indices(1 - spec.target_class));
    selected.sort_unstable();
    Ok(cohort.subset(&selected))
}

/// One per-seed, per-configuration stability measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub seed: u64,
    pub arm: String,
    pub dr_method: String,
    pub adjust: bool,
    pub deflate: bool,
    pub deflate_train: String,
    /// Similarity of the downsampled-data pattern to the full-data pattern.
    pub dot_full: f64,
    /// Similarity to the confounder (weight-column) regression pattern.
    pub dot_confounder_pattern: f64,
    pub error: String,
}

/// Summary quantiles of `dot_full` for one experiment arm/configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub key: String,
    pub n: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub records: Vec<StabilityRecord>,
    pub summaries: Vec<StabilitySummary>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    }
}

fn summarize(records: &[StabilityRecord]) -> Vec<StabilitySummary> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        if r.error.is_empty() && r.dot_full.is_finite() {
            let key = format!(
                "{}|{}|adjust={}|deflate={}|train={}",
                r.arm, r.dr_method, r.adjust, r.deflate, r.deflate_train
            );
            groups.entry(key).or_default().push(r.dot_full);
        }
    }
    groups
        .into_iter()
        .map(|(key, mut vals)| {
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            StabilitySummary {
                key,
                n: vals.len(),
                q25: quantile(&vals, 0.25),
                median: quantile(&vals, 0.5),
                q75: quantile(&vals, 0.75),
            }
        })
        .collect()
}

/// Parameters shared by the downsampling experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityParams {
    pub target_class: u8,
    pub keep_fraction: f64,
    pub weight_column: String,
    pub n_seeds: usize,
    /// PLS components of the weight-column regression model (shape -> weight)
    /// whose pattern the records are also compared against.
    pub regression_components: usize,
}

impl Default for StabilityParams {
    fn default() -> Self {
        StabilityParams {
            target_class: 0,
            keep_fraction: 0.25,
            weight_column: "bmi".into(),
            n_seeds: 100,
            regression_components: 3,
        }
    }
}

/// Whitened, normalized pattern of the weight-column regression model
/// trained on the full-data controls.
fn weight_regression_pattern(
    cohort: &Cohort,
    params: &StabilityParams,
    pca: &PcaModel,
) -> Result<DVector<f64>> {
    let controls = cohort.class_indices(0);
    let values: Vec<f64> = {
        let col = cohort
            .demographics
            .column(&params.weight_column)
            .ok_or_else(|| MorphoError::MissingColumn {
                column: params.weight_column.clone(),
                path: "<demographics>".into(),
            })?;
        controls.iter().map(|&i| col[i]).collect()
    };
    let mut shapes = DMatrix::zeros(controls.len(), cohort.n_coords());
    for (r, &i) in controls.iter().enumerate() {
        shapes.row_mut(r).copy_from(&cohort.shapes.row(i));
    }
    let model = regression_fit(&shapes, &values, params.regression_components)?;
    let k = pca.modes_for_variance(0.99);
    pca_whiten_direction(pca, &model.coefficients(), k)
}

fn stability_record(
    seed: u64,
    arm: &str,
    config: &PipelineConfig,
    downsampled: Result<Cohort>,
    reference: &DVector<f64>,
    conf_pattern: &DVector<f64>,
) -> StabilityRecord {
    let base = StabilityRecord {
        seed,
        arm: arm.to_string(),
        dr_method: config.dr_method.as_str().to_string(),
        adjust: config.adjust,
        deflate: config.deflate,
        deflate_train: config.deflate_train.as_str().to_string(),
        dot_full: f64::NAN,
        dot_confounder_pattern: f64::NAN,
        error: String::new(),
    };
    let fit = downsampled.and_then(|c| fit_pipeline(&c, config));
    match fit {
        Ok(pipe) => StabilityRecord {
            dot_full: pipe.pattern.standardized.dot(reference),
            dot_confounder_pattern: pipe.pattern.standardized.dot(conf_pattern),
            ..base
        },
        Err(e) => StabilityRecord {
            error: e.to_string(),
            ..base
        },
    }
}

/// For each seed and configuration: downsample, refit, and record the
/// similarity of the refitted pattern to the full-data pattern and to the
/// weight-column regression pattern.
pub fn stability_experiment(
    cohort: &Cohort,
    configs: &[PipelineConfig],
    params: &StabilityParams,
) -> Result<StabilityReport> {
    let pca = pca_fit(
        &cohort.shapes,
        (cohort.n_subjects() - 1).min(cohort.n_coords()),
    )?;
    let conf_pattern = weight_regression_pattern(cohort, params, &pca)?;
    let references: Vec<DVector<f64>> = configs
        .iter()
        .map(|c| fit_pipeline(cohort, c).map(|p| p.pattern.standardized))
        .collect::<Result<_>>()?;

    let records: Vec<StabilityRecord> = (0..params.n_seeds as u64)
        .into_par_iter()
        .flat_map_iter(|seed| {
            let spec = DownsampleSpec {
                target_class: params.target_class,
                keep_fraction: params.keep_fraction,
                weight_column: params.weight_column.clone(),
                seed,
            };
            let conf_pattern = &conf_pattern;
            configs
                .iter()
                .zip(&references)
                .map(move |(config, reference)| {
                    stability_record(
                        seed,
                        "",
                        config,
                        downsample(cohort, &spec),
                        reference,
                        conf_pattern,
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let summaries = summarize(&records);
    Ok(StabilityReport { records, summaries })
}

/// Three deflation-training arms, each over `n_seeds` downsampling seeds:
/// (a) the non-downsampled class trains the deflation (cases are
/// downsampled), (b) the downsampled class trains it (controls are
/// downsampled), and (c) both classes train it (controls downsampled).
pub fn deflation_population_study(
    cohort: &Cohort,
    config: &PipelineConfig,
    params: &StabilityParams,
) -> Result<StabilityReport> {
    if !config.deflate {
        return Err(MorphoError::InvalidConfig(
            "deflation_population_study requires deflate = true".into(),
        ));
    }
    let pca = pca_fit(
        &cohort.shapes,
        (cohort.n_subjects() - 1).min(cohort.n_coords()),
    )?;
    let conf_pattern = weight_regression_pattern(cohort, params, &pca)?;

    // arm -> (downsampled class, deflation training population)
    let arms: [(&str, u8, DeflationTraining); 3] = [
        ("non_downsampled_training", 1, DeflationTraining::Controls),
        ("downsampled_training", 0, DeflationTraining::Controls),
        ("both_training", 0, DeflationTraining::Both),
    ];

    let mut records = Vec::new();
    for (arm, target_class, training) in arms {
        let mut arm_config = config.clone();
        arm_config.deflate_train = training;
        let reference = fit_pipeline(cohort, &arm_config)?.pattern.standardized;
        let arm_records: Vec<StabilityRecord> = (0..params.n_seeds as u64)
            .into_par_iter()
            .map(|seed| {
                let spec = DownsampleSpec {
                    target_class,
                    keep_fraction: params.keep_fraction,
                    weight_column: params.weight_column.clone(),
                    seed,
                };
                stability_record(
                    seed,
                    arm,
                    &arm_config,
                    downsample(cohort, &spec),
                    &reference,
                    &conf_pattern,
                )
            })
            .collect();
        records.extend(arm_records);
    }
    let summaries = summarize(&records);
    Ok(StabilityReport { records, summaries })
}

/// One dummy-variable measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DummyRecord {
    pub repeat: u64,
    /// "controls" or "both".
    pub training: String,
    /// Dot product of the dummy's confounder pattern with the full-data
    /// discriminative pattern.
    pub dot: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DummyReport {
    pub records: Vec<DummyRecord>,
    pub noise_sd: f64,
}

impl DummyReport {
    pub fn median_dot(&self, training: &str, absolute: bool) -> f64 {
        let mut vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.training == training)
            .map(|r| if absolute { r.dot.abs() } else { r.dot })
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        quantile(&vals, 0.5)
    }
}

/// Per repeat: draw `dummy = class_label + N(0, noise_sd^2)`, train deflation
/// models with the dummy as confounder on (controls only) and (both classes),
/// and record the dot product of the dummy's shape pattern with the full-data
/// discriminative pattern.
pub fn dummy_variable_experiment(
    cohort: &Cohort,
    config: &PipelineConfig,
    noise_sd: f64,
    n_repeats: usize,
    seed: u64,
) -> Result<DummyReport> {
    if n_repeats == 0 {
        return Err(MorphoError::InvalidConfig("n_repeats must be >= 1".into()));
    }
    let reference = fit_pipeline(cohort, config)?.pattern.standardized;
    let pca = pca_fit(
        &cohort.shapes,
        (cohort.n_subjects() - 1).min(cohort.n_coords()),
    )?;
    let k = pca.modes_for_variance(0.99);

    let records: Vec<DummyRecord> = (0..n_repeats as u64)
        .into_par_iter()
        .flat_map_iter(|repeat| {
            let mut rng =
                ChaCha12Rng::seed_from_u64(seed ^ repeat.wrapping_mul(0x9e3779b97f4a7c15));
            let normal = Normal::new(0.0, noise_sd).expect("valid noise sd");
            let dummy: Vec<f64> = cohort
                .labels
                .iter()
                .map(|&l| f64::from(l) + normal.sample(&mut rng))
                .collect();
            let mut with_dummy = cohort.clone();
            with_dummy.demographics.columns.push("dummy".into());
            let mut values =
                DMatrix::zeros(cohort.n_subjects(), with_dummy.demographics.columns.len());
            values
                .columns_mut(0, cohort.demographics.columns.len())
                .copy_from(&cohort.demographics.values);
            for i in 0..cohort.n_subjects() {
                values[(i, cohort.demographics.columns.len())] = dummy[i];
            }
            with_dummy.demographics.values = values;

            let mut out = Vec::with_capacity(2);
            for (training, subset) in [
                ("controls", with_dummy.class_indices(0)),
                ("both", (0..with_dummy.n_subjects()).collect::<Vec<_>>()),
            ] {
                let dot = deflation_fit(&with_dummy, &["dummy".into()], &subset, None)
                    .and_then(|model| confounder_pattern(&model, "dummy", &pca, k))
                    .map(|p| p.dot(&reference))
                    .unwrap_or(f64::NAN);
                out.push(DummyRecord {
                    repeat,
                    training: training.to_string(),
                    dot,
                });
            }
            out
        })
        .collect();
    Ok(DummyReport { records, noise_sd })
}

fn csv_num(v: f64) -> String {
    if v.is_finite() {
        fmt_f64(v)
    } else {
        String::new()
    }
}

/// Fixed-schema per-seed CSV:
/// `seed,arm,dr_method,adjust,deflate,deflate_train,dot_full,dot_confounder_pattern,error`.
pub fn write_stability_csv(report: &StabilityReport, path: &Path) -> Result<()> {
    let mut out = String::from(
        "seed,arm,dr_method,adjust,deflate,deflate_train,dot_full,dot_confounder_pattern,error\n",
    );
    for r in &report.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.arm,
            r.dr_method,
            r.adjust,
            r.deflate,
            r.deflate_train,
            csv_num(r.dot_full),
            csv_num(r.dot_confounder_pattern),
            r.error.replace(',', ";")
        ));
    }
    std::fs::write(path, out).map_err(|e| MorphoError::io(path, e))
}

/// Fixed-schema CSV: `repeat,training,dot`.
pub fn write_dummy_csv(report: &DummyReport, path: &Path) -> Result<()> {
    let mut out = String::from("repeat,training,dot\n");
    for r in &report.records {
        out.push_str(&format!("{},{},{}\n", r.repeat, r.training, csv_num(r.dot)));
    }
    std::fs::write(path, out).map_err(|e| MorphoError::io(path, e))
}
