//! Command-line interface: one subcommand per pipeline stage, stable file
//! formats, explicit seeds, and a run manifest next to every output.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use crate::align::{generalized_procrustes, rigid_align};
use crate::cohort::{load_cohort, load_corpus, Cohort};
use crate::confound::{deflate_shapes, DeflationTraining};
use crate::discriminant::{
    cross_validate, fit_pipeline, representative_shape, score, DiscriminantModelFile, DrMethod,
    PipelineConfig,
};
use crate::error::{MorphoError, Result};
use crate::experiments::{
    deflation_population_study, dummy_variable_experiment, stability_experiment, write_dummy_csv,
    write_stability_csv, StabilityParams,
};
use crate::manifest::{manifest_path_for, RunManifest};
use crate::mesh::{self, fmt_f64, ShapeVector};
use crate::regression::{
    regression_cv_r2, regression_fit, representative_for_value, RegressionModelFile,
    REGRESSION_MODEL_KIND,
};
use crate::synth::{generate, write_cohort, SynthSpec};

#[derive(Parser)]
#[command(
    name = "morpho",
    version,
    about = "Confounder-aware statistical shape analysis of corresponded 3D meshes"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generalized partial Procrustes alignment of a mesh corpus.
    Align(AlignArgs),
    /// Ventricular volumes and LV mass for every mesh in a corpus.
    Measure(MeasureArgs),
    /// Fit the discriminative pipeline and save the model as JSON.
    Fit(FitArgs),
    /// Cross-validated mean log-loss of a pipeline configuration.
    Cv(CvArgs),
    /// Remodelling scores of a corpus under a fitted model.
    Score(ScoreArgs),
    /// Export representative meshes over a lambda grid plus displacement CSV.
    PatternExport(PatternExportArgs),
    /// Fit the shape-to-value regression model.
    Regress(RegressArgs),
    /// Synthesize the representative mesh for a target value.
    RegressShape(RegressShapeArgs),
    /// Generate a synthetic cohort from a JSON spec.
    Synth(SynthArgs),
    /// Rank-weighted downsampling stability experiment.
    DownsampleExp(DownsampleExpArgs),
    /// Dummy-variable confounding demonstration.
    DummyExp(DummyExpArgs),
}

/// Mesh corpus + demographics inputs shared by the analysis commands.
#[derive(Args, Clone)]
struct DataArgs {
    /// Directory of OFF meshes with identical connectivity (file stem = id).
    #[arg(long)]
    meshes: PathBuf,
    /// Sidecar region map (one label per vertex line).
    #[arg(long)]
    region_map: Option<PathBuf>,
    /// Demographics CSV with a header row.
    #[arg(long)]
    demographics: PathBuf,
    /// Subject id column in the demographics CSV.
    #[arg(long, default_value = "subject_id")]
    id_col: String,
    /// Binary class column (0 = control, 1 = case).
    #[arg(long, default_value = "class")]
    class_col: String,
    /// Skip the Procrustes pre-alignment (meshes are already aligned).
    #[arg(long)]
    no_align: bool,
}

/// Pipeline configuration flags shared by fit/cv/experiments.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Dimensionality reduction: pca, pls, or pca+pls.
    #[arg(long, default_value = "pca+pls")]
    dr: String,
    /// Number of PCA modes.
    #[arg(long, default_value_t = 20)]
    pca: usize,
    /// Number of PLS components.
    #[arg(long, default_value_t = 3)]
    pls: usize,
    /// Comma-separated confounder columns (e.g. age,bsa,sex).
    #[arg(long, value_delimiter = ',')]
    confounders: Vec<String>,
    /// Add standardized confounders to the classifier.
    #[arg(long)]
    adjust: bool,
    /// Remove confounder-predicted shape before DR.
    #[arg(long)]
    deflate: bool,
    /// Deflation training population: controls, cases or both.
    #[arg(long, default_value = "controls")]
    deflate_train: String,
    /// PLS components of the deflation model (default: confounder count).
    #[arg(long)]
    deflate_components: Option<usize>,
    /// Ridge penalty of the logistic fit.
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    /// Whitening modes (default: modes covering 99% variance).
    #[arg(long)]
    whiten_modes: Option<usize>,
}

impl ConfigArgs {
    fn to_config(&self, cv_folds: usize, seed: u64) -> Result<PipelineConfig> {
        let dr_method = DrMethod::parse(&self.dr).ok_or_else(|| {
            MorphoError::InvalidConfig(format!("unknown DR method {:?}", self.dr))
        })?;
        let deflate_train = DeflationTraining::parse(&self.deflate_train).ok_or_else(|| {
            MorphoError::InvalidConfig(format!(
                "unknown deflation training population {:?}",
                self.deflate_train
            ))
        })?;
        let config = PipelineConfig {
            dr_method,
            pca_modes: self.pca,
            pls_modes: self.pls,
            adjust: self.adjust,
            deflate: self.deflate,
            deflate_train,
            deflate_components: self.deflate_components,
            confounders: self.confounders.clone(),
            ridge: self.ridge,
            cv_folds,
            seed,
            whiten_modes: self.whiten_modes,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    meshes: PathBuf,
    #[arg(long)]
    region_map: Option<PathBuf>,
    /// Output directory for aligned meshes and the mean mesh.
    #[arg(long)]
    out: PathBuf,
    /// Convergence tolerance (RMS mm per landmark).
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long)]
    meshes: PathBuf,
    #[arg(long)]
    region_map: PathBuf,
    /// Output CSV (subject_id,lv_edv_ml,rv_edv_ml,lv_mass_g).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Seed of the stratified fold assignment (required).
    #[arg(long)]
    seed: u64,
    /// Optional CSV output (column: mean_logloss).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Fitted discriminant model JSON.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    meshes: PathBuf,
    /// Demographics CSV; required when the model carries a deflation step.
    #[arg(long)]
    demographics: Option<PathBuf>,
    #[arg(long, default_value = "subject_id")]
    id_col: String,
    /// Skip rigid alignment of each mesh to the model mean.
    #[arg(long)]
    no_align: bool,
    /// Output CSV (subject_id,score).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PatternExportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Lambda grid in standard-deviation units, start:end:step.
    #[arg(long, allow_hyphen_values = true, default_value = "-3:3:0.5")]
    lambda_grid: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RegressArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Continuous target column (e.g. bmi).
    #[arg(long)]
    target_col: String,
    /// Training population: controls, cases or both.
    #[arg(long, default_value = "controls")]
    train_class: String,
    /// Number of PLS components.
    #[arg(long, default_value_t = 3)]
    pls: usize,
    /// Folds of the reported cross-validated R^2.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegressShapeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Target value (e.g. a BMI of 30).
    #[arg(long, allow_hyphen_values = true)]
    value: f64,
    /// Output OFF mesh.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator spec JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Override the seed in the generator spec file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DownsampleExpArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Kept fraction of the target class.
    #[arg(long, default_value_t = 0.25)]
    keep: f64,
    /// Rank-weighting column.
    #[arg(long)]
    weight_col: String,
    /// Class to downsample (0 = controls, 1 = cases).
    #[arg(long, default_value_t = 0)]
    target_class: u8,
    /// Number of downsampling seeds (seeds run 0..seeds-1 plus --seed offset).
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// PLS components of the weight-column regression pattern.
    #[arg(long, default_value_t = 3)]
    regression_components: usize,
    /// Optional JSON array of pipeline configurations; when absent the run
    /// compares the flag configuration with and without adjustment.
    #[arg(long)]
    configs: Option<PathBuf>,
    /// stability (default) or deflation-arms.
    #[arg(long, default_value = "stability")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DummyExpArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0.5)]
    noise_sd: f64,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Parse argv, dispatch, and map errors to a nonzero exit code with a
/// structured diagnostic on stderr.
pub fn run() -> i32 {
    init_thread_pool();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Cap internal parallelism via MORPHO_THREADS.
fn init_thread_pool() {
    if let Ok(v) = std::env::var("MORPHO_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Align(args) => cmd_align(args),
        Command::Measure(args) => cmd_measure(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Score(args) => cmd_score(args),
        Command::PatternExport(args) => cmd_pattern_export(args),
        Command::Regress(args) => cmd_regress(args),
        Command::RegressShape(args) => cmd_regress_shape(args),
        Command::Synth(args) => cmd_synth(args),
        Command::DownsampleExp(args) => cmd_downsample_exp(args),
        Command::DummyExp(args) => cmd_dummy_exp(args),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| MorphoError::io(path, e))
}

fn load_data(args: &DataArgs) -> Result<Cohort> {
    let mut cohort = load_cohort(
        &args.meshes,
        args.region_map.as_deref(),
        &args.demographics,
        &args.id_col,
        &args.class_col,
    )?;
    if !args.no_align {
        let atlas = generalized_procrustes(&cohort.shapes, 1e-7, 100)?;
        if !atlas.converged {
            eprintln!(
                "warning: Procrustes alignment did not converge in {} iterations",
                atlas.iterations_run
            );
        }
        cohort = cohort.with_shapes(atlas.aligned, false)?;
    }
    Ok(cohort)
}

fn data_manifest(manifest: &mut RunManifest, args: &DataArgs) -> Result<()> {
    manifest.add_input(&args.meshes)?;
    if let Some(r) = &args.region_map {
        manifest.add_input(r)?;
    }
    manifest.add_input(&args.demographics)
}

fn cmd_align(args: AlignArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let (ids, shapes, template) = load_corpus(&args.meshes, args.region_map.as_deref())?;
    let atlas = generalized_procrustes(&shapes, args.tol, args.max_iter)?;
    if !atlas.converged {
        eprintln!(
            "warning: alignment did not converge in {} iterations",
            atlas.iterations_run
        );
    }
    for (i, id) in ids.iter().enumerate() {
        let m = mesh::unflatten(
            &ShapeVector {
                coords: atlas.aligned.row(i).transpose(),
            },
            &template,
        )?;
        mesh::write_off(&m, &args.out.join(format!("{id}.off")))?;
    }
    let mean = mesh::unflatten(&atlas.mean_shape, &template)?;
    mesh::write_off(&mean, &args.out.join("mean.off"))?;

    let mut manifest = RunManifest::new(
        "align",
        serde_json::json!({
            "meshes": args.meshes, "region_map": args.region_map,
            "tol": args.tol, "max_iter": args.max_iter,
            "converged": atlas.converged, "iterations": atlas.iterations_run,
        }),
        None,
    );
    manifest.add_input(&args.meshes)?;
    if let Some(r) = &args.region_map {
        manifest.add_input(r)?;
    }
    manifest.write(&manifest_path_for(&args.out, true))
}

fn cmd_measure(args: MeasureArgs) -> Result<()> {
    let (ids, shapes, template) = load_corpus(&args.meshes, Some(&args.region_map))?;
    let mut out = String::from("subject_id,lv_edv_ml,rv_edv_ml,lv_mass_g\n");
    for (i, id) in ids.iter().enumerate() {
        let m = mesh::unflatten(
            &ShapeVector {
                coords: shapes.row(i).transpose(),
            },
            &template,
        )?;
        let meas = mesh::measure(&m)?;
        out.push_str(&format!(
            "{id},{},{},{}\n",
            fmt_f64(meas.lv_edv),
            fmt_f64(meas.rv_edv),
            fmt_f64(meas.lv_mass)
        ));
    }
    std::fs::write(&args.out, out).map_err(|e| MorphoError::io(&args.out, e))?;

    let mut manifest = RunManifest::new(
        "measure",
        serde_json::json!({"meshes": args.meshes, "region_map": args.region_map}),
        None,
    );
    manifest.add_input(&args.meshes)?;
    manifest.add_input(&args.region_map)?;
    manifest.write(&manifest_path_for(&args.out, false))
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let config = args.config.to_config(10, args.seed)?;
    let cohort = load_data(&args.data)?;
    let pipe = fit_pipeline(&cohort, &config)?;
    let model = DiscriminantModelFile::from_fit(&pipe, &cohort.template);
    model.save(&args.out)?;

    let mut manifest = RunManifest::new(
        "fit",
        serde_json::json!({
            "config": config, "no_align": args.data.no_align,
            "id_col": args.data.id_col, "class_col": args.data.class_col,
        }),
        Some(args.seed),
    );
    data_manifest(&mut manifest, &args.data)?;
    manifest.write(&manifest_path_for(&args.out, false))?;
    println!("model written to {}", args.out.display());
    Ok(())
}

fn cmd_cv(args: CvArgs) -> Result<()> {
    let config = args.config.to_config(args.folds, args.seed)?;
    let cohort = load_data(&args.data)?;
    let loss = cross_validate(&cohort, &config)?;
    println!("cv_logloss {}", fmt_f64(loss));
    if let Some(out) = &args.out {
        std::fs::write(out, format!("mean_logloss\n{}\n", fmt_f64(loss)))
            .map_err(|e| MorphoError::io(out, e))?;
        let mut manifest = RunManifest::new(
            "cv",
            serde_json::json!({"config": config, "folds": args.folds}),
            Some(args.seed),
        );
        data_manifest(&mut manifest, &args.data)?;
        manifest.write(&manifest_path_for(out, false))?;
    }
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let model = DiscriminantModelFile::load(&args.model)?;
    let pattern = model.pattern();
    let (ids, mut shapes, template) = load_corpus(&args.meshes, None)?;
    if 3 * template.n_vertices() != pattern.raw_coeffs.len() {
        return Err(MorphoError::DimensionMismatch(format!(
            "corpus has {} coordinates, model {}",
            3 * template.n_vertices(),
            pattern.raw_coeffs.len()
        )));
    }
    if !args.no_align {
        for i in 0..shapes.nrows() {
            let s = ShapeVector {
                coords: shapes.row(i).transpose(),
            };
            let (_, aligned) = rigid_align(&s, &pattern.mean_shape)?;
            shapes.row_mut(i).copy_from(&aligned.coords.transpose());
        }
    }
    if let Some(deflation) = &model.deflation {
        let demo_path = args.demographics.as_ref().ok_or_else(|| {
            MorphoError::InvalidConfig(
                "model carries a deflation step; --demographics is required to score".into(),
            )
        })?;
        let demographics = crate::cohort::load_demographics(demo_path, &ids, &args.id_col)?;
        let cohort = Cohort {
            ids: ids.clone(),
            shapes: shapes.clone(),
            template: template.clone(),
            demographics,
            labels: vec![0; ids.len()],
            deflated: false,
        };
        shapes = deflate_shapes(deflation, &cohort)?;
    }
    let mut out = String::from("subject_id,score\n");
    for (i, id) in ids.iter().enumerate() {
        let s = score(
            &pattern,
            &ShapeVector {
                coords: shapes.row(i).transpose(),
            },
        )?;
        out.push_str(&format!("{id},{}\n", fmt_f64(s)));
    }
    std::fs::write(&args.out, out).map_err(|e| MorphoError::io(&args.out, e))?;

    let mut manifest = RunManifest::new(
        "score",
        serde_json::json!({"model": args.model, "no_align": args.no_align}),
        None,
    );
    manifest.add_input(&args.model)?;
    manifest.add_input(&args.meshes)?;
    if let Some(d) = &args.demographics {
        manifest.add_input(d)?;
    }
    manifest.write(&manifest_path_for(&args.out, false))
}

fn parse_lambda_grid(grid: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = grid.split(':').collect();
    if parts.len() != 3 {
        return Err(MorphoError::InvalidConfig(format!(
            "lambda grid {grid:?} is not start:end:step"
        )));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| MorphoError::InvalidConfig(format!("bad grid start {:?}", parts[0])))?;
    let end: f64 = parts[1]
        .parse()
        .map_err(|_| MorphoError::InvalidConfig(format!("bad grid end {:?}", parts[1])))?;
    let step: f64 = parts[2]
        .parse()
        .map_err(|_| MorphoError::InvalidConfig(format!("bad grid step {:?}", parts[2])))?;
    if step <= 0.0 || end < start {
        return Err(MorphoError::InvalidConfig(
            "lambda grid needs step > 0 and end >= start".into(),
        ));
    }
    let mut values = Vec::new();
    let n = ((end - start) / step).round() as i64;
    for k in 0..=n {
        values.push(start + step * k as f64);
    }
    Ok(values)
}

fn cmd_pattern_export(args: PatternExportArgs) -> Result<()> {
    ensure_dir(&args.out_dir)?;
    let model = DiscriminantModelFile::load(&args.model)?;
    let pattern = model.pattern();
    let grid = parse_lambda_grid(&args.lambda_grid)?;

    let mut measurements = String::from("lambda_sd,lv_edv_ml,rv_edv_ml,lv_mass_g\n");
    let mut measurable = true;
    for &lambda_sd in &grid {
        let shape = representative_shape(&pattern, lambda_sd * pattern.score_sd);
        let m = mesh::unflatten(&shape, &model.template)?;
        let name = format!("pattern_lambda_{lambda_sd:+.2}.off");
        mesh::write_off(&m, &args.out_dir.join(name))?;
        if measurable {
            match mesh::measure(&m) {
                Ok(meas) => measurements.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt_f64(lambda_sd),
                    fmt_f64(meas.lv_edv),
                    fmt_f64(meas.rv_edv),
                    fmt_f64(meas.lv_mass)
                )),
                Err(e) => {
                    eprintln!("warning: measurements skipped: {e}");
                    measurable = false;
                }
            }
        }
    }
    if measurable {
        let path = args.out_dir.join("measurement_response.csv");
        std::fs::write(&path, measurements).map_err(|e| MorphoError::io(&path, e))?;
    }

    // per-vertex displacement magnitude of one +1 SD step along the pattern
    let mut disp = String::from("vertex_id,displacement_mm_per_sd\n");
    let n = model.template.n_vertices();
    for v in 0..n {
        let dx = pattern.standardized[3 * v];
        let dy = pattern.standardized[3 * v + 1];
        let dz = pattern.standardized[3 * v + 2];
        let mag = (dx * dx + dy * dy + dz * dz).sqrt() * pattern.score_sd;
        disp.push_str(&format!("{v},{}\n", fmt_f64(mag)));
    }
    let disp_path = args.out_dir.join("displacement_magnitude.csv");
    std::fs::write(&disp_path, disp).map_err(|e| MorphoError::io(&disp_path, e))?;

    let mut manifest = RunManifest::new(
        "pattern-export",
        serde_json::json!({"model": args.model, "lambda_grid": args.lambda_grid}),
        None,
    );
    manifest.add_input(&args.model)?;
    manifest.write(&manifest_path_for(&args.out_dir, true))
}

fn cmd_regress(args: RegressArgs) -> Result<()> {
    let train = DeflationTraining::parse(&args.train_class).ok_or_else(|| {
        MorphoError::InvalidConfig(format!(
            "unknown training population {:?}",
            args.train_class
        ))
    })?;
    let cohort = load_data(&args.data)?;
    let subset = train.select(&cohort);
    let values: Vec<f64> = {
        let col = cohort
            .demographics
            .column(&args.target_col)
            .ok_or_else(|| MorphoError::MissingColumn {
                column: args.target_col.clone(),
                path: args.data.demographics.clone(),
            })?;
        subset.iter().map(|&i| col[i]).collect()
    };
    let mut shapes = DMatrix::zeros(subset.len(), cohort.n_coords());
    for (r, &i) in subset.iter().enumerate() {
        shapes.row_mut(r).copy_from(&cohort.shapes.row(i));
    }
    let model = regression_fit(&shapes, &values, args.pls)?;
    let r2 = regression_cv_r2(&shapes, &values, args.pls, args.folds, args.seed)?;
    println!("cv_r2 {}", fmt_f64(r2));

    let file = RegressionModelFile {
        kind: REGRESSION_MODEL_KIND.to_string(),
        version: 1,
        target_column: args.target_col.clone(),
        n_components: args.pls,
        template: cohort.template.clone(),
        model,
    };
    file.save(&args.out)?;

    let mut manifest = RunManifest::new(
        "regress",
        serde_json::json!({
            "target_col": args.target_col, "train_class": args.train_class,
            "pls": args.pls, "folds": args.folds, "cv_r2": r2,
        }),
        Some(args.seed),
    );
    data_manifest(&mut manifest, &args.data)?;
    manifest.write(&manifest_path_for(&args.out, false))
}

fn cmd_regress_shape(args: RegressShapeArgs) -> Result<()> {
    let file = RegressionModelFile::load(&args.model)?;
    let shape = representative_for_value(&file.model, args.value)?;
    let m = mesh::unflatten(&shape, &file.template)?;
    mesh::write_off(&m, &args.out)?;

    let mut manifest = RunManifest::new(
        "regress-shape",
        serde_json::json!({"model": args.model, "value": args.value}),
        None,
    );
    manifest.add_input(&args.model)?;
    manifest.write(&manifest_path_for(&args.out, false))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    ensure_dir(&args.out_dir)?;
    let mut spec = SynthSpec::load(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (cohort, truth) = generate(&spec)?;
    write_cohort(&args.out_dir, &cohort, &truth)?;

    let mut manifest = RunManifest::new(
        "synth",
        serde_json::to_value(&spec)
            .map_err(|e| MorphoError::Invalid(format!("spec serialization failed: {e}")))?,
        Some(spec.seed),
    );
    manifest.add_input(&args.spec)?;
    manifest.write(&manifest_path_for(&args.out_dir, true))?;
    println!(
        "generated {} controls and {} cases in {}",
        spec.n_controls,
        spec.n_cases,
        args.out_dir.display()
    );
    Ok(())
}

fn load_config_grid(path: &Path) -> Result<Vec<PipelineConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| MorphoError::io(path, e))?;
    let configs: Vec<PipelineConfig> = serde_json::from_str(&text)
        .map_err(|e| MorphoError::parse("config grid JSON", path, e.to_string()))?;
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}

fn cmd_downsample_exp(args: DownsampleExpArgs) -> Result<()> {
    let cohort = load_data(&args.data)?;
    let params = StabilityParams {
        target_class: args.target_class,
        keep_fraction: args.keep,
        weight_column: args.weight_col.clone(),
        n_seeds: args.seeds,
        regression_components: args.regression_components,
    };
    let report = match args.mode.as_str() {
        "stability" => {
            let configs = match &args.configs {
                Some(path) => load_config_grid(path)?,
                None => {
                    let base = args.config.to_config(10, args.seed)?;
                    let mut adjusted = base.clone();
                    adjusted.adjust = true;
                    let mut unadjusted = base;
                    unadjusted.adjust = false;
                    vec![adjusted, unadjusted]
                }
            };
            stability_experiment(&cohort, &configs, &params)?
        }
        "deflation-arms" => {
            let mut config = args.config.to_config(10, args.seed)?;
            config.deflate = true;
            deflation_population_study(&cohort, &config, &params)?
        }
        other => {
            return Err(MorphoError::InvalidConfig(format!(
                "unknown mode {other:?}; expected stability or deflation-arms"
            )));
        }
    };
    write_stability_csv(&report, &args.out)?;
    for s in &report.summaries {
        println!(
            "{} n={} q25={:.3} median={:.3} q75={:.3}",
            s.key, s.n, s.q25, s.median, s.q75
        );
    }

    let mut manifest = RunManifest::new(
        "downsample-exp",
        serde_json::json!({
            "keep": args.keep, "weight_col": args.weight_col,
            "target_class": args.target_class, "seeds": args.seeds,
            "mode": args.mode, "configs": args.configs,
        }),
        Some(args.seed),
    );
    data_manifest(&mut manifest, &args.data)?;
    if let Some(c) = &args.configs {
        manifest.add_input(c)?;
    }
    manifest.write(&manifest_path_for(&args.out, false))
}

fn cmd_dummy_exp(args: DummyExpArgs) -> Result<()> {
    let cohort = load_data(&args.data)?;
    let config = args.config.to_config(10, args.seed)?;
    let report =
        dummy_variable_experiment(&cohort, &config, args.noise_sd, args.repeats, args.seed)?;
    write_dummy_csv(&report, &args.out)?;
    println!(
        "controls_median_abs_dot {}",
        fmt_f64(report.median_dot("controls", true))
    );
    println!(
        "both_median_dot {}",
        fmt_f64(report.median_dot("both", false))
    );

    let mut manifest = RunManifest::new(
        "dummy-exp",
        serde_json::json!({
            "noise_sd": args.noise_sd, "repeats": args.repeats, "config": config,
        }),
        Some(args.seed),
    );
    data_manifest(&mut manifest, &args.data)?;
    manifest.write(&manifest_path_for(&args.out, false))
}
