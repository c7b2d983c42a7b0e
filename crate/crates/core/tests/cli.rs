//! CLI behaviour: end-to-end fit/score oracle, error classes with actionable
//! messages, and input immutability.

use std::path::{Path, PathBuf};
use std::process::Output;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_morpho")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    std::process::Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn morpho")
}

fn make_cohort(root: &Path, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let spec = serde_json::json!({
        "n_controls": 20, "n_cases": 20, "resolution": 2,
        "class_effect": {"direction": "athlete_remodel", "magnitude_mm": 2.0},
        "confounders": [{
            "column": "bmi",
            "control": {"kind": "normal", "mean": 25.0, "sd": 3.0},
            "case": {"kind": "normal", "mean": 25.0, "sd": 3.0},
            "effect": {"direction": "overweight_remodel", "slope_mm_per_sd": 1.0}
        }],
        "noise_sd": 0.05, "seed": seed
    });
    std::fs::write(
        root.join("spec.json"),
        serde_json::to_string_pretty(&spec).unwrap(),
    )
    .unwrap();
    let out = run_in(
        root,
        &["synth", "--spec", "spec.json", "--out-dir", "cohort"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    (
        root.join("cohort/meshes"),
        root.join("cohort/region_map.txt"),
        root.join("cohort/demographics.csv"),
    )
}

#[test]
fn fit_then_score_recovers_class_separation() {
    let dir = tempfile::tempdir().unwrap();
    let (meshes, regions, demo) = make_cohort(dir.path(), 41);
    let out = run_in(
        dir.path(),
        &[
            "fit",
            "--meshes",
            meshes.to_str().unwrap(),
            "--region-map",
            regions.to_str().unwrap(),
            "--demographics",
            demo.to_str().unwrap(),
            "--confounders",
            "bmi",
            "--dr",
            "pca",
            "--pca",
            "10",
            "--out",
            "model.json",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = run_in(
        dir.path(),
        &[
            "score",
            "--model",
            "model.json",
            "--meshes",
            meshes.to_str().unwrap(),
            "--out",
            "scores.csv",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // class-wise mean scores differ in the ground-truth direction:
    // cases (s0020..s0039) score higher than controls (s0000..s0019)
    let scores = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    let mut control_sum = 0.0;
    let mut case_sum = 0.0;
    for line in scores.lines().skip(1) {
        let (id, value) = line.split_once(',').unwrap();
        let v: f64 = value.parse().unwrap();
        let idx: usize = id[1..].parse().unwrap();
        if idx < 20 {
            control_sum += v;
        } else {
            case_sum += v;
        }
    }
    assert!(
        case_sum / 20.0 > control_sum / 20.0,
        "case mean {} <= control mean {}",
        case_sum / 20.0,
        control_sum / 20.0
    );
}

#[test]
fn unknown_flag_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["align", "--no-such-flag"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("--no-such-flag") || stderr.contains("unexpected"),
        "{stderr}"
    );
}

#[test]
fn malformed_mesh_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let meshes = dir.path().join("meshes");
    std::fs::create_dir(&meshes).unwrap();
    std::fs::write(meshes.join("bad.off"), "NOT_AN_OFF_FILE 1 2 3\n").unwrap();
    let out = run_in(
        dir.path(),
        &["align", "--meshes", "meshes", "--out", "atlas"],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("bad.off"),
        "diagnostic does not name the file: {stderr}"
    );
}

#[test]
fn missing_column_names_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let (meshes, _, demo) = make_cohort(dir.path(), 42);
    let out = run_in(
        dir.path(),
        &[
            "fit",
            "--meshes",
            meshes.to_str().unwrap(),
            "--demographics",
            demo.to_str().unwrap(),
            "--confounders",
            "height",
            "--adjust",
            "--dr",
            "pca",
            "--pca",
            "5",
            "--out",
            "model.json",
        ],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("height"),
        "diagnostic does not name the column: {stderr}"
    );
}

#[test]
fn dimension_mismatch_reported_on_score() {
    let dir = tempfile::tempdir().unwrap();
    let (meshes, regions, demo) = make_cohort(dir.path(), 43);
    let out = run_in(
        dir.path(),
        &[
            "fit",
            "--meshes",
            meshes.to_str().unwrap(),
            "--region-map",
            regions.to_str().unwrap(),
            "--demographics",
            demo.to_str().unwrap(),
            "--dr",
            "pca",
            "--pca",
            "5",
            "--out",
            "model.json",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // corpus with different connectivity (resolution 3)
    let spec = serde_json::json!({
        "n_controls": 2, "n_cases": 2, "resolution": 3,
        "class_effect": {"direction": "dilate_both", "magnitude_mm": 1.0},
        "confounders": [],
        "noise_sd": 0.0, "seed": 1
    });
    std::fs::write(
        dir.path().join("spec3.json"),
        serde_json::to_string_pretty(&spec).unwrap(),
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &["synth", "--spec", "spec3.json", "--out-dir", "other"],
    );
    assert!(out.status.success());
    let out = run_in(
        dir.path(),
        &[
            "score",
            "--model",
            "model.json",
            "--meshes",
            "other/meshes",
            "--out",
            "scores.csv",
        ],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dimension mismatch"), "{stderr}");
}

#[test]
fn deflated_model_scoring_requires_demographics() {
    let dir = tempfile::tempdir().unwrap();
    let (meshes, _, demo) = make_cohort(dir.path(), 44);
    let out = run_in(
        dir.path(),
        &[
            "fit",
            "--meshes",
            meshes.to_str().unwrap(),
            "--demographics",
            demo.to_str().unwrap(),
            "--confounders",
            "bmi",
            "--deflate",
            "--dr",
            "pca",
            "--pca",
            "5",
            "--out",
            "model.json",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = run_in(
        dir.path(),
        &[
            "score",
            "--model",
            "model.json",
            "--meshes",
            meshes.to_str().unwrap(),
            "--out",
            "scores.csv",
        ],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--demographics"));
    // and succeeds once demographics are supplied
    let out = run_in(
        dir.path(),
        &[
            "score",
            "--model",
            "model.json",
            "--meshes",
            meshes.to_str().unwrap(),
            "--demographics",
            demo.to_str().unwrap(),
            "--out",
            "scores.csv",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn commands_do_not_mutate_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (meshes, regions, demo) = make_cohort(dir.path(), 45);
    let digest = |p: &Path| -> Vec<(String, u64)> {
        let mut files: Vec<_> = std::fs::read_dir(p)
            .unwrap()
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .collect();
        files.sort();
        files
            .iter()
            .map(|f| {
                let bytes = std::fs::read(f).unwrap();
                let mut h = 0u64;
                for b in bytes {
                    h = h.wrapping_mul(1099511628211).wrapping_add(b as u64);
                }
                (f.display().to_string(), h)
            })
            .collect()
    };
    let before = digest(&meshes);
    let out = run_in(
        dir.path(),
        &[
            "fit",
            "--meshes",
            meshes.to_str().unwrap(),
            "--region-map",
            regions.to_str().unwrap(),
            "--demographics",
            demo.to_str().unwrap(),
            "--confounders",
            "bmi",
            "--adjust",
            "--dr",
            "pls",
            "--pls",
            "2",
            "--out",
            "model.json",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(before, digest(&meshes), "fit mutated its input meshes");
}

#[test]
fn downsample_exp_accepts_sparse_config_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (meshes, _, demo) = make_cohort(dir.path(), 47);
    // sparse configs: unspecified fields take their defaults
    std::fs::write(
        dir.path().join("grid.json"),
        r#"[
            {"dr_method": "pca", "pca_modes": 8, "adjust": true, "confounders": ["bmi"]},
            {"dr_method": "pls", "pls_modes": 2}
        ]"#,
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &[
            "downsample-exp",
            "--meshes",
            meshes.to_str().unwrap(),
            "--demographics",
            demo.to_str().unwrap(),
            "--keep",
            "0.5",
            "--weight-col",
            "bmi",
            "--seeds",
            "3",
            "--configs",
            "grid.json",
            "--out",
            "report.csv",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    // 3 seeds x 2 configs + header
    assert_eq!(report.lines().count(), 7, "{report}");
    assert!(report.contains(",pca,true,"));
    assert!(report.contains(",pls,false,"));
}

#[test]
fn cv_prints_logloss_and_respects_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (meshes, _, demo) = make_cohort(dir.path(), 46);
    let cv = |seed: &str| -> String {
        let out = run_in(
            dir.path(),
            &[
                "cv",
                "--meshes",
                meshes.to_str().unwrap(),
                "--demographics",
                demo.to_str().unwrap(),
                "--dr",
                "pca",
                "--pca",
                "5",
                "--folds",
                "4",
                "--seed",
                seed,
            ],
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    let a = cv("3");
    let b = cv("3");
    let c = cv("4");
    assert!(a.starts_with("cv_logloss "));
    assert_eq!(a, b, "same seed must reproduce the same loss");
    assert_ne!(a, c, "different seeds should give different folds");
}
