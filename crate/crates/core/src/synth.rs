//! Parametric synthetic cohort generator.
//!
//! Builds a region-labelled bi-ellipsoid "ventricle" template (LV endo/epi
//! shells plus an RV shell with a septal patch), then generates subjects as
//! template + class effect + confounder effects + iid Gaussian noise, with
//! every ground-truth direction stored alongside the cohort for oracle
//! checks. Confounder imbalance between classes is encoded in the per-class
//! sampling distributions.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Demographics};
use crate::error::{MorphoError, Result};
use crate::mesh::{self, flatten, signed_region_volume_mm3, RegionLabel, ShapeVector, TriMesh};

/// Per-class sampling distribution of one confounder column.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleDistribution {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

impl SampleDistribution {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            SampleDistribution::Normal { mean, sd } => {
                Normal::new(mean, sd).expect("valid normal").sample(rng)
            }
            SampleDistribution::Bernoulli { p } => f64::from(rng.gen::<f64>() < p),
        }
    }

    /// Theoretical mean and SD, used to express effect slopes per SD of the
    /// control-population distribution.
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            SampleDistribution::Normal { mean, sd } => (mean, sd),
            SampleDistribution::Bernoulli { p } => (p, (p * (1.0 - p)).sqrt().max(1e-12)),
        }
    }
}

/// A displacement-field direction: a named generator evaluated on the
/// template, or an explicit flattened vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DirectionSpec {
    Named(String),
    Explicit(Vec<f64>),
}

/// Class shape effect: unit direction scaled by `magnitude_mm`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassEffectSpec {
    pub direction: DirectionSpec,
    pub magnitude_mm: f64,
}

/// Shape effect of one confounder: unit direction scaled by
/// `slope_mm_per_sd` per control-population standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfounderEffectSpec {
    pub direction: DirectionSpec,
    pub slope_mm_per_sd: f64,
}

/// One confounder column: per-class distributions plus an optional shape
/// effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfounderSpec {
    pub column: String,
    pub control: SampleDistribution,
    pub case: SampleDistribution,
    #[serde(default)]
    pub effect: Option<ConfounderEffectSpec>,
}

/// Full generator specification (JSON-serializable).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_controls: usize,
    pub n_cases: usize,
    /// Template resolution; vertex count is a deterministic function of it.
    pub resolution: usize,
    pub class_effect: ClassEffectSpec,
    #[serde(default)]
    pub confounders: Vec<ConfounderSpec>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MorphoError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| MorphoError::parse("synth spec", path, e.to_string()))
    }
}

/// Ground-truth generation record written next to the cohort.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub class_direction: Vec<f64>,
    pub class_magnitude_mm: f64,
    pub confounder_directions: BTreeMap<String, Vec<f64>>,
    pub confounder_slopes: BTreeMap<String, f64>,
    pub noise_sd: f64,
    pub seed: u64,
}

const LV_CENTER: [f64; 3] = [0.0, 0.0, 0.0];
const LV_ENDO_AXES: [f64; 3] = [20.0, 20.0, 32.0];
const LV_EPI_AXES: [f64; 3] = [28.0, 28.0, 40.0];
const RV_CENTER: [f64; 3] = [-52.0, 0.0, 0.0];
const RV_AXES: [f64; 3] = [18.0, 26.0, 32.0];

/// UV-parameterized ellipsoid shell with outward orientation.
fn uv_ellipsoid(
    resolution: usize,
    axes: [f64; 3],
    center: [f64; 3],
) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let n_lat = 3 * resolution;
    let n_lon = 4 * resolution;
    let mut vertices = Vec::new();
    vertices.push([center[0], center[1], center[2] + axes[2]]); // top pole
    for i in 1..n_lat {
        let theta = std::f64::consts::PI * i as f64 / n_lat as f64;
        for j in 0..n_lon {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / n_lon as f64;
            vertices.push([
                center[0] + axes[0] * theta.sin() * phi.cos(),
                center[1] + axes[1] * theta.sin() * phi.sin(),
                center[2] + axes[2] * theta.cos(),
            ]);
        }
    }
    vertices.push([center[0], center[1], center[2] - axes[2]]); // bottom pole
    let bottom = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * n_lon + (j % n_lon);

    let mut faces = Vec::new();
    for j in 0..n_lon {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..(n_lat - 1) {
        for j in 0..n_lon {
            let (u0, u1) = (ring(i, j), ring(i, j + 1));
            let (l0, l1) = (ring(i + 1, j), ring(i + 1, j + 1));
            faces.push([u0, l0, l1]);
            faces.push([u0, l1, u1]);
        }
    }
    for j in 0..n_lon {
        faces.push([bottom, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)]);
    }
    (vertices, faces)
}

/// Closed, outward-oriented, region-labelled bi-ellipsoid template: LV
/// endocardial and epicardial shells plus an RV shell whose LV-facing side is
/// labelled as septum.
pub fn make_template(resolution: usize) -> Result<TriMesh> {
    if resolution < 2 {
        return Err(MorphoError::InvalidConfig(
            "template resolution must be >= 2".into(),
        ));
    }
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut region_map = Vec::new();
    for (axes, center, label) in [
        (LV_ENDO_AXES, LV_CENTER, RegionLabel::LvEndo),
        (LV_EPI_AXES, LV_CENTER, RegionLabel::LvEpi),
        (RV_AXES, RV_CENTER, RegionLabel::Rv),
    ] {
        let (v, f) = uv_ellipsoid(resolution, axes, center);
        let offset = vertices.len();
        for face in &f {
            faces.push([face[0] + offset, face[1] + offset, face[2] + offset]);
        }
        for p in &v {
            let l = if label == RegionLabel::Rv && p[0] > RV_CENTER[0] + 0.55 * RV_AXES[0] {
                RegionLabel::Septum
            } else {
                label
            };
            region_map.push(l);
        }
        vertices.extend(v);
    }
    TriMesh::new(vertices, faces, region_map)
}

fn is_lv(label: RegionLabel) -> bool {
    matches!(label, RegionLabel::LvEndo | RegionLabel::LvEpi)
}

fn is_rv(label: RegionLabel) -> bool {
    matches!(label, RegionLabel::Rv | RegionLabel::Septum)
}

/// Evaluate a named displacement field on the template; the result is a unit
/// vector in flattened shape space.
pub fn named_direction(template: &TriMesh, name: &str) -> Result<DVector<f64>> {
    let n = template.n_vertices();
    let mut d = DVector::zeros(3 * n);
    let add_radial = |d: &mut DVector<f64>, v: usize, center: [f64; 3], weight: f64| {
        let p = template.vertices[v];
        let r = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
        let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt().max(1e-9);
        for k in 0..3 {
            d[3 * v + k] += weight * r[k] / norm;
        }
    };
    match name {
        "dilate_lv" => {
            for v in 0..n {
                if is_lv(template.region_map[v]) {
                    add_radial(&mut d, v, LV_CENTER, 1.0);
                }
            }
        }
        "dilate_rv" => {
            for v in 0..n {
                if is_rv(template.region_map[v]) {
                    add_radial(&mut d, v, RV_CENTER, 1.0);
                }
            }
        }
        "dilate_both" => {
            for v in 0..n {
                if is_lv(template.region_map[v]) {
                    add_radial(&mut d, v, LV_CENTER, 1.0);
                } else {
                    add_radial(&mut d, v, RV_CENTER, 1.0);
                }
            }
        }
        "dilate_rv_outflow" => {
            // outflow-weighted dilation: strongest toward the RV base (+z)
            for v in 0..n {
                if is_rv(template.region_map[v]) {
                    let z = template.vertices[v][2] - RV_CENTER[2];
                    let w = (z / RV_AXES[2]).max(0.0);
                    add_radial(&mut d, v, RV_CENTER, w);
                }
            }
        }
        "thicken_lv_base" => {
            // epicardium pushed outward near the base; endo untouched
            for v in 0..n {
                if template.region_map[v] == RegionLabel::LvEpi {
                    let z = template.vertices[v][2] - LV_CENTER[2];
                    let w = ((z / LV_EPI_AXES[2]) + 1.0) / 2.0; // 0 apex .. 1 base
                    add_radial(&mut d, v, LV_CENTER, w * w);
                }
            }
        }
        "thicken_lv" => {
            for v in 0..n {
                if template.region_map[v] == RegionLabel::LvEpi {
                    add_radial(&mut d, v, LV_CENTER, 1.0);
                }
            }
        }
        "athlete_remodel" => {
            let a = named_direction(template, "dilate_both")?;
            let b = named_direction(template, "thicken_lv_base")?;
            let c = named_direction(template, "dilate_rv_outflow")?;
            d = a + b * 0.6 + c * 0.8;
        }
        "overweight_remodel" => {
            // predominantly mass increase with a smaller volume increase
            let a = named_direction(template, "thicken_lv")?;
            let b = named_direction(template, "dilate_both")?;
            d = a + b * 0.35;
        }
        other => {
            return Err(MorphoError::InvalidConfig(format!(
                "unknown effect direction {other:?}"
            )));
        }
    }
    let norm = d.norm();
    if norm <= 0.0 {
        return Err(MorphoError::Invalid(format!(
            "direction {name:?} is zero on this template"
        )));
    }
    Ok(d / norm)
}

fn resolve_direction(template: &TriMesh, spec: &DirectionSpec) -> Result<DVector<f64>> {
    match spec {
        DirectionSpec::Named(name) => named_direction(template, name),
        DirectionSpec::Explicit(values) => {
            if values.len() != 3 * template.n_vertices() {
                return Err(MorphoError::DimensionMismatch(format!(
                    "explicit direction has {} entries, template needs {}",
                    values.len(),
                    3 * template.n_vertices()
                )));
            }
            let d = DVector::from_vec(values.clone());
            let norm = d.norm();
            if norm <= 0.0 {
                return Err(MorphoError::Invalid("explicit direction is zero".into()));
            }
            Ok(d / norm)
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Independent per-subject random stream derived from (seed, subject index).
fn subject_rng(seed: u64, index: usize) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(splitmix64(
        seed.wrapping_add((index as u64).wrapping_mul(0x9e3779b97f4a7c15)),
    ))
}

/// Generate a cohort and its ground truth. Bit-reproducible per seed;
/// per-subject streams are independent.
pub fn generate(spec: &SynthSpec) -> Result<(Cohort, GroundTruth)> {
    if spec.n_controls == 0 || spec.n_cases == 0 {
        return Err(MorphoError::InvalidConfig(
            "both classes must be non-empty".into(),
        ));
    }
    if spec.noise_sd < 0.0 {
        return Err(MorphoError::InvalidConfig("noise_sd must be >= 0".into()));
    }
    let template = make_template(spec.resolution)?;
    let template_flat = flatten(&template);
    let p = template_flat.len();
    let n = spec.n_controls + spec.n_cases;

    let class_dir = resolve_direction(&template, &spec.class_effect.direction)?;
    let mut conf_dirs: Vec<Option<DVector<f64>>> = Vec::new();
    for c in &spec.confounders {
        conf_dirs.push(match &c.effect {
            Some(e) => Some(resolve_direction(&template, &e.direction)?),
            None => None,
        });
    }

    let mut shapes = DMatrix::zeros(n, p);
    let mut demo = DMatrix::zeros(n, spec.confounders.len() + 1);
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = u8::from(i >= spec.n_controls);
        let mut rng = subject_rng(spec.seed, i);
        let mut x = template_flat.coords.clone();
        if label == 1 {
            x += &class_dir * spec.class_effect.magnitude_mm;
        }
        for (j, c) in spec.confounders.iter().enumerate() {
            let dist = if label == 0 { c.control } else { c.case };
            let value = dist.sample(&mut rng);
            demo[(i, j)] = value;
            if let (Some(dir), Some(effect)) = (&conf_dirs[j], &c.effect) {
                let (m0, s0) = c.control.moments();
                let z = (value - m0) / s0;
                x += dir * (effect.slope_mm_per_sd * z);
            }
        }
        if spec.noise_sd > 0.0 {
            let normal = Normal::new(0.0, spec.noise_sd).expect("valid noise sd");
            for k in 0..p {
                x[k] += normal.sample(&mut rng);
            }
        }
        demo[(i, spec.confounders.len())] = f64::from(label);
        shapes.row_mut(i).copy_from(&x.transpose());
        ids.push(format!("s{i:04}"));
        labels.push(label);

        // degenerate-shape guard: every closed region keeps positive volume
        let subject = mesh::unflatten(&ShapeVector { coords: x }, &template)?;
        for regions in [
            vec![RegionLabel::LvEndo],
            vec![RegionLabel::LvEpi],
            vec![RegionLabel::Rv, RegionLabel::Septum],
        ] {
            let v = signed_region_volume_mm3(&subject, &regions)?;
            if v <= 0.0 {
                return Err(MorphoError::Invalid(format!(
                    "effect magnitudes produce a degenerate shape for subject {} \
                     (region {:?} signed volume {v:.1} mm^3)",
                    ids[i], regions[0]
                )));
            }
        }
    }

    let mut columns: Vec<String> = spec.confounders.iter().map(|c| c.column.clone()).collect();
    columns.push("class".into());
    let cohort = Cohort {
        ids,
        shapes,
        template,
        demographics: Demographics {
            columns,
            values: demo,
        },
        labels,
        deflated: false,
    };
    let ground_truth = GroundTruth {
        class_direction: class_dir.iter().copied().collect(),
        class_magnitude_mm: spec.class_effect.magnitude_mm,
        confounder_directions: spec
            .confounders
            .iter()
            .zip(&conf_dirs)
            .filter_map(|(c, d)| {
                d.as_ref()
                    .map(|d| (c.column.clone(), d.iter().copied().collect()))
            })
            .collect(),
        confounder_slopes: spec
            .confounders
            .iter()
            .filter_map(|c| {
                c.effect
                    .as_ref()
                    .map(|e| (c.column.clone(), e.slope_mm_per_sd))
            })
            .collect(),
        noise_sd: spec.noise_sd,
        seed: spec.seed,
    };
    Ok((cohort, ground_truth))
}

/// Write meshes (OFF), region map, demographics CSV and ground truth JSON
/// under `out_dir` (`meshes/`, `region_map.txt`, `demographics.csv`,
/// `ground_truth.json`).
pub fn write_cohort(out_dir: &Path, cohort: &Cohort, truth: &GroundTruth) -> Result<()> {
    let mesh_dir = out_dir.join("meshes");
    std::fs::create_dir_all(&mesh_dir).map_err(|e| MorphoError::io(&mesh_dir, e))?;
    for (i, id) in cohort.ids.iter().enumerate() {
        let m = mesh::unflatten(
            &ShapeVector {
                coords: cohort.shapes.row(i).transpose(),
            },
            &cohort.template,
        )?;
        mesh::write_off(&m, &mesh_dir.join(format!("{id}.off")))?;
    }
    mesh::write_region_map(&cohort.template.region_map, &out_dir.join("region_map.txt"))?;

    let mut csv = String::from("subject_id");
    for c in &cohort.demographics.columns {
        csv.push(',');
        csv.push_str(c);
    }
    csv.push('\n');
    for (i, id) in cohort.ids.iter().enumerate() {
        csv.push_str(id);
        for j in 0..cohort.demographics.columns.len() {
            csv.push(',');
            csv.push_str(&mesh::fmt_f64(cohort.demographics.values[(i, j)]));
        }
        csv.push('\n');
    }
    let csv_path = out_dir.join("demographics.csv");
    std::fs::write(&csv_path, csv).map_err(|e| MorphoError::io(&csv_path, e))?;

    let truth_path = out_dir.join("ground_truth.json");
    let json = serde_json::to_string_pretty(truth)
        .map_err(|e| MorphoError::Invalid(format!("ground truth serialization failed: {e}")))?;
    std::fs::write(&truth_path, json).map_err(|e| MorphoError::io(&truth_path, e))
}

/// Unit icosphere: an icosahedron subdivided `subdivisions` times with
/// vertices projected onto the unit sphere. Used as an analytic volume
/// oracle and for concentric-shell constructions.
pub fn icosphere(subdivisions: usize, radius: f64, region: RegionLabel) -> TriMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<[f64; 3]> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    for v in &mut vertices {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        *v = [v[0] / n, v[1] / n, v[2] / n];
    }
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for (k, (a, b)) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
                .iter()
                .enumerate()
            {
                let key = if a < b { (*a, *b) } else { (*b, *a) };
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    let pa = vertices[*a];
                    let pb = vertices[*b];
                    let mut m = [
                        (pa[0] + pb[0]) / 2.0,
                        (pa[1] + pb[1]) / 2.0,
                        (pa[2] + pb[2]) / 2.0,
                    ];
                    let n = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                    m = [m[0] / n, m[1] / n, m[2] / n];
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            new_faces.push([f[0], mid[0], mid[2]]);
            new_faces.push([f[1], mid[1], mid[0]]);
            new_faces.push([f[2], mid[2], mid[1]]);
            new_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = new_faces;
    }
    let region_map = vec![region; vertices.len()];
    let vertices = vertices
        .into_iter()
        .map(|v| [v[0] * radius, v[1] * radius, v[2] * radius])
        .collect();
    TriMesh::new(vertices, faces, region_map).expect("icosphere construction is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{closed_volume, measure};
    use approx::assert_relative_eq;

    fn basic_spec() -> SynthSpec {
        SynthSpec {
            n_controls: 6,
            n_cases: 6,
            resolution: 2,
            class_effect: ClassEffectSpec {
                direction: DirectionSpec::Named("athlete_remodel".into()),
                magnitude_mm: 2.0,
            },
            confounders: vec![ConfounderSpec {
                column: "bmi".into(),
                control: SampleDistribution::Normal {
                    mean: 25.0,
                    sd: 3.0,
                },
                case: SampleDistribution::Normal {
                    mean: 23.0,
                    sd: 2.5,
                },
                effect: Some(ConfounderEffectSpec {
                    direction: DirectionSpec::Named("overweight_remodel".into()),
                    slope_mm_per_sd: 1.0,
                }),
            }],
            noise_sd: 0.1,
            seed: 11,
        }
    }

    #[test]
    fn template_regions_closed_and_positive() {
        let t = make_template(3).unwrap();
        for regions in [
            vec![RegionLabel::LvEndo],
            vec![RegionLabel::LvEpi],
            vec![RegionLabel::Rv, RegionLabel::Septum],
        ] {
            let v = signed_region_volume_mm3(&t, &regions).unwrap();
            assert!(v > 0.0, "region {:?} signed volume {v}", regions[0]);
        }
        let m = measure(&t).unwrap();
        assert!(m.lv_edv > 0.0 && m.rv_edv > 0.0 && m.lv_mass > 0.0);
        // physiologic ballpark
        assert!(m.lv_edv > 30.0 && m.lv_edv < 250.0, "lv_edv {}", m.lv_edv);
        assert!(m.rv_edv > 30.0 && m.rv_edv < 250.0, "rv_edv {}", m.rv_edv);
        assert!(
            m.lv_mass > 40.0 && m.lv_mass < 250.0,
            "lv_mass {}",
            m.lv_mass
        );
    }

    #[test]
    fn template_vertex_count_deterministic_in_resolution() {
        for res in [2usize, 3, 4] {
            let t = make_template(res).unwrap();
            let n_lat = 3 * res;
            let n_lon = 4 * res;
            let per_shell = (n_lat - 1) * n_lon + 2;
            assert_eq!(t.n_vertices(), 3 * per_shell);
            let t2 = make_template(res).unwrap();
            assert_eq!(t, t2);
        }
    }

    #[test]
    fn template_has_septum_patch() {
        let t = make_template(3).unwrap();
        let septum = t
            .region_map
            .iter()
            .filter(|&&l| l == RegionLabel::Septum)
            .count();
        assert!(septum > 0, "no septum vertices labelled");
    }

    #[test]
    fn zero_noise_zero_effects_reproduces_template() {
        let spec = SynthSpec {
            n_controls: 3,
            n_cases: 3,
            resolution: 2,
            class_effect: ClassEffectSpec {
                direction: DirectionSpec::Named("dilate_both".into()),
                magnitude_mm: 0.0,
            },
            confounders: vec![],
            noise_sd: 0.0,
            seed: 1,
        };
        let (cohort, _) = generate(&spec).unwrap();
        let template_flat = flatten(&cohort.template);
        for i in 0..cohort.n_subjects() {
            let d = (cohort.shapes.row(i).transpose() - &template_flat.coords).norm();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn generation_bit_reproducible() {
        let spec = basic_spec();
        let (a, _) = generate(&spec).unwrap();
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(a.shapes, b.shapes);
        assert_eq!(a.demographics.values, b.demographics.values);
    }

    #[test]
    fn named_directions_are_unit_and_region_local() {
        let t = make_template(3).unwrap();
        for name in [
            "dilate_lv",
            "dilate_rv",
            "dilate_both",
            "dilate_rv_outflow",
            "thicken_lv_base",
            "thicken_lv",
            "athlete_remodel",
            "overweight_remodel",
        ] {
            let d = named_direction(&t, name).unwrap();
            assert_relative_eq!(d.norm(), 1.0, epsilon = 1e-12);
        }
        // LV dilation leaves RV untouched
        let d = named_direction(&t, "dilate_lv").unwrap();
        for v in 0..t.n_vertices() {
            if is_rv(t.region_map[v]) {
                assert_eq!(d[3 * v], 0.0);
            }
        }
        assert!(named_direction(&t, "no_such_effect").is_err());
    }

    #[test]
    fn effects_change_measurements_in_expected_direction() {
        let t = make_template(3).unwrap();
        let base = measure(&t).unwrap();
        let flat = flatten(&t);
        let apply = |name: &str, mag: f64| {
            let d = named_direction(&t, name).unwrap();
            let moved = mesh::unflatten(
                &ShapeVector {
                    coords: &flat.coords + d * mag,
                },
                &t,
            )
            .unwrap();
            measure(&moved).unwrap()
        };
        let dilated = apply("dilate_both", 3.0);
        assert!(dilated.lv_edv > base.lv_edv);
        assert!(dilated.rv_edv > base.rv_edv);
        let thickened = apply("thicken_lv_base", 3.0);
        assert!(thickened.lv_mass > base.lv_mass);
        assert_relative_eq!(thickened.lv_edv, base.lv_edv, epsilon = 1e-9);
        let outflow = apply("dilate_rv_outflow", 3.0);
        assert!(outflow.rv_edv > base.rv_edv);
        assert_relative_eq!(outflow.lv_edv, base.lv_edv, epsilon = 1e-9);
    }

    #[test]
    fn icosphere_volume_near_analytic() {
        let sphere = icosphere(3, 1.0, RegionLabel::LvEndo);
        let v = signed_region_volume_mm3(&sphere, &[RegionLabel::LvEndo]).unwrap();
        let analytic = 4.0 * std::f64::consts::PI / 3.0;
        assert!(
            (v - analytic).abs() / analytic < 0.01,
            "icosphere volume {v} vs {analytic}"
        );
    }

    #[test]
    fn concentric_sphere_mass_matches_analytic() {
        // endo r = 20 mm, epi r = 30 mm (2 and 3 cm)
        let endo = icosphere(3, 20.0, RegionLabel::LvEndo);
        let epi = icosphere(3, 30.0, RegionLabel::LvEpi);
        let rv = icosphere(2, 15.0, RegionLabel::Rv);
        let mut vertices = endo.vertices.clone();
        let mut faces = endo.faces.clone();
        let mut regions = endo.region_map.clone();
        let off = vertices.len();
        vertices.extend(epi.vertices.iter().copied());
        faces.extend(
            epi.faces
                .iter()
                .map(|f| [f[0] + off, f[1] + off, f[2] + off]),
        );
        regions.extend(epi.region_map.iter().copied());
        let off2 = vertices.len();
        vertices.extend(rv.vertices.iter().map(|v| [v[0] + 100.0, v[1], v[2]]));
        faces.extend(
            rv.faces
                .iter()
                .map(|f| [f[0] + off2, f[1] + off2, f[2] + off2]),
        );
        regions.extend(rv.region_map.iter().copied());
        let mesh = TriMesh::new(vertices, faces, regions).unwrap();
        let m = measure(&mesh).unwrap();
        // analytic: 1.05 g/mL x (4 pi / 3)(3^3 - 2^3) cm^3
        let analytic = 1.05 * (4.0 * std::f64::consts::PI / 3.0) * (27.0 - 8.0);
        assert!(
            (m.lv_mass - analytic).abs() / analytic < 0.01,
            "mass {} vs analytic {analytic}",
            m.lv_mass
        );
    }

    #[test]
    fn ground_truth_recoverable_by_deflation() {
        let mut spec = basic_spec();
        spec.n_controls = 40;
        spec.n_cases = 40;
        spec.noise_sd = 0.05; // well below slope
        let (cohort, truth) = generate(&spec).unwrap();
        let controls = cohort.class_indices(0);
        let model =
            crate::confound::deflation_fit(&cohort, &["bmi".into()], &controls, None).unwrap();
        let d_true = DVector::from_vec(truth.confounder_directions["bmi"].clone());
        let row = model.coeffs.row(0).transpose().normalize();
        assert!(
            row.dot(&d_true).abs() >= 0.9,
            "recovered confounder direction dot {}",
            row.dot(&d_true)
        );
    }

    #[test]
    fn degenerate_magnitude_rejected() {
        let spec = SynthSpec {
            n_controls: 2,
            n_cases: 2,
            resolution: 2,
            class_effect: ClassEffectSpec {
                direction: DirectionSpec::Named("dilate_both".into()),
                magnitude_mm: -2000.0, // turns the shells inside out
            },
            confounders: vec![],
            noise_sd: 0.0,
            seed: 1,
        };
        let err = generate(&spec).unwrap_err();
        assert!(err.to_string().contains("degenerate"), "{err}");
    }

    #[test]
    fn writes_complete_output_directory() {
        let spec = SynthSpec {
            n_controls: 3,
            n_cases: 3,
            ..basic_spec()
        };
        let (cohort, truth) = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_cohort(dir.path(), &cohort, &truth).unwrap();
        assert!(dir.path().join("meshes/s0000.off").exists());
        assert!(dir.path().join("region_map.txt").exists());
        assert!(dir.path().join("demographics.csv").exists());
        assert!(dir.path().join("ground_truth.json").exists());
        // loadable round trip through the cohort loader
        let loaded = crate::cohort::load_cohort(
            &dir.path().join("meshes"),
            Some(&dir.path().join("region_map.txt")),
            &dir.path().join("demographics.csv"),
            "subject_id",
            "class",
        )
        .unwrap();
        assert_eq!(loaded.n_subjects(), 6);
        assert_eq!(loaded.labels.iter().filter(|&&l| l == 1).count(), 3);
        assert!(closed_volume(&loaded.template, &[RegionLabel::LvEndo]).unwrap() > 0.0);
    }
}
