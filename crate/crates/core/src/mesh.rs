//! Point-distribution-model mesh representation, OFF file I/O, enclosed-volume
//! computation and the derived clinical-style measurements.
//!
//! Every mesh in a corpus shares the same connectivity (point-to-point
//! correspondence), so a shape is fully described by the flat coordinate
//! vector `(x0, y0, z0, x1, y1, z1, ...)` in millimetres. Connectivity and
//! per-vertex region labels live once on a template `TriMesh`.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};

/// Myocardium tissue density in g/mL, the standard clinical constant.
pub const MYOCARDIAL_DENSITY_G_PER_ML: f64 = 1.05;

/// Per-vertex anatomical region label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionLabel {
    LvEndo,
    LvEpi,
    Rv,
    Septum,
}

impl RegionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::LvEndo => "LV_ENDO",
            RegionLabel::LvEpi => "LV_EPI",
            RegionLabel::Rv => "RV",
            RegionLabel::Septum => "SEPTUM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "LV_ENDO" => Some(RegionLabel::LvEndo),
            "LV_EPI" => Some(RegionLabel::LvEpi),
            "RV" => Some(RegionLabel::Rv),
            "SEPTUM" => Some(RegionLabel::Septum),
            _ => None,
        }
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Flattened landmark coordinates, length `3N`, ordered `(x, y, z)` per vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeVector {
    pub coords: DVector<f64>,
}

impl ShapeVector {
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        if !coords.len().is_multiple_of(3) {
            return Err(MorphoError::DimensionMismatch(format!(
                "shape vector length {} is not divisible by 3",
                coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(MorphoError::Invalid(
                "shape vector contains non-finite entries".into(),
            ));
        }
        Ok(ShapeVector { coords })
    }

    pub fn from_vec(coords: Vec<f64>) -> Result<Self> {
        Self::new(DVector::from_vec(coords))
    }

    pub fn n_vertices(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Coordinates of vertex `i`.
    pub fn vertex(&self, i: usize) -> [f64; 3] {
        [
            self.coords[3 * i],
            self.coords[3 * i + 1],
            self.coords[3 * i + 2],
        ]
    }
}

/// Triangle mesh with shared-corpus connectivity and per-vertex region labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    /// Vertex positions, `N x 3`, millimetres (flattened row-major).
    pub vertices: Vec<[f64; 3]>,
    /// Triangles as vertex index triples.
    pub faces: Vec<[usize; 3]>,
    /// One label per vertex.
    pub region_map: Vec<RegionLabel>,
}

impl TriMesh {
    pub fn new(
        vertices: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
        region_map: Vec<RegionLabel>,
    ) -> Result<Self> {
        let n = vertices.len();
        if region_map.len() != n {
            return Err(MorphoError::DimensionMismatch(format!(
                "region map has {} labels for {} vertices",
                region_map.len(),
                n
            )));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(MorphoError::Invalid(format!(
                    "face {fi} references vertex out of range (n = {n})"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MorphoError::Invalid(format!(
                    "face {fi} is degenerate: {f:?}"
                )));
            }
        }
        Ok(TriMesh {
            vertices,
            faces,
            region_map,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// True when `other` shares this mesh's connectivity (faces only; vertex
    /// positions may differ).
    pub fn same_connectivity(&self, other: &TriMesh) -> bool {
        self.n_vertices() == other.n_vertices() && self.faces == other.faces
    }

    /// Replace vertex positions, keeping connectivity and labels.
    pub fn with_vertices(&self, vertices: Vec<[f64; 3]>) -> Result<Self> {
        if vertices.len() != self.n_vertices() {
            return Err(MorphoError::DimensionMismatch(format!(
                "{} vertices supplied for template with {}",
                vertices.len(),
                self.n_vertices()
            )));
        }
        Ok(TriMesh {
            vertices,
            faces: self.faces.clone(),
            region_map: self.region_map.clone(),
        })
    }
}

/// Concatenate vertex coordinates into a flat shape vector.
pub fn flatten(mesh: &TriMesh) -> ShapeVector {
    let mut coords = Vec::with_capacity(3 * mesh.n_vertices());
    for v in &mesh.vertices {
        coords.extend_from_slice(v);
    }
    ShapeVector {
        coords: DVector::from_vec(coords),
    }
}

/// Rebuild a mesh from a flat shape vector using `template` connectivity.
pub fn unflatten(v: &ShapeVector, template: &TriMesh) -> Result<TriMesh> {
    if v.len() != 3 * template.n_vertices() {
        return Err(MorphoError::DimensionMismatch(format!(
            "shape vector length {} does not match template with {} vertices",
            v.len(),
            template.n_vertices()
        )));
    }
    let vertices = (0..template.n_vertices()).map(|i| v.vertex(i)).collect();
    template.with_vertices(vertices)
}

/// Milliliters enclosed by the oriented submesh of faces whose vertices all
/// carry a label in `regions`.
///
/// Uses the divergence-theorem signed-tetrahedron sum over the region faces.
/// A negative signed volume means the submesh is inward-oriented; the sign is
/// dropped after a warning so callers always receive a positive volume.
pub fn closed_volume(mesh: &TriMesh, regions: &[RegionLabel]) -> Result<f64> {
    let signed = signed_region_volume_mm3(mesh, regions)?;
    if signed < 0.0 {
        eprintln!(
            "warning: region {:?} is inward-oriented; using |signed volume|",
            region_set_name(regions)
        );
    }
    Ok(signed.abs() / 1000.0)
}

/// Signed region volume in cubic millimetres. Positive for outward-oriented
/// closed surfaces. Errors if the region submesh has boundary edges.
pub fn signed_region_volume_mm3(mesh: &TriMesh, regions: &[RegionLabel]) -> Result<f64> {
    let faces = region_faces(mesh, regions);
    check_closed(&faces, &region_set_name(regions))?;
    let mut six_vol = 0.0;
    for f in &faces {
        let a = mesh.vertices[f[0]];
        let b = mesh.vertices[f[1]];
        let c = mesh.vertices[f[2]];
        // a . (b x c)
        six_vol += a[0] * (b[1] * c[2] - b[2] * c[1])
            + a[1] * (b[2] * c[0] - b[0] * c[2])
            + a[2] * (b[0] * c[1] - b[1] * c[0]);
    }
    Ok(six_vol / 6.0)
}

fn region_set_name(regions: &[RegionLabel]) -> String {
    regions
        .iter()
        .map(|r| r.as_str())
        .collect::<Vec<_>>()
        .join("+")
}

fn region_faces(mesh: &TriMesh, regions: &[RegionLabel]) -> Vec<[usize; 3]> {
    mesh.faces
        .iter()
        .filter(|f| f.iter().all(|&v| regions.contains(&mesh.region_map[v])))
        .copied()
        .collect()
}

fn check_closed(faces: &[[usize; 3]], region: &str) -> Result<()> {
    let mut edges: HashMap<(usize, usize), i64> = HashMap::new();
    for f in faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            let key = if a < b { (a, b) } else { (b, a) };
            // +1 for the canonical direction, -1 for the reverse
            *edges.entry(key).or_insert(0) += if a < b { 1 } else { -1 };
        }
    }
    let boundary = edges.values().filter(|&&c| c != 0).count();
    if faces.is_empty() || boundary > 0 {
        return Err(MorphoError::OpenSurface {
            region: region.to_string(),
            boundary_edges: boundary,
        });
    }
    Ok(())
}

/// Automatic measurements mirroring classical clinical indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    /// LV end-diastolic (cavity) volume, mL.
    pub lv_edv: f64,
    /// RV end-diastolic volume (enclosed by RV epicardial surface plus the
    /// septal interface), mL.
    pub rv_edv: f64,
    /// LV myocardial mass, grams: (epi volume - endo volume) x density.
    pub lv_mass: f64,
}

/// Compute cavity volumes and LV mass from a region-labelled mesh.
pub fn measure(mesh: &TriMesh) -> Result<MeasurementSet> {
    let endo = closed_volume(mesh, &[RegionLabel::LvEndo])?;
    let epi = closed_volume(mesh, &[RegionLabel::LvEpi])?;
    let rv = closed_volume(mesh, &[RegionLabel::Rv, RegionLabel::Septum])?;
    Ok(MeasurementSet {
        lv_edv: endo,
        rv_edv: rv,
        lv_mass: (epi - endo) * MYOCARDIAL_DENSITY_G_PER_ML,
    })
}

/// Read an ASCII OFF mesh. Region labels default to `Rv` and are normally
/// replaced from a sidecar file via [`read_region_map`].
pub fn read_off(path: &Path) -> Result<TriMesh> {
    let file = std::fs::File::open(path).map_err(|e| MorphoError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut tokens: Vec<String> = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| MorphoError::io(path, e))?;
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_string));
    }
    let mut it = tokens.into_iter();
    let magic = it
        .next()
        .ok_or_else(|| MorphoError::parse("OFF", path, "empty file"))?;
    if magic != "OFF" {
        return Err(MorphoError::parse(
            "OFF",
            path,
            format!("expected OFF header, found {magic:?}"),
        ));
    }
    let next_usize = |what: &str, it: &mut dyn Iterator<Item = String>| -> Result<usize> {
        it.next()
            .ok_or_else(|| MorphoError::parse("OFF", path, format!("missing {what}")))?
            .parse::<usize>()
            .map_err(|_| MorphoError::parse("OFF", path, format!("invalid {what}")))
    };
    let n_vertices = next_usize("vertex count", &mut it)?;
    let n_faces = next_usize("face count", &mut it)?;
    let _n_edges = next_usize("edge count", &mut it)?;

    let mut vertices = Vec::with_capacity(n_vertices);
    for vi in 0..n_vertices {
        let mut v = [0.0f64; 3];
        for coord in &mut v {
            let tok = it.next().ok_or_else(|| {
                MorphoError::parse("OFF", path, format!("truncated at vertex {vi}"))
            })?;
            *coord = tok.parse::<f64>().map_err(|_| {
                MorphoError::parse(
                    "OFF",
                    path,
                    format!("bad coordinate {tok:?} at vertex {vi}"),
                )
            })?;
        }
        vertices.push(v);
    }
    let mut faces = Vec::with_capacity(n_faces);
    for fi in 0..n_faces {
        let arity = next_usize(&format!("face {fi} arity"), &mut it)?;
        if arity != 3 {
            return Err(MorphoError::parse(
                "OFF",
                path,
                format!("face {fi} has {arity} vertices; only triangles are supported"),
            ));
        }
        let mut f = [0usize; 3];
        for slot in &mut f {
            *slot = next_usize(&format!("face {fi} index"), &mut it)?;
        }
        faces.push(f);
    }
    let region_map = vec![RegionLabel::Rv; n_vertices];
    TriMesh::new(vertices, faces, region_map)
}

/// Write an ASCII OFF mesh. Full double precision, deterministic output.
pub fn write_off(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "OFF\n{} {} 0\n",
        mesh.n_vertices(),
        mesh.n_faces()
    ));
    for v in &mesh.vertices {
        out.push_str(&format!(
            "{} {} {}\n",
            fmt_f64(v[0]),
            fmt_f64(v[1]),
            fmt_f64(v[2])
        ));
    }
    for f in &mesh.faces {
        out.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    std::fs::write(path, out).map_err(|e| MorphoError::io(path, e))
}

/// Shortest round-trip decimal representation of an f64.
pub(crate) fn fmt_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// Read a sidecar region map: one label per vertex line.
pub fn read_region_map(path: &Path, n_vertices: usize) -> Result<Vec<RegionLabel>> {
    let text = std::fs::read_to_string(path).map_err(|e| MorphoError::io(path, e))?;
    let mut labels = Vec::with_capacity(n_vertices);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let label = RegionLabel::parse(line).ok_or_else(|| {
            MorphoError::parse(
                "region map",
                path,
                format!("unknown label {line:?} on line {}", i + 1),
            )
        })?;
        labels.push(label);
    }
    if labels.len() != n_vertices {
        return Err(MorphoError::parse(
            "region map",
            path,
            format!("{} labels for {} vertices", labels.len(), n_vertices),
        ));
    }
    Ok(labels)
}

/// Write a sidecar region map.
pub fn write_region_map(labels: &[RegionLabel], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| MorphoError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for l in labels {
        writeln!(w, "{l}").map_err(|e| MorphoError::io(path, e))?;
    }
    Ok(())
}
