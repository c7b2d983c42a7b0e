//! The analysis unit: corresponded shapes, a demographics table and binary
//! class labels, loaded from a mesh directory plus a CSV.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::align::ShapeMatrix;
use crate::error::{MorphoError, Result};
use crate::mesh::{self, TriMesh};

/// Column-oriented numeric demographics table. Subject order matches the
/// owning cohort.
#[derive(Debug, Clone)]
pub struct Demographics {
    pub columns: Vec<String>,
    /// `n_subjects x n_columns`.
    pub values: DMatrix<f64>,
}

impl Demographics {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.column_index(name)
            .map(|j| self.values.column(j).iter().copied().collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Demographics {
        let mut values = DMatrix::zeros(indices.len(), self.columns.len());
        for (row, &i) in indices.iter().enumerate() {
            values.row_mut(row).copy_from(&self.values.row(i));
        }
        Demographics {
            columns: self.columns.clone(),
            values,
        }
    }
}

/// Shapes, demographics and class labels for one study population.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub ids: Vec<String>,
    /// `n x 3N` flattened shapes (row per subject).
    pub shapes: ShapeMatrix,
    /// Shared connectivity and region labels.
    pub template: TriMesh,
    pub demographics: Demographics,
    /// 0 = control, 1 = case.
    pub labels: Vec<u8>,
    /// True once confounding deflation has been applied.
    pub deflated: bool,
}

impl Cohort {
    pub fn n_subjects(&self) -> usize {
        self.ids.len()
    }

    pub fn n_coords(&self) -> usize {
        self.shapes.ncols()
    }

    pub fn class_indices(&self, label: u8) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn has_both_classes(&self) -> bool {
        let cases = self.labels.iter().filter(|&&l| l == 1).count();
        cases > 0 && cases < self.labels.len()
    }

    /// New cohort restricted to the given subject rows (order preserved).
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        let mut shapes = DMatrix::zeros(indices.len(), self.shapes.ncols());
        for (row, &i) in indices.iter().enumerate() {
            shapes.row_mut(row).copy_from(&self.shapes.row(i));
        }
        Cohort {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            shapes,
            template: self.template.clone(),
            demographics: self.demographics.subset(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            deflated: self.deflated,
        }
    }

    /// Same cohort with the shape matrix replaced (used by deflation).
    pub fn with_shapes(&self, shapes: ShapeMatrix, deflated: bool) -> Result<Cohort> {
        if shapes.nrows() != self.n_subjects() || shapes.ncols() != self.n_coords() {
            return Err(MorphoError::DimensionMismatch(format!(
                "replacement shapes are {}x{}, cohort is {}x{}",
                shapes.nrows(),
                shapes.ncols(),
                self.n_subjects(),
                self.n_coords()
            )));
        }
        Ok(Cohort {
            ids: self.ids.clone(),
            shapes,
            template: self.template.clone(),
            demographics: self.demographics.clone(),
            labels: self.labels.clone(),
            deflated,
        })
    }
}

/// Read every `.off` file in a directory (filename stem = subject id,
/// lexicographically sorted) and check shared connectivity.
pub fn load_corpus(
    mesh_dir: &Path,
    region_map: Option<&Path>,
) -> Result<(Vec<String>, ShapeMatrix, TriMesh)> {
    let mut entries: Vec<_> = std::fs::read_dir(mesh_dir)
        .map_err(|e| MorphoError::io(mesh_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "off").unwrap_or(false))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(MorphoError::Invalid(format!(
            "no .off meshes found in {}",
            mesh_dir.display()
        )));
    }
    let mut ids = Vec::with_capacity(entries.len());
    let mut template: Option<TriMesh> = None;
    let mut shapes: Option<DMatrix<f64>> = None;
    for (i, path) in entries.iter().enumerate() {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let m = mesh::read_off(path)?;
        match &template {
            None => {
                let mut t = m.clone();
                if let Some(rpath) = region_map {
                    t.region_map = mesh::read_region_map(rpath, t.n_vertices())?;
                }
                shapes = Some(DMatrix::zeros(entries.len(), 3 * t.n_vertices()));
                template = Some(t);
            }
            Some(t) => {
                if !t.same_connectivity(&m) {
                    return Err(MorphoError::Invalid(format!(
                        "mesh {} does not share corpus connectivity",
                        path.display()
                    )));
                }
            }
        }
        let flat = mesh::flatten(&m);
        shapes
            .as_mut()
            .unwrap()
            .row_mut(i)
            .copy_from(&flat.coords.transpose());
        ids.push(id);
    }
    Ok((ids, shapes.unwrap(), template.unwrap()))
}

/// Read a demographics CSV (header row; one `subject_id`-keyed row per
/// subject) aligned to the given subject order.
pub fn load_demographics(path: &Path, ids: &[String], id_col: &str) -> Result<Demographics> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| MorphoError::parse("CSV", path, e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| MorphoError::parse("CSV", path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let id_idx =
        headers
            .iter()
            .position(|h| h == id_col)
            .ok_or_else(|| MorphoError::MissingColumn {
                column: id_col.to_string(),
                path: path.to_path_buf(),
            })?;
    let columns: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != id_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows: HashMap<String, Vec<f64>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| MorphoError::parse("CSV", path, e.to_string()))?;
        let id = record
            .get(id_idx)
            .ok_or_else(|| MorphoError::parse("CSV", path, "short row"))?
            .to_string();
        let mut vals = Vec::with_capacity(columns.len());
        for (i, field) in record.iter().enumerate() {
            if i == id_idx {
                continue;
            }
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| MorphoError::MissingValue {
                    subject: id.clone(),
                    column: headers[i].clone(),
                })?;
            vals.push(v);
        }
        rows.insert(id, vals);
    }

    let mut values = DMatrix::zeros(ids.len(), columns.len());
    for (r, id) in ids.iter().enumerate() {
        let vals = rows
            .get(id)
            .ok_or_else(|| MorphoError::UnknownSubject(id.clone()))?;
        for (c, v) in vals.iter().enumerate() {
            values[(r, c)] = *v;
        }
    }
    Ok(Demographics { columns, values })
}

/// Assemble a cohort from a mesh directory, region map, demographics CSV and
/// class column (values must be 0 for controls, 1 for cases).
pub fn load_cohort(
    mesh_dir: &Path,
    region_map: Option<&Path>,
    demographics_csv: &Path,
    id_col: &str,
    class_col: &str,
) -> Result<Cohort> {
    let (ids, shapes, template) = load_corpus(mesh_dir, region_map)?;
    let demographics = load_demographics(demographics_csv, &ids, id_col)?;
    let class_vals = demographics
        .column(class_col)
        .ok_or_else(|| MorphoError::MissingColumn {
            column: class_col.to_string(),
            path: demographics_csv.to_path_buf(),
        })?;
    let mut labels = Vec::with_capacity(ids.len());
    for (i, v) in class_vals.iter().enumerate() {
        if *v == 0.0 {
            labels.push(0);
        } else if *v == 1.0 {
            labels.push(1);
        } else {
            return Err(MorphoError::Invalid(format!(
                "class column {class_col:?} must be 0 or 1; subject {} has {v}",
                ids[i]
            )));
        }
    }
    let cohort = Cohort {
        ids,
        shapes,
        template,
        demographics,
        labels,
        deflated: false,
    };
    if !cohort.has_both_classes() {
        return Err(MorphoError::SingleClass);
    }
    Ok(cohort)
}
