//! Rigid landmark alignment and generalized partial Procrustes atlas
//! construction. No scaling is applied at any point; size variability is left
//! for the confounder-handling stages.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};
use crate::mesh::ShapeVector;

/// Row-per-subject matrix of flattened shapes, `n x 3N`.
pub type ShapeMatrix = DMatrix<f64>;

/// Proper rigid transform applied as `x -> R (x - t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Apply to every vertex of a flat shape vector.
    pub fn apply(&self, shape: &ShapeVector) -> ShapeVector {
        let n = shape.n_vertices();
        let mut out = DVector::zeros(3 * n);
        for i in 0..n {
            let p = Vector3::new(
                shape.coords[3 * i],
                shape.coords[3 * i + 1],
                shape.coords[3 * i + 2],
            );
            let q = self.rotation * (p - self.translation);
            out[3 * i] = q.x;
            out[3 * i + 1] = q.y;
            out[3 * i + 2] = q.z;
        }
        ShapeVector { coords: out }
    }

    /// Orthonormality and determinant sanity check.
    pub fn is_proper(&self, tol: f64) -> bool {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        err <= tol && (self.rotation.determinant() - 1.0).abs() <= 1e-6
    }
}

/// Fitted atlas: final mean shape, the per-subject transforms onto it, and the
/// aligned shapes themselves.
#[derive(Debug, Clone)]
pub struct AtlasModel {
    pub mean_shape: ShapeVector,
    pub per_subject_transforms: Vec<RigidTransform>,
    pub aligned: ShapeMatrix,
    pub iterations_run: usize,
    pub converged: bool,
}

fn centroid(shape: &ShapeVector) -> Vector3<f64> {
    let n = shape.n_vertices() as f64;
    let mut c = Vector3::zeros();
    for i in 0..shape.n_vertices() {
        c += Vector3::new(
            shape.coords[3 * i],
            shape.coords[3 * i + 1],
            shape.coords[3 * i + 2],
        );
    }
    c / n
}

/// Second singular value of the centered landmark cloud; near zero for
/// collinear or coincident configurations.
fn spread_rank2(shape: &ShapeVector) -> f64 {
    let c = centroid(shape);
    let mut cov = Matrix3::zeros();
    for i in 0..shape.n_vertices() {
        let d = Vector3::new(
            shape.coords[3 * i],
            shape.coords[3 * i + 1],
            shape.coords[3 * i + 2],
        ) - c;
        cov += d * d.transpose();
    }
    let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eig[1].max(0.0).sqrt()
}

/// Closed-form minimizer of `|| R (moving - t) - target ||^2` over proper
/// rotations, via SVD of the landmark cross-covariance (Kabsch). Returns the
/// transform and the transformed shape. Size is preserved.
pub fn rigid_align(
    moving: &ShapeVector,
    target: &ShapeVector,
) -> Result<(RigidTransform, ShapeVector)> {
    if moving.len() != target.len() {
        return Err(MorphoError::DimensionMismatch(format!(
            "moving has length {}, target {}",
            moving.len(),
            target.len()
        )));
    }
    let n = moving.n_vertices();
    if n < 3 {
        return Err(MorphoError::DegenerateLandmarks(format!(
            "{n} landmarks; at least 3 required"
        )));
    }
    for (name, s) in [("moving", moving), ("target", target)] {
        if spread_rank2(s) < 1e-9 {
            return Err(MorphoError::DegenerateLandmarks(format!(
                "{name} landmarks are collinear or coincident"
            )));
        }
    }

    let cm = centroid(moving);
    let ct = centroid(target);
    let mut h = Matrix3::zeros();
    for i in 0..n {
        let p = Vector3::new(
            moving.coords[3 * i],
            moving.coords[3 * i + 1],
            moving.coords[3 * i + 2],
        ) - cm;
        let q = Vector3::new(
            target.coords[3 * i],
            target.coords[3 * i + 1],
            target.coords[3 * i + 2],
        ) - ct;
        h += p * q.transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let v_t = svd.v_t.expect("svd with v_t requested");
    let d = (v_t.transpose() * u.transpose()).determinant();
    let sign = if d < 0.0 { -1.0 } else { 1.0 };
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let rotation = v_t.transpose() * correction * u.transpose();
    // R (x - t) + 0 maps cm onto ct when t = cm - R^T ct
    let translation = cm - rotation.transpose() * ct;
    let transform = RigidTransform {
        rotation,
        translation,
    };
    let aligned = transform.apply(moving);
    Ok((transform, aligned))
}

/// Iterative mean-estimate / re-register loop over the shape rows until the
/// mean stabilizes (RMS change per landmark below `tol`) or `max_iter`.
/// Non-convergence is reported in the model, not fatal.
pub fn generalized_procrustes(
    shapes: &ShapeMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<AtlasModel> {
    let n = shapes.nrows();
    let p = shapes.ncols();
    if n < 2 {
        return Err(MorphoError::Invalid(format!(
            "generalized Procrustes needs at least 2 shapes, got {n}"
        )));
    }
    if !p.is_multiple_of(3) {
        return Err(MorphoError::DimensionMismatch(format!(
            "shape matrix has {p} columns, not divisible by 3"
        )));
    }
    let originals: Vec<ShapeVector> = (0..n)
        .map(|i| ShapeVector {
            coords: shapes.row(i).transpose(),
        })
        .collect();

    let mut aligned: Vec<ShapeVector> = originals.clone();
    let mut transforms = vec![RigidTransform::identity(); n];
    let mut prev_mean: Option<DVector<f64>> = None;
    let mut converged = false;
    let mut iterations_run = 0;

    for _ in 0..max_iter {
        iterations_run += 1;
        let mut mean = DVector::zeros(p);
        for s in &aligned {
            mean += &s.coords;
        }
        mean /= n as f64;

        if let Some(prev) = &prev_mean {
            let rms = ((&mean - prev).norm_squared() / (p as f64 / 3.0)).sqrt();
            if rms < tol {
                converged = true;
                break;
            }
        }
        let mean_shape = ShapeVector {
            coords: mean.clone(),
        };
        // registrations are independent; the mean update is the barrier
        let results: Vec<(RigidTransform, ShapeVector)> = originals
            .par_iter()
            .map(|s| rigid_align(s, &mean_shape))
            .collect::<Result<Vec<_>>>()?;
        for (i, (t, a)) in results.into_iter().enumerate() {
            transforms[i] = t;
            aligned[i] = a;
        }
        prev_mean = Some(mean);
    }

    let mut mean = DVector::zeros(p);
    for s in &aligned {
        mean += &s.coords;
    }
    mean /= n as f64;

    let mut aligned_mat = DMatrix::zeros(n, p);
    for (i, s) in aligned.iter().enumerate() {
        aligned_mat.row_mut(i).copy_from(&s.coords.transpose());
    }
    Ok(AtlasModel {
        mean_shape: ShapeVector { coords: mean },
        per_subject_transforms: transforms,
        aligned: aligned_mat,
        iterations_run,
        converged,
    })
}

/// Align one shape to a fixed reference (used to bring new subjects into an
/// existing atlas before scoring).
pub fn align_to_reference(shape: &ShapeVector, reference: &ShapeVector) -> Result<ShapeVector> {
    let (_, aligned) = rigid_align(shape, reference)?;
    Ok(aligned)
}
