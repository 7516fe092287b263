//! The linear shape model `M = mean + A (s * x / ||x||)`.
//!
//! `A` is a tall `3n x d` matrix with orthonormal columns, so the map from the
//! shape parameter `s * x/||x||` to vertex space is an isometry onto its image:
//! distances between parameter vectors equal distances between the meshes
//! they produce.

mod basis;
pub mod container;
mod interp;

pub use basis::{fit_pca, orthonormality_error, orthonormalize};
pub use container::{read_container, write_container, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use interp::{interpolate_codes, slerp_identity};

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SfmError};
use crate::mesh::{Face, Mesh};

/// Norms at or below this are treated as zero when normalizing.
pub const EPS_NORM: f64 = 1e-12;
/// Tolerance on `A^T A = I` for a finalized model.
pub const EPS_ORTH: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SphereFaceModel {
    mean: DVector<f64>,
    basis: DMatrix<f64>,
    faces: Option<Vec<Face>>,
}

impl SphereFaceModel {
    /// Wraps an already orthonormal basis. Fails if `A^T A` deviates from the
    /// identity by more than [`EPS_ORTH`] in any entry.
    pub fn new(mean: DVector<f64>, basis: DMatrix<f64>, faces: Option<Vec<Face>>) -> Result<Self> {
        if mean.len() % 3 != 0 || mean.is_empty() {
            return Err(SfmError::InvalidConfig(format!(
                "mean length {} is not a positive multiple of 3",
                mean.len()
            )));
        }
        if basis.nrows() != mean.len() {
            return Err(SfmError::DimensionMismatch {
                what: "basis rows",
                expected: mean.len(),
                actual: basis.nrows(),
            });
        }
        if basis.ncols() == 0 || basis.ncols() > basis.nrows() {
            return Err(SfmError::InvalidConfig(format!(
                "latent dimension {} must be in 1..={}",
                basis.ncols(),
                basis.nrows()
            )));
        }
        if mean.iter().chain(basis.iter()).any(|v| !v.is_finite()) {
            return Err(SfmError::NonFinite("model mean or basis".into()));
        }
        let deviation = max_abs_gram_deviation(&basis);
        if deviation > EPS_ORTH {
            return Err(SfmError::NotOrthonormal { deviation });
        }
        // Validates face indices against the vertex count.
        let mesh = Mesh::new(mean.as_slice().to_vec(), faces)?;
        let faces = mesh.faces().map(<[Face]>::to_vec);
        Ok(Self { mean, basis, faces })
    }

    /// Orthonormalizes `basis` first, then wraps it.
    pub fn finalize(mean: DVector<f64>, basis: &DMatrix<f64>, faces: Option<Vec<Face>>) -> Result<Self> {
        let q = orthonormalize(basis)?;
        Self::new(mean, q, faces)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn faces(&self) -> Option<&[Face]> {
        self.faces.as_deref()
    }

    /// Latent dimension `d`.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn vertex_count(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn mean_mesh(&self) -> Mesh {
        Mesh::new(self.mean.as_slice().to_vec(), self.faces.clone()).expect("model mean is a valid mesh")
    }

    /// Mesh for an explicit shape parameter `p = s * identity`.
    pub fn reconstruct_param(&self, p: &DVector<f64>) -> Result<Mesh> {
        if p.len() != self.dim() {
            return Err(SfmError::DimensionMismatch {
                what: "shape parameter length",
                expected: self.dim(),
                actual: p.len(),
            });
        }
        let v = &self.mean + &self.basis * p;
        Mesh::new(v.as_slice().to_vec(), self.faces.clone())
    }

    /// `A^T (vertices - mean)`.
    pub fn project_param(&self, mesh: &Mesh) -> Result<DVector<f64>> {
        if mesh.vertex_count() != self.vertex_count() {
            return Err(SfmError::DimensionMismatch {
                what: "mesh vertex count",
                expected: self.vertex_count(),
                actual: mesh.vertex_count(),
            });
        }
        let centered = DVector::from_column_slice(mesh.vertices()) - &self.mean;
        Ok(self.basis.tr_mul(&centered))
    }
}

fn max_abs_gram_deviation(basis: &DMatrix<f64>) -> f64 {
    let gram = basis.tr_mul(basis);
    let d = gram.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Raw latent vector `x` plus scale `s`. The identity is `x / ||x||`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCode {
    pub x: DVector<f64>,
    pub s: f64,
}

impl ShapeCode {
    pub fn new(x: DVector<f64>, s: f64) -> Self {
        Self { x, s }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `x / ||x||`.
    pub fn identity(&self) -> Result<DVector<f64>> {
        identity(self)
    }

    /// `s * x / ||x||`.
    pub fn shape_param(&self) -> Result<DVector<f64>> {
        Ok(identity(self)? * self.s)
    }

    /// Code whose shape parameter is exactly `p`. The zero vector maps to the
    /// first axis with `s = 0`.
    pub fn from_param(p: DVector<f64>) -> Self {
        let s = p.norm();
        if s > EPS_NORM {
            Self { x: p, s }
        } else {
            let mut x = DVector::zeros(p.len());
            if !x.is_empty() {
                x[0] = 1.0;
            }
            Self { x, s: 0.0 }
        }
    }
}

/// Unit identity vector `x / ||x||`.
pub fn identity(code: &ShapeCode) -> Result<DVector<f64>> {
    normalized(&code.x, "identity vector")
}

pub(crate) fn normalized(x: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let norm = x.norm();
    if !norm.is_finite() {
        return Err(SfmError::NonFinite(what.into()));
    }
    if norm <= EPS_NORM {
        return Err(SfmError::NearZeroNorm {
            what,
            norm,
            eps: EPS_NORM,
        });
    }
    Ok(x / norm)
}

/// `mean + A (s * x / ||x||)`.
pub fn reconstruct(model: &SphereFaceModel, code: &ShapeCode) -> Result<Mesh> {
    if code.dim() != model.dim() {
        return Err(SfmError::DimensionMismatch {
            what: "code dimension",
            expected: model.dim(),
            actual: code.dim(),
        });
    }
    model.reconstruct_param(&code.shape_param()?)
}

/// Closed-form least-squares code: `p = A^T (mesh - mean)`, `x = p`, `s = ||p||`.
pub fn project(model: &SphereFaceModel, mesh: &Mesh) -> Result<ShapeCode> {
    Ok(ShapeCode::from_param(model.project_param(mesh)?))
}
