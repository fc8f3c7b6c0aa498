//! Dense ground truth for the Hessian.
//!
//! At a minimizer the Hessian is `2 KᵀK` with `K = [B_1ᵀ ⊗ A_1 | … | B_Lᵀ ⊗ A_L]`,
//! assembled here by explicit Kronecker expansion. Away from minima the
//! finite-difference Hessian built from central differences of the gradient
//! is used instead.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directional::{fd_hessian_vector, Direction};
use crate::factors::{partial_products, FactorChain, Target};
use crate::linalg::{sorted_symmetric_eigen, top_eigenpair, KrylovOptions};
use crate::sharpness::certify_minimizer;
use crate::{Error, Mat, Result};

/// Default cap on dense entries (`N · d_L · d_0` for `K`, `N²` for the Hessian).
pub const DEFAULT_ENTRY_CAP: usize = 10_000_000;

/// Largest `N` for which the full eigendecomposition is computed.
pub const FULL_EIGEN_LIMIT: usize = 2000;

/// Default finite-difference step for the dense FD Hessian.
pub const FD_STEP: f64 = 1e-4;

/// Relative threshold under which an eigenvalue counts toward the nullity.
pub const NULLITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct BlockMatrixK {
    /// Block `i` is `B_iᵀ ⊗ A_i`, shape `(d_L d_0) × (d_i d_{i-1})`.
    pub blocks: Vec<Mat>,
    /// Horizontal concatenation of the blocks, `(d_L d_0) × N`.
    pub dense: Mat,
}

fn check_cap(entries: usize, cap: usize) -> Result<()> {
    if entries > cap {
        Err(Error::SizeCap { entries, cap })
    } else {
        Ok(())
    }
}

/// Explicitly assembles `K` at a certified minimizer.
pub fn assemble_k(chain: &FactorChain, target: &Target, cap: usize) -> Result<BlockMatrixK> {
    let sig = chain.signature();
    let rows = sig.output_dim() * sig.input_dim();
    let n = sig.num_params();
    check_cap(rows.saturating_mul(n), cap)?;
    certify_minimizer(chain, target)?;
    let pp = partial_products(chain);
    let blocks: Vec<Mat> = pp
        .above
        .iter()
        .zip(&pp.below)
        .map(|(a, b)| b.transpose().kronecker(a))
        .collect();
    let mut dense = Mat::zeros(rows, n);
    let mut col = 0;
    for b in &blocks {
        dense.columns_mut(col, b.ncols()).copy_from(b);
        col += b.ncols();
    }
    Ok(BlockMatrixK { blocks, dense })
}

/// A dense symmetric Hessian with its spectrum in descending order.
#[derive(Debug, Clone)]
pub struct DenseHessian {
    pub matrix: Mat,
    pub eigenvalues: Vec<f64>,
    /// Columns match `eigenvalues`; absent above [`FULL_EIGEN_LIMIT`].
    pub eigenvectors: Option<Mat>,
}

impl DenseHessian {
    /// Decomposes a symmetric matrix. Above [`FULL_EIGEN_LIMIT`] only the top
    /// eigenvalue is computed.
    pub fn from_matrix(matrix: Mat) -> Result<Self> {
        let n = matrix.nrows();
        if n != matrix.ncols() {
            return Err(Error::Shape("Hessian must be square".into()));
        }
        if n <= FULL_EIGEN_LIMIT {
            let (vals, vecs) = sorted_symmetric_eigen(&matrix);
            Ok(Self {
                matrix,
                eigenvalues: vals,
                eigenvectors: Some(vecs),
            })
        } else {
            let top = top_eigenpair(n, |v| &matrix * v, &KrylovOptions::default())?;
            Ok(Self {
                matrix,
                eigenvalues: vec![top.value],
                eigenvectors: None,
            })
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_min(&self) -> f64 {
        *self.eigenvalues.last().expect("nonempty spectrum")
    }

    /// `v_1`, the eigenvector of the largest eigenvalue.
    pub fn top_eigenvector(&self) -> Option<DVector<f64>> {
        self.eigenvectors.as_ref().map(|v| v.column(0).into_owned())
    }

    /// `v_N`, the eigenvector of the smallest eigenvalue.
    pub fn bottom_eigenvector(&self) -> Option<DVector<f64>> {
        self.eigenvectors
            .as_ref()
            .map(|v| v.column(v.ncols() - 1).into_owned())
    }

    /// Count of eigenvalues at most `rel_tol · λ_max`. Requires the full
    /// spectrum.
    pub fn nullity(&self, rel_tol: f64) -> Option<usize> {
        if self.eigenvalues.len() != self.dim() {
            return None;
        }
        let cut = rel_tol * self.lambda_max().abs();
        Some(self.eigenvalues.iter().filter(|&&l| l <= cut).count())
    }

    pub fn summary(&self) -> EigenSummary {
        EigenSummary {
            n: self.dim(),
            lambda_max: self.lambda_max(),
            lambda_min: if self.eigenvalues.len() == self.dim() {
                Some(self.lambda_min())
            } else {
                None
            },
            nullity_tol: NULLITY_TOL,
            nullity: self.nullity(NULLITY_TOL),
        }
    }

    /// Writes the eigenvectors as little-endian `f64` in row-major order, with
    /// a JSON sidecar describing the layout next to it (`<path>.json`).
    pub fn write_eigenvectors(&self, path: &Path) -> Result<()> {
        let vecs = self
            .eigenvectors
            .as_ref()
            .ok_or_else(|| Error::Domain("eigenvectors were not computed".into()))?;
        let mut bytes = Vec::with_capacity(vecs.len() * 8);
        for i in 0..vecs.nrows() {
            for j in 0..vecs.ncols() {
                bytes.extend_from_slice(&vecs[(i, j)].to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&bytes)?;
        let sidecar = EigenvectorSidecar {
            rows: vecs.nrows(),
            cols: vecs.ncols(),
            dtype: "f64".into(),
            byte_order: "little".into(),
            layout: "row-major; column j is the eigenvector of eigenvalues[j]".into(),
            eigenvalues: self.eigenvalues.clone(),
        };
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        std::fs::write(side, serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSummary {
    pub n: usize,
    pub lambda_max: f64,
    pub lambda_min: Option<f64>,
    pub nullity_tol: f64,
    pub nullity: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenvectorSidecar {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    pub eigenvalues: Vec<f64>,
}

/// `H = 2 KᵀK` at a certified minimizer, with its eigendecomposition.
pub fn dense_hessian_at_minimum(
    chain: &FactorChain,
    target: &Target,
    cap: usize,
) -> Result<DenseHessian> {
    let n = chain.signature().num_params();
    check_cap(n.saturating_mul(n), cap)?;
    let k = assemble_k(chain, target, cap)?;
    let mut h = k.dense.transpose() * &k.dense * 2.0;
    symmetrize(&mut h);
    DenseHessian::from_matrix(h)
}

/// Finite-difference Hessian at any point: column `j` is the central
/// difference of the gradient along coordinate `j`, then `(H + Hᵀ)/2`.
pub fn fd_dense_hessian(
    chain: &FactorChain,
    target: &Target,
    h: f64,
    cap: usize,
) -> Result<DenseHessian> {
    let sig = chain.signature();
    let n = sig.num_params();
    check_cap(n.saturating_mul(n), cap)?;
    target.check_compatible(chain)?;
    let columns: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let dir = Direction::from_flat(sig, &e)?;
            Ok(fd_hessian_vector(chain, target, &dir, h)?.flatten())
        })
        .collect::<Result<_>>()?;
    let mut m = Mat::from_columns(&columns);
    symmetrize(&mut m);
    DenseHessian::from_matrix(m)
}

fn symmetrize(m: &mut Mat) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}
