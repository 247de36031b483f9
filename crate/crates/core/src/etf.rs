//! Simplex equiangular tight frames used as a fixed classifier.
//!
//! A simplex ETF over `K` classes in `R^d` (`d >= K`) is
//!
//! ```text
//! E = sqrt(K / (K - 1)) * U * (I_K - 1/K * 1 1ᵀ),   UᵀU = I_K
//! ```
//!
//! Its columns are unit vectors whose pairwise inner products all equal
//! `-1/(K-1)`, and they sum to zero. The whole label space (base plus every
//! incremental session) gets one frame up front; sessions address subsets of
//! its columns.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, streams};
use crate::scalar::Scalar;
use crate::serialize;

const MAX_ROTATION_ATTEMPTS: u32 = 8;

/// Fixed classifier prototypes for the whole label space.
#[derive(Debug, Clone, PartialEq)]
pub struct EtfPrototypes<T> {
    dim: usize,
    num_classes: usize,
    seed: u64,
    columns: Matrix<T>,
}

/// Worst-case deviations of a prototype matrix from simplex-ETF geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryCertificate {
    pub max_norm_error: f64,
    pub max_gram_error: f64,
    pub sum_norm: f64,
    pub tol: f64,
    pub passed: bool,
}

impl<T: Scalar> EtfPrototypes<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.columns
    }

    /// Prototype `ŵ_k`.
    pub fn column(&self, k: usize) -> &[T] {
        self.columns.col(k)
    }

    /// Target inner product between distinct prototypes, `-1/(K-1)`.
    pub fn off_diagonal(&self) -> T {
        -T::one() / T::from_usize_lossy(self.num_classes - 1)
    }

    /// `Ŵᵀ x`: inner product of `x` with every prototype.
    pub fn logits(&self, x: &[T]) -> Vec<T> {
        self.columns.matvec_t(x)
    }

    /// Wraps an arbitrary matrix as prototypes without checking geometry.
    ///
    /// Used for loading files and for building deliberately broken fixtures;
    /// call [`verify_etf`] to certify the result.
    pub fn from_matrix_unchecked(columns: Matrix<T>, seed: u64) -> Self {
        Self {
            dim: columns.rows(),
            num_classes: columns.cols(),
            seed,
            columns,
        }
    }

    pub fn cast<U: Scalar>(&self) -> EtfPrototypes<U> {
        EtfPrototypes {
            dim: self.dim,
            num_classes: self.num_classes,
            seed: self.seed,
            columns: self.columns.map(|v| U::lit(v.to_f64_lossy())),
        }
    }

    /// Applies `x ↦ Q x` to every prototype.
    pub fn rotated(&self, q: &Matrix<T>) -> Self {
        Self {
            columns: q.matmul(&self.columns),
            ..self.clone()
        }
    }
}

/// Builds a seeded simplex ETF.
///
/// `U` is the orthonormalized (positive-diagonal QR) factor of a standard
/// Gaussian `dim × num_classes` matrix drawn from the `(seed, attempt)`
/// stream; a rank-deficient draw is retried on the next stream.
pub fn make_etf<T: Scalar>(dim: usize, num_classes: usize, seed: u64) -> Result<EtfPrototypes<T>> {
    if num_classes < 2 {
        return Err(Error::TooFewClasses(num_classes));
    }
    if dim < num_classes {
        return Err(Error::DimensionTooSmall {
            dim,
            classes: num_classes,
        });
    }
    let u = (0..MAX_ROTATION_ATTEMPTS)
        .find_map(|attempt| {
            let mut rng = rng::seeded(seed, streams::ETF_ROTATION + attempt as u64);
            let raw = Matrix::from_col_major(
                dim,
                num_classes,
                rng::gaussian_vec(&mut rng, dim * num_classes),
            );
            linalg::orthonormalize(&raw).ok()
        })
        .ok_or(Error::DegenerateRotation {
            attempts: MAX_ROTATION_ATTEMPTS,
        })?;
    Ok(EtfPrototypes {
        dim,
        num_classes,
        seed,
        columns: simplex_from_rotation(&u),
    })
}

/// `sqrt(K/(K-1)) · U · (I - 11ᵀ/K)` computed column-wise as `u_k - ū`.
fn simplex_from_rotation<T: Scalar>(u: &Matrix<T>) -> Matrix<T> {
    let k = u.cols();
    let kk = T::from_usize_lossy(k);
    let mut centroid = vec![T::zero(); u.rows()];
    for c in u.columns() {
        linalg::axpy(T::one() / kk, c, &mut centroid);
    }
    let factor = (kk / (kk - T::one())).sqrt();
    let mut e = u.clone();
    for j in 0..k {
        let col = e.col_mut(j);
        for (v, &m) in col.iter_mut().zip(&centroid) {
            *v = factor * (*v - m);
        }
    }
    e
}

/// Certifies simplex-ETF geometry of `protos` at tolerance `tol`.
///
/// Never fails: bad geometry is reported through `passed = false`.
pub fn verify_etf<T: Scalar>(protos: &EtfPrototypes<T>, tol: f64) -> GeometryCertificate {
    certify_columns(protos.matrix(), tol)
}

pub(crate) fn certify_columns<T: Scalar>(cols: &Matrix<T>, tol: f64) -> GeometryCertificate {
    let k = cols.cols();
    let gram = cols.gram();
    let target = if k > 1 { -1.0 / (k as f64 - 1.0) } else { 0.0 };
    let mut max_norm_error = 0.0f64;
    let mut max_gram_error = 0.0f64;
    for a in 0..k {
        let n = gram[(a, a)].to_f64_lossy().sqrt();
        max_norm_error = max_norm_error.max((n - 1.0).abs());
        for b in 0..k {
            if a != b {
                let dev = (gram[(a, b)].to_f64_lossy() - target).abs();
                max_gram_error = max_gram_error.max(dev);
            }
        }
    }
    let mut sum = vec![T::zero(); cols.rows()];
    for c in cols.columns() {
        linalg::axpy(T::one(), c, &mut sum);
    }
    let sum_norm = linalg::norm(&sum).to_f64_lossy();
    let ok = |v: f64, bound: f64| v.is_finite() && v <= bound;
    GeometryCertificate {
        max_norm_error,
        max_gram_error,
        sum_norm,
        tol,
        passed: ok(max_norm_error, tol) && ok(max_gram_error, tol) && ok(sum_norm, 10.0 * tol),
    }
}

/// Read-only view of a subset of prototype columns.
#[derive(Debug, Clone)]
pub struct PrototypeSlice<'a, T> {
    protos: &'a EtfPrototypes<T>,
    ids: Vec<usize>,
}

impl<'a, T: Scalar> PrototypeSlice<'a, T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.ids
    }

    /// `i`-th column of the slice (prototype of class `class_ids()[i]`).
    pub fn col(&self, i: usize) -> &'a [T] {
        self.protos.column(self.ids[i])
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        self.protos.matrix().select_columns(&self.ids)
    }
}

/// Selects the prototypes of `class_ids`, in the given order.
pub fn slice_prototypes<'a, T: Scalar>(
    protos: &'a EtfPrototypes<T>,
    class_ids: &[usize],
) -> Result<PrototypeSlice<'a, T>> {
    if let Some(&bad) = class_ids.iter().find(|&&c| c >= protos.num_classes) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: protos.num_classes,
        });
    }
    Ok(PrototypeSlice {
        protos,
        ids: class_ids.to_vec(),
    })
}

/// On-disk prototype file: columns stored row-major (`d` rows of `K` values).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeFile {
    pub dim: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub columns: Vec<f64>,
}

impl<T: Scalar> From<&EtfPrototypes<T>> for PrototypeFile {
    fn from(p: &EtfPrototypes<T>) -> Self {
        PrototypeFile {
            dim: p.dim,
            num_classes: p.num_classes,
            seed: p.seed,
            columns: p.columns.to_row_major().into_iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }
}

impl PrototypeFile {
    pub fn into_prototypes<T: Scalar>(self) -> Result<EtfPrototypes<T>> {
        if self.columns.len() != self.dim * self.num_classes {
            return Err(Error::Format(format!(
                "expected {}x{} = {} values, found {}",
                self.dim,
                self.num_classes,
                self.dim * self.num_classes,
                self.columns.len()
            )));
        }
        let vals: Vec<T> = self.columns.iter().map(|&v| T::lit(v)).collect();
        Ok(EtfPrototypes::from_matrix_unchecked(
            Matrix::from_row_major(self.dim, self.num_classes, &vals),
            self.seed,
        ))
    }
}

impl<T: Scalar> EtfPrototypes<T> {
    pub fn to_json(&self) -> Result<String> {
        serialize::to_json_string(&PrototypeFile::from(self))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<PrototypeFile>(s)?.into_prototypes()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
