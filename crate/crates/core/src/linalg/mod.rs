//! Dense linear algebra for knowledge separation: thin SVD of layer weights,
//! projection of a delta onto the singular basis, magnitude filtering of the
//! projected coefficients, and reconstruction back to weight space.
//!
//! All operations are pure functions on immutable inputs and bit-deterministic:
//! fixed summation order, no internal parallelism.

#![allow(clippy::needless_range_loop)]

mod svd;

use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

// ---------------------------------------------------------------------------
// Internal dense matrix
// ---------------------------------------------------------------------------

/// Row-major f64 matrix used inside this module and by the synthetic
/// scenario builder.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mat {
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) data: Vec<f64>,
}

impl Mat {
    pub(crate) fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub(crate) fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[cfg(test)]
    pub(crate) fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Mat {
            rows: r,
            cols: c,
            data,
        }
    }

    pub(crate) fn from_tensor(t: &DenseTensor) -> Self {
        assert!(t.is_matrix(), "expected a 2-D tensor");
        Mat {
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().to_vec(),
        }
    }

    pub(crate) fn into_tensor(self) -> DenseTensor {
        DenseTensor::new(vec![self.rows, self.cols], DType::F64, self.data)
            .expect("matrix buffer is consistent")
    }

    #[inline]
    pub(crate) fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `self · other`, accumulated in ascending-k order for every output
    /// element (deterministic).
    pub(crate) fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "inner dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.at(i, k);
                if aik == 0.0 {
                    continue;
                }
                let lhs = i * out.cols;
                let rhs = k * other.cols;
                for j in 0..other.cols {
                    out.data[lhs + j] += aik * other.data[rhs + j];
                }
            }
        }
        out
    }

    /// `self · x`, each row accumulated left to right.
    pub(crate) fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "vector length mismatch");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            out[i] = acc;
        }
        out
    }

    pub(crate) fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Public types
// ---------------------------------------------------------------------------

/// Thin-SVD factors of one layer's weight matrix: `W ≈ U · diag(S) · Vᵀ`
/// with U (d×r), V (k×r), r = min(d, k), singular values non-increasing.
///
/// Sign convention: in each column of U the entry of largest absolute value
/// is non-negative (ties broken by lowest row index); the matching V column
/// is flipped alongside so the product is unchanged.
#[derive(Debug, Clone)]
pub struct OrthogonalBasis {
    layer_name: String,
    u: DenseTensor,
    s: Vec<f64>,
    v: DenseTensor,
}

impl OrthogonalBasis {
    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    /// Left singular vectors, d×r.
    pub fn u(&self) -> &DenseTensor {
        &self.u
    }

    /// Singular values, non-increasing, length r.
    pub fn singular_values(&self) -> &[f64] {
        &self.s
    }

    /// Right singular vectors, k×r.
    pub fn v(&self) -> &DenseTensor {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Shape of the matrix this basis was computed from.
    pub fn source_shape(&self) -> (usize, usize) {
        (self.u.rows(), self.v.rows())
    }
}

/// Projected coefficient matrix `Uᵀ · ΔW · V` (r×r, generally non-diagonal)
/// together with its largest absolute entry.
#[derive(Debug, Clone)]
pub struct ProjectionSpectrum {
    layer_name: String,
    coeffs: DenseTensor,
    max_abs: f64,
}

impl ProjectionSpectrum {
    /// Wrap an r×r coefficient matrix; `max_abs` is computed here.
    pub fn new(layer_name: impl Into<String>, coeffs: DenseTensor) -> Result<Self> {
        if !coeffs.is_matrix() || coeffs.rows() != coeffs.cols() {
            return Err(Error::InvalidArgument {
                reason: format!(
                    "spectrum coefficients must be square 2-D, got {:?}",
                    coeffs.shape()
                ),
            });
        }
        if let Some((i, v)) = coeffs.first_non_finite() {
            return Err(Error::Numerical {
                reason: format!("spectrum contains non-finite value {v} at element {i}"),
            });
        }
        let max_abs = coeffs.data().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        Ok(ProjectionSpectrum {
            layer_name: layer_name.into(),
            coeffs,
            max_abs,
        })
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    /// Coefficient matrix, r×r.
    pub fn coeffs(&self) -> &DenseTensor {
        &self.coeffs
    }

    /// Largest absolute entry of the coefficient matrix.
    pub fn max_abs(&self) -> f64 {
        self.max_abs
    }

    pub fn rank(&self) -> usize {
        self.coeffs.rows()
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Thin SVD of a 2-D weight tensor. Deterministic across runs and thread
/// counts for identical input bits.
pub fn thin_svd(w: &DenseTensor, layer_name: &str) -> Result<OrthogonalBasis> {
    if !w.is_matrix() {
        return Err(Error::InvalidArgument {
            reason: format!(
                "SVD input must be 2-D, got shape {:?} for layer '{layer_name}'",
                w.shape()
            ),
        });
    }
    if let Some((i, v)) = w.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: layer_name.to_string(),
            detail: format!("element {i} is {v}"),
        });
    }

    let a = Mat::from_tensor(w);
    let (mut u, mut s, mut v) = if a.rows >= a.cols {
        svd::golub_kahan_svd(&a)?
    } else {
        // Decompose the transpose and swap factors: Wᵀ = U'SV'ᵀ ⇒ W = V'SU'ᵀ.
        let (u_t, s_t, v_t) = svd::golub_kahan_svd(&a.transpose())?;
        (v_t, s_t, u_t)
    };

    sort_descending(&mut u, &mut s, &mut v);
    canonicalize_signs(&mut u, &mut v);

    Ok(OrthogonalBasis {
        layer_name: layer_name.to_string(),
        u: u.into_tensor(),
        s,
        v: v.into_tensor(),
    })
}

/// Stable sort of singular triplets by value, non-increasing; ties keep the
/// original column order.
fn sort_descending(u: &mut Mat, s: &mut [f64], v: &mut Mat) {
    let r = s.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        s[b].partial_cmp(&s[a])
            .expect("finite singular values")
            .then(a.cmp(&b))
    });
    if order.iter().enumerate().all(|(i, &j)| i == j) {
        return;
    }
    let permute = |m: &Mat| {
        let mut out = Mat::zeros(m.rows, m.cols);
        for (new_j, &old_j) in order.iter().enumerate() {
            for i in 0..m.rows {
                out.set(i, new_j, m.at(i, old_j));
            }
        }
        out
    };
    *u = permute(u);
    *v = permute(v);
    let sorted: Vec<f64> = order.iter().map(|&j| s[j]).collect();
    s.copy_from_slice(&sorted);
}

/// Make the largest-magnitude entry of each U column non-negative, flipping
/// the paired V column to keep the product unchanged.
fn canonicalize_signs(u: &mut Mat, v: &mut Mat) {
    for j in 0..u.cols {
        let mut best_i = 0;
        let mut best = -1.0_f64;
        for i in 0..u.rows {
            let a = u.at(i, j).abs();
            if a > best {
                best = a;
                best_i = i;
            }
        }
        if u.at(best_i, j) < 0.0 {
            for i in 0..u.rows {
                let x = u.at(i, j);
                u.set(i, j, -x);
            }
            for i in 0..v.rows {
                let x = v.at(i, j);
                v.set(i, j, -x);
            }
        }
    }
}

/// Project a delta onto the basis: `coeffs = Uᵀ · ΔW · V`.
pub fn project_delta(basis: &OrthogonalBasis, delta: &DenseTensor) -> Result<ProjectionSpectrum> {
    let (d, k) = basis.source_shape();
    if !delta.is_matrix() || delta.rows() != d || delta.cols() != k {
        return Err(Error::ShapeMismatch {
            tensor: basis.layer_name.clone(),
            expected: vec![d, k],
            got: delta.shape().to_vec(),
        });
    }
    let u = Mat::from_tensor(&basis.u);
    let v = Mat::from_tensor(&basis.v);
    let dw = Mat::from_tensor(delta);
    let coeffs = u.transpose().matmul(&dw).matmul(&v);
    ProjectionSpectrum::new(basis.layer_name.clone(), coeffs.into_tensor())
}

/// Zero every coefficient with `|entry| < ξ` where `ξ = xi_fraction · max_abs`
/// of the input spectrum; entries with `|entry| ≥ ξ` are kept verbatim.
/// Applies element-wise over the full r×r matrix, diagonal and off-diagonal
/// alike. Returns a new spectrum with recomputed `max_abs`.
pub fn filter_spectrum(spec: &ProjectionSpectrum, xi_fraction: f64) -> Result<ProjectionSpectrum> {
    if xi_fraction.is_nan() || xi_fraction < 0.0 {
        return Err(Error::InvalidArgument {
            reason: format!("xi_fraction must be >= 0, got {xi_fraction}"),
        });
    }
    let xi = xi_fraction * spec.max_abs;
    let filtered: Vec<f64> = spec
        .coeffs
        .data()
        .iter()
        .map(|&v| if v.abs() >= xi { v } else { 0.0 })
        .collect();
    let r = spec.coeffs.rows();
    let coeffs = DenseTensor::new(vec![r, r], DType::F64, filtered).expect("same element count");
    ProjectionSpectrum::new(spec.layer_name.clone(), coeffs)
}

/// Threshold value `ξ = xi_fraction · max_abs` used by [`filter_spectrum`].
pub fn xi_threshold(spec: &ProjectionSpectrum, xi_fraction: f64) -> f64 {
    xi_fraction * spec.max_abs
}

/// Map filtered coefficients back to weight space: `U · coeffs · Vᵀ`.
pub fn reconstruct_delta(
    basis: &OrthogonalBasis,
    spec: &ProjectionSpectrum,
) -> Result<DenseTensor> {
    if spec.rank() != basis.rank() {
        return Err(Error::InvalidArgument {
            reason: format!(
                "spectrum rank {} does not match basis rank {} for layer '{}'",
                spec.rank(),
                basis.rank(),
                basis.layer_name
            ),
        });
    }
    let u = Mat::from_tensor(&basis.u);
    let v = Mat::from_tensor(&basis.v);
    let coeffs = Mat::from_tensor(&spec.coeffs);
    Ok(u.matmul(&coeffs).matmul(&v.transpose()).into_tensor())
}
