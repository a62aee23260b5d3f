//! Small dense helpers on row-major `d x d` buffers.
//!
//! The hot loops (subset tables, collapsed Gibbs) factor thousands of tiny
//! matrices per step, so these avoid allocation and work on flat slices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative diagonal jitter used for the single Cholesky retry.
pub const CHOLESKY_JITTER: f64 = 1e-8;

/// In-place lower Cholesky factor of the row-major matrix `a`. Returns
/// `false` if a pivot is not strictly positive.
pub(crate) fn cholesky_in_place(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / ljj;
        }
        for k in (j + 1)..d {
            a[j * d + k] = 0.0;
        }
    }
    true
}

/// Cholesky with one jittered retry (`1e-8 * trace / d` on the diagonal).
/// `a` is consumed as scratch; the factor is left in it on success.
pub(crate) fn cholesky_jittered(a: &mut [f64], d: usize) -> bool {
    let backup: smallbuf::Buf = smallbuf::Buf::copy_of(a);
    if cholesky_in_place(a, d) {
        return true;
    }
    a.copy_from_slice(backup.as_slice());
    let trace: f64 = (0..d).map(|i| a[i * d + i]).sum();
    let jitter = CHOLESKY_JITTER * trace / d as f64;
    if !(jitter > 0.0) {
        return false;
    }
    for i in 0..d {
        a[i * d + i] += jitter;
    }
    cholesky_in_place(a, d)
}

/// `ln det` from a lower Cholesky factor.
pub(crate) fn chol_log_det(l: &[f64], d: usize) -> f64 {
    2.0 * (0..d).map(|i| l[i * d + i].ln()).sum::<f64>()
}

/// Squared Mahalanobis norm `v^T (L L^T)^{-1} v` by forward substitution.
/// `scratch` must hold at least `d` values.
pub(crate) fn chol_quad_form(l: &[f64], d: usize, v: &[f64], scratch: &mut [f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        let mut s = v[i];
        for k in 0..i {
            s -= l[i * d + k] * scratch[k];
        }
        let y = s / l[i * d + i];
        scratch[i] = y;
        acc += y * y;
    }
    acc
}

pub(crate) fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Owned lower Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    d: usize,
    lower: Vec<f64>,
    log_det: f64,
}

impl SpdFactor {
    /// Factor `cov`, retrying once with diagonal jitter before failing.
    pub fn new(cov: &DMatrix<f64>, label: &str) -> Result<Self> {
        let d = cov.nrows();
        if cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.ncols(),
            });
        }
        let mut lower = to_row_major(cov);
        if !cholesky_jittered(&mut lower, d) {
            return Err(Error::NonPositiveDefiniteCovariance {
                label: label.to_string(),
            });
        }
        let log_det = chol_log_det(&lower, d);
        Ok(SpdFactor { d, lower, log_det })
    }

    /// Strict factorization without jitter, for validating inputs.
    pub fn strict(cov: &DMatrix<f64>, label: &str) -> Result<Self> {
        let d = cov.nrows();
        if cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.ncols(),
            });
        }
        let mut lower = to_row_major(cov);
        if !cholesky_in_place(&mut lower, d) {
            return Err(Error::NonPositiveDefiniteCovariance {
                label: label.to_string(),
            });
        }
        let log_det = chol_log_det(&lower, d);
        Ok(SpdFactor { d, lower, log_det })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    #[cfg(test)]
    pub(crate) fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let mut scratch = smallbuf::Buf::zeros(self.d);
        chol_quad_form(&self.lower, self.d, v, scratch.as_mut_slice())
    }

    /// `L z` for a standard-normal vector `z`.
    pub fn mul_lower(&self, z: &[f64]) -> DVector<f64> {
        let d = self.d;
        DVector::from_fn(d, |i, _| (0..=i).map(|k| self.lower[i * d + k] * z[k]).sum())
    }
}

/// Stack-or-heap scratch buffer for small vectors.
pub(crate) mod smallbuf {
    const INLINE: usize = 16;

    pub(crate) enum Buf {
        Inline([f64; INLINE], usize),
        Heap(Vec<f64>),
    }

    impl Buf {
        pub(crate) fn zeros(n: usize) -> Self {
            if n <= INLINE {
                Buf::Inline([0.0; INLINE], n)
            } else {
                Buf::Heap(vec![0.0; n])
            }
        }

        pub(crate) fn copy_of(src: &[f64]) -> Self {
            let mut b = Buf::zeros(src.len());
            b.as_mut_slice().copy_from_slice(src);
            b
        }

        pub(crate) fn as_slice(&self) -> &[f64] {
            match self {
                Buf::Inline(a, n) => &a[..*n],
                Buf::Heap(v) => v,
            }
        }

        pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
            match self {
                Buf::Inline(a, n) => &mut a[..*n],
                Buf::Heap(v) => v,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_matches_nalgebra() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0]);
        let ours = SpdFactor::new(&m, "m").unwrap();
        let theirs = m.clone().cholesky().unwrap();
        let l = theirs.l();
        for i in 0..3 {
            for j in 0..3 {
                assert!((ours.lower()[i * 3 + j] - l[(i, j)]).abs() < 1e-14);
            }
        }
        assert!((ours.log_det() - m.determinant().ln()).abs() < 1e-12);
        let v = [0.3, -1.2, 2.0];
        let inv = m.clone().try_inverse().unwrap();
        let dv = DVector::from_row_slice(&v);
        let expected = (dv.transpose() * inv * &dv)[(0, 0)];
        assert!((ours.quad_form(&v) - expected).abs() < 1e-12);
    }

    #[test]
    fn jitter_rescues_rank_deficient_psd() {
        // rank one: x x^T
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(SpdFactor::strict(&m, "m").is_err());
        assert!(SpdFactor::new(&m, "m").is_ok());
    }

    #[test]
    fn zero_matrix_is_rejected() {
        let m = DMatrix::zeros(3, 3);
        match SpdFactor::new(&m, "zero") {
            Err(Error::NonPositiveDefiniteCovariance { label }) => assert_eq!(label, "zero"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
