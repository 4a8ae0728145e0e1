//! Seeded randomness, Beta sampling, dense vector/matrix primitives and the
//! unit-sphere projection.

mod matrix;
mod rng;

pub use matrix::{gemm, matmul, matmul_nt, matmul_tn, Matrix};
pub use rng::{Domain, SeededRng, StreamKey};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Norms below this are treated as a degenerate (all-zero) embedding.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

/// Tolerance on `| ‖v‖ − 1 |` for a vector flagged as normalized.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// A D-dimensional embedding, optionally known to lie on the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    normalized: bool,
}

impl FeatureVector {
    /// Wraps raw coordinates; the normalized flag is left unset.
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    /// Wraps coordinates that the caller asserts are unit-norm.
    ///
    /// Fails with `NotNormalized` if the assertion does not hold.
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        let norm = norm(&values);
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotNormalized { index: 0, norm });
        }
        Ok(Self {
            values,
            normalized: true,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

/// Sequential `Σ aᵢbᵢ`; callers guarantee equal lengths.
#[inline]
pub fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot_slice(v, v).sqrt()
}

/// Projects `v` onto the unit sphere.
pub fn l2_normalize(v: &FeatureVector) -> Result<FeatureVector> {
    let n = v.norm();
    if n < ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroVector { norm: n });
    }
    let values = v.values.iter().map(|x| x / n).collect();
    Ok(FeatureVector {
        values,
        normalized: true,
    })
}

pub fn dot(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(dot_slice(&a.values, &b.values))
}

/// Normalizes each row of `h` in place of a copy, returning the unit rows and
/// the original norms (needed for the backward pass).
pub fn normalize_rows(h: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut z = h.clone();
    let mut norms = Vec::with_capacity(h.rows());
    for i in 0..h.rows() {
        let row = z.row_mut(i);
        let n = norm(row);
        if n < ZERO_NORM_THRESHOLD {
            return Err(Error::ZeroVector { norm: n });
        }
        for x in row.iter_mut() {
            *x /= n;
        }
        norms.push(n);
    }
    Ok((z, norms))
}

/// Vector-Jacobian product of `z = h / ‖h‖` for one row:
/// `∂L/∂h = (∂L/∂z − z (z·∂L/∂z)) / ‖h‖`.
pub fn normalize_backward_row(z: &[f64], norm: f64, dz: &[f64], dh: &mut [f64]) {
    let proj = dot_slice(z, dz);
    for ((out, zi), gi) in dh.iter_mut().zip(z).zip(dz) {
        *out = (gi - zi * proj) / norm;
    }
}

/// Row-wise [`normalize_backward_row`].
pub fn normalize_rows_backward(z: &Matrix, norms: &[f64], dz: &Matrix) -> Matrix {
    let mut dh = Matrix::zeros(z.rows(), z.cols());
    for (i, &n) in norms.iter().enumerate() {
        normalize_backward_row(z.row(i), n, dz.row(i), dh.row_mut(i));
    }
    dh
}

/// Shape of a (possibly shifted) Beta draw: `shift + Beta(alpha, beta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaSample {
    pub alpha: f64,
    pub beta: f64,
    pub shift: f64,
}

impl BetaSample {
    pub fn new(alpha: f64, beta: f64, shift: f64) -> Self {
        Self { alpha, beta, shift }
    }

    /// `Beta(alpha, alpha) + shift`, the form used for every mixing weight.
    pub fn symmetric(alpha: f64, shift: f64) -> Self {
        Self::new(alpha, alpha, shift)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) || !self.alpha.is_finite() || !self.beta.is_finite()
        {
            return Err(Error::InvalidShape {
                alpha: self.alpha,
                beta: self.beta,
            });
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.shift + self.alpha / (self.alpha + self.beta)
    }
}

/// Draws `shift + X / (X + Y)` with `X ~ Gamma(alpha, 1)`, `Y ~ Gamma(beta, 1)`.
///
/// Draws that round onto an endpoint of `(shift, shift + 1)` are rejected and
/// redrawn, so the result always lies in the open interval.
pub fn sample_beta<R: Rng + ?Sized>(spec: &BetaSample, rng: &mut R) -> Result<f64> {
    spec.validate()?;
    let ga = Gamma::new(spec.alpha, 1.0).map_err(|_| Error::InvalidShape {
        alpha: spec.alpha,
        beta: spec.beta,
    })?;
    let gb = Gamma::new(spec.beta, 1.0).map_err(|_| Error::InvalidShape {
        alpha: spec.alpha,
        beta: spec.beta,
    })?;
    loop {
        let x: f64 = ga.sample(rng);
        let y: f64 = gb.sample(rng);
        let raw = x / (x + y);
        let v = spec.shift + raw;
        if raw > 0.0 && raw < 1.0 && v > spec.shift && v < spec.shift + 1.0 {
            return Ok(v);
        }
    }
}

/// Uniform random permutation of `0..n` (Fisher–Yates).
pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// True when `perm` is a bijection on `0..n`.
pub fn is_permutation(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in perm {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}
