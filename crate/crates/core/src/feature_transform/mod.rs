//! Feature transformations applied between the unit-sphere projection and the
//! pair scores.
//!
//! All mixing operators share one affine form, `ẑ = λ ⊙ a + (1 − λ) ⊙ b`,
//! with a scalar `λ` or a per-dimension vector. The range of `λ` decides the
//! effect: `λ ∈ [1, 2]` pushes `a` away from `b` (extrapolation), `λ ∈ [0, 1]`
//! pulls them together (interpolation). For unit `z_q`, `z_k` with score `S`
//! the extrapolated positive score is `2λ(1−λ)(1−S) + S ≤ S`.

mod batch;

pub use batch::{apply_ft_batch, BatchTransform, Negatives};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::MemoryQueue;
use crate::error::{Error, Result};
use crate::numerics::{
    is_permutation, norm, sample_beta, BetaSample, FeatureVector, Matrix,
    UNIT_TOLERANCE, ZERO_NORM_THRESHOLD,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosMode {
    None,
    Extrapolate,
    Interpolate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegMode {
    None,
    Interpolate,
    Extrapolate,
    /// Interpolated queue concatenated with the original queue (2K negatives).
    Extend,
}

/// How many `λ_in` draws a negative-queue transformation uses per step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegLambdaScope {
    PerStep,
    PerEntry,
}

/// Asymmetric Beta shapes for the hard-negative queue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardNegative {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtConfig {
    pub pos: PosMode,
    pub alpha_ex: f64,
    pub neg: NegMode,
    pub alpha_in: f64,
    pub neg_lambda: NegLambdaScope,
    pub hard_negative: Option<HardNegative>,
    pub dim_level: bool,
    pub renormalize: bool,
    pub begin_epoch: usize,
}

impl Default for FtConfig {
    fn default() -> Self {
        Self {
            pos: PosMode::Extrapolate,
            alpha_ex: 2.0,
            neg: NegMode::Interpolate,
            alpha_in: 1.6,
            neg_lambda: NegLambdaScope::PerStep,
            hard_negative: None,
            dim_level: false,
            renormalize: true,
            begin_epoch: 2,
        }
    }
}

impl FtConfig {
    /// No transformation at any epoch.
    pub fn disabled() -> Self {
        Self {
            pos: PosMode::None,
            neg: NegMode::None,
            hard_negative: None,
            ..Self::default()
        }
    }

    /// A begin epoch past the end of training is allowed: the run then
    /// simply never transforms.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_ex > 0.0 && self.alpha_ex.is_finite()) {
            return Err(Error::config("ft.alpha_ex", "must be a positive number"));
        }
        if !(self.alpha_in > 0.0 && self.alpha_in.is_finite()) {
            return Err(Error::config("ft.alpha_in", "must be a positive number"));
        }
        if let Some(h) = self.hard_negative {
            if !(h.alpha > 0.0 && h.alpha.is_finite()) {
                return Err(Error::config("ft.hard_alpha", "must be a positive number"));
            }
            if !(h.beta > 0.0 && h.beta.is_finite()) {
                return Err(Error::config("ft.hard_beta", "must be a positive number"));
            }
        }
        Ok(())
    }

    pub fn any_enabled(&self) -> bool {
        self.pos != PosMode::None || self.neg != NegMode::None || self.hard_negative.is_some()
    }

    /// Whether any transformation runs at `epoch`.
    pub fn is_active(&self, epoch: usize) -> bool {
        self.any_enabled() && epoch >= self.begin_epoch
    }

    pub(crate) fn pos_beta(&self) -> Option<BetaSample> {
        match self.pos {
            PosMode::None => None,
            PosMode::Extrapolate => Some(BetaSample::symmetric(self.alpha_ex, 1.0)),
            PosMode::Interpolate => Some(BetaSample::symmetric(self.alpha_ex, 0.0)),
        }
    }

    pub(crate) fn neg_beta(&self) -> Option<BetaSample> {
        match self.neg {
            NegMode::None => None,
            NegMode::Interpolate | NegMode::Extend => Some(BetaSample::symmetric(self.alpha_in, 0.0)),
            NegMode::Extrapolate => Some(BetaSample::symmetric(self.alpha_ex, 1.0)),
        }
    }
}

/// Mixing weight: one scalar, or one value per embedding dimension.
#[derive(Clone, Debug, PartialEq)]
pub enum Lambda {
    Scalar(f64),
    PerDim(Vec<f64>),
}

impl Lambda {
    /// Draws a scalar, or `dim` independent values when `per_dim` is set.
    pub fn draw<R: Rng + ?Sized>(spec: &BetaSample, dim: usize, per_dim: bool, rng: &mut R) -> Result<Self> {
        if per_dim {
            Ok(Lambda::PerDim(
                (0..dim).map(|_| sample_beta(spec, rng)).collect::<Result<_>>()?,
            ))
        } else {
            Ok(Lambda::Scalar(sample_beta(spec, rng)?))
        }
    }

    #[inline]
    pub fn at(&self, d: usize) -> f64 {
        match self {
            Lambda::Scalar(l) => *l,
            Lambda::PerDim(v) => v[d],
        }
    }

    fn check_range(&self, lo: f64, hi: f64) -> Result<()> {
        let bad = |l: f64| !(lo..=hi).contains(&l);
        let offending = match self {
            Lambda::Scalar(l) => bad(*l).then_some(*l),
            Lambda::PerDim(v) => v.iter().copied().find(|&l| bad(l)),
        };
        match offending {
            Some(lambda) => Err(Error::LambdaOutOfRange { lambda, lo, hi }),
            None => Ok(()),
        }
    }
}

/// `out[d] = λ_d · a[d] + (1 − λ_d) · b[d]`.
#[inline]
pub fn mix_into(a: &[f64], b: &[f64], lambda: &Lambda, out: &mut [f64]) {
    match lambda {
        Lambda::Scalar(l) => {
            let l = *l;
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o = l * x + (1.0 - l) * y;
            }
        }
        Lambda::PerDim(ls) => {
            for (((o, x), y), &l) in out.iter_mut().zip(a).zip(b).zip(ls) {
                *o = l * x + (1.0 - l) * y;
            }
        }
    }
}

pub(crate) fn renormalize_in_place(v: &mut [f64]) -> Result<f64> {
    let n = norm(v);
    if n < ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroVector { norm: n });
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    Ok(n)
}

fn require_unit(v: &FeatureVector, index: usize) -> Result<()> {
    let n = v.norm();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NotNormalized { index, norm: n });
    }
    Ok(())
}

fn require_same_dim(a: &FeatureVector, b: &FeatureVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

fn finish(values: Vec<f64>, renormalize: bool) -> Result<FeatureVector> {
    if renormalize {
        let mut values = values;
        renormalize_in_place(&mut values)?;
        FeatureVector::unit(values)
    } else {
        Ok(FeatureVector::new(values))
    }
}

fn mix_pair(
    z_q: &FeatureVector,
    z_k: &FeatureVector,
    lambda: &Lambda,
    renormalize: bool,
) -> Result<(FeatureVector, FeatureVector)> {
    let d = z_q.dim();
    let mut q_hat = vec![0.0; d];
    let mut k_hat = vec![0.0; d];
    mix_into(z_q.values(), z_k.values(), lambda, &mut q_hat);
    mix_into(z_k.values(), z_q.values(), lambda, &mut k_hat);
    Ok((finish(q_hat, renormalize)?, finish(k_hat, renormalize)?))
}

/// Positive extrapolation: `ẑ_q = λ z_q + (1−λ) z_k`, `ẑ_k = λ z_k + (1−λ) z_q`
/// with `λ ∈ [1, 2]`.
pub fn pos_extrapolate(
    z_q: &FeatureVector,
    z_k: &FeatureVector,
    lambda: f64,
    renormalize: bool,
) -> Result<(FeatureVector, FeatureVector)> {
    require_same_dim(z_q, z_k)?;
    require_unit(z_q, 0)?;
    require_unit(z_k, 1)?;
    let lambda = Lambda::Scalar(lambda);
    lambda.check_range(1.0, 2.0)?;
    mix_pair(z_q, z_k, &lambda, renormalize)
}

/// The same affine pair map with `λ ∈ [0, 1]`; raises the positive score.
pub fn pos_interpolate(
    z_q: &FeatureVector,
    z_k: &FeatureVector,
    lambda: f64,
    renormalize: bool,
) -> Result<(FeatureVector, FeatureVector)> {
    require_same_dim(z_q, z_k)?;
    require_unit(z_q, 0)?;
    require_unit(z_k, 1)?;
    let lambda = Lambda::Scalar(lambda);
    lambda.check_range(0.0, 1.0)?;
    mix_pair(z_q, z_k, &lambda, renormalize)
}

/// Score of the (un-renormalized) mixed pair in closed form:
/// `2λ(1−λ)(1−S) + S`.
pub fn transformed_pos_score(score: f64, lambda: f64) -> f64 {
    2.0 * lambda * (1.0 - lambda) * (1.0 - score) + score
}

/// Where the entries of a transformed negative set came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Original,
    Interpolated,
    Extrapolated,
    Union,
    Hard,
}

/// Negative features after a queue-level transformation.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedQueue {
    entries: Matrix,
    provenance: Provenance,
}

impl TransformedQueue {
    /// The untouched queue contents.
    pub fn original(queue: &MemoryQueue) -> Self {
        Self {
            entries: queue.entries().clone(),
            provenance: Provenance::Original,
        }
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn into_entries(self) -> Matrix {
        self.entries
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.rows() == 0
    }

    pub fn entry(&self, i: usize) -> FeatureVector {
        FeatureVector::new(self.entries.row(i).to_vec())
    }
}

/// `Ẑ[i] = λ_i ⊙ Z[i] + (1 − λ_i) ⊙ Z[perm[i]]` with `λ_i` supplied per entry.
pub(crate) fn mix_queue_entries<'a>(
    entries: &Matrix,
    perm: &[usize],
    lambda_for: impl Fn(usize) -> &'a Lambda,
    renormalize: bool,
) -> Result<Matrix> {
    let k = entries.rows();
    if !is_permutation(perm, k) {
        return Err(Error::InvalidPermutation(k));
    }
    let mut out = Matrix::zeros(k, entries.cols());
    for (i, &j) in perm.iter().enumerate() {
        let row = out.row_mut(i);
        mix_into(entries.row(i), entries.row(j), lambda_for(i), row);
        if renormalize {
            renormalize_in_place(row)?;
        }
    }
    Ok(out)
}

fn mix_queue(
    queue: &MemoryQueue,
    lambda: f64,
    perm: &[usize],
    renormalize: bool,
    (lo, hi): (f64, f64),
    provenance: Provenance,
) -> Result<TransformedQueue> {
    let lambda = Lambda::Scalar(lambda);
    lambda.check_range(lo, hi)?;
    let entries = mix_queue_entries(queue.entries(), perm, |_| &lambda, renormalize)?;
    Ok(TransformedQueue {
        entries,
        provenance,
    })
}

/// Negative interpolation: the queue mixed with a permutation of itself, `λ ∈ [0, 1]`.
pub fn neg_interpolate_queue(
    queue: &MemoryQueue,
    lambda: f64,
    perm: &[usize],
    renormalize: bool,
) -> Result<TransformedQueue> {
    mix_queue(queue, lambda, perm, renormalize, (0.0, 1.0), Provenance::Interpolated)
}

/// Negative extrapolation: as [`neg_interpolate_queue`] with `λ ∈ [1, 2]`.
pub fn neg_extrapolate_queue(
    queue: &MemoryQueue,
    lambda: f64,
    perm: &[usize],
    renormalize: bool,
) -> Result<TransformedQueue> {
    mix_queue(queue, lambda, perm, renormalize, (1.0, 2.0), Provenance::Extrapolated)
}

pub(crate) fn hard_negative_entries(
    z_q: &[f64],
    negatives: &Matrix,
    lambda: &Lambda,
    renormalize: bool,
) -> Result<Matrix> {
    let mut out = Matrix::zeros(negatives.rows(), negatives.cols());
    for i in 0..negatives.rows() {
        let row = out.row_mut(i);
        mix_into(z_q, negatives.row(i), lambda, row);
        if renormalize {
            renormalize_in_place(row)?;
        }
    }
    Ok(out)
}

/// Hard negatives for one query: `Z_hard[i] = λ z_q + (1−λ) Z[i]`, `λ ∈ [0, 1]`.
///
/// Without renormalization every score rises: `z_q·Z_hard[i] = λ + (1−λ) S[i] ≥ S[i]`.
pub fn hard_negatives(
    z_q: &FeatureVector,
    queue: &MemoryQueue,
    lambda: f64,
    renormalize: bool,
) -> Result<TransformedQueue> {
    require_unit(z_q, 0)?;
    if z_q.dim() != queue.dim() {
        return Err(Error::DimensionMismatch {
            expected: queue.dim(),
            got: z_q.dim(),
        });
    }
    let lambda = Lambda::Scalar(lambda);
    lambda.check_range(0.0, 1.0)?;
    Ok(TransformedQueue {
        entries: hard_negative_entries(z_q.values(), queue.entries(), &lambda, renormalize)?,
        provenance: Provenance::Hard,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixMode {
    Interpolate,
    Extrapolate,
}

/// Dimension-level mixing `ẑ = λ ⊙ z_i + (1 − λ) ⊙ z_j`.
pub fn dim_mix(
    z_i: &FeatureVector,
    z_j: &FeatureVector,
    lambdas: &[f64],
    mode: MixMode,
) -> Result<FeatureVector> {
    require_same_dim(z_i, z_j)?;
    if lambdas.len() != z_i.dim() {
        return Err(Error::DimensionMismatch {
            expected: z_i.dim(),
            got: lambdas.len(),
        });
    }
    let lambda = Lambda::PerDim(lambdas.to_vec());
    match mode {
        MixMode::Interpolate => lambda.check_range(0.0, 1.0)?,
        MixMode::Extrapolate => lambda.check_range(1.0, 2.0)?,
    }
    let mut out = vec![0.0; z_i.dim()];
    mix_into(z_i.values(), z_j.values(), &lambda, &mut out);
    Ok(FeatureVector::new(out))
}

/// Union `Ẑ ∪ Z`: the transformed entries followed by the original queue.
pub fn extend_queue(transformed: &TransformedQueue, original: &MemoryQueue) -> Result<TransformedQueue> {
    if transformed.len() != original.capacity() || transformed.entries.cols() != original.dim() {
        return Err(Error::SizeMismatch(format!(
            "transformed queue is {}x{}, original is {}x{}",
            transformed.len(),
            transformed.entries.cols(),
            original.capacity(),
            original.dim()
        )));
    }
    Ok(TransformedQueue {
        entries: transformed.entries.vstack(original.entries())?,
        provenance: Provenance::Union,
    })
}

/// Result of [`apply_ft`] for a single query.
#[derive(Clone, Debug, PartialEq)]
pub struct FtOutput {
    pub q_hat: FeatureVector,
    pub k_hat: FeatureVector,
    pub negatives: TransformedQueue,
}

/// Applies the configured transformations to one positive pair and the queue.
///
/// Before `config.begin_epoch` the inputs pass through untouched.
pub fn apply_ft<R: Rng + ?Sized>(
    epoch: usize,
    z_q: &FeatureVector,
    z_k: &FeatureVector,
    queue: &MemoryQueue,
    config: &FtConfig,
    rng: &mut R,
) -> Result<FtOutput> {
    require_same_dim(z_q, z_k)?;
    require_unit(z_q, 0)?;
    require_unit(z_k, 1)?;
    let zq = Matrix::from_vec(1, z_q.dim(), z_q.values().to_vec())?;
    let zk = Matrix::from_vec(1, z_k.dim(), z_k.values().to_vec())?;
    let out = apply_ft_batch(epoch, &zq, &zk, queue, config, rng)?;
    let wrap = |m: &Matrix| -> Result<FeatureVector> {
        let v = m.row(0).to_vec();
        if out.query_renormalized() {
            FeatureVector::unit(v)
        } else {
            Ok(FeatureVector::new(v))
        }
    };
    let q_hat = wrap(&out.q_hat)?;
    let k_hat = wrap(&out.k_hat)?;
    let negatives = match out.negatives {
        Negatives::Shared(t) => t,
        Negatives::PerQuery(mut v) => v.swap_remove(0),
    };
    Ok(FtOutput {
        q_hat,
        k_hat,
        negatives,
    })
}

/// Score of a query against a set of negatives (`neg[i] = q · N[i]`).
#[cfg(test)]
pub(crate) fn scores_against(q: &[f64], negatives: &Matrix) -> Vec<f64> {
    negatives.iter_rows().map(|n| crate::numerics::dot_slice(q, n)).collect()
}
