use rand::Rng;

use super::{
    extend_queue, hard_negative_entries, mix_into, mix_queue_entries, renormalize_in_place,
    FtConfig, Lambda, NegLambdaScope, NegMode, Provenance, TransformedQueue,
};
use crate::contrastive::MemoryQueue;
use crate::error::{Error, Result};
use crate::numerics::{dot_slice, random_permutation, BetaSample, Matrix};

/// Negative set used by the loss: shared by the whole batch, or one set per
/// query (hard-negative mode).
#[derive(Clone, Debug, PartialEq)]
pub enum Negatives {
    Shared(TransformedQueue),
    PerQuery(Vec<TransformedQueue>),
}

impl Negatives {
    pub fn count(&self) -> usize {
        match self {
            Negatives::Shared(t) => t.len(),
            Negatives::PerQuery(v) => v.first().map_or(0, TransformedQueue::len),
        }
    }

    pub fn for_query(&self, i: usize) -> &TransformedQueue {
        match self {
            Negatives::Shared(t) => t,
            Negatives::PerQuery(v) => &v[i],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum QueryPath {
    Identity,
    Mixed {
        lambdas: Vec<Lambda>,
        /// Pre-renormalization norms, when outputs were re-projected.
        norms: Option<Vec<f64>>,
    },
}

/// Transformed features for one training step in momentum-queue mode.
///
/// Only the query path is differentiable: `k_hat` and the negatives are
/// treated as constants by [`BatchTransform::backprop_query`].
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTransform {
    pub q_hat: Matrix,
    pub k_hat: Matrix,
    pub negatives: Negatives,
    query_path: QueryPath,
}

impl BatchTransform {
    /// Passthrough used before the begin epoch or with every mode disabled.
    pub fn identity(z_q: &Matrix, z_k: &Matrix, queue: &MemoryQueue) -> Self {
        Self {
            q_hat: z_q.clone(),
            k_hat: z_k.clone(),
            negatives: Negatives::Shared(TransformedQueue::original(queue)),
            query_path: QueryPath::Identity,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.query_path == QueryPath::Identity
            && matches!(&self.negatives, Negatives::Shared(t) if t.provenance() == Provenance::Original)
    }

    /// True when `q_hat`/`k_hat` are guaranteed unit-norm.
    pub fn query_renormalized(&self) -> bool {
        match &self.query_path {
            QueryPath::Identity => true,
            QueryPath::Mixed { norms, .. } => norms.is_some(),
        }
    }

    /// Re-evaluates the query branch for new `z_q` with this step's draws,
    /// holding every key-side quantity fixed. Used by gradient checks.
    pub fn recompute_query(&self, z_q: &Matrix, z_k: &Matrix) -> Result<Matrix> {
        if z_q.shape() != self.q_hat.shape() || z_k.shape() != self.q_hat.shape() {
            return Err(Error::ShapeMismatch(
                "inputs do not match the transformed batch".into(),
            ));
        }
        match &self.query_path {
            QueryPath::Identity => Ok(z_q.clone()),
            QueryPath::Mixed { lambdas, norms } => {
                let mut out = Matrix::zeros(z_q.rows(), z_q.cols());
                for (i, lambda) in lambdas.iter().enumerate() {
                    mix_into(z_q.row(i), z_k.row(i), lambda, out.row_mut(i));
                    if norms.is_some() {
                        renormalize_in_place(out.row_mut(i))?;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Pulls `∂L/∂q̂` back to `∂L/∂z_q` through the (optional) re-projection
    /// and the mixing weight.
    pub fn backprop_query(&self, d_q_hat: &Matrix) -> Matrix {
        match &self.query_path {
            QueryPath::Identity => d_q_hat.clone(),
            QueryPath::Mixed { lambdas, norms } => {
                let mut dz = Matrix::zeros(d_q_hat.rows(), d_q_hat.cols());
                let mut dv = vec![0.0; d_q_hat.cols()];
                for (i, lambda) in lambdas.iter().enumerate() {
                    let g = d_q_hat.row(i);
                    match norms {
                        Some(norms) => {
                            let u = self.q_hat.row(i);
                            let proj = dot_slice(u, g);
                            for ((o, gi), ui) in dv.iter_mut().zip(g).zip(u) {
                                *o = (gi - ui * proj) / norms[i];
                            }
                        }
                        None => dv.copy_from_slice(g),
                    }
                    for (d, (o, v)) in dz.row_mut(i).iter_mut().zip(&dv).enumerate() {
                        *o = lambda.at(d) * v;
                    }
                }
                dz
            }
        }
    }
}

/// Batched form of [`super::apply_ft`]. Draw order within a step is fixed:
/// one positive `λ` per pair, then the queue permutation, the queue `λ`(s),
/// and finally one hard-negative `λ` per query.
pub fn apply_ft_batch<R: Rng + ?Sized>(
    epoch: usize,
    z_q: &Matrix,
    z_k: &Matrix,
    queue: &MemoryQueue,
    config: &FtConfig,
    rng: &mut R,
) -> Result<BatchTransform> {
    if z_q.shape() != z_k.shape() {
        return Err(Error::ShapeMismatch(format!(
            "queries are {}x{}, keys are {}x{}",
            z_q.rows(),
            z_q.cols(),
            z_k.rows(),
            z_k.cols()
        )));
    }
    if z_q.cols() != queue.dim() {
        return Err(Error::DimensionMismatch {
            expected: queue.dim(),
            got: z_q.cols(),
        });
    }
    if !config.is_active(epoch) {
        return Ok(BatchTransform::identity(z_q, z_k, queue));
    }
    let dim = z_q.cols();

    let (q_hat, k_hat, query_path) = match config.pos_beta() {
        None => (z_q.clone(), z_k.clone(), QueryPath::Identity),
        Some(spec) => {
            let mut q_hat = Matrix::zeros(z_q.rows(), dim);
            let mut k_hat = Matrix::zeros(z_k.rows(), dim);
            let mut lambdas = Vec::with_capacity(z_q.rows());
            let mut norms = Vec::with_capacity(z_q.rows());
            for i in 0..z_q.rows() {
                let lambda = Lambda::draw(&spec, dim, config.dim_level, rng)?;
                mix_into(z_q.row(i), z_k.row(i), &lambda, q_hat.row_mut(i));
                mix_into(z_k.row(i), z_q.row(i), &lambda, k_hat.row_mut(i));
                if config.renormalize {
                    norms.push(renormalize_in_place(q_hat.row_mut(i))?);
                    renormalize_in_place(k_hat.row_mut(i))?;
                }
                lambdas.push(lambda);
            }
            let norms = config.renormalize.then_some(norms);
            (q_hat, k_hat, QueryPath::Mixed { lambdas, norms })
        }
    };

    let base = match config.neg_beta() {
        None => TransformedQueue::original(queue),
        Some(spec) => {
            let perm = random_permutation(queue.capacity(), rng);
            let lambdas = match config.neg_lambda {
                NegLambdaScope::PerStep => vec![Lambda::draw(&spec, dim, config.dim_level, rng)?],
                NegLambdaScope::PerEntry => (0..queue.capacity())
                    .map(|_| Lambda::draw(&spec, dim, config.dim_level, rng))
                    .collect::<Result<_>>()?,
            };
            let per_step = lambdas.len() == 1;
            let entries = mix_queue_entries(
                queue.entries(),
                &perm,
                |i| if per_step { &lambdas[0] } else { &lambdas[i] },
                config.renormalize,
            )?;
            let provenance = if config.neg == NegMode::Extrapolate {
                Provenance::Extrapolated
            } else {
                Provenance::Interpolated
            };
            let transformed = TransformedQueue {
                entries,
                provenance,
            };
            if config.neg == NegMode::Extend {
                extend_queue(&transformed, queue)?
            } else {
                transformed
            }
        }
    };

    let negatives = match config.hard_negative {
        None => Negatives::Shared(base),
        Some(h) => {
            let spec = BetaSample::new(h.alpha, h.beta, 0.0);
            let mut per_query = Vec::with_capacity(z_q.rows());
            for i in 0..z_q.rows() {
                let lambda = Lambda::draw(&spec, dim, config.dim_level, rng)?;
                per_query.push(TransformedQueue {
                    entries: hard_negative_entries(z_q.row(i), base.entries(), &lambda, config.renormalize)?,
                    provenance: Provenance::Hard,
                });
            }
            Negatives::PerQuery(per_query)
        }
    };

    Ok(BatchTransform {
        q_hat,
        k_hat,
        negatives,
        query_path,
    })
}
