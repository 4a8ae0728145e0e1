//! In-batch ("shared encoder") objective: both views of every sample are
//! anchors, and each anchor contrasts against the other `2B − 2` embeddings.
//!
//! Feature transformations act on the batch itself. The positive operator
//! mixes the two views of each sample; the negative operator mixes each
//! anchor's ordered negative list with a per-step permutation of that list.
//! Everything stays differentiable, so gradients reach both views and all
//! negatives.

use rand::Rng;

use super::{row_loss, BatchScores};
use crate::error::{Error, Result};
use crate::feature_transform::{mix_into, FtConfig, Lambda, NegLambdaScope, NegMode};
use crate::numerics::{dot_slice, gemm, norm, random_permutation, Matrix, ZERO_NORM_THRESHOLD};

#[derive(Clone, Debug)]
pub struct InBatchOutput {
    pub loss: f64,
    /// `∂L/∂z` for the `2B` unit embeddings, query views first.
    pub dz: Matrix,
    /// Post-transform scores, one row per anchor.
    pub scores: BatchScores,
    /// Scores of the untransformed embeddings, when requested.
    pub pre_scores: Option<BatchScores>,
}

/// Index of the `j`-th negative of an anchor whose own pair occupies `lo < hi`.
#[inline]
fn neg_index(lo: usize, hi: usize, j: usize) -> usize {
    if j < lo {
        j
    } else if j + 1 < hi {
        j + 1
    } else {
        j + 2
    }
}

fn unit_in_place(v: &mut [f64]) -> Result<f64> {
    let n = norm(v);
    if n < ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroVector { norm: n });
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(n)
}

/// `dv = (du − u (u·du)) / n`, in place over `du`.
fn renorm_backward(u: &[f64], n: f64, du: &mut [f64]) {
    let proj = dot_slice(u, du);
    for (g, ui) in du.iter_mut().zip(u) {
        *g = (*g - ui * proj) / n;
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn plain_scores(z: &Matrix) -> Result<BatchScores> {
    let n = z.rows();
    let b = n / 2;
    let mut gram = Matrix::zeros(n, n);
    gemm(1.0, z, false, z, true, 0.0, &mut gram)?;
    let mut pos = Vec::with_capacity(n);
    let mut neg = Matrix::zeros(n, n - 2);
    for a in 0..n {
        let p = (a + b) % n;
        pos.push(gram.get(a, p));
        let (lo, hi) = (a.min(p), a.max(p));
        for (j, o) in neg.row_mut(a).iter_mut().enumerate() {
            *o = gram.get(a, neg_index(lo, hi, j));
        }
    }
    Ok(BatchScores { pos, neg })
}

/// Mean in-batch InfoNCE over the `2B` anchors of `z` (`2B × D`, unit rows,
/// rows `i` and `i + B` are the two views of sample `i`) and its gradient.
pub fn in_batch_loss<R: Rng + ?Sized>(
    z: &Matrix,
    epoch: usize,
    ft: &FtConfig,
    tau: f64,
    rng: &mut R,
    want_pre: bool,
) -> Result<InBatchOutput> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidTemperature(tau));
    }
    let n = z.rows();
    if n < 4 || n % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "in-batch mode needs an even number of at least 4 embeddings, got {n}"
        )));
    }
    if ft.hard_negative.is_some() {
        return Err(Error::config(
            "ft.hard_negative",
            "hard negatives are only defined for the momentum-queue mode",
        ));
    }
    let (b, dim, k) = (n / 2, z.cols(), n - 2);
    let active = ft.is_active(epoch);
    let pre_scores = if want_pre { Some(plain_scores(z)?) } else { None };

    // positive transform over the two views of each sample
    let mut z_hat = z.clone();
    let mut pos_lambdas = Vec::new();
    let mut pos_norms = Vec::new();
    if let Some(spec) = ft.pos_beta().filter(|_| active) {
        for i in 0..b {
            let lambda = Lambda::draw(&spec, dim, ft.dim_level, rng)?;
            mix_into(z.row(i), z.row(i + b), &lambda, z_hat.row_mut(i));
            mix_into(z.row(i + b), z.row(i), &lambda, z_hat.row_mut(i + b));
            pos_lambdas.push(lambda);
        }
        if ft.renormalize {
            for i in 0..n {
                pos_norms.push(unit_in_place(z_hat.row_mut(i))?);
            }
        }
    }

    // negative transform: shared relative permutation and λ draw(s)
    let neg_mix = match ft.neg_beta().filter(|_| active) {
        Some(spec) => {
            let perm = random_permutation(k, rng);
            let count = match ft.neg_lambda {
                NegLambdaScope::PerStep => 1,
                NegLambdaScope::PerEntry => k,
            };
            let lambdas = (0..count)
                .map(|_| Lambda::draw(&spec, dim, ft.dim_level, rng))
                .collect::<Result<Vec<_>>>()?;
            Some((perm, lambdas))
        }
        None => None,
    };
    let keep_raw = neg_mix.is_none() || ft.neg == NegMode::Extend;
    let width = match (&neg_mix, keep_raw) {
        (Some(_), true) => 2 * k,
        _ => k,
    };

    let mut pos = vec![0.0; n];
    let mut neg = Matrix::zeros(n, width);
    let mut dz_hat = Matrix::zeros(n, dim);
    let mut total = 0.0;
    let scale = 1.0 / n as f64;
    let mut mixed = Matrix::zeros(k, dim);
    let mut mixed_norms = vec![1.0; k];
    let mut dneg = vec![0.0; width];
    let mut dv = vec![0.0; dim];
    for a in 0..n {
        let p = (a + b) % n;
        let (lo, hi) = (a.min(p), a.max(p));
        let anchor = z_hat.row(a);
        pos[a] = dot_slice(anchor, z_hat.row(p));
        let row = neg.row_mut(a);
        let mut col = 0;
        if let Some((perm, lambdas)) = &neg_mix {
            for j in 0..k {
                let lambda = &lambdas[if lambdas.len() == 1 { 0 } else { j }];
                let src = neg_index(lo, hi, j);
                let partner = neg_index(lo, hi, perm[j]);
                let out = mixed.row_mut(j);
                mix_into(z_hat.row(src), z_hat.row(partner), lambda, out);
                if ft.renormalize {
                    mixed_norms[j] = unit_in_place(out)?;
                }
                row[col] = dot_slice(anchor, mixed.row(j));
                col += 1;
            }
        }
        if keep_raw {
            for j in 0..k {
                row[col] = dot_slice(anchor, z_hat.row(neg_index(lo, hi, j)));
                col += 1;
            }
        }

        let mut dpos = 0.0;
        total += row_loss(pos[a], neg.row(a), tau, Some((&mut dpos, &mut dneg)));
        dpos *= scale;
        dneg.iter_mut().for_each(|g| *g *= scale);

        // ∂ through the scores; the anchor row is also used as a constant below
        let anchor = z_hat.row(a).to_vec();
        let partner_row = z_hat.row(p).to_vec();
        axpy(dpos, &partner_row, dz_hat.row_mut(a));
        axpy(dpos, &anchor, dz_hat.row_mut(p));
        let mut col = 0;
        if let Some((perm, lambdas)) = &neg_mix {
            for j in 0..k {
                let g = dneg[col];
                col += 1;
                axpy(g, mixed.row(j), dz_hat.row_mut(a));
                dv.iter_mut().zip(&anchor).for_each(|(d, x)| *d = g * x);
                if ft.renormalize {
                    renorm_backward(mixed.row(j), mixed_norms[j], &mut dv);
                }
                let lambda = &lambdas[if lambdas.len() == 1 { 0 } else { j }];
                let src = neg_index(lo, hi, j);
                let partner = neg_index(lo, hi, perm[j]);
                for (d, &g) in dv.iter().enumerate() {
                    let l = lambda.at(d);
                    dz_hat.row_mut(src)[d] += l * g;
                    dz_hat.row_mut(partner)[d] += (1.0 - l) * g;
                }
            }
        }
        if keep_raw {
            for j in 0..k {
                let g = dneg[col];
                col += 1;
                let other = neg_index(lo, hi, j);
                let other_row = z_hat.row(other).to_vec();
                axpy(g, &other_row, dz_hat.row_mut(a));
                axpy(g, &anchor, dz_hat.row_mut(other));
            }
        }
    }

    // back through the positive transform
    let dz = if pos_lambdas.is_empty() {
        dz_hat
    } else {
        if !pos_norms.is_empty() {
            for i in 0..n {
                let u = z_hat.row(i).to_vec();
                renorm_backward(&u, pos_norms[i], dz_hat.row_mut(i));
            }
        }
        let mut dz = Matrix::zeros(n, dim);
        for (i, lambda) in pos_lambdas.iter().enumerate() {
            for d in 0..dim {
                let l = lambda.at(d);
                let (g1, g2) = (dz_hat.get(i, d), dz_hat.get(i + b, d));
                dz.set(i, d, l * g1 + (1.0 - l) * g2);
                dz.set(i + b, d, l * g2 + (1.0 - l) * g1);
            }
        }
        dz
    };

    Ok(InBatchOutput {
        loss: total * scale,
        dz,
        scores: BatchScores { pos, neg },
        pre_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::{info_nce, ScoreSet};
    use crate::feature_transform::PosMode;
    use crate::numerics::{normalize_rows, SeededRng, StreamKey};
    use rand_distr::StandardNormal;

    fn random_unit_rows(n: usize, d: usize, seed: u64) -> Matrix {
        let mut r = SeededRng::new(seed, StreamKey::new(0, 0));
        let data: Vec<f64> = (0..n * d).map(|_| r.sample(StandardNormal)).collect();
        normalize_rows(&Matrix::from_vec(n, d, data).unwrap()).unwrap().0
    }

    #[test]
    fn plain_loss_matches_direct_evaluation() {
        let z = random_unit_rows(6, 4, 1);
        let mut r = SeededRng::new(0, StreamKey::new(0, 0));
        let out = in_batch_loss(&z, 0, &FtConfig::disabled(), 0.3, &mut r, true).unwrap();
        let mut expected = 0.0;
        for a in 0..6 {
            let p = (a + 3) % 6;
            let neg: Vec<f64> = (0..6)
                .filter(|&j| j != a && j != p)
                .map(|j| dot_slice(z.row(a), z.row(j)))
                .collect();
            expected += info_nce(
                &ScoreSet {
                    pos: dot_slice(z.row(a), z.row(p)),
                    neg,
                },
                0.3,
            )
            .unwrap();
        }
        assert!((out.loss - expected / 6.0).abs() < 1e-14);
        assert_eq!(out.scores.neg.cols(), 4);
        let pre = out.pre_scores.unwrap();
        assert!(pre.pos.iter().zip(&out.scores.pos).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    fn fd_check(cfg: &FtConfig, seed: u64) {
        let z = random_unit_rows(8, 5, seed);
        let eval = |z: &Matrix| {
            let mut r = SeededRng::new(seed, StreamKey::new(1, 0));
            in_batch_loss(z, 3, cfg, 0.5, &mut r, false).unwrap()
        };
        let base = eval(&z);
        let h = 1e-6;
        for i in 0..8 {
            for d in 0..5 {
                let mut p = z.clone();
                p.set(i, d, z.get(i, d) + h);
                let mut m = z.clone();
                m.set(i, d, z.get(i, d) - h);
                let fd = (eval(&p).loss - eval(&m).loss) / (2.0 * h);
                let an = base.dz.get(i, d);
                assert!((fd - an).abs() < 1e-7, "cfg {cfg:?} ({i},{d}): {fd} vs {an}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        fd_check(&FtConfig::disabled(), 2);
        let full = FtConfig {
            begin_epoch: 0,
            ..FtConfig::default()
        };
        fd_check(&full, 3);
        fd_check(
            &FtConfig {
                neg: NegMode::Extend,
                dim_level: true,
                neg_lambda: NegLambdaScope::PerEntry,
                ..full.clone()
            },
            4,
        );
        fd_check(
            &FtConfig {
                pos: PosMode::Interpolate,
                neg: NegMode::Extrapolate,
                renormalize: false,
                ..full
            },
            5,
        );
    }

    #[test]
    fn hard_negative_is_rejected() {
        let z = random_unit_rows(4, 3, 6);
        let cfg = FtConfig {
            hard_negative: Some(crate::feature_transform::HardNegative { alpha: 2.0, beta: 1.0 }),
            ..FtConfig::default()
        };
        let mut r = SeededRng::new(0, StreamKey::new(0, 0));
        assert!(matches!(
            in_batch_loss(&z, 5, &cfg, 0.1, &mut r, false),
            Err(Error::Config { .. })
        ));
    }
}
