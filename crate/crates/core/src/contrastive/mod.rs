//! Pair scores, the InfoNCE objective, the negative memory queue and the
//! training step for both the momentum-queue and in-batch modes.

mod in_batch;
mod queue;
mod trainer;

pub use in_batch::{in_batch_loss, InBatchOutput};
pub use queue::MemoryQueue;
pub use trainer::{frozen_queue_objective, EpochSummary, Mode, StepGradients, StepOutput, TrainConfig, Trainer};

use crate::error::{Error, Result};
use crate::feature_transform::Negatives;
use crate::numerics::{dot_slice, gemm, FeatureVector, Matrix};

/// One query's positive score and its negative scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub pos: f64,
    pub neg: Vec<f64>,
}

/// `∂L/∂pos` and `∂L/∂neg[i]` for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGrad {
    pub pos: f64,
    pub neg: Vec<f64>,
}

pub fn pair_scores(
    z_q: &FeatureVector,
    z_k_pos: &FeatureVector,
    negatives: &[FeatureVector],
) -> Result<ScoreSet> {
    let check = |v: &FeatureVector| {
        if v.dim() != z_q.dim() {
            Err(Error::DimensionMismatch {
                expected: z_q.dim(),
                got: v.dim(),
            })
        } else {
            Ok(())
        }
    };
    check(z_k_pos)?;
    for n in negatives {
        check(n)?;
    }
    Ok(ScoreSet {
        pos: dot_slice(z_q.values(), z_k_pos.values()),
        neg: negatives.iter().map(|n| dot_slice(z_q.values(), n.values())).collect(),
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidTemperature(tau));
    }
    Ok(())
}

/// Loss for one row of logits `pos/τ, neg/τ` plus, when `grad` is given, the
/// gradient with respect to the raw scores.
fn row_loss(pos: f64, neg: &[f64], tau: f64, grad: Option<(&mut f64, &mut [f64])>) -> f64 {
    let l0 = pos / tau;
    let max = neg.iter().fold(l0, |m, &s| m.max(s / tau));
    let mut sum_others = 0.0;
    for &s in neg {
        sum_others += (s / tau - max).exp();
    }
    let e0 = (l0 - max).exp();
    let total = e0 + sum_others;
    let loss = if l0 == max {
        // keeps precision when the positive dominates and the loss is tiny
        sum_others.ln_1p()
    } else {
        max + total.ln() - l0
    };
    if let Some((dpos, dneg)) = grad {
        *dpos = (e0 / total - 1.0) / tau;
        for (g, &s) in dneg.iter_mut().zip(neg) {
            *g = (s / tau - max).exp() / total / tau;
        }
    }
    loss
}

/// `L = −log(e^{pos/τ} / (e^{pos/τ} + Σ e^{neg_i/τ}))`, evaluated with a max shift.
pub fn info_nce(scores: &ScoreSet, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(row_loss(scores.pos, &scores.neg, tau, None))
}

/// Analytic gradient of [`info_nce`]: `(p₀ − 1)/τ` for the positive and
/// `pᵢ/τ` for each negative.
pub fn info_nce_grad(scores: &ScoreSet, tau: f64) -> Result<ScoreGrad> {
    check_tau(tau)?;
    let mut g = ScoreGrad {
        pos: 0.0,
        neg: vec![0.0; scores.neg.len()],
    };
    row_loss(scores.pos, &scores.neg, tau, Some((&mut g.pos, &mut g.neg)));
    Ok(g)
}

/// Scores, mean loss and score gradients for a batch. `neg` is `B × K`.
#[derive(Clone, Debug)]
pub struct BatchScores {
    pub pos: Vec<f64>,
    pub neg: Matrix,
}

/// Batch-mean InfoNCE and its gradient with respect to every score.
pub fn batch_info_nce(scores: &BatchScores, tau: f64) -> Result<(f64, Vec<f64>, Matrix)> {
    check_tau(tau)?;
    let b = scores.pos.len();
    if b == 0 || scores.neg.rows() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} positive scores but {} negative rows",
            b,
            scores.neg.rows()
        )));
    }
    let mut dpos = vec![0.0; b];
    let mut dneg = Matrix::zeros(b, scores.neg.cols());
    let mut total = 0.0;
    let scale = 1.0 / b as f64;
    for i in 0..b {
        total += row_loss(
            scores.pos[i],
            scores.neg.row(i),
            tau,
            Some((&mut dpos[i], dneg.row_mut(i))),
        );
        dpos[i] *= scale;
        for g in dneg.row_mut(i) {
            *g *= scale;
        }
    }
    Ok((total * scale, dpos, dneg))
}

/// Scores of transformed queries against their positives and negatives.
pub fn queue_scores(q_hat: &Matrix, k_hat: &Matrix, negatives: &Negatives) -> Result<BatchScores> {
    let b = q_hat.rows();
    let pos = (0..b).map(|i| dot_slice(q_hat.row(i), k_hat.row(i))).collect();
    let neg = match negatives {
        Negatives::Shared(t) => {
            let mut neg = Matrix::zeros(b, t.len());
            gemm(1.0, q_hat, false, t.entries(), true, 0.0, &mut neg)?;
            neg
        }
        Negatives::PerQuery(sets) => {
            let k = negatives.count();
            let mut neg = Matrix::zeros(b, k);
            for (i, set) in sets.iter().enumerate() {
                for (o, n) in neg.row_mut(i).iter_mut().zip(set.entries().iter_rows()) {
                    *o = dot_slice(q_hat.row(i), n);
                }
            }
            neg
        }
    };
    Ok(BatchScores { pos, neg })
}

/// Loss and `∂L/∂q̂` in momentum-queue mode, where `k̂` and the negatives are
/// constants.
pub fn queue_loss(
    q_hat: &Matrix,
    k_hat: &Matrix,
    negatives: &Negatives,
    tau: f64,
) -> Result<(f64, Matrix, BatchScores)> {
    let scores = queue_scores(q_hat, k_hat, negatives)?;
    let (loss, dpos, dneg) = batch_info_nce(&scores, tau)?;
    let mut dq = Matrix::zeros(q_hat.rows(), q_hat.cols());
    match negatives {
        Negatives::Shared(t) => gemm(1.0, &dneg, false, t.entries(), false, 0.0, &mut dq)?,
        Negatives::PerQuery(sets) => {
            for (i, set) in sets.iter().enumerate() {
                let row = dq.row_mut(i);
                for (&g, n) in dneg.row(i).iter().zip(set.entries().iter_rows()) {
                    for (o, v) in row.iter_mut().zip(n) {
                        *o += g * v;
                    }
                }
            }
        }
    }
    for (i, &g) in dpos.iter().enumerate() {
        for (o, k) in dq.row_mut(i).iter_mut().zip(k_hat.row(i)) {
            *o += g * k;
        }
    }
    Ok((loss, dq, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec())
    }

    #[test]
    fn pair_score_examples() {
        let q = fv(&[1.0, 0.0, 0.0]);
        let s = pair_scores(&q, &fv(&[0.6, 0.8, 0.0]), &[fv(&[0.0, 0.0, 1.0])]).unwrap();
        assert_eq!(s.pos, 0.6);
        assert_eq!(s.neg, vec![0.0]);
        assert_eq!(pair_scores(&q, &q, &[]).unwrap().pos, 1.0);
        assert!(matches!(
            pair_scores(&q, &fv(&[1.0, 0.0]), &[]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn equal_logits_give_log_k_plus_one() {
        for (k, s, tau) in [(1, 0.3, 0.07), (7, -0.9, 1.0), (4096, 0.5, 0.2)] {
            let set = ScoreSet {
                pos: s,
                neg: vec![s; k],
            };
            let l = info_nce(&set, tau).unwrap();
            assert!((l - ((k + 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_value_and_saturation() {
        let set = ScoreSet {
            pos: 1.0,
            neg: vec![-1.0],
        };
        let l = info_nce(&set, 1.0).unwrap();
        assert!((l - (-2.0f64).exp().ln_1p()).abs() < 1e-15);
        assert!((l - 0.126928).abs() < 1e-6);

        let sat = ScoreSet {
            pos: 1.0,
            neg: vec![-1.0; 10],
        };
        let l = info_nce(&sat, 0.01).unwrap();
        assert!(l >= 0.0 && l < 1e-80);
        let g = info_nce_grad(&sat, 0.01).unwrap();
        assert!(g.pos.abs() < 1e-80 && g.neg.iter().all(|&x| x < 1e-80));
    }

    #[test]
    fn gradient_of_equal_logits() {
        let g = info_nce_grad(
            &ScoreSet {
                pos: 0.2,
                neg: vec![0.2],
            },
            1.0,
        )
        .unwrap();
        assert!((g.pos + 0.5).abs() < 1e-15);
        assert!((g.neg[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_temperature() {
        let set = ScoreSet {
            pos: 0.0,
            neg: vec![0.0],
        };
        for tau in [0.0, -1.0, f64::NAN] {
            assert!(matches!(info_nce(&set, tau), Err(Error::InvalidTemperature(_))));
            assert!(matches!(info_nce_grad(&set, tau), Err(Error::InvalidTemperature(_))));
        }
    }

    #[test]
    fn loss_is_large_but_finite_for_extreme_negatives() {
        let set = ScoreSet {
            pos: -1.0,
            neg: vec![1.0; 3],
        };
        let l = info_nce(&set, 0.001).unwrap();
        assert!(l.is_finite());
        assert!((l - (2000.0 + 3f64.ln())).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn gradient_signs_and_conservation(
            pos in -1.0f64..1.0,
            neg in proptest::collection::vec(-1.0f64..1.0, 1..40),
            tau in 0.05f64..2.0,
        ) {
            let set = ScoreSet { pos, neg };
            let g = info_nce_grad(&set, tau).unwrap();
            prop_assert!(g.pos <= 0.0);
            prop_assert!(g.neg.iter().all(|&x| x >= 0.0));
            let sum: f64 = g.pos + g.neg.iter().sum::<f64>();
            prop_assert!(sum.abs() < 1e-12 * (1.0 / tau).max(1.0));
            prop_assert!(info_nce(&set, tau).unwrap() > 0.0);
        }

        #[test]
        fn gradient_matches_finite_differences(
            pos in -1.0f64..1.0,
            neg in proptest::collection::vec(-1.0f64..1.0, 1..12),
            tau in 0.1f64..2.0,
        ) {
            let set = ScoreSet { pos, neg };
            let g = info_nce_grad(&set, tau).unwrap();
            let h = 1e-6;
            let f = |s: &ScoreSet| info_nce(s, tau).unwrap();
            let mut p = set.clone();
            p.pos += h;
            let mut m = set.clone();
            m.pos -= h;
            prop_assert!(((f(&p) - f(&m)) / (2.0 * h) - g.pos).abs() < 1e-7);
            for i in 0..set.neg.len() {
                let mut p = set.clone();
                p.neg[i] += h;
                let mut m = set.clone();
                m.neg[i] -= h;
                prop_assert!(((f(&p) - f(&m)) / (2.0 * h) - g.neg[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn batch_loss_is_mean_of_rows() {
        let scores = BatchScores {
            pos: vec![0.5, -0.2],
            neg: Matrix::from_rows(&[[0.1, 0.3], [0.9, -0.4]]).unwrap(),
        };
        let (l, dpos, dneg) = batch_info_nce(&scores, 0.5).unwrap();
        let rows: Vec<ScoreSet> = (0..2)
            .map(|i| ScoreSet {
                pos: scores.pos[i],
                neg: scores.neg.row(i).to_vec(),
            })
            .collect();
        let expected = (info_nce(&rows[0], 0.5).unwrap() + info_nce(&rows[1], 0.5).unwrap()) / 2.0;
        assert!((l - expected).abs() < 1e-15);
        let g1 = info_nce_grad(&rows[1], 0.5).unwrap();
        assert!((dpos[1] - g1.pos / 2.0).abs() < 1e-15);
        assert!((dneg.get(1, 0) - g1.neg[0] / 2.0).abs() < 1e-15);
    }
}
