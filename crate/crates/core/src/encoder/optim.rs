use serde::{Deserialize, Serialize};

use super::{EncoderParams, GradientSet, Layer};
use crate::error::{Error, Result};

/// Step-decay learning-rate schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    /// Epochs at which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            base_lr: lr,
            decay_epochs: Vec::new(),
            decay_factor: 1.0,
        }
    }

    /// ×0.1 at 60% and 80% of `total_epochs`.
    pub fn step_decay(lr: f64, total_epochs: usize) -> Self {
        let at = |frac: f64| (total_epochs as f64 * frac).round() as usize;
        Self {
            base_lr: lr,
            decay_epochs: vec![at(0.6), at(0.8)],
            decay_factor: 0.1,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.base_lr * self.decay_factor.powi(decays as i32)
    }
}

/// Momentum-SGD state with coupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub(crate) velocity: Vec<Layer>,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams, schedule: LrSchedule, momentum: f64, weight_decay: f64) -> Self {
        Self {
            schedule,
            momentum,
            weight_decay,
            velocity: GradientSet::zeros_like(params).layers,
        }
    }

    pub fn velocity(&self) -> &[Layer] {
        &self.velocity
    }
}

/// `v ← μv + g + wd·θ`, `θ ← θ − lr(epoch)·v`, applied to every weight and bias.
pub fn sgd_step(
    params: &mut EncoderParams,
    grads: &GradientSet,
    opt: &mut OptimizerState,
    epoch: usize,
) -> Result<()> {
    params.check_compatible(&grads.layers, "gradient set")?;
    params.check_compatible(&opt.velocity, "optimizer velocity")?;
    let lr = opt.schedule.lr_at(epoch);
    let (mu, wd) = (opt.momentum, opt.weight_decay);
    let update = |theta: &mut [f64], g: &[f64], v: &mut [f64]| {
        for ((t, gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = mu * *vi + gi + wd * *t;
            *t -= lr * *vi;
        }
    };
    for ((layer, g), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(opt.velocity.iter_mut())
    {
        update(
            layer.weight.as_mut_slice(),
            g.weight.as_slice(),
            v.weight.as_mut_slice(),
        );
        update(&mut layer.bias, &g.bias, &mut v.bias);
    }
    Ok(())
}

/// `θ_k ← m·θ_k + (1−m)·θ_q`, elementwise.
pub fn momentum_update(theta_k: &mut EncoderParams, theta_q: &EncoderParams, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidMomentum(m));
    }
    if !theta_k.is_shape_compatible(theta_q) {
        return Err(Error::ShapeMismatch(
            "key and query encoders have different shapes".into(),
        ));
    }
    let blend = |k: &mut [f64], q: &[f64]| {
        for (a, b) in k.iter_mut().zip(q) {
            *a = m * *a + (1.0 - m) * b;
        }
    };
    for (lk, lq) in theta_k.layers.iter_mut().zip(&theta_q.layers) {
        blend(lk.weight.as_mut_slice(), lq.weight.as_slice());
        blend(&mut lk.bias, &lq.bias);
    }
    Ok(())
}
