use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Domain, Matrix, SeededRng, StreamKey};

/// Two independently augmented views of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub v_q: Vec<f64>,
    pub v_k: Vec<f64>,
}

/// Shape-preserving augmentations for square grayscale images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageAugment {
    /// Random translation of up to this many pixels per axis, zero padded.
    pub max_shift: usize,
    /// Standard deviation of additive pixel noise (result clamped to `[0, 1]`).
    pub noise_std: f64,
    pub erase_prob: f64,
    /// Largest erased rectangle as a fraction of the image area.
    pub erase_max_frac: f64,
    pub flip_prob: f64,
}

impl Default for ImageAugment {
    fn default() -> Self {
        Self {
            max_shift: 2,
            noise_std: 0.05,
            erase_prob: 0.25,
            erase_max_frac: 0.25,
            flip_prob: 0.5,
        }
    }
}

/// Augmentations for plain feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorAugment {
    pub noise_std: f64,
    /// Probability of zeroing each coordinate.
    pub dropout: f64,
}

impl Default for VectorAugment {
    fn default() -> Self {
        Self {
            noise_std: 0.1,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AugmentPolicy {
    Image(ImageAugment),
    Vector(VectorAugment),
}

impl AugmentPolicy {
    pub fn identity_image() -> Self {
        AugmentPolicy::Image(ImageAugment {
            max_shift: 0,
            noise_std: 0.0,
            erase_prob: 0.0,
            erase_max_frac: 0.0,
            flip_prob: 0.0,
        })
    }
}

fn square_side(len: usize) -> Result<usize> {
    let side = (len as f64).sqrt().round() as usize;
    if side * side != len || side == 0 {
        return Err(Error::BadShape(format!(
            "image augmentation needs a square image, got {len} values"
        )));
    }
    Ok(side)
}

fn augment_image<R: Rng + ?Sized>(x: &[f64], side: usize, p: &ImageAugment, rng: &mut R) -> Vec<f64> {
    let mut v = x.to_vec();
    if p.max_shift > 0 {
        let s = p.max_shift as i64;
        let dx = rng.random_range(-s..=s);
        let dy = rng.random_range(-s..=s);
        let n = side as i64;
        for r in 0..n {
            for c in 0..n {
                let (sr, sc) = (r - dy, c - dx);
                v[(r * n + c) as usize] = if (0..n).contains(&sr) && (0..n).contains(&sc) {
                    x[(sr * n + sc) as usize]
                } else {
                    0.0
                };
            }
        }
    }
    if p.flip_prob > 0.0 && rng.random::<f64>() < p.flip_prob {
        for row in v.chunks_exact_mut(side) {
            row.reverse();
        }
    }
    if p.erase_prob > 0.0 && p.erase_max_frac > 0.0 && rng.random::<f64>() < p.erase_prob {
        let lo = (0.02f64).min(p.erase_max_frac);
        let area = rng.random_range(lo..=p.erase_max_frac) * (side * side) as f64;
        let aspect: f64 = rng.random_range(0.5..=2.0);
        let h = ((area * aspect).sqrt().round() as usize).clamp(1, side);
        let w = ((area / aspect).sqrt().round() as usize).clamp(1, side);
        let top = rng.random_range(0..=side - h);
        let left = rng.random_range(0..=side - w);
        for r in top..top + h {
            v[r * side + left..r * side + left + w].fill(0.0);
        }
    }
    if p.noise_std > 0.0 {
        for px in v.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *px = (*px + p.noise_std * e).clamp(0.0, 1.0);
        }
    }
    v
}

fn augment_vector<R: Rng + ?Sized>(x: &[f64], p: &VectorAugment, rng: &mut R) -> Vec<f64> {
    let mut v = x.to_vec();
    if p.noise_std > 0.0 {
        for e in v.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *e += p.noise_std * n;
        }
    }
    if p.dropout > 0.0 {
        for e in v.iter_mut() {
            if rng.random::<f64>() < p.dropout {
                *e = 0.0;
            }
        }
    }
    v
}

/// Applies two independent draws of `policy` to `x`, query view first.
pub fn two_view_augment<R: Rng + ?Sized>(x: &[f64], rng: &mut R, policy: &AugmentPolicy) -> Result<ViewPair> {
    match policy {
        AugmentPolicy::Image(p) => {
            let side = square_side(x.len())?;
            Ok(ViewPair {
                v_q: augment_image(x, side, p, rng),
                v_k: augment_image(x, side, p, rng),
            })
        }
        AugmentPolicy::Vector(p) => Ok(ViewPair {
            v_q: augment_vector(x, p, rng),
            v_k: augment_vector(x, p, rng),
        }),
    }
}

/// Views for the samples at `indices`. Each sample draws from its own stream
/// keyed by `(epoch, sample index)`, so results do not depend on batch order.
pub fn augment_batch(
    dataset: &Dataset,
    indices: &[usize],
    epoch: usize,
    seed: u64,
    policy: &AugmentPolicy,
) -> Result<(Matrix, Matrix)> {
    let dim = dataset.dim();
    let mut vq = Matrix::zeros(indices.len(), dim);
    let mut vk = Matrix::zeros(indices.len(), dim);
    for (row, &idx) in indices.iter().enumerate() {
        let mut rng = SeededRng::for_domain(seed, Domain::Augment, StreamKey::new(epoch as u64, idx as u64));
        let pair = two_view_augment(dataset.samples().row(idx), &mut rng, policy)?;
        vq.row_mut(row).copy_from_slice(&pair.v_q);
        vk.row_mut(row).copy_from_slice(&pair.v_k);
    }
    Ok((vq, vk))
}
