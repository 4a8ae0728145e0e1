//! Datasets, loaders and the two-view augmentation pipeline.

mod augment;
mod loaders;

pub use augment::{augment_batch, two_view_augment, AugmentPolicy, ImageAugment, VectorAugment, ViewPair};
pub use loaders::{load_csv, load_idx, write_csv};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{Domain, Matrix, SeededRng, StreamKey};

/// Samples scaled to `[0, 1]`, with optional integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Matrix,
    labels: Option<Vec<usize>>,
    classes: usize,
    source: String,
}

impl Dataset {
    /// Validates finiteness, the `[0, 1]` range and label count.
    pub fn new(samples: Matrix, labels: Option<Vec<usize>>, source: impl Into<String>) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::EmptyInput("dataset"));
        }
        if let Some(bad) = samples.as_slice().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::BadShape(format!(
                "sample value {} at flat index {bad} is outside [0, 1]",
                samples.as_slice()[bad]
            )));
        }
        let classes = match &labels {
            Some(l) => {
                if l.len() != samples.rows() {
                    return Err(Error::CountMismatch {
                        images: samples.rows(),
                        labels: l.len(),
                    });
                }
                l.iter().max().map_or(0, |m| m + 1)
            }
            None => 0,
        };
        Ok(Self {
            samples,
            labels,
            classes,
            source: source.into(),
        })
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// One more than the largest label (0 when unlabeled).
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// The first `n` samples (or all, if fewer).
    pub fn truncate(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        Self {
            samples: self.samples.select_rows(&idx),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            classes: self.classes,
            source: format!("{} [first {n}]", self.source),
        }
    }
}

/// Rescales all values jointly so the global minimum maps to 0 and the
/// maximum to 1; leaves data already inside `[0, 1]` untouched.
pub(crate) fn fit_unit_range(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo >= 0.0 && hi <= 1.0 {
        return;
    }
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

/// Isotropic Gaussian classes around random mean directions.
///
/// Means are `separation / √2` times independent random unit vectors, so
/// pairwise mean distances concentrate at `separation` in high dimension.
/// Noise has unit variance. The whole table is then mapped affinely into
/// `[0, 1]`, which preserves linear separability.
pub fn synth_gaussian_mixture(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(separation >= 0.0) {
        return Err(Error::config("data.separation", "must be non-negative"));
    }
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::EmptyInput("synthetic dataset"));
    }
    let mut rng = SeededRng::for_domain(seed, Domain::Synthetic, StreamKey::new(0, 0));
    let scale = separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = crate::numerics::norm(&v).max(1e-300);
            v.into_iter().map(|x| x / n * scale).collect()
        })
        .collect();
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for m in &means[c] {
            let noise: f64 = rng.sample(StandardNormal);
            data.push(m + noise);
        }
        labels.push(c);
    }
    fit_unit_range(&mut data);
    Dataset::new(
        Matrix::from_vec(n, dim, data)?,
        Some(labels),
        format!("synthetic gaussian mixture (classes={classes}, per_class={per_class}, dim={dim}, separation={separation}, seed={seed})"),
    )
}
