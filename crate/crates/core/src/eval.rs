//! Linear readout: freeze the encoder, fit a softmax classifier on its
//! unit-normalized features and report top-1 accuracy.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::{forward_only, EncoderParams, LrSchedule};
use crate::error::{Error, Result};
use crate::numerics::{gemm, normalize_rows, random_permutation, Domain, Matrix, SeededRng, StreamKey};

/// Rows encoded at once by [`extract_features`].
const EXTRACT_CHUNK: usize = 1024;

/// Encodes every sample and projects the result onto the unit sphere.
pub fn extract_features(encoder: &EncoderParams, dataset: &Dataset) -> Result<Matrix> {
    if dataset.dim() != encoder.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "encoder expects {}-dimensional input, dataset has {}",
            encoder.input_dim(),
            dataset.dim()
        )));
    }
    let d = encoder.output_dim();
    let mut out = Vec::with_capacity(dataset.len() * d);
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(EXTRACT_CHUNK) {
        let h = forward_only(encoder, &dataset.samples().select_rows(chunk))?;
        out.extend_from_slice(normalize_rows(&h)?.0.as_slice());
    }
    Matrix::from_vec(dataset.len(), d, out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Standard deviation of the Gaussian weight initialization (0 = zeros).
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 1.0,
            epochs: 100,
            batch_size: 256,
            momentum: 0.9,
            weight_decay: 0.0,
            init_std: 0.0,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("eval.lr", "must be a positive number"));
        }
        if self.epochs == 0 {
            return Err(Error::config("eval.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("eval.batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("eval.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("eval.weight_decay", "must be non-negative"));
        }
        if !(self.init_std >= 0.0) {
            return Err(Error::config("eval.init_std", "must be non-negative"));
        }
        Ok(())
    }
}

/// Multinomial logistic regression `softmax(W f + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    /// `classes × D`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub config: ProbeConfig,
}

impl LinearProbe {
    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.weight.cols() {
            return Err(Error::ShapeMismatch(format!(
                "probe expects {}-dimensional features, got {}",
                self.weight.cols(),
                features.cols()
            )));
        }
        let mut out = Matrix::zeros(features.rows(), self.classes());
        for r in 0..out.rows() {
            out.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(1.0, features, false, &self.weight, true, 1.0, &mut out)?;
        Ok(out)
    }

    /// Argmax per row; ties go to the lowest class index.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        Ok(self.logits(features)?.iter_rows().map(argmax).collect())
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_labels(features: &Matrix, labels: &[usize]) -> Result<()> {
    if features.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    Ok(())
}

/// Row-wise softmax in place, shifted by the row maximum.
fn softmax_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Mean cross-entropy of the probe on `(features, labels)`.
pub fn probe_loss(probe: &LinearProbe, features: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(features, labels)?;
    let logits = probe.logits(features)?;
    let mut total = 0.0;
    for (row, &y) in logits.iter_rows().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

/// Fits a linear softmax classifier by minibatch momentum SGD with a ×0.1
/// step decay at 60% and 80% of the epochs. Batches follow a seeded shuffle.
pub fn fit_linear_probe(features: &Matrix, labels: &[usize], config: &ProbeConfig) -> Result<LinearProbe> {
    config.validate()?;
    check_labels(features, labels)?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("probe training set"));
    }
    if !features.is_finite() {
        return Err(Error::ShapeMismatch("probe features contain non-finite values".into()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::DegenerateLabels {
            key: "data.labels".into(),
            reason: format!("only class {first} is present"),
        });
    }
    let (n, d) = features.shape();
    let mut init = SeededRng::for_domain(config.seed, Domain::Probe, StreamKey::new(0, u64::MAX));
    let mut weight = Matrix::zeros(classes, d);
    if config.init_std > 0.0 {
        for w in weight.as_mut_slice() {
            let e: f64 = init.sample(StandardNormal);
            *w = config.init_std * e;
        }
    }
    let bias = vec![0.0; classes];
    let mut vel_w = Matrix::zeros(classes, d);
    let mut vel_b = vec![0.0; classes];
    let schedule = LrSchedule::step_decay(config.lr, config.epochs);
    let mut probe = LinearProbe {
        weight,
        bias,
        config: config.clone(),
    };

    for epoch in 0..config.epochs {
        let lr = schedule.lr_at(epoch);
        let mut rng = SeededRng::for_domain(config.seed, Domain::Probe, StreamKey::new(epoch as u64, 0));
        let order = random_permutation(n, &mut rng);
        for batch in order.chunks(config.batch_size) {
            let x = features.select_rows(batch);
            // dL/dlogits = (softmax − onehot) / |batch|
            let mut g = probe.logits(&x)?;
            softmax_rows(&mut g);
            let scale = 1.0 / batch.len() as f64;
            for (r, &i) in batch.iter().enumerate() {
                let row = g.row_mut(r);
                row[labels[i]] -= 1.0;
                row.iter_mut().for_each(|v| *v *= scale);
            }
            let mut grad_w = Matrix::zeros(classes, d);
            gemm(1.0, &g, true, &x, false, 0.0, &mut grad_w)?;
            let mut grad_b = vec![0.0; classes];
            for row in g.iter_rows() {
                grad_b.iter_mut().zip(row).for_each(|(b, v)| *b += v);
            }
            let wd = config.weight_decay;
            for ((w, v), gw) in probe
                .weight
                .as_mut_slice()
                .iter_mut()
                .zip(vel_w.as_mut_slice())
                .zip(grad_w.as_slice())
            {
                *v = config.momentum * *v + gw + wd * *w;
                *w -= lr * *v;
            }
            for ((b, v), gb) in probe.bias.iter_mut().zip(vel_b.iter_mut()).zip(&grad_b) {
                *v = config.momentum * *v + gb;
                *b -= lr * *v;
            }
        }
    }
    Ok(probe)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn probe_accuracy(probe: &LinearProbe, features: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(features, labels)?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("probe evaluation set"));
    }
    let pred = probe.predict(features)?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `counts[true][predicted]`, sized to cover both probe classes and labels.
pub fn confusion_matrix(probe: &LinearProbe, features: &Matrix, labels: &[usize]) -> Result<Vec<Vec<usize>>> {
    check_labels(features, labels)?;
    let pred = probe.predict(features)?;
    let k = labels.iter().map(|l| l + 1).max().unwrap_or(0).max(probe.classes());
    let mut counts = vec![vec![0; k]; k];
    for (&p, &l) in pred.iter().zip(labels) {
        counts[l][p] += 1;
    }
    Ok(counts)
}

/// CSV with header `true,pred_0,pred_1,…`, one row per true class.
pub fn confusion_to_csv(counts: &[Vec<usize>]) -> String {
    let mut out = String::from("true");
    for j in 0..counts.len() {
        let _ = write!(out, ",pred_{j}");
    }
    out.push('\n');
    for (i, row) in counts.iter().enumerate() {
        let _ = write!(out, "{i}");
        for c in row {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// Summary of one train/test readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub confusion: Vec<Vec<usize>>,
}

/// Extracts features for both splits, fits the probe on `train` and scores it on `test`.
pub fn linear_readout(
    encoder: &EncoderParams,
    train: &Dataset,
    test: &Dataset,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    let labels = |d: &Dataset| {
        d.labels().map(<[usize]>::to_vec).ok_or_else(|| Error::DegenerateLabels {
            key: "data.labels".into(),
            reason: format!("dataset `{}` has no labels", d.source()),
        })
    };
    let (ytr, yte) = (labels(train)?, labels(test)?);
    let ftr = extract_features(encoder, train)?;
    let fte = extract_features(encoder, test)?;
    let probe = fit_linear_probe(&ftr, &ytr, config)?;
    Ok(ProbeReport {
        accuracy: probe_accuracy(&probe, &fte, &yte)?,
        train_accuracy: probe_accuracy(&probe, &ftr, &ytr)?,
        classes: probe.classes(),
        n_train: ytr.len(),
        n_test: yte.len(),
        confusion: confusion_matrix(&probe, &fte, &yte)?,
    })
}
