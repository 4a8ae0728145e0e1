use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{in_batch_loss, queue_loss, BatchScores, MemoryQueue};
use crate::data::{augment_batch, AugmentPolicy, Dataset};
use crate::encoder::{
    backward, forward, forward_only, momentum_update, sgd_step, Architecture, Checkpoint,
    EncoderParams, GradientSet, LrSchedule, OptimizerState,
};
use crate::error::{Error, Result};
use crate::feature_transform::{apply_ft_batch, BatchTransform, FtConfig};
use crate::numerics::{
    dot_slice, gemm, normalize_rows, normalize_rows_backward, random_permutation, Domain, Matrix,
    SeededRng, StreamKey,
};
use crate::telemetry::Recorder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Momentum key encoder plus a FIFO queue of negatives.
    Queue,
    /// One shared encoder; negatives are the other embeddings of the batch.
    InBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub tau: f64,
    /// Key-encoder momentum `m`.
    pub momentum: f64,
    pub queue_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub ft: FtConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Queue,
            tau: 0.07,
            momentum: 0.99,
            queue_size: 4096,
            batch_size: 256,
            epochs: 40,
            lr: 0.05,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            ft: FtConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("train.tau", "must be a positive number"));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::config("train.m", "must lie in [0, 1]"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be a positive number"));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return Err(Error::config("train.sgd_momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be non-negative"));
        }
        match self.mode {
            Mode::Queue => {
                if self.queue_size == 0 {
                    return Err(Error::config("train.queue_size", "must be at least 1"));
                }
                if self.batch_size == 0 {
                    return Err(Error::config("train.batch_size", "must be at least 1"));
                }
                if self.batch_size > self.queue_size {
                    return Err(Error::config(
                        "train.batch_size",
                        format!("must not exceed train.queue_size ({})", self.queue_size),
                    ));
                }
            }
            Mode::InBatch => {
                if self.batch_size < 2 {
                    return Err(Error::config("train.batch_size", "in-batch mode needs at least 2"));
                }
                if self.ft.hard_negative.is_some() {
                    return Err(Error::config(
                        "ft.hard_negative",
                        "hard negatives are only defined for the momentum-queue mode",
                    ));
                }
            }
        }
        self.ft.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutput {
    pub loss: f64,
    /// Wall time of scoring, loss and score-gradient evaluation.
    pub loss_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub losses: Vec<f64>,
    pub loss_seconds: Vec<f64>,
}

impl EpochSummary {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len().max(1) as f64
    }
}

/// Everything a single step computes before touching any parameter.
#[derive(Clone, Debug)]
pub struct StepGradients {
    pub loss: f64,
    pub loss_seconds: f64,
    pub grads: GradientSet,
    pub scores: BatchScores,
    pub pre_scores: Option<BatchScores>,
    /// Momentum-queue mode: the step's transform and unit keys.
    pub transform: Option<BatchTransform>,
    pub z_k: Option<Matrix>,
}

/// Mutable training state: encoders, queue, optimizer and step counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    query: EncoderParams,
    key: Option<EncoderParams>,
    queue: Option<MemoryQueue>,
    optimizer: OptimizerState,
    step: u64,
    epochs_done: usize,
}

impl Trainer {
    /// Fresh state: Kaiming-initialized query encoder, an exact copy as key
    /// encoder and a queue of random unit vectors (queue mode only).
    pub fn new(arch: Architecture, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let query = EncoderParams::init(arch, &mut SeededRng::for_domain(seed, Domain::Init, StreamKey::new(0, 0)));
        let (key, queue) = match config.mode {
            Mode::Queue => {
                let mut rng = SeededRng::for_domain(seed, Domain::QueueInit, StreamKey::new(0, 0));
                let queue = MemoryQueue::init(config.queue_size, query.output_dim(), &mut rng)?;
                (Some(query.clone()), Some(queue))
            }
            Mode::InBatch => (None, None),
        };
        let optimizer = OptimizerState::new(
            &query,
            LrSchedule::step_decay(config.lr, config.epochs),
            config.sgd_momentum,
            config.weight_decay,
        );
        Ok(Self {
            config,
            query,
            key,
            queue,
            optimizer,
            step: 0,
            epochs_done: 0,
        })
    }

    /// Restores state saved by [`Trainer::checkpoint`].
    pub fn resume(config: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        config.validate()?;
        if ckpt.seed != config.seed {
            return Err(Error::config(
                "train.seed",
                format!("checkpoint was written with seed {}", ckpt.seed),
            ));
        }
        let queue_mode = config.mode == Mode::Queue;
        if queue_mode != (ckpt.key.is_some() && ckpt.queue.is_some()) {
            return Err(Error::config("train.mode", "does not match the checkpoint contents"));
        }
        Ok(Self {
            config,
            query: ckpt.query,
            key: ckpt.key,
            queue: ckpt.queue,
            optimizer: ckpt.optimizer,
            step: ckpt.step,
            epochs_done: ckpt.epoch as usize,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            query: self.query.clone(),
            key: self.key.clone(),
            optimizer: self.optimizer.clone(),
            queue: self.queue.clone(),
            seed: self.config.seed,
            epoch: self.epochs_done as u64,
            step: self.step,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn query(&self) -> &EncoderParams {
        &self.query
    }

    pub fn key(&self) -> Option<&EncoderParams> {
        self.key.as_ref()
    }

    pub fn queue(&self) -> Option<&MemoryQueue> {
        self.queue.as_ref()
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Generator for the feature-transform draws of the next step.
    pub fn transform_rng(&self, epoch: usize) -> SeededRng {
        SeededRng::for_domain(
            self.config.seed,
            Domain::Transform,
            StreamKey::new(epoch as u64, self.step),
        )
    }

    fn numeric_failure(&self, epoch: usize) -> Error {
        Error::NumericFailure {
            epoch,
            step: self.step as usize,
        }
    }

    /// Loss and query-encoder gradients for one batch of view pairs, without
    /// changing any state.
    pub fn gradients(
        &self,
        epoch: usize,
        v_q: &Matrix,
        v_k: &Matrix,
        sample_pre: Option<usize>,
    ) -> Result<StepGradients> {
        if v_q.shape() != v_k.shape() {
            return Err(Error::ShapeMismatch("query and key views differ in shape".into()));
        }
        let mut rng = self.transform_rng(epoch);
        let tau = self.config.tau;
        match (&self.key, &self.queue) {
            (Some(key), Some(queue)) => {
                let (h_q, cache) = forward(&self.query, v_q)?;
                let (z_q, norms) = normalize_rows(&h_q)?;
                let (z_k, _) = normalize_rows(&forward_only(key, v_k)?)?;
                let t = apply_ft_batch(epoch, &z_q, &z_k, queue, &self.config.ft, &mut rng)?;
                let start = Instant::now();
                let (loss, dq_hat, scores) = queue_loss(&t.q_hat, &t.k_hat, &t.negatives, tau)?;
                let loss_seconds = start.elapsed().as_secs_f64();
                let pre_scores = match sample_pre {
                    Some(n) => Some(plain_queue_scores(&z_q, &z_k, queue, n.min(z_q.rows()))?),
                    None => None,
                };
                let dz = t.backprop_query(&dq_hat);
                let dh = normalize_rows_backward(&z_q, &norms, &dz);
                let grads = backward(&self.query, &cache, &dh)?;
                Ok(StepGradients {
                    loss,
                    loss_seconds,
                    grads,
                    scores,
                    pre_scores,
                    transform: Some(t),
                    z_k: Some(z_k),
                })
            }
            _ => {
                let views = v_q.vstack(v_k)?;
                let (h, cache) = forward(&self.query, &views)?;
                let (z, norms) = normalize_rows(&h)?;
                let start = Instant::now();
                let out = in_batch_loss(&z, epoch, &self.config.ft, tau, &mut rng, sample_pre.is_some())?;
                let loss_seconds = start.elapsed().as_secs_f64();
                let dh = normalize_rows_backward(&z, &norms, &out.dz);
                let grads = backward(&self.query, &cache, &dh)?;
                Ok(StepGradients {
                    loss: out.loss,
                    loss_seconds,
                    grads,
                    scores: out.scores,
                    pre_scores: out.pre_scores,
                    transform: None,
                    z_k: None,
                })
            }
        }
    }

    /// One optimization step on a batch of view pairs (`B × input` each):
    /// encode, normalize, transform, score, backpropagate into the query
    /// encoder, SGD, momentum update and enqueue (queue mode).
    pub fn training_step(
        &mut self,
        epoch: usize,
        v_q: &Matrix,
        v_k: &Matrix,
        mut recorder: Option<&mut Recorder>,
    ) -> Result<StepOutput> {
        let sample_pre = recorder
            .as_ref()
            .filter(|r| r.wants_pre_ft(self.step))
            .map(|r| r.sample_size(usize::MAX));
        let g = match self.gradients(epoch, v_q, v_k, sample_pre) {
            Err(Error::ZeroVector { .. }) => return Err(self.numeric_failure(epoch)),
            other => other?,
        };
        if !g.loss.is_finite() || !g.grads.is_finite() {
            return Err(self.numeric_failure(epoch));
        }
        if let Some(rec) = recorder.as_deref_mut() {
            if rec.wants_scores(self.step) {
                rec.observe_scores(self.step, epoch, &g.scores.pos, &g.scores.neg, false)?;
                if let Some(pre) = &g.pre_scores {
                    rec.observe_scores(self.step, epoch, &pre.pos, &pre.neg, true)?;
                }
            }
            rec.observe_grads(&g.grads, epoch);
        }
        sgd_step(&mut self.query, &g.grads, &mut self.optimizer, epoch)?;
        if let (Some(key), Some(queue), Some(z_k)) = (&mut self.key, &mut self.queue, &g.z_k) {
            momentum_update(key, &self.query, self.config.momentum)?;
            queue.enqueue(z_k)?;
        }
        self.step += 1;
        Ok(StepOutput {
            loss: g.loss,
            loss_seconds: g.loss_seconds,
        })
    }

    /// One pass over `data` in a seeded shuffled order. Incomplete trailing
    /// batches are dropped so every step sees exactly `batch_size` pairs.
    pub fn train_epoch(
        &mut self,
        data: &Dataset,
        epoch: usize,
        policy: &AugmentPolicy,
        mut recorder: Option<&mut Recorder>,
    ) -> Result<EpochSummary> {
        let b = self.config.batch_size;
        let steps = data.len() / b;
        if steps == 0 {
            return Err(Error::config(
                "train.batch_size",
                format!("larger than the dataset ({} samples)", data.len()),
            ));
        }
        let mut rng = SeededRng::for_domain(self.config.seed, Domain::Shuffle, StreamKey::new(epoch as u64, 0));
        let order = random_permutation(data.len(), &mut rng);
        let mut summary = EpochSummary {
            epoch,
            losses: Vec::with_capacity(steps),
            loss_seconds: Vec::with_capacity(steps),
        };
        for s in 0..steps {
            let idx = &order[s * b..(s + 1) * b];
            let (v_q, v_k) = augment_batch(data, idx, epoch, self.config.seed, policy)?;
            let out = self.training_step(epoch, &v_q, &v_k, recorder.as_deref_mut())?;
            summary.losses.push(out.loss);
            summary.loss_seconds.push(out.loss_seconds);
        }
        if let Some(rec) = recorder {
            rec.end_epoch();
        }
        self.epochs_done = epoch + 1;
        Ok(summary)
    }
}

/// Untransformed scores of the first `n` queries against their keys and the queue.
fn plain_queue_scores(z_q: &Matrix, z_k: &Matrix, queue: &MemoryQueue, n: usize) -> Result<BatchScores> {
    let idx: Vec<usize> = (0..n).collect();
    let q = z_q.select_rows(&idx);
    let pos = (0..n).map(|i| dot_slice(z_q.row(i), z_k.row(i))).collect();
    let mut neg = Matrix::zeros(n, queue.capacity());
    gemm(1.0, &q, false, queue.entries(), true, 0.0, &mut neg)?;
    Ok(BatchScores { pos, neg })
}

/// Momentum-queue objective at arbitrary query parameters with every
/// key-side quantity (`k̂`, negatives, mixing draws) frozen at `frozen`.
pub fn frozen_queue_objective(
    query: &EncoderParams,
    v_q: &Matrix,
    z_k: &Matrix,
    frozen: &BatchTransform,
    tau: f64,
) -> Result<f64> {
    let (z_q, _) = normalize_rows(&forward_only(query, v_q)?)?;
    let q_hat = frozen.recompute_query(&z_q, z_k)?;
    Ok(queue_loss(&q_hat, &frozen.k_hat, &frozen.negatives, tau)?.0)
}
