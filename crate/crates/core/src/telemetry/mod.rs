//! Training-dynamics instrumentation: pos/neg score statistics per step and
//! per-layer gradient norms per epoch, with CSV and SVG export.
//!
//! Recording only reads values produced by the training step; it never draws
//! randomness or writes back, so traces are identical with it on or off.

mod svg;

pub use svg::{emit_svg_plot, render_svg, PlotStyle, Series};

use std::fs;
use std::path::Path;

use crate::encoder::GradientSet;
use crate::error::{Error, Result};
use crate::numerics::{norm, Matrix};

/// Aggregated score statistics of one recorded step.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreStatsRecord {
    pub step: u64,
    pub epoch: usize,
    pub mean_pos: f64,
    pub mean_neg: f64,
    /// Mean over queries of the population variance of their negative scores.
    pub var_neg: f64,
    pub n: usize,
    pub k: usize,
    /// True for statistics of the scores before any feature transformation.
    pub pre_ft: bool,
}

/// Statistics of `n` queries: `pos` has `n` entries and `neg` is `n × K`.
///
/// `mean_neg` is the mean of per-query means and `var_neg` the mean of
/// per-query population variances. Step and epoch are left at zero.
pub fn record_score_stats(pos: &[f64], neg: &Matrix) -> Result<ScoreStatsRecord> {
    let n = pos.len();
    if n == 0 || neg.cols() == 0 {
        return Err(Error::EmptyInput("score statistics"));
    }
    if neg.rows() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} positive scores but {} rows of negatives",
            neg.rows()
        )));
    }
    let k = neg.cols();
    let mut mean_sum = 0.0;
    let mut var_sum = 0.0;
    for row in neg.iter_rows() {
        let mean = row.iter().sum::<f64>() / k as f64;
        let var = row.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / k as f64;
        mean_sum += mean;
        var_sum += var;
    }
    Ok(ScoreStatsRecord {
        step: 0,
        epoch: 0,
        mean_pos: pos.iter().sum::<f64>() / n as f64,
        mean_neg: mean_sum / n as f64,
        var_neg: var_sum / n as f64,
        n,
        k,
        pre_ft: false,
    })
}

impl ScoreStatsRecord {
    pub fn at(mut self, step: u64, epoch: usize, pre_ft: bool) -> Self {
        self.step = step;
        self.epoch = epoch;
        self.pre_ft = pre_ft;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub layer: String,
    pub l2_norm: f64,
    /// Norm at the epoch's final step, when aggregated over an epoch.
    pub last_step: Option<f64>,
}

/// Per-layer gradient norms, weights and biases listed separately.
#[derive(Clone, Debug, PartialEq)]
pub struct GradStatsRecord {
    pub epoch: usize,
    pub layers: Vec<LayerNorm>,
}

/// Norms of a single gradient set, named `fc{l}.weight` / `fc{l}.bias`.
pub fn record_grad_landscape(grads: &GradientSet, epoch: usize) -> GradStatsRecord {
    let mut layers = Vec::with_capacity(grads.layers.len() * 2);
    for (l, g) in grads.layers.iter().enumerate() {
        layers.push(LayerNorm {
            layer: format!("fc{l}.weight"),
            l2_norm: norm(g.weight.as_slice()),
            last_step: None,
        });
        layers.push(LayerNorm {
            layer: format!("fc{l}.bias"),
            l2_norm: norm(&g.bias),
            last_step: None,
        });
    }
    GradStatsRecord { epoch, layers }
}

/// Running per-epoch mean of gradient norms.
#[derive(Clone, Debug, Default)]
struct GradAccumulator {
    epoch: usize,
    names: Vec<String>,
    sums: Vec<f64>,
    last: Vec<f64>,
    count: usize,
}

impl GradAccumulator {
    fn push(&mut self, rec: GradStatsRecord) {
        if self.count == 0 {
            self.epoch = rec.epoch;
            self.names = rec.layers.iter().map(|l| l.layer.clone()).collect();
            self.sums = vec![0.0; rec.layers.len()];
        }
        for (s, l) in self.sums.iter_mut().zip(&rec.layers) {
            *s += l.l2_norm;
        }
        self.last = rec.layers.iter().map(|l| l.l2_norm).collect();
        self.count += 1;
    }

    fn finish(&mut self) -> Option<GradStatsRecord> {
        if self.count == 0 {
            return None;
        }
        let count = self.count as f64;
        let layers = self
            .names
            .iter()
            .zip(&self.sums)
            .zip(&self.last)
            .map(|((name, s), last)| LayerNorm {
                layer: name.clone(),
                l2_norm: s / count,
                last_step: Some(*last),
            })
            .collect();
        let rec = GradStatsRecord {
            epoch: self.epoch,
            layers,
        };
        *self = Self::default();
        Some(rec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TelemetryConfig {
    pub scores: bool,
    pub grads: bool,
    /// Also log statistics of the untransformed scores of each recorded step.
    pub pre_ft: bool,
    /// Queries per recorded step: the first `min(B, sample)` of the batch.
    pub sample: usize,
    /// Record score statistics every `every` steps.
    pub every: usize,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        Self {
            scores: true,
            grads: true,
            pre_ft: false,
            sample: 64,
            every: 1,
        }
    }
}

/// Collects records during training.
#[derive(Clone, Debug)]
pub struct Recorder {
    config: TelemetryConfig,
    scores: Vec<ScoreStatsRecord>,
    grads: Vec<GradStatsRecord>,
    acc: GradAccumulator,
}

impl Recorder {
    pub fn new(config: TelemetryConfig) -> Self {
        Self {
            config,
            scores: Vec::new(),
            grads: Vec::new(),
            acc: GradAccumulator::default(),
        }
    }

    pub fn config(&self) -> &TelemetryConfig {
        &self.config
    }

    pub fn wants_scores(&self, step: u64) -> bool {
        self.config.scores && self.config.every > 0 && step % self.config.every as u64 == 0
    }

    pub fn wants_pre_ft(&self, step: u64) -> bool {
        self.wants_scores(step) && self.config.pre_ft
    }

    /// Number of leading batch rows used for statistics.
    pub fn sample_size(&self, batch: usize) -> usize {
        batch.min(self.config.sample)
    }

    /// Records statistics of the first `sample_size` rows of `pos` / `neg`.
    pub fn observe_scores(
        &mut self,
        step: u64,
        epoch: usize,
        pos: &[f64],
        neg: &Matrix,
        pre_ft: bool,
    ) -> Result<()> {
        let n = self.sample_size(pos.len());
        let idx: Vec<usize> = (0..n).collect();
        let rec = record_score_stats(&pos[..n], &neg.select_rows(&idx))?;
        self.scores.push(rec.at(step, epoch, pre_ft));
        Ok(())
    }

    pub fn observe_grads(&mut self, grads: &GradientSet, epoch: usize) {
        if !self.config.grads {
            return;
        }
        if self.acc.count > 0 && self.acc.epoch != epoch {
            self.end_epoch();
        }
        self.acc.push(record_grad_landscape(grads, epoch));
    }

    /// Closes the running gradient aggregate.
    pub fn end_epoch(&mut self) {
        if let Some(rec) = self.acc.finish() {
            self.grads.push(rec);
        }
    }

    pub fn score_records(&self) -> &[ScoreStatsRecord] {
        &self.scores
    }

    pub fn grad_records(&self) -> &[GradStatsRecord] {
        &self.grads
    }
}

const SCORE_HEADER: [&str; 8] = ["step", "epoch", "mean_pos", "mean_neg", "var_neg", "n", "K", "pre_ft"];
const GRAD_HEADER: [&str; 4] = ["epoch", "layer", "l2_norm", "last_step"];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

/// Header-only score file, written when telemetry recorded nothing.
pub fn empty_scores_csv() -> Vec<u8> {
    (SCORE_HEADER.join(",") + "\n").into_bytes()
}

pub fn empty_grads_csv() -> Vec<u8> {
    (GRAD_HEADER.join(",") + "\n").into_bytes()
}

/// Serializes score records. Floats use the shortest exact representation, so
/// parsing the output returns identical values.
pub fn scores_to_csv(records: &[ScoreStatsRecord]) -> Result<Vec<u8>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("score records"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(SCORE_HEADER).map_err(wrap)?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            r.mean_pos.to_string(),
            r.mean_neg.to_string(),
            r.var_neg.to_string(),
            r.n.to_string(),
            r.k.to_string(),
            (r.pre_ft as u8).to_string(),
        ])
        .map_err(wrap)?;
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

pub fn grads_to_csv(records: &[GradStatsRecord]) -> Result<Vec<u8>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("gradient records"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(GRAD_HEADER).map_err(wrap)?;
    for r in records {
        for l in &r.layers {
            w.write_record([
                r.epoch.to_string(),
                l.layer.clone(),
                l.l2_norm.to_string(),
                l.last_step.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(wrap)?;
        }
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

pub fn emit_stats_csv(records: &[ScoreStatsRecord], path: &Path) -> Result<()> {
    fs::write(path, scores_to_csv(records)?).map_err(|e| Error::io(path, e))
}

pub fn emit_grads_csv(records: &[GradStatsRecord], path: &Path) -> Result<()> {
    fs::write(path, grads_to_csv(records)?).map_err(|e| Error::io(path, e))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, row: usize, path: &Path) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.trim().parse().map_err(|_| {
        Error::Parse(format!(
            "{}: row {row}, column {i}: cannot parse {raw:?}",
            path.display()
        ))
    })
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(Error::Parse(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            header,
            found.iter().collect::<Vec<_>>()
        )));
    }
    let rows = r
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

pub fn parse_stats_csv(path: &Path) -> Result<Vec<ScoreStatsRecord>> {
    read_rows(path, &SCORE_HEADER)?
        .iter()
        .enumerate()
        .map(|(row, rec)| {
            let pre: u8 = field(rec, 7, row, path)?;
            Ok(ScoreStatsRecord {
                step: field(rec, 0, row, path)?,
                epoch: field(rec, 1, row, path)?,
                mean_pos: field(rec, 2, row, path)?,
                mean_neg: field(rec, 3, row, path)?,
                var_neg: field(rec, 4, row, path)?,
                n: field(rec, 5, row, path)?,
                k: field(rec, 6, row, path)?,
                pre_ft: pre != 0,
            })
        })
        .collect()
}

pub fn parse_grads_csv(path: &Path) -> Result<Vec<GradStatsRecord>> {
    let mut out: Vec<GradStatsRecord> = Vec::new();
    for (row, rec) in read_rows(path, &GRAD_HEADER)?.iter().enumerate() {
        let epoch: usize = field(rec, 0, row, path)?;
        let last = rec.get(3).unwrap_or("").trim();
        let layer = LayerNorm {
            layer: rec.get(1).unwrap_or("").to_string(),
            l2_norm: field(rec, 2, row, path)?,
            last_step: if last.is_empty() {
                None
            } else {
                Some(field(rec, 3, row, path)?)
            },
        };
        match out.last_mut() {
            Some(r) if r.epoch == epoch => r.layers.push(layer),
            _ => out.push(GradStatsRecord {
                epoch,
                layers: vec![layer],
            }),
        }
    }
    Ok(out)
}
