//! Command orchestration shared by the CLI: data loading, pretraining with
//! artifact output, linear readout, plotting and sweeps.
//!
//! All files are written through [`OutDir`], which refuses any path that
//! would leave the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{self, Assignment, DataSource, RunConfig, SweepPlan};
use crate::contrastive::{EpochSummary, Trainer};
use crate::data::{load_csv, load_idx, synth_gaussian_mixture, Dataset};
use crate::encoder::{read_checkpoint, Architecture, Checkpoint};
use crate::error::{Error, Result};
use crate::eval::{confusion_to_csv, linear_readout, ProbeReport};
use crate::telemetry::{
    emit_svg_plot, empty_grads_csv, empty_scores_csv, grads_to_csv, parse_grads_csv, parse_stats_csv, scores_to_csv, PlotStyle, Recorder, Series,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SCORES_FILE: &str = "scores.csv";
pub const GRADS_FILE: &str = "grads.csv";
pub const LOSSES_FILE: &str = "losses.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROBE_FILE: &str = "probe.json";
pub const CONFUSION_FILE: &str = "confusion.csv";

/// An output directory; every write stays inside it.
#[derive(Clone, Debug)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolves a relative name made of plain components only.
    pub fn path(&self, name: &str) -> Result<PathBuf> {
        let rel = Path::new(name);
        let plain = !name.is_empty() && rel.components().all(|c| matches!(c, Component::Normal(_)));
        if !plain {
            return Err(Error::config(
                "--out",
                format!("refusing to write `{name}` outside the output directory"),
            ));
        }
        Ok(self.root.join(rel))
    }

    pub fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name)?;
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn subdir(&self, name: &str) -> Result<OutDir> {
        OutDir::create(self.path(name)?)
    }
}

/// Train split plus optional held-out split.
pub struct Datasets {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

/// Loads the configured data source and applies the sample limits.
pub fn load_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let d = &cfg.data;
    let (train, test) = match d.source {
        DataSource::Idx => {
            let train = load_idx(&d.train_images, &d.train_labels)?;
            let test = if d.test_images.exists() && d.test_labels.exists() {
                Some(load_idx(&d.test_images, &d.test_labels)?)
            } else {
                None
            };
            (train, test)
        }
        DataSource::Csv => {
            let path = d
                .train_csv
                .as_ref()
                .ok_or_else(|| Error::config("data.train_csv", "required when data.source = csv"))?;
            let train = load_csv(path, d.label_column)?;
            let test = d.test_csv.as_ref().map(|p| load_csv(p, d.label_column)).transpose()?;
            (train, test)
        }
        DataSource::Synthetic => {
            let per = d.per_class + d.test_per_class;
            let all = synth_gaussian_mixture(d.classes, per, d.dim, d.separation, d.seed)?;
            let n_train = d.classes * d.per_class;
            let split = |range: std::ops::Range<usize>, tag: &str| -> Result<Dataset> {
                let idx: Vec<usize> = range.collect();
                let labels = all.labels().map(|l| idx.iter().map(|&i| l[i]).collect());
                Dataset::new(all.samples().select_rows(&idx), labels, format!("{} [{tag}]", all.source()))
            };
            let test = (d.test_per_class > 0)
                .then(|| split(n_train..all.len(), "test"))
                .transpose()?;
            (split(0..n_train, "train")?, test)
        }
    };
    let limit = |ds: Dataset, n: Option<usize>| match n {
        Some(n) => ds.truncate(n),
        None => ds,
    };
    Ok(Datasets {
        train: limit(train, d.limit),
        test: test.map(|t| limit(t, d.test_limit)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub epoch: usize,
    pub step: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epochs_completed: usize,
    pub steps: u64,
    pub epoch_mean_loss: Vec<f64>,
    pub final_loss: Option<f64>,
    /// Mean wall time of score + loss evaluation per step (not reproducible).
    pub mean_loss_seconds: Option<f64>,
    pub probe_accuracy: Option<f64>,
    pub probe_train_accuracy: Option<f64>,
}

/// What a run did and where its outputs are.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Resolved configuration; feeding it back reproduces the run.
    pub config: BTreeMap<String, String>,
    pub data: String,
    pub status: String,
    pub failure: Option<Failure>,
    pub outputs: Vec<String>,
    pub metrics: Metrics,
}

impl RunManifest {
    fn new(command: &str, cfg: &RunConfig, data: String) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.train.seed,
            config: cfg.entries(),
            data,
            status: "ok".into(),
            failure: None,
            outputs: Vec::new(),
            metrics: Metrics::default(),
        }
    }

    fn write(&mut self, out: &OutDir) -> Result<()> {
        self.outputs.push(MANIFEST_FILE.into());
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        out.write(MANIFEST_FILE, json + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// Reads config assignments from a text file or from a run manifest.
pub fn load_assignments(path: &Path) -> Result<Vec<Assignment>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('{') {
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        return Ok(m
            .config
            .into_iter()
            .map(|(key, value)| Assignment {
                key,
                value,
                line: None,
            })
            .collect());
    }
    config::parse_config_text(&text)
}

/// Outcome of `pretrain`; a numeric failure is reported here and in the
/// manifest rather than as an `Err`, so partial artifacts are kept.
#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub manifest: RunManifest,
    pub probe: Option<ProbeReport>,
}

impl PretrainOutcome {
    pub fn failure_error(&self) -> Option<Error> {
        self.manifest.failure.as_ref().map(|f| Error::NumericFailure {
            epoch: f.epoch,
            step: f.step,
        })
    }
}

fn loss_csv(rows: &[(usize, u64, f64)]) -> String {
    let mut s = String::from("epoch,step,loss\n");
    for (e, st, l) in rows {
        s.push_str(&format!("{e},{st},{l}\n"));
    }
    s
}

/// Pretrains an encoder and writes checkpoint, telemetry CSVs, the loss
/// trace, the resolved config and the manifest into `out`.
pub fn pretrain(cfg: &RunConfig, out: &OutDir) -> Result<PretrainOutcome> {
    pretrain_with_progress(cfg, out, |_| {})
}

/// [`pretrain`], calling `progress` after every completed epoch.
pub fn pretrain_with_progress(
    cfg: &RunConfig,
    out: &OutDir,
    mut progress: impl FnMut(&EpochSummary),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let data = load_datasets(cfg)?;
    let arch = Architecture::new(data.train.dim(), cfg.model.hidden.clone(), cfg.model.dim);
    let mut trainer = Trainer::new(arch, cfg.train.clone())?;
    let policy = cfg.augment.resolve(cfg.data.source);
    let mut recorder = Recorder::new(cfg.telemetry.clone());
    let mut manifest = RunManifest::new("pretrain", cfg, data.train.source().to_string());

    let mut losses = Vec::new();
    let mut seconds = Vec::new();
    for epoch in 0..cfg.train.epochs {
        let first_step = trainer.step();
        match trainer.train_epoch(&data.train, epoch, &policy, Some(&mut recorder)) {
            Ok(summary) => {
                progress(&summary);
                manifest.metrics.epoch_mean_loss.push(summary.mean_loss());
                for (i, l) in summary.losses.iter().enumerate() {
                    losses.push((epoch, first_step + i as u64, *l));
                }
                seconds.extend(summary.loss_seconds);
            }
            Err(e @ Error::NumericFailure { epoch, step }) => {
                recorder.end_epoch();
                manifest.status = "numeric_failure".into();
                manifest.failure = Some(Failure {
                    epoch,
                    step,
                    message: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    manifest.metrics.epochs_completed = trainer.epochs_done();
    manifest.metrics.steps = trainer.step();
    manifest.metrics.final_loss = losses.last().map(|l| l.2);
    if !seconds.is_empty() {
        manifest.metrics.mean_loss_seconds = Some(seconds.iter().sum::<f64>() / seconds.len() as f64);
    }

    out.write(CHECKPOINT_FILE, trainer.checkpoint().to_bytes())?;
    let scores = match recorder.score_records() {
        [] => empty_scores_csv(),
        records => scores_to_csv(records)?,
    };
    let grads = match recorder.grad_records() {
        [] => empty_grads_csv(),
        records => grads_to_csv(records)?,
    };
    out.write(SCORES_FILE, scores)?;
    out.write(GRADS_FILE, grads)?;
    out.write(LOSSES_FILE, loss_csv(&losses))?;
    out.write(CONFIG_FILE, cfg.to_text())?;
    manifest.outputs = [CHECKPOINT_FILE, SCORES_FILE, GRADS_FILE, LOSSES_FILE, CONFIG_FILE]
        .map(String::from)
        .to_vec();

    let mut probe = None;
    let labeled = data.train.labels().is_some();
    if manifest.failure.is_none() && cfg.probe_after_pretrain && labeled {
        let test = data.test.as_ref().unwrap_or(&data.train);
        let report = linear_readout(trainer.query(), &data.train, test, &cfg.probe_config())?;
        write_probe_files(&report, out, &mut manifest)?;
        probe = Some(report);
    }
    manifest.write(out)?;
    Ok(PretrainOutcome { manifest, probe })
}

fn write_probe_files(report: &ProbeReport, out: &OutDir, manifest: &mut RunManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Parse(e.to_string()))?;
    out.write(PROBE_FILE, json + "\n")?;
    out.write(CONFUSION_FILE, confusion_to_csv(&report.confusion))?;
    manifest.outputs.push(PROBE_FILE.into());
    manifest.outputs.push(CONFUSION_FILE.into());
    manifest.metrics.probe_accuracy = Some(report.accuracy);
    manifest.metrics.probe_train_accuracy = Some(report.train_accuracy);
    Ok(())
}

/// Linear readout of the query encoder stored in `checkpoint`.
pub fn probe(cfg: &RunConfig, checkpoint: &Path, out: &OutDir) -> Result<ProbeReport> {
    cfg.validate()?;
    let ckpt: Checkpoint = read_checkpoint(checkpoint)?;
    let data = load_datasets(cfg)?;
    let test = data.test.as_ref().unwrap_or(&data.train);
    let report = linear_readout(&ckpt.query, &data.train, test, &cfg.probe_config())?;
    let mut manifest = RunManifest::new("probe", cfg, data.train.source().to_string());
    write_probe_files(&report, out, &mut manifest)?;
    manifest.write(out)?;
    Ok(report)
}

/// A CSV to plot, labelled in legends by `name`.
#[derive(Clone, Debug)]
pub struct PlotInput {
    pub name: String,
    pub path: PathBuf,
}

impl PlotInput {
    /// Directories expand to the run's scores and grads CSVs; names default
    /// to the directory (or file stem).
    pub fn expand(path: &Path) -> Vec<PlotInput> {
        let name = |p: &Path| p.file_name().map_or("run".into(), |n| n.to_string_lossy().to_string());
        if path.is_dir() {
            [SCORES_FILE, GRADS_FILE]
                .iter()
                .map(|f| path.join(f))
                .filter(|p| p.exists())
                .map(|p| PlotInput {
                    name: name(path),
                    path: p,
                })
                .collect()
        } else {
            let stem = path.file_stem().map_or("run".into(), |n| n.to_string_lossy().to_string());
            vec![PlotInput {
                name: stem,
                path: path.to_path_buf(),
            }]
        }
    }
}

pub const SCORE_PANELS: [&str; 3] = ["mean_pos", "mean_neg", "var_neg"];
pub const GRAD_PANEL: &str = "grads";

fn is_grads_csv(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().next().is_some_and(|h| h.trim().starts_with("epoch,layer")))
}

/// Renders the requested panels (all available when empty) to `<panel>.svg`.
pub fn plot(inputs: &[PlotInput], panels: &[String], out: &OutDir) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("plot inputs"));
    }
    let mut scores = Vec::new();
    let mut grads = Vec::new();
    for input in inputs {
        if is_grads_csv(&input.path)? {
            grads.push((input.name.clone(), parse_grads_csv(&input.path)?));
        } else {
            scores.push((input.name.clone(), parse_stats_csv(&input.path)?));
        }
    }
    let wanted: Vec<String> = if panels.is_empty() {
        let mut all = Vec::new();
        if !scores.is_empty() {
            all.extend(SCORE_PANELS.iter().map(|s| s.to_string()));
        }
        if !grads.is_empty() {
            all.push(GRAD_PANEL.into());
        }
        all
    } else {
        panels.to_vec()
    };

    let mut written = Vec::new();
    for panel in &wanted {
        let mut series = Vec::new();
        if panel == GRAD_PANEL {
            for (name, recs) in &grads {
                let layers: Vec<String> = recs.first().map_or(Vec::new(), |r| r.layers.iter().map(|l| l.layer.clone()).collect());
                for layer in layers {
                    let points = recs
                        .iter()
                        .filter_map(|r| r.layers.iter().find(|l| l.layer == layer).map(|l| (r.epoch as f64, l.l2_norm)))
                        .collect();
                    series.push(Series::new(format!("{name} {layer}"), points));
                }
            }
        } else {
            let pick: fn(&crate::telemetry::ScoreStatsRecord) -> f64 = match panel.as_str() {
                "mean_pos" => |r| r.mean_pos,
                "mean_neg" => |r| r.mean_neg,
                "var_neg" => |r| r.var_neg,
                other => {
                    return Err(Error::config(
                        "--panel",
                        format!("unknown panel `{other}` (mean_pos, mean_neg, var_neg, grads)"),
                    ))
                }
            };
            for (name, recs) in &scores {
                for pre in [false, true] {
                    let points: Vec<(f64, f64)> = recs
                        .iter()
                        .filter(|r| r.pre_ft == pre)
                        .map(|r| (r.step as f64, pick(r)))
                        .collect();
                    if !points.is_empty() {
                        let label = if pre { format!("{name} (pre-FT)") } else { name.clone() };
                        series.push(Series::new(label, points));
                    }
                }
            }
        }
        if series.is_empty() {
            return Err(Error::EmptySeries(panel.clone()));
        }
        let style = PlotStyle {
            title: panel.clone(),
            x_label: if panel == GRAD_PANEL { "epoch".into() } else { "step".into() },
            y_label: if panel == GRAD_PANEL { "l2 norm".into() } else { panel.clone() },
            ..PlotStyle::default()
        };
        let path = out.path(&format!("{panel}.svg"))?;
        emit_svg_plot(&series, &path, &style)?;
        written.push(path);
    }
    Ok(written)
}

/// One row of the sweep summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub dir: String,
    pub assignments: Vec<(String, String)>,
    pub status: String,
    pub final_loss: Option<f64>,
    pub probe_accuracy: Option<f64>,
}

/// Runs `pretrain` for every cell of the grid into `cell-NNN` directories
/// and writes `sweep.csv`. Numeric failures are recorded per cell.
pub fn sweep(plan: &SweepPlan, out: &OutDir) -> Result<Vec<SweepCell>> {
    let cells = plan.cells();
    // validate every cell before doing any work
    let configs = cells.iter().map(|c| plan.resolve_cell(c)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, (cell, cfg)) in cells.iter().zip(&configs).enumerate() {
        let dir = format!("cell-{i:03}");
        let outcome = pretrain(cfg, &out.subdir(&dir)?)?;
        rows.push(SweepCell {
            dir,
            assignments: cell.clone(),
            status: outcome.manifest.status.clone(),
            final_loss: outcome.manifest.metrics.final_loss,
            probe_accuracy: outcome.manifest.metrics.probe_accuracy,
        });
    }
    let mut csv = String::from("cell");
    for (k, _) in &plan.axes {
        csv.push(',');
        csv.push_str(k);
    }
    csv.push_str(",status,final_loss,probe_accuracy\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &rows {
        csv.push_str(&r.dir);
        for (_, v) in &r.assignments {
            csv.push(',');
            csv.push_str(v);
        }
        csv.push_str(&format!(",{},{},{}\n", r.status, opt(r.final_loss), opt(r.probe_accuracy)));
    }
    out.write("sweep.csv", csv)?;
    Ok(rows)
}
