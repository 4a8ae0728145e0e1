//! Run configuration: a line-oriented `section.key = value` text format with
//! `#` comments, command-line overrides, and `{a, b, …}` sweep grids.
//!
//! Every key has a default, so an empty file is a valid configuration. The
//! resolved configuration can be written back out with [`RunConfig::to_text`]
//! and re-read to reproduce a run exactly (floats print in shortest
//! round-trip form).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contrastive::{Mode, TrainConfig};
use crate::data::{AugmentPolicy, ImageAugment, VectorAugment};
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::feature_transform::{HardNegative, NegLambdaScope, NegMode, PosMode};
use crate::telemetry::TelemetryConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Idx,
    Csv,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub label_column: Option<usize>,
    /// Keep only the first `limit` training samples.
    pub limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    /// Seed of the synthetic generator (independent of the training seed).
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let root = PathBuf::from("data/fashion-mnist-10k");
        Self {
            source: DataSource::Idx,
            train_images: root.join("train-images-idx3-ubyte.gz"),
            train_labels: root.join("train-labels-idx1-ubyte.gz"),
            test_images: root.join("test-images-idx3-ubyte.gz"),
            test_labels: root.join("test-labels-idx1-ubyte.gz"),
            train_csv: None,
            test_csv: None,
            label_column: None,
            limit: None,
            test_limit: None,
            classes: 10,
            per_class: 100,
            test_per_class: 50,
            dim: 32,
            separation: 3.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    /// Image operations for IDX data, vector operations otherwise.
    Auto,
    Image,
    Vector,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub kind: AugmentKind,
    pub image: ImageAugment,
    pub vector: VectorAugment,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            kind: AugmentKind::Auto,
            image: ImageAugment::default(),
            vector: VectorAugment::default(),
        }
    }
}

impl AugmentConfig {
    pub fn resolve(&self, source: DataSource) -> AugmentPolicy {
        match (self.kind, source) {
            (AugmentKind::Image, _) | (AugmentKind::Auto, DataSource::Idx) => AugmentPolicy::Image(self.image.clone()),
            (AugmentKind::Vector, _) | (AugmentKind::Auto, _) => AugmentPolicy::Vector(self.vector.clone()),
            (AugmentKind::None, _) => AugmentPolicy::Vector(VectorAugment {
                noise_std: 0.0,
                dropout: 0.0,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    /// Embedding dimension `D`.
    pub dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 256],
            dim: 64,
        }
    }
}

/// Everything a command needs, fully resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub telemetry: TelemetryConfig,
    pub eval: ProbeConfig,
    /// Fit and report a linear probe at the end of `pretrain`.
    pub probe_after_pretrain: bool,
    /// Hard-negative shapes, kept even while the mode is off.
    hard_shape: HardNegative,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            data: DataConfig::default(),
            augment: AugmentConfig::default(),
            telemetry: TelemetryConfig::default(),
            eval: ProbeConfig::default(),
            probe_after_pretrain: true,
            hard_shape: HardNegative { alpha: 2.0, beta: 1.0 },
        }
    }
}

/// All recognized keys, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "train.mode",
    "train.epochs",
    "train.batch_size",
    "train.tau",
    "train.m",
    "train.queue_size",
    "train.lr",
    "train.sgd_momentum",
    "train.weight_decay",
    "train.seed",
    "model.hidden",
    "model.dim",
    "ft.pos",
    "ft.alpha_ex",
    "ft.neg",
    "ft.alpha_in",
    "ft.neg_lambda",
    "ft.hard_negative",
    "ft.hard_alpha",
    "ft.hard_beta",
    "ft.dim_level",
    "ft.renorm",
    "ft.begin_epoch",
    "data.source",
    "data.train_images",
    "data.train_labels",
    "data.test_images",
    "data.test_labels",
    "data.train_csv",
    "data.test_csv",
    "data.label_column",
    "data.limit",
    "data.test_limit",
    "data.classes",
    "data.per_class",
    "data.test_per_class",
    "data.dim",
    "data.separation",
    "data.seed",
    "augment.kind",
    "augment.max_shift",
    "augment.noise_std",
    "augment.erase_prob",
    "augment.erase_max_frac",
    "augment.flip_prob",
    "augment.vector_noise_std",
    "augment.dropout",
    "telemetry.scores",
    "telemetry.grads",
    "telemetry.pre_ft",
    "telemetry.sample",
    "telemetry.every",
    "eval.lr",
    "eval.epochs",
    "eval.batch_size",
    "eval.momentum",
    "eval.weight_decay",
    "eval.after_pretrain",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>()
        .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{v}`"))),
    }
}

fn is_none(v: &str) -> bool {
    v.is_empty() || v.eq_ignore_ascii_case("none")
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if is_none(v) {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn parse_opt_path(v: &str) -> Option<PathBuf> {
    (!is_none(v)).then(|| PathBuf::from(v))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(v))
        .map(|&(_, t)| t)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::config(key, format!("expected one of {}, got `{v}`", names.join(", ")))
        })
}

fn name_of<T: PartialEq>(value: T, options: &[(&'static str, T)]) -> &'static str {
    options.iter().find(|(_, t)| *t == value).map_or("?", |(n, _)| n)
}

const MODES: &[(&str, Mode)] = &[("queue", Mode::Queue), ("in_batch", Mode::InBatch)];
const POS: &[(&str, PosMode)] = &[
    ("none", PosMode::None),
    ("extrapolate", PosMode::Extrapolate),
    ("interpolate", PosMode::Interpolate),
];
const NEG: &[(&str, NegMode)] = &[
    ("none", NegMode::None),
    ("interpolate", NegMode::Interpolate),
    ("extrapolate", NegMode::Extrapolate),
    ("extend", NegMode::Extend),
];
const SCOPES: &[(&str, NegLambdaScope)] = &[
    ("per_step", NegLambdaScope::PerStep),
    ("per_entry", NegLambdaScope::PerEntry),
];
const SOURCES: &[(&str, DataSource)] = &[
    ("idx", DataSource::Idx),
    ("csv", DataSource::Csv),
    ("synthetic", DataSource::Synthetic),
];
const KINDS: &[(&str, AugmentKind)] = &[
    ("auto", AugmentKind::Auto),
    ("image", AugmentKind::Image),
    ("vector", AugmentKind::Vector),
    ("none", AugmentKind::None),
];

fn opt_to_string<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

impl RunConfig {
    /// Assigns one key. Values are parsed but not cross-validated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        let ft = &mut t.ft;
        let d = &mut self.data;
        let a = &mut self.augment;
        let tel = &mut self.telemetry;
        let e = &mut self.eval;
        match key {
            "train.mode" => t.mode = parse_choice(key, v, MODES)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.tau" => t.tau = parse(key, v)?,
            "train.m" => t.momentum = parse(key, v)?,
            "train.queue_size" => t.queue_size = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.sgd_momentum" => t.sgd_momentum = parse(key, v)?,
            "train.weight_decay" => t.weight_decay = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "model.hidden" => self.model.hidden = parse_list(key, v)?,
            "model.dim" => self.model.dim = parse(key, v)?,
            "ft.pos" => ft.pos = parse_choice(key, v, POS)?,
            "ft.alpha_ex" => ft.alpha_ex = parse(key, v)?,
            "ft.neg" => ft.neg = parse_choice(key, v, NEG)?,
            "ft.alpha_in" => ft.alpha_in = parse(key, v)?,
            "ft.neg_lambda" => ft.neg_lambda = parse_choice(key, v, SCOPES)?,
            "ft.hard_negative" => ft.hard_negative = parse_bool(key, v)?.then_some(self.hard_shape),
            "ft.hard_alpha" | "ft.hard_beta" => {
                let x = parse(key, v)?;
                if key == "ft.hard_alpha" {
                    self.hard_shape.alpha = x;
                } else {
                    self.hard_shape.beta = x;
                }
                if ft.hard_negative.is_some() {
                    ft.hard_negative = Some(self.hard_shape);
                }
            }
            "ft.dim_level" => ft.dim_level = parse_bool(key, v)?,
            "ft.renorm" => ft.renormalize = parse_bool(key, v)?,
            "ft.begin_epoch" => ft.begin_epoch = parse(key, v)?,
            "data.source" => d.source = parse_choice(key, v, SOURCES)?,
            "data.train_images" => d.train_images = PathBuf::from(v),
            "data.train_labels" => d.train_labels = PathBuf::from(v),
            "data.test_images" => d.test_images = PathBuf::from(v),
            "data.test_labels" => d.test_labels = PathBuf::from(v),
            "data.train_csv" => d.train_csv = parse_opt_path(v),
            "data.test_csv" => d.test_csv = parse_opt_path(v),
            "data.label_column" => d.label_column = parse_opt(key, v)?,
            "data.limit" => d.limit = parse_opt(key, v)?,
            "data.test_limit" => d.test_limit = parse_opt(key, v)?,
            "data.classes" => d.classes = parse(key, v)?,
            "data.per_class" => d.per_class = parse(key, v)?,
            "data.test_per_class" => d.test_per_class = parse(key, v)?,
            "data.dim" => d.dim = parse(key, v)?,
            "data.separation" => d.separation = parse(key, v)?,
            "data.seed" => d.seed = parse(key, v)?,
            "augment.kind" => a.kind = parse_choice(key, v, KINDS)?,
            "augment.max_shift" => a.image.max_shift = parse(key, v)?,
            "augment.noise_std" => a.image.noise_std = parse(key, v)?,
            "augment.erase_prob" => a.image.erase_prob = parse(key, v)?,
            "augment.erase_max_frac" => a.image.erase_max_frac = parse(key, v)?,
            "augment.flip_prob" => a.image.flip_prob = parse(key, v)?,
            "augment.vector_noise_std" => a.vector.noise_std = parse(key, v)?,
            "augment.dropout" => a.vector.dropout = parse(key, v)?,
            "telemetry.scores" => tel.scores = parse_bool(key, v)?,
            "telemetry.grads" => tel.grads = parse_bool(key, v)?,
            "telemetry.pre_ft" => tel.pre_ft = parse_bool(key, v)?,
            "telemetry.sample" => tel.sample = parse(key, v)?,
            "telemetry.every" => tel.every = parse(key, v)?,
            "eval.lr" => e.lr = parse(key, v)?,
            "eval.epochs" => e.epochs = parse(key, v)?,
            "eval.batch_size" => e.batch_size = parse(key, v)?,
            "eval.momentum" => e.momentum = parse(key, v)?,
            "eval.weight_decay" => e.weight_decay = parse(key, v)?,
            "eval.after_pretrain" => self.probe_after_pretrain = parse_bool(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Current value of `key` in the textual form [`RunConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let ft = &t.ft;
        let d = &self.data;
        let a = &self.augment;
        let tel = &self.telemetry;
        let e = &self.eval;
        let path = |p: &PathBuf| p.display().to_string();
        Some(match key {
            "train.mode" => name_of(t.mode, MODES).into(),
            "train.epochs" => t.epochs.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.tau" => t.tau.to_string(),
            "train.m" => t.momentum.to_string(),
            "train.queue_size" => t.queue_size.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.sgd_momentum" => t.sgd_momentum.to_string(),
            "train.weight_decay" => t.weight_decay.to_string(),
            "train.seed" => t.seed.to_string(),
            "model.hidden" => {
                let items: Vec<String> = self.model.hidden.iter().map(ToString::to_string).collect();
                format!("[{}]", items.join(", "))
            }
            "model.dim" => self.model.dim.to_string(),
            "ft.pos" => name_of(ft.pos, POS).into(),
            "ft.alpha_ex" => ft.alpha_ex.to_string(),
            "ft.neg" => name_of(ft.neg, NEG).into(),
            "ft.alpha_in" => ft.alpha_in.to_string(),
            "ft.neg_lambda" => name_of(ft.neg_lambda, SCOPES).into(),
            "ft.hard_negative" => ft.hard_negative.is_some().to_string(),
            "ft.hard_alpha" => self.hard_shape.alpha.to_string(),
            "ft.hard_beta" => self.hard_shape.beta.to_string(),
            "ft.dim_level" => ft.dim_level.to_string(),
            "ft.renorm" => ft.renormalize.to_string(),
            "ft.begin_epoch" => ft.begin_epoch.to_string(),
            "data.source" => name_of(d.source, SOURCES).into(),
            "data.train_images" => path(&d.train_images),
            "data.train_labels" => path(&d.train_labels),
            "data.test_images" => path(&d.test_images),
            "data.test_labels" => path(&d.test_labels),
            "data.train_csv" => d.train_csv.as_ref().map_or("none".into(), path),
            "data.test_csv" => d.test_csv.as_ref().map_or("none".into(), path),
            "data.label_column" => opt_to_string(&d.label_column),
            "data.limit" => opt_to_string(&d.limit),
            "data.test_limit" => opt_to_string(&d.test_limit),
            "data.classes" => d.classes.to_string(),
            "data.per_class" => d.per_class.to_string(),
            "data.test_per_class" => d.test_per_class.to_string(),
            "data.dim" => d.dim.to_string(),
            "data.separation" => d.separation.to_string(),
            "data.seed" => d.seed.to_string(),
            "augment.kind" => name_of(a.kind, KINDS).into(),
            "augment.max_shift" => a.image.max_shift.to_string(),
            "augment.noise_std" => a.image.noise_std.to_string(),
            "augment.erase_prob" => a.image.erase_prob.to_string(),
            "augment.erase_max_frac" => a.image.erase_max_frac.to_string(),
            "augment.flip_prob" => a.image.flip_prob.to_string(),
            "augment.vector_noise_std" => a.vector.noise_std.to_string(),
            "augment.dropout" => a.vector.dropout.to_string(),
            "telemetry.scores" => tel.scores.to_string(),
            "telemetry.grads" => tel.grads.to_string(),
            "telemetry.pre_ft" => tel.pre_ft.to_string(),
            "telemetry.sample" => tel.sample.to_string(),
            "telemetry.every" => tel.every.to_string(),
            "eval.lr" => e.lr.to_string(),
            "eval.epochs" => e.epochs.to_string(),
            "eval.batch_size" => e.batch_size.to_string(),
            "eval.momentum" => e.momentum.to_string(),
            "eval.weight_decay" => e.weight_decay.to_string(),
            "eval.after_pretrain" => self.probe_after_pretrain.to_string(),
            _ => return None,
        })
    }

    /// Every key with its current value.
    pub fn entries(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|k| (k.to_string(), self.get(k).expect("listed key")))
            .collect()
    }

    /// The full configuration in the input format, one key per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for k in KEYS {
            let s = k.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = s;
            }
            out.push_str(&format!("{k} = {}\n", self.get(k).expect("listed key")));
        }
        out
    }

    /// Cross-field checks; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.model.dim == 0 {
            return Err(Error::config("model.dim", "must be at least 1"));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be at least 1"));
        }
        let d = &self.data;
        match d.source {
            DataSource::Csv if d.train_csv.is_none() => {
                return Err(Error::config("data.train_csv", "required when data.source = csv"));
            }
            DataSource::Synthetic => {
                for (key, v) in [
                    ("data.classes", d.classes),
                    ("data.per_class", d.per_class),
                    ("data.dim", d.dim),
                ] {
                    if v == 0 {
                        return Err(Error::config(key, "must be at least 1"));
                    }
                }
                if !(d.separation >= 0.0 && d.separation.is_finite()) {
                    return Err(Error::config("data.separation", "must be non-negative"));
                }
            }
            _ => {}
        }
        if d.limit == Some(0) {
            return Err(Error::config("data.limit", "must be at least 1"));
        }
        let a = &self.augment;
        for (key, p) in [
            ("augment.erase_prob", a.image.erase_prob),
            ("augment.erase_max_frac", a.image.erase_max_frac),
            ("augment.flip_prob", a.image.flip_prob),
            ("augment.dropout", a.vector.dropout),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(key, "must lie in [0, 1]"));
            }
        }
        for (key, s) in [
            ("augment.noise_std", a.image.noise_std),
            ("augment.vector_noise_std", a.vector.noise_std),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config(key, "must be non-negative"));
            }
        }
        if self.telemetry.sample == 0 {
            return Err(Error::config("telemetry.sample", "must be at least 1"));
        }
        if self.telemetry.every == 0 {
            return Err(Error::config("telemetry.every", "must be at least 1"));
        }
        self.eval.validate()
    }

    /// Probe settings with the run's seed.
    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            seed: self.train.seed,
            ..self.eval.clone()
        }
    }
}

/// One `key = value` assignment with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    /// 1-based line in the config file; `None` for command-line overrides.
    pub line: Option<usize>,
}

impl Assignment {
    /// Values written `{a, b, …}` span a sweep axis.
    pub fn grid_values(&self) -> Option<Vec<String>> {
        let v = self.value.trim();
        let inner = v.strip_prefix('{')?.strip_suffix('}')?;
        Some(inner.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
    }
}

/// Splits config text into assignments. Blank lines and `#` comments are
/// skipped; a repeated key is an error.
pub fn parse_config_text(text: &str) -> Result<Vec<Assignment>> {
    let mut out: Vec<Assignment> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse(format!("line {}: expected `key = value`, got `{line}`", i + 1)));
        };
        let key = k.trim().to_string();
        if let Some(prev) = out.iter().find(|a| a.key == key) {
            return Err(Error::config(
                key,
                format!("set twice (lines {} and {})", prev.line.unwrap_or(0), i + 1),
            ));
        }
        out.push(Assignment {
            key,
            value: v.trim().to_string(),
            line: Some(i + 1),
        });
    }
    Ok(out)
}

/// Parses a `KEY=VALUE` command-line override.
pub fn parse_override(s: &str) -> Result<Assignment> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override `{s}` is not KEY=VALUE")))?;
    Ok(Assignment {
        key: k.trim().to_string(),
        value: v.trim().to_string(),
        line: None,
    })
}

/// File assignments followed by overrides; a later assignment to the same
/// key replaces the earlier one.
pub fn merge(file: Vec<Assignment>, overrides: Vec<Assignment>) -> Vec<Assignment> {
    let mut out = file;
    for o in overrides {
        match out.iter_mut().find(|a| a.key == o.key) {
            Some(a) => *a = o,
            None => out.push(o),
        }
    }
    out
}

/// Builds and validates a configuration from assignments. Grid values are
/// rejected here; expand them with [`SweepPlan`] first.
pub fn resolve(assignments: &[Assignment]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for a in assignments {
        if a.grid_values().is_some() {
            return Err(Error::config(
                &a.key,
                "grid values `{…}` are only accepted by the sweep command",
            ));
        }
        cfg.set(&a.key, &a.value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Cartesian product over every assignment written as a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPlan {
    pub base: Vec<Assignment>,
    pub axes: Vec<(String, Vec<String>)>,
}

impl SweepPlan {
    pub fn from_assignments(assignments: Vec<Assignment>) -> Result<Self> {
        let mut base = Vec::new();
        let mut axes = Vec::new();
        for a in assignments {
            match a.grid_values() {
                Some(values) if values.is_empty() => {
                    return Err(Error::config(&a.key, "empty grid"));
                }
                Some(values) => axes.push((a.key, values)),
                None => base.push(a),
            }
        }
        if axes.is_empty() {
            return Err(Error::config("sweep", "no key has grid values `{a, b, …}`"));
        }
        Ok(Self { base, axes })
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell assignments in row-major order (last axis fastest).
    pub fn cells(&self) -> Vec<Vec<(String, String)>> {
        let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for (key, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((key.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
    }

    /// Resolved configuration of one cell.
    pub fn resolve_cell(&self, cell: &[(String, String)]) -> Result<RunConfig> {
        let extra = cell
            .iter()
            .map(|(k, v)| Assignment {
                key: k.clone(),
                value: v.clone(),
                line: None,
            })
            .collect();
        resolve(&merge(self.base.clone(), extra))
    }
}
