//! Flat `key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dp_optim::{ClipParams, PruningMode, ScheduleMode};
use crate::error::{Error, Result};
use crate::models::Architecture;
use crate::privacy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Dpsgd,
    Adadpigu,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Dpsgd => "dpsgd",
            Optimizer::Adadpigu => "adadpigu",
        })
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sgd" => Ok(Optimizer::Sgd),
            "dpsgd" => Ok(Optimizer::Dpsgd),
            "adadpigu" => Ok(Optimizer::Adadpigu),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer '{other}' (expected sgd, dpsgd or adadpigu)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Idx,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::Idx => "idx",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "synthetic" => Ok(DatasetKind::Synthetic),
            "idx" => Ok(DatasetKind::Idx),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset kind '{other}' (expected synthetic or idx)"
            ))),
        }
    }
}

/// How `σ` is obtained when a target `ε` is configured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaSource {
    /// Invert the closed-form budget.
    ClosedForm,
    /// Bisect the grid accountant.
    Grid,
    /// Look up the published per-dataset table.
    Preset,
}

impl fmt::Display for SigmaSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaSource::ClosedForm => "closed-form",
            SigmaSource::Grid => "grid",
            SigmaSource::Preset => "preset",
        })
    }
}

impl FromStr for SigmaSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "closed-form" | "closed" => Ok(SigmaSource::ClosedForm),
            "grid" => Ok(SigmaSource::Grid),
            "preset" => Ok(SigmaSource::Preset),
            other => Err(Error::InvalidArgument(format!(
                "unknown sigma source '{other}' (expected closed-form, grid or preset)"
            ))),
        }
    }
}

/// Every knob of one training run. Unset keys keep the values of
/// [`RunConfig::default`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub synth_samples: usize,
    pub synth_test_samples: usize,
    pub synth_features: usize,
    pub synth_classes: usize,
    pub synth_margin: f64,
    pub synth_seed: u64,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub classes: usize,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub model: Architecture,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub pretrain_steps: usize,
    pub retention: f64,
    pub schedule: ScheduleMode,
    pub pruning: PruningMode,
    pub clip: f64,
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub sigma_source: SigmaSource,
    pub preset_table: String,
    pub mu: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let clip = ClipParams::default();
        RunConfig {
            dataset: DatasetKind::Synthetic,
            synth_samples: 2000,
            synth_test_samples: 500,
            synth_features: 20,
            synth_classes: 4,
            synth_margin: 10.0,
            synth_seed: 0,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            classes: 10,
            train_limit: None,
            test_limit: None,
            model: Architecture::Logistic,
            optimizer: Optimizer::Adadpigu,
            batch_size: 100,
            lr: 0.1,
            epochs: 5,
            pretrain_steps: 10,
            retention: 0.6,
            schedule: ScheduleMode::Fixed,
            pruning: PruningMode::FixedMask,
            clip: clip.clip,
            sigma: None,
            epsilon: None,
            delta: 1e-5,
            sigma_source: SigmaSource::ClosedForm,
            preset_table: "mnist".into(),
            mu: clip.mu,
            gamma1: clip.gamma1,
            gamma2: clip.gamma2,
            alpha0: clip.alpha0,
            beta0: clip.beta0,
            seed: 0,
            output: None,
            wall_time: false,
        }
    }
}

/// Every recognised key, in the order they are printed.
pub const KEYS: &[&str] = &[
    "dataset",
    "synth_samples",
    "synth_test_samples",
    "synth_features",
    "synth_classes",
    "synth_margin",
    "synth_seed",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "classes",
    "train_limit",
    "test_limit",
    "model",
    "optimizer",
    "batch_size",
    "lr",
    "epochs",
    "pretrain_steps",
    "retention",
    "schedule",
    "pruning",
    "clip",
    "sigma",
    "epsilon",
    "delta",
    "sigma_source",
    "preset_table",
    "mu",
    "gamma1",
    "gamma2",
    "alpha0",
    "beta0",
    "seed",
    "output",
    "wall_time",
];

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("{key}: cannot parse '{value}'"))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> std::result::Result<Option<T>, String> {
    match value.trim() {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_enum<T: FromStr<Err = Error>>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|e: Error| format!("{key}: {e}"))
}

fn show_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".into(), T::to_string)
}

fn show_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string())
}

/// Shared sanity rules: a message per problem.
fn require(problems: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        problems.push(msg());
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = parse_enum(key, v)?,
            "synth_samples" => self.synth_samples = parse(key, v)?,
            "synth_test_samples" => self.synth_test_samples = parse(key, v)?,
            "synth_features" => self.synth_features = parse(key, v)?,
            "synth_classes" => self.synth_classes = parse(key, v)?,
            "synth_margin" => self.synth_margin = parse(key, v)?,
            "synth_seed" => self.synth_seed = parse(key, v)?,
            "train_images" => self.train_images = parse_opt(key, v)?,
            "train_labels" => self.train_labels = parse_opt(key, v)?,
            "test_images" => self.test_images = parse_opt(key, v)?,
            "test_labels" => self.test_labels = parse_opt(key, v)?,
            "classes" => self.classes = parse(key, v)?,
            "train_limit" => self.train_limit = parse_opt(key, v)?,
            "test_limit" => self.test_limit = parse_opt(key, v)?,
            "model" => self.model = parse_enum(key, v)?,
            "optimizer" => self.optimizer = parse_enum(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "pretrain_steps" => self.pretrain_steps = parse(key, v)?,
            "retention" => self.retention = parse(key, v)?,
            "schedule" => self.schedule = parse_enum(key, v)?,
            "pruning" => self.pruning = parse_enum(key, v)?,
            "clip" => self.clip = parse(key, v)?,
            "sigma" => self.sigma = parse_opt(key, v)?,
            "epsilon" => self.epsilon = parse_opt(key, v)?,
            "delta" => self.delta = parse(key, v)?,
            "sigma_source" => self.sigma_source = parse_enum(key, v)?,
            "preset_table" => self.preset_table = v.to_string(),
            "mu" => self.mu = parse(key, v)?,
            "gamma1" => self.gamma1 = parse(key, v)?,
            "gamma2" => self.gamma2 = parse(key, v)?,
            "alpha0" => self.alpha0 = parse(key, v)?,
            "beta0" => self.beta0 = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "output" => self.output = parse_opt(key, v)?,
            "wall_time" => self.wall_time = parse(key, v)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Current value of `key` in the same textual form [`set`](Self::set) accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "dataset" => self.dataset.to_string(),
            "synth_samples" => self.synth_samples.to_string(),
            "synth_test_samples" => self.synth_test_samples.to_string(),
            "synth_features" => self.synth_features.to_string(),
            "synth_classes" => self.synth_classes.to_string(),
            "synth_margin" => self.synth_margin.to_string(),
            "synth_seed" => self.synth_seed.to_string(),
            "train_images" => show_path(&self.train_images),
            "train_labels" => show_path(&self.train_labels),
            "test_images" => show_path(&self.test_images),
            "test_labels" => show_path(&self.test_labels),
            "classes" => self.classes.to_string(),
            "train_limit" => show_opt(&self.train_limit),
            "test_limit" => show_opt(&self.test_limit),
            "model" => self.model.to_string(),
            "optimizer" => self.optimizer.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "epochs" => self.epochs.to_string(),
            "pretrain_steps" => self.pretrain_steps.to_string(),
            "retention" => self.retention.to_string(),
            "schedule" => self.schedule.to_string(),
            "pruning" => self.pruning.to_string(),
            "clip" => self.clip.to_string(),
            "sigma" => show_opt(&self.sigma),
            "epsilon" => show_opt(&self.epsilon),
            "delta" => self.delta.to_string(),
            "sigma_source" => self.sigma_source.to_string(),
            "preset_table" => self.preset_table.clone(),
            "mu" => self.mu.to_string(),
            "gamma1" => self.gamma1.to_string(),
            "gamma2" => self.gamma2.to_string(),
            "alpha0" => self.alpha0.to_string(),
            "beta0" => self.beta0.to_string(),
            "seed" => self.seed.to_string(),
            "output" => show_path(&self.output),
            "wall_time" => self.wall_time.to_string(),
            _ => return None,
        })
    }

    /// All keys with their resolved values, defaults included.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        KEYS.iter().map(|&k| (k, self.get(k).expect("every listed key is gettable"))).collect()
    }

    /// Renders the configuration in the file format accepted by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies `key = value` lines (blank lines and `#` comments ignored) on
    /// top of `self`, collecting every malformed line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut problems = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k, v) {
                        problems.push(format!("line {}: {e}", no + 1));
                    }
                }
                None => problems.push(format!("line {}: expected 'key = value', got '{line}'", no + 1)),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        RunConfig::parse(&text)
    }

    /// Applies `(key, value)` overrides, collecting every failure.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let problems: Vec<String> = pairs.into_iter().filter_map(|(k, v)| self.set(k, v).err()).collect();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn clip_params(&self, sigma: f64) -> ClipParams {
        ClipParams {
            mu: self.mu,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            alpha0: self.alpha0,
            beta0: self.beta0,
            clip: self.clip,
            sigma,
        }
    }

    pub fn is_private(&self) -> bool {
        self.optimizer != Optimizer::Sgd
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        match self.dataset {
            DatasetKind::Synthetic => {
                require(&mut p, self.synth_samples >= 1, || "synth_samples must be >= 1".into());
                require(&mut p, self.synth_test_samples >= 1, || "synth_test_samples must be >= 1".into());
                require(&mut p, self.synth_features >= 1, || "synth_features must be >= 1".into());
                require(&mut p, self.synth_classes >= 1, || "synth_classes must be >= 1".into());
                require(&mut p, self.synth_margin.is_finite() && self.synth_margin >= 0.0, || {
                    format!("synth_margin must be finite and >= 0, got {}", self.synth_margin)
                });
            }
            DatasetKind::Idx => {
                for (name, v) in [
                    ("train_images", &self.train_images),
                    ("train_labels", &self.train_labels),
                    ("test_images", &self.test_images),
                    ("test_labels", &self.test_labels),
                ] {
                    require(&mut p, v.is_some(), || format!("{name} is required when dataset = idx"));
                }
                require(&mut p, self.classes >= 1, || "classes must be >= 1".into());
            }
        }
        require(&mut p, self.train_limit != Some(0), || "train_limit must be >= 1".into());
        require(&mut p, self.test_limit != Some(0), || "test_limit must be >= 1".into());
        require(&mut p, self.batch_size >= 1, || "batch_size must be >= 1".into());
        if self.dataset == DatasetKind::Synthetic {
            require(&mut p, self.batch_size <= self.synth_samples, || {
                format!("batch_size {} exceeds synth_samples {}", self.batch_size, self.synth_samples)
            });
        }
        require(&mut p, self.lr.is_finite() && self.lr > 0.0, || format!("lr must be > 0, got {}", self.lr));
        require(&mut p, self.epochs >= 1, || "epochs must be >= 1".into());
        require(&mut p, self.retention > 0.0 && self.retention <= 1.0, || {
            format!("retention must lie in (0, 1], got {}", self.retention)
        });
        require(&mut p, self.delta > 0.0 && self.delta < 1.0, || format!("delta must lie in (0, 1), got {}", self.delta));
        if let Some(s) = self.sigma {
            require(&mut p, s.is_finite() && s >= 0.0, || format!("sigma must be >= 0, got {s}"));
        }
        if let Some(e) = self.epsilon {
            require(&mut p, e.is_finite() && e > 0.0, || format!("epsilon must be > 0, got {e}"));
        }
        match self.optimizer {
            Optimizer::Sgd => {
                require(&mut p, self.epsilon.is_none(), || "optimizer sgd is not private; drop epsilon".into());
                require(&mut p, self.sigma.unwrap_or(0.0) == 0.0, || "optimizer sgd adds no noise; sigma must be 0 or unset".into());
            }
            Optimizer::Dpsgd | Optimizer::Adadpigu => {
                require(&mut p, self.sigma.is_some() != self.epsilon.is_some(), || {
                    "exactly one of sigma or epsilon must be given".into()
                });
                if self.sigma_source == SigmaSource::Preset {
                    if let Some(e) = self.epsilon {
                        require(&mut p, privacy::preset_sigma(&self.preset_table, e).is_some(), || {
                            format!("no preset sigma for table '{}' at epsilon {e}", self.preset_table)
                        });
                    }
                }
            }
        }
        if self.optimizer == Optimizer::Adadpigu {
            require(&mut p, self.pretrain_steps >= 1, || "adadpigu needs pretrain_steps >= 1".into());
        }
        p.extend(self.clip_params(self.sigma.unwrap_or(0.0)).problems());
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}
