//! Single training runs and their line-delimited metrics.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetKind, Optimizer, RunConfig, SigmaSource};
use crate::data::{read_idx_file, synth_classification, BatchSampler, Dataset};
use crate::dp_optim::{dpsgd_step, sgd_step, AdaDpigu, ClipState, GradSource, ImportanceState, StepReport, UnfreezeSchedule};
use crate::error::{Error, Result};
use crate::math::SeededRng;
use crate::models::Model;
use crate::privacy::{self, PrivacyLedger};

/// RNG stream ids derived from the run seed.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_SAMPLER: u64 = 2;
pub const STREAM_NOISE: u64 = 3;

/// First line of a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub config: BTreeMap<String, String>,
    pub model: String,
    pub param_count: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub sampling_rate: f64,
    pub sigma: f64,
    pub steps_per_epoch: usize,
    pub total_steps: usize,
    pub pretrain_steps: usize,
}

/// One line per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// `None` for non-private runs (unbounded budget).
    pub eps_spent: Option<f64>,
    pub retention_r_t: f64,
    /// Seconds since the run started; only recorded when `wall_time = true`
    /// so that metrics stay byte-reproducible by default.
    pub wall_time: Option<f64>,
}

/// Last line of a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_test_acc: f64,
    pub final_train_acc: f64,
    pub eps_spent: Option<f64>,
    pub eps_grid: Option<f64>,
    pub sigma: f64,
    pub ledger_steps: u64,
    pub total_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum MetricsLine {
    Header(RunHeader),
    Epoch(MetricsRecord),
    Summary(RunSummary),
}

/// Everything one run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub header: RunHeader,
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
}

impl RunOutcome {
    pub fn lines(&self) -> Vec<MetricsLine> {
        let mut out = vec![MetricsLine::Header(self.header.clone())];
        out.extend(self.records.iter().cloned().map(MetricsLine::Epoch));
        out.push(MetricsLine::Summary(self.summary.clone()));
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for line in self.lines() {
            s.push_str(&serde_json::to_string(&line)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_jsonl()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Parses a metrics file back into its lines.
pub fn read_metrics(text: &str) -> Result<Vec<MetricsLine>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Train and test splits described by the configuration.
pub fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match cfg.dataset {
        DatasetKind::Synthetic => {
            let all = synth_classification(
                cfg.synth_seed,
                cfg.synth_samples + cfg.synth_test_samples,
                cfg.synth_features,
                cfg.synth_classes,
                cfg.synth_margin,
            )?;
            all.split_tail(cfg.synth_test_samples)?
        }
        DatasetKind::Idx => {
            let req = |p: &Option<std::path::PathBuf>, key: &str| {
                p.clone().ok_or_else(|| Error::Config(vec![format!("{key} is required when dataset = idx")]))
            };
            let load = |images: std::path::PathBuf, labels: std::path::PathBuf| -> Result<Dataset> {
                Dataset::from_idx(&read_idx_file(images)?, &read_idx_file(labels)?, cfg.classes)
            };
            (
                load(req(&cfg.train_images, "train_images")?, req(&cfg.train_labels, "train_labels")?)?,
                load(req(&cfg.test_images, "test_images")?, req(&cfg.test_labels, "test_labels")?)?,
            )
        }
    };
    let train = match cfg.train_limit {
        Some(n) => train.head(n)?,
        None => train,
    };
    let test = match cfg.test_limit {
        Some(n) => test.head(n)?,
        None => test,
    };
    Ok((train, test))
}

/// Fraction of samples whose predicted class matches the label.
pub fn accuracy(model: &dyn Model, params: &[f64], data: &Dataset) -> f64 {
    let hits = (0..data.len())
        .into_par_iter()
        .filter(|&i| model.predict(params, data.features(i)) == data.label(i))
        .count();
    hits as f64 / data.len() as f64
}

/// Noise multiplier for the run and how it was obtained.
pub fn resolve_sigma(cfg: &RunConfig, q: f64, total_steps: usize) -> Result<f64> {
    if !cfg.is_private() {
        return Ok(0.0);
    }
    if let Some(s) = cfg.sigma {
        return Ok(s);
    }
    let eps = cfg
        .epsilon
        .ok_or_else(|| Error::Config(vec!["exactly one of sigma or epsilon must be given".into()]))?;
    let steps = total_steps as u64;
    match cfg.sigma_source {
        SigmaSource::ClosedForm => privacy::dpsgd_sigma(eps, cfg.delta, q, steps),
        SigmaSource::Grid => privacy::grid_sigma_for(eps, cfg.delta, q, steps),
        SigmaSource::Preset => privacy::preset_sigma(&cfg.preset_table, eps).ok_or_else(|| {
            Error::Config(vec![format!("no preset sigma for table '{}' at epsilon {eps}", cfg.preset_table)])
        }),
    }
}

fn runtime(e: Error, step: usize) -> Error {
    match e {
        Error::Runtime { .. } => e,
        Error::NonFiniteActivation { .. } => e.at_step(step, "models"),
        other => other.at_step(step, "dp_optim"),
    }
}

/// Runs one experiment: optional importance pretraining, training, one
/// evaluation per epoch. Writes the metrics file when `output` is set.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let (train, test) = load_datasets(cfg)?;
    run_on(cfg, &train, &test)
}

/// [`run_experiment`] on already loaded data.
pub fn run_on(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let n = train.len();
    let b = cfg.batch_size;
    if b > n {
        return Err(Error::Config(vec![format!("batch_size {b} exceeds the {n} training samples")]));
    }
    let steps_per_epoch = n.div_ceil(b);
    let total_steps = cfg.epochs * steps_per_epoch;
    let pretrain = if cfg.optimizer == Optimizer::Adadpigu { cfg.pretrain_steps } else { 0 };
    if pretrain >= total_steps && cfg.optimizer == Optimizer::Adadpigu {
        return Err(Error::Config(vec![format!(
            "pretrain_steps {pretrain} leaves no training steps out of {total_steps}"
        )]));
    }
    let q = b as f64 / n as f64;
    let sigma = resolve_sigma(cfg, q, total_steps)?;
    let model = cfg.model.build(train.feature_len(), train.classes())?;
    let d = model.param_count();

    let root = SeededRng::new(cfg.seed);
    let mut params = model.init_params(&mut root.fork(STREAM_INIT));
    let mut sampler = BatchSampler::new(root.fork(STREAM_SAMPLER), n, b)?;
    let mut noise = root.fork(STREAM_NOISE);
    let mut ledger = if sigma > 0.0 { Some(PrivacyLedger::new(q, sigma, cfg.delta)?) } else { None };
    let plain = ClipState::new(d, cfg.clip_params(sigma))?;
    let schedule = UnfreezeSchedule::new(cfg.schedule, cfg.retention, total_steps - pretrain)?;
    let mut importance = Some(ImportanceState::new(d)?);
    let mut ada: Option<AdaDpigu> = None;

    let header = RunHeader {
        config: cfg.pairs().into_iter().filter(|(k, _)| *k != "output").map(|(k, v)| (k.to_string(), v)).collect(),
        model: model.describe(),
        param_count: d,
        train_samples: n,
        test_samples: test.len(),
        sampling_rate: q,
        sigma,
        steps_per_epoch,
        total_steps,
        pretrain_steps: pretrain,
    };
    info!(
        "{} on {} ({d} params), q = {q:.4}, sigma = {sigma:.4}, {total_steps} steps",
        cfg.optimizer,
        model.describe()
    );

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut t = 0;
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut r_t = 1.0;
        for _ in 0..steps_per_epoch {
            let idx = sampler.sample();
            let src = GradSource::Model { model: model.as_ref(), data: train, indices: &idx };
            let mut step = || -> Result<(StepReport, f64)> {
                Ok(match cfg.optimizer {
                    Optimizer::Sgd => (sgd_step(&mut params, src, cfg.lr)?, 1.0),
                    Optimizer::Dpsgd => (dpsgd_step(&mut params, src, &plain, &mut noise, cfg.lr, ledger.as_mut())?, 1.0),
                    Optimizer::Adadpigu if t < pretrain => {
                        let rep = dpsgd_step(&mut params, src, &plain, &mut noise, cfg.lr, ledger.as_mut())?;
                        let scores = importance.as_mut().expect("scores live until pretraining ends");
                        scores.accumulate(&rep.update)?;
                        if t + 1 == pretrain {
                            let mut scores = importance.take().expect("scores live until pretraining ends");
                            scores.finalize()?;
                            let cs = ClipState::new(d, cfg.clip_params(sigma))?;
                            ada = Some(AdaDpigu::new(scores, schedule, cs, cfg.pruning)?);
                        }
                        (rep, 1.0)
                    }
                    Optimizer::Adadpigu => {
                        let opt = ada.as_mut().expect("optimizer built after pretraining");
                        let local = t - pretrain;
                        let rep = opt.step(&mut params, src, &mut noise, cfg.lr, local, ledger.as_mut())?;
                        (rep, schedule.retention_at(local)?)
                    }
                })
            };
            let (rep, r) = step().map_err(|e| runtime(e, t + 1))?;
            loss_sum += rep.mean_loss;
            r_t = r;
            t += 1;
        }
        let record = MetricsRecord {
            step: t,
            epoch,
            train_loss: loss_sum / steps_per_epoch as f64,
            train_acc: accuracy(model.as_ref(), &params, train),
            test_acc: accuracy(model.as_ref(), &params, test),
            eps_spent: ledger.as_ref().map(PrivacyLedger::epsilon),
            retention_r_t: r_t,
            wall_time: cfg.wall_time.then(|| start.elapsed().as_secs_f64()),
        };
        info!(
            "epoch {epoch}: loss {:.4}, train {:.4}, test {:.4}, eps {:?}",
            record.train_loss, record.train_acc, record.test_acc, record.eps_spent
        );
        records.push(record);
    }

    let last = records.last().expect("epochs >= 1");
    let summary = RunSummary {
        final_test_acc: last.test_acc,
        final_train_acc: last.train_acc,
        eps_spent: last.eps_spent,
        eps_grid: match &ledger {
            Some(l) => {
                let g = l.grid_epsilon()?;
                privacy::accountant_gap(l.epsilon(), g);
                Some(g)
            }
            None => None,
        },
        sigma,
        ledger_steps: ledger.as_ref().map_or(0, PrivacyLedger::steps),
        total_steps,
    };
    let outcome = RunOutcome { header, records, summary };
    if let Some(path) = &cfg.output {
        outcome.write_jsonl(path)?;
    }
    Ok(outcome)
}
