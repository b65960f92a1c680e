//! One-axis parameter sweeps with a CSV summary.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::{load_datasets, run_on};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Retention,
    Epsilon,
    Batch,
    Seed,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Retention => "retention",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Batch => "batch",
            SweepAxis::Seed => "seed",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "retention" | "r" => Ok(SweepAxis::Retention),
            "epsilon" | "eps" => Ok(SweepAxis::Epsilon),
            "batch" | "batch_size" => Ok(SweepAxis::Batch),
            "seed" => Ok(SweepAxis::Seed),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep axis '{other}' (expected retention, epsilon, batch or seed)"
            ))),
        }
    }
}

/// How seeds are assigned to the runs of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeedPolicy {
    /// Every axis value reuses the same seeds.
    #[default]
    Shared,
    /// Value `i` adds `1000·i` to each seed.
    PerValue,
}

impl FromStr for SeedPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "shared" => Ok(SeedPolicy::Shared),
            "per-value" => Ok(SeedPolicy::PerValue),
            other => Err(Error::InvalidArgument(format!(
                "unknown seed policy '{other}' (expected shared or per-value)"
            ))),
        }
    }
}

/// One run of a sweep; failed runs carry the error text in `status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub sigma: Option<f64>,
    pub final_test_acc: Option<f64>,
    pub final_train_acc: Option<f64>,
    pub eps_spent: Option<f64>,
    pub status: String,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

fn apply_axis(cfg: &mut RunConfig, axis: SweepAxis, value: f64) -> Result<()> {
    let integral = |v: f64| -> Result<u64> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as u64)
        } else {
            Err(Error::Config(vec![format!("{axis} values must be non-negative integers, got {v}")]))
        }
    };
    match axis {
        SweepAxis::Retention => cfg.retention = value,
        SweepAxis::Epsilon => {
            cfg.epsilon = Some(value);
            cfg.sigma = None;
        }
        SweepAxis::Batch => cfg.batch_size = integral(value)? as usize,
        SweepAxis::Seed => cfg.seed = integral(value)?,
    }
    Ok(())
}

/// Runs `base` once per `(value, seed)` pair. Runs execute in parallel;
/// rows come back value-major in input order regardless of scheduling.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64], seeds: &[u64], policy: SeedPolicy) -> Result<Vec<SweepRow>> {
    if values.len() < 2 {
        return Err(Error::Config(vec![format!(
            "a sweep needs at least two {axis} values, got {}",
            values.len()
        )]));
    }
    let seeds: Vec<u64> = if seeds.is_empty() || axis == SweepAxis::Seed { vec![base.seed] } else { seeds.to_vec() };
    let mut jobs = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        for &s in &seeds {
            let mut cfg = base.clone();
            cfg.output = None;
            cfg.seed = match policy {
                SeedPolicy::Shared => s,
                SeedPolicy::PerValue => s.wrapping_add(1000 * i as u64),
            };
            apply_axis(&mut cfg, axis, v)?;
            jobs.push((v, cfg));
        }
    }
    for (_, cfg) in &jobs {
        cfg.validate()?;
    }
    let (train, test) = load_datasets(base)?;
    let rows = jobs
        .par_iter()
        .map(|(v, cfg)| {
            let mut row = SweepRow {
                axis: axis.to_string(),
                value: *v,
                seed: cfg.seed,
                sigma: None,
                final_test_acc: None,
                final_train_acc: None,
                eps_spent: None,
                status: "ok".into(),
            };
            match run_on(cfg, &train, &test) {
                Ok(out) => {
                    row.sigma = Some(out.summary.sigma);
                    row.final_test_acc = Some(out.summary.final_test_acc);
                    row.final_train_acc = Some(out.summary.final_train_acc);
                    row.eps_spent = out.summary.eps_spent;
                }
                Err(e) => {
                    warn!("{axis} = {v}, seed {}: {e}", cfg.seed);
                    row.status = format!("error: {e}");
                }
            }
            row
        })
        .collect();
    Ok(rows)
}

/// Median final test accuracy of the successful runs at each axis value,
/// in first-appearance order.
pub fn median_by_value(rows: &[SweepRow]) -> Vec<(f64, Option<f64>)> {
    let mut values: Vec<f64> = Vec::new();
    for r in rows {
        if !values.contains(&r.value) {
            values.push(r.value);
        }
    }
    values
        .into_iter()
        .map(|v| {
            let mut accs: Vec<f64> = rows.iter().filter(|r| r.value == v).filter_map(|r| r.final_test_acc).collect();
            accs.sort_by(f64::total_cmp);
            let med = match accs.len() {
                0 => None,
                n if n % 2 == 1 => Some(accs[n / 2]),
                n => Some(0.5 * (accs[n / 2 - 1] + accs[n / 2])),
            };
            (v, med)
        })
        .collect()
}

pub fn write_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref().display().to_string(), e))
}

pub fn to_csv_string(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{Optimizer, SigmaSource};

    fn base() -> RunConfig {
        RunConfig {
            optimizer: Optimizer::Adadpigu,
            synth_samples: 300,
            synth_test_samples: 60,
            synth_features: 6,
            synth_classes: 3,
            batch_size: 30,
            epochs: 2,
            pretrain_steps: 3,
            sigma: Some(1.0),
            ..RunConfig::default()
        }
    }

    #[test]
    fn one_row_per_value() {
        let rows = sweep(&base(), SweepAxis::Retention, &[0.2, 0.4, 0.6, 0.8], &[], SeedPolicy::Shared).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(SweepRow::ok));
        assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![0.2, 0.4, 0.6, 0.8]);
    }

    #[test]
    fn epsilon_axis_uses_presets() {
        let cfg = RunConfig { sigma_source: SigmaSource::Preset, sigma: None, epsilon: Some(2.0), ..base() };
        let rows = sweep(&cfg, SweepAxis::Epsilon, &[2.0, 4.0], &[], SeedPolicy::Shared).unwrap();
        assert_eq!(rows[0].sigma, Some(4.64));
        assert_eq!(rows[1].sigma, Some(2.49));
    }

    #[test]
    fn too_few_values_is_a_config_error() {
        assert!(matches!(sweep(&base(), SweepAxis::Retention, &[], &[], SeedPolicy::Shared), Err(Error::Config(_))));
    }

    #[test]
    fn failures_are_marked_and_the_sweep_continues() {
        let rows = sweep(&base(), SweepAxis::Batch, &[30.0, 300.0], &[], SeedPolicy::Shared);
        let rows = rows.unwrap();
        assert!(rows[0].ok());
        assert!(!rows[1].ok() || rows[1].final_test_acc.is_some());
        let bad = RunConfig { pretrain_steps: 25, ..base() };
        let rows = sweep(&bad, SweepAxis::Batch, &[10.0, 150.0], &[], SeedPolicy::Shared).unwrap();
        assert!(rows[0].ok());
        assert!(rows[1].status.starts_with("error"), "{:?}", rows[1]);
    }

    #[test]
    fn summaries_are_order_independent() {
        let a = sweep(&base(), SweepAxis::Seed, &[1.0, 2.0, 3.0], &[], SeedPolicy::Shared).unwrap();
        let b = sweep(&base(), SweepAxis::Seed, &[3.0, 1.0, 2.0], &[], SeedPolicy::Shared).unwrap();
        for row in &a {
            assert!(b.contains(row));
        }
        let csv = to_csv_string(&a).unwrap();
        assert!(csv.starts_with("axis,value,seed,sigma,final_test_acc"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn medians() {
        let mk = |value, acc| SweepRow {
            axis: "seed".into(),
            value,
            seed: 0,
            sigma: None,
            final_test_acc: acc,
            final_train_acc: None,
            eps_spent: None,
            status: "ok".into(),
        };
        let rows = vec![mk(1.0, Some(0.5)), mk(1.0, Some(0.9)), mk(1.0, Some(0.7)), mk(2.0, None)];
        assert_eq!(median_by_value(&rows), vec![(1.0, Some(0.7)), (2.0, None)]);
    }
}
