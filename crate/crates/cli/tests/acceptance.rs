//! Acceptance report: one PASS/FAIL/SKIP line per criterion.
//!
//! Criteria listed in `KNOWN_UNATTAINABLE` are run and reported like every
//! other; their failure does not fail the target.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dpigu_core::data::synth_classification;
use dpigu_core::dp_optim::{adadpigu_step, clip_per_sample, sgd_step, ClipParams, GradSource, Sparsity};
use dpigu_core::harness::{
    check_clipped_bound, check_masked_bound, median_by_value, sweep, ClippedBoundConfig, DatasetKind,
    MaskedBoundConfig, Optimizer, RunConfig, SeedPolicy, SigmaSource, SweepAxis,
};
use dpigu_core::math::{energy_retention, topk_mask};
use dpigu_core::models::finite_diff_grad;
use dpigu_core::privacy::{dpsgd_epsilon, dpsgd_sigma, grid_epsilon};
use dpigu_core::{Architecture, BatchSampler, BinaryMask, ClipState, SeededRng};

const KNOWN_UNATTAINABLE: &[&str] = &["1b"];
const NOT_GATING: &[&str] = &["8"];

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Line {
    id: &'static str,
    status: Status,
    detail: String,
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn within(budget: Duration, elapsed: Duration) -> bool {
    elapsed <= budget
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    (rng.uniform_range(lo.ln(), hi.ln())).exp()
}

fn criterion_1() -> Vec<Line> {
    let start = Instant::now();
    let mut rng = SeededRng::new(101);
    let mut worst = 0.0f64;
    let mut grid_above = 0;
    let mut worst_grid_ratio = 0.0f64;
    for _ in 0..1000 {
        let eps = log_uniform(&mut rng, 0.05, 20.0);
        let delta = log_uniform(&mut rng, 1e-10, 1e-2);
        let q = log_uniform(&mut rng, 1e-4, 1.0);
        let steps = log_uniform(&mut rng, 1.0, 1e5).round() as u64;
        let sigma = dpsgd_sigma(eps, delta, q, steps).unwrap();
        let back = dpsgd_epsilon(sigma, delta, q, steps).unwrap();
        let sigma_back = dpsgd_sigma(back, delta, q, steps).unwrap();
        worst = worst.max(((back - eps) / eps).abs()).max(((sigma_back - sigma) / sigma).abs());
        let grid = grid_epsilon(sigma, delta, q, steps).unwrap();
        if grid > back {
            grid_above += 1;
            worst_grid_ratio = worst_grid_ratio.max(grid / back);
        }
    }
    let elapsed = start.elapsed();
    let fast = within(Duration::from_secs(1), elapsed);
    vec![
        Line {
            id: "1a",
            status: verdict(worst <= 1e-12 && fast),
            detail: format!("sigma/epsilon round trip, max relative error {worst:.2e} over 1000 draws, {elapsed:.2?}"),
        },
        Line {
            id: "1b",
            status: verdict(grid_above == 0 && fast),
            detail: format!(
                "grid accountant above closed form in {grid_above}/1000 draws (worst ratio {worst_grid_ratio:.4})"
            ),
        },
    ]
}

fn criterion_2() -> Vec<Line> {
    let start = Instant::now();
    let mut rng = SeededRng::new(202);
    let (mut worst_identity, mut below) = (0.0f64, 0usize);
    let mut checks = 0usize;
    for _ in 0..10_000 {
        let d = 1 + (rng.uniform() * 16.0) as usize;
        let u: Vec<f64> = (0..d.min(16)).map(|_| rng.standard_normal()).collect();
        let d = u.len();
        for k in 1..=d {
            let m = topk_mask(&u, k).unwrap();
            let mu: Vec<f64> = u.iter().enumerate().map(|(i, x)| if m.get(i) { *x } else { 0.0 }).collect();
            let lhs = dot(&u, &mu);
            let rhs = dot(&mu, &mu);
            worst_identity = worst_identity.max((lhs - rhs).abs() / rhs.max(f64::MIN_POSITIVE));
            if energy_retention(&u, &m).unwrap() < k as f64 / d as f64 {
                below += 1;
            }
            checks += 1;
        }
    }
    let elapsed = start.elapsed();
    vec![Line {
        id: "2",
        status: verdict(worst_identity <= f64::EPSILON && below == 0 && within(Duration::from_secs(10), elapsed)),
        detail: format!(
            "{checks} (u, k) pairs, identity max relative gap {worst_identity:.1e}, retention below k/d {below} times, {elapsed:.2?}"
        ),
    }]
}

fn clipped_sum(rows: &[Vec<f64>], clip: f64) -> Vec<f64> {
    let mut sum = vec![0.0; rows[0].len()];
    for r in rows {
        for (s, x) in sum.iter_mut().zip(clip_per_sample(r, clip).unwrap().iter()) {
            *s += x;
        }
    }
    sum
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn criterion_3() -> Vec<Line> {
    let start = Instant::now();
    let mut rng = SeededRng::new(303);
    let (mut worst_add, mut worst_replace) = (0.0f64, 0.0f64);
    let mut cases = 0;
    for _ in 0..1000 {
        let clip = log_uniform(&mut rng, 0.01, 10.0);
        for b in 1..=4usize {
            for d in 1..=8usize {
                let scale = log_uniform(&mut rng, 1e-3, 1e3);
                let row = |rng: &mut SeededRng| (0..d).map(|_| scale * rng.standard_normal()).collect::<Vec<f64>>();
                let batch: Vec<Vec<f64>> = (0..b).map(|_| row(&mut rng)).collect();
                let full = clipped_sum(&batch, clip);
                for drop in 0..b {
                    let mut smaller = batch.clone();
                    smaller.remove(drop);
                    let reduced = if smaller.is_empty() { vec![0.0; d] } else { clipped_sum(&smaller, clip) };
                    worst_add = worst_add.max(l2_diff(&full, &reduced) / clip);
                    let mut replaced = batch.clone();
                    replaced[drop] = row(&mut rng);
                    worst_replace = worst_replace.max(l2_diff(&full, &clipped_sum(&replaced, clip)) / clip);
                    cases += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let slack = 1e-12;
    vec![Line {
        id: "3",
        status: verdict(worst_add <= 1.0 + slack && worst_replace <= 2.0 + slack && within(Duration::from_secs(10), elapsed)),
        detail: format!(
            "{cases} neighbour pairs, max add/remove shift {worst_add:.12}·C, max replacement shift {worst_replace:.12}·C, {elapsed:.2?}"
        ),
    }]
}

fn criterion_4() -> Vec<Line> {
    let start = Instant::now();
    let mut rng = SeededRng::new(404);
    let mut worst_inverse = 0.0f64;
    for _ in 0..10_000 {
        let d = 1 + (rng.uniform() * 32.0) as usize;
        let alpha: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let beta: Vec<f64> = (0..d).map(|_| log_uniform(&mut rng, 1e-8, 1e4)).collect();
        let mu = log_uniform(&mut rng, 1e-8, 1.0);
        let cs = ClipState::with_statistics(alpha, beta, ClipParams { mu, ..ClipParams::default() }).unwrap();
        let g: Vec<f64> = (0..d).map(|_| rng.standard_normal() * 10.0).collect();
        let back = cs.restore(&cs.standardize(&g).unwrap()).unwrap();
        for (a, b) in g.iter().zip(back.iter()) {
            worst_inverse = worst_inverse.max((a - b).abs() / a.abs().max(1.0));
        }
    }

    let data = synth_classification(4, 400, 8, 3, 5.0).unwrap();
    let model = Architecture::Logistic.build(8, 3).unwrap();
    let init = model.init_params(&mut SeededRng::new(5));
    let benign = ClipParams { mu: 1.0, gamma1: 1.0, gamma2: 1.0, alpha0: 0.0, beta0: 0.0, clip: 1e12, sigma: 0.0 };
    let mut cs = ClipState::new(init.dim(), benign).unwrap();
    let full = BinaryMask::ones(init.dim());
    let (mut sgd, mut ada) = (init.clone(), init.clone());
    let mut sampler = BatchSampler::new(SeededRng::new(6), data.len(), 20).unwrap();
    let mut noise = SeededRng::new(7);
    let mut identical = true;
    for _ in 0..100 {
        let idx = sampler.sample();
        let src = GradSource::Model { model: model.as_ref(), data: &data, indices: &idx };
        sgd_step(&mut sgd, src, 0.3).unwrap();
        adadpigu_step(&mut ada, src, Sparsity::Mask(&full), &mut cs, &mut noise, 0.3, None).unwrap();
        identical &= sgd.iter().zip(ada.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    }

    let scores: Vec<f64> = (0..init.dim()).map(|_| rng.uniform()).collect();
    let mask = topk_mask(&scores, init.dim() * 3 / 10).unwrap();
    let mut cs = ClipState::new(init.dim(), ClipParams { sigma: 1.0, ..ClipParams::default() }).unwrap();
    let mut theta = init.clone();
    let mut frozen = true;
    for _ in 0..100 {
        let idx = sampler.sample();
        let src = GradSource::Model { model: model.as_ref(), data: &data, indices: &idx };
        adadpigu_step(&mut theta, src, Sparsity::Mask(&mask), &mut cs, &mut noise, 0.3, None).unwrap();
        frozen &= (0..init.dim()).filter(|&j| !mask.get(j)).all(|j| theta[j].to_bits() == init[j].to_bits());
    }
    let moved = (0..init.dim()).filter(|&j| mask.get(j)).any(|j| theta[j] != init[j]);
    let elapsed = start.elapsed();
    vec![Line {
        id: "4",
        status: verdict(worst_inverse <= 1e-12 && identical && frozen && moved && within(Duration::from_secs(30), elapsed)),
        detail: format!(
            "restore∘standardize max error {worst_inverse:.1e}; SGD reduction bit-identical over 100 steps: {identical}; off-mask frozen: {frozen}; {elapsed:.2?}"
        ),
    }]
}

fn gradient_probes(arch: Architecture, seed: u64) -> f64 {
    let (inputs, classes) = (12, 4);
    let model = arch.build(inputs, classes).unwrap();
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let init = model.init_params(&mut rng);
        let params: Vec<f64> = init.iter().map(|p| p + 0.3 * rng.standard_normal()).collect();
        let x: Vec<f64> = (0..inputs).map(|_| rng.standard_normal()).collect();
        let label = (rng.uniform() * classes as f64) as usize % classes;
        let mut grad = vec![0.0; params.len()];
        model.loss_grad(&params, &x, label, &mut grad);
        let fd = finite_diff_grad(model.as_ref(), &params, &x, label, 1e-5).unwrap();
        for (a, b) in grad.iter().zip(fd.iter()) {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-6));
        }
    }
    worst
}

fn criterion_5() -> Vec<Line> {
    let start = Instant::now();
    let logreg = gradient_probes(Architecture::Logistic, 505);
    let mlp = gradient_probes(Architecture::Mlp { hidden: 16 }, 506);
    let elapsed = start.elapsed();
    vec![Line {
        id: "5",
        status: verdict(logreg <= 1e-4 && mlp <= 1e-4 && within(Duration::from_secs(60), elapsed)),
        detail: format!("max relative error: logistic {logreg:.2e}, mlp {mlp:.2e} (100 probes each, h = 1e-5), {elapsed:.2?}"),
    }]
}

fn criterion_6() -> Vec<Line> {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut min_margin = (f64::INFINITY, f64::INFINITY);
    for clip in [5.0, 10.0, 20.0] {
        for sigma in [0.0, 0.5, 1.0] {
            let r = check_clipped_bound(&ClippedBoundConfig { clip, sigma, ..ClippedBoundConfig::default() }).unwrap();
            min_margin.0 = min_margin.0.min(r.margin());
            if !r.holds {
                failures.push(format!("clipped C={clip} σ={sigma}"));
            }
        }
    }
    for retention in [0.2, 0.5, 1.0] {
        for sigma in [0.0, 1.0, 4.0] {
            let r = check_masked_bound(&MaskedBoundConfig { retention, sigma, ..MaskedBoundConfig::default() }).unwrap();
            min_margin.1 = min_margin.1.min(r.margin());
            if !r.holds {
                failures.push(format!("masked r={retention} σ={sigma}"));
            }
        }
    }
    let elapsed = start.elapsed();
    vec![Line {
        id: "6",
        status: verdict(failures.is_empty() && within(Duration::from_secs(120), elapsed)),
        detail: format!(
            "clipped grid min margin {:.3e}, masked grid min margin {:.3e}, failures {:?}, {elapsed:.2?}",
            min_margin.0, min_margin.1, failures
        ),
    }]
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn idx_config(dir: &Path, train: &str, test: &str) -> Option<RunConfig> {
    let files = [
        dir.join(format!("{train}-images-idx3-ubyte")),
        dir.join(format!("{train}-labels-idx1-ubyte")),
        dir.join(format!("{test}-images-idx3-ubyte")),
        dir.join(format!("{test}-labels-idx1-ubyte")),
    ];
    if !files.iter().all(|f| f.is_file()) {
        return None;
    }
    let [a, b, c, d] = files;
    Some(RunConfig {
        dataset: DatasetKind::Idx,
        train_images: Some(a),
        train_labels: Some(b),
        test_images: Some(c),
        test_labels: Some(d),
        classes: 10,
        ..RunConfig::default()
    })
}

/// Desk-scale MNIST setting shared by both optimizers.
fn desk_config(base: RunConfig) -> RunConfig {
    RunConfig {
        model: Architecture::Mlp { hidden: 32 },
        batch_size: 500,
        epsilon: Some(4.0),
        sigma: None,
        delta: 1e-5,
        sigma_source: SigmaSource::ClosedForm,
        retention: 0.6,
        lr: 2.0,
        clip: 1.0,
        epochs: 20,
        pretrain_steps: 10,
        ..base
    }
}

fn median_acc(rows: &[dpigu_core::harness::SweepRow]) -> f64 {
    let mut accs: Vec<f64> = rows.iter().filter_map(|r| r.final_test_acc).collect();
    accs.sort_by(f64::total_cmp);
    if accs.len() != rows.len() || accs.is_empty() {
        return f64::NAN;
    }
    accs[accs.len() / 2]
}

fn criterion_7() -> Vec<Line> {
    let dir = workspace_root().join("data/mnist-10k");
    let Some(base) = idx_config(&dir, "train", "t10k") else {
        return ["7a", "7b", "7c"]
            .into_iter()
            .map(|id| Line { id, status: Status::Fail, detail: format!("missing {}", dir.display()) })
            .collect();
    };
    let start = Instant::now();
    let cfg = desk_config(base);
    let seeds = [1.0, 2.0, 3.0];
    let ada = sweep(&RunConfig { optimizer: Optimizer::Adadpigu, ..cfg.clone() }, SweepAxis::Seed, &seeds, &[], SeedPolicy::Shared).unwrap();
    let dp = sweep(&RunConfig { optimizer: Optimizer::Dpsgd, ..cfg.clone() }, SweepAxis::Seed, &seeds, &[], SeedPolicy::Shared).unwrap();
    let (ada_med, dp_med) = (median_acc(&ada), median_acc(&dp));
    let sigma = ada[0].sigma.unwrap_or(f64::NAN);
    let accs = |rows: &[dpigu_core::harness::SweepRow]| rows.iter().map(|r| r.final_test_acc.unwrap_or(f64::NAN)).collect::<Vec<_>>();

    let retentions = [0.2, 0.1, 0.05, 0.02, 0.01];
    let sweep_rows = sweep(
        &RunConfig { optimizer: Optimizer::Adadpigu, seed: 1, ..cfg },
        SweepAxis::Retention,
        &retentions,
        &[],
        SeedPolicy::Shared,
    )
    .unwrap();
    let curve: Vec<f64> = median_by_value(&sweep_rows).into_iter().map(|(_, a)| a.unwrap_or(f64::NAN)).collect();
    let monotone = curve.windows(2).all(|w| w[1] <= w[0]);
    let elapsed = start.elapsed();
    let fast = within(Duration::from_secs(30 * 60), elapsed);
    vec![
        Line {
            id: "7a",
            status: verdict(ada_med >= dp_med && fast),
            detail: format!(
                "median test accuracy AdaDPIGU {ada_med:.4} {:?} vs DPSGD {dp_med:.4} {:?} at sigma {sigma:.4}",
                accs(&ada),
                accs(&dp)
            ),
        },
        Line {
            id: "7b",
            status: verdict(ada_med > 0.9 && dp_med > 0.9 && fast),
            detail: format!("both medians above 0.90: AdaDPIGU {ada_med:.4}, DPSGD {dp_med:.4}"),
        },
        Line {
            id: "7c",
            status: verdict(monotone && fast),
            detail: format!("retention {retentions:?} -> test accuracy {curve:.4?}, total {elapsed:.0?}"),
        },
    ]
}

fn criterion_8() -> Vec<Line> {
    let dir = workspace_root().join("data/mnist");
    let Some(base) = idx_config(&dir, "train", "t10k") else {
        return vec![Line {
            id: "8",
            status: Status::Skip,
            detail: format!("full MNIST not found under {}", dir.display()),
        }];
    };
    let cfg = RunConfig {
        model: Architecture::CnnMnist,
        optimizer: Optimizer::Adadpigu,
        batch_size: 256,
        epsilon: Some(4.0),
        sigma: None,
        sigma_source: SigmaSource::Preset,
        retention: 0.6,
        lr: 1.0,
        epochs: 10,
        pretrain_steps: 50,
        ..base
    };
    match dpigu_core::harness::run_experiment(&cfg) {
        Ok(out) => {
            let acc = out.summary.final_test_acc;
            vec![Line { id: "8", status: verdict(acc >= 0.97), detail: format!("full MNIST CNN test accuracy {acc:.4}") }]
        }
        Err(e) => vec![Line { id: "8", status: Status::Fail, detail: format!("run failed: {e}") }],
    }
}

fn run_train(args: &[&str], out: &Path) -> Result<Vec<u8>, String> {
    let mut full = vec!["train"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--output", out.to_str().unwrap()]);
    let status = Command::new(env!("CARGO_BIN_EXE_dpigu")).args(&full).output().map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    std::fs::read(&out).map_err(|e| e.to_string())
}

fn criterion_9() -> Vec<Line> {
    let runs: Vec<Vec<&str>> = vec![
        vec!["--optimizer", "adadpigu", "--sigma", "1.2", "--seed", "9"],
        vec!["--optimizer", "dpsgd", "--epsilon", "3", "--model", "mlp:16", "--seed", "10"],
        vec!["--optimizer", "adadpigu", "--epsilon", "3", "--schedule", "linear", "--retention", "0.3", "--seed", "11"],
    ];
    let mut identical = 0;
    let mut problems = Vec::new();
    for args in &runs {
        let dir = tempfile::TempDir::new().unwrap();
        let out = dir.path().join("metrics.jsonl");
        match (run_train(args, &out), run_train(args, &out)) {
            (Ok(a), Ok(b)) if a == b => identical += 1,
            (Ok(_), Ok(_)) => problems.push(format!("{args:?} differed")),
            (Err(e), _) | (_, Err(e)) => problems.push(format!("{args:?}: {e}")),
        }
    }
    vec![Line {
        id: "9",
        status: verdict(problems.is_empty()),
        detail: format!("{identical}/{} configurations byte-identical across repeated runs {problems:?}", runs.len()),
    }]
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Vec<Line>); 9] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
        ("9", criterion_9),
    ];
    let mut unexpected = 0;
    for (id, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        for line in run() {
            let tag = match line.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            let mut note = "";
            if line.status == Status::Fail {
                if KNOWN_UNATTAINABLE.contains(&line.id) {
                    note = " (known unattainable)";
                } else if NOT_GATING.iter().any(|g| line.id.starts_with(g)) {
                    note = " (not gating)";
                } else {
                    unexpected += 1;
                }
            }
            println!("criterion {:<3} {tag}{note}: {}", line.id, line.detail);
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} criteria failed");
        ExitCode::FAILURE
    }
}
