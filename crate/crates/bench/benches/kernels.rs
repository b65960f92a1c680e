use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use dpigu_bench::{digit_like, gaussian_batch};
use dpigu_core::dp_optim::{adadpigu_step, clip_per_sample, dpsgd_step, noisy_aggregate, ClipParams, GradSource, Sparsity};
use dpigu_core::math::{masked_apply, topk_mask};
use dpigu_core::models::per_sample_grads;
use dpigu_core::privacy::grid_epsilon;
use dpigu_core::{Architecture, BinaryMask, ClipState, GradBatch, SeededRng};

const MNIST_CNN_PARAMS: usize = 46_490;

fn vector_kernels(c: &mut Criterion) {
    let batch = gaussian_batch(1, MNIST_CNN_PARAMS, 1);
    let g = batch.rows()[0].clone();
    c.bench_function("clip_per_sample/46k", |b| b.iter(|| clip_per_sample(black_box(&g), 1.0).unwrap()));
    c.bench_function("topk_mask/46k/r=0.6", |b| b.iter(|| topk_mask(black_box(&g), MNIST_CNN_PARAMS * 6 / 10).unwrap()));

    let mask = topk_mask(&g, MNIST_CNN_PARAMS / 2).unwrap();
    let rows = gaussian_batch(64, MNIST_CNN_PARAMS, 2)
        .rows()
        .iter()
        .map(|r| clip_per_sample(&masked_apply(&mask, r).unwrap(), 1.0).unwrap())
        .collect();
    let batch = GradBatch::new(rows).unwrap();
    let cs = ClipState::new(MNIST_CNN_PARAMS, ClipParams { sigma: 1.0, ..ClipParams::default() }).unwrap();
    let mut rng = SeededRng::new(3);
    c.bench_function("noisy_aggregate/64x46k", |b| b.iter(|| noisy_aggregate(black_box(&batch), &mask, &cs, &mut rng).unwrap()));
}

fn training_steps(c: &mut Criterion) {
    let data = digit_like(256, 4);
    let model = Architecture::Mlp { hidden: 128 }.build(784, 10).unwrap();
    let params = model.init_params(&mut SeededRng::new(5));
    let d = params.dim();
    let idx: Vec<usize> = (0..128).collect();
    let src = GradSource::Model { model: model.as_ref(), data: &data, indices: &idx };
    let clip = ClipParams { sigma: 1.0, ..ClipParams::default() };
    let mask = topk_mask(&gaussian_batch(1, d, 6).rows()[0], d * 6 / 10).unwrap();
    let full = BinaryMask::ones(d);

    c.bench_function("per_sample_grads/mlp128/B=128", |b| {
        b.iter(|| per_sample_grads(model.as_ref(), black_box(&params), &data, &idx).unwrap())
    });
    let plain = ClipState::new(d, clip).unwrap();
    c.bench_function("dpsgd_step/mlp128/B=128", |b| {
        let mut rng = SeededRng::new(7);
        b.iter_batched(|| params.clone(), |mut p| dpsgd_step(&mut p, src, &plain, &mut rng, 0.1, None).unwrap(), BatchSize::LargeInput)
    });
    for (name, m) in [("adadpigu_step/mlp128/B=128/r=0.6", &mask), ("adadpigu_step/mlp128/B=128/r=1", &full)] {
        c.bench_function(name, |b| {
            let mut rng = SeededRng::new(8);
            b.iter_batched(
                || (params.clone(), ClipState::new(d, clip).unwrap()),
                |(mut p, mut cs)| adadpigu_step(&mut p, src, Sparsity::Mask(m), &mut cs, &mut rng, 0.1, None).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
}

fn accountant(c: &mut Criterion) {
    c.bench_function("grid_epsilon", |b| b.iter(|| grid_epsilon(black_box(1.1), 1e-5, 0.01, 10_000).unwrap()));
}

criterion_group!(benches, vector_kernels, training_steps, accountant);
criterion_main!(benches);
