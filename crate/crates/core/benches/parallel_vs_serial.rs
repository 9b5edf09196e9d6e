//! Data-parallel kernels against a single worker.
//!
//! Build with `--no-default-features` to bench the purely sequential code
//! path; in default builds `threads/1` pins the rayon pool to one worker.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wxstyle::autodiff::layer::{Layer, Mode};
use wxstyle::autodiff::Tensor;
use wxstyle::data::Taxonomy;
use wxstyle::model::{build_model, ModelConfig};
use wxstyle::par::with_threads;
use wxstyle::style::gram_local;
use wxstyle::vision::{Conv2d, ConvSpec};

fn thread_counts() -> Vec<usize> {
    let n = std::thread::available_parallelism().map_or(1, |n| n.get());
    if n > 1 {
        vec![1, n]
    } else {
        vec![1]
    }
}

fn kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f32>::uniform(&[8, 16, 32, 32], -1.0, 1.0, &mut rng);
    let conv = Conv2d::<f32>::new(ConvSpec::new(16, 32, 3, 1, 1), true, &mut rng).unwrap();
    let mut g = c.benchmark_group("conv3x3_forward");
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::new("threads", t), &t, |b, &t| b.iter(|| with_threads(t, || black_box(conv.infer(&x).unwrap()))));
    }
    g.finish();

    let mut g = c.benchmark_group("local_gram");
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::new("threads", t), &t, |b, &t| b.iter(|| with_threads(t, || black_box(gram_local(&x, 4).unwrap()))));
    }
    g.finish();
}

fn training_step(c: &mut Criterion) {
    let cfg = ModelConfig::pmg_mini(Taxonomy::synthetic());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f32>::uniform(&[8, 3, 64, 64], 0.0, 1.0, &mut rng);
    let mut g = c.benchmark_group("pmg_forward_backward");
    g.sample_size(10);
    for t in thread_counts() {
        let mut model = build_model::<f32>(&cfg).unwrap();
        g.bench_with_input(BenchmarkId::new("threads", t), &t, |b, &t| {
            b.iter(|| {
                with_threads(t, || {
                    let logits = model.forward(&x, Mode::Train).unwrap();
                    let grads: Vec<_> = logits.iter().map(|l| l.as_ref().map(|l| Tensor::full(l.shape(), 1e-3))).collect();
                    black_box(model.backward(&grads, true).unwrap());
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, kernels, training_step);
criterion_main!(benches);
