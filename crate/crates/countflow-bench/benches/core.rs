use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng;
use std::hint::black_box;

use countflow::bridge;
use countflow::coupling::{self, CostMatrix};
use countflow::eval;
use countflow::net::{NetConfig, RateNetwork};
use countflow::rng::stream_rng;
use countflow::sampler::{self, SampleConfig};
use countflow::train::make_training_batch;
use countflow::{CountVector, CouplingKind, EpsilonConfig};

fn random_counts(n: usize, dim: usize, hi: u64, seed: u64) -> Vec<CountVector> {
    let mut rng = stream_rng(seed, 90);
    (0..n)
        .map(|_| CountVector::new((0..dim).map(|_| rng.random_range(0..=hi)).collect()))
        .collect()
}

fn bench_bridge(c: &mut Criterion) {
    let mut rng = stream_rng(1, 0);
    let x0 = CountVector::new(vec![0, 100]);
    let x1 = CountVector::new(vec![60, 5]);
    c.bench_function("bridge/sample_bridge_2d", |b| {
        b.iter(|| bridge::sample_bridge(black_box(&x0), black_box(&x1), 0.37, &mut rng).unwrap())
    });
    c.bench_function("bridge/pmf_row_n50", |b| {
        b.iter(|| {
            let total: f64 = (0..=50).map(|x| bridge::bridge_pmf(0, 50, 0.4, x)).sum();
            black_box(total)
        })
    });
}

fn bench_assignment(c: &mut Criterion) {
    let mut rng = stream_rng(2, 0);
    for &b_size in &[64usize, 128] {
        let cost = CostMatrix::from_fn(b_size, |_, _| rng.random::<f64>() * 50.0);
        c.bench_function(&format!("coupling/solve_assignment_{b_size}"), |b| {
            b.iter(|| coupling::solve_assignment(black_box(&cost)).unwrap())
        });
    }
}

fn bench_training_batch(c: &mut Criterion) {
    let source = random_counts(128, 2, 100, 3);
    let target = random_counts(128, 2, 100, 4);
    let eps = EpsilonConfig::default();
    for kind in [CouplingKind::Independent, CouplingKind::Ot] {
        let label = match kind {
            CouplingKind::Independent => "independent",
            CouplingKind::Ot => "ot",
        };
        c.bench_function(&format!("train/make_batch_128_{label}"), |b| {
            b.iter_batched(
                || stream_rng(5, 0),
                |mut rng| {
                    make_training_batch(&source, &target, None, kind, 0.0, &eps, &mut rng).unwrap()
                },
                BatchSize::SmallInput,
            )
        });
    }
}

fn bench_net(c: &mut Criterion) {
    let config = NetConfig {
        dim: 2,
        hidden_widths: vec![32, 32, 32],
        n_conditions: 0,
        condition_embed_width: 0,
        time_embed_frequencies: 8,
        count_scale: 0.01,
    };
    let net = RateNetwork::new(config, &mut stream_rng(6, 0)).unwrap();
    let x = CountVector::new(vec![60, 22]);
    c.bench_function("net/forward_32x3", |b| {
        b.iter(|| net.forward(black_box(&x), 0.5, None).unwrap())
    });

    let source = random_counts(128, 2, 100, 7);
    let target = random_counts(128, 2, 100, 8);
    let eps = EpsilonConfig::default();
    let mut rng = stream_rng(9, 0);
    let batch = make_training_batch(
        &source,
        &target,
        None,
        CouplingKind::Independent,
        0.0,
        &eps,
        &mut rng,
    )
    .unwrap();
    c.bench_function("net/loss_and_grad_batch128", |b| {
        b.iter(|| net.loss_and_grad(black_box(&batch), eps.eps_l).unwrap())
    });
}

fn bench_sampling(c: &mut Criterion) {
    let config = NetConfig {
        dim: 2,
        hidden_widths: vec![32, 32, 32],
        n_conditions: 0,
        condition_embed_width: 0,
        time_embed_frequencies: 8,
        count_scale: 0.01,
    };
    let net = RateNetwork::new(config, &mut stream_rng(10, 0)).unwrap();
    let x0 = CountVector::new(vec![50, 30]);
    let sample_config = SampleConfig { n_steps: 200, ..Default::default() };
    c.bench_function("sampler/simulate_k200", |b| {
        b.iter_batched(
            || stream_rng(11, 0),
            |mut rng| sampler::simulate(&net, &x0, &sample_config, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_metrics(c: &mut Criterion) {
    let a = random_counts(500, 2, 100, 12);
    let b_set = random_counts(500, 2, 100, 13);
    c.bench_function("eval/w2_exact_500", |b| {
        b.iter(|| eval::w2(black_box(&a), black_box(&b_set)).unwrap())
    });
    let a_small = random_counts(200, 2, 100, 14);
    let b_small = random_counts(200, 2, 100, 15);
    c.bench_function("eval/mmd2_rbf_200", |b| {
        b.iter(|| eval::mmd2_rbf(black_box(&a_small), black_box(&b_small), Some(20.0)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_bridge,
    bench_assignment,
    bench_training_batch,
    bench_net,
    bench_sampling,
    bench_metrics
);
criterion_main!(benches);
