//! Hot-path benchmarks: surrogate fitting/prediction, acquisition scoring,
//! Latin hypercube sampling, and prioritized replay.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use metatune::acquisition::{lhs_sample, top_m_candidates};
use metatune::gp::{fit, ObservationDataset};
use metatune::replay::PrioritizedReplay;
use metatune::rng::substream;
use metatune::space::{HyperparamDim, HyperparamSpace, Scale};
use metatune::Transition;
use rand::Rng;

fn unit_space(d: usize) -> HyperparamSpace {
    let dims = (0..d)
        .map(|i| HyperparamDim::new(format!("x{i}"), 0.0, 1.0, Scale::Linear).unwrap())
        .collect();
    HyperparamSpace::new(dims).unwrap()
}

fn random_dataset(n: usize, d: usize) -> ObservationDataset {
    let mut rng = substream(7, "bench/gp");
    let mut ds = ObservationDataset::new();
    for _ in 0..n {
        let p: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        ds.push(p, rng.random::<f64>() * 2.0 - 1.0).unwrap();
    }
    ds
}

fn bench_gp(c: &mut Criterion) {
    let ds = random_dataset(20, 5);
    c.bench_function("gp_fit_20x5", |b| b.iter(|| fit(black_box(&ds), 5).unwrap()));
    let model = fit(&ds, 5).unwrap();
    let x = [0.3, 0.7, 0.1, 0.9, 0.5];
    c.bench_function("gp_predict", |b| b.iter(|| model.predict(black_box(&x)).unwrap()));
}

fn bench_acquisition(c: &mut Criterion) {
    let space = unit_space(5);
    let ds = random_dataset(20, 5);
    let model = fit(&ds, 5).unwrap();
    let batch = lhs_sample(&space, 500, &mut substream(9, "bench/batch")).unwrap();
    c.bench_function("top_m_500_candidates", |b| {
        b.iter(|| top_m_candidates(&model, &space, black_box(&batch), 0.5, 10).unwrap())
    });
    c.bench_function("lhs_sample_500x5", |b| {
        let mut rng = substream(11, "bench/lhs");
        b.iter(|| lhs_sample(&space, 500, &mut rng).unwrap())
    });
}

fn bench_replay(c: &mut Criterion) {
    let mut buffer = PrioritizedReplay::new(10_000, 0.6).unwrap();
    for i in 0..10_000usize {
        buffer.push(Transition {
            state: i % 100,
            action: i % 4,
            reward: (i % 7) as f64,
            next_state: (i + 1) % 100,
            done: i % 50 == 0,
        });
    }
    c.bench_function("replay_sample_32", |b| {
        let mut rng = substream(13, "bench/per");
        b.iter(|| buffer.sample(32, 0.7, &mut rng).unwrap())
    });
    c.bench_function("replay_push", |b| {
        b.iter(|| {
            buffer.push(black_box(Transition {
                state: 1,
                action: 0,
                reward: 0.5,
                next_state: 2,
                done: false,
            }))
        })
    });
}

criterion_group!(benches, bench_gp, bench_acquisition, bench_replay);
criterion_main!(benches);
