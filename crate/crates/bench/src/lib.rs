//! Criterion benchmarks for the hot paths of a curiosity run: network passes,
//! world-model labeling, replay traffic and the learner step.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{BenchmarkId, Criterion, Throughput};
use curio_core::agent::{Learner, LearnerConfig};
use curio_core::neural::{self, Activation, Batch, MlpParams, MlpSpec};
use curio_core::replay::{FifoReplay, ModelReplay, PolicyReplay, RandomReplay, ReplayConfig};
use curio_core::types::{LabeledTrajectory, Trajectory, Transition};
use curio_core::worldmodel::{WorldModel, WorldModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STATE_DIM: usize = 12;
const ACTION_DIM: usize = 2;

pub fn trajectory(rng: &mut impl Rng, id: u64, len: usize) -> Trajectory {
    let mut v = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    Trajectory {
        id,
        transitions: (0..len)
            .map(|_| Transition {
                s: v(STATE_DIM),
                a: v(ACTION_DIM),
                s_next: v(STATE_DIM),
                terminal: false,
            })
            .collect(),
    }
}

pub fn labeled(rng: &mut impl Rng, id: u64, len: usize) -> LabeledTrajectory {
    let t = trajectory(rng, id, len);
    let r = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
    LabeledTrajectory::new(t, r, id).expect("rewards in range")
}

fn desk_learner(width: usize) -> LearnerConfig {
    LearnerConfig {
        batch_size: 8,
        action_samples: 8,
        policy_hidden: vec![width, width],
        policy_linear: vec![width / 2],
        critic_hidden: vec![width, width],
        critic_linear: vec![width / 2],
        ..LearnerConfig::default()
    }
}

pub fn mlp(c: &mut Criterion) {
    let mut g = c.benchmark_group("mlp");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for width in [32, 256] {
        let spec = MlpSpec::new(STATE_DIM + ACTION_DIM, &[width, width], Activation::Elu, &[], STATE_DIM);
        let params = MlpParams::init(&spec, 1);
        let rows = 256;
        let x: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..spec.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..STATE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let x = Batch::from_rows(&x, spec.input_dim).unwrap();
        let y = Batch::from_rows(&y, STATE_DIM).unwrap();
        g.throughput(Throughput::Elements(rows as u64));
        g.bench_with_input(BenchmarkId::new("forward", width), &width, |b, _| {
            b.iter(|| neural::forward_batch(&params, &spec, black_box(&x)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("loss_and_grad", width), &width, |b, _| {
            b.iter(|| neural::loss_and_grad(&params, &spec, black_box(&x), &y).unwrap())
        });
    }
    g.finish();
}

pub fn world_model(c: &mut Criterion) {
    let mut g = c.benchmark_group("world_model");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for width in [32, 256] {
        let cfg = WorldModelConfig {
            hidden: vec![width, width],
            ..WorldModelConfig::default()
        };
        let batch: Vec<Trajectory> = (0..16).map(|i| trajectory(&mut rng, i, 50)).collect();
        let wm = WorldModel::new(STATE_DIM, ACTION_DIM, &cfg, 3);
        g.throughput(Throughput::Elements(16 * 50));
        g.bench_with_input(BenchmarkId::new("label_and_update", width), &width, |b, _| {
            b.iter_batched(
                || wm.clone(),
                |mut m| m.label_and_update(black_box(&batch)).unwrap(),
                criterion::BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

pub fn replay(c: &mut Criterion) {
    let mut g = c.benchmark_group("replay");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = ReplayConfig::new(2000, 32).unwrap();
    let items: Vec<Trajectory> = (0..4000).map(|i| trajectory(&mut rng, i, 1)).collect();
    g.bench_function("model_push_sample", |b| {
        let mut store: ModelReplay = RandomReplay::new(cfg, 5);
        let mut next = items.iter().cycle();
        b.iter(|| {
            store.push(next.next().unwrap().clone());
            if store.len() >= 16 {
                black_box(store.sample(16).unwrap());
            }
        })
    });
    let labeled_items: Vec<LabeledTrajectory> = (0..4000).map(|i| labeled(&mut rng, i, 1)).collect();
    g.bench_function("policy_push_batch_sample", |b| {
        let mut store: PolicyReplay = FifoReplay::new(cfg, 6);
        let mut next = labeled_items.chunks(16).cycle();
        b.iter(|| {
            store.push_batch(next.next().unwrap().iter().cloned());
            black_box(store.sample(8).unwrap());
        })
    });
    g.finish();
}

pub fn learner(c: &mut Criterion) {
    let mut g = c.benchmark_group("learner");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for width in [32, 64] {
        let batch: Vec<Arc<LabeledTrajectory>> = (0..8).map(|i| Arc::new(labeled(&mut rng, i, 50))).collect();
        let learner = Learner::new(STATE_DIM, ACTION_DIM, desk_learner(width), 8);
        g.bench_with_input(BenchmarkId::new("step", width), &width, |b, _| {
            b.iter_batched(
                || learner.clone(),
                |mut l| l.step(black_box(&batch)).unwrap(),
                criterion::BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    mlp(c);
    world_model(c);
    replay(c);
    learner(c);
}
