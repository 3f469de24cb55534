use std::collections::HashMap;

use curio_core::agent::{e_step_weights, gaussian_kl};
use curio_core::replay::{FifoReplay, ModelReplay, PolicyReplay, RandomReplay, ReplayConfig};
use curio_core::types::{LabeledTrajectory, Trajectory, Transition};
use curio_core::worldmodel::{squash_error, WorldModel, WorldModelConfig};
use proptest::prelude::*;

fn traj(id: u64) -> Trajectory {
    Trajectory {
        id,
        transitions: vec![Transition {
            s: vec![0.0],
            a: vec![0.0],
            s_next: vec![0.0],
            terminal: false,
        }],
    }
}

#[derive(Clone, Debug)]
enum Op {
    Push(usize),
    Sample(usize),
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    proptest::collection::vec(
        prop_oneof![(1usize..6).prop_map(Op::Push), (1usize..6).prop_map(Op::Sample)],
        1..300,
    )
}

proptest! {
    #[test]
    fn e_step_weights_ignore_constant_shift(
        q in proptest::collection::vec(-50.0f64..50.0, 1..12),
        shift in -1e3f64..1e3,
        temp in 0.05f64..5.0,
    ) {
        let a = e_step_weights(&q, temp);
        let shifted: Vec<f64> = q.iter().map(|v| v + shift).collect();
        let b = e_step_weights(&shifted, temp);
        let total: f64 = a.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_kl_is_non_negative(
        m in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -2.0f64..1.0, -2.0f64..1.0), 1..4),
    ) {
        let (mp, mq): (Vec<f64>, Vec<f64>) = m.iter().map(|t| (t.0, t.1)).unzip();
        let (lp, lq): (Vec<f64>, Vec<f64>) = m.iter().map(|t| (t.2, t.3)).unzip();
        prop_assert!(gaussian_kl(&mp, &lp, &mq, &lq) >= -1e-12);
        prop_assert!(gaussian_kl(&mp, &lp, &mp, &lp).abs() < 1e-12);
    }

    #[test]
    fn squashed_error_stays_in_unit_interval(mse in 0.0f64..1e6, scale in 1e-3f64..1e3) {
        let r = squash_error(mse, scale);
        prop_assert!((0.0..1.0).contains(&r));
    }

    #[test]
    fn curiosity_reward_bounded_for_any_transition(
        seed in 0u64..1000,
        gain in 0.1f64..30.0,
        s in proptest::collection::vec(-1.0f64..1.0, 4),
        a in proptest::collection::vec(-1.0f64..1.0, 2),
        s_next in proptest::collection::vec(-1.0f64..1.0, 4),
    ) {
        let mut wm = WorldModel::new(4, 2, &WorldModelConfig { hidden: vec![8], ..Default::default() }, seed);
        wm.params_mut().scale(gain);
        let t = Transition { s: s.clone(), a: a.clone(), s_next, terminal: false };
        let r = wm.curiosity_reward(&t).unwrap();
        prop_assert!((0.0..1.0).contains(&r));
        let perfect = Transition { s_next: wm.predict(&s, &a).unwrap(), s, a, terminal: false };
        prop_assert_eq!(wm.curiosity_reward(&perfect).unwrap(), 0.0);
    }

    #[test]
    fn model_replay_invariants(cap in 1usize..20, seed in 0u64..1000, script in ops()) {
        let cfg = ReplayConfig::new(cap, 3).unwrap();
        let mut store: ModelReplay = RandomReplay::new(cfg, seed);
        let mut next = 0u64;
        let mut counts: HashMap<u64, u32> = HashMap::new();
        for op in script {
            match op {
                Op::Push(n) => for _ in 0..n {
                    store.push(traj(next));
                    next += 1;
                },
                Op::Sample(k) => if let Ok(batch) = store.sample(k) {
                    prop_assert_eq!(batch.len(), k);
                    let mut ids: Vec<u64> = batch.iter().map(|t| t.id).collect();
                    ids.sort_unstable();
                    ids.dedup();
                    prop_assert_eq!(ids.len(), k, "no duplicates within a batch");
                    for id in ids {
                        *counts.entry(id).or_default() += 1;
                    }
                } else {
                    prop_assert!(store.len() < k);
                },
            }
            prop_assert!(store.len() <= cap);
            prop_assert!(counts.values().all(|&c| c <= 3));
            prop_assert!(store.iter().all(|(_, c)| c < 3));
        }
    }

    #[test]
    fn policy_replay_evicts_oldest_first(cap in 1usize..20, seed in 0u64..1000, script in ops()) {
        let cfg = ReplayConfig::new(cap, 3).unwrap();
        let mut store: PolicyReplay = FifoReplay::new(cfg, seed);
        let mut next = 0u64;
        let mut last_evicted = None;
        for op in script {
            match op {
                Op::Push(n) => {
                    let items: Vec<LabeledTrajectory> = (next..next + n as u64)
                        .map(|id| LabeledTrajectory::new(traj(id), vec![0.0], id).unwrap())
                        .collect();
                    next += n as u64;
                    let evicted = store.push_batch(items);
                    let oldest = store.iter().next().map(|(t, _)| t.trajectory.id);
                    for e in evicted {
                        prop_assert!(last_evicted.map_or(true, |l| e > l));
                        prop_assert!(oldest.map_or(true, |o| e < o));
                        last_evicted = Some(e);
                    }
                }
                Op::Sample(k) => { let _ = store.sample(k); }
            }
            prop_assert!(store.len() <= cap);
            let ids: Vec<u64> = store.iter().map(|(t, _)| t.trajectory.id).collect();
            prop_assert!(ids.windows(2).all(|w| w[0] < w[1]), "resident items stay in arrival order");
        }
    }
}
