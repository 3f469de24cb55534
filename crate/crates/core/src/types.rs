//! Shared domain types: environment description, transitions, trajectory chunks
//! and their curiosity-labeled counterparts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static description of an environment's observation/action spaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Raw observation lower bound per dimension.
    pub obs_low: Vec<f64>,
    /// Raw observation upper bound per dimension.
    pub obs_high: Vec<f64>,
    /// Control steps before time-limit truncation.
    pub episode_length: usize,
    /// Seconds per control step.
    pub control_dt: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::InvalidInput("state and action dims must be positive".into()));
        }
        if self.obs_low.len() != self.state_dim || self.obs_high.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "EnvSpec bounds",
                expected: self.state_dim,
                actual: self.obs_low.len().min(self.obs_high.len()),
            });
        }
        if let Some(i) = (0..self.state_dim).find(|&i| !(self.obs_low[i] < self.obs_high[i])) {
            return Err(Error::InvalidInput(format!("obs_low[{i}] must be below obs_high[{i}]")));
        }
        if self.episode_length == 0 {
            return Err(Error::InvalidInput("episode_length must be >= 1".into()));
        }
        Ok(())
    }
}

/// Affinely maps `[obs_low, obs_high]` onto `[-1, 1]` per dimension and clips.
pub fn normalize(raw_obs: &[f64], spec: &EnvSpec) -> Result<Vec<f64>> {
    if raw_obs.len() != spec.state_dim {
        return Err(Error::DimensionMismatch {
            context: "normalize",
            expected: spec.state_dim,
            actual: raw_obs.len(),
        });
    }
    Ok(raw_obs
        .iter()
        .zip(spec.obs_low.iter().zip(&spec.obs_high))
        .map(|(&x, (&lo, &hi))| (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
        .collect())
}

/// Inverse of [`normalize`] for in-range vectors.
pub fn denormalize(obs: &[f64], spec: &EnvSpec) -> Result<Vec<f64>> {
    if obs.len() != spec.state_dim {
        return Err(Error::DimensionMismatch {
            context: "denormalize",
            expected: spec.state_dim,
            actual: obs.len(),
        });
    }
    Ok(obs
        .iter()
        .zip(spec.obs_low.iter().zip(&spec.obs_high))
        .map(|(&y, (&lo, &hi))| lo + (y + 1.0) * 0.5 * (hi - lo))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    /// True only when `s_next` ended the episode early (not on time-limit truncation).
    pub terminal: bool,
}

impl Transition {
    pub fn in_unit_box(&self) -> bool {
        self.s
            .iter()
            .chain(&self.a)
            .chain(&self.s_next)
            .all(|v| (-1.0..=1.0).contains(v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Checks chaining and the terminal-last rule.
    pub fn is_well_formed(&self) -> bool {
        let chained = self.transitions.windows(2).all(|w| w[0].s_next == w[1].s);
        let n = self.transitions.len();
        let terminal_ok = self
            .transitions
            .iter()
            .enumerate()
            .all(|(k, t)| !t.terminal || k + 1 == n);
        n > 0 && chained && terminal_ok
    }
}

/// A trajectory together with per-transition curiosity rewards and the version of
/// the world model that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTrajectory {
    pub trajectory: Trajectory,
    pub rewards: Vec<f64>,
    pub model_version: u64,
}

impl LabeledTrajectory {
    pub fn new(trajectory: Trajectory, rewards: Vec<f64>, model_version: u64) -> Result<Self> {
        if rewards.len() != trajectory.len() {
            return Err(Error::DimensionMismatch {
                context: "LabeledTrajectory rewards",
                expected: trajectory.len(),
                actual: rewards.len(),
            });
        }
        if let Some(r) = rewards.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::InvalidInput(format!("curiosity reward {r} outside [0, 1)")));
        }
        Ok(Self {
            trajectory,
            rewards,
            model_version,
        })
    }
}

/// Monotone trajectory id source, one per run.
#[derive(Clone, Debug, Default)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(next: u64) -> Self {
        Self { next }
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }
}

/// Splits an episode into consecutive non-overlapping chunks of `chunk_len`
/// transitions. The final chunk keeps the remainder.
pub fn chunk_episode(
    episode: &[Transition],
    chunk_len: usize,
    ids: &mut IdAllocator,
) -> Vec<Trajectory> {
    assert!(chunk_len > 0, "chunk length must be positive");
    episode
        .chunks(chunk_len)
        .map(|c| Trajectory {
            id: ids.next_id(),
            transitions: c.to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(lo: Vec<f64>, hi: Vec<f64>) -> EnvSpec {
        EnvSpec {
            state_dim: lo.len(),
            action_dim: 1,
            obs_low: lo,
            obs_high: hi,
            episode_length: 10,
            control_dt: 0.05,
        }
    }

    fn episode(n: usize) -> Vec<Transition> {
        (0..n)
            .map(|k| Transition {
                s: vec![k as f64 / 1000.0],
                a: vec![0.0],
                s_next: vec![(k + 1) as f64 / 1000.0],
                terminal: false,
            })
            .collect()
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let sp = spec(vec![-2.0, 0.0, 5.0], vec![2.0, 4.0, 7.0]);
        assert_eq!(normalize(&sp.obs_low, &sp).unwrap(), vec![-1.0; 3]);
        let mid: Vec<f64> = sp.obs_low.iter().zip(&sp.obs_high).map(|(a, b)| (a + b) / 2.0).collect();
        assert_eq!(normalize(&mid, &sp).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn normalize_hand_checked_value() {
        let sp = spec(vec![0.0], vec![4.0]);
        // 2 * (3 - 0) / 4 - 1
        assert_eq!(normalize(&[3.0], &sp).unwrap(), vec![0.5]);
    }

    #[test]
    fn normalize_clips_out_of_range() {
        let sp = spec(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert_eq!(normalize(&[-3.0, 9.0], &sp).unwrap(), vec![-1.0, 1.0]);
    }

    #[test]
    fn normalize_rejects_wrong_length() {
        let sp = spec(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert!(matches!(
            normalize(&[0.0], &sp),
            Err(Error::DimensionMismatch { expected: 2, actual: 1, .. })
        ));
    }

    #[test]
    fn chunking_examples() {
        let mut ids = IdAllocator::new();
        let lens = |n| -> Vec<usize> {
            chunk_episode(&episode(n), 50, &mut IdAllocator::new())
                .iter()
                .map(Trajectory::len)
                .collect()
        };
        assert_eq!(lens(200), vec![50; 4]);
        assert_eq!(lens(120), vec![50, 50, 20]);
        assert_eq!(lens(1), vec![1]);
        assert!(chunk_episode(&[], 50, &mut ids).is_empty());
    }

    #[test]
    fn chunk_ids_are_global_and_increasing() {
        let mut ids = IdAllocator::new();
        let a = chunk_episode(&episode(120), 50, &mut ids);
        let b = chunk_episode(&episode(60), 50, &mut ids);
        let all: Vec<u64> = a.iter().chain(&b).map(|t| t.id).collect();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn terminal_must_be_last() {
        let mut ep = episode(3);
        ep[1].terminal = true;
        let t = Trajectory { id: 0, transitions: ep };
        assert!(!t.is_well_formed());
    }

    #[test]
    fn labeled_rejects_reward_one() {
        let t = Trajectory { id: 0, transitions: episode(2) };
        assert!(LabeledTrajectory::new(t.clone(), vec![0.0, 1.0], 0).is_err());
        assert!(LabeledTrajectory::new(t.clone(), vec![0.0], 0).is_err());
        assert!(LabeledTrajectory::new(t, vec![0.0, 0.999], 3).is_ok());
    }

    proptest! {
        #[test]
        fn denormalize_then_normalize_round_trips(
            bounds in prop::collection::vec((-100.0f64..100.0, 0.01f64..50.0), 1..8),
            fracs in prop::collection::vec(-1.0f64..=1.0, 8),
        ) {
            let lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();
            let hi: Vec<f64> = bounds.iter().map(|b| b.0 + b.1).collect();
            let sp = spec(lo, hi);
            let y = &fracs[..sp.state_dim];
            let back = normalize(&denormalize(y, &sp).unwrap(), &sp).unwrap();
            for (a, b) in y.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn chunks_concatenate_to_episode(n in 0usize..400, t in 1usize..80) {
            let ep = episode(n);
            let chunks = chunk_episode(&ep, t, &mut IdAllocator::new());
            let flat: Vec<Transition> = chunks.iter().flat_map(|c| c.transitions.clone()).collect();
            prop_assert_eq!(flat, ep);
            prop_assert!(chunks.iter().all(|c| c.len() >= 1 && c.len() <= t && c.is_well_formed()));
        }
    }
}
