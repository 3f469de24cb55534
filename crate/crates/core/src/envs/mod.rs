//! Small continuous-control environments.
//!
//! Observations are raw physical quantities; callers normalize them with
//! [`crate::types::normalize`] using the environment's [`EnvSpec`]. Episodes end
//! either by early termination (`terminal`) or by time-limit truncation.

mod balancebot;
mod pointmass;

pub use balancebot::{step_balancebot, BalanceBot, CartPoleState};
pub use pointmass::{resolve_contact, step_pointmass, Body, PointMassFetch, PointMassState};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::EnvSpec;

/// Named task rewards evaluated on the current environment state.
pub type TaskRewards = BTreeMap<&'static str, f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    /// Early termination; blocks bootstrapping.
    pub terminal: bool,
    /// Time limit reached.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment: Send {
    fn name(&self) -> &'static str;

    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode and returns the raw observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances one control step. Actions are clipped to `[-1, 1]`.
    /// Fails once the episode has ended.
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;

    /// Task rewards for the current state.
    fn eval_rewards(&self) -> TaskRewards;

    fn task_names(&self) -> &'static [&'static str];

    fn boxed_clone(&self) -> Box<dyn Environment>;
}

pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "pointmass" | "point_mass_fetch" => Ok(Box::new(PointMassFetch::new())),
        "balancebot" | "balance_bot" => Ok(Box::new(BalanceBot::new())),
        other => Err(Error::Config(format!(
            "unknown environment {other:?} (expected pointmass or balancebot)"
        ))),
    }
}

pub(crate) fn check_action(action: &[f64], dim: usize) -> Result<Vec<f64>> {
    if action.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "environment action",
            expected: dim,
            actual: action.len(),
        });
    }
    Ok(action.iter().map(|a| a.clamp(-1.0, 1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::normalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rollout(env: &mut dyn Environment, seed: u64) -> Vec<(Vec<f64>, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![(env.reset(seed), false)];
        loop {
            let a: Vec<f64> = (0..env.spec().action_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let o = env.step(&a).unwrap();
            out.push((o.observation.clone(), o.terminal));
            if o.done() {
                return out;
            }
        }
    }

    #[test]
    fn factory_names() {
        assert_eq!(make_env("pointmass").unwrap().name(), "pointmass");
        assert_eq!(make_env("balancebot").unwrap().name(), "balancebot");
        assert!(make_env("jaco").is_err());
    }

    #[test]
    fn rollouts_are_bit_deterministic() {
        for name in ["pointmass", "balancebot"] {
            let mut a = make_env(name).unwrap();
            let mut b = make_env(name).unwrap();
            assert_eq!(rollout(a.as_mut(), 3), rollout(b.as_mut(), 3));
        }
    }

    #[test]
    fn step_after_done_is_rejected() {
        for name in ["pointmass", "balancebot"] {
            let mut env = make_env(name).unwrap();
            rollout(env.as_mut(), 1);
            let a = vec![0.0; env.spec().action_dim];
            assert!(matches!(env.step(&a), Err(Error::EpisodeFinished)));
        }
    }

    #[test]
    fn pointmass_truncates_at_episode_length() {
        let mut env = make_env("pointmass").unwrap();
        let steps = rollout(env.as_mut(), 2).len() - 1;
        assert_eq!(steps, env.spec().episode_length);
    }

    #[test]
    fn normalized_observations_stay_in_box() {
        for name in ["pointmass", "balancebot"] {
            let mut env = make_env(name).unwrap();
            let spec = env.spec().clone();
            spec.validate().unwrap();
            for seed in 0..20 {
                for (obs, _) in rollout(env.as_mut(), seed) {
                    let n = normalize(&obs, &spec).unwrap();
                    assert!(n.iter().all(|v| (-1.0..=1.0).contains(v)));
                }
            }
        }
    }
}
