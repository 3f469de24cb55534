//! Cart-pole balancing on a bounded track. The episode terminates early once
//! the pole leans more than 15 degrees from vertical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, Environment, StepOutcome, TaskRewards};
use crate::error::{Error, Result};
use crate::types::EnvSpec;

pub const GRAVITY: f64 = 9.81;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const POLE_LENGTH: f64 = 1.0;
pub const FORCE_MAG: f64 = 10.0;
pub const TRACK_LIMIT: f64 = 2.4;
pub const ANGLE_LIMIT: f64 = 15.0 * std::f64::consts::PI / 180.0;
pub const DT: f64 = 0.05;
pub const EPISODE_LENGTH: usize = 200;

const TASKS: &[&str] = &["walk_backward", "walk_forward"];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    /// Radians from vertical.
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn observation(&self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn fallen(&self) -> bool {
        self.theta.abs() > ANGLE_LIMIT
    }
}

/// Explicit Euler step of the standard cart-pole equations. `action` in `[-1, 1]`
/// scales the horizontal force. Returns the next state and the early-termination
/// flag evaluated on it.
pub fn step_balancebot(state: &CartPoleState, action: f64, dt: f64) -> (CartPoleState, bool) {
    let total_mass = CART_MASS + POLE_MASS;
    let half_len = POLE_LENGTH / 2.0;
    let pole_ml = POLE_MASS * half_len;
    let force = FORCE_MAG * action;
    let (sin, cos) = state.theta.sin_cos();

    let temp = (force + pole_ml * state.theta_dot * state.theta_dot * sin) / total_mass;
    let theta_acc =
        (GRAVITY * sin - cos * temp) / (half_len * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
    let x_acc = temp - pole_ml * theta_acc * cos / total_mass;

    let mut next = CartPoleState {
        x: state.x + dt * state.x_dot,
        x_dot: state.x_dot + dt * x_acc,
        theta: state.theta + dt * state.theta_dot,
        theta_dot: state.theta_dot + dt * theta_acc,
    };
    if next.x.abs() > TRACK_LIMIT {
        next.x = next.x.clamp(-TRACK_LIMIT, TRACK_LIMIT);
        next.x_dot = 0.0;
    }
    (next, next.fallen())
}

pub fn balancebot_rewards(s: &CartPoleState) -> TaskRewards {
    TaskRewards::from([
        ("walk_backward", (-s.x_dot).clamp(0.0, 1.0)),
        ("walk_forward", s.x_dot.clamp(0.0, 1.0)),
    ])
}

#[derive(Clone, Debug)]
pub struct BalanceBot {
    spec: EnvSpec,
    state: CartPoleState,
    t: usize,
    done: bool,
}

impl Default for BalanceBot {
    fn default() -> Self {
        Self::new()
    }
}

impl BalanceBot {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                state_dim: 4,
                action_dim: 1,
                obs_low: vec![-TRACK_LIMIT, -3.0, -0.3, -3.0],
                obs_high: vec![TRACK_LIMIT, 3.0, 0.3, 3.0],
                episode_length: EPISODE_LENGTH,
                control_dt: DT,
            },
            state: CartPoleState::default(),
            t: 0,
            done: true,
        }
    }

    pub fn state(&self) -> &CartPoleState {
        &self.state
    }
}

impl Environment for BalanceBot {
    fn name(&self) -> &'static str {
        "balancebot"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = || rng.gen_range(-0.05..0.05);
        self.state = CartPoleState {
            x: u(),
            x_dot: u(),
            theta: u(),
            theta_dot: u(),
        };
        self.t = 0;
        self.done = false;
        self.state.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let a = check_action(action, 1)?;
        let (next, terminal) = step_balancebot(&self.state, a[0], DT);
        self.state = next;
        self.t += 1;
        let truncated = !terminal && self.t >= self.spec.episode_length;
        self.done = terminal || truncated;
        Ok(StepOutcome {
            observation: next.observation(),
            terminal,
            truncated,
        })
    }

    fn eval_rewards(&self) -> TaskRewards {
        balancebot_rewards(&self.state)
    }

    fn task_names(&self) -> &'static [&'static str] {
        TASKS
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
