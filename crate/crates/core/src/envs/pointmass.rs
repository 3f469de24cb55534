//! A disk-shaped agent in the unit box `[-1, 1]^2` that can push two round
//! objects (red and blue) around.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, Environment, StepOutcome, TaskRewards};
use crate::error::{Error, Result};
use crate::types::EnvSpec;

pub const AGENT_RADIUS: f64 = 0.04;
pub const OBJECT_RADIUS: f64 = 0.1;
pub const AGENT_MASS: f64 = 1.0;
pub const OBJECT_MASS: f64 = 1.0;
/// Acceleration for a unit action component.
pub const MAX_ACCEL: f64 = 4.0;
/// Fraction of agent velocity lost per step.
pub const AGENT_FRICTION: f64 = 0.1;
/// Fraction of object velocity lost per step.
pub const OBJECT_FRICTION: f64 = 0.05;
pub const MAX_SPEED: f64 = 2.0;
pub const DT: f64 = 0.05;
pub const EPISODE_LENGTH: usize = 200;

pub const REACH_DISTANCE: f64 = 0.15;
pub const MOVE_SPEED: f64 = 0.05;
/// Lower-left corner of the `0.3 x 0.3` target region in the upper-right corner.
pub const CORNER_MIN: f64 = 0.7;

const TASKS: &[&str] = &[
    "carry_red_to_corner",
    "move_blue",
    "move_red",
    "reach_blue",
    "reach_red",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Body {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub radius: f64,
    pub mass: f64,
}

impl Body {
    fn at(pos: [f64; 2], radius: f64, mass: f64) -> Self {
        Self {
            pos,
            vel: [0.0; 2],
            radius,
            mass,
        }
    }

    pub fn speed(&self) -> f64 {
        self.vel[0].hypot(self.vel[1])
    }

    fn clip_to_box(&mut self) {
        let lim = 1.0 - self.radius;
        for d in 0..2 {
            if self.pos[d] > lim {
                self.pos[d] = lim;
                self.vel[d] = self.vel[d].min(0.0);
            } else if self.pos[d] < -lim {
                self.pos[d] = -lim;
                self.vel[d] = self.vel[d].max(0.0);
            }
            self.vel[d] = self.vel[d].clamp(-MAX_SPEED, MAX_SPEED);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMassState {
    pub agent: Body,
    pub red: Body,
    pub blue: Body,
}

impl PointMassState {
    /// `[agent, red, blue]`, each as `x, y, vx, vy`.
    pub fn observation(&self) -> Vec<f64> {
        [self.agent, self.red, self.blue]
            .iter()
            .flat_map(|b| [b.pos[0], b.pos[1], b.vel[0], b.vel[1]])
            .collect()
    }
}

/// Perfectly inelastic exchange along the contact normal for overlapping,
/// approaching disks, followed by a positional separation. Returns whether the
/// bodies were in contact.
pub fn resolve_contact(a: &mut Body, b: &mut Body) -> bool {
    let dx = b.pos[0] - a.pos[0];
    let dy = b.pos[1] - a.pos[1];
    let dist = dx.hypot(dy);
    let min_dist = a.radius + b.radius;
    if dist >= min_dist {
        return false;
    }
    let n = if dist > 1e-12 { [dx / dist, dy / dist] } else { [1.0, 0.0] };
    let va = a.vel[0] * n[0] + a.vel[1] * n[1];
    let vb = b.vel[0] * n[0] + b.vel[1] * n[1];
    if va > vb {
        let common = (a.mass * va + b.mass * vb) / (a.mass + b.mass);
        for d in 0..2 {
            a.vel[d] += (common - va) * n[d];
            b.vel[d] += (common - vb) * n[d];
        }
    }
    // split the overlap by inverse mass
    let overlap = min_dist - dist;
    let wa = b.mass / (a.mass + b.mass);
    let wb = a.mass / (a.mass + b.mass);
    for d in 0..2 {
        a.pos[d] -= overlap * wa * n[d];
        b.pos[d] += overlap * wb * n[d];
    }
    true
}

/// One semi-implicit Euler step: velocities first (acceleration and friction),
/// then positions, then contacts and walls.
pub fn step_pointmass(state: &PointMassState, action: &[f64], dt: f64) -> PointMassState {
    let mut s = *state;
    for d in 0..2 {
        s.agent.vel[d] = (1.0 - AGENT_FRICTION) * s.agent.vel[d] + MAX_ACCEL * action[d] * dt;
        s.red.vel[d] *= 1.0 - OBJECT_FRICTION;
        s.blue.vel[d] *= 1.0 - OBJECT_FRICTION;
    }
    for body in [&mut s.agent, &mut s.red, &mut s.blue] {
        for d in 0..2 {
            body.pos[d] += body.vel[d] * dt;
        }
    }
    resolve_contact(&mut s.agent, &mut s.red);
    resolve_contact(&mut s.agent, &mut s.blue);
    resolve_contact(&mut s.red, &mut s.blue);
    for body in [&mut s.agent, &mut s.red, &mut s.blue] {
        body.clip_to_box();
    }
    s
}

pub fn pointmass_rewards(s: &PointMassState) -> TaskRewards {
    let near = |o: &Body| {
        let d = (o.pos[0] - s.agent.pos[0]).hypot(o.pos[1] - s.agent.pos[1]);
        f64::from(u8::from(d < REACH_DISTANCE))
    };
    let moving = |o: &Body| f64::from(u8::from(o.speed() > MOVE_SPEED));
    let in_corner = s.red.pos[0] >= CORNER_MIN && s.red.pos[1] >= CORNER_MIN;
    TaskRewards::from([
        ("carry_red_to_corner", f64::from(u8::from(in_corner))),
        ("move_blue", moving(&s.blue)),
        ("move_red", moving(&s.red)),
        ("reach_blue", near(&s.blue)),
        ("reach_red", near(&s.red)),
    ])
}

#[derive(Clone, Debug)]
pub struct PointMassFetch {
    spec: EnvSpec,
    state: PointMassState,
    t: usize,
    done: bool,
}

impl Default for PointMassFetch {
    fn default() -> Self {
        Self::new()
    }
}

impl PointMassFetch {
    pub fn new() -> Self {
        let pos_v = |p: f64, v: f64| [-p, -p, -v, -v];
        let low: Vec<f64> = (0..3).flat_map(|_| pos_v(1.0, MAX_SPEED)).collect();
        let high: Vec<f64> = low.iter().map(|v| -v).collect();
        Self {
            spec: EnvSpec {
                state_dim: 12,
                action_dim: 2,
                obs_low: low,
                obs_high: high,
                episode_length: EPISODE_LENGTH,
                control_dt: DT,
            },
            state: Self::initial_state(&mut ChaCha8Rng::seed_from_u64(0)),
            t: 0,
            done: true,
        }
    }

    fn initial_state(rng: &mut ChaCha8Rng) -> PointMassState {
        let mut jitter = |x: f64, y: f64| [x + rng.gen_range(-0.05..0.05), y + rng.gen_range(-0.05..0.05)];
        PointMassState {
            agent: Body::at(jitter(0.0, -0.5), AGENT_RADIUS, AGENT_MASS),
            red: Body::at(jitter(0.35, 0.35), OBJECT_RADIUS, OBJECT_MASS),
            blue: Body::at(jitter(-0.35, 0.35), OBJECT_RADIUS, OBJECT_MASS),
        }
    }

    pub fn state(&self) -> &PointMassState {
        &self.state
    }

    pub fn set_state(&mut self, state: PointMassState) {
        self.state = state;
        self.t = 0;
        self.done = false;
    }
}

impl Environment for PointMassFetch {
    fn name(&self) -> &'static str {
        "pointmass"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.state = Self::initial_state(&mut ChaCha8Rng::seed_from_u64(seed));
        self.t = 0;
        self.done = false;
        self.state.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let a = check_action(action, 2)?;
        self.state = step_pointmass(&self.state, &a, DT);
        self.t += 1;
        let truncated = self.t >= self.spec.episode_length;
        self.done = truncated;
        Ok(StepOutcome {
            observation: self.state.observation(),
            terminal: false,
            truncated,
        })
    }

    fn eval_rewards(&self) -> TaskRewards {
        pointmass_rewards(&self.state)
    }

    fn task_names(&self) -> &'static [&'static str] {
        TASKS
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rest_state() -> PointMassState {
        PointMassState {
            agent: Body::at([0.0, -0.5], AGENT_RADIUS, AGENT_MASS),
            red: Body::at([0.35, 0.35], OBJECT_RADIUS, OBJECT_MASS),
            blue: Body::at([-0.35, 0.35], OBJECT_RADIUS, OBJECT_MASS),
        }
    }

    #[test]
    fn zero_action_at_rest_is_equilibrium() {
        let s = rest_state();
        assert_eq!(step_pointmass(&s, &[0.0, 0.0], DT), s);
    }

    #[test]
    fn constant_push_increases_x_until_wall() {
        let mut s = rest_state();
        s.agent.pos = [0.0, -0.9];
        let mut xs = vec![s.agent.pos[0]];
        for _ in 0..100 {
            s = step_pointmass(&s, &[1.0, 0.0], DT);
            xs.push(s.agent.pos[0]);
        }
        assert!(xs.windows(2).all(|w| w[1] >= w[0]));
        assert!(xs[1] > xs[0]);
        assert_eq!(*xs.last().unwrap(), 1.0 - AGENT_RADIUS);
    }

    #[test]
    fn head_on_contact_transfers_momentum_along_normal() {
        let mut a = Body::at([0.0, 0.0], AGENT_RADIUS, AGENT_MASS);
        let mut o = Body::at([0.13, 0.0], OBJECT_RADIUS, OBJECT_MASS);
        a.vel = [1.5, 0.0];
        let p_before = a.mass * a.vel[0] + o.mass * o.vel[0];
        assert!(resolve_contact(&mut a, &mut o));
        let p_after = a.mass * a.vel[0] + o.mass * o.vel[0];
        assert!((p_before - p_after).abs() < 1e-12);
        assert!(o.vel[0] > 0.0 && o.vel[1] == 0.0);
        assert!((o.pos[0] - a.pos[0] - (AGENT_RADIUS + OBJECT_RADIUS)).abs() < 1e-12);
        assert_eq!(o.pos[1], 0.0);
    }

    #[test]
    fn scripted_push_moves_object_along_normal() {
        // agent driven along +x straight at the red object's centre
        let mut s = rest_state();
        s.agent.pos = [-0.3, 0.35];
        s.blue.pos = [-0.8, -0.8];
        let mut touched = false;
        for _ in 0..40 {
            let before = s;
            // momentum after the friction/acceleration stage, before contact
            let mut pre = before;
            for d in 0..2 {
                pre.agent.vel[d] = (1.0 - AGENT_FRICTION) * pre.agent.vel[d] + MAX_ACCEL * [1.0, 0.0][d] * DT;
                pre.red.vel[d] *= 1.0 - OBJECT_FRICTION;
            }
            s = step_pointmass(&s, &[1.0, 0.0], DT);
            if s.red.vel[0] > 0.0 && !touched {
                touched = true;
                let p_pre = pre.agent.mass * pre.agent.vel[0] + pre.red.mass * pre.red.vel[0];
                let p_post = s.agent.mass * s.agent.vel[0] + s.red.mass * s.red.vel[0];
                assert!((p_pre - p_post).abs() < 1e-12, "{p_pre} vs {p_post}");
            }
        }
        assert!(touched);
        assert!(s.red.pos[0] > 0.4);
        assert!((s.red.pos[1] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn bodies_stay_inside_box() {
        let mut env = PointMassFetch::new();
        env.reset(0);
        let mut s = *env.state();
        for k in 0..500 {
            let a = [(k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()];
            s = step_pointmass(&s, &a, DT);
            for b in [s.agent, s.red, s.blue] {
                assert!(b.pos.iter().all(|p| p.abs() <= 1.0 - b.radius + 1e-12));
                assert!(b.vel.iter().all(|v| v.abs() <= MAX_SPEED));
            }
        }
    }

    #[test]
    fn task_reward_definitions() {
        let mut s = rest_state();
        let r = pointmass_rewards(&s);
        assert_eq!(r["move_red"], 0.0);
        assert_eq!(r["move_blue"], 0.0);
        assert_eq!(r["reach_red"], 0.0);
        assert_eq!(r["carry_red_to_corner"], 0.0);
        s.agent.pos = s.red.pos;
        assert_eq!(pointmass_rewards(&s)["reach_red"], 1.0);
        s.red.vel = [0.06, 0.0];
        assert_eq!(pointmass_rewards(&s)["move_red"], 1.0);
        s.red.pos = [0.85, 0.75];
        assert_eq!(pointmass_rewards(&s)["carry_red_to_corner"], 1.0);
    }
}
