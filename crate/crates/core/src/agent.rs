//! Off-policy actor-critic learner.
//!
//! The critic regresses 1-step TD targets. The policy update follows an
//! expectation-maximization scheme with fixed constants: actions sampled from the
//! target policy are weighted by a softmax over their Q-values (E-step), and the
//! policy takes one gradient step on the weighted log-likelihood plus a KL
//! penalty towards the target policy (M-step).

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{
    self, Activation, AdamState, Batch, Bundle, InputActivation, MlpParams, MlpSpec,
};
use crate::types::{LabeledTrajectory, Transition};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub lr: f64,
    pub discount: f64,
    pub target_update_period: u64,
    pub action_samples: usize,
    pub e_step_temperature: f64,
    pub kl_penalty: f64,
    /// Trajectories per policy-replay batch.
    pub batch_size: usize,
    pub init_log_std: f64,
    pub policy_hidden: Vec<usize>,
    pub policy_linear: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub critic_linear: Vec<usize>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            discount: 0.99,
            target_update_period: 100,
            action_samples: 20,
            e_step_temperature: 0.5,
            kl_penalty: 0.1,
            batch_size: 64,
            init_log_std: -0.5,
            policy_hidden: vec![256, 256],
            policy_linear: vec![128],
            critic_hidden: vec![512, 512],
            critic_linear: vec![256],
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("learner: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount must lie in (0, 1)");
        }
        if self.target_update_period == 0 || self.action_samples == 0 || self.batch_size == 0 {
            return bad("target_update_period, action_samples and batch_size must be >= 1");
        }
        if !(self.e_step_temperature > 0.0) || !(self.kl_penalty >= 0.0) {
            return bad("temperature must be positive and kl_penalty non-negative");
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.init_log_std) {
            return bad("init_log_std outside [-5, 1]");
        }
        let widths = [
            &self.policy_hidden,
            &self.policy_linear,
            &self.critic_hidden,
            &self.critic_linear,
        ];
        if widths.iter().any(|w| w.contains(&0)) {
            return bad("layer widths must be positive");
        }
        Ok(())
    }
}

/// Anything that pairs transitions with one scalar reward each.
pub trait RewardedTrajectory {
    fn transitions(&self) -> &[Transition];
    fn rewards(&self) -> &[f64];
}

impl RewardedTrajectory for LabeledTrajectory {
    fn transitions(&self) -> &[Transition] {
        &self.trajectory.transitions
    }

    fn rewards(&self) -> &[f64] {
        &self.rewards
    }
}

impl<T: RewardedTrajectory> RewardedTrajectory for Arc<T> {
    fn transitions(&self) -> &[Transition] {
        self.as_ref().transitions()
    }

    fn rewards(&self) -> &[f64] {
        self.as_ref().rewards()
    }
}

impl<T: RewardedTrajectory> RewardedTrajectory for &T {
    fn transitions(&self) -> &[Transition] {
        (*self).transitions()
    }

    fn rewards(&self) -> &[f64] {
        (*self).rewards()
    }
}

/// Diagonal Gaussian policy with a state-independent log standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub spec: MlpSpec,
    pub net: MlpParams,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(state_dim: usize, action_dim: usize, cfg: &LearnerConfig, seed: u64) -> Self {
        let spec = MlpSpec::new(
            state_dim,
            &cfg.policy_hidden,
            Activation::Elu,
            &cfg.policy_linear,
            action_dim,
        );
        Self {
            net: MlpParams::init(&spec, seed),
            spec,
            log_std: vec![cfg.init_log_std; action_dim],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn mean(&self, s: &[f64]) -> Result<Vec<f64>> {
        neural::forward(&self.net, &self.spec, s)
    }

    /// Clipped mean action, used for evaluation.
    pub fn act_deterministic(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mean(s)?.into_iter().map(|m| m.clamp(-1.0, 1.0)).collect())
    }

    /// Samples `N(mean(s), exp(log_std)^2)` and clips each component to `[-1, 1]`.
    pub fn act<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mean = self.mean(s)?;
        Ok(sample_clipped(&mean, &self.log_std, rng))
    }

    pub fn log_prob(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let mean = self.mean(s)?;
        Ok(gaussian_log_prob(a, &mean, &self.log_std))
    }

    pub fn to_bundle(&self, metadata: serde_json::Value) -> Bundle {
        let mut b = Bundle::new(metadata);
        b.add_mlp("policy", &self.spec, &self.net);
        b.push_array("log_std", vec![self.log_std.len()], self.log_std.clone());
        b
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let (spec, net) = b.mlp("policy")?;
        let log_std = b.array("log_std")?.data.clone();
        if log_std.len() != spec.output_dim() {
            return Err(Error::InvalidInput("log_std length differs from action dim".into()));
        }
        Ok(Self { spec, net, log_std })
    }

    fn clamp_log_std(&mut self) {
        self.log_std
            .iter_mut()
            .for_each(|v| *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }
}

fn sample_clipped<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> Vec<f64> {
    let mut a = sample_raw(mean, log_std, rng);
    a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    a
}

fn sample_raw<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .map(|(&m, &ls)| {
            let eps: f64 = rng.sample(StandardNormal);
            m + ls.exp() * eps
        })
        .collect()
}

pub fn gaussian_log_prob(a: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
    a.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&x, &m), &ls)| {
            let z = (x - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// `KL(N(mean_p, std_p) || N(mean_q, std_q))` for diagonal Gaussians.
pub fn gaussian_kl(mean_p: &[f64], log_std_p: &[f64], mean_q: &[f64], log_std_q: &[f64]) -> f64 {
    (0..mean_p.len())
        .map(|d| {
            let var_q = (2.0 * log_std_q[d]).exp();
            let var_p = (2.0 * log_std_p[d]).exp();
            let dm = mean_p[d] - mean_q[d];
            log_std_q[d] - log_std_p[d] + (var_p + dm * dm) / (2.0 * var_q) - 0.5
        })
        .sum()
}

/// Softmax of `q / temperature`, shifted by the maximum for stability.
pub fn e_step_weights(q: &[f64], temperature: f64) -> Vec<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = q.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// State-action value network. The input `(s, a)` is squashed by tanh before the
/// first layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub spec: MlpSpec,
    pub net: MlpParams,
}

impl Critic {
    pub fn new(state_dim: usize, action_dim: usize, cfg: &LearnerConfig, seed: u64) -> Self {
        let spec = MlpSpec::new(
            state_dim + action_dim,
            &cfg.critic_hidden,
            Activation::Elu,
            &cfg.critic_linear,
            1,
        )
        .with_input_activation(InputActivation::Tanh);
        Self {
            net: MlpParams::init(&spec, seed),
            spec,
        }
    }

    pub fn q(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let x: Vec<f64> = s.iter().chain(a).copied().collect();
        Ok(neural::forward(&self.net, &self.spec, &x)?[0])
    }

    /// Q-values for row-aligned state and action batches.
    pub fn q_batch(&self, states: &Batch, actions: &Batch) -> Result<Vec<f64>> {
        let x = concat_rows(states, actions)?;
        Ok(neural::forward_batch(&self.net, &self.spec, &x)?.data)
    }
}

/// Transition batch flattened out of a set of trajectories.
#[derive(Clone, Debug)]
pub struct TransitionBatch {
    pub states: Batch,
    pub actions: Batch,
    pub next_states: Batch,
    pub rewards: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl TransitionBatch {
    pub fn from_trajectories<R: RewardedTrajectory>(batch: &[R]) -> Result<Self> {
        let first = batch
            .iter()
            .flat_map(|t| t.transitions().first())
            .next()
            .ok_or_else(|| Error::InvalidInput("empty learner batch".into()))?;
        let (sd, ad) = (first.s.len(), first.a.len());
        let mut out = Self {
            states: Batch::zeros(0, sd),
            actions: Batch::zeros(0, ad),
            next_states: Batch::zeros(0, sd),
            rewards: Vec::new(),
            terminal: Vec::new(),
        };
        for traj in batch {
            if traj.rewards().len() != traj.transitions().len() {
                return Err(Error::DimensionMismatch {
                    context: "trajectory rewards",
                    expected: traj.transitions().len(),
                    actual: traj.rewards().len(),
                });
            }
            for (t, &r) in traj.transitions().iter().zip(traj.rewards()) {
                if t.s.len() != sd || t.a.len() != ad || t.s_next.len() != sd {
                    return Err(Error::DimensionMismatch {
                        context: "learner transition",
                        expected: sd,
                        actual: t.s.len(),
                    });
                }
                out.states.data.extend_from_slice(&t.s);
                out.actions.data.extend_from_slice(&t.a);
                out.next_states.data.extend_from_slice(&t.s_next);
                out.rewards.push(r);
                out.terminal.push(t.terminal);
            }
        }
        let n = out.rewards.len();
        out.states.rows = n;
        out.actions.rows = n;
        out.next_states.rows = n;
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// `r + discount * (1 - terminal) * q_next`.
pub fn td_targets(rewards: &[f64], terminal: &[bool], q_next: &[f64], discount: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(terminal)
        .zip(q_next)
        .map(|((&r, &term), &q)| if term { r } else { r + discount * q })
        .collect()
}

/// One Adam step of `critic` on the mean squared TD error against `targets`.
/// Returns the loss before the step.
pub fn regress_critic(
    critic: &mut Critic,
    adam: &mut AdamState,
    states: &Batch,
    actions: &Batch,
    targets: &[f64],
    lr: f64,
) -> Result<f64> {
    let x = concat_rows(states, actions)?;
    let cache = neural::forward_cached(&critic.net, &critic.spec, &x)?;
    let q = &cache.output().data;
    let n = q.len() as f64;
    let mut d = Batch::zeros(q.len(), 1);
    let mut loss = 0.0;
    for ((g, &qv), &y) in d.data.iter_mut().zip(q).zip(targets) {
        let e = qv - y;
        loss += e * e / n;
        *g = 2.0 * e / n;
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            what: "critic TD loss",
            value: loss,
        });
    }
    let grads = neural::backward(&critic.net, &critic.spec, &cache, &d)?;
    adam.step(critic.net.tensors_mut(), grads.tensors(), lr)?;
    Ok(loss)
}

/// Gradient of the M-step objective with respect to the policy parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGrads {
    pub net: MlpParams,
    pub log_std: Vec<f64>,
}

/// M-step objective for fixed sampled actions and weights:
/// `-sum_s sum_k w[s][k] log pi(a[s][k] | s) + kl_penalty * sum_s KL(target(.|s) || pi(.|s))`.
///
/// `actions` holds `k` rows per state, state-major; `weights` is aligned with it.
pub fn m_step_loss_and_grad(
    policy: &GaussianPolicy,
    states: &Batch,
    actions: &Batch,
    weights: &[f64],
    target_means: &Batch,
    target_log_std: &[f64],
    kl_penalty: f64,
) -> Result<(f64, PolicyGrads)> {
    let n = states.rows;
    let ad = policy.action_dim();
    if n == 0 || actions.rows % n != 0 || actions.rows != weights.len() {
        return Err(Error::InvalidInput("m-step actions must hold k rows per state".into()));
    }
    let k = actions.rows / n;
    let cache = neural::forward_cached(&policy.net, &policy.spec, states)?;
    let means = cache.output();
    let inv_var: Vec<f64> = policy.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();

    let mut d_mean = Batch::zeros(n, ad);
    let mut d_log_std = vec![0.0; ad];
    let mut loss = 0.0;
    for i in 0..n {
        let mu = means.row(i);
        let mu_t = target_means.row(i);
        let dm = d_mean.row_mut(i);
        for j in 0..k {
            let row = i * k + j;
            let w = weights[row];
            let a = actions.row(row);
            loss -= w * gaussian_log_prob(a, mu, &policy.log_std);
            for d in 0..ad {
                let diff = a[d] - mu[d];
                dm[d] -= w * diff * inv_var[d];
                d_log_std[d] -= w * (diff * diff * inv_var[d] - 1.0);
            }
        }
        if kl_penalty > 0.0 {
            loss += kl_penalty * gaussian_kl(mu_t, target_log_std, mu, &policy.log_std);
            for d in 0..ad {
                let diff = mu[d] - mu_t[d];
                let var_t = (2.0 * target_log_std[d]).exp();
                dm[d] += kl_penalty * diff * inv_var[d];
                d_log_std[d] += kl_penalty * (1.0 - (var_t + diff * diff) * inv_var[d]);
            }
        }
    }
    let net = neural::backward(&policy.net, &policy.spec, &cache, &d_mean)?;
    Ok((
        loss,
        PolicyGrads {
            net,
            log_std: d_log_std,
        },
    ))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PolicyStats {
    pub loss: f64,
    pub mean_q: f64,
    /// Mean entropy of the per-state E-step weights.
    pub weight_entropy: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub td_loss: f64,
    pub policy: PolicyStats,
    pub synced: bool,
}

/// Online and target networks with their optimizer state.
#[derive(Clone, Debug)]
pub struct Learner {
    pub config: LearnerConfig,
    pub policy: GaussianPolicy,
    pub critic: Critic,
    pub target_policy: GaussianPolicy,
    pub target_critic: Critic,
    policy_adam: AdamState,
    critic_adam: AdamState,
    steps: u64,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(state_dim: usize, action_dim: usize, config: LearnerConfig, seed: u64) -> Self {
        let policy = GaussianPolicy::new(state_dim, action_dim, &config, seed);
        let critic = Critic::new(state_dim, action_dim, &config, seed.wrapping_add(1));
        Self::from_networks(policy, critic, config, seed)
    }

    pub fn from_networks(
        policy: GaussianPolicy,
        critic: Critic,
        config: LearnerConfig,
        seed: u64,
    ) -> Self {
        let policy_adam =
            AdamState::new(policy.net.tensors().chain([policy.log_std.as_slice()]));
        let critic_adam = AdamState::new(critic.net.tensors());
        Self {
            target_policy: policy.clone(),
            target_critic: critic.clone(),
            policy,
            critic,
            policy_adam,
            critic_adam,
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1ea7),
            config,
        }
    }

    /// Completed learner steps.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One Adam step on the mean squared 1-step TD error. Bootstrap actions are
    /// sampled from the target policy at the next states.
    pub fn critic_update<R: RewardedTrajectory>(&mut self, batch: &[R]) -> Result<f64> {
        let tb = TransitionBatch::from_trajectories(batch)?;
        self.critic_update_on(&tb)
    }

    pub fn critic_update_on(&mut self, tb: &TransitionBatch) -> Result<f64> {
        let next_means =
            neural::forward_batch(&self.target_policy.net, &self.target_policy.spec, &tb.next_states)?;
        let mut next_actions = Batch::zeros(tb.len(), self.policy.action_dim());
        for i in 0..tb.len() {
            let a = sample_clipped(next_means.row(i), &self.target_policy.log_std, &mut self.rng);
            next_actions.row_mut(i).copy_from_slice(&a);
        }
        let q_next = self.target_critic.q_batch(&tb.next_states, &next_actions)?;
        let targets = td_targets(&tb.rewards, &tb.terminal, &q_next, self.config.discount);
        regress_critic(
            &mut self.critic,
            &mut self.critic_adam,
            &tb.states,
            &tb.actions,
            &targets,
            self.config.lr,
        )
    }

    pub fn policy_update<R: RewardedTrajectory>(&mut self, batch: &[R]) -> Result<PolicyStats> {
        let tb = TransitionBatch::from_trajectories(batch)?;
        self.policy_update_on(&tb.states)
    }

    pub fn policy_update_on(&mut self, states: &Batch) -> Result<PolicyStats> {
        let critic = self.critic.clone();
        self.policy_update_with(states, |s, a| critic.q_batch(s, a))
    }

    /// Policy update against an arbitrary action-value function.
    pub fn policy_update_with<F>(&mut self, states: &Batch, q_fn: F) -> Result<PolicyStats>
    where
        F: Fn(&Batch, &Batch) -> Result<Vec<f64>>,
    {
        let n = states.rows;
        let k = self.config.action_samples;
        let ad = self.policy.action_dim();
        let target_means =
            neural::forward_batch(&self.target_policy.net, &self.target_policy.spec, states)?;

        // The likelihood is fitted to the raw Gaussian samples; the critic scores
        // the clipped action that the environment would execute. Fitting clipped
        // samples would bias the learned spread downwards.
        let mut rep_states = Batch::zeros(n * k, states.cols);
        let mut actions = Batch::zeros(n * k, ad);
        let mut executed = Batch::zeros(n * k, ad);
        for i in 0..n {
            for j in 0..k {
                let row = i * k + j;
                rep_states.row_mut(row).copy_from_slice(states.row(i));
                let a = sample_raw(target_means.row(i), &self.target_policy.log_std, &mut self.rng);
                actions.row_mut(row).copy_from_slice(&a);
                for (e, v) in executed.row_mut(row).iter_mut().zip(&a) {
                    *e = v.clamp(-1.0, 1.0);
                }
            }
        }
        let q = q_fn(&rep_states, &executed)?;
        let mut weights = Vec::with_capacity(n * k);
        let mut entropy = 0.0;
        for qs in q.chunks_exact(k) {
            let w = e_step_weights(qs, self.config.e_step_temperature);
            entropy -= w.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
            weights.extend(w);
        }

        let (loss, grads) = m_step_loss_and_grad(
            &self.policy,
            states,
            &actions,
            &weights,
            &target_means,
            &self.target_policy.log_std,
            self.config.kl_penalty,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                what: "policy objective",
                value: loss,
            });
        }
        self.policy_adam.step(
            self.policy
                .net
                .tensors_mut()
                .chain([self.policy.log_std.as_mut_slice()]),
            grads.net.tensors().chain([grads.log_std.as_slice()]),
            self.config.lr,
        )?;
        self.policy.clamp_log_std();
        Ok(PolicyStats {
            loss,
            mean_q: q.iter().sum::<f64>() / q.len() as f64,
            weight_entropy: entropy / n as f64,
        })
    }

    /// Copies online networks into the targets when `step` is a multiple of the
    /// configured period.
    pub fn sync_targets(&mut self, step: u64) -> bool {
        if is_sync_step(self.config.target_update_period, step) {
            self.target_policy.clone_from(&self.policy);
            self.target_critic.clone_from(&self.critic);
            true
        } else {
            false
        }
    }

    /// Critic update, policy update, step count, target sync.
    pub fn step<R: RewardedTrajectory>(&mut self, batch: &[R]) -> Result<StepStats> {
        let tb = TransitionBatch::from_trajectories(batch)?;
        let td_loss = self.critic_update_on(&tb)?;
        let policy = self.policy_update_on(&tb.states)?;
        self.steps += 1;
        let synced = self.sync_targets(self.steps);
        Ok(StepStats {
            td_loss,
            policy,
            synced,
        })
    }
}

pub fn is_sync_step(period: u64, step: u64) -> bool {
    step > 0 && step % period == 0
}

fn concat_rows(a: &Batch, b: &Batch) -> Result<Batch> {
    if a.rows != b.rows {
        return Err(Error::DimensionMismatch {
            context: "state/action rows",
            expected: a.rows,
            actual: b.rows,
        });
    }
    let cols = a.cols + b.cols;
    let mut out = Batch::zeros(a.rows, cols);
    for i in 0..a.rows {
        let row = out.row_mut(i);
        row[..a.cols].copy_from_slice(a.row(i));
        row[a.cols..].copy_from_slice(b.row(i));
    }
    Ok(out)
}
