//! Downstream reuse of exploration policies.
//!
//! A mixture agent executes one option at a time for `option_horizon` steps. The
//! options are the learnable task policy plus either frozen curiosity snapshots
//! or auxiliary policies trained on hand-designed rewards. Whichever option
//! acted, every transition is stored with the task reward recomputed from the
//! environment state and trains the task policy off-policy.

use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{regress_critic, Critic, GaussianPolicy, Learner, RewardedTrajectory, TransitionBatch};
use crate::envs::{make_env, Environment};
use crate::error::{Error, Result};
use crate::neural::{AdamState, Batch};
use crate::orchestrator::{episode_reset_seed, list_snapshots, load_snapshot, RunConfig};
use crate::replay::{FifoReplay, ReplayItem};
use crate::seed::{derive_seed, streams};
use crate::types::{normalize, IdAllocator, Trajectory, Transition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamConfig {
    pub task: String,
    pub episodes: usize,
    pub option_horizon: usize,
    pub n_snapshots: usize,
    pub snapshot_dir: PathBuf,
    /// Rewards for the auxiliary policies of the hand-designed baseline.
    pub aux_tasks: Vec<String>,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub updates_per_episode: usize,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            task: "carry_red_to_corner".into(),
            episodes: 1000,
            option_horizon: 10,
            n_snapshots: 5,
            snapshot_dir: PathBuf::from("snapshots"),
            aux_tasks: vec!["reach_red".into(), "move_red".into()],
            epsilon_start: 0.3,
            epsilon_end: 0.05,
            updates_per_episode: 4,
        }
    }
}

impl DownstreamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("downstream: {m}")));
        if self.option_horizon == 0 || self.n_snapshots == 0 || self.updates_per_episode == 0 {
            return bad("option_horizon, n_snapshots and updates_per_episode must be >= 1");
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.epsilon_start) || !unit.contains(&self.epsilon_end) {
            return bad("epsilons must lie in [0, 1]");
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over the first half of
    /// training, constant afterwards. `episode` is 1-based.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let half = (self.episodes / 2).max(1);
        let k = episode.saturating_sub(1).min(half) as f64 / half as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Early,
    Mid,
    Late,
}

impl Phase {
    /// Episode interval `(lo, hi]` of the phase for a run of `total` episodes:
    /// the first, second and third tenth.
    pub fn interval(self, total: usize) -> (usize, usize) {
        let k = match self {
            Self::Early => 0,
            Self::Mid => 1,
            Self::Late => 2,
        };
        (k * total / 10, (k + 1) * total / 10)
    }

    fn contains(self, total: usize, episode: usize) -> bool {
        // Exact tenths without rounding: k*total < 10*episode <= (k+1)*total.
        let k = match self {
            Self::Early => 0,
            Self::Mid => 1,
            Self::Late => 2,
        };
        k * total < 10 * episode && 10 * episode <= (k + 1) * total
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(Self::Early),
            "mid" => Ok(Self::Mid),
            "late" => Ok(Self::Late),
            other => Err(Error::Config(format!("unknown phase {other:?}"))),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Early => "early",
            Self::Mid => "mid",
            Self::Late => "late",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DownstreamMode {
    Snapshots(Phase),
    SacxLite,
    Scratch,
}

impl FromStr for DownstreamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sacx" | "sacx_lite" => Ok(Self::SacxLite),
            "scratch" => Ok(Self::Scratch),
            _ => match s.strip_prefix("snapshots:") {
                Some(p) => Ok(Self::Snapshots(p.parse()?)),
                None => Err(Error::Config(format!(
                    "unknown downstream mode {s:?} (expected snapshots:early|mid|late, sacx or scratch)"
                ))),
            },
        }
    }
}

impl fmt::Display for DownstreamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Snapshots(p) => write!(f, "snapshots:{p}"),
            Self::SacxLite => f.write_str("sacx"),
            Self::Scratch => f.write_str("scratch"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkillOption {
    pub policy: GaussianPolicy,
    pub episode: usize,
    pub run_id: String,
}

/// Frozen policies. Nothing in this crate hands out mutable access to them
/// during downstream training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SkillLibrary {
    pub options: Vec<SkillOption>,
}

impl SkillLibrary {
    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }
}

/// Draws `n` snapshots uniformly without replacement from the phase interval of
/// the run that wrote `dir`. The run length is read from snapshot metadata.
pub fn sample_snapshots(dir: &Path, phase: Phase, n: usize, seed: u64) -> Result<SkillLibrary> {
    let listed = list_snapshots(dir)?;
    let total = listed
        .iter()
        .find_map(|(_, p)| load_snapshot(p).ok())
        .map(|s| s.total_episodes)
        .ok_or_else(|| Error::InvalidInput(format!("no loadable snapshots in {}", dir.display())))?;
    let candidates: Vec<&PathBuf> = listed
        .iter()
        .filter(|(ep, _)| phase.contains(total, *ep))
        .map(|(_, p)| p)
        .collect();
    let (lo, hi) = phase.interval(total);
    if candidates.len() < n {
        return Err(Error::NotEnoughSnapshots {
            lo,
            hi,
            available: candidates.len(),
            requested: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, candidates.len(), n).into_vec();
    picked.sort_unstable();
    let options = picked
        .into_iter()
        .map(|i| {
            let s = load_snapshot(candidates[i])?;
            Ok(SkillOption {
                policy: s.policy,
                episode: s.episode,
                run_id: s.run_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SkillLibrary { options })
}

/// Epsilon-greedy choice over option values. Ties go to the lowest index. With
/// a single option no randomness is consumed.
pub fn select_option<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    assert!(!q.is_empty(), "no options to select from");
    if q.len() == 1 {
        return 0;
    }
    if rng.gen::<f64>() < epsilon {
        return rng.gen_range(0..q.len());
    }
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// A chunk of downstream experience: which option acted at each step, the task
/// reward, and one reward channel per auxiliary task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskTrajectory {
    pub trajectory: Trajectory,
    pub options: Vec<usize>,
    pub task_rewards: Vec<f64>,
    pub aux_rewards: Vec<Vec<f64>>,
}

impl ReplayItem for TaskTrajectory {
    fn item_id(&self) -> u64 {
        self.trajectory.id
    }
}

impl RewardedTrajectory for TaskTrajectory {
    fn transitions(&self) -> &[Transition] {
        &self.trajectory.transitions
    }

    fn rewards(&self) -> &[f64] {
        &self.task_rewards
    }
}

/// The same transitions viewed through one auxiliary reward channel.
pub struct AuxView<'a> {
    pub traj: &'a TaskTrajectory,
    pub channel: usize,
}

impl RewardedTrajectory for AuxView<'_> {
    fn transitions(&self) -> &[Transition] {
        &self.traj.trajectory.transitions
    }

    fn rewards(&self) -> &[f64] {
        &self.traj.aux_rewards[self.channel]
    }
}

/// Value of handing control to an option whose policy is not the task policy:
/// a critic trained on the task reward and evaluated at the option's mean
/// action.
#[derive(Clone, Debug)]
struct OptionCritic {
    online: Critic,
    target: Critic,
    adam: AdamState,
}

impl OptionCritic {
    fn new(sd: usize, ad: usize, cfg: &crate::agent::LearnerConfig, seed: u64) -> Self {
        let online = Critic::new(sd, ad, cfg, seed);
        Self {
            adam: AdamState::new(online.net.tensors()),
            target: online.clone(),
            online,
        }
    }

    fn update(&mut self, tb: &TransitionBatch, policy: &GaussianPolicy, discount: f64, lr: f64) -> Result<f64> {
        let next_mean = mean_actions(policy, &tb.next_states)?;
        let q_next = self.target.q_batch(&tb.next_states, &next_mean)?;
        let targets = crate::agent::td_targets(&tb.rewards, &tb.terminal, &q_next, discount);
        regress_critic(&mut self.online, &mut self.adam, &tb.states, &tb.actions, &targets, lr)
    }
}

fn mean_actions(policy: &GaussianPolicy, states: &Batch) -> Result<Batch> {
    let mut out = crate::neural::forward_batch(&policy.net, &policy.spec, states)?;
    out.data.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(out)
}

enum OptionSource {
    Task,
    Frozen(usize),
    Aux(usize),
}

/// Task learner, the option set and the per-option value estimates.
pub struct MixtureAgent {
    pub task: Learner,
    pub library: SkillLibrary,
    pub aux: Vec<Learner>,
    critics: Vec<OptionCritic>,
    sources: Vec<OptionSource>,
}

impl MixtureAgent {
    pub fn new(task: Learner, library: SkillLibrary, aux: Vec<Learner>, seed: u64) -> Self {
        let sd = task.policy.state_dim();
        let ad = task.policy.action_dim();
        let mut sources = vec![OptionSource::Task];
        sources.extend((0..library.len()).map(OptionSource::Frozen));
        sources.extend((0..aux.len()).map(OptionSource::Aux));
        let critics = (1..sources.len())
            .map(|i| OptionCritic::new(sd, ad, &task.config, derive_seed(seed, i as u64)))
            .collect();
        Self {
            task,
            library,
            aux,
            critics,
            sources,
        }
    }

    pub fn num_options(&self) -> usize {
        self.sources.len()
    }

    pub fn option_policy(&self, option: usize) -> &GaussianPolicy {
        match self.sources[option] {
            OptionSource::Task => &self.task.policy,
            OptionSource::Frozen(i) => &self.library.options[i].policy,
            OptionSource::Aux(i) => &self.aux[i].policy,
        }
    }

    /// Sampled action of `option` at `s`. Frozen skills sample their own
    /// Gaussian like any other option.
    pub fn act<R: Rng + ?Sized>(&self, option: usize, s: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.option_policy(option).act(s, rng)
    }

    /// Value of each option at `s`, each evaluated at the option's mean action.
    pub fn option_values(&self, s: &[f64]) -> Result<Vec<f64>> {
        (0..self.num_options())
            .map(|o| {
                let a: Vec<f64> = self
                    .option_policy(o)
                    .mean(s)?
                    .into_iter()
                    .map(|v| v.clamp(-1.0, 1.0))
                    .collect();
                match o {
                    0 => self.task.critic.q(s, &a),
                    _ => self.critics[o - 1].online.q(s, &a),
                }
            })
            .collect()
    }

    /// One update of every learnable part from a shared batch.
    pub fn update(&mut self, batch: &[std::sync::Arc<TaskTrajectory>]) -> Result<()> {
        self.task.step(batch)?;
        for (channel, learner) in self.aux.iter_mut().enumerate() {
            let views: Vec<AuxView<'_>> = batch.iter().map(|t| AuxView { traj: t, channel }).collect();
            learner.step(&views)?;
        }
        if !self.critics.is_empty() {
            let tb = TransitionBatch::from_trajectories(batch)?;
            let (discount, lr, period) = (
                self.task.config.discount,
                self.task.config.lr,
                self.task.config.target_update_period,
            );
            let sync = crate::agent::is_sync_step(period, self.task.steps());
            for o in 1..self.sources.len() {
                let policy = match self.sources[o] {
                    OptionSource::Task => unreachable!(),
                    OptionSource::Frozen(i) => &self.library.options[i].policy,
                    OptionSource::Aux(i) => &self.aux[i].policy,
                };
                let c = &mut self.critics[o - 1];
                c.update(&tb, policy, discount, lr)?;
                if sync {
                    c.target.clone_from(&c.online);
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DownstreamOutcome {
    pub returns: Vec<f64>,
    /// Option active at every step, per episode.
    pub option_trace: Vec<Vec<usize>>,
    pub agent_options: usize,
}

/// First 1-based episode whose return reaches `threshold`.
pub fn episodes_to_threshold(returns: &[f64], threshold: f64) -> Option<usize> {
    returns.iter().position(|&r| r >= threshold).map(|i| i + 1)
}

fn check_task(env: &dyn Environment, task: &str) -> Result<()> {
    if env.task_names().contains(&task) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "task {task:?} not offered by {} (available: {})",
            env.name(),
            env.task_names().join(", ")
        )))
    }
}

fn build_agent(config: &RunConfig, mode: DownstreamMode, sd: usize, ad: usize) -> Result<MixtureAgent> {
    let ds = &config.downstream;
    let seed = config.run.seed;
    let task = Learner::new(sd, ad, config.learner.clone(), derive_seed(seed, streams::LEARNER));
    let (library, aux) = match mode {
        DownstreamMode::Scratch => (SkillLibrary::default(), Vec::new()),
        DownstreamMode::Snapshots(phase) => {
            let lib = sample_snapshots(
                &ds.snapshot_dir,
                phase,
                ds.n_snapshots,
                derive_seed(seed, streams::SAMPLING),
            )?;
            if let Some(bad) = lib
                .options
                .iter()
                .find(|o| o.policy.state_dim() != sd || o.policy.action_dim() != ad)
            {
                return Err(Error::Config(format!(
                    "snapshot from episode {} has dimensions ({}, {}), environment needs ({sd}, {ad})",
                    bad.episode,
                    bad.policy.state_dim(),
                    bad.policy.action_dim()
                )));
            }
            (lib, Vec::new())
        }
        DownstreamMode::SacxLite => {
            let aux = (0..ds.aux_tasks.len())
                .map(|i| {
                    Learner::new(sd, ad, config.learner.clone(), derive_seed(seed, streams::AUX + 16 * i as u64))
                })
                .collect();
            (SkillLibrary::default(), aux)
        }
    };
    Ok(MixtureAgent::new(task, library, aux, derive_seed(seed, streams::SELECTOR)))
}

struct CurveWriter(csv::Writer<File>);

impl CurveWriter {
    fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| Error::Csv(e.to_string()))?;
        w.write_record(["episode", "task_return", "mode", "seed"])
            .map_err(|e| Error::Csv(e.to_string()))?;
        Ok(Self(w))
    }

    fn row(&mut self, episode: usize, ret: f64, mode: &str, seed: u64) -> Result<()> {
        self.0
            .write_record([episode.to_string(), ret.to_string(), mode.to_string(), seed.to_string()])
            .map_err(|e| Error::Csv(e.to_string()))?;
        self.0.flush()?;
        Ok(())
    }
}

/// Trains the task policy for `downstream.episodes` episodes and writes the
/// learning curve `episode,task_return,mode,seed` to `curve_path`.
pub fn train_downstream(config: &RunConfig, mode: DownstreamMode, curve_path: &Path) -> Result<DownstreamOutcome> {
    config.validate()?;
    let ds = &config.downstream;
    let seed = config.run.seed;
    let mut env = make_env(&config.run.env)?;
    check_task(env.as_ref(), &ds.task)?;
    let aux_tasks: Vec<&str> = match mode {
        DownstreamMode::SacxLite => ds.aux_tasks.iter().map(String::as_str).collect(),
        _ => Vec::new(),
    };
    for t in &aux_tasks {
        check_task(env.as_ref(), t)?;
    }
    let spec = env.spec().clone();
    let mut agent = build_agent(config, mode, spec.state_dim, spec.action_dim)?;
    let mut replay: FifoReplay<TaskTrajectory> =
        FifoReplay::new(config.policy_replay, derive_seed(seed, streams::POLICY_REPLAY));
    let mut actor_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::ACTOR));
    let mut selector_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::SELECTOR));
    let mut ids = IdAllocator::new();
    let mut curve = CurveWriter::create(curve_path)?;
    let mode_name = mode.to_string();

    let mut outcome = DownstreamOutcome {
        returns: Vec::with_capacity(ds.episodes),
        option_trace: Vec::with_capacity(ds.episodes),
        agent_options: agent.num_options(),
    };
    for ep in 1..=ds.episodes {
        let epsilon = ds.epsilon(ep);
        let mut s = normalize(&env.reset(episode_reset_seed(seed, ep)), &spec)?;
        let mut transitions = Vec::with_capacity(spec.episode_length);
        let mut options = Vec::with_capacity(spec.episode_length);
        let mut task_rewards = Vec::with_capacity(spec.episode_length);
        let mut aux_rewards = vec![Vec::with_capacity(spec.episode_length); aux_tasks.len()];
        let mut option = 0;
        for t in 0.. {
            if t % ds.option_horizon == 0 && agent.num_options() > 1 {
                let q = agent.option_values(&s)?;
                option = select_option(&q, epsilon, &mut selector_rng);
            }
            let a = agent.act(option, &s, &mut actor_rng)?;
            let step = env.step(&a)?;
            let s_next = normalize(&step.observation, &spec)?;
            let rewards = env.eval_rewards();
            task_rewards.push(rewards[ds.task.as_str()]);
            for (ch, name) in aux_tasks.iter().enumerate() {
                aux_rewards[ch].push(rewards[name]);
            }
            options.push(option);
            transitions.push(Transition {
                s: std::mem::replace(&mut s, s_next.clone()),
                a,
                s_next,
                terminal: step.terminal,
            });
            if step.done() {
                break;
            }
        }
        let ret: f64 = task_rewards.iter().sum();

        let mut start = 0;
        for chunk in transitions.chunks(config.run.trajectory_len) {
            let end = start + chunk.len();
            replay.push_batch([TaskTrajectory {
                trajectory: Trajectory {
                    id: ids.next_id(),
                    transitions: chunk.to_vec(),
                },
                options: options[start..end].to_vec(),
                task_rewards: task_rewards[start..end].to_vec(),
                aux_rewards: aux_rewards.iter().map(|r| r[start..end].to_vec()).collect(),
            }]);
            start = end;
        }
        for _ in 0..ds.updates_per_episode {
            let Ok(batch) = replay.sample(config.learner.batch_size) else {
                break;
            };
            agent.update(&batch)?;
        }

        curve.row(ep, ret, &mode_name, seed)?;
        outcome.returns.push(ret);
        outcome.option_trace.push(options);
    }
    Ok(outcome)
}

/// Reference trainer without any option machinery: one policy collects every
/// episode and learns from the task reward.
pub fn train_plain(config: &RunConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let ds = &config.downstream;
    let seed = config.run.seed;
    let mut env = make_env(&config.run.env)?;
    check_task(env.as_ref(), &ds.task)?;
    let spec = env.spec().clone();
    let mut learner = Learner::new(
        spec.state_dim,
        spec.action_dim,
        config.learner.clone(),
        derive_seed(seed, streams::LEARNER),
    );
    let mut replay: FifoReplay<TaskTrajectory> =
        FifoReplay::new(config.policy_replay, derive_seed(seed, streams::POLICY_REPLAY));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::ACTOR));
    let mut ids = IdAllocator::new();
    let mut returns = Vec::with_capacity(ds.episodes);
    for ep in 1..=ds.episodes {
        let mut s = normalize(&env.reset(episode_reset_seed(seed, ep)), &spec)?;
        let mut transitions = Vec::with_capacity(spec.episode_length);
        let mut rewards = Vec::with_capacity(spec.episode_length);
        loop {
            let a = learner.policy.act(&s, &mut rng)?;
            let step = env.step(&a)?;
            let s_next = normalize(&step.observation, &spec)?;
            rewards.push(env.eval_rewards()[ds.task.as_str()]);
            transitions.push(Transition {
                s: std::mem::replace(&mut s, s_next.clone()),
                a,
                s_next,
                terminal: step.terminal,
            });
            if step.done() {
                break;
            }
        }
        for (chunk, r) in transitions
            .chunks(config.run.trajectory_len)
            .zip(rewards.chunks(config.run.trajectory_len))
        {
            replay.push_batch([TaskTrajectory {
                trajectory: Trajectory {
                    id: ids.next_id(),
                    transitions: chunk.to_vec(),
                },
                options: vec![0; chunk.len()],
                task_rewards: r.to_vec(),
                aux_rewards: Vec::new(),
            }]);
        }
        for _ in 0..ds.updates_per_episode {
            let Ok(batch) = replay.sample(config.learner.batch_size) else {
                break;
            };
            learner.step(&batch)?;
        }
        returns.push(rewards.iter().sum());
    }
    Ok(returns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::snapshot;
    use crate::agent::LearnerConfig;

    fn small_learner() -> LearnerConfig {
        LearnerConfig {
            batch_size: 4,
            action_samples: 4,
            policy_hidden: vec![8],
            policy_linear: vec![4],
            critic_hidden: vec![8],
            critic_linear: vec![4],
            ..Default::default()
        }
    }

    fn small_config(episodes: usize) -> RunConfig {
        let mut c = RunConfig::default();
        c.learner = small_learner();
        c.downstream.episodes = episodes;
        c.downstream.updates_per_episode = 2;
        c.policy_replay.capacity = 64;
        c
    }

    fn write_snapshots(dir: &Path, total: usize, episodes: &[usize]) {
        let cfg = small_learner();
        for &ep in episodes {
            let p = GaussianPolicy::new(12, 2, &cfg, ep as u64);
            let meta = serde_json::json!({"kind": "policy", "episode": ep, "run_id": "r", "total_episodes": total, "env": "pointmass"});
            snapshot(&p, ep, dir, meta).unwrap();
        }
    }

    #[test]
    fn phase_intervals_are_tenths() {
        assert_eq!(Phase::Early.interval(2000), (0, 200));
        assert_eq!(Phase::Mid.interval(2000), (200, 400));
        assert_eq!(Phase::Late.interval(2000), (400, 600));
        assert!(Phase::Mid.contains(2000, 400));
        assert!(!Phase::Mid.contains(2000, 200));
        assert!(Phase::Early.contains(2000, 200));
    }

    #[test]
    fn exact_interval_selects_all_and_is_seeded() {
        let dir = tempfile::tempdir().unwrap();
        write_snapshots(dir.path(), 1000, &[50, 100, 150, 200, 250, 300, 350]);
        let lib = sample_snapshots(dir.path(), Phase::Mid, 2, 0).unwrap();
        assert_eq!(lib.options.iter().map(|o| o.episode).collect::<Vec<_>>(), vec![150, 200]);
        let a = sample_snapshots(dir.path(), Phase::Late, 1, 9).unwrap();
        let b = sample_snapshots(dir.path(), Phase::Late, 1, 9).unwrap();
        assert_eq!(a, b);
        match sample_snapshots(dir.path(), Phase::Early, 5, 0) {
            Err(Error::NotEnoughSnapshots { lo, hi, available, requested }) => {
                assert_eq!((lo, hi, available, requested), (0, 100, 2, 5))
            }
            other => panic!("expected NotEnoughSnapshots, got {other:?}"),
        }
    }

    #[test]
    fn five_snapshots_make_a_library_of_five() {
        let dir = tempfile::tempdir().unwrap();
        let eps: Vec<usize> = (1..=20).map(|i| i * 10).collect();
        write_snapshots(dir.path(), 1000, &eps);
        let lib = sample_snapshots(dir.path(), Phase::Mid, 5, 3).unwrap();
        assert_eq!(lib.len(), 5);
        assert!(lib.options.iter().all(|o| o.episode > 100 && o.episode <= 200));
    }

    #[test]
    fn selector_picks_argmax_and_ignores_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = [0.1, 2.0, -1.0, 1.9];
        assert_eq!(select_option(&q, 0.0, &mut rng), 1);
        let shifted: Vec<f64> = q.iter().map(|v| v + 1e3).collect();
        assert_eq!(select_option(&shifted, 0.0, &mut rng), 1);
        let mut untouched = ChaCha8Rng::seed_from_u64(5);
        let before = untouched.clone();
        assert_eq!(select_option(&[3.0], 1.0, &mut untouched), 0);
        assert_eq!(untouched, before);
    }

    #[test]
    fn epsilon_decays_over_first_half() {
        let c = DownstreamConfig {
            episodes: 100,
            ..Default::default()
        };
        assert_eq!(c.epsilon(1), 0.3);
        assert!((c.epsilon(26) - 0.175).abs() < 1e-12);
        assert!((c.epsilon(51) - 0.05).abs() < 1e-12);
        assert!((c.epsilon(100) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn modes_parse() {
        assert_eq!("snapshots:mid".parse::<DownstreamMode>().unwrap(), DownstreamMode::Snapshots(Phase::Mid));
        assert_eq!("sacx".parse::<DownstreamMode>().unwrap(), DownstreamMode::SacxLite);
        assert!("snapshots:final".parse::<DownstreamMode>().is_err());
        assert!("hrl".parse::<DownstreamMode>().is_err());
    }

    #[test]
    fn scratch_equals_plain_training() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config(6);
        c.downstream.task = "reach_red".into();
        let out = train_downstream(&c, DownstreamMode::Scratch, &dir.path().join("c.csv")).unwrap();
        let plain = train_plain(&c).unwrap();
        assert_eq!(out.returns, plain);
        let text = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
        assert!(text.starts_with("episode,task_return,mode,seed\n1,"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn full_horizon_uses_one_option_per_episode() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config(4);
        c.downstream.option_horizon = 200;
        let out = train_downstream(&c, DownstreamMode::SacxLite, &dir.path().join("c.csv")).unwrap();
        assert_eq!(out.agent_options, 3);
        for trace in &out.option_trace {
            assert!(trace.iter().all(|&o| o == trace[0]));
        }
    }

    #[test]
    fn frozen_options_unchanged_and_experience_tagged() {
        let dir = tempfile::tempdir().unwrap();
        let snaps = dir.path().join("snapshots");
        write_snapshots(&snaps, 100, &[15, 20]);
        let mut c = small_config(5);
        c.downstream.snapshot_dir = snaps.clone();
        c.downstream.n_snapshots = 2;
        c.downstream.option_horizon = 5;
        let before = sample_snapshots(&snaps, Phase::Mid, 2, 0).unwrap();
        let bytes: Vec<_> = before
            .options
            .iter()
            .map(|o| o.policy.to_bundle(serde_json::Value::Null).to_bytes().unwrap())
            .collect();

        let env_spec = make_env("pointmass").unwrap().spec().clone();
        let mut agent = build_agent(&c, DownstreamMode::Snapshots(Phase::Mid), env_spec.state_dim, env_spec.action_dim).unwrap();
        let out = train_downstream(&c, DownstreamMode::Snapshots(Phase::Mid), &dir.path().join("c.csv")).unwrap();
        assert_eq!(out.agent_options, 3);
        assert!(out.option_trace.iter().flatten().all(|&o| o < 3));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut traj = |id| TaskTrajectory {
            trajectory: Trajectory {
                id,
                transitions: vec![Transition {
                    s: vec![0.0; 12],
                    a: vec![0.1, -0.1],
                    s_next: vec![0.01; 12],
                    terminal: false,
                }],
            },
            options: vec![1],
            task_rewards: vec![rng.gen()],
            aux_rewards: vec![],
        };
        let batch: Vec<_> = (0..4).map(|i| std::sync::Arc::new(traj(i))).collect();
        for _ in 0..3 {
            agent.update(&batch).unwrap();
        }
        let after: Vec<_> = agent
            .library
            .options
            .iter()
            .map(|o| o.policy.to_bundle(serde_json::Value::Null).to_bytes().unwrap())
            .collect();
        assert_eq!(bytes, after);
    }

    #[test]
    fn unknown_task_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config(1);
        c.downstream.task = "lift_red".into();
        assert!(matches!(
            train_downstream(&c, DownstreamMode::Scratch, &dir.path().join("c.csv")),
            Err(Error::Config(_))
        ));
    }
}
