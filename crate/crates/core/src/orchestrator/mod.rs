//! Curiosity run: an actor collecting episodes, a model learner labeling
//! trajectories before each world-model step, and a policy learner consuming the
//! labeled trajectories. Roles exchange data only through the two replays and a
//! single-slot policy mailbox.

mod config;
mod metrics;

pub use config::{RunConfig, RunMode, RunSettings};
pub use metrics::{read_metrics, EpisodeRecord, MetricsWriter, METRICS_HEADER};

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::agent::{GaussianPolicy, Learner};
use crate::envs::{make_env, Environment};
use crate::error::{Error, Result};
use crate::neural::{self, Bundle};
use crate::replay::{ModelReplay, PolicyReplay, Shared};
use crate::seed::{derive_seed, streams};
use crate::types::{chunk_episode, normalize, IdAllocator, Transition};
use crate::worldmodel::WorldModel;

/// Single-slot, last-write-wins hand-off. Readers always get a whole value.
#[derive(Debug)]
pub struct Mailbox<T> {
    slot: Mutex<Arc<T>>,
}

impl<T> Mailbox<T> {
    pub fn new(initial: T) -> Self {
        Self {
            slot: Mutex::new(Arc::new(initial)),
        }
    }

    pub fn publish(&self, value: T) {
        *self.slot.lock().unwrap_or_else(|p| p.into_inner()) = Arc::new(value);
    }

    pub fn latest(&self) -> Arc<T> {
        self.slot.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

/// Runs one episode from `reset_seed`, normalizing observations on the way.
/// `act` receives the normalized state.
pub fn rollout<F>(env: &mut dyn Environment, reset_seed: u64, mut act: F) -> Result<Vec<Transition>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let spec = env.spec().clone();
    let mut s = normalize(&env.reset(reset_seed), &spec)?;
    let mut out = Vec::with_capacity(spec.episode_length);
    loop {
        let a: Vec<f64> = act(&s)?.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let step = env.step(&a)?;
        let s_next = normalize(&step.observation, &spec)?;
        out.push(Transition {
            s: std::mem::replace(&mut s, s_next.clone()),
            a,
            s_next,
            terminal: step.terminal,
        });
        if step.done() {
            return Ok(out);
        }
    }
}

pub fn episode_reset_seed(run_seed: u64, episode: usize) -> u64 {
    derive_seed(derive_seed(run_seed, streams::ENV), episode as u64)
}

pub fn snapshot_stem(dir: &Path, episode: usize) -> PathBuf {
    dir.join(format!("ep_{episode:06}"))
}

/// Writes `policy` as `ep_{episode:06}.manifest` / `.weights` under `dir` and
/// returns the manifest path.
pub fn snapshot(
    policy: &GaussianPolicy,
    episode: usize,
    dir: &Path,
    metadata: serde_json::Value,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (manifest, _) = policy.to_bundle(metadata).save(&snapshot_stem(dir, episode))?;
    Ok(manifest)
}

/// A policy snapshot read back from disk.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub episode: usize,
    pub run_id: String,
    pub total_episodes: usize,
    pub policy: GaussianPolicy,
}

/// Accepts the stem or either file of the pair.
pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    let stem = path.with_extension("");
    let bundle = Bundle::load(&stem)?;
    let policy = GaussianPolicy::from_bundle(&bundle)?;
    let meta = &bundle.metadata;
    let field = |k: &str| {
        meta.get(k).ok_or_else(|| Error::Format {
            path: neural::paths(&stem).0,
            reason: format!("snapshot metadata lacks {k:?}"),
        })
    };
    Ok(Snapshot {
        episode: field("episode")?.as_u64().unwrap_or(0) as usize,
        run_id: field("run_id")?.as_str().unwrap_or_default().to_string(),
        total_episodes: field("total_episodes")?.as_u64().unwrap_or(0) as usize,
        policy,
    })
}

/// Episode indices of all snapshot pairs in `dir`, sorted. Only the file names
/// are inspected.
pub fn list_snapshots(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("manifest") {
            continue;
        }
        let idx = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("ep_"))
            .and_then(|s| s.parse::<usize>().ok());
        if let Some(idx) = idx {
            out.push((idx, path.with_extension("")));
        }
    }
    out.sort();
    Ok(out)
}

/// What the observer sees after each episode of a deterministic run.
pub struct EpisodeView<'a> {
    pub record: &'a EpisodeRecord,
    pub transitions: &'a [Transition],
    pub model_replay: &'a ModelReplay,
    pub policy_replay: &'a PolicyReplay,
    pub world_model: &'a WorldModel,
    pub policy: &'a GaussianPolicy,
}

#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub snapshot_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub records: Vec<EpisodeRecord>,
}

pub fn run_selmo(config: &RunConfig, out_dir: &Path) -> Result<RunOutputs> {
    match config.run.mode {
        RunMode::Deterministic => run_deterministic(config, out_dir, |_| Ok(())),
        RunMode::Parallel => run_parallel(config, out_dir),
    }
}

struct Roles {
    env: Box<dyn Environment>,
    model_replay: ModelReplay,
    policy_replay: PolicyReplay,
    world_model: WorldModel,
    learner: Learner,
    actor_rng: ChaCha8Rng,
}

fn build_roles(config: &RunConfig) -> Result<Roles> {
    config.validate()?;
    let seed = config.run.seed;
    let env = make_env(&config.run.env)?;
    let (sd, ad) = (env.spec().state_dim, env.spec().action_dim);
    Ok(Roles {
        model_replay: ModelReplay::new(config.model_replay, derive_seed(seed, streams::MODEL_REPLAY)),
        policy_replay: PolicyReplay::new(config.policy_replay, derive_seed(seed, streams::POLICY_REPLAY)),
        world_model: WorldModel::new(sd, ad, &config.worldmodel, derive_seed(seed, streams::WORLD_MODEL)),
        learner: Learner::new(sd, ad, config.learner.clone(), derive_seed(seed, streams::LEARNER)),
        actor_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::ACTOR)),
        env,
    })
}

struct Outputs {
    snapshot_dir: PathBuf,
    metrics_path: PathBuf,
    metrics: MetricsWriter,
    snapshots: Vec<PathBuf>,
    records: Vec<EpisodeRecord>,
}

impl Outputs {
    fn create(out_dir: &Path) -> Result<Self> {
        let snapshot_dir = out_dir.join("snapshots");
        fs::create_dir_all(&snapshot_dir)?;
        let metrics_path = out_dir.join("metrics.csv");
        Ok(Self {
            metrics: MetricsWriter::create(&metrics_path)?,
            snapshot_dir,
            metrics_path,
            snapshots: Vec::new(),
            records: Vec::new(),
        })
    }

    fn finish_episode(
        &mut self,
        config: &RunConfig,
        record: EpisodeRecord,
        policy: &GaussianPolicy,
    ) -> Result<()> {
        self.metrics.append(&record)?;
        let ep = record.episode;
        self.records.push(record);
        if ep % config.run.snapshot_every == 0 {
            let meta = json!({
                "kind": "policy",
                "episode": ep,
                "run_id": config.run.run_id,
                "total_episodes": config.run.total_episodes,
                "env": config.run.env,
            });
            self.snapshots.push(snapshot(policy, ep, &self.snapshot_dir, meta)?);
        }
        Ok(())
    }

    fn into_outputs(self) -> RunOutputs {
        RunOutputs {
            snapshot_dir: self.snapshot_dir,
            metrics_path: self.metrics_path,
            snapshots: self.snapshots,
            records: self.records,
        }
    }
}

fn episode_curiosity(wm: &WorldModel, episode: &[Transition]) -> Result<f64> {
    episode.iter().map(|t| wm.curiosity_reward(t)).sum()
}

/// Single-threaded run with a fixed per-episode schedule. `observer` runs after
/// each episode's metrics row is written; an error from it halts the run.
pub fn run_deterministic<F>(config: &RunConfig, out_dir: &Path, mut observer: F) -> Result<RunOutputs>
where
    F: FnMut(&EpisodeView<'_>) -> Result<()>,
{
    let mut roles = build_roles(config)?;
    let mut out = Outputs::create(out_dir)?;
    let run = &config.run;
    let mut ids = IdAllocator::new();
    let mut actor = roles.learner.policy.clone();
    let mut model_loss = f64::NAN;

    for ep in 1..=run.total_episodes {
        let rng = &mut roles.actor_rng;
        let episode = rollout(roles.env.as_mut(), episode_reset_seed(run.seed, ep), |s| {
            actor.act(s, rng)
        })?;
        let curiosity_return = episode_curiosity(&roles.world_model, &episode)?;
        for chunk in chunk_episode(&episode, run.trajectory_len, &mut ids) {
            roles.model_replay.push(chunk);
        }

        for _ in 0..run.model_updates_per_episode {
            if roles.model_replay.len() < run.warmup {
                break;
            }
            let Ok(batch) = roles.model_replay.sample(run.batch_size) else {
                break;
            };
            let trajs: Vec<_> = batch.iter().map(|t| (**t).clone()).collect();
            let outcome = roles.world_model.label_and_update(&trajs)?;
            model_loss = outcome.loss;
            roles.policy_replay.push_batch(outcome.labeled);
        }
        for _ in 0..run.policy_updates_per_episode {
            let Ok(batch) = roles.policy_replay.sample(roles.learner.config.batch_size) else {
                break;
            };
            roles.learner.step(&batch)?;
        }
        actor.clone_from(&roles.learner.policy);

        let record = EpisodeRecord {
            episode: ep,
            curiosity_return,
            episode_len: episode.len(),
            model_loss,
            model_version: roles.world_model.version(),
            policy_updates: roles.learner.steps(),
        };
        out.finish_episode(config, record.clone(), &actor)?;
        observer(&EpisodeView {
            record: &record,
            transitions: &episode,
            model_replay: &roles.model_replay,
            policy_replay: &roles.policy_replay,
            world_model: &roles.world_model,
            policy: &actor,
        })?;
    }
    log::info!(
        "run {} finished: {} episodes, {} snapshots",
        run.run_id,
        run.total_episodes,
        out.snapshots.len()
    );
    Ok(out.into_outputs())
}

/// Latest model learner state, read by the actor for its metrics row only.
struct ModelStatus {
    model: WorldModel,
    loss: f64,
}

/// Actor, model learner and policy learner on three threads. Learners run
/// free until the actor has collected `total_episodes`.
pub fn run_parallel(config: &RunConfig, out_dir: &Path) -> Result<RunOutputs> {
    let Roles {
        mut env,
        model_replay,
        policy_replay,
        world_model,
        mut learner,
        mut actor_rng,
    } = build_roles(config)?;
    let mut out = Outputs::create(out_dir)?;
    let run = &config.run;

    let model_replay = Shared::new(model_replay);
    let policy_replay = Shared::new(policy_replay);
    let mailbox = Mailbox::new(learner.policy.clone());
    let status = Mailbox::new(ModelStatus {
        model: world_model.clone(),
        loss: f64::NAN,
    });
    let policy_steps = AtomicU64::new(0);
    let stop = AtomicBool::new(false);

    let result = std::thread::scope(|scope| {
        let model_thread = scope.spawn(|| -> Result<()> {
            let mut wm = world_model;
            while !stop.load(Ordering::Acquire) {
                let batch = {
                    let mut replay = model_replay.lock();
                    if replay.len() < run.warmup {
                        None
                    } else {
                        replay.sample(run.batch_size).ok()
                    }
                };
                let Some(batch) = batch else {
                    std::thread::yield_now();
                    continue;
                };
                let trajs: Vec<_> = batch.iter().map(|t| (**t).clone()).collect();
                let outcome = wm.label_and_update(&trajs).inspect_err(|_| {
                    stop.store(true, Ordering::Release);
                })?;
                policy_replay.lock().push_batch(outcome.labeled);
                status.publish(ModelStatus {
                    model: wm.clone(),
                    loss: outcome.loss,
                });
            }
            Ok(())
        });
        let policy_thread = scope.spawn(|| -> Result<()> {
            while !stop.load(Ordering::Acquire) {
                let batch = policy_replay.lock().sample(learner.config.batch_size).ok();
                let Some(batch) = batch else {
                    std::thread::yield_now();
                    continue;
                };
                learner.step(&batch).inspect_err(|_| {
                    stop.store(true, Ordering::Release);
                })?;
                policy_steps.store(learner.steps(), Ordering::Release);
                mailbox.publish(learner.policy.clone());
            }
            Ok(())
        });

        let actor_result = (|| -> Result<()> {
            let mut ids = IdAllocator::new();
            for ep in 1..=run.total_episodes {
                if stop.load(Ordering::Acquire) {
                    break;
                }
                let actor = mailbox.latest();
                let episode = rollout(env.as_mut(), episode_reset_seed(run.seed, ep), |s| {
                    actor.act(s, &mut actor_rng)
                })?;
                let st = status.latest();
                let curiosity_return = episode_curiosity(&st.model, &episode)?;
                {
                    let mut replay = model_replay.lock();
                    for chunk in chunk_episode(&episode, run.trajectory_len, &mut ids) {
                        replay.push(chunk);
                    }
                }
                let record = EpisodeRecord {
                    episode: ep,
                    curiosity_return,
                    episode_len: episode.len(),
                    model_loss: st.loss,
                    model_version: st.model.version(),
                    policy_updates: policy_steps.load(Ordering::Acquire),
                };
                out.finish_episode(config, record, &mailbox.latest())?;
            }
            Ok(())
        })();
        stop.store(true, Ordering::Release);
        let model_result = model_thread.join().expect("model learner panicked");
        let policy_result = policy_thread.join().expect("policy learner panicked");
        actor_result.and(model_result).and(policy_result)
    });
    result?;
    Ok(out.into_outputs())
}
