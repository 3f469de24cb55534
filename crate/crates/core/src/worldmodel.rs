//! Forward-dynamics world model: predicts the next normalized state from
//! `(state, action)`, turns its own prediction error into a bounded curiosity
//! reward, and learns from the batches it labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{self, Activation, AdamState, Batch, Bundle, MlpParams, MlpSpec};
use crate::types::{LabeledTrajectory, Trajectory, Transition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldModelConfig {
    pub lr: f64,
    pub reward_scale: f64,
    /// Hidden widths, each followed by elu.
    pub hidden: Vec<usize>,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            reward_scale: 10.0,
            hidden: vec![256, 256],
        }
    }
}

impl WorldModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.reward_scale > 0.0) {
            return Err(Error::Config("worldmodel lr and reward_scale must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("worldmodel hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Maps a mean squared prediction error to a reward in `[0, 1)`.
#[inline]
pub fn squash_error(mse: f64, reward_scale: f64) -> f64 {
    let r = (reward_scale * mse).tanh();
    // tanh rounds to exactly 1.0 for large arguments in f64
    if r >= 1.0 {
        1.0 - f64::EPSILON / 2.0
    } else {
        r
    }
}

#[derive(Clone, Debug)]
pub struct WorldModel {
    spec: MlpSpec,
    params: MlpParams,
    adam: AdamState,
    version: u64,
    state_dim: usize,
    action_dim: usize,
    pub lr: f64,
    pub reward_scale: f64,
}

/// Result of one labeling + learning step.
#[derive(Clone, Debug)]
pub struct LabelOutcome {
    pub labeled: Vec<LabeledTrajectory>,
    /// Sum-of-squares prediction loss of the batch before the update.
    pub loss: f64,
}

impl WorldModel {
    pub fn new(state_dim: usize, action_dim: usize, cfg: &WorldModelConfig, seed: u64) -> Self {
        let spec = Self::spec_for(state_dim, action_dim, &cfg.hidden);
        let params = MlpParams::init(&spec, seed);
        Self::from_parts(spec, params, state_dim, action_dim, cfg)
    }

    pub fn spec_for(state_dim: usize, action_dim: usize, hidden: &[usize]) -> MlpSpec {
        MlpSpec::new(state_dim + action_dim, hidden, Activation::Elu, &[], state_dim)
    }

    pub fn from_parts(
        spec: MlpSpec,
        params: MlpParams,
        state_dim: usize,
        action_dim: usize,
        cfg: &WorldModelConfig,
    ) -> Self {
        let adam = AdamState::new(params.tensors());
        Self {
            spec,
            params,
            adam,
            version: 0,
            state_dim,
            action_dim,
            lr: cfg.lr,
            reward_scale: cfg.reward_scale,
        }
    }

    /// Number of gradient updates applied so far.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(s, a)?;
        let input: Vec<f64> = s.iter().chain(a).copied().collect();
        neural::forward(&self.params, &self.spec, &input)
    }

    /// `tanh(reward_scale * mean_i (prediction_i - s_next_i)^2)`.
    pub fn curiosity_reward(&self, t: &Transition) -> Result<f64> {
        let pred = self.predict(&t.s, &t.a)?;
        Ok(squash_error(mean_sq_err(&pred, &t.s_next), self.reward_scale))
    }

    /// Labels every transition of `batch` with the current parameters, then applies
    /// exactly one Adam step on the batch's summed squared prediction error.
    ///
    /// On a non-finite loss or gradient the model is left at its current version.
    pub fn label_and_update(&mut self, batch: &[Trajectory]) -> Result<LabelOutcome> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("label_and_update needs a non-empty batch".into()));
        }
        let (inputs, targets) = self.stack(batch.iter().flat_map(|t| &t.transitions))?;

        let cache = neural::forward_cached(&self.params, &self.spec, &inputs)?;
        let pred = cache.output();
        let mut d_out = Batch::zeros(pred.rows, pred.cols);
        let mut loss = 0.0;
        let mut rewards = Vec::with_capacity(pred.rows);
        for ((p, t), d) in pred
            .iter_rows()
            .zip(targets.iter_rows())
            .zip(d_out.data.chunks_exact_mut(pred.cols))
        {
            let mut sq = 0.0;
            for ((&pi, &ti), di) in p.iter().zip(t).zip(d.iter_mut()) {
                let e = pi - ti;
                sq += e * e;
                *di = 2.0 * e;
            }
            loss += sq;
            rewards.push(squash_error(sq / p.len() as f64, self.reward_scale));
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                what: "world model loss",
                value: loss,
            });
        }

        let labeled = {
            let mut offset = 0;
            batch
                .iter()
                .map(|traj| {
                    let n = traj.len();
                    let r = rewards[offset..offset + n].to_vec();
                    offset += n;
                    LabeledTrajectory::new(traj.clone(), r, self.version)
                })
                .collect::<Result<Vec<_>>>()?
        };

        let grads = neural::backward(&self.params, &self.spec, &cache, &d_out)?;
        self.adam
            .step(self.params.tensors_mut(), grads.tensors(), self.lr)?;
        self.version += 1;
        Ok(LabelOutcome { labeled, loss })
    }

    /// Summed squared prediction error over all transitions, without updating.
    pub fn loss(&self, transitions: &[Transition]) -> Result<f64> {
        let (inputs, targets) = self.stack(transitions.iter())?;
        let pred = neural::forward_batch(&self.params, &self.spec, &inputs)?;
        Ok(pred
            .data
            .iter()
            .zip(&targets.data)
            .map(|(p, t)| (p - t) * (p - t))
            .sum())
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut b = Bundle::new(serde_json::json!({
            "kind": "world_model",
            "version": self.version,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "lr": self.lr,
            "reward_scale": self.reward_scale,
        }));
        b.add_mlp("dynamics", &self.spec, &self.params);
        b
    }

    /// Writes a checkpoint to `<stem>.manifest` / `<stem>.weights`. Optimizer
    /// moments are not stored.
    pub fn save(&self, stem: &Path) -> Result<()> {
        self.to_bundle().save(stem).map(|_| ())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let b = Bundle::load(stem)?;
        let (spec, params) = b.mlp("dynamics")?;
        let meta = &b.metadata;
        let get = |k: &str| {
            meta.get(k).cloned().ok_or_else(|| Error::Format {
                path: stem.to_path_buf(),
                reason: format!("missing metadata {k}"),
            })
        };
        let as_u64 = |v: serde_json::Value| v.as_u64().unwrap_or_default();
        let as_f64 = |v: serde_json::Value| v.as_f64().unwrap_or_default();
        let cfg = WorldModelConfig {
            lr: as_f64(get("lr")?),
            reward_scale: as_f64(get("reward_scale")?),
            hidden: Vec::new(),
        };
        let mut wm = Self::from_parts(
            spec,
            params,
            as_u64(get("state_dim")?) as usize,
            as_u64(get("action_dim")?) as usize,
            &cfg,
        );
        wm.version = as_u64(get("version")?);
        Ok(wm)
    }

    fn stack<'a>(&self, transitions: impl Iterator<Item = &'a Transition>) -> Result<(Batch, Batch)> {
        let in_dim = self.state_dim + self.action_dim;
        let mut inputs = Batch::zeros(0, in_dim);
        let mut targets = Batch::zeros(0, self.state_dim);
        for t in transitions {
            self.check_dims(&t.s, &t.a)?;
            if t.s_next.len() != self.state_dim {
                return Err(Error::DimensionMismatch {
                    context: "world model next state",
                    expected: self.state_dim,
                    actual: t.s_next.len(),
                });
            }
            inputs.data.extend_from_slice(&t.s);
            inputs.data.extend_from_slice(&t.a);
            targets.data.extend_from_slice(&t.s_next);
            inputs.rows += 1;
            targets.rows += 1;
        }
        Ok((inputs, targets))
    }

    fn check_dims(&self, s: &[f64], a: &[f64]) -> Result<()> {
        if s.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "world model state",
                expected: self.state_dim,
                actual: s.len(),
            });
        }
        if a.len() != self.action_dim {
            return Err(Error::DimensionMismatch {
                context: "world model action",
                expected: self.action_dim,
                actual: a.len(),
            });
        }
        Ok(())
    }
}

fn mean_sq_err(pred: &[f64], target: &[f64]) -> f64 {
    // same accumulation order as the batched labeling loop
    let mut sq = 0.0;
    for (p, t) in pred.iter().zip(target) {
        let e = p - t;
        sq += e * e;
    }
    sq / pred.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(hidden: Vec<usize>) -> WorldModelConfig {
        WorldModelConfig {
            hidden,
            ..Default::default()
        }
    }

    fn random_traj(rng: &mut ChaCha8Rng, id: u64, len: usize, sd: usize, ad: usize) -> Trajectory {
        let mut s: Vec<f64> = (0..sd).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let transitions = (0..len)
            .map(|_| {
                let a: Vec<f64> = (0..ad).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let s_next: Vec<f64> = s
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (0.8 * v + 0.3 * a[i % ad]).clamp(-1.0, 1.0))
                    .collect();
                let t = Transition {
                    s: s.clone(),
                    a,
                    s_next: s_next.clone(),
                    terminal: false,
                };
                s = s_next;
                t
            })
            .collect();
        Trajectory { id, transitions }
    }

    #[test]
    fn zero_params_predict_zero() {
        let mut wm = WorldModel::new(3, 2, &cfg(vec![8, 8]), 0);
        wm.params_mut().tensors_mut().flatten().for_each(|v| *v = 0.0);
        assert_eq!(wm.predict(&[0.5, -0.5, 0.1], &[1.0, -1.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn predict_rejects_bad_dims() {
        let wm = WorldModel::new(3, 2, &cfg(vec![4]), 0);
        assert!(wm.predict(&[0.0; 2], &[0.0; 2]).is_err());
        assert!(wm.predict(&[0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn squash_examples() {
        assert_eq!(squash_error(0.0, 10.0), 0.0);
        assert!((squash_error(0.1, 10.0) - 0.761_594_155_955_764_9).abs() < 1e-12);
        for mse in [2.0, 10.0, 1e6, 1e300] {
            let r = squash_error(mse, 10.0);
            assert!(r > 0.9999 && r < 1.0, "{mse} -> {r}");
        }
    }

    #[test]
    fn perfect_prediction_gives_zero_reward_and_no_motion() {
        let mut wm = WorldModel::new(2, 1, &cfg(vec![4]), 0);
        wm.params_mut().tensors_mut().flatten().for_each(|v| *v = 0.0);
        let traj = Trajectory {
            id: 0,
            transitions: vec![Transition {
                s: vec![0.3, -0.2],
                a: vec![0.7],
                s_next: vec![0.0, 0.0],
                terminal: false,
            }],
        };
        let before = wm.params().clone();
        let out = wm.label_and_update(&[traj]).unwrap();
        assert_eq!(out.labeled[0].rewards, vec![0.0]);
        assert_eq!(out.loss, 0.0);
        assert_eq!(wm.params(), &before);
        assert_eq!(wm.version(), 1);
    }

    #[test]
    fn labels_use_pre_update_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch: Vec<Trajectory> = (0..6).map(|i| random_traj(&mut rng, i, 7, 4, 2)).collect();
        let mut wm = WorldModel::new(4, 2, &cfg(vec![16, 16]), 1);
        let frozen = wm.clone();
        let out = wm.label_and_update(&batch).unwrap();
        for lt in &out.labeled {
            assert_eq!(lt.model_version, 0);
            for (t, &r) in lt.trajectory.transitions.iter().zip(&lt.rewards) {
                assert_eq!(r.to_bits(), frozen.curiosity_reward(t).unwrap().to_bits());
            }
        }
        let expected_loss = frozen.loss(&batch.iter().flat_map(|t| t.transitions.clone()).collect::<Vec<_>>()).unwrap();
        assert!((out.loss - expected_loss).abs() <= 1e-9 * expected_loss.max(1.0));
        let again = frozen.clone().label_and_update(&batch).unwrap();
        assert_eq!(again.labeled, out.labeled);
    }

    #[test]
    fn one_step_usually_reduces_batch_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let batch: Vec<Trajectory> = (0..8).map(|i| random_traj(&mut rng, i, 10, 5, 2)).collect();
        let mut improved = 0;
        for seed in 0..100 {
            let mut wm = WorldModel::new(5, 2, &cfg(vec![32, 32]), seed);
            let first: f64 = wm.label_and_update(&batch).unwrap().labeled.iter().flat_map(|l| l.rewards.clone()).sum();
            let second: f64 = batch
                .iter()
                .flat_map(|t| &t.transitions)
                .map(|t| wm.curiosity_reward(t).unwrap())
                .sum();
            if second <= first {
                improved += 1;
            }
        }
        assert!(improved >= 80, "improved in {improved}/100 trials");
    }

    #[test]
    fn learns_identity_dynamics() {
        let sd = 3;
        let ad = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data: Vec<Transition> = (0..10_000)
            .map(|_| {
                let s: Vec<f64> = (0..sd).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Transition {
                    a: vec![rng.gen_range(-1.0..1.0)],
                    s_next: s.clone(),
                    s,
                    terminal: false,
                }
            })
            .collect();
        let mut wm = WorldModel::new(
            sd,
            ad,
            &WorldModelConfig {
                lr: 3e-3,
                hidden: vec![32, 32],
                ..Default::default()
            },
            2,
        );
        for epoch in 0..60 {
            if epoch == 40 {
                wm.lr = 3e-4;
            }
            for (k, chunk) in data.chunks(100).enumerate() {
                let traj = Trajectory {
                    id: (epoch * 100 + k) as u64,
                    transitions: chunk.to_vec(),
                };
                wm.label_and_update(&[traj]).unwrap();
            }
        }
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let s: Vec<f64> = (0..sd).map(|_| rng.gen_range(-0.9..0.9)).collect();
            let p = wm.predict(&s, &[rng.gen_range(-1.0..1.0)]).unwrap();
            worst = p.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
        assert!(worst < 1e-2, "max per-dim error {worst}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut wm = WorldModel::new(3, 2, &cfg(vec![5]), 9);
        wm.label_and_update(&[random_traj(&mut rng, 0, 4, 3, 2)]).unwrap();
        wm.save(&dir.path().join("wm")).unwrap();
        let back = WorldModel::load(&dir.path().join("wm")).unwrap();
        assert_eq!(back.version(), 1);
        assert_eq!(back.params(), wm.params());
        assert_eq!(back.reward_scale, wm.reward_scale);
    }
}
