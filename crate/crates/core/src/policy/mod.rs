//! Edge handover policy: state features, actions, the composite reward, the
//! environment rollout and the PPO trainer.

mod ppo;
mod rollout;

pub use ppo::{clip_ratio, clipped_surrogate, gae, ppo_update, PpoConfig, PpoEpisode, PpoStats};
pub use rollout::{
    parse_log, rollout, rollout_scripted, threshold_script, AidtwStack, EpisodeEnv, LoggedEpisode, RolloutConfig,
    Step, Trajectory, TrajectoryOutcome, LOG_TERMINAL_HEADER,
};

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::nn::{log_softmax, Mlp};
use crate::tensorio::{read_tensors, take, write_tensors, NamedTensor};

pub const STATE_DIM: usize = 8;
pub const ACTION_COUNT: usize = 4;
const HIDDEN: usize = 32;
const TENSOR_KIND: &str = "policy";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyAction {
    Hold,
    IncreaseScanRate,
    PreAssociate,
    Handover,
}

impl PolicyAction {
    pub const ALL: [PolicyAction; ACTION_COUNT] = [
        PolicyAction::Hold,
        PolicyAction::IncreaseScanRate,
        PolicyAction::PreAssociate,
        PolicyAction::Handover,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyAction::Hold => "hold",
            PolicyAction::IncreaseScanRate => "increase_scan_rate",
            PolicyAction::PreAssociate => "pre_associate",
            PolicyAction::Handover => "handover",
        }
    }
}

impl fmt::Display for PolicyAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Link {
    Wifi,
    Cell,
}

/// Observation the policy acts on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyState {
    /// Top-1 similarity to the library, in [0, 1].
    pub similarity: f64,
    /// Similarity change over the last three windows.
    pub similarity_trend: f64,
    /// Latest scanned RSSI mapped onto [−1, 1].
    pub rssi_norm: f64,
    pub gnss_fix: bool,
    /// Steps per second.
    pub step_rate: f64,
    /// Seconds since the last WiFi scan.
    pub scan_age: f64,
    pub link: Link,
    /// Whether a candidate link is already prepared.
    pub pre_associated: bool,
}

impl PolicyState {
    pub fn features(&self) -> [f64; STATE_DIM] {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        [
            self.similarity,
            self.similarity_trend,
            self.rssi_norm,
            flag(self.gnss_fix),
            self.step_rate / 2.0,
            self.scan_age / 2.0,
            flag(self.link == Link::Cell),
            flag(self.pre_associated),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.similarity) {
            return Err(param_err("similarity", format!("{} outside [0, 1]", self.similarity)));
        }
        if self.features().iter().any(|v| !v.is_finite()) {
            return Err(param_err("state", "non-finite feature"));
        }
        Ok(())
    }
}

/// Weights of the composite reward `η·Δtime + λ·sim + γ·hf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            eta: 1.0,
            lambda: 0.5,
            gamma: 2.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.eta, self.lambda, self.gamma];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(param_err("reward weights", "must be finite and >= 0"));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(param_err("reward weights", "must not all be zero"));
        }
        Ok(())
    }
}

pub fn composite_reward(w: &RewardWeights, delta_time: f64, sim: f64, hf: f64) -> f64 {
    w.eta * delta_time + w.lambda * sim + w.gamma * hf
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub action: PolicyAction,
    pub log_prob: f64,
    pub value: f64,
    pub log_probs: [f64; ACTION_COUNT],
}

/// Actor (state → 4 logits) and critic (state → value), one hidden layer
/// each.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PolicyModel {
    pub fn zeros() -> Self {
        Self {
            actor: Mlp::zeros(STATE_DIM, HIDDEN, ACTION_COUNT),
            critic: Mlp::zeros(STATE_DIM, HIDDEN, 1),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            actor: Mlp::init(STATE_DIM, HIDDEN, ACTION_COUNT, 0.01, &mut rng),
            critic: Mlp::init(STATE_DIM, HIDDEN, 1, 1.0, &mut rng),
        }
    }

    pub fn log_probs(&self, features: &[f64; STATE_DIM]) -> [f64; ACTION_COUNT] {
        let lp = log_softmax(&self.actor.output(features));
        [lp[0], lp[1], lp[2], lp[3]]
    }

    pub fn value(&self, features: &[f64; STATE_DIM]) -> f64 {
        self.critic.output(features)[0]
    }

    /// Flat parameters: actor then critic.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.actor.params().to_vec();
        p.extend_from_slice(self.critic.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let na = self.actor.param_count();
        if p.len() != na + self.critic.param_count() {
            return Err(param_err("policy", "parameter count mismatch"));
        }
        self.actor.params_mut().copy_from_slice(&p[..na]);
        self.critic.params_mut().copy_from_slice(&p[na..]);
        Ok(())
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut t = self.actor.to_tensors("actor");
        t.extend(self.critic.to_tensors("critic"));
        t
    }

    pub fn from_tensors(t: &[NamedTensor]) -> Result<Self> {
        Ok(Self {
            actor: Mlp::from_tensors(t, "actor", STATE_DIM, HIDDEN, ACTION_COUNT)?,
            critic: Mlp::from_tensors(t, "critic", STATE_DIM, HIDDEN, 1)?,
        })
    }

    /// Named-tensor text with the policy version as a scalar.
    pub fn to_text(&self, version: u32) -> String {
        let mut t = self.to_tensors();
        t.push(NamedTensor::scalar("version", version as f64));
        write_tensors(TENSOR_KIND, &t)
    }

    pub fn from_text(text: &str) -> Result<(Self, u32)> {
        let t = read_tensors(text, TENSOR_KIND)?;
        let version = take(&t, "version", &[1])?[0] as u32;
        Ok((Self::from_tensors(&t)?, version))
    }
}

/// Chooses an action: sampled from the softmax or the argmax (lowest index
/// on ties).
pub fn act<R: Rng>(model: &PolicyModel, state: &PolicyState, mode: ActMode, rng: &mut R) -> Result<Decision> {
    state.validate()?;
    Ok(act_features(model, &state.features(), mode, rng))
}

pub(crate) fn act_features<R: Rng>(
    model: &PolicyModel,
    features: &[f64; STATE_DIM],
    mode: ActMode,
    rng: &mut R,
) -> Decision {
    let lp = model.log_probs(features);
    let idx = match mode {
        ActMode::Greedy => {
            let mut best = 0;
            for k in 1..ACTION_COUNT {
                if lp[k] > lp[best] {
                    best = k;
                }
            }
            best
        }
        ActMode::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = ACTION_COUNT - 1;
            for (k, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    pick = k;
                    break;
                }
            }
            pick
        }
    };
    Decision {
        action: PolicyAction::ALL[idx],
        log_prob: lp[idx],
        value: model.value(features),
        log_probs: lp,
    }
}
