use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    aggregate, feedback_for, fit_reward_model, offline_update, reward_samples, OfflineConfig, RewardModel,
    TrainingBatch,
};
use crate::error::{param_err, Error, Result};
use crate::fpcore::{
    hash_id, leak_check, DesensitizedSummary, EpisodeOutcome, FeedbackTuple, IdHash, SimilarityStats, SwitchKind,
};
use crate::policy::{
    ppo_update, rollout, ActMode, EpisodeEnv, PolicyAction, PolicyModel, PpoConfig, PpoEpisode, PpoStats,
    RewardWeights, RolloutConfig, Trajectory, STATE_DIM,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudConfig {
    /// Total rounds N.
    pub rounds: u32,
    /// Edges receive the cloud policy every this many rounds.
    pub distill_period: u32,
    /// Rollouts per scenario per round.
    pub episodes_per_env: u32,
    pub rm_epochs: usize,
    pub rm_step_size: f64,
    /// Chance that an edge is offline in a round; offline edges skip the
    /// upload and personalise with an offline update on their local log.
    pub offline_prob: f64,
    pub ppo: PpoConfig,
    pub rollout: RolloutConfig,
    pub offline: OfflineConfig,
    pub seed: u64,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            distill_period: 2,
            episodes_per_env: 4,
            rm_epochs: 50,
            rm_step_size: 0.01,
            offline_prob: 0.0,
            ppo: PpoConfig {
                epochs: 8,
                ..PpoConfig::default()
            },
            rollout: RolloutConfig::default(),
            offline: OfflineConfig::default(),
            seed: 0,
        }
    }
}

impl CloudConfig {
    pub fn validate(&self) -> Result<()> {
        if self.distill_period == 0 {
            return Err(param_err("distill_period", "must be >= 1"));
        }
        if self.episodes_per_env == 0 {
            return Err(param_err("episodes_per_env", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.offline_prob) {
            return Err(param_err("offline_prob", "must be in [0, 1]"));
        }
        self.ppo.validate()?;
        self.rollout.validate()
    }
}

/// One scenario an edge replays, with what the privacy gate must not let
/// through.
#[derive(Clone, Debug)]
pub struct EdgeEpisode {
    pub env: EpisodeEnv,
    /// Raw identifiers seen on this trace (BSSIDs, cell ids).
    pub identifiers: Vec<String>,
    /// Wall-clock start of the session, seconds since the epoch.
    pub session_start: f64,
}

#[derive(Clone, Debug)]
pub struct EdgeAgent {
    /// Raw device name; only its salted hash leaves the edge.
    pub name: String,
    pub salt: u64,
    pub policy: PolicyModel,
    pub version: u32,
    pub episodes: Vec<EdgeEpisode>,
    /// Trajectory log of the latest round.
    pub local_log: String,
}

struct EdgeOutput {
    frames: Vec<String>,
    rewards: Vec<f64>,
    tts: Vec<f64>,
    delta: Vec<f64>,
}

pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

/// Reward of a trajectory with the oracle feedback always counted.
fn oracle_reward(t: &Trajectory, w: &RewardWeights) -> f64 {
    let steps: f64 = t.steps.iter().map(|s| s.reward()).sum();
    steps + w.eta * t.outcome.delta_time + w.gamma * t.outcome.hf
}

impl EdgeAgent {
    pub fn new(name: impl Into<String>, salt: u64, policy: PolicyModel, episodes: Vec<EdgeEpisode>) -> Self {
        Self {
            name: name.into(),
            salt,
            policy,
            version: 0,
            episodes,
            local_log: String::new(),
        }
    }

    pub fn edge_hash(&self) -> IdHash {
        hash_id(self.salt, self.name.as_bytes())
    }

    fn summarize(&self, traj: &Trajectory, session: IdHash) -> DesensitizedSummary {
        let sims: Vec<f64> = traj.steps.iter().map(|s| s.state.similarity).collect();
        let o = &traj.outcome;
        DesensitizedSummary {
            version: self.version,
            edge_id: self.edge_hash(),
            session,
            switch_kind: (!o.censored).then_some(SwitchKind::WifiToCell),
            label_offset: (!o.censored).then_some(o.completion),
            prototype_hashes: Vec::new(),
            ap_hashes: Vec::new(),
            feature_means: Vec::new(),
            window_offsets: Vec::new(),
            similarity: Some(SimilarityStats {
                mean: sims.iter().sum::<f64>() / sims.len() as f64,
                max: sims.iter().cloned().fold(0.0, f64::max),
            }),
            tuples: traj
                .steps
                .iter()
                .map(|s| FeedbackTuple {
                    state: s.features.to_vec(),
                    action: s.action.index(),
                    hf: s.hf,
                    offset: s.t,
                })
                .collect(),
            outcome: Some(EpisodeOutcome {
                tts: o.tts,
                delta_time: o.delta_time,
                censored: o.censored,
                rollbacks: o.rollbacks,
            }),
        }
    }

    fn play_round(&mut self, round: u32, index: usize, cfg: &CloudConfig) -> Result<EdgeOutput> {
        let mut out = EdgeOutput {
            frames: Vec::new(),
            rewards: Vec::new(),
            tts: Vec::new(),
            delta: Vec::new(),
        };
        self.local_log.clear();
        for (j, ep) in self.episodes.iter().enumerate() {
            for r in 0..cfg.episodes_per_env {
                let seed = mix(&[cfg.seed, round as u64, index as u64, j as u64, r as u64]);
                let traj = rollout(&self.policy, &ep.env, &cfg.rollout, ActMode::Sample, seed)?;
                out.rewards.push(oracle_reward(&traj, &cfg.rollout.weights));
                out.tts.push(traj.outcome.tts);
                out.delta.push(traj.outcome.delta_time);
                self.local_log.push_str(&traj.to_log());
                let session = hash_id(self.salt, format!("{}/{round}/{j}/{r}", self.name).as_bytes());
                let frame = self.summarize(&traj, session).to_frame();
                let mut raw = ep.identifiers.clone();
                raw.push(self.name.clone());
                leak_check(&frame, &raw, &[ep.session_start])?;
                out.frames.push(frame);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, round as u64, index as u64, 0x0ff]));
        if cfg.offline_prob > 0.0 && rng.gen::<f64>() < cfg.offline_prob {
            self.policy = offline_update(&self.policy, &self.local_log, &cfg.offline)?.0;
            out.frames.clear();
        }
        Ok(out)
    }

    /// Applies a distillation message.
    pub fn receive(&mut self, message: &str) -> Result<()> {
        let (policy, version) = PolicyModel::from_text(message)?;
        if version < self.version {
            return Err(param_err("version", format!("{version} older than held {}", self.version)));
        }
        self.policy = policy;
        self.version = version;
        Ok(())
    }
}

/// Distillation message: the policy's named-tensor text with its version.
/// Edge and cloud share one architecture, so distillation is a parameter
/// copy.
pub fn distill_message(policy: &PolicyModel, version: u32) -> String {
    policy.to_text(version)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundStats {
    pub round: u32,
    /// Mean episode reward with oracle feedback always counted.
    pub mean_reward: f64,
    pub mean_tts: f64,
    pub mean_delta_time: f64,
    pub episodes: usize,
    pub rm_loss: Option<f64>,
    pub direct_hf: usize,
    pub substituted_hf: usize,
    pub ppo: Option<PpoStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundState {
    pub round: u32,
    pub total_rounds: u32,
    pub cloud_policy: PolicyModel,
    pub cloud_version: u32,
    pub reward_model: RewardModel,
    /// Cloud snapshots still held by some edge, for behaviour log-probs.
    pub snapshots: BTreeMap<u32, PolicyModel>,
    pub edge_versions: Vec<u32>,
    /// Frames received in the latest round.
    pub inbox: Vec<String>,
    pub history: Vec<RoundStats>,
}

impl RoundState {
    pub fn new(policy: PolicyModel, reward_model: RewardModel, total_rounds: u32, edges: usize) -> Self {
        let mut snapshots = BTreeMap::new();
        snapshots.insert(0, policy.clone());
        Self {
            round: 0,
            total_rounds,
            cloud_policy: policy,
            cloud_version: 0,
            reward_model,
            snapshots,
            edge_versions: vec![0; edges],
            inbox: Vec::new(),
            history: Vec::new(),
        }
    }
}

/// PPO input rebuilt from an aggregated batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assembly {
    pub episodes: Vec<PpoEpisode>,
    /// Feedback used per tuple, in batch order; `None` when none applies.
    pub feedback: Vec<Option<f64>>,
    pub direct: usize,
    pub substituted: usize,
}

/// Rebuilds per-step rewards from uploaded tuples. Every step earns
/// `λ·sim`; feedback on an earlier step (a reverted switch) adds `γ·hf`;
/// the last step adds `η·Δtime + γ·hf`, with the reward model filling in
/// missing feedback, plus the rollback penalty when a censored episode
/// ended on a reverted Handover.
pub fn assemble_episodes(
    batch: &TrainingBatch,
    rm: &RewardModel,
    weights: &RewardWeights,
    snapshots: &BTreeMap<u32, PolicyModel>,
) -> Result<Assembly> {
    let mut asm = Assembly::default();
    for ep in &batch.episodes {
        let (Some(outcome), false) = (ep.outcome, ep.tuples.is_empty()) else {
            asm.feedback.extend(ep.tuples.iter().map(|_| None));
            continue;
        };
        let behaviour = snapshots
            .get(&ep.version)
            .ok_or_else(|| param_err("version", format!("no snapshot for policy version {}", ep.version)))?;
        let n = ep.tuples.len();
        let mut pe = PpoEpisode {
            features: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            old_log_probs: Vec::with_capacity(n),
        };
        for (i, t) in ep.tuples.iter().enumerate() {
            let features: [f64; STATE_DIM] = t
                .state
                .clone()
                .try_into()
                .map_err(|_| param_err("tuple", format!("state needs {STATE_DIM} features")))?;
            let fb = feedback_for(t, rm);
            match t.hf.value() {
                Some(_) => asm.direct += 1,
                None if fb.is_some() => asm.substituted += 1,
                None => {}
            }
            asm.feedback.push(fb);
            let hf = fb.unwrap_or(0.0);
            let mut r = weights.lambda * features[0];
            if i + 1 < n {
                r += weights.gamma * hf;
            } else {
                r += weights.eta * outcome.delta_time + weights.gamma * hf;
                if outcome.censored && t.action == PolicyAction::Handover.index() {
                    r -= weights.gamma;
                }
            }
            pe.old_log_probs.push(behaviour.log_probs(&features)[t.action]);
            pe.features.push(features);
            pe.actions.push(t.action);
            pe.rewards.push(r);
        }
        asm.episodes.push(pe);
    }
    Ok(asm)
}

/// One cloud-edge round: edge rollouts and uploads, cloud aggregation,
/// reward-model fit, PPO, and distillation every `distill_period` rounds.
pub fn run_round(state: &RoundState, edges: &mut [EdgeAgent], cfg: &CloudConfig) -> Result<RoundState> {
    cfg.validate()?;
    if state.round >= state.total_rounds {
        return Err(Error::RoundBudgetExhausted(state.total_rounds as usize));
    }
    if edges.len() != state.edge_versions.len() {
        return Err(param_err("edges", "count differs from the round state"));
    }
    let round = state.round;
    let outputs = edges
        .par_iter_mut()
        .enumerate()
        .map(|(i, e)| e.play_round(round, i, cfg))
        .collect::<Result<Vec<_>>>()?;

    let inbox: Vec<String> = outputs.iter().flat_map(|o| o.frames.iter().cloned()).collect();
    let summaries = inbox
        .iter()
        .map(|f| DesensitizedSummary::from_frame(f).map(|(s, _)| s))
        .collect::<Result<Vec<_>>>()?;
    let batch = aggregate(&summaries);

    let samples = reward_samples(&batch);
    let (reward_model, rm_loss) = if samples.is_empty() {
        (state.reward_model.clone(), None)
    } else {
        let (m, _) = fit_reward_model(&state.reward_model, &samples, cfg.rm_epochs, cfg.rm_step_size)?;
        let loss = m.loss_and_grad(&samples).0;
        (m, Some(loss))
    };
    let asm = assemble_episodes(&batch, &reward_model, &cfg.rollout.weights, &state.snapshots)?;

    let mut next = state.clone();
    next.reward_model = reward_model;
    next.inbox = inbox;
    let mut ppo = None;
    if !asm.episodes.is_empty() {
        let pcfg = PpoConfig {
            seed: mix(&[cfg.ppo.seed, cfg.seed, round as u64]),
            ..cfg.ppo.clone()
        };
        let (policy, stats) = ppo_update(&state.cloud_policy, &asm.episodes, &pcfg)?;
        next.cloud_policy = policy;
        next.cloud_version += 1;
        next.snapshots.insert(next.cloud_version, next.cloud_policy.clone());
        ppo = Some(stats);
    }
    if (round + 1) % cfg.distill_period == 0 {
        let msg = distill_message(&next.cloud_policy, next.cloud_version);
        for e in edges.iter_mut() {
            e.receive(&msg)?;
        }
    }
    next.edge_versions = edges.iter().map(|e| e.version).collect();
    let keep: Vec<u32> = next.edge_versions.clone();
    let cloud_version = next.cloud_version;
    next.snapshots.retain(|v, _| *v == cloud_version || keep.contains(v));

    let rewards: Vec<f64> = outputs.iter().flat_map(|o| o.rewards.iter().copied()).collect();
    let n = rewards.len().max(1) as f64;
    next.history.push(RoundStats {
        round,
        mean_reward: rewards.iter().sum::<f64>() / n,
        mean_tts: outputs.iter().flat_map(|o| o.tts.iter()).sum::<f64>() / n,
        mean_delta_time: outputs.iter().flat_map(|o| o.delta.iter()).sum::<f64>() / n,
        episodes: rewards.len(),
        rm_loss,
        direct_hf: asm.direct,
        substituted_hf: asm.substituted,
        ppo,
    });
    next.round += 1;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpcore::{HfField, Normalization};
    use crate::simworld::{RawTrace, SimConfig};

    fn env(drop_at: usize) -> EpisodeEnv {
        let samples: Vec<(f64, f64)> = (0..40)
            .map(|t| (t as f64, if t < drop_at { -55.0 } else { -90.0 }))
            .collect();
        let mut trace = RawTrace::from_rssi(&samples);
        trace.truth.degradation_onset = drop_at as f64;
        let sims = (0..40).map(|t| if t + 3 >= drop_at { 0.9 } else { 0.2 }).collect();
        EpisodeEnv::with_similarity(&trace, sims, &SimConfig::default(), Normalization::default()).unwrap()
    }

    fn edges() -> Vec<EdgeAgent> {
        (0..2)
            .map(|i| {
                EdgeAgent::new(
                    format!("phone-{i}"),
                    77 + i as u64,
                    PolicyModel::seeded(1),
                    vec![EdgeEpisode {
                        env: env(15 + 3 * i),
                        identifiers: vec!["02:aa:bb:cc:dd:ee".into()],
                        session_start: 1_726_000_000.0 + i as f64,
                    }],
                )
            })
            .collect()
    }

    fn cfg(distill_period: u32) -> CloudConfig {
        CloudConfig {
            distill_period,
            ppo: PpoConfig {
                epochs: 2,
                ..PpoConfig::default()
            },
            rm_epochs: 10,
            ..CloudConfig::default()
        }
    }

    fn start(n: u32) -> RoundState {
        RoundState::new(PolicyModel::seeded(1), RewardModel::seeded(2), n, 2)
    }

    #[test]
    fn immediate_distillation_syncs_edges() {
        let mut e = edges();
        let s = run_round(&start(3), &mut e, &cfg(1)).unwrap();
        assert_eq!(s.round, 1);
        assert!(s.edge_versions.iter().all(|v| *v == s.cloud_version));
        assert_eq!(e[0].policy, s.cloud_policy);
    }

    #[test]
    fn distillation_is_gated_by_period() {
        let mut e = edges();
        let s = run_round(&start(3), &mut e, &cfg(3)).unwrap();
        assert_eq!(s.edge_versions, vec![0, 0]);
        assert_eq!(s.cloud_version, 1);
        assert!(s.snapshots.contains_key(&0));
    }

    #[test]
    fn rounds_are_reproducible_and_monotone() {
        let run = || {
            let mut e = edges();
            let mut s = start(4);
            let mut versions = Vec::new();
            for _ in 0..4 {
                s = run_round(&s, &mut e, &cfg(2)).unwrap();
                versions.push((s.cloud_version, s.edge_versions.clone()));
            }
            (s, versions)
        };
        let (a, va) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        for w in va.windows(2) {
            assert!(w[1].0 >= w[0].0);
            for (x, y) in w[0].1.iter().zip(&w[1].1) {
                assert!(y >= x);
            }
        }
        for (c, ev) in &va {
            assert!(ev.iter().all(|v| v <= c));
        }
        let mut e = edges();
        assert!(matches!(run_round(&a, &mut e, &cfg(2)), Err(Error::RoundBudgetExhausted(_))));
    }

    #[test]
    fn direct_feedback_is_used_verbatim() {
        let mut e = edges();
        let s = run_round(&start(1), &mut e, &cfg(1)).unwrap();
        let summaries: Vec<DesensitizedSummary> = s
            .inbox
            .iter()
            .map(|f| DesensitizedSummary::from_frame(f).unwrap().0)
            .collect();
        let batch = aggregate(&summaries);
        let mut snaps = BTreeMap::new();
        snaps.insert(0, PolicyModel::seeded(1));
        let rm = RewardModel::seeded(3);
        let asm = assemble_episodes(&batch, &rm, &RewardWeights::default(), &snaps).unwrap();
        assert_eq!(asm.feedback.len(), batch.len());
        for (t, fb) in batch.tuples().zip(&asm.feedback) {
            match t.hf {
                HfField::Value(v) => assert_eq!(*fb, Some(v)),
                HfField::Missing => assert_eq!(*fb, Some(rm.predict(&t.state, t.action))),
                HfField::NotApplicable => assert_eq!(*fb, None),
            }
        }
        assert_eq!(asm.direct + asm.substituted, batch.tuples().filter(|t| !matches!(t.hf, HfField::NotApplicable)).count());
    }

    #[test]
    fn rebuilt_rewards_match_edge_rewards() {
        let cfgr = RolloutConfig {
            hf_observe_prob: 1.0,
            ..RolloutConfig::default()
        };
        let e = edges();
        let policy = PolicyModel::seeded(1);
        let mut snaps = BTreeMap::new();
        snaps.insert(0, policy.clone());
        for seed in 0..6 {
            let traj = rollout(&policy, &e[0].episodes[0].env, &cfgr, ActMode::Sample, seed).unwrap();
            let summary = e[0].summarize(&traj, IdHash(seed));
            let parsed = DesensitizedSummary::from_frame(&summary.to_frame()).unwrap().0;
            let asm = assemble_episodes(&aggregate(&[parsed]), &RewardModel::zeros(), &cfgr.weights, &snaps).unwrap();
            let rebuilt: f64 = asm.episodes[0].rewards.iter().sum();
            assert!((rebuilt - traj.total_reward()).abs() < 0.05, "{rebuilt} vs {}", traj.total_reward());
        }
    }

    #[test]
    fn uploads_pass_the_privacy_gate() {
        let mut e = edges();
        let s = run_round(&start(1), &mut e, &cfg(1)).unwrap();
        assert!(!s.inbox.is_empty());
        for f in &s.inbox {
            assert!(!f.contains("phone-"));
            leak_check(f, &["phone-0".into(), "02:aa:bb:cc:dd:ee".into()], &[1_726_000_000.0]).unwrap();
        }
    }

    #[test]
    fn offline_edges_skip_upload() {
        let mut e = edges();
        let c = CloudConfig {
            offline_prob: 1.0,
            ..cfg(5)
        };
        let before = e[0].policy.clone();
        let s = run_round(&start(1), &mut e, &c).unwrap();
        assert!(s.inbox.is_empty());
        assert_eq!(s.cloud_version, 0);
        assert_ne!(e[0].policy, before);
    }
}
