use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    act_features, ActMode, Decision, Link, PolicyAction, PolicyModel, PolicyState, RewardWeights, ACTION_COUNT,
    STATE_DIM,
};
use crate::align::{match_query, MetricModel};
use crate::error::{param_err, Error, Result};
use crate::filters::{denoise_sequence, select_filter, FilterContext, SelectorModel};
use crate::fpcore::{FingerprintLibrary, FingerprintSequence, HfField, Normalization, PrototypeId, SummaryConfig};
use crate::simworld::{
    baseline_policy, feedback_oracle, fingerprints, tts, GroundTruth, RawTrace, SimConfig, SwitchDecision,
};

/// Everything the edge needs to score live windows against its library.
#[derive(Clone, Debug)]
pub struct AidtwStack {
    pub selector: SelectorModel,
    pub metric: MetricModel,
    pub library: FingerprintLibrary,
    pub band: usize,
    /// Most recent windows forming one query.
    pub window: usize,
    pub summary: SummaryConfig,
}

impl AidtwStack {
    /// Top-1 similarity of the query ending just before each whole second.
    /// Seconds with fewer than two windows of history score 0.
    pub fn similarity_series(&self, trace: &RawTrace) -> Result<Vec<f64>> {
        if self.window < 2 {
            return Err(param_err("window", "must be >= 2"));
        }
        let fps = fingerprints(trace, &self.summary)?;
        let norm = &self.summary.normalization;
        let mut out = vec![0.0; trace.seconds()];
        for (t, slot) in out.iter_mut().enumerate() {
            let w = t.min(self.window);
            if w < 2 || self.library.is_empty() {
                continue;
            }
            let seq = FingerprintSequence::new(fps[t - w..t].to_vec(), 0, PrototypeId(0))?;
            let choice = select_filter(&self.selector, &FilterContext::from_sequence(&seq, norm))?;
            let cleaned = denoise_sequence(&choice, &seq)?;
            if let Some(best) = match_query(&self.metric, &cleaned, &self.library, self.band, 1)?.first() {
                *slot = best.similarity.clamp(0.0, 1.0);
            }
        }
        Ok(out)
    }
}

/// Action effects and reward settings of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub weights: RewardWeights,
    /// Association delay after a PreAssociate, seconds.
    pub pre_assoc_delay: f64,
    /// Default WiFi scan period, seconds.
    pub scan_period: u32,
    /// How long IncreaseScanRate keeps scanning every second.
    pub fast_scan_secs: u32,
    /// A switch is reverted if WiFi is usable again this long after
    /// completion.
    pub revert_window: f64,
    /// Chance that the user answers after a completed switch.
    pub hf_observe_prob: f64,
    /// Similarity trigger of the scripted comparison policy.
    pub tau: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            pre_assoc_delay: 0.5,
            scan_period: 2,
            fast_scan_secs: 5,
            revert_window: 2.0,
            hf_observe_prob: 0.7,
            tau: 0.7,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.pre_assoc_delay >= 0.0) {
            return Err(param_err("pre_assoc_delay", "must be >= 0"));
        }
        if self.scan_period == 0 {
            return Err(param_err("scan_period", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.hf_observe_prob) {
            return Err(param_err("hf_observe_prob", "must be in [0, 1]"));
        }
        if !(self.revert_window >= 0.0) {
            return Err(param_err("revert_window", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(param_err("tau", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// One trace with its per-second observations precomputed, so repeated
/// rollouts only replay the action effects.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeEnv {
    pub duration: f64,
    pub truth: GroundTruth,
    pub baseline_completion: f64,
    pub baseline_censored: bool,
    pub assoc_delay: f64,
    similarity: Vec<f64>,
    scanned_rssi: Vec<f64>,
    gnss_fix: Vec<bool>,
    step_rate: Vec<f64>,
    /// Noiseless connected-AP RSSI per 10 Hz tick.
    clean_rssi: Vec<f64>,
    /// `(time, rsrp)` of every cell sample.
    cell: Vec<(f64, f64)>,
    onset_threshold: f64,
    cell_unusable: f64,
    normalization: Normalization,
}

const WIFI_RSSI_FEATURE: usize = 3;

impl EpisodeEnv {
    pub fn new(trace: &RawTrace, stack: &AidtwStack, cfg: &SimConfig) -> Result<Self> {
        let sims = stack.similarity_series(trace)?;
        Self::with_similarity(trace, sims, cfg, stack.summary.normalization.clone())
    }

    /// Builds the environment from an externally supplied similarity series
    /// (one value per whole second).
    pub fn with_similarity(
        trace: &RawTrace,
        similarity: Vec<f64>,
        cfg: &SimConfig,
        normalization: Normalization,
    ) -> Result<Self> {
        let secs = trace.seconds();
        if secs < 2 {
            return Err(param_err("trace", "shorter than two seconds"));
        }
        if similarity.len() != secs {
            return Err(param_err("similarity", format!("expected {secs} values, got {}", similarity.len())));
        }
        if similarity.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(param_err("similarity", "values must lie in [0, 1]"));
        }
        let base = baseline_policy(trace, &cfg.baseline)?;
        Ok(Self {
            duration: trace.duration,
            truth: trace.truth.clone(),
            baseline_completion: base.completion,
            baseline_censored: base.censored,
            assoc_delay: cfg.baseline.assoc_delay,
            similarity,
            scanned_rssi: (0..secs).map(|t| trace.scanned_rssi_at(t as f64)).collect(),
            gnss_fix: (0..secs)
                .map(|t| trace.gnss_at(t as f64).is_some_and(|g| g.fix))
                .collect(),
            step_rate: (0..secs).map(|t| trace.step_rate(t as f64, 2.0)).collect(),
            clean_rssi: trace.clean_rssi.clone(),
            cell: trace.cell.iter().map(|c| (c.t, c.rsrp)).collect(),
            onset_threshold: cfg.onset_threshold,
            cell_unusable: cfg.radio.cell_unusable_rsrp,
            normalization,
        })
    }

    pub fn seconds(&self) -> usize {
        self.similarity.len()
    }

    pub fn onset(&self) -> f64 {
        self.truth.degradation_onset
    }

    pub fn baseline_tts(&self) -> f64 {
        tts(self.baseline_completion, self.onset())
    }

    pub fn similarity(&self) -> &[f64] {
        &self.similarity
    }

    fn clean_at(&self, t: f64) -> f64 {
        let k = ((t * 10.0) + 1e-9).floor().max(0.0) as usize;
        self.clean_rssi[k.min(self.clean_rssi.len() - 1)]
    }

    fn cell_usable_at(&self, t: f64) -> bool {
        self.cell
            .iter()
            .rev()
            .find(|c| c.0 <= t + 1e-9)
            .map_or(true, |c| c.1 >= self.cell_unusable)
    }

    /// Whether a switch completing at `c` gets reverted: WiFi still (or
    /// again) usable at `c` or `c + window`, or the cell is unusable.
    pub fn reverts(&self, c: f64, window: f64) -> bool {
        let end = self.duration - 0.1;
        let usable = |t: f64| t <= end && self.clean_at(t) >= self.onset_threshold;
        usable(c) || usable(c + window) || !self.cell_usable_at(c.min(end))
    }
}

/// One recorded decision.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub t: f64,
    pub state: PolicyState,
    pub features: [f64; STATE_DIM],
    pub action: PolicyAction,
    pub log_prob: f64,
    pub value: f64,
    /// `λ·sim` term of this step.
    pub sim_reward: f64,
    /// Rollback penalty `−γ` when this step's switch was reverted.
    pub shaping: f64,
    /// Feedback attached to this step for upload.
    pub hf: HfField,
}

impl Step {
    /// Per-step reward (excluding the terminal component).
    pub fn reward(&self) -> f64 {
        self.sim_reward + self.shaping
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryOutcome {
    /// Completion time of the accepted switch, or the trace end.
    pub completion: f64,
    pub censored: bool,
    pub tts: f64,
    pub baseline_tts: f64,
    pub delta_time: f64,
    /// Oracle feedback on the final decision.
    pub hf: f64,
    pub hf_observed: bool,
    pub rollbacks: u32,
    /// `η·Δtime + γ·hf`, with unobserved feedback counting as 0.
    pub terminal_reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub outcome: TrajectoryOutcome,
}

pub const LOG_TERMINAL_HEADER: &str = "TTS,delta_time,HF,R_total";

impl Trajectory {
    /// Rewards per step with the terminal component on the last step.
    pub fn rewards(&self) -> Vec<f64> {
        let mut r: Vec<f64> = self.steps.iter().map(Step::reward).collect();
        if let Some(last) = r.last_mut() {
            *last += self.outcome.terminal_reward;
        }
        r
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards().iter().sum()
    }

    /// Text log: one `t,state,action,reward_step` line per step (state
    /// features `;`-separated, action as index), then the terminal header
    /// and `TTS,delta_time,HF,R_total` with `NA` for unobserved feedback.
    pub fn to_log(&self) -> String {
        let mut s = String::new();
        for st in &self.steps {
            let feats = st.features.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
            let _ = writeln!(s, "{},{},{},{}", st.t, feats, st.action.index(), st.reward());
        }
        let hf = if self.outcome.hf_observed {
            self.outcome.hf.to_string()
        } else {
            "NA".into()
        };
        let _ = writeln!(s, "{LOG_TERMINAL_HEADER}");
        let _ = writeln!(
            s,
            "{},{},{},{}",
            self.outcome.tts,
            self.outcome.delta_time,
            hf,
            self.total_reward()
        );
        s
    }
}

/// Parsed trajectory log, as used for offline updates.
#[derive(Clone, Debug, PartialEq)]
pub struct LoggedEpisode {
    pub times: Vec<f64>,
    pub features: Vec<[f64; STATE_DIM]>,
    pub actions: Vec<PolicyAction>,
    pub step_rewards: Vec<f64>,
    pub tts: f64,
    pub delta_time: f64,
    pub hf: Option<f64>,
    pub total_reward: f64,
}

impl LoggedEpisode {
    /// Step rewards with the terminal remainder on the last step.
    pub fn rewards(&self) -> Vec<f64> {
        let mut r = self.step_rewards.clone();
        let terminal = self.total_reward - r.iter().sum::<f64>();
        if let Some(last) = r.last_mut() {
            *last += terminal;
        }
        r
    }
}

/// Parses a concatenation of trajectory logs.
pub fn parse_log(text: &str) -> Result<Vec<LoggedEpisode>> {
    let perr = |line: usize, reason: &str| Error::Parse {
        line,
        reason: reason.to_string(),
    };
    let num = |s: &str, line: usize| s.parse::<f64>().map_err(|_| perr(line, &format!("bad number `{s}`")));
    let mut out = Vec::new();
    let mut cur = LoggedEpisode {
        times: Vec::new(),
        features: Vec::new(),
        actions: Vec::new(),
        step_rewards: Vec::new(),
        tts: 0.0,
        delta_time: 0.0,
        hf: None,
        total_reward: 0.0,
    };
    let mut lines = text.lines().enumerate();
    while let Some((i, line)) = lines.next() {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line == LOG_TERMINAL_HEADER {
            let (j, term) = lines.next().ok_or_else(|| perr(ln, "missing terminal line"))?;
            let p: Vec<&str> = term.split(',').collect();
            if p.len() != 4 {
                return Err(perr(j + 1, "terminal line needs TTS,delta_time,HF,R_total"));
            }
            if cur.actions.is_empty() {
                return Err(perr(j + 1, "episode without steps"));
            }
            cur.tts = num(p[0], j + 1)?;
            cur.delta_time = num(p[1], j + 1)?;
            cur.hf = if p[2] == "NA" { None } else { Some(num(p[2], j + 1)?) };
            cur.total_reward = num(p[3], j + 1)?;
            out.push(std::mem::replace(
                &mut cur,
                LoggedEpisode {
                    times: Vec::new(),
                    features: Vec::new(),
                    actions: Vec::new(),
                    step_rewards: Vec::new(),
                    tts: 0.0,
                    delta_time: 0.0,
                    hf: None,
                    total_reward: 0.0,
                },
            ));
            continue;
        }
        let p: Vec<&str> = line.split(',').collect();
        if p.len() != 4 {
            return Err(perr(ln, "step line needs t,state,action,reward_step"));
        }
        let feats: Vec<f64> = p[1].split(';').map(|v| num(v, ln)).collect::<Result<_>>()?;
        let features: [f64; STATE_DIM] = feats
            .try_into()
            .map_err(|_| perr(ln, &format!("state needs {STATE_DIM} features")))?;
        let action = p[2]
            .parse::<usize>()
            .ok()
            .and_then(PolicyAction::from_index)
            .ok_or_else(|| perr(ln, "bad action"))?;
        cur.times.push(num(p[0], ln)?);
        cur.features.push(features);
        cur.actions.push(action);
        cur.step_rewards.push(num(p[3], ln)?);
    }
    if !cur.actions.is_empty() {
        return Err(perr(0, "log ends without a terminal line"));
    }
    Ok(out)
}

/// Rolls `model` through `env` at 1 Hz.
pub fn rollout(
    model: &PolicyModel,
    env: &EpisodeEnv,
    cfg: &RolloutConfig,
    mode: ActMode,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_episode(env, cfg, seed, |_, state| act_features(model, &state.features(), mode, &mut rng))
}

/// Rolls a hand-written controller through `env`; `decide(t, state)`
/// returns the action at second `t`.
pub fn rollout_scripted<F>(env: &EpisodeEnv, cfg: &RolloutConfig, seed: u64, mut decide: F) -> Result<Trajectory>
where
    F: FnMut(usize, &PolicyState) -> PolicyAction,
{
    run_episode(env, cfg, seed, |t, state| Decision {
        action: decide(t, state),
        log_prob: 0.0,
        value: 0.0,
        log_probs: [0.0; ACTION_COUNT],
    })
}

/// Comparison controller: pre-associates once similarity reaches `tau` and
/// hands over when the scanned RSSI is below the onset threshold.
pub fn threshold_script(tau: f64, rssi_norm_threshold: f64) -> impl FnMut(usize, &PolicyState) -> PolicyAction {
    move |_, s| {
        if s.similarity >= tau && !s.pre_associated {
            PolicyAction::PreAssociate
        } else if s.pre_associated && s.rssi_norm < rssi_norm_threshold {
            PolicyAction::Handover
        } else {
            PolicyAction::Hold
        }
    }
}

fn run_episode<F>(env: &EpisodeEnv, cfg: &RolloutConfig, seed: u64, mut decide: F) -> Result<Trajectory>
where
    F: FnMut(usize, &PolicyState) -> Decision,
{
    cfg.validate()?;
    let mut hf_rng = ChaCha8Rng::seed_from_u64(seed);
    hf_rng.set_stream(2);
    let w = cfg.weights;
    let secs = env.seconds();
    let period = cfg.scan_period as usize;
    let mut steps: Vec<Step> = Vec::new();
    let mut t = 0usize;
    let mut scan_age = 0.0;
    let mut last_rssi = env.scanned_rssi[0];
    let mut fast_until = 0usize;
    let mut pre = false;
    let mut rollbacks = 0u32;
    let mut accepted = None;
    while t < secs {
        if t % period == 0 || t < fast_until {
            last_rssi = env.scanned_rssi[t];
            scan_age = 0.0;
        }
        let sim = env.similarity[t];
        let state = PolicyState {
            similarity: sim,
            similarity_trend: sim - env.similarity[t.saturating_sub(3)],
            rssi_norm: env.normalization.apply(WIFI_RSSI_FEATURE, last_rssi),
            gnss_fix: env.gnss_fix[t],
            step_rate: env.step_rate[t],
            scan_age,
            link: Link::Wifi,
            pre_associated: pre,
        };
        let d = decide(t, &state);
        let mut step = Step {
            t: t as f64,
            state,
            features: state.features(),
            action: d.action,
            log_prob: d.log_prob,
            value: d.value,
            sim_reward: w.lambda * sim,
            shaping: 0.0,
            hf: HfField::NotApplicable,
        };
        let mut next = t + 1;
        match d.action {
            PolicyAction::Hold => {}
            PolicyAction::IncreaseScanRate => fast_until = t + 1 + cfg.fast_scan_secs as usize,
            PolicyAction::PreAssociate => pre = true,
            PolicyAction::Handover => {
                let delay = if pre { cfg.pre_assoc_delay } else { env.assoc_delay };
                let c = t as f64 + delay;
                if env.reverts(c, cfg.revert_window) {
                    rollbacks += 1;
                    step.shaping = -w.gamma;
                    step.hf = HfField::Value(-1.0);
                    pre = false;
                    next = ((c + cfg.revert_window - 1e-9).ceil() as usize).max(t + 1);
                } else {
                    accepted = Some(c);
                }
            }
        }
        steps.push(step);
        if accepted.is_some() {
            break;
        }
        scan_age += (next - t) as f64;
        t = next;
    }

    let completion = accepted.unwrap_or(env.duration);
    let policy_tts = tts(completion, env.onset());
    let baseline_tts = env.baseline_tts();
    let delta_time = baseline_tts - policy_tts;
    let hf = feedback_oracle(
        &SwitchDecision {
            completion,
            rolled_back: false,
        },
        &env.truth,
    );
    let hf_observed = hf_rng.gen::<f64>() < cfg.hf_observe_prob;
    let last = steps.last_mut().expect("at least one step");
    last.hf = if hf_observed { HfField::Value(hf) } else { HfField::Missing };
    let terminal_reward = w.eta * delta_time + if hf_observed { w.gamma * hf } else { 0.0 };
    Ok(Trajectory {
        steps,
        outcome: TrajectoryOutcome {
            completion,
            censored: accepted.is_none(),
            tts: policy_tts,
            baseline_tts,
            delta_time,
            hf,
            hf_observed,
            rollbacks,
            terminal_reward,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 60 s trace whose connected AP drops from −50 to −90 dBm at t = 20.
    fn step_env() -> EpisodeEnv {
        let samples: Vec<(f64, f64)> = (0..60)
            .map(|t| (t as f64, if t < 20 { -50.0 } else { -90.0 }))
            .collect();
        let mut trace = RawTrace::from_rssi(&samples);
        trace.truth.degradation_onset = 20.0;
        let sims = (0..60).map(|t| if (15..25).contains(&t) { 0.9 } else { 0.2 }).collect();
        EpisodeEnv::with_similarity(&trace, sims, &SimConfig::default(), Normalization::default()).unwrap()
    }

    fn scripted(pre: bool) -> impl FnMut(usize, &PolicyState) -> PolicyAction {
        move |t, s| {
            if t == 20 {
                PolicyAction::Handover
            } else if pre && s.similarity >= 0.8 && !s.pre_associated {
                PolicyAction::PreAssociate
            } else {
                PolicyAction::Hold
            }
        }
    }

    #[test]
    fn pre_association_shortens_the_switch() {
        let env = step_env();
        let cfg = RolloutConfig::default();
        let with = rollout_scripted(&env, &cfg, 1, scripted(true)).unwrap();
        let without = rollout_scripted(&env, &cfg, 1, scripted(false)).unwrap();
        assert_eq!(with.outcome.completion, env.onset() + 0.5);
        assert!(!with.outcome.censored);
        assert!((without.outcome.completion - with.outcome.completion - 1.5).abs() < 1e-12);
        assert_eq!(with.steps.len(), 21);
        assert_eq!(with.steps[15].action, PolicyAction::PreAssociate);
        assert!(with.steps[16].state.pre_associated);
    }

    #[test]
    fn never_switching_is_censored_and_penalised() {
        let env = step_env();
        let traj = rollout_scripted(&env, &RolloutConfig::default(), 3, |_, _| PolicyAction::Hold).unwrap();
        assert!(traj.outcome.censored);
        assert_eq!(traj.outcome.completion, env.duration);
        // baseline switches at 23 + 2 s, so Δtime = 5 − 40
        assert!((traj.outcome.delta_time - (5.0 - 40.0)).abs() < 1e-9);
        assert_eq!(traj.steps.len(), env.seconds());
        assert!(traj.total_reward() < 0.0);
    }

    #[test]
    fn early_handover_is_reverted() {
        let env = step_env();
        let cfg = RolloutConfig::default();
        let traj = rollout_scripted(&env, &cfg, 0, |t, _| {
            if t == 5 || t == 21 {
                PolicyAction::Handover
            } else {
                PolicyAction::Hold
            }
        })
        .unwrap();
        assert_eq!(traj.outcome.rollbacks, 1);
        let first = &traj.steps[5];
        assert_eq!(first.shaping, -cfg.weights.gamma);
        assert_eq!(first.hf, HfField::Value(-1.0));
        // completion 7 s, WiFi checked until 9 s; the next decision is at 9
        assert_eq!(traj.steps[6].t, 9.0);
        assert_eq!(traj.outcome.completion, 23.0);
        assert!(!matches!(traj.steps.last().unwrap().hf, HfField::NotApplicable));
    }

    #[test]
    fn scan_rate_changes_scan_age() {
        let env = step_env();
        let cfg = RolloutConfig::default();
        let idle = rollout_scripted(&env, &cfg, 0, |_, _| PolicyAction::Hold).unwrap();
        let ages: Vec<f64> = idle.steps[..4].iter().map(|s| s.state.scan_age).collect();
        assert_eq!(ages, vec![0.0, 1.0, 0.0, 1.0]);
        let fast = rollout_scripted(&env, &cfg, 0, |t, _| {
            if t == 0 {
                PolicyAction::IncreaseScanRate
            } else {
                PolicyAction::Hold
            }
        })
        .unwrap();
        let ages: Vec<f64> = fast.steps[..8].iter().map(|s| s.state.scan_age).collect();
        assert_eq!(ages, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rollouts_are_deterministic() {
        let env = step_env();
        let model = PolicyModel::seeded(5);
        let cfg = RolloutConfig::default();
        let a = rollout(&model, &env, &cfg, ActMode::Sample, 42).unwrap();
        let b = rollout(&model, &env, &cfg, ActMode::Sample, 42).unwrap();
        assert_eq!(a, b);
        let total: f64 = a.rewards().iter().sum();
        assert!((total - a.total_reward()).abs() < 1e-12);
    }

    #[test]
    fn log_round_trip() {
        let env = step_env();
        let model = PolicyModel::seeded(6);
        let cfg = RolloutConfig::default();
        let trajs: Vec<Trajectory> = (0..3)
            .map(|s| rollout(&model, &env, &cfg, ActMode::Sample, s).unwrap())
            .collect();
        let text: String = trajs.iter().map(Trajectory::to_log).collect();
        let parsed = parse_log(&text).unwrap();
        assert_eq!(parsed.len(), 3);
        for (p, t) in parsed.iter().zip(&trajs) {
            assert_eq!(p.actions, t.steps.iter().map(|s| s.action).collect::<Vec<_>>());
            assert_eq!(p.features, t.steps.iter().map(|s| s.features).collect::<Vec<_>>());
            assert_eq!(p.tts, t.outcome.tts);
            for (a, b) in p.rewards().iter().zip(t.rewards()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!(parse_log("0,1;2,0,0.5\n").is_err());
        assert!(parse_log("0,1;2;3;4;5;6;7;8,0,0.5\n").is_err());
    }

    #[test]
    fn threshold_script_switches_after_onset() {
        let env = step_env();
        let cfg = RolloutConfig::default();
        let norm = Normalization::default();
        let traj = rollout_scripted(&env, &cfg, 0, threshold_script(cfg.tau, norm.apply(3, -75.0))).unwrap();
        assert!(!traj.outcome.censored);
        assert!(traj.outcome.tts >= 0.0 && traj.outcome.tts < env.baseline_tts());
    }
}
