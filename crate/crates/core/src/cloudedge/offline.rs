use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::nn::{log_softmax, Adam};
use crate::policy::{parse_log, PolicyModel, ACTION_COUNT, STATE_DIM};

/// Advantage-weighted regression with a behaviour-cloning term. Each log
/// sample gets weight `min(exp(Â / temperature), weight_cap) + bc_coef`,
/// where `Â` is the advantage standardised over the log; the total
/// parameter change of one call is clipped to `max_norm` (L2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfflineConfig {
    pub temperature: f64,
    pub max_norm: f64,
    pub steps: usize,
    pub step_size: f64,
    pub bc_coef: f64,
    pub weight_cap: f64,
    pub discount: f64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_norm: 0.5,
            steps: 50,
            step_size: 0.01,
            bc_coef: 0.1,
            weight_cap: 20.0,
            discount: 0.99,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OfflineStats {
    pub loss_before: f64,
    pub loss_after: f64,
    /// L2 norm of the applied parameter change.
    pub change_norm: f64,
    pub clipped: bool,
}

struct Sample {
    features: [f64; STATE_DIM],
    action: usize,
    weight: f64,
    ret: f64,
}

fn loss_and_grad(model: &PolicyModel, samples: &[Sample]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mut ga = vec![0.0; model.actor.param_count()];
    let mut gc = vec![0.0; model.critic.param_count()];
    let mut loss = 0.0;
    for s in samples {
        let cache = model.actor.forward(&s.features);
        let lp = log_softmax(&cache.output);
        loss -= s.weight * lp[s.action] / n;
        let d: Vec<f64> = (0..ACTION_COUNT)
            .map(|k| {
                let onehot = if k == s.action { 1.0 } else { 0.0 };
                -s.weight * (onehot - lp[k].exp()) / n
            })
            .collect();
        model.actor.backward(&cache, &d, &mut ga);
        let vc = model.critic.forward(&s.features);
        let err = vc.output[0] - s.ret;
        loss += err * err / n;
        model.critic.backward(&vc, &[2.0 * err / n], &mut gc);
    }
    (loss, ga, gc)
}

/// Updates an edge policy from its local trajectory log only.
pub fn offline_update(policy: &PolicyModel, log: &str, cfg: &OfflineConfig) -> Result<(PolicyModel, OfflineStats)> {
    if !(cfg.temperature > 0.0 && cfg.max_norm > 0.0 && cfg.step_size > 0.0) {
        return Err(param_err("offline", "temperature, max_norm and step_size must be > 0"));
    }
    let episodes = parse_log(log)?;
    if episodes.is_empty() {
        return Err(Error::EmptyBatch("trajectory log"));
    }
    let mut samples = Vec::new();
    let mut adv = Vec::new();
    for ep in &episodes {
        let rewards = ep.rewards();
        let mut g = 0.0;
        let mut rets = vec![0.0; rewards.len()];
        for i in (0..rewards.len()).rev() {
            g = rewards[i] + cfg.discount * g;
            rets[i] = g;
        }
        for (i, f) in ep.features.iter().enumerate() {
            adv.push(rets[i] - policy.value(f));
            samples.push(Sample {
                features: *f,
                action: ep.actions[i].index(),
                weight: 0.0,
                ret: rets[i],
            });
        }
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt() + 1e-8;
    for (s, a) in samples.iter_mut().zip(&adv) {
        let z = (a - mean) / sd;
        s.weight = (z / cfg.temperature).exp().min(cfg.weight_cap) + cfg.bc_coef;
    }

    let mut m = policy.clone();
    let mut opt_a = Adam::new(m.actor.param_count(), cfg.step_size);
    let mut opt_c = Adam::new(m.critic.param_count(), cfg.step_size);
    let loss_before = loss_and_grad(&m, &samples).0;
    for _ in 0..cfg.steps {
        let (_, ga, gc) = loss_and_grad(&m, &samples);
        opt_a.step(m.actor.params_mut(), &ga);
        opt_c.step(m.critic.params_mut(), &gc);
    }
    let old = policy.params();
    let mut new = m.params();
    let norm = old
        .iter()
        .zip(&new)
        .map(|(a, b)| (b - a).powi(2))
        .sum::<f64>()
        .sqrt();
    let clipped = norm > cfg.max_norm;
    if clipped {
        let scale = cfg.max_norm / norm;
        for (p, o) in new.iter_mut().zip(&old) {
            *p = o + (*p - o) * scale;
        }
        m.set_params(&new)?;
    }
    let loss_after = loss_and_grad(&m, &samples).0;
    if !loss_after.is_finite() {
        return Err(param_err("offline", "loss diverged"));
    }
    Ok((
        m,
        OfflineStats {
            loss_before,
            loss_after,
            change_norm: norm.min(cfg.max_norm),
            clipped,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpcore::Normalization;
    use crate::policy::{
        act_features, rollout, rollout_scripted, threshold_script, ActMode, EpisodeEnv, PolicyAction, PolicyState,
        RolloutConfig, Trajectory,
    };
    use crate::simworld::{RawTrace, SimConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env(drop_at: usize, sim_peak: usize) -> EpisodeEnv {
        let samples: Vec<(f64, f64)> = (0..60)
            .map(|t| (t as f64, if t < drop_at { -50.0 - t as f64 * 0.3 } else { -88.0 }))
            .collect();
        let mut trace = RawTrace::from_rssi(&samples);
        trace.truth.degradation_onset = drop_at as f64;
        let sims = (0..60)
            .map(|t: usize| (1.0 - (t as f64 - sim_peak as f64).abs() / 8.0).clamp(0.05, 0.95))
            .collect();
        EpisodeEnv::with_similarity(&trace, sims, &SimConfig::default(), Normalization::default()).unwrap()
    }

    #[test]
    fn empty_log_is_rejected() {
        let m = PolicyModel::seeded(1);
        assert!(matches!(offline_update(&m, "", &OfflineConfig::default()), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn self_generated_log_moves_within_bound() {
        let m = PolicyModel::seeded(2);
        let cfg = RolloutConfig::default();
        let e = env(20, 20);
        let log: String = (0..4)
            .map(|s| rollout(&m, &e, &cfg, ActMode::Sample, s).unwrap().to_log())
            .collect();
        let off = OfflineConfig::default();
        let (updated, stats) = offline_update(&m, &log, &off).unwrap();
        assert!(stats.loss_after.is_finite());
        assert!(stats.change_norm <= off.max_norm + 1e-12);
        let real: f64 = m
            .params()
            .iter()
            .zip(updated.params())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(real <= off.max_norm + 1e-9);
    }

    #[test]
    fn scripted_log_raises_agreement() {
        let cfg = RolloutConfig::default();
        let thr = Normalization::default().apply(3, -75.0);
        let train: Vec<Trajectory> = (0..8)
            .map(|k| rollout_scripted(&env(14 + k, 13 + k), &cfg, k as u64, threshold_script(cfg.tau, thr)).unwrap())
            .collect();
        let log: String = train.iter().map(Trajectory::to_log).collect();
        // held-out states come from different traces
        let held: Vec<(PolicyState, PolicyAction)> = (0..6)
            .flat_map(|k| {
                let mut script = threshold_script(cfg.tau, thr);
                let mut seen = Vec::new();
                rollout_scripted(&env(25 + k, 24 + k), &cfg, 99, |t, s| {
                    let a = script(t, s);
                    seen.push((*s, a));
                    a
                })
                .unwrap();
                seen
            })
            .collect();
        let agreement = |m: &PolicyModel| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            held.iter()
                .filter(|(s, a)| act_features(m, &s.features(), ActMode::Greedy, &mut rng).action == *a)
                .count() as f64
                / held.len() as f64
        };
        let mut m = PolicyModel::seeded(4);
        let before = agreement(&m);
        for _ in 0..4 {
            m = offline_update(&m, &log, &OfflineConfig::default()).unwrap().0;
        }
        let after = agreement(&m);
        assert!(after > before, "agreement {before} -> {after}");
    }
}
