use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PolicyModel, Trajectory, ACTION_COUNT, STATE_DIM};
use crate::error::{param_err, Error, Result};
use crate::nn::{log_softmax, Adam};

/// PPO hyperparameters. The loss minimised per sample is
/// `−min(r·A, clip(r)·A) + value_coef·(V − R)² − entropy_coef·H`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub step_size: f64,
    pub gae_lambda: f64,
    pub discount: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub minibatch: usize,
    pub normalize_advantages: bool,
    /// Seed of the minibatch shuffle.
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            epochs: 4,
            step_size: 3e-3,
            gae_lambda: 0.95,
            discount: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.5,
            minibatch: 64,
            normalize_advantages: true,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(param_err("clip", format!("{} outside (0, 1)", self.clip)));
        }
        if !(self.step_size > 0.0) {
            return Err(param_err("step_size", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) || !(0.0..=1.0).contains(&self.discount) {
            return Err(param_err("gae_lambda", "lambda and discount must be in [0, 1]"));
        }
        if self.minibatch == 0 {
            return Err(param_err("minibatch", "must be >= 1"));
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return Err(param_err("entropy_coef", "coefficients must be >= 0"));
        }
        Ok(())
    }
}

/// One episode as PPO consumes it.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoEpisode {
    pub features: Vec<[f64; STATE_DIM]>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Log-probability of each action under the behaviour policy.
    pub old_log_probs: Vec<f64>,
}

impl PpoEpisode {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            features: t.steps.iter().map(|s| s.features).collect(),
            actions: t.steps.iter().map(|s| s.action.index()).collect(),
            rewards: t.rewards(),
            old_log_probs: t.steps.iter().map(|s| s.log_prob).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.len();
        if n == 0 {
            return Err(Error::EmptyBatch("ppo episode"));
        }
        if self.actions.len() != n || self.rewards.len() != n || self.old_log_probs.len() != n {
            return Err(param_err("episode", "field lengths differ"));
        }
        if self.actions.iter().any(|a| *a >= ACTION_COUNT) {
            return Err(param_err("episode", "action index out of range"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio left `[1 − ε, 1 + ε]`.
    pub clip_fraction: f64,
    pub mean_return: f64,
}

pub fn clip_ratio(r: f64, eps: f64) -> f64 {
    r.clamp(1.0 - eps, 1.0 + eps)
}

/// Per-sample clipped surrogate `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(r: f64, advantage: f64, eps: f64) -> f64 {
    (r * advantage).min(clip_ratio(r, eps) * advantage)
}

/// Generalized advantage estimates and returns for one episode that ends
/// in a terminal state.
pub fn gae(rewards: &[f64], values: &[f64], discount: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        let next = if i + 1 < n { values[i + 1] } else { 0.0 };
        let delta = rewards[i] + discount * next - values[i];
        acc = delta + discount * lambda * acc;
        adv[i] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

#[derive(Clone, Copy, Debug)]
struct Sample {
    features: [f64; STATE_DIM],
    action: usize,
    old_log_prob: f64,
    advantage: f64,
    ret: f64,
}

struct MinibatchGrad {
    loss: f64,
    actor: Vec<f64>,
    critic: Vec<f64>,
    stats: PpoStats,
}

fn minibatch_grad(model: &PolicyModel, batch: &[Sample], cfg: &PpoConfig) -> MinibatchGrad {
    let b = batch.len() as f64;
    let mut g = MinibatchGrad {
        loss: 0.0,
        actor: vec![0.0; model.actor.param_count()],
        critic: vec![0.0; model.critic.param_count()],
        stats: PpoStats::default(),
    };
    for s in batch {
        let cache = model.actor.forward(&s.features);
        let lp = log_softmax(&cache.output);
        let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let r = (lp[s.action] - s.old_log_prob).exp();
        let unclipped = r * s.advantage;
        let clipped = clip_ratio(r, cfg.clip) * s.advantage;
        let surrogate = unclipped.min(clipped);
        let entropy: f64 = -p.iter().zip(&lp).map(|(p, l)| p * l).sum::<f64>();
        let d_logp = if unclipped <= clipped { -unclipped } else { 0.0 };
        let d_out: Vec<f64> = (0..ACTION_COUNT)
            .map(|k| {
                let onehot = if k == s.action { 1.0 } else { 0.0 };
                (d_logp * (onehot - p[k]) + cfg.entropy_coef * p[k] * (lp[k] + entropy)) / b
            })
            .collect();
        model.actor.backward(&cache, &d_out, &mut g.actor);

        let vcache = model.critic.forward(&s.features);
        let err = vcache.output[0] - s.ret;
        model.critic.backward(&vcache, &[2.0 * cfg.value_coef * err / b], &mut g.critic);

        g.loss += (-surrogate + cfg.value_coef * err * err - cfg.entropy_coef * entropy) / b;
        g.stats.policy_loss -= surrogate / b;
        g.stats.value_loss += err * err / b;
        g.stats.entropy += entropy / b;
        if (r - clip_ratio(r, cfg.clip)).abs() > 0.0 {
            g.stats.clip_fraction += 1.0 / b;
        }
    }
    g
}

/// Runs `cfg.epochs` passes of clipped-surrogate PPO over the batch with
/// seeded minibatch shuffling and returns the updated model. Advantages use
/// the value estimates of the incoming model.
pub fn ppo_update(model: &PolicyModel, batch: &[PpoEpisode], cfg: &PpoConfig) -> Result<(PolicyModel, PpoStats)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch("ppo batch"));
    }
    let mut samples = Vec::new();
    for ep in batch {
        ep.validate()?;
        let values: Vec<f64> = ep.features.iter().map(|f| model.value(f)).collect();
        let (adv, ret) = gae(&ep.rewards, &values, cfg.discount, cfg.gae_lambda);
        for i in 0..ep.features.len() {
            samples.push(Sample {
                features: ep.features[i],
                action: ep.actions[i],
                old_log_prob: ep.old_log_probs[i],
                advantage: adv[i],
                ret: ret[i],
            });
        }
    }
    let mean_return = samples.iter().map(|s| s.ret).sum::<f64>() / samples.len() as f64;
    if cfg.normalize_advantages && samples.len() > 1 {
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt() + 1e-8;
        for s in &mut samples {
            s.advantage = (s.advantage - mean) / sd;
        }
    }

    let mut out = model.clone();
    let mut actor_opt = Adam::new(out.actor.param_count(), cfg.step_size);
    let mut critic_opt = Adam::new(out.critic.param_count(), cfg.step_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut stats = PpoStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch = PpoStats::default();
        let chunks = order.chunks(cfg.minibatch);
        let n_chunks = chunks.len() as f64;
        for chunk in chunks {
            let mb: Vec<Sample> = chunk.iter().map(|&i| samples[i]).collect();
            let g = minibatch_grad(&out, &mb, cfg);
            actor_opt.step(out.actor.params_mut(), &g.actor);
            critic_opt.step(out.critic.params_mut(), &g.critic);
            epoch.policy_loss += g.stats.policy_loss / n_chunks;
            epoch.value_loss += g.stats.value_loss / n_chunks;
            epoch.entropy += g.stats.entropy / n_chunks;
            epoch.clip_fraction += g.stats.clip_fraction / n_chunks;
        }
        stats = epoch;
    }
    stats.mean_return = mean_return;
    Ok((out, stats))
}
