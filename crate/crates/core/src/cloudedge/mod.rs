//! Cloud-edge feedback loop: edges roll out their policy and upload
//! desensitized summaries, the cloud aggregates them, fits a reward model
//! on the feedback, runs PPO and periodically distills the new policy back
//! to the edges.

mod offline;
mod round;

pub use offline::{offline_update, OfflineConfig, OfflineStats};
pub(crate) use round::mix;
pub use round::{
    assemble_episodes, distill_message, run_round, Assembly, CloudConfig, EdgeAgent, EdgeEpisode, RoundState,
    RoundStats,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{param_err, Error, Result};
use crate::fpcore::{DesensitizedSummary, EpisodeOutcome, FeedbackTuple, HfField, IdHash};
use crate::nn::{Adam, Mlp};
use crate::policy::{ACTION_COUNT, STATE_DIM};
use crate::tensorio::{read_tensors, write_tensors};

/// One uploaded episode after aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedEpisode {
    pub session: IdHash,
    pub edge_id: IdHash,
    /// Policy version the edge acted with.
    pub version: u32,
    /// Tuples in offset order.
    pub tuples: Vec<FeedbackTuple>,
    pub outcome: Option<EpisodeOutcome>,
}

/// Merged inbox, sorted canonically by (session hash, edge hash, version)
/// and, within an episode, by offset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingBatch {
    pub episodes: Vec<AggregatedEpisode>,
}

impl TrainingBatch {
    pub fn tuples(&self) -> impl Iterator<Item = &FeedbackTuple> {
        self.episodes.iter().flat_map(|e| e.tuples.iter())
    }

    pub fn len(&self) -> usize {
        self.episodes.iter().map(|e| e.tuples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn aggregate(inbox: &[DesensitizedSummary]) -> TrainingBatch {
    let mut episodes: Vec<AggregatedEpisode> = inbox
        .iter()
        .map(|s| {
            let mut tuples = s.tuples.clone();
            tuples.sort_by(|a, b| a.offset.total_cmp(&b.offset));
            AggregatedEpisode {
                session: s.session,
                edge_id: s.edge_id,
                version: s.version,
                tuples,
                outcome: s.outcome,
            }
        })
        .collect();
    episodes.sort_by(|a, b| {
        (a.session, a.edge_id, a.version)
            .cmp(&(b.session, b.edge_id, b.version))
            .then_with(|| {
                let fa = a.tuples.first().map_or(0.0, |t| t.offset);
                let fb = b.tuples.first().map_or(0.0, |t| t.offset);
                fa.total_cmp(&fb)
            })
    });
    TrainingBatch { episodes }
}

pub const REWARD_INPUT_DIM: usize = STATE_DIM + ACTION_COUNT;
const REWARD_HIDDEN: usize = 16;
const REWARD_KIND: &str = "reward";

/// Predicts feedback in [−1, 1] from (state, action): `tanh` of a small
/// perceptron over the state features and a one-hot action.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardModel {
    pub mlp: Mlp,
}

/// One regression target for the reward model.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardSample {
    pub state: Vec<f64>,
    pub action: usize,
    pub hf: f64,
}

impl RewardModel {
    pub fn zeros() -> Self {
        Self {
            mlp: Mlp::zeros(REWARD_INPUT_DIM, REWARD_HIDDEN, 1),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            mlp: Mlp::init(REWARD_INPUT_DIM, REWARD_HIDDEN, 1, 0.1, &mut rng),
        }
    }

    fn input(state: &[f64], action: usize) -> Vec<f64> {
        let mut x = vec![0.0; REWARD_INPUT_DIM];
        for (d, s) in x.iter_mut().zip(state.iter().take(STATE_DIM)) {
            *d = *s;
        }
        if action < ACTION_COUNT {
            x[STATE_DIM + action] = 1.0;
        }
        x
    }

    pub fn predict(&self, state: &[f64], action: usize) -> f64 {
        self.mlp.output(&Self::input(state, action))[0].tanh()
    }

    /// Mean squared error over `batch` and its gradient.
    pub fn loss_and_grad(&self, batch: &[RewardSample]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.mlp.param_count()];
        let n = batch.len().max(1) as f64;
        let mut loss = 0.0;
        for s in batch {
            let cache = self.mlp.forward(&Self::input(&s.state, s.action));
            let y = cache.output[0].tanh();
            let err = y - s.hf;
            loss += err * err / n;
            self.mlp.backward(&cache, &[2.0 * err * (1.0 - y * y) / n], &mut grad);
        }
        (loss, grad)
    }

    pub fn to_text(&self) -> String {
        write_tensors(REWARD_KIND, &self.mlp.to_tensors("rm"))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let t = read_tensors(text, REWARD_KIND)?;
        Ok(Self {
            mlp: Mlp::from_tensors(&t, "rm", REWARD_INPUT_DIM, REWARD_HIDDEN, 1)?,
        })
    }
}

/// Tuples of `batch` carrying a direct feedback value.
pub fn reward_samples(batch: &TrainingBatch) -> Vec<RewardSample> {
    batch
        .tuples()
        .filter_map(|t| {
            t.hf.value().map(|hf| RewardSample {
                state: t.state.clone(),
                action: t.action,
                hf,
            })
        })
        .collect()
}

/// Full-batch Adam regression of predicted on recorded feedback. Returns
/// the model and the loss before each epoch.
pub fn fit_reward_model(
    model: &RewardModel,
    batch: &[RewardSample],
    epochs: usize,
    step_size: f64,
) -> Result<(RewardModel, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("reward model batch"));
    }
    if !(step_size > 0.0) {
        return Err(param_err("step_size", "must be > 0"));
    }
    let mut m = model.clone();
    let mut opt = Adam::new(m.mlp.param_count(), step_size);
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (loss, grad) = m.loss_and_grad(batch);
        if !loss.is_finite() {
            return Err(param_err("reward model", "loss diverged"));
        }
        losses.push(loss);
        opt.step(m.mlp.params_mut(), &grad);
    }
    Ok((m, losses))
}

/// Feedback to use for a tuple: the recorded value verbatim, the reward
/// model's prediction when feedback is missing, none when not applicable.
pub fn feedback_for(t: &FeedbackTuple, rm: &RewardModel) -> Option<f64> {
    match t.hf {
        HfField::Value(v) => Some(v),
        HfField::Missing => Some(rm.predict(&t.state, t.action)),
        HfField::NotApplicable => None,
    }
}
