use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FilterChoice, FilterParams};
use crate::error::{param_err, Error, Result};
use crate::fpcore::{FingerprintSequence, Modality, Normalization, FEATURE_DIM, MODALITY_COUNT};
use crate::nn::{sigmoid, softmax, Mlp, MlpCache};
use crate::tensorio::{read_tensors, write_tensors};

/// Length of the selector input vector.
pub const CONTEXT_DIM: usize = 3 + MODALITY_COUNT;
const HIDDEN: usize = 16;
const OUTPUTS: usize = 7;
const TENSOR_KIND: &str = "selector";

/// Output ranges of the squashed filter coefficients: Q, R, sigma, alpha.
const RANGES: [(f64, f64); 4] = [(0.0, 1.0), (0.01, 10.0), (0.1, 3.0), (0.05, 1.0)];

/// Signal conditions that drive filter selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterContext {
    /// Variance of the WiFi level over the window, dBm².
    pub rssi_variance: f64,
    /// Mean age of the latest WiFi scan, seconds.
    pub scan_age: f64,
    /// Mean step rate, steps/s.
    pub step_rate: f64,
    pub presence: [bool; MODALITY_COUNT],
}

impl FilterContext {
    pub fn from_sequence(seq: &FingerprintSequence, norm: &Normalization) -> Self {
        let wifi = Modality::Wifi;
        let level = wifi.offset();
        let mut rssi = Vec::new();
        let mut ages = Vec::new();
        for w in seq.windows() {
            if w.is_present(wifi) {
                rssi.push(norm.invert(level, w.features()[level]));
                let q = w.mask()[wifi.index()].quality;
                ages.push(if q > 0.0 { 1.0 / q - 1.0 } else { 0.0 });
            }
        }
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let m = mean(&rssi);
        let var = mean(&rssi.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>());
        let steps: Vec<f64> = seq
            .windows()
            .iter()
            .filter(|w| w.is_present(Modality::Pdr))
            .map(|w| norm.invert(0, w.features()[0]))
            .collect();
        let n = seq.len() as f64;
        let mut presence = [false; MODALITY_COUNT];
        for kind in Modality::ALL {
            let count = seq.windows().iter().filter(|w| w.is_present(kind)).count();
            presence[kind.index()] = count as f64 >= 0.5 * n;
        }
        Self {
            rssi_variance: var,
            scan_age: mean(&ages),
            step_rate: mean(&steps),
            presence,
        }
    }

    pub fn features(&self) -> [f64; CONTEXT_DIM] {
        let mut f = [0.0; CONTEXT_DIM];
        f[0] = (1.0 + self.rssi_variance.max(0.0)).ln() / 3.0;
        f[1] = (1.0 + self.scan_age.max(0.0)).ln();
        f[2] = self.step_rate / 2.0;
        for (k, p) in self.presence.iter().enumerate() {
            f[3 + k] = if *p { 1.0 } else { 0.0 };
        }
        f
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rssi_variance", self.rssi_variance),
            ("scan_age", self.scan_age),
            ("step_rate", self.step_rate),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(param_err(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Small MLP mapping a [`FilterContext`] to three filter logits and four
/// coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorModel {
    pub mlp: Mlp,
}

impl SelectorModel {
    /// All-zero parameters: uniform weights and mid-range coefficients.
    pub fn zeros() -> Self {
        Self {
            mlp: Mlp::zeros(CONTEXT_DIM, HIDDEN, OUTPUTS),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            mlp: Mlp::init(CONTEXT_DIM, HIDDEN, OUTPUTS, 0.1, &mut rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn to_text(&self) -> String {
        write_tensors(TENSOR_KIND, &self.mlp.to_tensors("selector"))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tensors = read_tensors(text, TENSOR_KIND)?;
        Ok(Self {
            mlp: Mlp::from_tensors(&tensors, "selector", CONTEXT_DIM, HIDDEN, OUTPUTS)?,
        })
    }

    fn choice_from_output(out: &[f64]) -> Result<(FilterChoice, [f64; 4])> {
        let w = softmax(&out[..3]);
        let mut squashed = [0.0; 4];
        let mut vals = [0.0; 4];
        for j in 0..4 {
            let s = sigmoid(out[3 + j]);
            squashed[j] = s;
            let (lo, hi) = RANGES[j];
            vals[j] = lo + (hi - lo) * s;
        }
        // keep strictly inside the open bounds after rounding
        vals[1] = vals[1].max(RANGES[1].0);
        vals[2] = vals[2].max(RANGES[2].0);
        vals[3] = vals[3].clamp(RANGES[3].0, 1.0);
        let choice = FilterChoice::new(
            [w[0], w[1], w[2]],
            FilterParams {
                q: vals[0],
                r: vals[1],
                sigma: vals[2],
                alpha: vals[3],
            },
        )?;
        Ok((choice, squashed))
    }

    /// Soft-cleans every feature channel of `seq` and keeps what the backward
    /// pass needs.
    pub fn soft_clean(&self, seq: &FingerprintSequence, norm: &Normalization) -> Result<SoftCleaned> {
        let ctx = FilterContext::from_sequence(seq, norm);
        ctx.validate()?;
        let cache = self.mlp.forward(&ctx.features());
        let (choice, squashed) = Self::choice_from_output(&cache.output)?;
        let n = seq.len();
        let mut cleaned = vec![[0.0; FEATURE_DIM]; n];
        let mut outs = Vec::with_capacity(FEATURE_DIM);
        let mut dparams = Vec::with_capacity(FEATURE_DIM);
        for c in 0..FEATURE_DIM {
            let ch: Vec<f64> = seq.windows().iter().map(|w| w.features()[c]).collect();
            let (y, o, d) = choice.mixture_with_grad(&ch);
            for (i, v) in y.into_iter().enumerate() {
                cleaned[i][c] = v;
            }
            outs.push(o);
            dparams.push(d);
        }
        Ok(SoftCleaned {
            sequence: seq.map_features(&cleaned)?,
            choice,
            cache,
            squashed,
            outs,
            dparams,
        })
    }

    /// Accumulates into `grad` the selector gradient given the loss gradient
    /// with respect to the cleaned features.
    pub fn backprop(&self, cleaned: &SoftCleaned, d_features: &[[f64; FEATURE_DIM]], grad: &mut [f64]) {
        let mut d_w = [0.0; 3];
        let mut d_theta = [0.0; 4];
        for c in 0..FEATURE_DIM {
            for (i, g) in d_features.iter().enumerate() {
                let g = g[c];
                if g == 0.0 {
                    continue;
                }
                for k in 0..3 {
                    d_w[k] += g * cleaned.outs[c][k][i];
                }
                for j in 0..4 {
                    d_theta[j] += g * cleaned.dparams[c][j][i];
                }
            }
        }
        let w = cleaned.choice.weights();
        let dot: f64 = (0..3).map(|k| w[k] * d_w[k]).sum();
        let mut d_out = [0.0; OUTPUTS];
        for k in 0..3 {
            d_out[k] = w[k] * (d_w[k] - dot);
        }
        for j in 0..4 {
            let s = cleaned.squashed[j];
            let (lo, hi) = RANGES[j];
            d_out[3 + j] = d_theta[j] * (hi - lo) * s * (1.0 - s);
        }
        self.mlp.backward(&cleaned.cache, &d_out, grad);
    }

    /// Mean objective over `batches` and its gradient in selector
    /// parameters.
    pub fn loss_and_grad(
        &self,
        batches: &[PairedBatch],
        objective: &dyn AlignmentObjective,
        norm: &Normalization,
    ) -> Result<(f64, Vec<f64>)> {
        if batches.is_empty() {
            return Err(Error::EmptyBatch("selector training batches"));
        }
        let mut grad = vec![0.0; self.param_count()];
        let mut total = 0.0;
        for batch in batches {
            let cleaned = batch
                .queries()
                .map(|q| self.soft_clean(q, norm))
                .collect::<Result<Vec<_>>>()?;
            let seqs: Vec<FingerprintSequence> = cleaned.iter().map(|c| c.sequence.clone()).collect();
            let (loss, d_queries) = objective.loss_and_grad(batch, &seqs)?;
            total += loss;
            for (c, d) in cleaned.iter().zip(&d_queries) {
                self.backprop(c, d, &mut grad);
            }
        }
        let scale = 1.0 / batches.len() as f64;
        for g in &mut grad {
            *g *= scale;
        }
        Ok((total * scale, grad))
    }
}

/// Forward-pass state of one soft-cleaned query.
#[derive(Clone, Debug)]
pub struct SoftCleaned {
    pub sequence: FingerprintSequence,
    pub choice: FilterChoice,
    cache: MlpCache,
    squashed: [f64; 4],
    /// Per channel, per filter outputs.
    outs: Vec<[Vec<f64>; 3]>,
    /// Per channel, weighted derivatives in `[q, r, sigma, alpha]`.
    dparams: Vec<[Vec<f64>; 4]>,
}

/// Selector inference: distribution over filters plus coefficients.
pub fn select_filter(model: &SelectorModel, ctx: &FilterContext) -> Result<FilterChoice> {
    ctx.validate()?;
    let out = model.mlp.output(&ctx.features());
    SelectorModel::choice_from_output(&out).map(|(c, _)| c)
}

/// One positive (query, prototype) pair plus its negatives.
#[derive(Clone, Debug)]
pub struct PairedBatch {
    pub positive: (FingerprintSequence, FingerprintSequence),
    pub negatives: Vec<(FingerprintSequence, FingerprintSequence)>,
}

impl PairedBatch {
    /// Queries in objective order: positive first, then each negative.
    pub fn queries(&self) -> impl Iterator<Item = &FingerprintSequence> {
        std::iter::once(&self.positive.0).chain(self.negatives.iter().map(|(q, _)| q))
    }
}

/// Downstream alignment loss used to train the selector.
pub trait AlignmentObjective {
    /// Loss for `batch` with its queries replaced by `cleaned` (same order as
    /// [`PairedBatch::queries`]), plus the loss gradient with respect to each
    /// cleaned query's features.
    fn loss_and_grad(
        &self,
        batch: &PairedBatch,
        cleaned: &[FingerprintSequence],
    ) -> Result<(f64, Vec<Vec<[f64; FEATURE_DIM]>>)>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectorTrainConfig {
    pub steps: usize,
    pub step_size: f64,
}

impl Default for SelectorTrainConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            step_size: 0.05,
        }
    }
}

/// Plain gradient descent on the selector through the alignment objective.
/// Returns the trained model and the loss before each step.
pub fn train_selector(
    model: &SelectorModel,
    batches: &[PairedBatch],
    objective: &dyn AlignmentObjective,
    norm: &Normalization,
    cfg: SelectorTrainConfig,
) -> Result<(SelectorModel, Vec<f64>)> {
    let mut m = model.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let (loss, grad) = m.loss_and_grad(batches, objective, norm)?;
        losses.push(loss);
        for (p, g) in m.mlp.params_mut().iter_mut().zip(&grad) {
            *p -= cfg.step_size * g;
        }
    }
    Ok((m, losses))
}
