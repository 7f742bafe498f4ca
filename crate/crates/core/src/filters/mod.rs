//! Denoising bank (Kalman, Gaussian, exponential low-pass) and the learned
//! selector that picks one per window from context.
//!
//! The filters are generic over [`Real`] so the same code path yields
//! parameter derivatives through forward-mode [`Dual`] numbers.

mod selector;

pub use selector::{
    select_filter, train_selector, AlignmentObjective, FilterContext, PairedBatch, SelectorModel,
    SelectorTrainConfig, SoftCleaned, CONTEXT_DIM,
};

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{param_err, Result};
use crate::fpcore::{FingerprintSequence, FEATURE_DIM};

/// Initial variance of the Kalman state when filtering a window.
pub const KALMAN_INIT_VAR: f64 = 1.0;

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    fn exp(self) -> Self;
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn val(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// Value plus one tangent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn var(v: f64) -> Self {
        Self { v, d: 1.0 }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d: self.d - o.d,
        }
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Self {
            v: self.v / o.v,
            d: (self.d * o.v - self.v * o.d) / (o.v * o.v),
        }
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            d: -self.d,
        }
    }
}

impl Real for Dual {
    fn cst(v: f64) -> Self {
        Self { v, d: 0.0 }
    }
    fn val(self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Self { v: e, d: self.d * e }
    }
}

/// Scalar random-walk Kalman filter: predict `var += q`, update with gain
/// `var / (var + r)`.
pub fn kalman<T: Real>(series: &[f64], q: T, r: T, init_mean: T, init_var: T) -> Vec<T> {
    let mut mean = init_mean;
    let mut var = init_var;
    series
        .iter()
        .map(|&x| {
            var = var + q;
            let gain = var / (var + r);
            mean = mean + gain * (T::cst(x) - mean);
            var = (T::cst(1.0) - gain) * var;
            mean
        })
        .collect()
}

/// Convolution with a Gaussian kernel truncated at `±ceil(3σ)` samples and
/// renormalized wherever it runs off the edges.
pub fn gaussian<T: Real>(series: &[f64], sigma: T) -> Vec<T> {
    let n = series.len();
    let radius = (3.0 * sigma.val()).ceil().max(1.0) as usize;
    let two_s2 = T::cst(2.0) * sigma * sigma;
    let weights: Vec<T> = (0..=radius)
        .map(|k| {
            let k2 = (k * k) as f64;
            (-(T::cst(k2) / two_s2)).exp()
        })
        .collect();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            let mut num = T::cst(0.0);
            let mut den = T::cst(0.0);
            for j in lo..=hi {
                let w = weights[i.abs_diff(j)];
                num = num + w * T::cst(series[j]);
                den = den + w;
            }
            num / den
        })
        .collect()
}

/// Exponential low-pass: `y0 = x0`, `yi = α xi + (1 − α) y(i−1)`.
pub fn elp<T: Real>(series: &[f64], alpha: T) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(series.len());
    for (i, &x) in series.iter().enumerate() {
        let y = if i == 0 {
            T::cst(x)
        } else {
            alpha * T::cst(x) + (T::cst(1.0) - alpha) * out[i - 1]
        };
        out.push(y);
    }
    out
}

pub fn apply_kalman(series: &[f64], q: f64, r: f64, init_mean: f64, init_var: f64) -> Result<Vec<f64>> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(param_err("R", format!("must be > 0, got {r}")));
    }
    if !(q >= 0.0 && q.is_finite()) {
        return Err(param_err("Q", format!("must be >= 0, got {q}")));
    }
    if !(init_var >= 0.0 && init_var.is_finite()) {
        return Err(param_err("init_var", format!("must be >= 0, got {init_var}")));
    }
    if series.is_empty() {
        return Err(param_err("series", "must be nonempty"));
    }
    Ok(kalman(series, q, r, init_mean, init_var))
}

pub fn apply_gaussian(series: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(param_err("sigma", format!("must be > 0, got {sigma}")));
    }
    Ok(gaussian(series, sigma))
}

pub fn apply_elp(series: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(param_err("alpha", format!("must be in (0, 1], got {alpha}")));
    }
    Ok(elp(series, alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Kalman,
    Gaussian,
    Elp,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Kalman, FilterKind::Gaussian, FilterKind::Elp];
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterParams {
    pub q: f64,
    pub r: f64,
    pub sigma: f64,
    pub alpha: f64,
}

/// Distribution over the three filters plus each filter's coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterChoice {
    weights: [f64; 3],
    params: FilterParams,
}

impl FilterChoice {
    pub fn new(weights: [f64; 3], params: FilterParams) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(param_err("weights", format!("{weights:?} is not a distribution")));
        }
        let p = params;
        if !(p.q >= 0.0 && p.q.is_finite()) {
            return Err(param_err("Q", format!("must be >= 0, got {}", p.q)));
        }
        if !(p.r > 0.0 && p.r.is_finite()) {
            return Err(param_err("R", format!("must be > 0, got {}", p.r)));
        }
        if !(p.sigma > 0.0 && p.sigma.is_finite()) {
            return Err(param_err("sigma", format!("must be > 0, got {}", p.sigma)));
        }
        if !(p.alpha > 0.0 && p.alpha <= 1.0) {
            return Err(param_err("alpha", format!("must be in (0, 1], got {}", p.alpha)));
        }
        Ok(Self { weights, params })
    }

    pub fn weights(&self) -> [f64; 3] {
        self.weights
    }

    pub fn params(&self) -> FilterParams {
        self.params
    }

    /// Hard selection: highest weight, ties resolved Kalman < Gaussian < ELP.
    pub fn selected(&self) -> FilterKind {
        let mut best = 0;
        for k in 1..3 {
            if self.weights[k] > self.weights[best] {
                best = k;
            }
        }
        FilterKind::ALL[best]
    }

    fn run(&self, kind: FilterKind, series: &[f64]) -> Vec<f64> {
        let p = self.params;
        match kind {
            FilterKind::Kalman => kalman(series, p.q, p.r, series[0], KALMAN_INIT_VAR),
            FilterKind::Gaussian => gaussian(series, p.sigma),
            FilterKind::Elp => elp(series, p.alpha),
        }
    }

    /// Weighted sum of all three filter outputs (training-time path).
    pub fn mixture(&self, series: &[f64]) -> Result<Vec<f64>> {
        if series.is_empty() {
            return Err(param_err("series", "must be nonempty"));
        }
        let mut out = vec![0.0; series.len()];
        for (k, kind) in FilterKind::ALL.iter().enumerate() {
            if self.weights[k] == 0.0 {
                continue;
            }
            for (o, y) in out.iter_mut().zip(self.run(*kind, series)) {
                *o += self.weights[k] * y;
            }
        }
        Ok(out)
    }

    /// Mixture output plus its derivatives: per filter output (`d/dπk`) and
    /// per parameter `[q, r, sigma, alpha]`.
    pub(crate) fn mixture_with_grad(&self, series: &[f64]) -> (Vec<f64>, [Vec<f64>; 3], [Vec<f64>; 4]) {
        let p = self.params;
        let x0 = series[0];
        let kq = kalman(series, Dual::var(p.q), Dual::cst(p.r), Dual::cst(x0), Dual::cst(KALMAN_INIT_VAR));
        let kr = kalman(series, Dual::cst(p.q), Dual::var(p.r), Dual::cst(x0), Dual::cst(KALMAN_INIT_VAR));
        let gs = gaussian(series, Dual::var(p.sigma));
        let el = elp(series, Dual::var(p.alpha));
        let outs = [
            kq.iter().map(|d| d.v).collect::<Vec<_>>(),
            gs.iter().map(|d| d.v).collect::<Vec<_>>(),
            el.iter().map(|d| d.v).collect::<Vec<_>>(),
        ];
        let w = self.weights;
        let y = (0..series.len())
            .map(|i| w[0] * outs[0][i] + w[1] * outs[1][i] + w[2] * outs[2][i])
            .collect();
        let dparams = [
            kq.iter().map(|d| w[0] * d.d).collect(),
            kr.iter().map(|d| w[0] * d.d).collect(),
            gs.iter().map(|d| w[1] * d.d).collect(),
            el.iter().map(|d| w[2] * d.d).collect(),
        ];
        (y, outs, dparams)
    }
}

/// Applies the hard-selected filter with its coefficients.
pub fn denoise(choice: &FilterChoice, series: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(param_err("series", "must be nonempty"));
    }
    let p = choice.params;
    match choice.selected() {
        FilterKind::Kalman => apply_kalman(series, p.q, p.r, series[0], KALMAN_INIT_VAR),
        FilterKind::Gaussian => apply_gaussian(series, p.sigma),
        FilterKind::Elp => apply_elp(series, p.alpha),
    }
}

fn channels(seq: &FingerprintSequence) -> Vec<Vec<f64>> {
    (0..FEATURE_DIM)
        .map(|c| seq.windows().iter().map(|w| w.features()[c]).collect())
        .collect()
}

fn rebuild(seq: &FingerprintSequence, cleaned: &[Vec<f64>]) -> Result<FingerprintSequence> {
    let feats: Vec<[f64; FEATURE_DIM]> = (0..seq.len())
        .map(|i| {
            let mut f = [0.0; FEATURE_DIM];
            for (c, ch) in cleaned.iter().enumerate() {
                f[c] = ch[i];
            }
            f
        })
        .collect();
    seq.map_features(&feats)
}

/// Denoises every feature channel of a sequence with the hard-selected
/// filter.
pub fn denoise_sequence(choice: &FilterChoice, seq: &FingerprintSequence) -> Result<FingerprintSequence> {
    let cleaned = channels(seq)
        .iter()
        .map(|ch| denoise(choice, ch))
        .collect::<Result<Vec<_>>>()?;
    rebuild(seq, &cleaned)
}

/// Soft-mixture counterpart of [`denoise_sequence`].
pub fn mixture_sequence(choice: &FilterChoice, seq: &FingerprintSequence) -> Result<FingerprintSequence> {
    let cleaned = channels(seq)
        .iter()
        .map(|ch| choice.mixture(ch))
        .collect::<Result<Vec<_>>>()?;
    rebuild(seq, &cleaned)
}
