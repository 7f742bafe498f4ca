//! Learned multi-modal metric and (soft) dynamic time warping.
//!
//! The per-cell cost between two fingerprints is
//! `Σm wm · present · ‖Wm (xq − xf)‖²` with modality weights
//! `w = softmax(scores)` and a small linear embedding `Wm` per modality.
//! Distances become similarities through `exp(−β D)`.

mod train;

pub use train::{
    calibration_loss, margin_loss, match_query, train_metric, write_results, AlignmentResult,
    MarginLoss, MarginObjective, MetricTrainConfig, TrainedMetric, RESULTS_HEADER,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{param_err, Error, Result};
use crate::fpcore::{Fingerprint, FingerprintSequence, Modality, FEATURE_DIM, MODALITY_COUNT};
use crate::nn::softmax;
use crate::tensorio::{read_tensors, take, write_tensors, NamedTensor};

/// Rows of each modality embedding.
pub const EMBED_DIM: usize = 4;
const TENSOR_KIND: &str = "metric";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricModel {
    embeddings: [Vec<f64>; MODALITY_COUNT],
    scores: [f64; MODALITY_COUNT],
    log_beta: f64,
}

fn embed_offset(kind: Modality) -> usize {
    Modality::ALL[..kind.index()].iter().map(|k| EMBED_DIM * k.dim()).sum()
}

const EMBED_PARAMS: usize = EMBED_DIM * FEATURE_DIM;
/// Index of the first modality score in the flat parameter vector.
pub const SCORES_OFFSET: usize = EMBED_PARAMS;
/// Index of `log β` in the flat parameter vector.
pub const LOG_BETA_INDEX: usize = EMBED_PARAMS + MODALITY_COUNT;
pub const METRIC_PARAMS: usize = LOG_BETA_INDEX + 1;

impl MetricModel {
    /// Embeddings copy each feature into its own row, uniform weights, β = 1.
    pub fn identity() -> Self {
        let embeddings = Modality::ALL.map(|k| {
            let mut w = vec![0.0; EMBED_DIM * k.dim()];
            for d in 0..k.dim() {
                w[d * k.dim() + d] = 1.0;
            }
            w
        });
        Self {
            embeddings,
            scores: [0.0; MODALITY_COUNT],
            log_beta: 0.0,
        }
    }

    /// Identity plus small seeded perturbations of every embedding entry.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::identity();
        for w in m.embeddings.iter_mut() {
            for v in w.iter_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
        m
    }

    pub fn new(embeddings: [Vec<f64>; MODALITY_COUNT], scores: [f64; MODALITY_COUNT], log_beta: f64) -> Result<Self> {
        for kind in Modality::ALL {
            let w = &embeddings[kind.index()];
            if w.len() != EMBED_DIM * kind.dim() {
                return Err(param_err(
                    "embedding",
                    format!("{kind} needs {}x{} entries, got {}", EMBED_DIM, kind.dim(), w.len()),
                ));
            }
        }
        let m = Self {
            embeddings,
            scores,
            log_beta,
        };
        if m.params().iter().any(|v| !v.is_finite()) {
            return Err(param_err("metric", "non-finite parameter"));
        }
        Ok(m)
    }

    pub fn with_scores(mut self, scores: [f64; MODALITY_COUNT]) -> Self {
        self.scores = scores;
        self
    }

    pub fn weights(&self) -> [f64; MODALITY_COUNT] {
        let w = softmax(&self.scores);
        [w[0], w[1], w[2], w[3], w[4]]
    }

    pub fn scores(&self) -> [f64; MODALITY_COUNT] {
        self.scores
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn embedding(&self, kind: Modality) -> &[f64] {
        &self.embeddings[kind.index()]
    }

    /// Flat layout: embeddings in modality order (row-major), then scores,
    /// then `log β`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(METRIC_PARAMS);
        for w in &self.embeddings {
            p.extend_from_slice(w);
        }
        p.extend_from_slice(&self.scores);
        p.push(self.log_beta);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != METRIC_PARAMS {
            return Err(param_err("metric", format!("expected {METRIC_PARAMS} parameters, got {}", p.len())));
        }
        for kind in Modality::ALL {
            let off = embed_offset(kind);
            let len = EMBED_DIM * kind.dim();
            self.embeddings[kind.index()].copy_from_slice(&p[off..off + len]);
        }
        self.scores.copy_from_slice(&p[SCORES_OFFSET..SCORES_OFFSET + MODALITY_COUNT]);
        self.log_beta = p[LOG_BETA_INDEX];
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut t: Vec<NamedTensor> = Modality::ALL
            .iter()
            .map(|k| {
                NamedTensor::new(
                    format!("embed.{}", k.name()),
                    &[EMBED_DIM, k.dim()],
                    self.embeddings[k.index()].clone(),
                )
            })
            .collect();
        t.push(NamedTensor::new("scores", &[MODALITY_COUNT], self.scores.to_vec()));
        t.push(NamedTensor::scalar("log_beta", self.log_beta));
        write_tensors(TENSOR_KIND, &t)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let t = read_tensors(text, TENSOR_KIND)?;
        let mut embeddings: [Vec<f64>; MODALITY_COUNT] = Default::default();
        for k in Modality::ALL {
            embeddings[k.index()] = take(&t, &format!("embed.{}", k.name()), &[EMBED_DIM, k.dim()])?.to_vec();
        }
        let s = take(&t, "scores", &[MODALITY_COUNT])?;
        let log_beta = take(&t, "log_beta", &[1])?[0];
        Self::new(embeddings, [s[0], s[1], s[2], s[3], s[4]], log_beta)
    }

    /// `Wm (xq − xf)` for one modality.
    fn project(&self, kind: Modality, q: &Fingerprint, f: &Fingerprint) -> ([f64; 3], [f64; EMBED_DIM]) {
        let off = kind.offset();
        let d = kind.dim();
        let mut delta = [0.0; 3];
        for k in 0..d {
            delta[k] = q.features()[off + k] - f.features()[off + k];
        }
        let w = &self.embeddings[kind.index()];
        let mut u = [0.0; EMBED_DIM];
        for (a, ua) in u.iter_mut().enumerate() {
            *ua = (0..d).map(|b| w[a * d + b] * delta[b]).sum();
        }
        (delta, u)
    }
}

fn both_present(q: &Fingerprint, f: &Fingerprint, kind: Modality) -> bool {
    q.is_present(kind) && f.is_present(kind)
}

/// Weighted, masked per-window cost.
pub fn cell_cost(model: &MetricModel, q: &Fingerprint, f: &Fingerprint) -> f64 {
    let w = model.weights();
    Modality::ALL
        .iter()
        .filter(|k| both_present(q, f, **k))
        .map(|k| {
            let (_, u) = model.project(*k, q, f);
            w[k.index()] * u.iter().map(|x| x * x).sum::<f64>()
        })
        .sum()
}

/// Band membership for query index `i` of `n` against prototype index `j`
/// of `m`: `|i·m − j·n| ≤ band·m`, i.e. the diagonal of the rectangle,
/// widened by `band` query steps.
pub fn in_band(i: usize, j: usize, n: usize, m: usize, band: usize) -> bool {
    (i * m).abs_diff(j * n) <= band * m
}

struct Grid {
    n: usize,
    m: usize,
    cost: Vec<f64>,
}

impl Grid {
    fn build(model: &MetricModel, q: &FingerprintSequence, f: &FingerprintSequence, band: usize) -> Self {
        let (n, m) = (q.len(), f.len());
        let mut cost = vec![f64::INFINITY; n * m];
        for i in 0..n {
            for j in 0..m {
                if in_band(i, j, n, m, band) {
                    cost[i * m + j] = cell_cost(model, &q.windows()[i], &f.windows()[j]);
                }
            }
        }
        Self { n, m, cost }
    }

    fn too_narrow(&self, band: usize) -> Error {
        Error::BandTooNarrow {
            band,
            query_len: self.n,
            proto_len: self.m,
        }
    }
}

/// Hard DTW distance and its warping path.
#[derive(Clone, Debug, PartialEq)]
pub struct DtwAlignment {
    pub distance: f64,
    pub path: Vec<(usize, usize)>,
}

/// Banded DTW. On equal costs the diagonal step wins, then the vertical
/// step `(i−1, j)`, then the horizontal step `(i, j−1)`.
pub fn dtw(model: &MetricModel, query: &FingerprintSequence, proto: &FingerprintSequence, band: usize) -> Result<DtwAlignment> {
    let g = Grid::build(model, query, proto, band);
    let (n, m) = (g.n, g.m);
    let mut acc = vec![f64::INFINITY; n * m];
    let mut step = vec![0u8; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = g.cost[i * m + j];
            if !c.is_finite() {
                continue;
            }
            if i == 0 && j == 0 {
                acc[0] = c;
                continue;
            }
            let cands = [
                (i > 0 && j > 0).then(|| acc[(i - 1) * m + j - 1]),
                (i > 0).then(|| acc[(i - 1) * m + j]),
                (j > 0).then(|| acc[i * m + j - 1]),
            ];
            let mut best = f64::INFINITY;
            let mut arg = 0u8;
            for (k, v) in cands.iter().enumerate() {
                if let Some(v) = v {
                    if *v < best {
                        best = *v;
                        arg = k as u8;
                    }
                }
            }
            if best.is_finite() {
                acc[i * m + j] = c + best;
                step[i * m + j] = arg;
            }
        }
    }
    let distance = acc[n * m - 1];
    if !distance.is_finite() {
        return Err(g.too_narrow(band));
    }
    let (mut i, mut j) = (n - 1, m - 1);
    let mut path = vec![(i, j)];
    while (i, j) != (0, 0) {
        match step[i * m + j] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            _ => j -= 1,
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwAlignment { distance, path })
}

fn softmin(vals: &[f64], gamma: f64) -> f64 {
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if !lo.is_finite() {
        return f64::INFINITY;
    }
    let s: f64 = vals
        .iter()
        .filter(|v| v.is_finite())
        .map(|v| (-(v - lo) / gamma).exp())
        .sum();
    lo - gamma * s.ln()
}

fn soft_forward(g: &Grid, gamma: f64) -> Vec<f64> {
    let (n, m) = (g.n, g.m);
    let mut r = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = g.cost[i * m + j];
            if !c.is_finite() {
                continue;
            }
            if i == 0 && j == 0 {
                r[0] = c;
                continue;
            }
            let cands = [
                if i > 0 && j > 0 { r[(i - 1) * m + j - 1] } else { f64::INFINITY },
                if i > 0 { r[(i - 1) * m + j] } else { f64::INFINITY },
                if j > 0 { r[i * m + j - 1] } else { f64::INFINITY },
            ];
            r[i * m + j] = c + softmin(&cands, gamma);
        }
    }
    r
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(param_err("gamma", format!("must be > 0, got {gamma}")))
    }
}

/// Soft-DTW: DTW with the minimum replaced by `−γ log Σ exp(−x/γ)`.
pub fn soft_dtw(
    model: &MetricModel,
    query: &FingerprintSequence,
    proto: &FingerprintSequence,
    band: usize,
    gamma: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    let g = Grid::build(model, query, proto, band);
    let r = soft_forward(&g, gamma);
    let v = r[g.n * g.m - 1];
    if v.is_finite() {
        Ok(v)
    } else {
        Err(g.too_narrow(band))
    }
}

/// Soft-DTW value with gradients in the flat metric parameters and in the
/// query features.
#[derive(Clone, Debug)]
pub struct SoftDtwGrad {
    pub value: f64,
    pub params: Vec<f64>,
    pub query: Vec<[f64; FEATURE_DIM]>,
}

pub fn soft_dtw_grad(
    model: &MetricModel,
    query: &FingerprintSequence,
    proto: &FingerprintSequence,
    band: usize,
    gamma: f64,
) -> Result<SoftDtwGrad> {
    check_gamma(gamma)?;
    let g = Grid::build(model, query, proto, band);
    let (n, m) = (g.n, g.m);
    let r = soft_forward(&g, gamma);
    let value = r[n * m - 1];
    if !value.is_finite() {
        return Err(g.too_narrow(band));
    }

    // Expected alignment: e[i][j] = ∂R(n−1, m−1) / ∂C(i, j).
    let mut e = vec![0.0; n * m];
    e[n * m - 1] = 1.0;
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            let here = r[i * m + j];
            if (i == n - 1 && j == m - 1) || !here.is_finite() {
                continue;
            }
            let mut acc = 0.0;
            for (a, b) in [(i + 1, j), (i, j + 1), (i + 1, j + 1)] {
                if a >= n || b >= m {
                    continue;
                }
                let k = a * m + b;
                if e[k] == 0.0 || !r[k].is_finite() {
                    continue;
                }
                acc += e[k] * ((r[k] - g.cost[k] - here) / gamma).exp();
            }
            e[i * m + j] = acc;
        }
    }

    let w = model.weights();
    let mut params = vec![0.0; METRIC_PARAMS];
    let mut d_weights = [0.0; MODALITY_COUNT];
    let mut qgrad = vec![[0.0; FEATURE_DIM]; n];
    for i in 0..n {
        for j in 0..m {
            let eij = e[i * m + j];
            if eij == 0.0 {
                continue;
            }
            let (qw, fw) = (&query.windows()[i], &proto.windows()[j]);
            for kind in Modality::ALL {
                if !both_present(qw, fw, kind) {
                    continue;
                }
                let mi = kind.index();
                let d = kind.dim();
                let (delta, u) = model.project(kind, qw, fw);
                d_weights[mi] += eij * u.iter().map(|x| x * x).sum::<f64>();
                let scale = 2.0 * eij * w[mi];
                let off = embed_offset(kind);
                let emb = &model.embeddings[mi];
                for a in 0..EMBED_DIM {
                    for b in 0..d {
                        params[off + a * d + b] += scale * u[a] * delta[b];
                        qgrad[i][kind.offset() + b] += scale * emb[a * d + b] * u[a];
                    }
                }
            }
        }
    }
    let dot: f64 = (0..MODALITY_COUNT).map(|k| w[k] * d_weights[k]).sum();
    for k in 0..MODALITY_COUNT {
        params[SCORES_OFFSET + k] = w[k] * (d_weights[k] - dot);
    }
    Ok(SoftDtwGrad {
        value,
        params,
        query: qgrad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpcore::{MaskEntry, PrototypeId};

    pub(crate) fn seq_from(values: &[f64], present: bool) -> FingerprintSequence {
        let windows = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut f = [0.0; FEATURE_DIM];
                f[Modality::Wifi.offset()] = *v;
                let mut mask = [MaskEntry {
                    present: true,
                    quality: 1.0,
                }; MODALITY_COUNT];
                mask[Modality::Wifi.index()].present = present;
                Fingerprint::from_parts(i as f64, f, mask).unwrap()
            })
            .collect();
        FingerprintSequence::new(windows, 0, PrototypeId(0)).unwrap()
    }

    fn wifi_only() -> MetricModel {
        MetricModel::identity().with_scores([-1000.0, 0.0, -1000.0, -1000.0, -1000.0])
    }

    #[test]
    fn identical_sequences_have_zero_distance() {
        let s = seq_from(&[0.1, 0.5, -0.3, 0.2], true);
        let a = dtw(&MetricModel::seeded(1), &s, &s, 1).unwrap();
        assert_eq!(a.distance, 0.0);
        assert_eq!(a.path, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn absent_modality_contributes_nothing() {
        let q = seq_from(&[0.1, 0.5, -0.3], false);
        let f = seq_from(&[0.9, -0.5, 0.7], true);
        assert_eq!(dtw(&wifi_only(), &q, &f, 2).unwrap().distance, 0.0);
    }

    #[test]
    fn hand_computed_warp() {
        // query 0 0 1, proto 0 1 1: cheapest path stays on the diagonal
        // except for one repeated 0 -> total cost 0.
        let q = seq_from(&[0.0, 0.0, 1.0], true);
        let f = seq_from(&[0.0, 1.0, 1.0], true);
        let a = dtw(&wifi_only(), &q, &f, 2).unwrap();
        assert_eq!(a.distance, 0.0);
        assert_eq!(a.path, vec![(0, 0), (1, 0), (2, 1), (2, 2)]);
    }

    #[test]
    fn tie_prefers_diagonal() {
        let q = seq_from(&[0.0, 0.0], true);
        let f = seq_from(&[0.0, 0.0], true);
        let a = dtw(&wifi_only(), &q, &f, 1).unwrap();
        assert_eq!(a.path, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn narrow_band_is_reported() {
        let q = seq_from(&[0.0, 0.1], true);
        let f = seq_from(&[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7], true);
        // the end cell sits |m − n| = 6 off the scaled diagonal
        let err = dtw(&wifi_only(), &q, &f, 0).unwrap_err();
        assert!(err.to_string().contains("band too narrow"));
    }

    #[test]
    fn soft_dtw_approaches_hard_dtw() {
        let q = seq_from(&[0.2, 0.4, -0.1, 0.3, 0.9], true);
        let f = seq_from(&[0.1, 0.5, 0.0, 0.8, 0.7], true);
        let m = MetricModel::seeded(4);
        let hard = dtw(&m, &q, &f, 2).unwrap().distance;
        let soft = soft_dtw(&m, &q, &f, 2, 1e-3).unwrap();
        assert!(soft <= hard + 1e-12);
        assert!((soft - hard).abs() < 1e-2);
    }

    #[test]
    fn tensor_round_trip() {
        let m = MetricModel::seeded(9).with_scores([0.1, 0.2, -0.3, 0.4, 0.0]);
        assert_eq!(MetricModel::from_text(&m.to_text()).unwrap(), m);
    }
}
