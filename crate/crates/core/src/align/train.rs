use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dtw, soft_dtw_grad, MetricModel, LOG_BETA_INDEX, METRIC_PARAMS};
use crate::error::{param_err, Error, Result};
use crate::filters::{AlignmentObjective, PairedBatch, SelectorModel};
use crate::fpcore::{FingerprintLibrary, FingerprintSequence, Normalization, PrototypeId, FEATURE_DIM};
use crate::nn::Adam;

/// Margin objective value with gradients in metric parameters and in each
/// query's features (positive query first).
#[derive(Clone, Debug)]
pub struct MarginLoss {
    pub value: f64,
    pub params: Vec<f64>,
    pub queries: Vec<Vec<[f64; FEATURE_DIM]>>,
}

fn margin_loss_on(
    model: &MetricModel,
    batch: &PairedBatch,
    queries: &[&FingerprintSequence],
    band: usize,
    gamma: f64,
    margin: f64,
) -> Result<MarginLoss> {
    if batch.negatives.is_empty() {
        return Err(Error::EmptyBatch("negatives"));
    }
    let k = batch.negatives.len() as f64;
    let pos = soft_dtw_grad(model, queries[0], &batch.positive.1, band, gamma)?;
    let mut value = 0.0;
    let mut params = vec![0.0; METRIC_PARAMS];
    let mut qgrads = vec![vec![[0.0; FEATURE_DIM]; queries[0].len()]];
    let mut active = 0.0;
    for (idx, (_, proto)) in batch.negatives.iter().enumerate() {
        let q = queries[idx + 1];
        let neg = soft_dtw_grad(model, q, proto, band, gamma)?;
        let hinge = margin + pos.value - neg.value;
        let mut g = vec![[0.0; FEATURE_DIM]; q.len()];
        if hinge > 0.0 {
            value += hinge / k;
            active += 1.0 / k;
            for (p, d) in params.iter_mut().zip(&neg.params) {
                *p -= d / k;
            }
            for (gi, ni) in g.iter_mut().zip(&neg.query) {
                for c in 0..FEATURE_DIM {
                    gi[c] = -ni[c] / k;
                }
            }
        }
        qgrads.push(g);
    }
    for (p, d) in params.iter_mut().zip(&pos.params) {
        *p += active * d;
    }
    for (gi, pi) in qgrads[0].iter_mut().zip(&pos.query) {
        for c in 0..FEATURE_DIM {
            gi[c] = active * pi[c];
        }
    }
    Ok(MarginLoss {
        value,
        params,
        queries: qgrads,
    })
}

/// Mean hinge `max(0, margin + D(q+, f+) − D(qk, fk))` over the negatives,
/// with soft-DTW distances.
pub fn margin_loss(model: &MetricModel, batch: &PairedBatch, band: usize, gamma: f64, margin: f64) -> Result<MarginLoss> {
    let queries: Vec<&FingerprintSequence> = batch.queries().collect();
    margin_loss_on(model, batch, &queries, band, gamma, margin)
}

/// Cross-entropy of similarities `exp(−β D)` against pair labels, using
/// hard DTW distances. Returns the loss and its derivative in `log β`.
pub fn calibration_loss(model: &MetricModel, batch: &PairedBatch, band: usize) -> Result<(f64, f64)> {
    if batch.negatives.is_empty() {
        return Err(Error::EmptyBatch("negatives"));
    }
    let beta = model.beta();
    let d_pos = dtw(model, &batch.positive.0, &batch.positive.1, band)?.distance;
    // −log S+ = β D+
    let mut loss = beta * d_pos;
    let mut grad = beta * d_pos;
    let k = batch.negatives.len() as f64;
    for (q, f) in &batch.negatives {
        let d = dtw(model, q, f, band)?.distance;
        let x = (beta * d).max(1e-12);
        // −log(1 − exp(−x)), derivative in x is −1 / expm1(x)
        loss += -(-(-x).exp_m1()).ln() / k;
        grad += -x / x.exp_m1() / k;
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub gamma: f64,
    pub margin: f64,
    pub band: usize,
    pub calibration_weight: f64,
    pub selector_lr: f64,
}

impl Default for MetricTrainConfig {
    fn default() -> Self {
        Self {
            steps: 150,
            lr: 0.05,
            gamma: 0.1,
            margin: 1.0,
            band: 3,
            calibration_weight: 0.1,
            selector_lr: 0.01,
        }
    }
}

impl MetricTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(param_err("gamma", "must be > 0"));
        }
        if !(self.lr > 0.0 && self.selector_lr >= 0.0) {
            return Err(param_err("lr", "must be > 0"));
        }
        if !(self.margin >= 0.0 && self.calibration_weight >= 0.0) {
            return Err(param_err("margin", "margin and calibration weight must be >= 0"));
        }
        Ok(())
    }
}

/// Margin loss evaluated on externally cleaned queries, for selector
/// training against a fixed metric.
pub struct MarginObjective<'a> {
    pub model: &'a MetricModel,
    pub band: usize,
    pub gamma: f64,
    pub margin: f64,
}

impl AlignmentObjective for MarginObjective<'_> {
    fn loss_and_grad(
        &self,
        batch: &PairedBatch,
        cleaned: &[FingerprintSequence],
    ) -> Result<(f64, Vec<Vec<[f64; FEATURE_DIM]>>)> {
        let refs: Vec<&FingerprintSequence> = cleaned.iter().collect();
        let l = margin_loss_on(self.model, batch, &refs, self.band, self.gamma, self.margin)?;
        Ok((l.value, l.queries))
    }
}

#[derive(Clone, Debug)]
pub struct TrainedMetric {
    pub model: MetricModel,
    pub selector: Option<SelectorModel>,
    /// Mean margin loss before each step.
    pub losses: Vec<f64>,
    /// Mean calibration loss before each step.
    pub calibration: Vec<f64>,
}

struct BatchGrad {
    margin: f64,
    calibration: f64,
    metric: Vec<f64>,
    selector: Vec<f64>,
}

fn batch_grad(
    model: &MetricModel,
    selector: Option<&SelectorModel>,
    batch: &PairedBatch,
    norm: &Normalization,
    cfg: &MetricTrainConfig,
) -> Result<BatchGrad> {
    let mut sel_grad = vec![0.0; selector.map_or(0, |s| s.param_count())];
    let loss = match selector {
        None => margin_loss(model, batch, cfg.band, cfg.gamma, cfg.margin)?,
        Some(sel) => {
            let cleaned = batch
                .queries()
                .map(|q| sel.soft_clean(q, norm))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&FingerprintSequence> = cleaned.iter().map(|c| &c.sequence).collect();
            let l = margin_loss_on(model, batch, &refs, cfg.band, cfg.gamma, cfg.margin)?;
            for (c, d) in cleaned.iter().zip(&l.queries) {
                sel.backprop(c, d, &mut sel_grad);
            }
            l
        }
    };
    let (cal, d_log_beta) = calibration_loss(model, batch, cfg.band)?;
    let mut metric = loss.params;
    metric[LOG_BETA_INDEX] += cfg.calibration_weight * d_log_beta;
    Ok(BatchGrad {
        margin: loss.value,
        calibration: cal,
        metric,
        selector: sel_grad,
    })
}

/// Trains the metric (and optionally the selector jointly) with Adam on the
/// margin objective plus the similarity calibration term.
pub fn train_metric(
    model: &MetricModel,
    selector: Option<&SelectorModel>,
    batches: &[PairedBatch],
    norm: &Normalization,
    cfg: &MetricTrainConfig,
) -> Result<TrainedMetric> {
    cfg.validate()?;
    if batches.is_empty() {
        return Err(Error::EmptyBatch("metric training batches"));
    }
    let mut m = model.clone();
    let mut sel = selector.cloned();
    let mut params = m.params();
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut sel_adam = sel.as_ref().map(|s| Adam::new(s.param_count(), cfg.selector_lr));
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut calibration = Vec::with_capacity(cfg.steps);
    let scale = 1.0 / batches.len() as f64;
    for _ in 0..cfg.steps {
        let grads = batches
            .par_iter()
            .map(|b| batch_grad(&m, sel.as_ref(), b, norm, cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut g_metric = vec![0.0; params.len()];
        let mut g_sel = vec![0.0; sel.as_ref().map_or(0, |s| s.param_count())];
        let (mut margin, mut cal) = (0.0, 0.0);
        for g in &grads {
            margin += g.margin * scale;
            cal += g.calibration * scale;
            for (a, b) in g_metric.iter_mut().zip(&g.metric) {
                *a += b * scale;
            }
            for (a, b) in g_sel.iter_mut().zip(&g.selector) {
                *a += b * scale;
            }
        }
        losses.push(margin);
        calibration.push(cal);
        adam.step(&mut params, &g_metric);
        m.set_params(&params)?;
        if let (Some(s), Some(opt)) = (sel.as_mut(), sel_adam.as_mut()) {
            opt.step(s.mlp.params_mut(), &g_sel);
        }
    }
    Ok(TrainedMetric {
        model: m,
        selector: sel,
        losses,
        calibration,
    })
}

pub const RESULTS_HEADER: &str = "proto_id,distance,similarity,path_len";

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    pub prototype_id: PrototypeId,
    pub distance: f64,
    pub similarity: f64,
    pub path_len: usize,
}

/// Aligns `query` against every library prototype and returns the `top_k`
/// closest, ties broken by smaller prototype id. Prototypes the band cannot
/// reach are skipped.
pub fn match_query(
    model: &MetricModel,
    query: &FingerprintSequence,
    library: &FingerprintLibrary,
    band: usize,
    top_k: usize,
) -> Result<Vec<AlignmentResult>> {
    if top_k == 0 {
        return Err(param_err("top_k", "must be >= 1"));
    }
    let beta = model.beta();
    let mut out = Vec::new();
    for proto in library.iter() {
        match dtw(model, query, proto, band) {
            Ok(a) => out.push(AlignmentResult {
                prototype_id: proto.prototype_id,
                distance: a.distance,
                similarity: (-beta * a.distance).exp(),
                path_len: a.path.len(),
            }),
            Err(Error::BandTooNarrow { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    out.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.prototype_id.cmp(&b.prototype_id))
    });
    out.truncate(top_k);
    Ok(out)
}

/// CSV export of match results.
pub fn write_results(results: &[AlignmentResult]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in results {
        s.push_str(&format!("{},{},{},{}\n", r.prototype_id, r.distance, r.similarity, r.path_len));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::soft_dtw;
    use crate::fpcore::{Fingerprint, LibraryConfig, MaskEntry, Modality, SwitchEvent, SwitchKind, MODALITY_COUNT};
    use crate::nn::relative_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, len: usize) -> FingerprintSequence {
        let windows = (0..len)
            .map(|i| {
                let mut f = [0.0; FEATURE_DIM];
                for v in f.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                let mut mask = [MaskEntry {
                    present: true,
                    quality: 1.0,
                }; MODALITY_COUNT];
                mask[Modality::Gnss.index()].present = rng.gen_bool(0.7);
                Fingerprint::from_parts(i as f64, f, mask).unwrap()
            })
            .collect();
        FingerprintSequence::new(windows, 0, PrototypeId(0)).unwrap()
    }

    fn batch(seed: u64) -> PairedBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PairedBatch {
            positive: (random_seq(&mut rng, 5), random_seq(&mut rng, 6)),
            negatives: (0..2).map(|_| (random_seq(&mut rng, 5), random_seq(&mut rng, 5))).collect(),
        }
    }

    #[test]
    fn soft_dtw_gradient_matches_finite_differences() {
        let model = MetricModel::seeded(2).with_scores([0.3, -0.2, 0.1, 0.5, -0.4]);
        let b = batch(7);
        let (q, f) = &b.positive;
        let g = soft_dtw_grad(&model, q, f, 2, 0.5).unwrap();
        let h = 1e-5;
        let base = model.params();
        for idx in 0..METRIC_PARAMS {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p[idx] += delta;
                let mut m = model.clone();
                m.set_params(&p).unwrap();
                soft_dtw(&m, q, f, 2, 0.5).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(relative_error(fd, g.params[idx]) < 1e-5, "param {idx}: {fd} vs {}", g.params[idx]);
        }
        // query features
        for (i, c) in [(0usize, 3usize), (2, 0), (4, 10), (3, 13)] {
            let eval = |delta: f64| {
                let mut feats: Vec<[f64; FEATURE_DIM]> = q.windows().iter().map(|w| *w.features()).collect();
                feats[i][c] += delta;
                soft_dtw(&model, &q.map_features(&feats).unwrap(), f, 2, 0.5).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(relative_error(fd, g.query[i][c]) < 1e-5);
        }
    }

    #[test]
    fn calibration_gradient_matches_finite_differences() {
        let model = MetricModel::seeded(1);
        let b = batch(3);
        let (_, g) = calibration_loss(&model, &b, 2).unwrap();
        let h = 1e-6;
        let eval = |delta: f64| {
            let mut p = model.params();
            p[LOG_BETA_INDEX] += delta;
            let mut m = model.clone();
            m.set_params(&p).unwrap();
            calibration_loss(&m, &b, 2).unwrap().0
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(relative_error(fd, g) < 1e-6);
    }

    #[test]
    fn empty_negatives_rejected() {
        let mut b = batch(1);
        b.negatives.clear();
        assert!(margin_loss(&MetricModel::identity(), &b, 2, 0.1, 1.0).is_err());
    }

    #[test]
    fn match_orders_by_distance_then_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lib = FingerprintLibrary::new(LibraryConfig::default());
        let a = random_seq(&mut rng, 6);
        let b = random_seq(&mut rng, 6);
        let ev = SwitchEvent {
            time: 6.0,
            kind: SwitchKind::WifiToCell,
            anchor: PrototypeId(0),
        };
        let id_b = lib.commit_segment(b.clone(), ev).unwrap();
        let id_a1 = lib.commit_segment(a.clone(), ev).unwrap();
        let id_a2 = lib.commit_segment(a.clone(), ev).unwrap();
        let model = MetricModel::identity();
        let res = match_query(&model, &a, &lib, 2, 2).unwrap();
        assert_eq!(res.len(), 2);
        assert_eq!(res[0].prototype_id, id_a1);
        assert_eq!(res[1].prototype_id, id_a2);
        assert_eq!(res[0].distance, 0.0);
        assert_eq!(res[0].similarity, 1.0);
        let all = match_query(&model, &a, &lib, 2, 10).unwrap();
        assert_eq!(all[2].prototype_id, id_b);
        let csv = write_results(&all);
        assert!(csv.starts_with(RESULTS_HEADER));
        assert_eq!(csv.lines().count(), 4);
        assert!(match_query(&model, &a, &lib, 2, 0).is_err());
    }
}
