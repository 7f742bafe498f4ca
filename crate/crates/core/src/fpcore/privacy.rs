//! Desensitized summaries: the only data that leaves a device.
//!
//! Identifiers are re-hashed, features quantized and all timing is relative
//! to the start of the summarized sequence. The same type carries the
//! per-episode feedback tuples an edge uploads, serialized as a
//! length-prefixed text frame:
//!
//! ```text
//! <payload byte length>\n
//! <version>,<edge_id_hash>,<tuple_count>\n
//! <f1;f2;..>|<action>|<hf>|<offset>\n          (tuple_count lines)
//! meta|<session>|<kind>|<label_offset>|<protos>|<aps>|<feature means>|<window offsets>\n
//! sim|<mean>|<max>\n                          (optional)
//! outcome|<tts>|<delta_time>|<censored>|<rollbacks>\n   (optional)
//! ```
//!
//! Hashes are 16 lowercase hex digits, lists are `;`-separated (empty for
//! none), `hf` is a number, `NA` (feedback expected but not given) or `-`
//! (no feedback applies), and absent optional scalars are `none`.

use std::fmt::Write as _;

use super::{hash_id, FingerprintSequence, IdHash, SwitchKind, FEATURE_DIM};
use crate::error::{Error, Result};

/// Rounds `x` to the nearest multiple of `step`.
pub fn quantize(x: f64, step: f64) -> f64 {
    let inv = (1.0 / step).round();
    if inv > 0.0 && (inv * step - 1.0).abs() < 1e-12 {
        (x * inv).round() / inv
    } else {
        (x / step).round() * step
    }
}

const FEATURE_STEP: f64 = 0.1;
const TIME_STEP: f64 = 0.01;
const STATE_STEP: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HfField {
    Value(f64),
    /// A decision was made but no feedback arrived.
    Missing,
    /// No feedback applies to this step.
    NotApplicable,
}

impl HfField {
    pub fn value(self) -> Option<f64> {
        match self {
            HfField::Value(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackTuple {
    pub state: Vec<f64>,
    pub action: usize,
    pub hf: HfField,
    /// Seconds since the start of the episode.
    pub offset: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityStats {
    pub mean: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub tts: f64,
    pub delta_time: f64,
    pub censored: bool,
    pub rollbacks: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesensitizedSummary {
    pub version: u32,
    pub edge_id: IdHash,
    pub session: IdHash,
    pub switch_kind: Option<SwitchKind>,
    pub label_offset: Option<f64>,
    pub prototype_hashes: Vec<IdHash>,
    pub ap_hashes: Vec<IdHash>,
    pub feature_means: Vec<f64>,
    pub window_offsets: Vec<f64>,
    pub similarity: Option<SimilarityStats>,
    pub tuples: Vec<FeedbackTuple>,
    pub outcome: Option<EpisodeOutcome>,
}

/// Builds the privacy-preserving digest of one sequence.
pub fn desensitize(sequence: &FingerprintSequence, salt: u64) -> DesensitizedSummary {
    let rehash = |h: IdHash| hash_id(salt, &h.0.to_le_bytes());
    let session = hash_id(salt, sequence.prototype_id.0.to_string().as_bytes());
    let start = sequence.start();

    let mut ap_hashes: Vec<IdHash> = sequence
        .windows()
        .iter()
        .flat_map(|w| [w.strongest_ap(), w.cell_id()])
        .flatten()
        .map(rehash)
        .collect();
    ap_hashes.sort();
    ap_hashes.dedup();

    let mut sums = [0.0; FEATURE_DIM];
    let mut counts = [0usize; FEATURE_DIM];
    for w in sequence.windows() {
        for kind in super::Modality::ALL {
            if !w.is_present(kind) {
                continue;
            }
            for k in kind.offset()..kind.offset() + kind.dim() {
                sums[k] += w.features()[k];
                counts[k] += 1;
            }
        }
    }
    let feature_means = sums
        .iter()
        .zip(counts)
        .map(|(s, c)| if c == 0 { 0.0 } else { quantize(s / c as f64, FEATURE_STEP) })
        .collect();

    DesensitizedSummary {
        version: 0,
        edge_id: IdHash(0),
        session,
        switch_kind: sequence.label.map(|l| l.kind),
        label_offset: sequence.label.map(|l| quantize(l.time - start, TIME_STEP)),
        prototype_hashes: vec![session],
        ap_hashes,
        feature_means,
        window_offsets: sequence
            .windows()
            .iter()
            .map(|w| quantize(w.timestamp() - start, TIME_STEP))
            .collect(),
        similarity: None,
        tuples: Vec::new(),
        outcome: None,
    }
}

fn join<T, F: Fn(&T) -> String>(items: &[T], f: F) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(";")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}

impl DesensitizedSummary {
    /// Payload text without the length prefix.
    pub fn payload(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{},{},{}", self.version, self.edge_id, self.tuples.len());
        for t in &self.tuples {
            let hf = match t.hf {
                HfField::Value(v) => quantize(v, STATE_STEP).to_string(),
                HfField::Missing => "NA".into(),
                HfField::NotApplicable => "-".into(),
            };
            let _ = writeln!(
                out,
                "{}|{}|{}|{}",
                join(&t.state, |v| quantize(*v, STATE_STEP).to_string()),
                t.action,
                hf,
                quantize(t.offset, TIME_STEP)
            );
        }
        let _ = writeln!(
            out,
            "meta|{}|{}|{}|{}|{}|{}|{}",
            self.session,
            self.switch_kind.map(|k| k.as_str()).unwrap_or("none"),
            opt(self.label_offset),
            join(&self.prototype_hashes, |h| h.to_string()),
            join(&self.ap_hashes, |h| h.to_string()),
            join(&self.feature_means, |v| v.to_string()),
            join(&self.window_offsets, |v| v.to_string()),
        );
        if let Some(s) = self.similarity {
            let _ = writeln!(
                out,
                "sim|{}|{}",
                quantize(s.mean, STATE_STEP),
                quantize(s.max, STATE_STEP)
            );
        }
        if let Some(o) = self.outcome {
            let _ = writeln!(
                out,
                "outcome|{}|{}|{}|{}",
                quantize(o.tts, TIME_STEP),
                quantize(o.delta_time, TIME_STEP),
                u8::from(o.censored),
                o.rollbacks
            );
        }
        out
    }

    /// Length-prefixed frame.
    pub fn to_frame(&self) -> String {
        let payload = self.payload();
        format!("{}\n{}", payload.len(), payload)
    }

    /// Parses one frame from the front of `input`, returning the summary and
    /// the unconsumed remainder.
    pub fn from_frame(input: &str) -> Result<(Self, &str)> {
        let nl = input.find('\n').ok_or_else(|| perr(1, "missing length prefix"))?;
        let len: usize = input[..nl]
            .parse()
            .map_err(|_| perr(1, "bad length prefix"))?;
        let body_start = nl + 1;
        if input.len() < body_start + len {
            return Err(perr(1, "truncated frame"));
        }
        let payload = &input[body_start..body_start + len];
        Ok((Self::parse_payload(payload)?, &input[body_start + len..]))
    }

    pub fn parse_payload(payload: &str) -> Result<Self> {
        let mut lines = payload.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty payload"))?;
        let head: Vec<&str> = header.split(',').collect();
        if head.len() != 3 {
            return Err(perr(1, "header needs version,edge_id_hash,tuple_count"));
        }
        let version: u32 = head[0].parse().map_err(|_| perr(1, "bad version"))?;
        let edge_id = IdHash::parse(head[1]).ok_or_else(|| perr(1, "bad edge id hash"))?;
        let count: usize = head[2].parse().map_err(|_| perr(1, "bad tuple count"))?;

        let mut tuples = Vec::with_capacity(count);
        for _ in 0..count {
            let (i, line) = lines.next().ok_or_else(|| perr(0, "missing tuple line"))?;
            let ln = i + 1;
            let parts: Vec<&str> = line.split('|').collect();
            if parts.len() != 4 {
                return Err(perr(ln, "tuple needs state|action|hf|offset"));
            }
            let state = parse_list(parts[0], ln)?;
            let action = parts[1].parse().map_err(|_| perr(ln, "bad action"))?;
            let hf = match parts[2] {
                "NA" => HfField::Missing,
                "-" => HfField::NotApplicable,
                v => HfField::Value(num(v, ln)?),
            };
            let offset = num(parts[3], ln)?;
            tuples.push(FeedbackTuple {
                state,
                action,
                hf,
                offset,
            });
        }

        let mut summary = None;
        let mut similarity = None;
        let mut outcome = None;
        for (i, line) in lines {
            let ln = i + 1;
            let parts: Vec<&str> = line.split('|').collect();
            match parts[0] {
                "meta" if parts.len() == 8 => {
                    let hashes = |s: &str| -> Result<Vec<IdHash>> {
                        if s.is_empty() {
                            return Ok(Vec::new());
                        }
                        s.split(';')
                            .map(|h| IdHash::parse(h).ok_or_else(|| perr(ln, "bad hash")))
                            .collect()
                    };
                    summary = Some((
                        IdHash::parse(parts[1]).ok_or_else(|| perr(ln, "bad session hash"))?,
                        match parts[2] {
                            "none" => None,
                            k => Some(SwitchKind::parse(k).ok_or_else(|| perr(ln, "bad kind"))?),
                        },
                        match parts[3] {
                            "none" => None,
                            v => Some(num(v, ln)?),
                        },
                        hashes(parts[4])?,
                        hashes(parts[5])?,
                        parse_list(parts[6], ln)?,
                        parse_list(parts[7], ln)?,
                    ));
                }
                "sim" if parts.len() == 3 => {
                    similarity = Some(SimilarityStats {
                        mean: num(parts[1], ln)?,
                        max: num(parts[2], ln)?,
                    });
                }
                "outcome" if parts.len() == 5 => {
                    outcome = Some(EpisodeOutcome {
                        tts: num(parts[1], ln)?,
                        delta_time: num(parts[2], ln)?,
                        censored: parts[3] == "1",
                        rollbacks: parts[4].parse().map_err(|_| perr(ln, "bad rollbacks"))?,
                    });
                }
                _ => return Err(perr(ln, "unrecognized line")),
            }
        }
        let (session, switch_kind, label_offset, prototype_hashes, ap_hashes, feature_means, window_offsets) =
            summary.ok_or_else(|| perr(0, "missing meta line"))?;
        Ok(Self {
            version,
            edge_id,
            session,
            switch_kind,
            label_offset,
            prototype_hashes,
            ap_hashes,
            feature_means,
            window_offsets,
            similarity,
            tuples,
            outcome,
        })
    }
}

fn perr(line: usize, reason: &str) -> Error {
    Error::Parse {
        line,
        reason: reason.to_string(),
    }
}

fn num(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| perr(line, &format!("bad number `{s}`")))
}

fn parse_list(s: &str, line: usize) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|v| num(v, line)).collect()
}

/// Checks serialized summary text for leaked identifiers or absolute
/// timestamps.
///
/// A raw identifier leaks if it appears as a whole token, or (for
/// identifiers of eight or more characters) anywhere as a substring. An
/// absolute time leaks if any numeric token equals it.
pub fn leak_check(text: &str, raw_identifiers: &[String], absolute_times: &[f64]) -> Result<()> {
    let tokens: Vec<&str> = text
        .split(|c: char| matches!(c, ',' | '|' | ';' | '\n'))
        .filter(|t| !t.is_empty())
        .collect();
    for id in raw_identifiers {
        if id.is_empty() {
            continue;
        }
        if tokens.iter().any(|t| *t == id.as_str()) || (id.len() >= 8 && text.contains(id.as_str()))
        {
            return Err(Error::PrivacyLeak(format!("identifier `{id}` present")));
        }
    }
    for tok in &tokens {
        if let Ok(v) = tok.parse::<f64>() {
            if absolute_times.iter().any(|t| *t == v) {
                return Err(Error::PrivacyLeak(format!("absolute time {v} present")));
            }
        }
    }
    Ok(())
}
