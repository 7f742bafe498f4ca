//! Multi-modal fingerprints and the on-device personalized library.
//!
//! A [`Fingerprint`] is one window's concatenated modality summaries plus a
//! presence/quality mask. Sequences of fingerprints that precede a network
//! switch are committed to a [`FingerprintLibrary`] and later used as
//! prototypes for alignment.

mod hash;
pub mod io;
mod library;
mod privacy;
pub mod raw;
mod summarize;

pub use hash::{hash_id, IdHash};
pub use library::{
    commit_outdoor_transition, FingerprintLibrary, LibraryConfig, DEFAULT_CAPACITY,
    DEFAULT_MIN_WINDOWS, DEFAULT_RETENTION_DAYS,
};
pub use privacy::{
    desensitize, leak_check, quantize, DesensitizedSummary, EpisodeOutcome, FeedbackTuple,
    HfField, SimilarityStats,
};
pub use summarize::{
    least_squares_slope, raw_wifi_features, summarize_window, Normalization, PresenceMask,
    SummaryConfig,
};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensing modality. The order of [`Modality::ALL`] is the on-disk and
/// in-memory feature order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Pdr,
    Wifi,
    Cell,
    Gnss,
    Time,
}

pub const MODALITY_COUNT: usize = 5;

/// Length of the flattened feature vector across all modalities.
pub const FEATURE_DIM: usize = 14;

impl Modality {
    pub const ALL: [Modality; MODALITY_COUNT] = [
        Modality::Pdr,
        Modality::Wifi,
        Modality::Cell,
        Modality::Gnss,
        Modality::Time,
    ];

    /// Fixed feature count for this modality.
    pub const fn dim(self) -> usize {
        match self {
            Modality::Time => 2,
            _ => 3,
        }
    }

    pub const fn index(self) -> usize {
        self as usize
    }

    /// Offset of this modality's first feature in the flattened vector.
    pub const fn offset(self) -> usize {
        self.index() * 3
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Pdr => "pdr",
            Modality::Wifi => "wifi",
            Modality::Cell => "cell",
            Modality::Gnss => "gnss",
            Modality::Time => "time",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Normalized summary statistics for one modality in one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalitySummary {
    kind: Modality,
    features: Vec<f64>,
    quality: f64,
}

impl ModalitySummary {
    pub fn new(kind: Modality, features: Vec<f64>, quality: f64) -> Result<Self> {
        if features.len() != kind.dim() {
            return Err(Error::InvalidSequence(format!(
                "{kind} summary needs {} features, got {}",
                kind.dim(),
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSequence(format!(
                "{kind} summary has non-finite features"
            )));
        }
        if !(0.0..=1.0).contains(&quality) {
            return Err(Error::InvalidSequence(format!(
                "{kind} quality {quality} outside [0, 1]"
            )));
        }
        Ok(Self {
            kind,
            features,
            quality,
        })
    }

    pub fn kind(&self) -> Modality {
        self.kind
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn quality(&self) -> f64 {
        self.quality
    }
}

/// One entry of the presence/quality mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskEntry {
    pub present: bool,
    pub quality: f64,
}

/// One time window's fingerprint: every modality summary plus the mask.
///
/// Summaries of modalities that the mask marks absent are still stored but
/// never enter any cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Fingerprint {
    timestamp: f64,
    features: [f64; FEATURE_DIM],
    mask: [MaskEntry; MODALITY_COUNT],
    strongest_ap: Option<IdHash>,
    cell_id: Option<IdHash>,
}

impl Fingerprint {
    pub fn new(
        timestamp: f64,
        summaries: [ModalitySummary; MODALITY_COUNT],
        present: [bool; MODALITY_COUNT],
    ) -> Result<Self> {
        let mut features = [0.0; FEATURE_DIM];
        let mut mask = [MaskEntry {
            present: false,
            quality: 0.0,
        }; MODALITY_COUNT];
        for (slot, summary) in summaries.iter().enumerate() {
            let kind = Modality::ALL[slot];
            if summary.kind != kind {
                return Err(Error::InvalidSequence(format!(
                    "summary {slot} is {} but {kind} expected",
                    summary.kind
                )));
            }
            let off = kind.offset();
            features[off..off + kind.dim()].copy_from_slice(&summary.features);
            mask[slot] = MaskEntry {
                present: present[slot],
                quality: summary.quality,
            };
        }
        Self::from_parts(timestamp, features, mask)
    }

    /// Builds a fingerprint from an already flattened feature vector.
    pub fn from_parts(
        timestamp: f64,
        features: [f64; FEATURE_DIM],
        mask: [MaskEntry; MODALITY_COUNT],
    ) -> Result<Self> {
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(Error::InvalidSequence(format!(
                "timestamp {timestamp} must be finite and nonnegative"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSequence("non-finite feature".into()));
        }
        if mask.iter().any(|m| !(0.0..=1.0).contains(&m.quality)) {
            return Err(Error::InvalidSequence("mask quality outside [0, 1]".into()));
        }
        Ok(Self {
            timestamp,
            features,
            mask,
            strongest_ap: None,
            cell_id: None,
        })
    }

    pub fn with_ids(mut self, strongest_ap: Option<IdHash>, cell_id: Option<IdHash>) -> Self {
        self.strongest_ap = strongest_ap;
        self.cell_id = cell_id;
        self
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn features(&self) -> &[f64; FEATURE_DIM] {
        &self.features
    }

    pub fn modality_features(&self, kind: Modality) -> &[f64] {
        &self.features[kind.offset()..kind.offset() + kind.dim()]
    }

    pub fn summary(&self, kind: Modality) -> ModalitySummary {
        ModalitySummary {
            kind,
            features: self.modality_features(kind).to_vec(),
            quality: self.mask[kind.index()].quality,
        }
    }

    pub fn mask(&self) -> &[MaskEntry; MODALITY_COUNT] {
        &self.mask
    }

    pub fn is_present(&self, kind: Modality) -> bool {
        self.mask[kind.index()].present
    }

    pub fn strongest_ap(&self) -> Option<IdHash> {
        self.strongest_ap
    }

    pub fn cell_id(&self) -> Option<IdHash> {
        self.cell_id
    }

    /// Copy with the same mask and ids but a replaced feature vector.
    pub fn with_features(&self, features: [f64; FEATURE_DIM]) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSequence("non-finite feature".into()));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    pub fn with_timestamp(&self, timestamp: f64) -> Self {
        Self {
            timestamp,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SwitchKind {
    WifiToCell,
    CellToWifi,
    ApHandover,
}

impl SwitchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SwitchKind::WifiToCell => "wifi_to_cell",
            SwitchKind::CellToWifi => "cell_to_wifi",
            SwitchKind::ApHandover => "ap_handover",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wifi_to_cell" => Some(SwitchKind::WifiToCell),
            "cell_to_wifi" => Some(SwitchKind::CellToWifi),
            "ap_handover" => Some(SwitchKind::ApHandover),
            _ => None,
        }
    }
}

impl fmt::Display for SwitchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stable identifier of a stored fingerprint sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PrototypeId(pub u64);

impl fmt::Display for PrototypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchEvent {
    pub time: f64,
    pub kind: SwitchKind,
    pub anchor: PrototypeId,
}

/// Ordered fingerprints for one segment, optionally labelled by the switch
/// that followed it.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerprintSequence {
    windows: Vec<Fingerprint>,
    pub label: Option<SwitchEvent>,
    pub created_at: u32,
    pub prototype_id: PrototypeId,
}

impl FingerprintSequence {
    pub fn new(windows: Vec<Fingerprint>, created_at: u32, prototype_id: PrototypeId) -> Result<Self> {
        if windows.len() < 2 {
            return Err(Error::InvalidSequence(format!(
                "sequence needs at least 2 windows, got {}",
                windows.len()
            )));
        }
        if windows
            .windows(2)
            .any(|w| w[1].timestamp <= w[0].timestamp)
        {
            return Err(Error::InvalidSequence(
                "timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            windows,
            label: None,
            created_at,
            prototype_id,
        })
    }

    pub fn windows(&self) -> &[Fingerprint] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.windows[0].timestamp
    }

    /// End of the covered span: last window start plus the typical window
    /// spacing.
    pub fn end(&self) -> f64 {
        let n = self.windows.len();
        let last = self.windows[n - 1].timestamp;
        last + (last - self.windows[n - 2].timestamp)
    }

    pub fn with_label(mut self, label: SwitchEvent) -> Self {
        self.label = Some(label);
        self
    }

    /// Same sequence with every feature vector replaced, in order.
    pub fn map_features(&self, features: &[[f64; FEATURE_DIM]]) -> Result<Self> {
        if features.len() != self.windows.len() {
            return Err(Error::InvalidSequence("feature count mismatch".into()));
        }
        let windows = self
            .windows
            .iter()
            .zip(features)
            .map(|(w, f)| w.with_features(*f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            windows,
            ..self.clone()
        })
    }

    /// Same features with timestamps shifted by `dt`.
    pub fn shifted(&self, dt: f64) -> Result<Self> {
        let windows = self
            .windows
            .iter()
            .map(|w| w.with_timestamp(w.timestamp + dt))
            .collect();
        let mut out = Self::new(windows, self.created_at, self.prototype_id)?;
        out.label = self.label.map(|l| SwitchEvent {
            time: l.time + dt,
            ..l
        });
        Ok(out)
    }
}
