use crate::error::Result;
use crate::filters::PairedBatch;
use crate::fpcore::{
    Fingerprint, FingerprintLibrary, FingerprintSequence, LibraryConfig, PrototypeId, SummaryConfig, SwitchEvent,
    SwitchKind,
};
use crate::simworld::{fingerprints, outdoor_flags, RawTrace, Site};

/// Seconds after the door at which the outdoor commit conditions are
/// checked.
pub const OUTDOOR_CHECK_DELAY: f64 = 5.0;

/// The `len` windows ending with the one that contains the degradation
/// onset.
pub fn onset_buffer(fps: &[Fingerprint], onset: f64, len: usize, day: u32) -> Result<Option<FingerprintSequence>> {
    let end = (onset.floor() as usize + 1).min(fps.len());
    if end < len {
        return Ok(None);
    }
    FingerprintSequence::new(fps[end - len..end].to_vec(), day, PrototypeId(0)).map(Some)
}

/// One past trace turned into a labelled buffer plus its fingerprints.
#[derive(Clone, Debug)]
pub struct HistoryItem {
    pub buffer: FingerprintSequence,
    pub event: SwitchEvent,
    pub fingerprints: Vec<Fingerprint>,
    /// Whether the commit rules accepted the buffer.
    pub committed: bool,
}

/// Labels each past trace at its degradation onset. Outdoor transitions
/// (site C) are only committed when GNSS, WiFi decay and door-exit motion
/// all hold five seconds after the door.
pub fn history_items(traces: &[RawTrace], summary: &SummaryConfig, len: usize, day: u32) -> Result<Vec<HistoryItem>> {
    let mut out = Vec::new();
    for trace in traces {
        let fps = fingerprints(trace, summary)?;
        let onset = trace.truth.degradation_onset;
        let Some(buffer) = onset_buffer(&fps, onset, len, day)? else {
            continue;
        };
        let event = SwitchEvent {
            time: onset.max(buffer.start()),
            kind: SwitchKind::WifiToCell,
            anchor: PrototypeId(0),
        };
        let committed = match (trace.site, trace.truth.door_time) {
            (Some(Site::C), Some(door)) => outdoor_flags(trace, door + OUTDOOR_CHECK_DELAY).all(),
            _ => true,
        };
        out.push(HistoryItem {
            buffer,
            event,
            fingerprints: fps,
            committed,
        });
    }
    Ok(out)
}

pub fn build_library(items: &[HistoryItem], cfg: &LibraryConfig) -> Result<FingerprintLibrary> {
    let mut lib = FingerprintLibrary::new(cfg.clone());
    for it in items.iter().filter(|i| i.committed) {
        lib.commit_segment(it.buffer.clone(), it.event)?;
    }
    Ok(lib)
}

/// Metric-training batches: each buffer is a positive query for every other
/// buffer, and the calm windows preceding its buffer (at least three, at
/// most `len`) form the negative.
pub fn metric_batches(items: &[HistoryItem], len: usize) -> Result<Vec<PairedBatch>> {
    let mut out = Vec::new();
    for (i, q) in items.iter().enumerate() {
        let calm_end = (q.buffer.start().floor() as usize).max(3).min(q.fingerprints.len());
        let calm_start = calm_end.saturating_sub(len);
        let calm = FingerprintSequence::new(q.fingerprints[calm_start..calm_end].to_vec(), 0, PrototypeId(0))?;
        for (j, p) in items.iter().enumerate() {
            if i == j {
                continue;
            }
            out.push(PairedBatch {
                positive: (q.buffer.clone(), p.buffer.clone()),
                negatives: vec![(calm.clone(), p.buffer.clone())],
            });
        }
    }
    Ok(out)
}
