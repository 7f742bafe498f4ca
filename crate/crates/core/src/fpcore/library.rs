use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::{read_windows, write_windows};
use super::{FingerprintSequence, PrototypeId, SwitchEvent, SwitchKind};
use crate::error::{Error, Result};

pub const DEFAULT_RETENTION_DAYS: u32 = 14;
pub const DEFAULT_CAPACITY: usize = 256;
/// Minimum windows in a committed buffer (a full pre-switch buffer is 10).
pub const DEFAULT_MIN_WINDOWS: usize = 5;

const INDEX_FILE: &str = "index.csv";
const INDEX_HEADER: &str = "prototype_id,created_at,label_kind";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LibraryConfig {
    pub retention_days: u32,
    pub capacity: usize,
    pub min_windows: usize,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            retention_days: DEFAULT_RETENTION_DAYS,
            capacity: DEFAULT_CAPACITY,
            min_windows: DEFAULT_MIN_WINDOWS,
        }
    }
}

/// Per-user store of labelled pre-switch sequences.
///
/// Single writer: commits and maintenance take `&mut self`; readers share
/// `&self` and the sequences themselves are immutable once stored.
#[derive(Clone, Debug, Default)]
pub struct FingerprintLibrary {
    sequences: BTreeMap<PrototypeId, FingerprintSequence>,
    config: LibraryConfig,
    next_id: u64,
}

impl FingerprintLibrary {
    pub fn new(config: LibraryConfig) -> Self {
        Self {
            sequences: BTreeMap::new(),
            config,
            next_id: 1,
        }
    }

    pub fn config(&self) -> &LibraryConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sequences in ascending prototype id order.
    pub fn iter(&self) -> impl Iterator<Item = &FingerprintSequence> {
        self.sequences.values()
    }

    pub fn get(&self, id: PrototypeId) -> Option<&FingerprintSequence> {
        self.sequences.get(&id)
    }

    /// Stores a pre-switch buffer labelled with the switch that followed it.
    pub fn commit_segment(
        &mut self,
        buffer: FingerprintSequence,
        event: SwitchEvent,
    ) -> Result<PrototypeId> {
        if buffer.len() < self.config.min_windows {
            return Err(Error::InsufficientContext {
                got: buffer.len(),
                need: self.config.min_windows,
            });
        }
        if !(event.time >= buffer.start() && event.time <= buffer.end() + 1e-9) {
            return Err(Error::InvalidSequence(format!(
                "switch at {} outside buffer span [{}, {}]",
                event.time,
                buffer.start(),
                buffer.end()
            )));
        }
        if self.config.capacity == 0 {
            return Err(Error::Config {
                field: "library.capacity".into(),
                reason: "capacity must be positive".into(),
            });
        }
        while self.sequences.len() >= self.config.capacity {
            self.evict_oldest();
        }
        let id = PrototypeId(self.next_id);
        self.next_id += 1;
        let mut seq = buffer;
        seq.prototype_id = id;
        seq.label = Some(SwitchEvent { anchor: id, ..event });
        self.sequences.insert(id, seq);
        Ok(id)
    }

    /// Commits only when all three outdoor-transition conditions hold.
    pub fn commit_outdoor_transition(
        &mut self,
        buffer: FingerprintSequence,
        event: SwitchEvent,
        gnss_ok: bool,
        wifi_decay: bool,
        pdr_exit: bool,
    ) -> Result<Option<PrototypeId>> {
        commit_outdoor_transition(self, buffer, event, gnss_ok, wifi_decay, pdr_exit)
    }

    fn evict_oldest(&mut self) {
        let victim = self
            .sequences
            .values()
            .min_by_key(|s| (s.created_at, s.prototype_id))
            .map(|s| s.prototype_id);
        if let Some(id) = victim {
            self.sequences.remove(&id);
        }
    }

    /// Drops sequences older than the retention horizon and enforces
    /// capacity. Idempotent for a fixed `current_day`.
    pub fn maintain(&mut self, current_day: u32) {
        let horizon = self.config.retention_days;
        self.sequences
            .retain(|_, s| current_day.saturating_sub(s.created_at) <= horizon);
        while self.sequences.len() > self.config.capacity {
            self.evict_oldest();
        }
    }

    /// Writes `index.csv` plus one `seq_<id>.csv` per stored sequence.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut index = BufWriter::new(fs::File::create(dir.join(INDEX_FILE))?);
        writeln!(index, "{INDEX_HEADER}")?;
        for seq in self.sequences.values() {
            let kind = seq.label.map(|l| l.kind.as_str()).unwrap_or("none");
            writeln!(index, "{},{},{}", seq.prototype_id, seq.created_at, kind)?;
            let file = fs::File::create(dir.join(format!("seq_{}.csv", seq.prototype_id)))?;
            let mut w = BufWriter::new(file);
            write_windows(&mut w, seq.windows())?;
            w.flush()?;
        }
        index.flush()?;
        Ok(())
    }

    /// Loads a snapshot written by [`save`](Self::save). Label times are
    /// restored as the end of each buffer.
    pub fn load(dir: &Path, config: LibraryConfig) -> Result<Self> {
        let index_path = dir.join(INDEX_FILE);
        if !index_path.exists() {
            return Err(Error::MissingInput(index_path.display().to_string()));
        }
        let text = fs::read_to_string(&index_path)?;
        let mut lib = Self::new(config);
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line != INDEX_HEADER {
                    return Err(Error::Parse {
                        line: 1,
                        reason: "bad index header".into(),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let perr = |reason: &str| Error::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(perr("expected 3 fields"));
            }
            let id = PrototypeId(parts[0].parse().map_err(|_| perr("bad prototype id"))?);
            let created_at: u32 = parts[1].parse().map_err(|_| perr("bad created_at"))?;
            let kind = match parts[2] {
                "none" => None,
                k => Some(SwitchKind::parse(k).ok_or_else(|| perr("bad label kind"))?),
            };
            let file = fs::File::open(dir.join(format!("seq_{id}.csv")))?;
            let windows = read_windows(BufReader::new(file))?;
            let mut seq = FingerprintSequence::new(windows, created_at, id)?;
            if let Some(kind) = kind {
                seq.label = Some(SwitchEvent {
                    time: seq.end(),
                    kind,
                    anchor: id,
                });
            }
            lib.next_id = lib.next_id.max(id.0 + 1);
            lib.sequences.insert(id, seq);
        }
        Ok(lib)
    }
}

/// Outdoor-transition commit rule: the buffer is stored iff continuous
/// high-confidence GNSS, WiFi weakness or sharp decay, and door-exit motion
/// all hold.
pub fn commit_outdoor_transition(
    library: &mut FingerprintLibrary,
    buffer: FingerprintSequence,
    event: SwitchEvent,
    gnss_ok: bool,
    wifi_decay: bool,
    pdr_exit: bool,
) -> Result<Option<PrototypeId>> {
    if gnss_ok && wifi_decay && pdr_exit {
        library.commit_segment(buffer, event).map(Some)
    } else {
        Ok(None)
    }
}
