//! Deterministic trajectory and radio simulator for three site archetypes,
//! the threshold + hysteresis baseline, and the scoring oracles.

mod baseline;
mod generate;
mod scenario;
mod tracefile;

pub use baseline::{baseline_policy, BaselineConfig, BaselineOutcome};
pub use generate::{fingerprints, generate, outdoor_flags, OutdoorFlags, RawTrace, Walker, WalkerState};
pub use scenario::{ApPlacement, Scenario, ScenarioFile, Waypoint, Zone};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Site {
    /// Office corridor into a restroom: fully indoor, gradual decay.
    A,
    /// Lobby door egress with a brief rebound along a glass frontage.
    B,
    /// Apartment into a courtyard where the user lingers, then the street.
    C,
}

impl Site {
    pub const ALL: [Site; 3] = [Site::A, Site::B, Site::C];

    pub fn as_str(self) -> &'static str {
        match self {
            Site::A => "A",
            Site::B => "B",
            Site::C => "C",
        }
    }

    pub fn long_name(self) -> &'static str {
        match self {
            Site::A => "A_indoor",
            Site::B => "B_door_egress",
            Site::C => "C_apartment_mixed",
        }
    }

    pub(crate) fn salt(self) -> u64 {
        match self {
            Site::A => 0xa11ce,
            Site::B => 0xb0b,
            Site::C => 0xc0ffee,
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Site::ALL
            .into_iter()
            .find(|site| s.eq_ignore_ascii_case(site.as_str()) || s.eq_ignore_ascii_case(site.long_name()))
            .ok_or_else(|| Error::Config {
                field: "site".into(),
                reason: format!("unknown site `{s}` (expected A, B or C)"),
            })
    }
}

/// Propagation constants. All RSSI values are dBm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioConfig {
    /// Path loss at 1 m, dB.
    pub pl0_db: f64,
    pub exponent_indoor: f64,
    pub exponent_outdoor: f64,
    pub wall_db: f64,
    pub shadowing_sigma: f64,
    /// Correlation of successive once-per-second shadowing samples.
    pub shadowing_rho: f64,
    /// Weakest reading a scan reports for non-connected APs.
    pub sensitivity: f64,
    pub rssi_min: f64,
    pub rssi_max: f64,
    /// Cellular RSRP below which the cell link counts as unusable.
    pub cell_unusable_rsrp: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            pl0_db: 40.0,
            exponent_indoor: 2.2,
            exponent_outdoor: 2.0,
            wall_db: 8.0,
            shadowing_sigma: 2.0,
            shadowing_rho: 0.8,
            sensitivity: -95.0,
            rssi_min: -100.0,
            rssi_max: -30.0,
            cell_unusable_rsrp: -115.0,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::Config {
                field: format!("radio.{field}"),
                reason: reason.into(),
            })
        };
        if !(self.exponent_indoor > 0.0 && self.exponent_outdoor > 0.0) {
            return bad("exponent_indoor", "path-loss exponents must be > 0");
        }
        if !(self.wall_db >= 0.0) {
            return bad("wall_db", "must be >= 0");
        }
        if !(self.shadowing_sigma >= 0.0) {
            return bad("shadowing_sigma", "must be >= 0");
        }
        if !(0.0..1.0).contains(&self.shadowing_rho) {
            return bad("shadowing_rho", "must be in [0, 1)");
        }
        if !(self.rssi_min < self.rssi_max) {
            return bad("rssi_min", "must be below rssi_max");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub radio: RadioConfig,
    pub baseline: BaselineConfig,
    /// Walking speed, m/s.
    pub walker_speed: f64,
    /// Pause at each turn, s.
    pub turn_pause: f64,
    /// Clean RSSI level whose downward crossing marks degradation onset.
    pub onset_threshold: f64,
    /// Lowest TTS shown in reports.
    pub tts_floor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            radio: RadioConfig::default(),
            baseline: BaselineConfig::default(),
            walker_speed: 1.2,
            turn_pause: 0.5,
            onset_threshold: -75.0,
            tts_floor: -5.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        self.baseline.validate()?;
        if !(self.walker_speed > 0.0) {
            return Err(Error::Config {
                field: "sim.walker_speed".into(),
                reason: "must be > 0".into(),
            });
        }
        if !(self.turn_pause >= 0.0) {
            return Err(Error::Config {
                field: "sim.turn_pause".into(),
                reason: "must be >= 0".into(),
            });
        }
        Ok(())
    }
}

/// Ground-truth annotations of one trace.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub degradation_onset: f64,
    /// Arrival at the last indoor waypoint before going outdoors.
    pub door_time: Option<f64>,
    /// `(time, zone name)` at every zone change.
    pub zone_transitions: Vec<(f64, String)>,
}

pub const GROUND_TRUTH_HEADER: &str = "degradation_onset,door_time,zone_transitions";

impl GroundTruth {
    /// Sidecar text: header line, then one data line with transitions as
    /// `time:zone` pairs joined by `;`.
    pub fn to_csv(&self) -> String {
        let door = self.door_time.map_or("none".to_string(), |d| d.to_string());
        let zones = self
            .zone_transitions
            .iter()
            .map(|(t, z)| format!("{t}:{z}"))
            .collect::<Vec<_>>()
            .join(";");
        format!("{GROUND_TRUTH_HEADER}\n{},{door},{zones}\n", self.degradation_onset)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(GROUND_TRUTH_HEADER) {
            return Err(Error::Parse {
                line: 1,
                reason: "bad ground-truth header".into(),
            });
        }
        let perr = |reason: &str| Error::Parse {
            line: 2,
            reason: reason.into(),
        };
        let line = lines.next().ok_or_else(|| perr("missing data line"))?;
        let parts: Vec<&str> = line.splitn(3, ',').collect();
        if parts.len() != 3 {
            return Err(perr("expected 3 fields"));
        }
        let degradation_onset = parts[0].parse().map_err(|_| perr("bad onset"))?;
        let door_time = match parts[1] {
            "none" => None,
            v => Some(v.parse().map_err(|_| perr("bad door time"))?),
        };
        let zone_transitions = if parts[2].is_empty() {
            Vec::new()
        } else {
            parts[2]
                .split(';')
                .map(|p| {
                    let (t, z) = p.split_once(':').ok_or_else(|| perr("bad transition"))?;
                    Ok((t.parse().map_err(|_| perr("bad transition time"))?, z.to_string()))
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self {
            degradation_onset,
            door_time,
            zone_transitions,
        })
    }
}

/// Time-to-switch: completion minus degradation onset. Negative when the
/// switch completed before onset.
pub fn tts(switch_completion: f64, degradation_onset: f64) -> f64 {
    switch_completion - degradation_onset
}

/// TTS as shown in reports, floored at `floor`.
pub fn report_tts(tts: f64, floor: f64) -> f64 {
    tts.max(floor)
}

/// A completed (or reverted) switch as judged by the feedback oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchDecision {
    pub completion: f64,
    pub rolled_back: bool,
}

/// Feedback window around onset, seconds: `[onset − EARLY, onset + LATE]`.
pub const FEEDBACK_EARLY: f64 = 2.0;
pub const FEEDBACK_LATE: f64 = 3.0;
/// Distance beyond the window at which the taper reaches −1.
const TAPER_LATE: f64 = 10.0;
const TAPER_EARLY: f64 = 5.0;

/// Simulated user feedback in [−1, 1]: +1 inside the window around onset,
/// −1 on rollback, and a linear taper outside the window (reaching −1 ten
/// seconds late or five seconds early).
pub fn feedback_oracle(decision: &SwitchDecision, truth: &GroundTruth) -> f64 {
    if decision.rolled_back {
        return -1.0;
    }
    let onset = truth.degradation_onset;
    let late = decision.completion - (onset + FEEDBACK_LATE);
    let early = (onset - FEEDBACK_EARLY) - decision.completion;
    let hf = if late > 0.0 {
        1.0 - 2.0 * late / TAPER_LATE
    } else if early > 0.0 {
        1.0 - 2.0 * early / TAPER_EARLY
    } else {
        1.0
    };
    hf.clamp(-1.0, 1.0)
}
