use serde::{Deserialize, Serialize};

use super::RawTrace;
use crate::error::{Error, Result};

/// Threshold + hysteresis handover rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub threshold: f64,
    pub hysteresis: f64,
    pub dwell: f64,
    /// Time from the decision to a completed association, shared with the
    /// learned policy.
    pub assoc_delay: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            threshold: -75.0,
            hysteresis: 5.0,
            dwell: 3.0,
            assoc_delay: 2.0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::Config {
                field: format!("baseline.{field}"),
                reason,
            })
        };
        if !(self.threshold > -100.0 && self.threshold < -30.0) {
            return bad("threshold", format!("must be in (-100, -30), got {}", self.threshold));
        }
        if !(self.hysteresis >= 0.0) {
            return bad("hysteresis", "must be >= 0".into());
        }
        if !(self.dwell >= 0.0) {
            return bad("dwell", "must be >= 0".into());
        }
        if !(self.assoc_delay >= 0.0) {
            return bad("assoc_delay", "must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineOutcome {
    pub completion: f64,
    /// No switch completed within the trace; `completion` is the trace end.
    pub censored: bool,
}

/// Switches once the connected AP's scanned RSSI has stayed below
/// `threshold − hysteresis` for `dwell` seconds; completion adds the
/// association delay. A switch that would complete after the trace ends
/// counts as censored.
pub fn baseline_policy(trace: &RawTrace, cfg: &BaselineConfig) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let level = cfg.threshold - cfg.hysteresis;
    let mut run_start: Option<f64> = None;
    for scan in &trace.wifi {
        let rssi = trace.connected_rssi(scan);
        if rssi < level {
            let start = *run_start.get_or_insert(scan.t);
            if scan.t - start >= cfg.dwell - 1e-9 {
                let completion = scan.t + cfg.assoc_delay;
                if completion > trace.duration + 1e-9 {
                    break;
                }
                return Ok(BaselineOutcome {
                    completion,
                    censored: false,
                });
            }
        } else {
            run_start = None;
        }
    }
    Ok(BaselineOutcome {
        completion: trace.duration,
        censored: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(threshold: f64, hysteresis: f64, dwell: f64) -> BaselineConfig {
        BaselineConfig {
            threshold,
            hysteresis,
            dwell,
            assoc_delay: 2.0,
        }
    }

    #[test]
    fn constant_strong_signal_is_censored() {
        let trace = RawTrace::from_rssi(&(0..60).map(|t| (t as f64, -40.0)).collect::<Vec<_>>());
        let out = baseline_policy(&trace, &cfg(-70.0, 5.0, 3.0)).unwrap();
        assert!(out.censored);
        assert_eq!(out.completion, trace.duration);
    }

    #[test]
    fn step_drop_switches_after_dwell_and_delay() {
        let samples: Vec<(f64, f64)> = (0..60)
            .map(|t| (t as f64, if t < 20 { -50.0 } else { -90.0 }))
            .collect();
        let out = baseline_policy(&RawTrace::from_rssi(&samples), &cfg(-70.0, 5.0, 3.0)).unwrap();
        assert!(!out.censored);
        assert_eq!(out.completion, 25.0);
    }

    #[test]
    fn hysteresis_never_fires_earlier() {
        let samples: Vec<(f64, f64)> = (0..80)
            .map(|t| {
                let wobble = if t % 3 == 0 { 1.5 } else { -2.5 };
                (t as f64, -70.0 + wobble - 0.1 * t as f64)
            })
            .collect();
        let trace = RawTrace::from_rssi(&samples);
        let without = baseline_policy(&trace, &cfg(-70.0, 0.0, 3.0)).unwrap();
        let with = baseline_policy(&trace, &cfg(-70.0, 5.0, 3.0)).unwrap();
        assert!(with.completion >= without.completion);
    }

    #[test]
    fn threshold_out_of_range() {
        let trace = RawTrace::from_rssi(&[(0.0, -50.0), (1.0, -50.0)]);
        assert!(baseline_policy(&trace, &cfg(-20.0, 5.0, 3.0)).is_err());
    }

    proptest! {
        #[test]
        fn stricter_settings_never_switch_earlier(
            rssi in prop::collection::vec(-95.0f64..-40.0, 5..60),
            hyst in 0.0f64..8.0,
            extra_h in 0.0f64..5.0,
            dwell in 0u32..5,
            extra_d in 0u32..4,
        ) {
            let samples: Vec<(f64, f64)> = rssi.iter().enumerate().map(|(t, r)| (t as f64, *r)).collect();
            let trace = RawTrace::from_rssi(&samples);
            let base = baseline_policy(&trace, &cfg(-72.0, hyst, dwell as f64)).unwrap();
            let more_h = baseline_policy(&trace, &cfg(-72.0, hyst + extra_h, dwell as f64)).unwrap();
            let more_d = baseline_policy(&trace, &cfg(-72.0, hyst, (dwell + extra_d) as f64)).unwrap();
            prop_assert!(more_h.completion >= base.completion);
            prop_assert!(more_d.completion >= base.completion);
        }
    }
}
