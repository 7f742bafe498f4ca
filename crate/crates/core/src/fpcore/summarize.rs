use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::raw::{RawWindow, WifiScan};
use super::{
    hash_id, Fingerprint, IdHash, MaskEntry, Modality, FEATURE_DIM, MODALITY_COUNT,
};
use crate::error::{Error, Result};

/// Per-feature affine ranges mapped onto [-1, 1]. Feature order matches the
/// flattened fingerprint layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub ranges: [[f64; 2]; FEATURE_DIM],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            ranges: [
                [0.0, 3.0],      // step rate, steps/s
                [0.0, PI],       // heading change, rad
                [0.0, 1.0],      // stop flag
                [-100.0, -30.0], // top-k mean RSSI, dBm
                [-10.0, 10.0],   // RSSI slope, dB/s
                [0.0, 1.0],      // strongest-AP churn
                [-140.0, -44.0], // RSRP, dBm
                [-20.0, -3.0],   // RSRQ, dB
                [0.0, 1.0],      // cell change flag
                [0.0, 50.0],     // mean SNR, dB-Hz
                [0.0, 20.0],     // satellites
                [0.0, 1.0],      // fix flag
                [-1.0, 1.0],     // hour sine
                [-1.0, 1.0],     // hour cosine
            ],
        }
    }
}

impl Normalization {
    pub fn apply(&self, feature: usize, raw: f64) -> f64 {
        let [lo, hi] = self.ranges[feature];
        2.0 * (raw - lo) / (hi - lo) - 1.0
    }

    pub fn invert(&self, feature: usize, normalized: f64) -> f64 {
        let [lo, hi] = self.ranges[feature];
        lo + (normalized + 1.0) * 0.5 * (hi - lo)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, [lo, hi]) in self.ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Config {
                    field: format!("normalization.ranges[{i}]"),
                    reason: format!("need finite lo < hi, got [{lo}, {hi}]"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummaryConfig {
    pub normalization: Normalization,
    /// Per-user salt for identifier hashing.
    pub salt: u64,
    /// Number of strongest APs averaged into the RSSI level feature.
    pub top_k: usize,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            normalization: Normalization::default(),
            salt: 0x5eed_cafe,
            top_k: 3,
        }
    }
}

/// Which modalities the caller considers present in a window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PresenceMask(pub [bool; MODALITY_COUNT]);

impl PresenceMask {
    pub const ALL: PresenceMask = PresenceMask([true; MODALITY_COUNT]);
    pub const NONE: PresenceMask = PresenceMask([false; MODALITY_COUNT]);

    pub fn get(&self, kind: Modality) -> bool {
        self.0[kind.index()]
    }
}

/// Least-squares slope of `values` against `times`; 0 when fewer than two
/// distinct times.
pub fn least_squares_slope(times: &[f64], values: &[f64]) -> f64 {
    let n = times.len().min(values.len());
    if n < 2 {
        return 0.0;
    }
    let mt = times[..n].iter().sum::<f64>() / n as f64;
    let mv = values[..n].iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for i in 0..n {
        let dt = times[i] - mt;
        sxy += dt * (values[i] - mv);
        sxx += dt * dt;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn top_k_mean(scan: &WifiScan, k: usize) -> Option<f64> {
    if scan.readings.is_empty() || k == 0 {
        return None;
    }
    let mut rssi: Vec<f64> = scan.readings.iter().map(|r| r.rssi).collect();
    rssi.sort_by(|a, b| b.total_cmp(a));
    let take = k.min(rssi.len());
    Some(rssi[..take].iter().sum::<f64>() / take as f64)
}

/// Un-normalized WiFi features `[top-k mean RSSI (dBm), RSSI slope (dB/s),
/// strongest-AP churn]` over a scan history, most recent scan last.
pub fn raw_wifi_features(scans: &[WifiScan], top_k: usize) -> Option<[f64; 3]> {
    let scans: Vec<&WifiScan> = scans.iter().filter(|s| !s.readings.is_empty()).collect();
    let latest = scans.last()?;
    let level = top_k_mean(latest, top_k)?;
    let (times, levels): (Vec<f64>, Vec<f64>) = scans
        .iter()
        .filter_map(|s| top_k_mean(s, top_k).map(|v| (s.t, v)))
        .unzip();
    let slope = least_squares_slope(&times, &levels);
    let churn = if scans.len() < 2 {
        0.0
    } else {
        let changes = scans
            .windows(2)
            .filter(|w| {
                w[0].strongest().map(|r| &r.bssid) != w[1].strongest().map(|r| &r.bssid)
            })
            .count();
        changes as f64 / (scans.len() - 1) as f64
    };
    Some([level, slope, churn])
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a < -PI {
        a += 2.0 * PI;
    }
    a
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Summarizes one window of raw samples into a [`Fingerprint`].
///
/// Modalities marked absent get zero features and zero quality. A modality
/// marked present with no samples is an error.
pub fn summarize_window(
    raw: &RawWindow,
    presence: PresenceMask,
    cfg: &SummaryConfig,
) -> Result<Fingerprint> {
    let mut values = [0.0; FEATURE_DIM];
    let mut mask = [MaskEntry {
        present: false,
        quality: 0.0,
    }; MODALITY_COUNT];
    let mut strongest_ap: Option<IdHash> = None;
    let mut cell_id: Option<IdHash> = None;
    let window_end = raw.start + raw.duration;

    for kind in Modality::ALL {
        if !presence.get(kind) {
            continue;
        }
        let (raw_feats, quality): (Vec<f64>, f64) = match kind {
            Modality::Pdr => {
                if raw.imu.is_empty() {
                    return Err(Error::InconsistentMask(kind));
                }
                let steps = raw.imu.iter().filter(|s| s.step).count();
                let heading_change: f64 = raw
                    .imu
                    .windows(2)
                    .map(|w| wrap_angle(w[1].heading - w[0].heading).abs())
                    .sum();
                let rate = steps as f64 / raw.duration.max(f64::EPSILON);
                (vec![rate, heading_change.min(PI), flag(steps == 0)], 1.0)
            }
            Modality::Wifi => {
                let feats =
                    raw_wifi_features(&raw.wifi, cfg.top_k).ok_or(Error::InconsistentMask(kind))?;
                let latest = raw
                    .wifi
                    .iter()
                    .rev()
                    .find(|s| !s.readings.is_empty())
                    .expect("checked by raw_wifi_features");
                strongest_ap = latest
                    .strongest()
                    .map(|r| hash_id(cfg.salt, r.bssid.as_bytes()));
                let age = (window_end - latest.t).max(0.0);
                (feats.to_vec(), 1.0 / (1.0 + age))
            }
            Modality::Cell => {
                let latest = raw.cell.last().ok_or(Error::InconsistentMask(kind))?;
                let changed = raw.cell.windows(2).any(|w| w[0].cell_id != w[1].cell_id);
                cell_id = Some(hash_id(cfg.salt, latest.cell_id.as_bytes()));
                (vec![latest.rsrp, latest.rsrq, flag(changed)], 1.0)
            }
            Modality::Gnss => {
                if raw.gnss.is_empty() {
                    return Err(Error::InconsistentMask(kind));
                }
                let n = raw.gnss.len() as f64;
                let snr = raw.gnss.iter().map(|g| g.snr).sum::<f64>() / n;
                let sats = raw.gnss.iter().map(|g| g.satellites as f64).sum::<f64>() / n;
                let fixes = raw.gnss.iter().filter(|g| g.fix).count() as f64 / n;
                let quality = (sats / 8.0).clamp(0.0, 1.0);
                (vec![snr, sats, flag(fixes >= 0.5)], quality)
            }
            Modality::Time => {
                let angle = 2.0 * PI * raw.hour_of_day / 24.0;
                (vec![angle.sin(), angle.cos()], 1.0)
            }
        };
        let off = kind.offset();
        for (k, v) in raw_feats.iter().enumerate() {
            values[off + k] = cfg.normalization.apply(off + k, *v);
        }
        mask[kind.index()] = MaskEntry {
            present: true,
            quality,
        };
    }

    Ok(Fingerprint::from_parts(raw.start, values, mask)?.with_ids(strongest_ap, cell_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpcore::raw::{ApReading, CellSample, GnssSample, ImuSample};

    fn scan(t: f64, rssi: f64) -> WifiScan {
        WifiScan {
            t,
            readings: vec![ApReading {
                bssid: "02:00:00:00:00:01".into(),
                rssi,
            }],
        }
    }

    fn full_window() -> RawWindow {
        RawWindow {
            start: 3.0,
            duration: 1.0,
            hour_of_day: 10.0,
            imu: (0..10)
                .map(|k| ImuSample {
                    t: 3.0 + k as f64 * 0.1,
                    step: k % 5 == 0,
                    heading: 0.0,
                })
                .collect(),
            wifi: vec![scan(1.0, -50.0), scan(2.0, -50.0), scan(3.0, -50.0)],
            cell: vec![CellSample {
                t: 3.0,
                cell_id: "310-260-4411-17".into(),
                rsrp: -95.0,
                rsrq: -11.0,
            }],
            gnss: vec![GnssSample {
                t: 3.0,
                snr: 0.0,
                satellites: 0,
                fix: false,
            }],
        }
    }

    #[test]
    fn constant_rssi_has_zero_slope() {
        let scans = vec![scan(0.0, -50.0), scan(0.5, -50.0), scan(1.0, -50.0)];
        let f = raw_wifi_features(&scans, 3).unwrap();
        assert_eq!(f[1], 0.0);
    }

    #[test]
    fn falling_rssi_slope() {
        // least squares over t = 0..3: slope = sum(dt*dv)/sum(dt^2) = -20 / 5
        let scans: Vec<_> = [-50.0, -54.0, -58.0, -62.0]
            .iter()
            .enumerate()
            .map(|(i, r)| scan(i as f64, *r))
            .collect();
        let f = raw_wifi_features(&scans, 3).unwrap();
        assert!((f[1] - (-4.0)).abs() < 1e-12);
        assert_eq!(f[0], -62.0);
    }

    #[test]
    fn all_absent_is_valid() {
        let fp = summarize_window(&RawWindow::default(), PresenceMask::NONE, &SummaryConfig::default())
            .unwrap();
        assert!(fp.mask().iter().all(|m| !m.present));
        assert!(fp.features().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn present_but_empty_is_inconsistent() {
        let mut w = full_window();
        w.wifi.clear();
        let err = summarize_window(&w, PresenceMask::ALL, &SummaryConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InconsistentMask(Modality::Wifi)));
        assert!(err.to_string().contains("inconsistent mask"));
    }

    #[test]
    fn ids_are_hashed() {
        let cfg = SummaryConfig::default();
        let fp = summarize_window(&full_window(), PresenceMask::ALL, &cfg).unwrap();
        assert_eq!(
            fp.strongest_ap(),
            Some(hash_id(cfg.salt, b"02:00:00:00:00:01"))
        );
        assert_eq!(fp.cell_id(), Some(hash_id(cfg.salt, b"310-260-4411-17")));
    }

    #[test]
    fn normalization_maps_rssi_range() {
        let n = Normalization::default();
        assert_eq!(n.apply(3, -100.0), -1.0);
        assert_eq!(n.apply(3, -30.0), 1.0);
        assert!((n.invert(3, n.apply(3, -72.5)) + 72.5).abs() < 1e-12);
    }

    #[test]
    fn pdr_features() {
        let cfg = SummaryConfig::default();
        let fp = summarize_window(&full_window(), PresenceMask::ALL, &cfg).unwrap();
        let pdr = fp.modality_features(Modality::Pdr);
        assert!((pdr[0] - cfg.normalization.apply(0, 2.0)).abs() < 1e-12);
        assert_eq!(pdr[2], -1.0); // walking, stop flag 0
    }
}
