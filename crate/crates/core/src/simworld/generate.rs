use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GroundTruth, RadioConfig, Scenario, SimConfig, Site, Zone};
use crate::error::{Error, Result};
use crate::fpcore::raw::{ApReading, CellSample, GnssSample, ImuSample, RawWindow, WifiScan};
use crate::fpcore::{summarize_window, Fingerprint, PresenceMask, SummaryConfig};

const TICK_HZ: f64 = 10.0;
const CADENCE: f64 = 1.8;
/// Scan history carried into each summary window, seconds.
const LOOKBACK: f64 = 4.0;
/// Seconds for GNSS to reach full outdoor quality.
const GNSS_RAMP: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Leg {
    t0: f64,
    t1: f64,
    from: (f64, f64),
    to: (f64, f64),
    zone: usize,
    moving: bool,
    heading: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkerState {
    pub x: f64,
    pub y: f64,
    pub zone: usize,
    pub moving: bool,
    pub heading: f64,
}

/// Constant-speed walker over the scenario waypoints, pausing at turns.
#[derive(Clone, Debug)]
pub struct Walker {
    legs: Vec<Leg>,
    /// Arrival time at each waypoint.
    arrivals: Vec<f64>,
}

impl Walker {
    pub fn new(s: &Scenario, cfg: &SimConfig) -> Self {
        let w = &s.waypoints;
        let mut legs = Vec::new();
        let mut arrivals = vec![0.0];
        let mut t = 0.0;
        let mut heading = 0.0;
        if w[0].pause > 0.0 {
            legs.push(Leg {
                t0: 0.0,
                t1: w[0].pause,
                from: (w[0].x, w[0].y),
                to: (w[0].x, w[0].y),
                zone: w[0].zone,
                moving: false,
                heading,
            });
            t = w[0].pause;
        }
        for i in 0..w.len() - 1 {
            let (a, b) = (w[i], w[i + 1]);
            let dist = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
            heading = (b.y - a.y).atan2(b.x - a.x);
            let dur = dist / cfg.walker_speed;
            legs.push(Leg {
                t0: t,
                t1: t + dur,
                from: (a.x, a.y),
                to: (b.x, b.y),
                zone: b.zone,
                moving: true,
                heading,
            });
            t += dur;
            arrivals.push(t);
            let turning = i + 2 < w.len() && {
                let c = w[i + 2];
                let next = (c.y - b.y).atan2(c.x - b.x);
                let mut d = (next - heading).abs() % (2.0 * std::f64::consts::PI);
                if d > std::f64::consts::PI {
                    d = 2.0 * std::f64::consts::PI - d;
                }
                d > 0.1
            };
            let pause = b.pause.max(if turning { cfg.turn_pause } else { 0.0 });
            if pause > 0.0 {
                legs.push(Leg {
                    t0: t,
                    t1: t + pause,
                    from: (b.x, b.y),
                    to: (b.x, b.y),
                    zone: b.zone,
                    moving: false,
                    heading,
                });
                t += pause;
            }
        }
        Self { legs, arrivals }
    }

    pub fn state(&self, t: f64) -> WalkerState {
        let leg = self
            .legs
            .iter()
            .find(|l| t < l.t1)
            .copied()
            .unwrap_or_else(|| {
                let last = *self.legs.last().expect("walker has legs");
                Leg {
                    from: last.to,
                    moving: false,
                    ..last
                }
            });
        let frac = if leg.moving && leg.t1 > leg.t0 {
            ((t - leg.t0) / (leg.t1 - leg.t0)).clamp(0.0, 1.0)
        } else if t >= leg.t1 {
            1.0
        } else {
            0.0
        };
        WalkerState {
            x: leg.from.0 + frac * (leg.to.0 - leg.from.0),
            y: leg.from.1 + frac * (leg.to.1 - leg.from.1),
            zone: leg.zone,
            moving: leg.moving && t < leg.t1,
            heading: leg.heading,
        }
    }

    pub fn arrival(&self, waypoint: usize) -> f64 {
        self.arrivals[waypoint]
    }

    /// Start of the first leg that leads from an indoor into an outdoor
    /// zone (after any pause at the last indoor waypoint).
    pub fn door_crossing(&self, zones: &[Zone]) -> Option<f64> {
        self.legs
            .windows(2)
            .find(|l| !zones[l[0].zone].outdoor && zones[l[1].zone].outdoor)
            .map(|l| l[1].t0)
    }
}

/// Log-distance path loss with a per-wall penalty and no shadowing.
pub(crate) fn clean_rssi(ap: &super::ApPlacement, zone: &Zone, x: f64, y: f64, radio: &RadioConfig) -> f64 {
    let d = ((x - ap.x).powi(2) + (y - ap.y).powi(2)).sqrt().max(1.0);
    let n = if zone.outdoor {
        radio.exponent_outdoor
    } else {
        radio.exponent_indoor
    };
    let r = ap.tx_power - radio.pl0_db - 10.0 * n * d.log10() - radio.wall_db * zone.walls as f64;
    r.clamp(radio.rssi_min, radio.rssi_max)
}

/// Simulated sensor streams for one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrace {
    pub site: Option<Site>,
    pub seed: u64,
    pub duration: f64,
    pub hour_of_day: f64,
    /// 10 Hz step/heading events.
    pub imu: Vec<ImuSample>,
    /// Zone index per IMU tick.
    pub zones: Vec<usize>,
    pub zone_outdoor: Vec<bool>,
    /// Once-per-second scans.
    pub wifi: Vec<WifiScan>,
    pub cell: Vec<CellSample>,
    pub gnss: Vec<GnssSample>,
    pub connected_bssid: String,
    /// Noiseless RSSI of the connected AP per IMU tick.
    pub clean_rssi: Vec<f64>,
    pub truth: GroundTruth,
}

impl RawTrace {
    /// A bare trace with only connected-AP scans at the given `(t, rssi)`
    /// samples, for exercising trace consumers.
    pub fn from_rssi(samples: &[(f64, f64)]) -> Self {
        let bssid = "02:00:00:00:00:01".to_string();
        let duration = samples.last().map_or(0.0, |s| s.0 + 1.0);
        let ticks = (duration * TICK_HZ).round() as usize;
        let clean_rssi = (0..ticks)
            .map(|k| {
                let t = k as f64 / TICK_HZ;
                samples
                    .iter()
                    .rev()
                    .find(|s| s.0 <= t + 1e-9)
                    .map_or(samples[0].1, |s| s.1)
            })
            .collect();
        Self {
            site: None,
            seed: 0,
            duration,
            hour_of_day: 12.0,
            imu: Vec::new(),
            zones: vec![0; ticks],
            zone_outdoor: vec![false],
            wifi: samples
                .iter()
                .map(|(t, r)| WifiScan {
                    t: *t,
                    readings: vec![ApReading {
                        bssid: bssid.clone(),
                        rssi: *r,
                    }],
                })
                .collect(),
            cell: Vec::new(),
            gnss: Vec::new(),
            connected_bssid: bssid,
            clean_rssi,
            truth: GroundTruth {
                degradation_onset: 0.0,
                door_time: None,
                zone_transitions: Vec::new(),
            },
        }
    }

    /// Connected AP's reading in `scan`, or the radio floor when missing.
    pub fn connected_rssi(&self, scan: &WifiScan) -> f64 {
        scan.readings
            .iter()
            .find(|r| r.bssid == self.connected_bssid)
            .map_or(-100.0, |r| r.rssi)
    }

    /// Noiseless connected-AP RSSI at time `t` (nearest earlier tick).
    pub fn clean_rssi_at(&self, t: f64) -> f64 {
        let k = ((t * TICK_HZ) + 1e-9).floor().max(0.0) as usize;
        self.clean_rssi[k.min(self.clean_rssi.len() - 1)]
    }

    /// Scanned connected-AP RSSI of the latest scan at or before `t`.
    pub fn scanned_rssi_at(&self, t: f64) -> f64 {
        self.wifi
            .iter()
            .rev()
            .find(|s| s.t <= t + 1e-9)
            .map_or(-100.0, |s| self.connected_rssi(s))
    }

    pub fn cell_at(&self, t: f64) -> Option<&CellSample> {
        self.cell.iter().rev().find(|s| s.t <= t + 1e-9)
    }

    pub fn gnss_at(&self, t: f64) -> Option<&GnssSample> {
        self.gnss.iter().rev().find(|s| s.t <= t + 1e-9)
    }

    /// Steps per second over `[t − span, t)`.
    pub fn step_rate(&self, t: f64, span: f64) -> f64 {
        let steps = self
            .imu
            .iter()
            .filter(|s| s.step && s.t >= t - span - 1e-9 && s.t < t - 1e-9)
            .count();
        steps as f64 / span
    }

    pub fn is_outdoor_at(&self, t: f64) -> bool {
        let k = ((t * TICK_HZ) + 1e-9).floor().max(0.0) as usize;
        let z = self.zones[k.min(self.zones.len() - 1)];
        self.zone_outdoor.get(z).copied().unwrap_or(false)
    }

    /// Whole seconds covered by the trace.
    pub fn seconds(&self) -> usize {
        self.duration.floor() as usize
    }
}

/// Generates the sensor streams of `scenario`; a pure function of the
/// scenario (including its seed) and `cfg`.
pub fn generate(scenario: &Scenario, cfg: &SimConfig) -> Result<RawTrace> {
    cfg.validate()?;
    scenario.validate()?;
    let radio = &cfg.radio;
    let walker = Walker::new(scenario, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ scenario.site.salt());
    rng.set_stream(1);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let ticks = (scenario.duration * TICK_HZ).round() as usize;
    let mut imu = Vec::with_capacity(ticks);
    let mut zones = Vec::with_capacity(ticks);
    let mut clean = Vec::with_capacity(ticks);
    let mut transitions = Vec::new();
    let mut phase = rng.gen_range(0.0..1.0);
    for k in 0..ticks {
        let t = k as f64 / TICK_HZ;
        let st = walker.state(t);
        let mut step = false;
        if st.moving {
            phase += CADENCE / TICK_HZ;
            if phase >= 1.0 {
                phase -= 1.0;
                step = true;
            }
        }
        imu.push(ImuSample {
            t,
            step,
            heading: st.heading,
        });
        if zones.last() != Some(&st.zone) {
            if k > 0 {
                transitions.push((t, scenario.zones[st.zone].name.clone()));
            }
        }
        zones.push(st.zone);
        clean.push(clean_rssi(&scenario.aps[0], &scenario.zones[st.zone], st.x, st.y, radio));
    }

    let seconds = scenario.duration.floor() as usize;
    let stationary_sd = radio.shadowing_sigma;
    let innov_sd = radio.shadowing_sigma * (1.0 - radio.shadowing_rho.powi(2)).sqrt();
    let mut shadow: Vec<f64> = scenario
        .aps
        .iter()
        .map(|_| stationary_sd * unit.sample(&mut rng))
        .collect();
    let mut wifi = Vec::with_capacity(seconds);
    let mut cell = Vec::with_capacity(seconds);
    let mut gnss = Vec::with_capacity(seconds);
    let mut outdoor_since: Option<f64> = None;
    for sec in 0..seconds {
        let t = sec as f64;
        let st = walker.state(t);
        let z = &scenario.zones[st.zone];
        let mut readings = Vec::new();
        for (j, ap) in scenario.aps.iter().enumerate() {
            if sec > 0 {
                shadow[j] = radio.shadowing_rho * shadow[j] + innov_sd * unit.sample(&mut rng);
            }
            let r = (clean_rssi(ap, z, st.x, st.y, radio) + shadow[j]).clamp(radio.rssi_min, radio.rssi_max);
            if j == 0 || r >= radio.sensitivity {
                readings.push(ApReading {
                    bssid: ap.bssid.clone(),
                    rssi: r,
                });
            }
        }
        wifi.push(WifiScan { t, readings });

        let walls = z.walls as f64;
        let rsrp = -92.0 - 3.0 * walls + if z.outdoor { 6.0 } else { 0.0 } + 1.5 * unit.sample(&mut rng);
        let rsrq = (-10.0 - 0.5 * walls + 0.8 * unit.sample(&mut rng)).clamp(-20.0, -3.0);
        cell.push(CellSample {
            t,
            cell_id: scenario.cell_id.clone(),
            rsrp: rsrp.clamp(-140.0, -44.0),
            rsrq,
        });

        let exposure = if z.outdoor {
            let since = *outdoor_since.get_or_insert(t);
            ((t - since) / GNSS_RAMP).clamp(0.0, 1.0)
        } else {
            outdoor_since = None;
            0.0
        };
        let snr = (4.0 + 32.0 * exposure + 1.5 * unit.sample(&mut rng)).max(0.0);
        let sats = (0.5 + 9.0 * exposure + 0.7 * unit.sample(&mut rng)).round().max(0.0) as u32;
        gnss.push(GnssSample {
            t,
            snr,
            satellites: sats,
            fix: sats >= 4 && snr >= 20.0,
        });
    }

    let door_time = walker.door_crossing(&scenario.zones);
    Ok(RawTrace {
        site: Some(scenario.site),
        seed: scenario.seed,
        duration: scenario.duration,
        hour_of_day: scenario.hour_of_day,
        imu,
        zones,
        zone_outdoor: scenario.zones.iter().map(|z| z.outdoor).collect(),
        wifi,
        cell,
        gnss,
        connected_bssid: scenario.aps[0].bssid.clone(),
        clean_rssi: clean,
        truth: GroundTruth {
            degradation_onset: scenario.degradation_onset,
            door_time,
            zone_transitions: transitions,
        },
    })
}

/// One fingerprint per whole second `[k, k + 1)`.
pub fn fingerprints(trace: &RawTrace, cfg: &SummaryConfig) -> Result<Vec<Fingerprint>> {
    if trace.imu.is_empty() || trace.gnss.is_empty() || trace.cell.is_empty() {
        return Err(Error::InvalidSequence("trace lacks IMU, cell or GNSS samples".into()));
    }
    let mut out = Vec::with_capacity(trace.seconds());
    for k in 0..trace.seconds() {
        let start = k as f64;
        let end = start + 1.0;
        let in_window = |t: f64| t >= start - 1e-9 && t < end - 1e-9;
        let in_lookback = |t: f64| t >= start - LOOKBACK - 1e-9 && t < end - 1e-9;
        let raw = RawWindow {
            start,
            duration: 1.0,
            hour_of_day: (trace.hour_of_day + start / 3600.0) % 24.0,
            imu: trace.imu.iter().filter(|s| in_window(s.t)).cloned().collect(),
            wifi: trace.wifi.iter().filter(|s| in_lookback(s.t)).cloned().collect(),
            cell: trace.cell.iter().filter(|s| in_lookback(s.t)).cloned().collect(),
            gnss: trace.gnss.iter().filter(|s| in_window(s.t)).cloned().collect(),
        };
        let mut presence = PresenceMask::ALL;
        presence.0[1] = raw.wifi.iter().any(|s| !s.readings.is_empty());
        out.push(summarize_window(&raw, presence, cfg)?);
    }
    Ok(out)
}

/// The three outdoor-transition conditions, evaluated at time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutdoorFlags {
    /// Fix in at least three of the last five GNSS samples.
    pub gnss_ok: bool,
    /// Connected-AP RSSI weak (below −75 dBm) or down ≥ 6 dB over 5 s.
    pub wifi_decay: bool,
    /// Walking during the last five seconds and now outdoors.
    pub pdr_exit: bool,
}

impl OutdoorFlags {
    pub fn all(&self) -> bool {
        self.gnss_ok && self.wifi_decay && self.pdr_exit
    }
}

pub fn outdoor_flags(trace: &RawTrace, t: f64) -> OutdoorFlags {
    let fixes = trace
        .gnss
        .iter()
        .filter(|g| g.t <= t + 1e-9 && g.t > t - 5.0 + 1e-9)
        .filter(|g| g.fix)
        .count();
    let now = trace.scanned_rssi_at(t);
    let before = trace.scanned_rssi_at(t - 5.0);
    OutdoorFlags {
        gnss_ok: fixes >= 3,
        wifi_decay: now < -75.0 || before - now >= 6.0,
        pdr_exit: trace.step_rate(t, 5.0) > 0.5 && trace.is_outdoor_at(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{baseline_policy, Site};

    fn quiet() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.radio.shadowing_sigma = 0.0;
        cfg
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SimConfig::default();
        for site in Site::ALL {
            let s = Scenario::for_site(site, 42, &cfg).unwrap();
            assert_eq!(generate(&s, &cfg).unwrap(), generate(&s, &cfg).unwrap());
        }
    }

    #[test]
    fn site_a_never_has_fix() {
        let cfg = SimConfig::default();
        for seed in 0..5 {
            let tr = generate(&Scenario::for_site(Site::A, seed, &cfg).unwrap(), &cfg).unwrap();
            let fixes = tr.gnss.iter().filter(|g| g.fix).count();
            assert!(fixes as f64 <= 0.05 * tr.gnss.len() as f64);
        }
    }

    #[test]
    fn site_c_door_drop() {
        let cfg = quiet();
        for seed in 0..10 {
            let s = Scenario::for_site(Site::C, seed, &cfg).unwrap();
            let tr = generate(&s, &cfg).unwrap();
            let door = tr.truth.door_time.unwrap();
            let walker = Walker::new(&s, &cfg);
            // oracle: evaluate the path-loss formula at both positions
            let at = |t: f64| {
                let st = walker.state(t);
                let d = ((st.x - s.aps[0].x).powi(2) + (st.y - s.aps[0].y).powi(2)).sqrt();
                let z = &s.zones[st.zone];
                let n = if z.outdoor { 2.0 } else { 2.2 };
                s.aps[0].tx_power - 40.0 - 10.0 * n * d.log10() - 8.0 * z.walls as f64
            };
            // last tick still inside the door
            let inside = (door * 10.0).ceil() / 10.0 - 0.1;
            assert!(!s.zones[walker.state(inside).zone].outdoor);
            assert!(at(inside) - at(door + 5.0) >= 10.0, "seed {seed}");
            for t in [inside, inside + 0.1, inside + 5.0] {
                assert!((tr.clean_rssi_at(t) - at(t)).abs() < 1e-9, "seed {seed} t {t}");
            }
        }
    }

    #[test]
    fn rssi_falls_with_distance_without_shadowing() {
        let cfg = quiet();
        let s = Scenario::for_site(Site::A, 3, &cfg).unwrap();
        let z = &s.zones[1];
        let mut prev = f64::INFINITY;
        for d in 1..60 {
            let r = clean_rssi(&s.aps[0], z, 1.0 + d as f64, 0.0, &cfg.radio);
            assert!(r < prev || r == cfg.radio.rssi_min);
            prev = r;
        }
    }

    #[test]
    fn satellites_indoor_below_outdoor() {
        let cfg = SimConfig::default();
        let (mut indoor, mut outdoor) = (Vec::new(), Vec::new());
        for seed in 0..30 {
            let tr = generate(&Scenario::for_site(Site::C, seed, &cfg).unwrap(), &cfg).unwrap();
            for g in &tr.gnss {
                if tr.is_outdoor_at(g.t) {
                    outdoor.push(g.satellites as f64);
                } else {
                    indoor.push(g.satellites as f64);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&indoor) < mean(&outdoor));
    }

    #[test]
    fn trace_invariants_and_fingerprints() {
        let cfg = SimConfig::default();
        let sc = SummaryConfig::default();
        for site in Site::ALL {
            let tr = generate(&Scenario::for_site(site, 9, &cfg).unwrap(), &cfg).unwrap();
            assert!(tr.wifi.iter().flat_map(|s| &s.readings).all(|r| (-100.0..=-30.0).contains(&r.rssi)));
            assert!(tr.imu.windows(2).all(|w| w[1].t > w[0].t));
            assert!(tr.wifi.windows(2).all(|w| w[1].t > w[0].t));
            let fps = fingerprints(&tr, &sc).unwrap();
            assert_eq!(fps.len(), tr.seconds());
            let onset = tr.truth.degradation_onset;
            assert!(onset > 0.0 && onset < tr.duration);
        }
    }

    #[test]
    fn baseline_tts_ranges() {
        let cfg = SimConfig::default();
        for site in Site::ALL {
            let mut total = 0.0;
            for seed in 0..10 {
                let tr = generate(&Scenario::for_site(site, seed, &cfg).unwrap(), &cfg).unwrap();
                let b = baseline_policy(&tr, &cfg.baseline).unwrap();
                total += b.completion - tr.truth.degradation_onset;
            }
            let mean = total / 10.0;
            assert!(mean > 5.0 && mean < 35.0, "site {site} mean baseline TTS {mean}");
        }
    }

    #[test]
    fn site_c_outdoor_flags_hold_after_door() {
        let cfg = SimConfig::default();
        let mut hits = 0;
        for seed in 0..10 {
            let tr = generate(&Scenario::for_site(Site::C, seed, &cfg).unwrap(), &cfg).unwrap();
            let door = tr.truth.door_time.unwrap();
            if outdoor_flags(&tr, door + 5.0).all() {
                hits += 1;
            }
            assert!(!outdoor_flags(&tr, door - 1.0).pdr_exit);
        }
        assert!(hits >= 8, "{hits}");
    }
}
