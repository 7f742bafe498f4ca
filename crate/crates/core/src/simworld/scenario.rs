use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generate::{clean_rssi, Walker};
use super::{SimConfig, Site};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Zone {
    pub name: String,
    /// Walls between this zone and the access points.
    pub walls: u32,
    pub outdoor: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    /// Zone of the segment that ends at this waypoint.
    pub zone: usize,
    /// Extra standing time on arrival, seconds.
    pub pause: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApPlacement {
    pub x: f64,
    pub y: f64,
    pub tx_power: f64,
    pub bssid: String,
}

/// One simulated walk. `aps[0]` is the AP the device is associated with.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub site: Site,
    pub duration: f64,
    pub zones: Vec<Zone>,
    pub waypoints: Vec<Waypoint>,
    pub aps: Vec<ApPlacement>,
    pub degradation_onset: f64,
    pub seed: u64,
    pub hour_of_day: f64,
    pub cell_id: String,
}

fn zone(name: &str, walls: u32, outdoor: bool) -> Zone {
    Zone {
        name: name.into(),
        walls,
        outdoor,
    }
}

fn wp(x: f64, y: f64, zone: usize, pause: f64) -> Waypoint {
    Waypoint { x, y, zone, pause }
}

fn bssid(rng: &mut ChaCha8Rng) -> String {
    let b: [u8; 5] = rng.gen();
    format!("02:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", b[0], b[1], b[2], b[3], b[4])
}

fn ap(rng: &mut ChaCha8Rng, x: f64, y: f64, tx_power: f64) -> ApPlacement {
    ApPlacement {
        x,
        y,
        tx_power,
        bssid: bssid(rng),
    }
}

impl Scenario {
    /// Seeded layout for `site` with jittered geometry and AP power.
    pub fn for_site(site: Site, seed: u64, cfg: &SimConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ site.salt());
        let (zones, waypoints, aps, duration) = match site {
            Site::A => {
                let len = rng.gen_range(21.0..26.0);
                let wait = rng.gen_range(1.0..3.0);
                let p0 = rng.gen_range(-1.5..1.5);
                (
                    vec![zone("office", 0, false), zone("corridor", 1, false), zone("restroom", 2, false)],
                    vec![
                        wp(1.5, 0.0, 0, 0.0),
                        wp(4.0, 0.0, 1, 0.0),
                        wp(11.0, 0.0, 1, wait),
                        wp(len, 0.0, 1, 0.0),
                        wp(len, 3.5, 2, 0.0),
                        wp(len + 2.5, 5.0, 2, 0.0),
                    ],
                    vec![
                        ap(&mut rng, 0.0, 0.0, p0),
                        ap(&mut rng, 8.0, -5.0, -8.0),
                        ap(&mut rng, 30.0, 8.0, -10.0),
                    ],
                    75.0,
                )
            }
            Site::B => {
                let j = rng.gen_range(-1.0..1.0);
                let facade = rng.gen_range(3.5..5.0);
                let lead = rng.gen_range(4.0..8.0);
                let p0 = rng.gen_range(-1.0..1.0);
                (
                    vec![
                        zone("lobby", 0, false),
                        zone("exit", 2, true),
                        zone("facade", 1, true),
                        zone("street", 3, true),
                    ],
                    vec![
                        wp(2.0, 0.0, 0, lead),
                        wp(9.0 + j, 0.0, 0, 0.0),
                        wp(12.0 + j, 0.0, 1, 0.0),
                        wp(12.0 + j, facade, 2, 0.0),
                        wp(24.0 + j, 14.0, 3, 0.0),
                    ],
                    vec![
                        ap(&mut rng, 0.0, 0.0, p0),
                        ap(&mut rng, 5.0, -6.0, -9.0),
                        ap(&mut rng, -6.0, 4.0, -6.0),
                    ],
                    70.0,
                )
            }
            Site::C => {
                let p0 = 0.5 + rng.gen_range(-0.75..0.75);
                let pauses: Vec<f64> = (0..4).map(|_| rng.gen_range(1.0..3.0)).collect();
                let lead = rng.gen_range(4.0..8.0);
                (
                    vec![
                        zone("apartment", 0, false),
                        zone("courtyard", 2, true),
                        zone("street", 4, true),
                    ],
                    vec![
                        wp(2.0, 0.0, 0, lead),
                        wp(8.0, 0.0, 0, 0.0),
                        wp(11.0, 1.0, 1, pauses[0]),
                        wp(13.0, -1.0, 1, pauses[1]),
                        wp(12.0, 2.0, 1, pauses[2]),
                        wp(14.0, 0.0, 1, pauses[3]),
                        wp(30.0, 10.0, 2, 0.0),
                    ],
                    vec![
                        ap(&mut rng, 0.0, 0.0, p0),
                        ap(&mut rng, 4.0, 5.0, -7.0),
                        ap(&mut rng, -3.0, -4.0, -9.0),
                    ],
                    70.0,
                )
            }
        };
        let mut s = Self {
            site,
            duration,
            zones,
            waypoints,
            aps,
            degradation_onset: 0.0,
            seed,
            hour_of_day: rng.gen_range(8.0..20.0),
            cell_id: format!("{}-{:05}", 46000 + site.salt() % 97, rng.gen_range(0..100_000u32)),
        };
        s.degradation_onset = s.compute_onset(cfg)?;
        Ok(s)
    }

    /// First tick (10 Hz) where the connected AP's noiseless RSSI drops
    /// below the onset threshold.
    pub fn compute_onset(&self, cfg: &SimConfig) -> Result<f64> {
        self.validate_layout()?;
        let walker = Walker::new(self, cfg);
        let ticks = (self.duration * 10.0).round() as usize;
        let mut prev = f64::INFINITY;
        for k in 0..ticks {
            let t = k as f64 / 10.0;
            let st = walker.state(t);
            let r = clean_rssi(&self.aps[0], &self.zones[st.zone], st.x, st.y, &cfg.radio);
            if r < cfg.onset_threshold && prev >= cfg.onset_threshold && k > 0 {
                return Ok(t);
            }
            prev = r;
        }
        Err(Error::InvalidScenario(format!(
            "connected AP never degrades below {} dBm within {} s",
            cfg.onset_threshold, self.duration
        )))
    }

    fn validate_layout(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidScenario(format!("duration {} must be > 0", self.duration)));
        }
        if self.waypoints.len() < 2 {
            return Err(Error::InvalidScenario("need at least 2 waypoints".into()));
        }
        if self.aps.is_empty() {
            return Err(Error::InvalidScenario("need at least one access point".into()));
        }
        if let Some(w) = self.waypoints.iter().find(|w| w.zone >= self.zones.len()) {
            return Err(Error::InvalidScenario(format!("waypoint zone {} out of range", w.zone)));
        }
        if self.waypoints.iter().any(|w| !(w.pause >= 0.0) || !w.x.is_finite() || !w.y.is_finite()) {
            return Err(Error::InvalidScenario("waypoint has a bad position or pause".into()));
        }
        let outdoor: Vec<bool> = self.waypoints.iter().map(|w| self.zones[w.zone].outdoor).collect();
        let entries = outdoor.windows(2).filter(|w| !w[0] && w[1]).count();
        let exits = outdoor.windows(2).filter(|w| w[0] && !w[1]).count();
        let ok = match self.site {
            Site::A => outdoor.iter().all(|o| !o),
            Site::B | Site::C => entries == 1 && exits == 0 && !outdoor[0],
        };
        if !ok {
            return Err(Error::InvalidScenario(format!(
                "zone sequence inconsistent with site {}",
                self.site
            )));
        }
        Ok(())
    }

    /// Full check including the onset invariant.
    pub fn validate(&self) -> Result<()> {
        self.validate_layout()?;
        if !(self.degradation_onset > 0.0 && self.degradation_onset < self.duration) {
            return Err(Error::InvalidScenario(format!(
                "degradation onset {} outside (0, {})",
                self.degradation_onset, self.duration
            )));
        }
        Ok(())
    }
}

/// Scenario definition file (TOML):
///
/// ```toml
/// site = "C"
/// seed = 7
/// duration = 80.0          # optional, seconds
///
/// [[aps]]                  # optional; replaces the site's APs, first is connected
/// x = 0.0
/// y = 0.0
/// tx_power = 1.0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub site: String,
    pub seed: u64,
    pub duration: Option<f64>,
    #[serde(default)]
    pub aps: Vec<ApEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApEntry {
    pub x: f64,
    pub y: f64,
    pub tx_power: f64,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            field: "scenario".into(),
            reason: e.to_string(),
        })
    }

    pub fn build(&self, cfg: &SimConfig) -> Result<Scenario> {
        let site: Site = self.site.parse()?;
        let mut s = Scenario::for_site(site, self.seed, cfg)?;
        if let Some(d) = self.duration {
            s.duration = d;
        }
        if !self.aps.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ site.salt() ^ 0x5a);
            s.aps = self.aps.iter().map(|a| ap(&mut rng, a.x, a.y, a.tx_power)).collect();
        }
        s.degradation_onset = s.compute_onset(cfg)?;
        s.validate()?;
        Ok(s)
    }
}
