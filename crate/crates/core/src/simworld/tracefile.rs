//! Line-oriented text form of a [`RawTrace`]:
//!
//! ```text
//! # handoff-trace 1
//! meta,<site|none>,<seed>,<duration>,<hour_of_day>,<connected_bssid>
//! zones,<outdoor flag per zone, 0/1, ;-separated>
//! tick,<zone index>,<clean connected RSSI>      one per 10 Hz tick
//! imu,<t>,<step 0/1>,<heading>
//! wifi,<t>,<bssid>=<rssi>;...
//! cell,<t>,<cell id>,<rsrp>,<rsrq>
//! gnss,<t>,<snr>,<satellites>,<fix 0/1>
//! ```
//!
//! Numbers use the shortest round-trip representation, so a trace written
//! and read back is identical. Ground truth lives in its own sidecar
//! ([`GroundTruth::to_csv`]).

use std::fmt::Write as _;

use super::{GroundTruth, RawTrace, Site};
use crate::error::{Error, Result};
use crate::fpcore::raw::{ApReading, CellSample, GnssSample, ImuSample, WifiScan};

const MAGIC: &str = "# handoff-trace 1";

fn flag(b: bool) -> u8 {
    u8::from(b)
}

impl RawTrace {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let site = self.site.map_or("none", Site::as_str);
        let _ = writeln!(
            s,
            "meta,{site},{},{},{},{}",
            self.seed, self.duration, self.hour_of_day, self.connected_bssid
        );
        let zones: Vec<String> = self.zone_outdoor.iter().map(|o| flag(*o).to_string()).collect();
        let _ = writeln!(s, "zones,{}", zones.join(";"));
        for (z, r) in self.zones.iter().zip(&self.clean_rssi) {
            let _ = writeln!(s, "tick,{z},{r}");
        }
        for i in &self.imu {
            let _ = writeln!(s, "imu,{},{},{}", i.t, flag(i.step), i.heading);
        }
        for w in &self.wifi {
            let r: Vec<String> = w.readings.iter().map(|a| format!("{}={}", a.bssid, a.rssi)).collect();
            let _ = writeln!(s, "wifi,{},{}", w.t, r.join(";"));
        }
        for c in &self.cell {
            let _ = writeln!(s, "cell,{},{},{},{}", c.t, c.cell_id, c.rsrp, c.rsrq);
        }
        for g in &self.gnss {
            let _ = writeln!(s, "gnss,{},{},{},{}", g.t, g.snr, g.satellites, flag(g.fix));
        }
        s
    }

    pub fn from_text(text: &str, truth: GroundTruth) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(perr(1, "missing trace header")),
        }
        let mut trace = RawTrace {
            site: None,
            seed: 0,
            duration: 0.0,
            hour_of_day: 0.0,
            imu: Vec::new(),
            zones: Vec::new(),
            zone_outdoor: Vec::new(),
            wifi: Vec::new(),
            cell: Vec::new(),
            gnss: Vec::new(),
            connected_bssid: String::new(),
            clean_rssi: Vec::new(),
            truth,
        };
        let mut saw_meta = false;
        for (i, line) in lines {
            let ln = i + 1;
            let p: Vec<&str> = line.split(',').collect();
            let want = |n: usize| {
                if p.len() == n {
                    Ok(())
                } else {
                    Err(perr(ln, &format!("`{}` line needs {n} fields", p[0])))
                }
            };
            match p[0] {
                "meta" => {
                    want(6)?;
                    trace.site = match p[1] {
                        "none" => None,
                        s => Some(s.parse()?),
                    };
                    trace.seed = p[2].parse().map_err(|_| perr(ln, "bad seed"))?;
                    trace.duration = num(p[3], ln)?;
                    trace.hour_of_day = num(p[4], ln)?;
                    trace.connected_bssid = p[5].to_string();
                    saw_meta = true;
                }
                "zones" => {
                    want(2)?;
                    trace.zone_outdoor = p[1]
                        .split(';')
                        .filter(|v| !v.is_empty())
                        .map(|v| bool_field(v, ln))
                        .collect::<Result<_>>()?;
                }
                "tick" => {
                    want(3)?;
                    trace.zones.push(p[1].parse().map_err(|_| perr(ln, "bad zone index"))?);
                    trace.clean_rssi.push(num(p[2], ln)?);
                }
                "imu" => {
                    want(4)?;
                    trace.imu.push(ImuSample {
                        t: num(p[1], ln)?,
                        step: bool_field(p[2], ln)?,
                        heading: num(p[3], ln)?,
                    });
                }
                "wifi" => {
                    want(3)?;
                    let readings = p[2]
                        .split(';')
                        .filter(|v| !v.is_empty())
                        .map(|r| {
                            let (b, v) = r.rsplit_once('=').ok_or_else(|| perr(ln, "bad reading"))?;
                            Ok(ApReading {
                                bssid: b.to_string(),
                                rssi: num(v, ln)?,
                            })
                        })
                        .collect::<Result<_>>()?;
                    trace.wifi.push(WifiScan {
                        t: num(p[1], ln)?,
                        readings,
                    });
                }
                "cell" => {
                    want(5)?;
                    trace.cell.push(CellSample {
                        t: num(p[1], ln)?,
                        cell_id: p[2].to_string(),
                        rsrp: num(p[3], ln)?,
                        rsrq: num(p[4], ln)?,
                    });
                }
                "gnss" => {
                    want(5)?;
                    trace.gnss.push(GnssSample {
                        t: num(p[1], ln)?,
                        snr: num(p[2], ln)?,
                        satellites: p[3].parse().map_err(|_| perr(ln, "bad satellite count"))?,
                        fix: bool_field(p[4], ln)?,
                    });
                }
                "" => {}
                other => return Err(perr(ln, &format!("unknown record `{other}`"))),
            }
        }
        if !saw_meta {
            return Err(perr(0, "missing meta line"));
        }
        if trace.clean_rssi.is_empty() {
            return Err(perr(0, "trace has no ticks"));
        }
        if let Some(z) = trace.zones.iter().find(|z| **z >= trace.zone_outdoor.len()) {
            return Err(perr(0, &format!("zone index {z} out of range")));
        }
        Ok(trace)
    }
}

fn perr(line: usize, reason: &str) -> Error {
    Error::Parse {
        line,
        reason: reason.to_string(),
    }
}

fn num(s: &str, line: usize) -> Result<f64> {
    s.parse().map_err(|_| perr(line, &format!("bad number `{s}`")))
}

fn bool_field(s: &str, line: usize) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(perr(line, &format!("expected 0 or 1, got `{s}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{generate, Scenario, SimConfig};
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = SimConfig::default();
        for site in Site::ALL {
            let trace = generate(&Scenario::for_site(site, 4, &cfg).unwrap(), &cfg).unwrap();
            let text = trace.to_text();
            let back = RawTrace::from_text(&text, trace.truth.clone()).unwrap();
            assert_eq!(back, trace);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let truth = GroundTruth {
            degradation_onset: 1.0,
            door_time: None,
            zone_transitions: Vec::new(),
        };
        assert!(RawTrace::from_text("meta,A,1,2,3,x\n", truth.clone()).is_err());
        let bad = format!("{MAGIC}\nmeta,A,1,2,3,x\nzones,0\ntick,0,-50\nimu,0,2,0\n");
        let err = RawTrace::from_text(&bad, truth.clone()).unwrap_err();
        assert!(err.to_string().contains("line 5"), "{err}");
        let bad_zone = format!("{MAGIC}\nmeta,A,1,2,3,x\nzones,0\ntick,3,-50\n");
        assert!(RawTrace::from_text(&bad_zone, truth).is_err());
    }
}
