//! Line-oriented text format for fingerprint windows.
//!
//! One header line, then one window per line:
//! `t,<pdr x3>,<wifi x3>,<cell x3>,<gnss x3>,<time x2>,<mask bits>,<quality x5>`.
//! Mask bits are a five-character `0`/`1` string in modality order. Reals use
//! the shortest representation that round-trips.

use std::io::{BufRead, Write};

use super::{Fingerprint, MaskEntry, FEATURE_DIM, MODALITY_COUNT};
use crate::error::{Error, Result};

pub const HEADER: &str = "t,pdr_step_rate,pdr_heading_change,pdr_stop,wifi_level,wifi_slope,wifi_churn,cell_rsrp,cell_rsrq,cell_change,gnss_snr,gnss_sats,gnss_fix,time_sin,time_cos,mask,q_pdr,q_wifi,q_cell,q_gnss,q_time";

pub fn format_window(fp: &Fingerprint) -> String {
    let mut fields: Vec<String> = Vec::with_capacity(1 + FEATURE_DIM + 1 + MODALITY_COUNT);
    fields.push(fp.timestamp().to_string());
    fields.extend(fp.features().iter().map(|v| v.to_string()));
    fields.push(
        fp.mask()
            .iter()
            .map(|m| if m.present { '1' } else { '0' })
            .collect(),
    );
    fields.extend(fp.mask().iter().map(|m| m.quality.to_string()));
    fields.join(",")
}

pub fn parse_window(line: &str, line_no: usize) -> Result<Fingerprint> {
    let perr = |reason: String| Error::Parse {
        line: line_no,
        reason,
    };
    let parts: Vec<&str> = line.trim_end().split(',').collect();
    let expected = 1 + FEATURE_DIM + 1 + MODALITY_COUNT;
    if parts.len() != expected {
        return Err(perr(format!("expected {expected} fields, got {}", parts.len())));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| perr(format!("bad number `{s}`: {e}")))
    };
    let t = num(parts[0])?;
    let mut features = [0.0; FEATURE_DIM];
    for (k, slot) in features.iter_mut().enumerate() {
        *slot = num(parts[1 + k])?;
    }
    let bits = parts[1 + FEATURE_DIM];
    if bits.len() != MODALITY_COUNT || !bits.chars().all(|c| c == '0' || c == '1') {
        return Err(perr(format!("bad mask bits `{bits}`")));
    }
    let mut mask = [MaskEntry {
        present: false,
        quality: 0.0,
    }; MODALITY_COUNT];
    for (k, c) in bits.chars().enumerate() {
        mask[k] = MaskEntry {
            present: c == '1',
            quality: num(parts[2 + FEATURE_DIM + k])?,
        };
    }
    Fingerprint::from_parts(t, features, mask).map_err(|e| perr(e.to_string()))
}

pub fn write_windows<W: Write>(mut out: W, windows: &[Fingerprint]) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for fp in windows {
        writeln!(out, "{}", format_window(fp))?;
    }
    Ok(())
}

pub fn read_windows<R: BufRead>(input: R) -> Result<Vec<Fingerprint>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim_end() != HEADER {
                return Err(Error::Parse {
                    line: 1,
                    reason: "missing or unexpected header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_window(&line, i + 1)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_fingerprint() -> impl Strategy<Value = Fingerprint> {
        (
            0.0f64..1e5,
            prop::array::uniform14(-2.0f64..2.0),
            prop::array::uniform5(any::<bool>()),
            prop::array::uniform5(0.0f64..=1.0),
        )
            .prop_map(|(t, f, p, q)| {
                let mut mask = [MaskEntry {
                    present: false,
                    quality: 0.0,
                }; MODALITY_COUNT];
                for k in 0..MODALITY_COUNT {
                    mask[k] = MaskEntry {
                        present: p[k],
                        quality: q[k],
                    };
                }
                Fingerprint::from_parts(t, f, mask).unwrap()
            })
    }

    proptest! {
        #[test]
        fn line_round_trip(fps in prop::collection::vec(arb_fingerprint(), 0..6)) {
            let mut buf = Vec::new();
            write_windows(&mut buf, &fps).unwrap();
            let back = read_windows(buf.as_slice()).unwrap();
            prop_assert_eq!(back, fps);
        }
    }

    #[test]
    fn rejects_short_line() {
        let err = parse_window("1.0,2.0", 3).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }
}
