use std::fmt::Write as _;

use crate::simworld::Site;

pub const REPORT_HEADER: &str = "site,session,baseline_tts,proposed_tts,improvement,relative";

/// One evaluated session. `improvement` is exactly `baseline − proposed`;
/// `relative` is `improvement / baseline` when the baseline is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionReport {
    pub site: Site,
    /// 1-based.
    pub session: usize,
    pub baseline_tts: f64,
    pub proposed_tts: f64,
    pub improvement: f64,
    pub relative: Option<f64>,
}

impl SessionReport {
    pub fn new(site: Site, session: usize, baseline_tts: f64, proposed_tts: f64) -> Self {
        let improvement = baseline_tts - proposed_tts;
        Self {
            site,
            session,
            baseline_tts,
            proposed_tts,
            improvement,
            relative: (baseline_tts > 0.0).then(|| improvement / baseline_tts),
        }
    }
}

/// Per-site means over unrounded values.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteSummary {
    pub site: Site,
    pub sessions: usize,
    pub baseline_tts: f64,
    pub proposed_tts: f64,
    pub improvement: f64,
    /// Mean of the per-session ratios (sessions with a positive baseline).
    pub mean_relative: Option<f64>,
    /// Mean improvement over mean baseline.
    pub ratio_of_means: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn summarize_site(site: Site, rows: &[SessionReport]) -> Option<SiteSummary> {
    let rows: Vec<&SessionReport> = rows.iter().filter(|r| r.site == site).collect();
    let baseline = mean(rows.iter().map(|r| r.baseline_tts))?;
    let improvement = mean(rows.iter().map(|r| r.improvement))?;
    Some(SiteSummary {
        site,
        sessions: rows.len(),
        baseline_tts: baseline,
        proposed_tts: mean(rows.iter().map(|r| r.proposed_tts))?,
        improvement,
        mean_relative: mean(rows.iter().filter_map(|r| r.relative)),
        ratio_of_means: (baseline > 0.0).then(|| improvement / baseline),
    })
}

/// Two-decimal display with ties rounded away from zero. A 1e-9 nudge keeps
/// values such as 6.955 (stored just below) on the expected side.
pub fn fmt2(x: f64) -> String {
    let scaled = x * 100.0;
    let r = (scaled + 1e-9 * scaled.signum()).round() / 100.0;
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:.2}")
}

fn fmt_pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{}%", fmt2(v * 100.0)))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Delimited report: one row per session, then an `Average` row per site.
/// Values are written unrounded.
pub fn render_csv(rows: &[SessionReport], sites: &[Site]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{REPORT_HEADER}");
    for site in sites {
        for r in rows.iter().filter(|r| r.site == *site) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.site,
                r.session,
                r.baseline_tts,
                r.proposed_tts,
                r.improvement,
                opt(r.relative)
            );
        }
        if let Some(m) = summarize_site(*site, rows) {
            let _ = writeln!(
                s,
                "{},Average,{},{},{},{}",
                site,
                m.baseline_tts,
                m.proposed_tts,
                m.improvement,
                opt(m.mean_relative)
            );
        }
    }
    s
}

/// Human-readable tables, one per site, at two decimals.
pub fn render_table(rows: &[SessionReport], sites: &[Site]) -> String {
    let mut s = String::new();
    for site in sites {
        let Some(m) = summarize_site(*site, rows) else {
            continue;
        };
        let _ = writeln!(s, "Site {site} ({})", site.long_name());
        let _ = writeln!(
            s,
            "{:<9}{:>18}{:>18}{:>17}{:>11}",
            "Session", "Baseline TTS (s)", "Proposed TTS (s)", "Improvement (s)", "Relative"
        );
        for r in rows.iter().filter(|r| r.site == *site) {
            let _ = writeln!(
                s,
                "{:<9}{:>18}{:>18}{:>17}{:>11}",
                r.session,
                fmt2(r.baseline_tts),
                fmt2(r.proposed_tts),
                fmt2(r.improvement),
                fmt_pct(r.relative)
            );
        }
        let _ = writeln!(
            s,
            "{:<9}{:>18}{:>18}{:>17}{:>11}",
            "Average",
            fmt2(m.baseline_tts),
            fmt2(m.proposed_tts),
            fmt2(m.improvement),
            fmt_pct(m.mean_relative)
        );
        let _ = writeln!(
            s,
            "Average relative improvement: {} (mean of per-session ratios); {} (mean improvement / mean baseline)\n",
            fmt_pct(m.mean_relative),
            fmt_pct(m.ratio_of_means)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn row_arithmetic() {
        let r = SessionReport::new(Site::A, 1, 12.68, 6.60);
        assert_eq!(fmt2(r.improvement), "6.08");
        assert!((r.improvement - 6.08).abs() < 1e-12);
        assert!((r.relative.unwrap() - 6.08 / 12.68).abs() < 1e-12);
    }

    #[test]
    fn average_rounds_half_up() {
        let rows: Vec<SessionReport> = [6.08, 7.81, 5.88, 8.68, 6.33]
            .iter()
            .enumerate()
            .map(|(i, d)| SessionReport::new(Site::A, i + 1, 20.0, 20.0 - d))
            .collect();
        let m = summarize_site(Site::A, &rows).unwrap();
        assert!((m.improvement - 6.956).abs() < 1e-9);
        assert_eq!(fmt2(m.improvement), "6.96");
        assert_eq!(fmt2(6.955), "6.96");
        assert_eq!(fmt2(-1.005), "-1.01");
        assert_eq!(fmt2(-0.001), "0.00");
    }

    #[test]
    fn negative_improvement_is_kept() {
        let rows = vec![SessionReport::new(Site::B, 7, 3.0, 4.01), SessionReport::new(Site::B, 8, 5.0, 2.0)];
        assert!((rows[0].improvement + 1.01).abs() < 1e-12);
        let csv = render_csv(&rows, &[Site::B]);
        assert!(csv.lines().nth(1).unwrap().contains(",-1.0"), "{csv}");
        let table = render_table(&rows, &[Site::B]);
        assert!(table.contains("-1.01"), "{table}");
        let m = summarize_site(Site::B, &rows).unwrap();
        assert!((m.improvement - 0.995).abs() < 1e-12);
    }

    #[test]
    fn non_positive_baseline_has_no_ratio() {
        let r = SessionReport::new(Site::C, 1, 0.0, -2.0);
        assert_eq!(r.relative, None);
        assert!(render_csv(&[r], &[Site::C]).contains(",NA"));
    }

    proptest! {
        #[test]
        fn rows_are_self_consistent(b in -5.0f64..60.0, p in -5.0f64..60.0) {
            let r = SessionReport::new(Site::A, 1, b, p);
            prop_assert_eq!(r.improvement, b - p);
            if b > 0.0 {
                prop_assert_eq!(r.relative, Some((b - p) / b));
            }
        }
    }
}
