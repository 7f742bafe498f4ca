use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::align::MetricTrainConfig;
use crate::cloudedge::CloudConfig;
use crate::error::{Error, Result};
use crate::fpcore::{LibraryConfig, SummaryConfig};
use crate::simworld::{SimConfig, Site};

/// Everything a simulate/train/evaluate run needs. Parsed from TOML; every
/// key is optional and falls back to its default.
///
/// ```toml
/// sites = ["A", "C"]
/// sessions = 20        # evaluation sessions per site (default 5 / 10 / 6)
/// seed = 7
/// out_dir = "out"
///
/// [cloud]
/// rounds = 20
///
/// [sim.baseline]
/// threshold = -75.0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sites: Vec<String>,
    pub sessions: Option<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Past traces per site that seed the fingerprint library.
    pub history_traces: usize,
    /// Traces per site the edges replay during training.
    pub train_traces: usize,
    /// Windows per library buffer and per live query.
    pub window: usize,
    pub band: usize,
    pub sim: SimConfig,
    pub summary: SummaryConfig,
    pub library: LibraryConfig,
    pub metric: MetricTrainConfig,
    pub cloud: CloudConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sites: Site::ALL.iter().map(|s| s.as_str().to_string()).collect(),
            sessions: None,
            seed: 0,
            out_dir: PathBuf::from("out"),
            history_traces: 6,
            train_traces: 10,
            window: 10,
            band: 3,
            sim: SimConfig::default(),
            summary: SummaryConfig::default(),
            library: LibraryConfig::default(),
            metric: MetricTrainConfig {
                steps: 60,
                ..MetricTrainConfig::default()
            },
            cloud: CloudConfig::default(),
        }
    }
}

fn cfg_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| cfg_err("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    /// Parsed site list, in the configured order without duplicates.
    pub fn site_list(&self) -> Result<Vec<Site>> {
        let mut out: Vec<Site> = Vec::new();
        for s in &self.sites {
            let site: Site = s.parse()?;
            if !out.contains(&site) {
                out.push(site);
            }
        }
        if out.is_empty() {
            return Err(cfg_err("site", "no site selected"));
        }
        Ok(out)
    }

    /// Evaluation sessions for `site`: the override, else 5 (A), 10 (B)
    /// or 6 (C).
    pub fn session_count(&self, site: Site) -> usize {
        self.sessions.unwrap_or(match site {
            Site::A => 5,
            Site::B => 10,
            Site::C => 6,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.site_list()?;
        if self.sessions == Some(0) {
            return Err(cfg_err("sessions", "must be >= 1"));
        }
        if self.history_traces < 2 {
            return Err(cfg_err("history_traces", "at least two are needed for metric pairs"));
        }
        if self.train_traces == 0 {
            return Err(cfg_err("train_traces", "must be >= 1"));
        }
        if self.window < 2 {
            return Err(cfg_err("window", "must be >= 2"));
        }
        if self.band < 1 {
            return Err(cfg_err("band", "must be >= 1"));
        }
        self.sim.validate()?;
        self.metric.validate()?;
        self.cloud.validate()
    }
}
