use std::fmt::Write as _;
use std::fs;
use std::hash::Hasher;
use std::io::Write;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use rayon::prelude::*;

use super::config::RunConfig;
use super::history::{build_library, history_items, metric_batches};
use super::report::{render_csv, render_table, SessionReport};
use crate::align::{train_metric, MetricModel};
use crate::cloudedge::{mix, run_round, EdgeAgent, EdgeEpisode, RewardModel, RoundState, RoundStats};
use crate::error::{Error, Result};
use crate::filters::SelectorModel;
use crate::fpcore::FingerprintLibrary;
use crate::policy::{rollout, ActMode, AidtwStack, EpisodeEnv, PolicyModel};
use crate::simworld::{generate, report_tts, GroundTruth, RawTrace, Scenario, Site};

pub const SELECTOR_FILE: &str = "selector.txt";
pub const METRIC_FILE: &str = "metric.txt";
pub const POLICY_FILE: &str = "policy.txt";
pub const REWARD_FILE: &str = "reward.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const CHECKSUM_FILE: &str = "eval_traces.txt";

const HISTORY_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
/// Nominal wall clock of the first training session.
const SESSION_EPOCH: f64 = 1_700_000_000.0;

fn site_code(site: Site) -> u64 {
    site as u64 + 1
}

fn trace_seed(cfg: &RunConfig, site: Site, stream: u64, k: usize) -> u64 {
    mix(&[cfg.seed, site_code(site), stream, k as u64])
}

fn make_trace(cfg: &RunConfig, site: Site, stream: u64, k: usize) -> Result<RawTrace> {
    let scenario = Scenario::for_site(site, trace_seed(cfg, site, stream, k), &cfg.sim)?;
    generate(&scenario, &cfg.sim)
}

fn make_traces(cfg: &RunConfig, site: Site, stream: u64, n: usize) -> Result<Vec<RawTrace>> {
    (0..n).into_par_iter().map(|k| make_trace(cfg, site, stream, k)).collect()
}

pub fn traces_dir(out: &Path) -> PathBuf {
    out.join("traces")
}

pub fn models_dir(out: &Path) -> PathBuf {
    out.join("models")
}

pub fn library_dir(out: &Path, site: Site) -> PathBuf {
    out.join("library").join(site.as_str())
}

fn trace_paths(out: &Path, site: Site, session: usize) -> (PathBuf, PathBuf) {
    let dir = traces_dir(out);
    (
        dir.join(format!("{site}_{session:03}.trace")),
        dir.join(format!("{site}_{session:03}.truth.csv")),
    )
}

fn checksum(text: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(text.as_bytes());
    h.finish()
}

/// Writes the evaluation sessions of every configured site as trace plus
/// ground-truth files. Returns the paths written.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(traces_dir(&cfg.out_dir))?;
    let mut written = Vec::new();
    for site in cfg.site_list()? {
        let traces = make_traces(cfg, site, EVAL_STREAM, cfg.session_count(site))?;
        for (k, trace) in traces.iter().enumerate() {
            let (tp, gp) = trace_paths(&cfg.out_dir, site, k + 1);
            fs::write(&tp, trace.to_text())?;
            fs::write(&gp, trace.truth.to_csv())?;
            written.push(tp);
            written.push(gp);
        }
    }
    Ok(written)
}

/// Everything scoring needs for one site.
fn stack(cfg: &RunConfig, selector: &SelectorModel, metric: &MetricModel, library: FingerprintLibrary) -> AidtwStack {
    AidtwStack {
        selector: selector.clone(),
        metric: metric.clone(),
        library,
        band: cfg.band,
        window: cfg.window,
        summary: cfg.summary.clone(),
    }
}

fn identifiers(trace: &RawTrace) -> Vec<String> {
    let mut ids: Vec<String> = trace
        .wifi
        .iter()
        .flat_map(|w| w.readings.iter().map(|r| r.bssid.clone()))
        .chain(trace.cell.iter().map(|c| c.cell_id.clone()))
        .chain(std::iter::once(trace.connected_bssid.clone()))
        .collect();
    ids.sort();
    ids.dedup();
    ids
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<RoundStats>,
    pub metric_losses: Vec<f64>,
    pub model_files: Vec<PathBuf>,
}

/// Builds per-site libraries from past traces, trains the metric and filter
/// selector on them, then runs the cloud-edge loop with one edge per site
/// and writes the four model files. Per-round progress goes to `log`.
pub fn cmd_train(cfg: &RunConfig, log: &mut dyn Write) -> Result<TrainOutcome> {
    cfg.validate()?;
    let sites = cfg.site_list()?;
    let mut libraries = Vec::new();
    let mut batches = Vec::new();
    for &site in &sites {
        let hist = make_traces(cfg, site, HISTORY_STREAM, cfg.history_traces)?;
        let items = history_items(&hist, &cfg.summary, cfg.window, 0)?;
        let library = build_library(&items, &cfg.library)?;
        library.save(&library_dir(&cfg.out_dir, site))?;
        writeln!(log, "site {site}: {} prototypes from {} past traces", library.len(), hist.len())?;
        batches.extend(metric_batches(&items, cfg.window)?);
        libraries.push(library);
    }
    let trained = train_metric(
        &MetricModel::identity(),
        Some(&SelectorModel::zeros()),
        &batches,
        &cfg.summary.normalization,
        &cfg.metric,
    )?;
    let selector = trained.selector.clone().unwrap_or_else(SelectorModel::zeros);
    if let (Some(first), Some(last)) = (trained.losses.first(), trained.losses.last()) {
        writeln!(log, "metric: margin loss {first:.4} -> {last:.4} over {} steps", trained.losses.len())?;
    }

    let mut edges = Vec::new();
    for (i, (&site, library)) in sites.iter().zip(libraries).enumerate() {
        let st = stack(cfg, &selector, &trained.model, library);
        let traces = make_traces(cfg, site, TRAIN_STREAM, cfg.train_traces)?;
        let episodes = traces
            .par_iter()
            .enumerate()
            .map(|(k, trace)| {
                Ok(EdgeEpisode {
                    env: EpisodeEnv::new(trace, &st, &cfg.sim)?,
                    identifiers: identifiers(trace),
                    session_start: SESSION_EPOCH + (i * 100_000 + k * 3_600) as f64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let salt = mix(&[cfg.seed, site_code(site), 0xed6e]);
        edges.push(EdgeAgent::new(format!("edge-{}", site.long_name()), salt, PolicyModel::zeros(), episodes));
    }
    let policy = PolicyModel::seeded(mix(&[cfg.seed, 0x9011c7]));
    for e in &mut edges {
        e.policy = policy.clone();
    }
    let cloud = crate::cloudedge::CloudConfig {
        seed: mix(&[cfg.seed, cfg.cloud.seed]),
        ..cfg.cloud.clone()
    };
    let mut state = RoundState::new(policy, RewardModel::seeded(mix(&[cfg.seed, 0x4e3a])), cloud.rounds, edges.len());
    for _ in 0..cloud.rounds {
        state = run_round(&state, &mut edges, &cloud)?;
        let s = state.history.last().expect("round recorded");
        writeln!(
            log,
            "round {:>3}  mean_reward {:>9.4}  mean_tts {:>7.3}  episodes {}",
            s.round + 1,
            s.mean_reward,
            s.mean_tts,
            s.episodes
        )?;
    }

    let dir = models_dir(&cfg.out_dir);
    fs::create_dir_all(&dir)?;
    let files = [
        (SELECTOR_FILE, selector.to_text()),
        (METRIC_FILE, trained.model.to_text()),
        (POLICY_FILE, state.cloud_policy.to_text(state.cloud_version)),
        (REWARD_FILE, state.reward_model.to_text()),
    ];
    let mut model_files = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text)?;
        model_files.push(p);
    }
    let mut csv = String::from("round,mean_reward,mean_tts,mean_delta_time,episodes,rm_loss,direct_hf,substituted_hf\n");
    for s in &state.history {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            s.round + 1,
            s.mean_reward,
            s.mean_tts,
            s.mean_delta_time,
            s.episodes,
            s.rm_loss.map_or_else(|| "NA".into(), |v| v.to_string()),
            s.direct_hf,
            s.substituted_hf
        );
    }
    fs::write(cfg.out_dir.join(TRAIN_LOG_FILE), csv)?;
    Ok(TrainOutcome {
        history: state.history,
        metric_losses: trained.losses,
        model_files,
    })
}

fn read_model(dir: &Path, name: &str) -> Result<String> {
    let p = dir.join(name);
    fs::read_to_string(&p).map_err(|e| Error::MissingInput(format!("{}: {e}", p.display())))
}

/// Trace text and ground truth of one evaluation session: read from the
/// simulate output when present, generated otherwise.
fn session_trace(cfg: &RunConfig, site: Site, session: usize) -> Result<(String, RawTrace)> {
    let (tp, gp) = trace_paths(&cfg.out_dir, site, session);
    if tp.exists() {
        let text = fs::read_to_string(&tp)?;
        let truth = GroundTruth::from_csv(&fs::read_to_string(&gp)?)?;
        let trace = RawTrace::from_text(&text, truth)?;
        return Ok((text, trace));
    }
    let trace = make_trace(cfg, site, EVAL_STREAM, session - 1)?;
    Ok((trace.to_text(), trace))
}

/// Runs the threshold baseline and the greedy learned policy on the same
/// session traces and writes `report.csv`, `report.txt` and a checksum of
/// every trace evaluated.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<SessionReport>> {
    cfg.validate()?;
    let sites = cfg.site_list()?;
    let dir = models_dir(&cfg.out_dir);
    let selector = SelectorModel::from_text(&read_model(&dir, SELECTOR_FILE)?)?;
    let metric = MetricModel::from_text(&read_model(&dir, METRIC_FILE)?)?;
    let (policy, _) = PolicyModel::from_text(&read_model(&dir, POLICY_FILE)?)?;

    let mut rows = Vec::new();
    let mut sums = String::from("site,session,trace_fnv64\n");
    for &site in &sites {
        let lib_dir = library_dir(&cfg.out_dir, site);
        if !lib_dir.exists() {
            return Err(Error::MissingInput(format!("library {}", lib_dir.display())));
        }
        let library = FingerprintLibrary::load(&lib_dir, cfg.library.clone())?;
        let st = stack(cfg, &selector, &metric, library);
        let results = (1..=cfg.session_count(site))
            .into_par_iter()
            .map(|session| {
                let (text, trace) = session_trace(cfg, site, session)?;
                let env = EpisodeEnv::new(&trace, &st, &cfg.sim)?;
                let seed = mix(&[cfg.seed, site_code(site), session as u64]);
                let traj = rollout(&policy, &env, &cfg.cloud.rollout, ActMode::Greedy, seed)?;
                let floor = cfg.sim.tts_floor;
                let report = SessionReport::new(
                    site,
                    session,
                    report_tts(env.baseline_tts(), floor),
                    report_tts(traj.outcome.tts, floor),
                );
                Ok((report, checksum(&text)))
            })
            .collect::<Result<Vec<_>>>()?;
        for (r, sum) in results {
            let _ = writeln!(sums, "{},{},{:016x}", r.site, r.session, sum);
            rows.push(r);
        }
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(REPORT_CSV), render_csv(&rows, &sites))?;
    fs::write(cfg.out_dir.join(REPORT_TXT), render_table(&rows, &sites))?;
    fs::write(cfg.out_dir.join(CHECKSUM_FILE), sums)?;
    Ok(rows)
}
