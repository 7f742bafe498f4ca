use std::fs;
use std::io;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use handoff_core::pipeline::{cmd_evaluate, cmd_simulate, cmd_train, render_table, RunConfig, REPORT_CSV};

#[derive(Parser, Debug)]
#[command(name = "handoff", version, about = "Fingerprint-driven WiFi-to-cellular handover: simulate, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate evaluation session traces and their ground truth.
    Simulate(Common),
    /// Build libraries, train the metric, selector and policy.
    Train(Common),
    /// Compare the learned policy with the threshold baseline.
    Evaluate(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Site to run (A, B or C); repeat for several. Defaults to all.
    #[arg(long = "site")]
    sites: Vec<String>,
    /// Evaluation sessions per site.
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cloud-edge rounds.
    #[arg(long)]
    rounds: Option<u32>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        if !self.sites.is_empty() {
            cfg.sites = self.sites.clone();
        }
        if self.sessions.is_some() {
            cfg.sessions = self.sessions;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(n) = self.rounds {
            cfg.cloud.rounds = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.load()?;
            let files = cmd_simulate(&cfg)?;
            println!("wrote {} files to {}", files.len(), cfg.out_dir.join("traces").display());
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let out = cmd_train(&cfg, &mut io::stdout())?;
            for f in &out.model_files {
                println!("wrote {}", f.display());
            }
        }
        Command::Evaluate(c) => {
            let cfg = c.load()?;
            let rows = cmd_evaluate(&cfg)?;
            print!("{}", render_table(&rows, &cfg.site_list()?));
            println!("wrote {}", cfg.out_dir.join(REPORT_CSV).display());
        }
    }
    Ok(())
}
