//! End-to-end harness: simulation, training and evaluation runs.

mod config;
mod history;
mod report;
mod run;

pub use config::RunConfig;
pub use history::{build_library, history_items, metric_batches, onset_buffer, HistoryItem, OUTDOOR_CHECK_DELAY};
pub use report::{fmt2, render_csv, render_table, summarize_site, SessionReport, SiteSummary, REPORT_HEADER};
pub use run::{
    cmd_evaluate, cmd_simulate, cmd_train, library_dir, models_dir, traces_dir, TrainOutcome, CHECKSUM_FILE,
    METRIC_FILE, POLICY_FILE, REPORT_CSV, REPORT_TXT, REWARD_FILE, SELECTOR_FILE, TRAIN_LOG_FILE,
};
