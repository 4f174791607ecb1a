use std::fs;
use std::path::Path;

use kdcl_core::observability::{audit_filter_run, AuditReport};
use kdcl_core::sim::{generate_truth, monte_carlo, run_trial_with, AggregateMetrics, SimConfig, TrialResult};

use crate::config::load_config;
use crate::emit::{
    render, summary_rows, trial_curve_rows, write_curves, write_file, write_mean_curves, write_summary,
    write_trial_summaries, RunManifest,
};
use crate::error::CliError;
use crate::jacobian_log::{read_log, JacobianLog, LogWriter};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const MEAN_CURVES_FILE: &str = "mean_curves.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CURVES_FILE: &str = "curves.csv";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn failed_filters(metrics: &AggregateMetrics) -> Vec<String> {
    metrics
        .filters
        .iter()
        .filter(|f| !f.failed_trials.is_empty())
        .map(|f| format!("{} failed in trials {:?}", f.kind, f.failed_trials))
        .collect()
}

/// Runs the Monte-Carlo experiment and writes every result file into `out`.
///
/// Files are written even when a filter failed in some trial; the failure is
/// then reported as an error.
pub fn montecarlo(config: &SimConfig, out: &Path) -> Result<AggregateMetrics, CliError> {
    config.validate()?;
    create_dir(out)?;
    let started = chrono::Utc::now();
    let metrics = monte_carlo(config)?;
    let finished = chrono::Utc::now();

    let rows = summary_rows(&metrics);
    write_file(&out.join(SUMMARY_FILE), &render(|b| write_summary(b, &rows)))?;
    write_file(
        &out.join(MEAN_CURVES_FILE),
        &render(|b| write_mean_curves(b, &metrics, config.dt)),
    )?;
    write_file(&out.join(TRIALS_FILE), &render(|b| write_trial_summaries(b, &metrics)))?;
    let manifest = RunManifest::new(config, &metrics, started, finished)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Numerical(e.to_string()))?;
    write_file(&out.join(MANIFEST_FILE), format!("{json}\n").as_bytes())?;

    let failures = failed_filters(&metrics);
    if !failures.is_empty() {
        return Err(CliError::Numerical(failures.join("; ")));
    }
    Ok(metrics)
}

pub fn log_file_name(kind: kdcl_core::FilterKind) -> String {
    format!("jacobians_{}.kdcl", kind.as_str().to_ascii_lowercase())
}

/// One trial with full per-step curves and Jacobian logs of the first
/// `log_steps` steps of every filter.
pub fn trial(config: &SimConfig, index: usize, out: &Path, log_steps: usize) -> Result<TrialResult, CliError> {
    config.validate()?;
    create_dir(out)?;
    let truth = generate_truth(config)?;
    let mut writers = config
        .filters
        .iter()
        .map(|&k| Ok((k, LogWriter::create(&out.join(log_file_name(k)), k)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut log_error = None;
    let result = run_trial_with(config, &truth, index, &mut |v| {
        if v.step > log_steps || log_error.is_some() {
            return;
        }
        if let Some((_, w)) = writers.iter_mut().find(|(k, _)| *k == v.kind) {
            if let Err(e) = w.append(v.record) {
                log_error = Some(e);
            }
        }
    })?;
    if let Some(e) = log_error {
        return Err(e);
    }
    for (_, w) in writers {
        w.finish()?;
    }

    let rows = trial_curve_rows(&result, config.dt);
    write_file(&out.join(CURVES_FILE), &render(|b| write_curves(b, &rows)))?;
    let summary: Vec<_> = result
        .filters
        .iter()
        .map(|f| (f.kind.to_string(), f.summary.rmse_pos, f.summary.rmse_ori, f.summary.nees))
        .collect();
    write_file(&out.join(SUMMARY_FILE), &render(|b| write_summary(b, &summary)))?;

    let failures: Vec<_> = result
        .filters
        .iter()
        .filter_map(|f| f.summary.failure.as_ref().map(|m| format!("{}: {m}", f.kind)))
        .collect();
    if !failures.is_empty() {
        return Err(CliError::Numerical(failures.join("; ")));
    }
    Ok(result)
}

pub fn observability(log: &Path, window: usize, tol: f64) -> Result<(JacobianLog, AuditReport), CliError> {
    let log = read_log(log)?;
    let report = audit_filter_run(&log.records, log.kind.frame(), window, tol)?;
    Ok((log, report))
}

pub fn validate(path: &Path) -> Result<SimConfig, CliError> {
    load_config(path)
}
