//! CSV and JSON result files.
//!
//! Numbers are written with 9 significant digits in scientific notation
//! (`{:.8e}`), comma separated, one header row, `\n` line endings. Nothing
//! depends on the locale.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use kdcl_core::sim::{AggregateMetrics, FilterTrialSummary, SimConfig, TrialResult};
use serde::Serialize;

use crate::error::CliError;

pub const SUMMARY_HEADER: &str = "filter,rmse_pos_m,rmse_ori_rad,nees";
pub const CURVE_HEADER: &str = "step,time_s,filter,robot,err_px,err_py,err_pz,err_yaw,\
sig3_px,sig3_py,sig3_pz,sig3_yaw,nees";
pub const MEAN_CURVE_HEADER: &str = "step,time_s,filter,rmse_pos_m,rmse_ori_rad,nees";
pub const TRIAL_HEADER: &str = "trial,filter,rmse_pos_m,rmse_ori_rad,nees,yaw_outside_3sigma,samples,failure";

/// Nine significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.8e}")
}

/// One row of a per-step curve file.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: usize,
    pub time_s: f64,
    pub filter: String,
    pub robot: usize,
    pub error: [f64; 4],
    pub sigma3: [f64; 4],
    pub nees: f64,
}

/// Summary rows `(filter, rmse_pos, rmse_ori, nees)`.
pub fn summary_rows(metrics: &AggregateMetrics) -> Vec<(String, f64, f64, f64)> {
    metrics
        .filters
        .iter()
        .map(|f| (f.kind.to_string(), f.rmse_pos, f.rmse_ori, f.nees))
        .collect()
}

pub fn write_summary<W: Write>(out: &mut W, rows: &[(String, f64, f64, f64)]) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for (name, p, o, n) in rows {
        writeln!(out, "{name},{},{},{}", num(*p), num(*o), num(*n))?;
    }
    Ok(())
}

pub fn write_curves<W: Write>(out: &mut W, rows: &[CurveRow]) -> std::io::Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for r in rows {
        write!(out, "{},{},{},{}", r.step, num(r.time_s), r.filter, r.robot)?;
        for v in r.error.iter().chain(&r.sigma3) {
            write!(out, ",{}", num(*v))?;
        }
        writeln!(out, ",{}", num(r.nees))?;
    }
    Ok(())
}

/// Filter-major, then step, then robot.
pub fn trial_curve_rows(trial: &TrialResult, dt: f64) -> Vec<CurveRow> {
    let mut rows = Vec::new();
    for f in &trial.filters {
        for (k, robots) in f.steps.iter().enumerate() {
            for (i, r) in robots.iter().enumerate() {
                rows.push(CurveRow {
                    step: k + 1,
                    time_s: (k + 1) as f64 * dt,
                    filter: f.kind.to_string(),
                    robot: i,
                    error: r.error.into(),
                    sigma3: r.sigma3.into(),
                    nees: r.nees,
                });
            }
        }
    }
    rows
}

pub fn write_mean_curves<W: Write>(out: &mut W, metrics: &AggregateMetrics, dt: f64) -> std::io::Result<()> {
    writeln!(out, "{MEAN_CURVE_HEADER}")?;
    for f in &metrics.filters {
        let c = &f.curves;
        for k in 0..c.nees.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                k + 1,
                num((k + 1) as f64 * dt),
                f.kind,
                num(c.rmse_pos[k]),
                num(c.rmse_ori[k]),
                num(c.nees[k])
            )?;
        }
    }
    Ok(())
}

pub fn write_trial_summaries<W: Write>(out: &mut W, metrics: &AggregateMetrics) -> std::io::Result<()> {
    writeln!(out, "{TRIAL_HEADER}")?;
    for (t, summaries) in metrics.per_trial.iter().enumerate() {
        for s in summaries {
            write_trial_line(out, t, s)?;
        }
    }
    Ok(())
}

fn write_trial_line<W: Write>(out: &mut W, trial: usize, s: &FilterTrialSummary) -> std::io::Result<()> {
    // failure messages never contain commas or quotes we need to keep
    let failure = s.failure.as_deref().unwrap_or("").replace([',', '\n', '"'], " ");
    writeln!(
        out,
        "{trial},{},{},{},{},{},{},{failure}",
        s.kind,
        num(s.rmse_pos),
        num(s.rmse_ori),
        num(s.nees),
        s.yaw_outside,
        s.samples
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterSummary {
    pub rmse_pos_m: f64,
    pub rmse_ori_rad: f64,
    pub nees: f64,
    pub failed_trials: Vec<usize>,
}

/// Run metadata; the only output file carrying timestamps.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub master_seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub config: toml::Value,
    pub summary: BTreeMap<String, FilterSummary>,
}

impl RunManifest {
    pub fn new(
        config: &SimConfig,
        metrics: &AggregateMetrics,
        started_at: chrono::DateTime<chrono::Utc>,
        finished_at: chrono::DateTime<chrono::Utc>,
    ) -> Result<Self, CliError> {
        let text = crate::config::serialize_config(config)?;
        let config_value = text
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let summary = metrics
            .filters
            .iter()
            .map(|f| {
                (
                    f.kind.to_string(),
                    FilterSummary {
                        rmse_pos_m: f.rmse_pos,
                        rmse_ori_rad: f.rmse_ori,
                        nees: f.nees,
                        failed_trials: f.failed_trials.clone(),
                    },
                )
            })
            .collect();
        Ok(Self {
            tool: "kdcl".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            master_seed: config.master_seed,
            started_at: started_at.to_rfc3339(),
            finished_at: finished_at.to_rfc3339(),
            config: config_value,
            summary,
        })
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub(crate) fn render<F>(f: F) -> Vec<u8>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize) -> CurveRow {
        CurveRow {
            step,
            time_s: step as f64 * 0.1,
            filter: "KD".into(),
            robot: 0,
            error: [0.1, -0.2, 1e-7, 3.0],
            sigma3: [1.0, 2.0, 3.0, 4.0],
            nees: 4.25,
        }
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(num(0.1), "1.00000000e-1");
        assert_eq!(num(-1234.56789012), "-1.23456789e3");
        assert_eq!(num(0.0), "0.00000000e0");
    }

    #[test]
    fn two_steps_give_three_lines() {
        let text = String::from_utf8(render(|b| write_curves(b, &[row(1), row(2)]))).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.ends_with('\n'));
        assert_eq!(text.lines().next().unwrap(), CURVE_HEADER);
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 13);
    }

    #[test]
    fn summary_has_one_row_per_filter() {
        let rows = vec![("STD".to_string(), 1.0, 0.1, 20.0), ("KD".to_string(), 0.9, 0.05, 4.1)];
        let text = String::from_utf8(render(|b| write_summary(b, &rows))).unwrap();
        assert_eq!(text.lines().count(), 1 + rows.len());
        assert_eq!(text.lines().nth(2).unwrap(), "KD,9.00000000e-1,5.00000000e-2,4.10000000e0");
    }

    proptest::proptest! {
        #[test]
        fn numbers_reparse_within_format_precision(v in proptest::num::f64::NORMAL) {
            let back: f64 = num(v).parse().unwrap();
            // 9 significant digits: half a unit in the 9th digit
            proptest::prop_assert!(((back - v) / v).abs() <= 5e-9);
        }
    }
}
