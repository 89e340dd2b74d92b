//! Results files and the cross-domain report table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runner::RunResult;
use crate::error::{Error, Result};

/// One CSV row per (run, step, test domain).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub fingerprint: String,
    pub method: String,
    pub dg: String,
    pub train_domain: u32,
    pub test_domain: u32,
    pub seed: u64,
    pub step: usize,
    pub closed_world_no_reject: f64,
    pub closed_world_with_reject: f64,
    pub open_set_acc: f64,
    pub owr_h: f64,
}

pub fn rows_of(result: &RunResult) -> Vec<ResultRow> {
    let f = &result.fingerprint;
    result
        .steps
        .iter()
        .map(|s| ResultRow {
            fingerprint: f.to_string(),
            method: f.method.clone(),
            dg: f.dg.clone(),
            train_domain: f.train_domain,
            test_domain: f.test_domain,
            seed: f.seed,
            step: s.step,
            closed_world_no_reject: s.closed_world_no_reject,
            closed_world_with_reject: s.closed_world_with_reject,
            open_set_acc: s.open_set_acc,
            owr_h: s.owr_h,
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        source_name: path.display().to_string(),
        offset: e.position().map_or(0, |p| p.byte()),
        message: e.to_string(),
    }
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub const METRICS: [&str; 4] = ["closed_world_no_reject", "closed_world_with_reject", "open_set_acc", "owr_h"];

fn metric(r: &ResultRow, name: &str) -> f64 {
    match name {
        "closed_world_no_reject" => r.closed_world_no_reject,
        "closed_world_with_reject" => r.closed_world_with_reject,
        "open_set_acc" => r.open_set_acc,
        _ => r.owr_h,
    }
}

/// One table line: a method/plugin pair, one metric, one value per test
/// domain (step-averaged per run, then averaged over runs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub method: String,
    pub dg: String,
    pub train_domain: u32,
    pub metric: String,
    pub by_domain: BTreeMap<u32, f64>,
}

pub fn report_table(rows: &[ResultRow]) -> Vec<ReportLine> {
    // (method, dg, train) -> test domain -> fingerprint -> rows
    let mut groups: BTreeMap<(String, String, u32), BTreeMap<u32, BTreeMap<&str, Vec<&ResultRow>>>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method.clone(), r.dg.clone(), r.train_domain))
            .or_default()
            .entry(r.test_domain)
            .or_default()
            .entry(r.fingerprint.as_str())
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for ((method, dg, train_domain), domains) in groups {
        for name in METRICS {
            let by_domain = domains
                .iter()
                .map(|(&d, runs)| {
                    let per_run: Vec<f64> = runs
                        .values()
                        .map(|steps| steps.iter().map(|r| metric(r, name)).sum::<f64>() / steps.len() as f64)
                        .collect();
                    (d, per_run.iter().sum::<f64>() / per_run.len() as f64)
                })
                .collect();
            out.push(ReportLine {
                method: method.clone(),
                dg: dg.clone(),
                train_domain,
                metric: name.to_string(),
                by_domain,
            });
        }
    }
    out
}

pub fn write_report_csv(path: &Path, table: &[ReportLine]) -> Result<()> {
    let domains: BTreeSet<u32> = table.iter().flat_map(|l| l.by_domain.keys().copied()).collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["method".to_string(), "dg".into(), "train_domain".into(), "metric".into()];
    header.extend(domains.iter().map(|d| format!("d{d}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for l in table {
        let mut rec = vec![l.method.clone(), l.dg.clone(), l.train_domain.to_string(), l.metric.clone()];
        rec.extend(
            domains
                .iter()
                .map(|d| l.by_domain.get(d).map_or(String::new(), |v| format!("{v:.4}"))),
        );
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
