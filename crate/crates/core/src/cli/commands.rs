//! The work behind each subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::datagen::io::{read_dataset, write_dataset};
use crate::datagen::{generate_benchmark, shift_dataset, Dataset};
use crate::dg::DgConfig;
use crate::error::{Error, Result};
use crate::eval::{
    hyper_hash, read_results_csv, report_table, rows_of, run_experiment, split_domain, validate_hyperparameters,
    write_report_csv, write_results_csv, ReportLine, ResultRow, RunOutput, RunSpec, ValidationResult,
};
use crate::owr::{MethodConfig, Variant};

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn domain_file(dir: &Path, domain: u32) -> PathBuf {
    dir.join(format!("domain_{domain}.owrd"))
}

/// Every configured domain, read from `data_dir` or rendered in memory.
pub fn load_domains(cfg: &ExperimentConfig) -> Result<BTreeMap<u32, Dataset>> {
    let mut out = BTreeMap::new();
    match &cfg.data_dir {
        Some(dir) => {
            for spec in &cfg.domains {
                let path = domain_file(dir, spec.domain_id);
                if !path.exists() {
                    return Err(Error::Config(format!("dataset file {} does not exist", path.display())));
                }
                let ds = read_dataset(&path)?;
                if ds.shape() != cfg.benchmark.shape {
                    return Err(Error::Config(format!(
                        "{}: image shape {:?} differs from the configured {:?}",
                        path.display(),
                        ds.shape(),
                        cfg.benchmark.shape
                    )));
                }
                out.insert(spec.domain_id, ds);
            }
        }
        None => {
            let base = generate_benchmark(&cfg.benchmark)?;
            for spec in &cfg.domains {
                out.insert(spec.domain_id, shift_dataset(&base, spec, cfg.benchmark.seed)?);
            }
        }
    }
    Ok(out)
}

/// Writes one dataset file per configured domain into `dir`.
pub fn generate(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let rendered = load_domains(&ExperimentConfig {
        data_dir: None,
        ..cfg.clone()
    })?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for (id, ds) in rendered {
        let path = domain_file(dir, id);
        write_dataset(&path, &ds)?;
        info!("wrote {} ({} samples)", path.display(), ds.len());
        paths.push(path);
    }
    Ok(paths)
}

/// Everything `validate` produces.
pub struct ValidationOutcome {
    pub result: ValidationResult,
    /// The input configuration with the winning method settings.
    pub config: ExperimentConfig,
    pub config_path: PathBuf,
    pub scores_path: PathBuf,
}

/// Two-stage validation of `variant` on the train instances of the train
/// domain, over the classes the first seed's schedule ever learns.
pub fn validate_method(cfg: &ExperimentConfig, variant: Variant) -> Result<ValidationOutcome> {
    let domains = load_domains(cfg)?;
    let train_domain = &domains[&cfg.schedule.train_domain];
    let split = split_domain(train_domain);
    let dataset = Dataset::from_samples(train_domain.shape(), split.train)?;
    let seed = cfg.seeds[0];
    let classes: Vec<u32> = cfg.schedule_for(seed)?.known_classes().into_iter().collect();
    let base = cfg
        .methods
        .iter()
        .find(|m| m.variant == variant)
        .cloned()
        .unwrap_or_else(|| MethodConfig::new(variant));
    let result = validate_hyperparameters(
        &base,
        &dataset,
        &classes,
        &cfg.validation.grid,
        cfg.validation.num_trials,
        seed,
    )?;

    let mut config = cfg.clone();
    match config.methods.iter_mut().find(|m| m.variant == variant) {
        Some(m) => *m = result.best.clone(),
        None => config.methods.push(result.best.clone()),
    }
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join(format!("validated_{}.toml", variant.name()));
    fs::write(&config_path, config.to_manifest()?).map_err(|e| Error::io(&config_path, e))?;
    let scores_path = dir.join(format!("validation_{}.json", variant.name()));
    let json = serde_json::to_string_pretty(&result).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&scores_path, json).map_err(|e| Error::io(&scores_path, e))?;
    Ok(ValidationOutcome {
        result,
        config,
        config_path,
        scores_path,
    })
}

/// One (method, plugin, seed) combination of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: MethodConfig,
    pub dg: DgConfig,
    pub seed: u64,
}

impl Cell {
    pub fn name(&self) -> String {
        format!(
            "{}-{}-s{}-{}",
            self.method.variant.name(),
            self.dg.method.name(),
            self.seed,
            hyper_hash(&self.method, &self.dg)
        )
    }
}

/// Cells in method, plugin, seed order.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for m in &cfg.methods {
        for p in &cfg.plugins {
            for &seed in &cfg.seeds {
                out.push(Cell {
                    method: m.clone(),
                    dg: p.clone(),
                    seed,
                });
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellOutput {
    pub cell: String,
    pub output: RunOutput,
}

pub struct RunSummary {
    pub rows: Vec<ResultRow>,
    pub results_path: PathBuf,
    pub manifest_path: PathBuf,
    pub cells: Vec<CellOutput>,
}

/// Runs every cell on a pool of `jobs` workers. Each cell checkpoints
/// under `<output>/checkpoints/<cell>` and resumes from there.
pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<RunSummary> {
    let domains = load_domains(cfg)?;
    let out_dir = &cfg.output_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, cfg.to_manifest()?).map_err(|e| Error::io(&manifest_path, e))?;

    let todo = cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let outputs: Vec<Result<CellOutput>> = pool.install(|| {
        todo.par_iter()
            .map(|cell| {
                let spec = RunSpec {
                    method: cell.method.clone(),
                    dg: cell.dg.clone(),
                    train_domain: cfg.schedule.train_domain,
                    test_domains: cfg.schedule.test_domains.clone(),
                    seed: cell.seed,
                };
                let schedule = cfg.schedule_for(cell.seed)?;
                let ck = out_dir.join("checkpoints").join(cell.name());
                let output = run_experiment(&spec, &schedule, &domains, Some(&ck))?;
                info!("{} done in {:.1}s", cell.name(), output.wall_time_s);
                Ok(CellOutput {
                    cell: cell.name(),
                    output,
                })
            })
            .collect()
    });
    let cells = outputs.into_iter().collect::<Result<Vec<_>>>()?;

    let rows: Vec<ResultRow> = cells.iter().flat_map(|c| c.output.results.iter().flat_map(rows_of)).collect();
    let results_path = out_dir.join(RESULTS_FILE);
    write_results_csv(&results_path, &rows)?;
    let cells_path = out_dir.join("cells.json");
    let json = serde_json::to_string_pretty(&cells).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&cells_path, json).map_err(|e| Error::io(&cells_path, e))?;
    Ok(RunSummary {
        rows,
        results_path,
        manifest_path,
        cells,
    })
}

fn find_results(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_results(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == RESULTS_FILE) {
            found.push(path);
        }
    }
    Ok(())
}

/// Aggregates every `results.csv` below `input` into the cross-domain
/// table and writes it to `output`.
pub fn report(input: &Path, output: &Path) -> Result<Vec<ReportLine>> {
    let mut files = Vec::new();
    if input.is_file() {
        files.push(input.to_path_buf());
    } else {
        find_results(input, &mut files)?;
    }
    if files.is_empty() {
        return Err(Error::Config(format!("no {RESULTS_FILE} found under {}", input.display())));
    }
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_results_csv(f)?);
    }
    let table = report_table(&rows);
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_report_csv(output, &table)?;
    Ok(table)
}

/// Plain-text rendering of the table: one row per method, plugin and
/// metric, one column per test domain.
pub fn format_table(table: &[ReportLine]) -> String {
    let domains: std::collections::BTreeSet<u32> = table.iter().flat_map(|l| l.by_domain.keys().copied()).collect();
    let mut s = format!("{:<10} {:<6} {:<5} {:<24}", "method", "dg", "train", "metric");
    for d in &domains {
        s.push_str(&format!(" {:>7}", format!("d{d}")));
    }
    s.push('\n');
    for l in table {
        s.push_str(&format!("{:<10} {:<6} {:<5} {:<24}", l.method, l.dg, format!("d{}", l.train_domain), l.metric));
        for d in &domains {
            match l.by_domain.get(d) {
                Some(v) => s.push_str(&format!(" {v:>7.4}")),
                None => s.push_str(&format!(" {:>7}", "-")),
            }
        }
        s.push('\n');
    }
    s
}
