//! Incremental experiment runner.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{closed_world_accuracy, open_set_accuracy, owr_harmonic};
use crate::datagen::{Dataset, EpisodeSchedule, Sample};
use crate::dg::{DgConfig, DgPlugin};
use crate::error::{Error, Result};
use crate::owr::{latest_checkpoint, load_checkpoint, save_checkpoint, MethodConfig, OwrModel, Prediction};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step: usize,
    pub closed_world_no_reject: f64,
    pub closed_world_with_reject: f64,
    pub open_set_acc: f64,
    pub owr_h: f64,
}

impl StepResult {
    /// Metrics for already computed predictions. `no_reject` and
    /// `with_reject` cover the known-class samples with labels `labels`;
    /// `unknown` covers the unknown-class samples.
    pub fn from_predictions(
        step: usize,
        no_reject: &[Prediction],
        with_reject: &[Prediction],
        labels: &[u32],
        unknown: &[Prediction],
    ) -> Result<Self> {
        let cw = closed_world_accuracy(no_reject, labels, false)?;
        let cwr = closed_world_accuracy(with_reject, labels, true)?;
        let osa = open_set_accuracy(unknown)?;
        Ok(StepResult {
            step,
            closed_world_no_reject: cw,
            closed_world_with_reject: cwr,
            open_set_acc: osa,
            owr_h: owr_harmonic(cwr, osa),
        })
    }
}

/// Identifies one run: method, plugin, domains, seed and a hash of every
/// hyperparameter.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub method: String,
    pub dg: String,
    pub train_domain: u32,
    pub test_domain: u32,
    pub seed: u64,
    pub hyper_hash: String,
}

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}-{}-d{}-d{}-s{}-{}",
            self.method, self.dg, self.train_domain, self.test_domain, self.seed, self.hyper_hash
        )
    }
}

/// First 16 hex digits of the SHA-256 of the JSON form of both configs.
pub fn hyper_hash(method: &MethodConfig, dg: &DgConfig) -> String {
    let text = serde_json::to_string(&(method, dg)).expect("configs serialize");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub closed_world_no_reject: f64,
    pub closed_world_with_reject: f64,
    pub open_set_acc: f64,
    pub owr_h: f64,
}

impl Averages {
    pub fn of(steps: &[StepResult]) -> Self {
        let n = steps.len().max(1) as f64;
        let sum = |f: fn(&StepResult) -> f64| steps.iter().map(f).sum::<f64>() / n;
        Averages {
            closed_world_no_reject: sum(|s| s.closed_world_no_reject),
            closed_world_with_reject: sum(|s| s.closed_world_with_reject),
            open_set_acc: sum(|s| s.open_set_acc),
            owr_h: sum(|s| s.owr_h),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub fingerprint: Fingerprint,
    pub steps: Vec<StepResult>,
    pub averages: Averages,
}

/// Everything a run produces besides the per-domain results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub results: Vec<RunResult>,
    /// Final augmentation set, one rendered chain per entry.
    pub transform_pool: Vec<String>,
    pub wall_time_s: f64,
}

/// One (method, plugin, seed) cell trained on one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub method: MethodConfig,
    pub dg: DgConfig,
    pub train_domain: u32,
    pub test_domains: Vec<u32>,
    pub seed: u64,
}

impl RunSpec {
    pub fn fingerprint(&self, test_domain: u32) -> Fingerprint {
        Fingerprint {
            method: self.method.variant.name().to_string(),
            dg: self.dg.method.name().to_string(),
            train_domain: self.train_domain,
            test_domain,
            seed: self.seed,
            hyper_hash: hyper_hash(&self.method, &self.dg),
        }
    }
}

/// Train and test samples of one domain under the instance split.
pub struct DomainSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn split_domain(ds: &Dataset) -> DomainSplit {
    let (train, test) = ds.instance_split();
    DomainSplit {
        train: train.into_iter().map(|i| ds.samples()[i].clone()).collect(),
        test: test.into_iter().map(|i| ds.samples()[i].clone()).collect(),
    }
}

fn check_classes(schedule: &EpisodeSchedule, domain: u32, split: &DomainSplit) -> Result<()> {
    let train: BTreeSet<u32> = split.train.iter().map(|s| s.class_id).collect();
    let test: BTreeSet<u32> = split.test.iter().map(|s| s.class_id).collect();
    for c in schedule.known_classes().iter().chain(&schedule.unknown_classes) {
        if !test.contains(c) || !train.contains(c) {
            return Err(Error::Config(format!("class {c} is missing from domain {domain}")));
        }
    }
    Ok(())
}

/// Metrics of `model` on a domain's held-out instances after a step.
pub fn evaluate_step(model: &OwrModel, step: usize, test: &[Sample], unknown: &BTreeSet<u32>) -> Result<StepResult> {
    let known: Vec<Sample> = test.iter().filter(|s| model.known.contains(&s.class_id)).cloned().collect();
    let unk: Vec<Sample> = test.iter().filter(|s| unknown.contains(&s.class_id)).cloned().collect();
    let labels: Vec<u32> = known.iter().map(|s| s.class_id).collect();
    let dim = model.feature_dim();
    let zk = model.features(&known)?;
    let mut no_reject = Vec::with_capacity(known.len());
    let mut with_reject = Vec::with_capacity(known.len());
    for row in zk.chunks_exact(dim) {
        no_reject.push(model.classify_features(row, false)?.prediction);
        with_reject.push(model.classify_features(row, true)?.prediction);
    }
    let unknown_preds = model.predict(&unk, true)?;
    StepResult::from_predictions(step, &no_reject, &with_reject, &labels, &unknown_preds)
}

fn results_path(dir: &Path, t: usize) -> std::path::PathBuf {
    dir.join(format!("step_{t}.results.json"))
}

/// Trains through every step of `schedule` on the train domain, evaluating
/// on each test domain after every step. With `checkpoint_dir`, state is
/// saved after each step and an interrupted run resumes from the latest
/// complete checkpoint.
pub fn run_experiment(
    spec: &RunSpec,
    schedule: &EpisodeSchedule,
    domains: &BTreeMap<u32, Dataset>,
    checkpoint_dir: Option<&Path>,
) -> Result<RunOutput> {
    let start = Instant::now();
    schedule.validate()?;
    spec.method.validate()?;
    let mut splits = BTreeMap::new();
    for &d in std::iter::once(&spec.train_domain).chain(&spec.test_domains) {
        let ds = domains
            .get(&d)
            .ok_or_else(|| Error::Config(format!("no dataset for domain {d}")))?;
        let split = split_domain(ds);
        check_classes(schedule, d, &split)?;
        splits.insert(d, split);
    }
    let shape = domains[&spec.train_domain].shape();
    let unknown: BTreeSet<u32> = schedule.unknown_classes.iter().copied().collect();

    let mut model = OwrModel::new(spec.method.clone(), shape, spec.seed)?;
    let mut plugin = DgPlugin::new(spec.dg.clone(), model.feature_dim(), spec.seed)?;
    let mut per_domain: BTreeMap<u32, Vec<StepResult>> = spec.test_domains.iter().map(|&d| (d, Vec::new())).collect();

    if let Some(dir) = checkpoint_dir {
        if let Some(t) = latest_checkpoint(dir).filter(|&t| t < schedule.num_steps()) {
            let ck = load_checkpoint(dir, t)?;
            if ck.model.config != spec.method || ck.model.seed != spec.seed {
                return Err(Error::Config(format!(
                    "{}: checkpoint belongs to a different run configuration",
                    dir.display()
                )));
            }
            model = ck.model;
            if let Some(p) = ck.plugin {
                plugin = p;
            }
            for s in 0..=t {
                let p = results_path(dir, s);
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                let rows: BTreeMap<u32, StepResult> = serde_json::from_str(&text).map_err(|e| Error::Parse {
                    source_name: p.display().to_string(),
                    offset: 0,
                    message: e.to_string(),
                })?;
                for (d, r) in rows {
                    per_domain.entry(d).or_default().push(r);
                }
            }
            info!("resuming {} after step {t}", spec.fingerprint(spec.train_domain));
        }
    }

    let train = &splits[&spec.train_domain].train;
    for (t, classes) in schedule.steps().enumerate().skip(model.step) {
        let step_train: Vec<Sample> = train.iter().filter(|s| classes.contains(&s.class_id)).cloned().collect();
        model.incremental_step(classes, &step_train, Some(&mut plugin))?;
        let mut rows = BTreeMap::new();
        for &d in &spec.test_domains {
            let r = evaluate_step(&model, t, &splits[&d].test, &unknown)?;
            per_domain.get_mut(&d).unwrap().push(r);
            rows.insert(d, r);
        }
        if let Some(dir) = checkpoint_dir {
            save_checkpoint(dir, &model, Some(&plugin))?;
            let p = results_path(dir, t);
            fs::write(&p, serde_json::to_string(&rows).unwrap()).map_err(|e| Error::io(&p, e))?;
        }
    }

    let results = per_domain
        .into_iter()
        .map(|(d, steps)| RunResult {
            fingerprint: spec.fingerprint(d),
            averages: Averages::of(&steps),
            steps,
        })
        .collect();
    Ok(RunOutput {
        results,
        transform_pool: plugin.pool.transforms.iter().map(ToString::to_string).collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Trains a model through `schedule` without evaluating, for callers that
/// inspect the final model directly.
pub fn train_model(
    method: &MethodConfig,
    dg: &DgConfig,
    schedule: &EpisodeSchedule,
    train: &[Sample],
    shape: crate::datagen::ImageShape,
    seed: u64,
) -> Result<(OwrModel, DgPlugin)> {
    let mut model = OwrModel::new(method.clone(), shape, seed)?;
    let mut plugin = DgPlugin::new(dg.clone(), model.feature_dim(), seed)?;
    for classes in schedule.steps() {
        let step_train: Vec<Sample> = train.iter().filter(|s| classes.contains(&s.class_id)).cloned().collect();
        model.incremental_step(classes, &step_train, Some(&mut plugin))?;
    }
    Ok((model, plugin))
}
