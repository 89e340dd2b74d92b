//! Two-stage hyperparameter validation on reshuffled splits of a class
//! pool: stage one tunes the learning parameters for closed-world accuracy
//! without rejection, stage two tunes the rejection parameter for OWR-H.

use std::collections::BTreeMap;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::runner::{run_experiment, Averages, RunSpec};
use crate::datagen::{build_validation_splits, Dataset, SplitTrial};
use crate::dg::DgConfig;
use crate::error::{Error, Result};
use crate::owr::{MethodConfig, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchGrid {
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub tau_grid_points: Vec<usize>,
    pub neg_weight: Vec<f64>,
    pub tau_lr: Vec<f64>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            lr: vec![0.05],
            weight_decay: vec![5e-3],
            lambda: vec![0.5, 1.0, 2.0],
            gamma: vec![0.5],
            tau_grid_points: vec![0, 16],
            neg_weight: vec![1.0, 2.0, 4.0],
            tau_lr: vec![0.5, 1.0],
        }
    }
}

impl SearchGrid {
    /// Every grid must hold at least one value.
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("lr", self.lr.len()),
            ("weight_decay", self.weight_decay.len()),
            ("lambda", self.lambda.len()),
            ("gamma", self.gamma.len()),
            ("tau_grid_points", self.tau_grid_points.len()),
            ("neg_weight", self.neg_weight.len()),
            ("tau_lr", self.tau_lr.len()),
        ];
        match sizes.iter().find(|(_, n)| *n == 0) {
            Some((name, _)) => Err(Error::Config(format!("search grid {name} is empty"))),
            None => Ok(()),
        }
    }

    /// Learning-parameter candidates in grid order, lr outermost.
    pub fn stage1(&self, base: &MethodConfig) -> Vec<MethodConfig> {
        let mut out = Vec::new();
        for &lr in &self.lr {
            for &weight_decay in &self.weight_decay {
                for &lambda in &self.lambda {
                    for &gamma in &self.gamma {
                        out.push(MethodConfig {
                            lr,
                            weight_decay,
                            lambda,
                            gamma,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }

    /// Rejection-parameter candidates for the winner's variant.
    pub fn stage2(&self, winner: &MethodConfig) -> Vec<MethodConfig> {
        match winner.variant {
            Variant::Nno => self
                .tau_grid_points
                .iter()
                .map(|&tau_grid_points| MethodConfig {
                    tau_grid_points,
                    ..winner.clone()
                })
                .collect(),
            Variant::DeepNno => self
                .neg_weight
                .iter()
                .map(|&neg_weight| MethodConfig {
                    neg_weight,
                    ..winner.clone()
                })
                .collect(),
            Variant::Bdoc => self
                .tau_lr
                .iter()
                .map(|&tau_lr| MethodConfig {
                    tau_lr,
                    ..winner.clone()
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Closed-world accuracy without rejection.
    Learning,
    /// OWR harmonic mean.
    Rejection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub config: MethodConfig,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub best: MethodConfig,
    pub stage1: Vec<Candidate>,
    pub stage2: Vec<Candidate>,
}

/// Mean step-averaged metric over every trial and cardinality variant.
pub fn validation_score(config: &MethodConfig, trials: &[SplitTrial], dataset: &Dataset, stage: Stage) -> Result<f64> {
    let domain = dataset.samples().first().map_or(0, |s| s.domain_id);
    let domains = BTreeMap::from([(domain, dataset.clone())]);
    let mut total = 0.0;
    let mut count = 0usize;
    for trial in trials {
        for schedule in trial.schedules() {
            let spec = RunSpec {
                method: config.clone(),
                dg: DgConfig::none(),
                train_domain: domain,
                test_domains: vec![domain],
                seed: trial.trial_seed,
            };
            let out = run_experiment(&spec, &schedule, &domains, None)?;
            let Averages {
                closed_world_no_reject,
                owr_h,
                ..
            } = out.results[0].averages;
            total += match stage {
                Stage::Learning => closed_world_no_reject,
                Stage::Rejection => owr_h,
            };
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn best_of(candidates: Vec<MethodConfig>, trials: &[SplitTrial], dataset: &Dataset, stage: Stage) -> Result<(usize, Vec<Candidate>)> {
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|c| validation_score(c, trials, dataset, stage))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    let ranked = candidates
        .into_iter()
        .zip(scores)
        .map(|(config, score)| Candidate { config, score })
        .collect();
    Ok((best, ranked))
}

/// Runs both stages over `classes` of `dataset`. Ties go to the earliest
/// candidate in grid order.
pub fn validate_hyperparameters(
    base: &MethodConfig,
    dataset: &Dataset,
    classes: &[u32],
    grid: &SearchGrid,
    num_trials: usize,
    seed: u64,
) -> Result<ValidationResult> {
    grid.validate()?;
    base.validate()?;
    if num_trials == 0 {
        return Err(Error::Config("validation needs at least one trial".into()));
    }
    let trials = build_validation_splits(classes, num_trials, seed)?;

    let (i1, stage1) = best_of(grid.stage1(base), &trials, dataset, Stage::Learning)?;
    let winner = stage1[i1].config.clone();
    info!("stage 1 winner: lr {} wd {} lambda {} gamma {}", winner.lr, winner.weight_decay, winner.lambda, winner.gamma);
    let (i2, stage2) = best_of(grid.stage2(&winner), &trials, dataset, Stage::Rejection)?;
    Ok(ValidationResult {
        best: stage2[i2].config.clone(),
        stage1,
        stage2,
    })
}
