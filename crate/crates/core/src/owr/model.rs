//! The open-world model and its per-step incremental update.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::exemplars::{select_exemplars, ExemplarMemory};
use super::losses::{
    bce_loss, bdoc_scores, cross_entropy, deepnno_scores, distillation_loss, label_indices, ncm_logits, one_hot,
    snnl_loss,
};
use super::scores::{classify, euclidean, Classification, Prediction};
use super::thresholds::{bdoc_learn_thresholds, estimate_nno_threshold, ClassScores, HeldOutKnown, ThresholdTracker};
use super::{ClassModel, MethodConfig, SpreadPooling, Variant};
use crate::datagen::{to_matrix, ImageShape, Sample};
use crate::dg::{
    random_augment, rr_aux_loss, rr_build_batch, rsda_augment_batch, rsda_evolve, sc_mask, DgMethod, DgPlugin,
    ScoreFn,
};
use crate::error::{Error, Result};
use crate::numerics::{clip_grad_norm, rng, sgd_step, Mlp, MlpSpec, Tape, Var};

/// Lower bound of the B-DOC feature spread.
pub const MIN_SPREAD: f64 = 1e-6;

/// Extractor, frozen previous extractor, class statistics and memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OwrModel {
    pub config: MethodConfig,
    pub shape: ImageShape,
    pub extractor: Mlp,
    /// Snapshot taken at the end of the last completed step.
    pub previous: Option<Mlp>,
    pub classes: ClassModel,
    pub known: BTreeSet<u32>,
    /// Index of the next step; equals the number of completed steps.
    pub step: usize,
    pub memory: ExemplarMemory,
    /// Held-out samples per class used for threshold estimation.
    pub reserved: BTreeMap<u32, Vec<Sample>>,
    pub seed: u64,
}

/// Summary of one completed step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub classes: Vec<u32>,
    pub epochs: usize,
    pub iterations: usize,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub reserved: usize,
    pub exemplars: usize,
}

#[derive(Default)]
struct SpreadAccumulator {
    count: f64,
    mean: f64,
    m2: f64,
}

impl SpreadAccumulator {
    fn push(&mut self, v: f64) {
        self.count += 1.0;
        let d = v - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (v - self.mean);
    }

    fn push_features(&mut self, z: &[f64], dim: usize, pooling: SpreadPooling) {
        match pooling {
            SpreadPooling::Component => z.iter().for_each(|&v| self.push(v)),
            SpreadPooling::SampleNorm => z
                .chunks_exact(dim)
                .for_each(|row| self.push(row.iter().map(|v| v * v).sum::<f64>().sqrt())),
        }
    }

    fn std(&self) -> f64 {
        if self.count == 0.0 {
            return 1.0;
        }
        (self.m2 / self.count).sqrt().max(MIN_SPREAD)
    }
}

/// Network input: pixels shifted to be centered on zero.
pub fn model_input(samples: &[Sample]) -> Vec<f64> {
    to_matrix(samples).into_iter().map(|p| p - 0.5).collect()
}

impl OwrModel {
    pub fn new(config: MethodConfig, shape: ImageShape, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![shape.len()];
        widths.extend(&config.hidden);
        widths.push(config.feature_dim);
        let extractor = Mlp::new(&MlpSpec::new(widths, rng::derive_seed(seed, "extractor", 0)))?;
        Ok(OwrModel {
            memory: ExemplarMemory::new(config.exemplars_per_class),
            config,
            shape,
            extractor,
            previous: None,
            classes: ClassModel::default(),
            known: BTreeSet::new(),
            step: 0,
            reserved: BTreeMap::new(),
            seed,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.feature_dim()
    }

    /// Features of `samples` under the current extractor, row-major.
    pub fn features(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        self.extractor.infer(&model_input(samples), samples.len())
    }

    pub fn classify_features(&self, z: &[f64], reject: bool) -> Result<Classification> {
        classify(self.variant(), &self.classes, z, reject)
    }

    pub fn predict(&self, samples: &[Sample], reject: bool) -> Result<Vec<Prediction>> {
        let z = self.features(samples)?;
        z.chunks_exact(self.feature_dim())
            .map(|row| Ok(self.classify_features(row, reject)?.prediction))
            .collect()
    }

    /// Closed-world accuracy without rejection.
    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Contract("accuracy of an empty batch".into()));
        }
        let preds = self.predict(samples, false)?;
        let hits = preds
            .iter()
            .zip(samples)
            .filter(|(p, s)| **p == Prediction::Known(s.class_id))
            .count();
        Ok(hits as f64 / samples.len() as f64)
    }

    /// Learns the classes in `classes` from `train` and updates every
    /// piece of state: extractor, centroids, thresholds, memory, known set.
    pub fn incremental_step(
        &mut self,
        classes: &[u32],
        train: &[Sample],
        mut plugin: Option<&mut DgPlugin>,
    ) -> Result<StepReport> {
        let step_classes: BTreeSet<u32> = classes.iter().copied().collect();
        if step_classes.is_empty() {
            return Err(Error::Contract("a step needs at least one class".into()));
        }
        if let Some(c) = step_classes.intersection(&self.known).next() {
            return Err(Error::Contract(format!("class {c} was already learned in an earlier step")));
        }
        if let Some(s) = train.iter().find(|s| !step_classes.contains(&s.class_id)) {
            return Err(Error::Contract(format!(
                "training sample of class {} outside the step classes {classes:?}",
                s.class_id
            )));
        }
        for c in &step_classes {
            if !train.iter().any(|s| s.class_id == *c) {
                return Err(Error::Config(format!("step class {c} has no training samples")));
            }
        }
        if let Some(s) = train.iter().find(|s| s.pixels.len() != self.shape.len()) {
            return Err(Error::dimension("training image", self.shape.len(), s.pixels.len()));
        }

        let t = self.step;
        let step_seed = rng::derive_seed(self.seed, "step", t as u64);
        let (fit, reserved) = self.split_reserve(&step_classes, train, step_seed);
        let mut report = StepReport {
            step: t,
            classes: step_classes.iter().copied().collect(),
            reserved: reserved.values().map(Vec::len).sum(),
            ..StepReport::default()
        };
        self.reserved.extend(reserved);

        let mut training: Vec<Sample> = fit.clone();
        training.extend(self.memory.samples().cloned());

        let trains_extractor = self.variant() != Variant::Nno || t == 0;
        if trains_extractor {
            let epochs = if t == 0 {
                self.config.epochs_base
            } else {
                self.config.epochs_incremental
            };
            self.init_step_centroids(&training, &step_classes)?;
            report.epochs = epochs;
            self.train_epochs(&training, epochs, step_seed, &mut plugin, &mut report)?;
        }

        self.refresh_centroids(&fit)?;
        self.known.extend(&step_classes);
        match self.variant() {
            Variant::Nno => self.estimate_nno_threshold()?,
            Variant::DeepNno => {}
            Variant::Bdoc => {
                let z = self.features(&training)?;
                let mut acc = SpreadAccumulator::default();
                acc.push_features(&z, self.feature_dim(), self.config.spread_pooling);
                self.classes.feature_std = acc.std();
                self.learn_bdoc_thresholds(step_seed)?;
            }
        }
        self.refresh_memory(&fit, &step_classes)?;
        report.exemplars = self.memory.len();
        self.previous = Some(self.extractor.clone());
        self.step += 1;
        Ok(report)
    }

    /// Holds out a per-class share of the step's samples for thresholds.
    fn split_reserve(
        &self,
        classes: &BTreeSet<u32>,
        train: &[Sample],
        step_seed: u64,
    ) -> (Vec<Sample>, BTreeMap<u32, Vec<Sample>>) {
        let frac = self.config.reserve_fraction;
        if self.variant() == Variant::DeepNno || frac == 0.0 {
            return (train.to_vec(), BTreeMap::new());
        }
        let mut fit = Vec::with_capacity(train.len());
        let mut reserved = BTreeMap::new();
        for &c in classes {
            let mut idx: Vec<usize> = (0..train.len()).filter(|&i| train[i].class_id == c).collect();
            idx.shuffle(&mut rng::stream(step_seed, "reserve", c as u64));
            let n = idx.len();
            let k = if n < 2 {
                0
            } else {
                ((frac * n as f64).round() as usize).clamp(1, n - 1)
            };
            let (held, kept) = idx.split_at(k);
            let mut kept = kept.to_vec();
            kept.sort_unstable();
            let mut held = held.to_vec();
            held.sort_unstable();
            fit.extend(kept.iter().map(|&i| train[i].clone()));
            if !held.is_empty() {
                reserved.insert(c, held.iter().map(|&i| train[i].clone()).collect());
            }
        }
        (fit, reserved)
    }

    /// Centroids of the step's classes start at their current-feature means.
    fn init_step_centroids(&mut self, training: &[Sample], step_classes: &BTreeSet<u32>) -> Result<()> {
        let new: Vec<Sample> = training
            .iter()
            .filter(|s| step_classes.contains(&s.class_id))
            .cloned()
            .collect();
        let z = self.features(&new)?;
        let labels: Vec<u32> = new.iter().map(|s| s.class_id).collect();
        self.classes.reset_centroids(&z, &labels)?;
        if self.variant() == Variant::Bdoc {
            let zall = self.features(training)?;
            let mut acc = SpreadAccumulator::default();
            acc.push_features(&zall, self.feature_dim(), self.config.spread_pooling);
            self.classes.feature_std = acc.std();
        }
        Ok(())
    }

    fn train_epochs(
        &mut self,
        training: &[Sample],
        epochs: usize,
        step_seed: u64,
        plugin: &mut Option<&mut DgPlugin>,
        report: &mut StepReport,
    ) -> Result<()> {
        let cfg = self.config.clone();
        let batch_size = cfg.batch_size.min(training.len()).max(1);
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..training.len()).collect();
            order.shuffle(&mut rng::stream(step_seed, "epoch", epoch as u64));
            let mut tracker = ThresholdTracker::default();
            let mut spread = SpreadAccumulator::default();
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for (b, chunk) in order.chunks(batch_size).enumerate() {
                if chunk.len() < 2 {
                    continue;
                }
                let batch: Vec<Sample> = chunk.iter().map(|&i| training[i].clone()).collect();
                let batch_seed = rng::derive_seed(step_seed, "batch", ((epoch as u64) << 32) | b as u64);
                let loss = self.train_batch(batch, batch_seed, plugin.as_deref_mut(), &mut tracker, &mut spread)?;
                loss_sum += loss;
                batches += 1;
                report.iterations += 1;
            }
            let mean = if batches > 0 { loss_sum / batches as f64 } else { 0.0 };
            debug!("step {} epoch {epoch}: loss {mean:.5}", self.step);
            report.epoch_losses.push(mean);
        }
        Ok(())
    }

    /// One optimization step on a batch. Returns the loss value.
    fn train_batch(
        &mut self,
        batch: Vec<Sample>,
        batch_seed: u64,
        mut plugin: Option<&mut DgPlugin>,
        tracker: &mut ThresholdTracker,
        spread: &mut SpreadAccumulator,
    ) -> Result<f64> {
        let variant = self.variant();
        let cfg = self.config.clone();
        let dim = self.feature_dim();
        let shape = self.shape;
        let method = plugin.as_ref().map_or(DgMethod::None, |p| p.method());

        let clean = batch;
        let mut batch = clean.clone();
        if let (DgMethod::Rsda, Some(p)) = (method, plugin.as_deref_mut()) {
            let freq = p.config.rsda.update_frequency as u64;
            if freq > 0 && p.iterations > 0 && p.iterations % freq == 0 {
                let evolve_seed = rng::derive_seed(batch_seed, "rsda", p.iterations);
                let added = rsda_evolve(&mut p.pool, &clean, shape, &mut |s| self.accuracy(s), evolve_seed)?;
                debug!(
                    "rsda added {}",
                    added.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
                );
            }
            batch = rsda_augment_batch(&p.pool, &batch, shape, rng::derive_seed(batch_seed, "rsda-batch", 0));
        }

        let labels: Vec<u32> = batch.iter().map(|s| s.class_id).collect();
        let n = labels.len();
        let x = model_input(&batch);
        let mut tape = Tape::new();
        let params = self.extractor.bind(&mut tape);
        let xv = tape.constant(vec![n, shape.len()], x.clone());
        let z = self.extractor.forward(&mut tape, &params, xv)?;
        let zvals = tape.value(z).to_vec();
        // Centroids, spread and thresholds follow the untransformed data.
        let zclean = if method == DgMethod::Rsda && batch != clean {
            self.extractor.infer(&model_input(&clean), n)?
        } else {
            zvals.clone()
        };

        self.classes.ema_update(&zclean, &labels, cfg.centroid_momentum);
        if variant == Variant::Bdoc {
            spread.push_features(&zclean, dim, cfg.spread_pooling);
            self.classes.feature_std = spread.std();
        }
        let class_list = self.classes.classes();
        let cm = self.classes.centroid_matrix();
        let idx = label_indices(&labels, &class_list)?;
        let k = class_list.len();
        let phi_spread = self.classes.feature_std;

        // Scores the online threshold sees: the training forward, masked
        // under SC, on clean inputs otherwise.
        let mut tracked = zclean;
        let semantic_input = match (method, plugin.as_deref()) {
            (DgMethod::Sc, Some(p)) if p.config.sc.batch_ratio > 0.0 => {
                let score_fn = sc_score_fn(variant, &class_list, &cm, phi_spread);
                let masked = sc_mask(&zvals, dim, &labels, &*score_fn, &p.config.sc, rng::derive_seed(batch_seed, "sc", 0))?;
                if masked.selected.is_empty() {
                    z
                } else {
                    tracked = masked.masked;
                    let m = tape.constant(vec![n, dim], masked.mask);
                    tape.mul(z, m)
                }
            }
            _ => z,
        };
        let mut total = semantic_loss(&mut tape, variant, semantic_input, &cm, &idx, k, phi_spread);

        let mut head_params = None;
        if let (DgMethod::Rr, Some(head)) = (method, plugin.as_deref().and_then(|p| p.head.as_ref())) {
            let rotated = rr_build_batch(&batch, shape, rng::derive_seed(batch_seed, "rr", 0))?;
            let (rot_samples, theta): (Vec<Sample>, Vec<usize>) = rotated.into_iter().unzip();
            let xr = tape.constant(vec![n, shape.len()], model_input(&rot_samples));
            let zr = self.extractor.forward(&mut tape, &params, xr)?;
            let rot_semantic = semantic_loss(&mut tape, variant, zr, &cm, &idx, k, phi_spread);
            let both = tape.add(total, rot_semantic);
            total = tape.scale(both, 0.5);
            let hp = head.mlp.bind(&mut tape);
            let aux = rr_aux_loss(&mut tape, &head.mlp, &hp, z, zr, &theta)?;
            let aux = tape.scale(aux, head.xi);
            total = tape.add(total, aux);
            head_params = Some(hp);
        }
        if variant == Variant::Bdoc && cfg.gamma > 0.0 {
            let s = snnl_loss(&mut tape, z, &labels, phi_spread)?;
            let s = tape.scale(s, cfg.gamma);
            total = tape.add(total, s);
        }
        if let (true, Some(prev)) = (cfg.lambda > 0.0, self.previous.as_ref()) {
            let z_old = prev.infer(&x, n)?;
            let ds = distillation_loss(&mut tape, z, &z_old)?;
            let ds = tape.scale(ds, cfg.lambda);
            total = tape.add(total, ds);
        }

        let loss = tape.value(total)[0];
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss became {loss}")));
        }
        let grads = tape.backward(total)?;
        self.extractor.accumulate_grads(&grads, &params)?;
        clip_grad_norm(&mut self.extractor.params_mut(), cfg.grad_clip)?;
        sgd_step(&mut self.extractor.params_mut(), cfg.lr, cfg.weight_decay)?;
        self.extractor.zero_grad();
        if let (Some(hp), Some(head)) = (head_params, plugin.as_deref_mut().and_then(|p| p.head.as_mut())) {
            head.mlp.accumulate_grads(&grads, &hp)?;
            clip_grad_norm(&mut head.mlp.params_mut(), cfg.grad_clip)?;
            sgd_step(&mut head.mlp.params_mut(), cfg.lr, cfg.weight_decay)?;
            head.mlp.zero_grad();
        }

        if variant == Variant::DeepNno {
            let mut top = Vec::with_capacity(n);
            for (row, &y) in tracked.chunks_exact(dim).zip(&labels) {
                let c = classify(Variant::DeepNno, &self.classes, row, false)?;
                let best = c.scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
                top.push((best, c.prediction == Prediction::Known(y)));
            }
            self.classes.global_threshold = tracker.update(&top, cfg.neg_weight, self.classes.global_threshold);
        }
        if let Some(p) = plugin {
            p.iterations += 1;
        }
        Ok(loss)
    }

    /// Exact centroids: step classes from the fitted samples, past classes
    /// from their exemplars when the extractor has moved.
    fn refresh_centroids(&mut self, fit: &[Sample]) -> Result<()> {
        let z = self.features(fit)?;
        let labels: Vec<u32> = fit.iter().map(|s| s.class_id).collect();
        self.classes.reset_centroids(&z, &labels)?;
        if self.variant() != Variant::Nno && !self.memory.is_empty() {
            let ex: Vec<Sample> = self.memory.samples().cloned().collect();
            let zex = self.features(&ex)?;
            let lex: Vec<u32> = ex.iter().map(|s| s.class_id).collect();
            self.classes.reset_centroids(&zex, &lex)?;
        }
        Ok(())
    }

    fn reserved_samples(&self) -> Vec<Sample> {
        self.reserved.values().flatten().cloned().collect()
    }

    /// Grid search on the reserved samples. Each sample is a known sample
    /// of its own class and, with its class's centroid left out, a
    /// pseudo-unknown.
    fn estimate_nno_threshold(&mut self) -> Result<()> {
        let mut held = self.reserved_samples();
        if held.is_empty() {
            warn!("no reserved samples; estimating the NNO threshold on exemplars");
            held = self.memory.samples().cloned().collect();
        }
        if held.is_empty() {
            return Err(Error::Config("NNO threshold estimation needs held-out samples".into()));
        }
        let z = self.features(&held)?;
        let mut known = Vec::with_capacity(held.len());
        let mut unknown = Vec::new();
        for (row, s) in z.chunks_exact(self.feature_dim()).zip(&held) {
            let mut best = (f64::INFINITY, u32::MAX);
            let mut best_other = f64::INFINITY;
            for (&c, mu) in &self.classes.centroids {
                let d = euclidean(row, mu);
                if d < best.0 {
                    best = (d, c);
                }
                if c != s.class_id {
                    best_other = best_other.min(d);
                }
            }
            known.push(HeldOutKnown {
                distance: best.0,
                correct: best.1 == s.class_id,
            });
            if best_other.is_finite() {
                unknown.push(best_other);
            }
        }
        let tau = if unknown.is_empty() {
            warn!("a single known class gives no pseudo-unknowns; accepting every held-out sample");
            let max = known.iter().map(|k| k.distance).fold(0.0, f64::max);
            if max > 0.0 {
                max * (1.0 + 1e-9)
            } else {
                1.0
            }
        } else {
            estimate_nno_threshold(&known, &unknown, self.config.tau_grid_points)?
        };
        self.classes.global_threshold = tau.max(f64::MIN_POSITIVE);
        Ok(())
    }

    fn learn_bdoc_thresholds(&mut self, step_seed: u64) -> Result<()> {
        let held: Vec<Sample> = self
            .reserved_samples()
            .iter()
            .enumerate()
            .map(|(i, s)| random_augment(s, self.shape, rng::derive_seed(step_seed, "reserve-aug", i as u64), self.config.reserve_augment_strength))
            .collect();
        let mut scores: BTreeMap<u32, ClassScores> =
            self.known.iter().map(|&c| (c, ClassScores::default())).collect();
        if !held.is_empty() {
            let z = self.features(&held)?;
            let spread = self.classes.feature_std;
            for (row, s) in z.chunks_exact(self.feature_dim()).zip(&held) {
                for (&c, mu) in &self.classes.centroids {
                    let phi = super::scores::sq_euclidean(row, mu) / spread;
                    let e = scores.entry(c).or_default();
                    if c == s.class_id {
                        e.own.push(phi);
                    } else {
                        e.other.push(phi);
                    }
                }
            }
        }
        self.classes.class_thresholds = bdoc_learn_thresholds(&scores, self.config.tau_lr, self.config.tau_epochs)?;
        Ok(())
    }

    fn refresh_memory(&mut self, fit: &[Sample], step_classes: &BTreeSet<u32>) -> Result<()> {
        if self.memory.capacity == 0 {
            return Ok(());
        }
        let dim = self.feature_dim();
        for &c in step_classes {
            let members: Vec<Sample> = fit.iter().filter(|s| s.class_id == c).cloned().collect();
            let z = self.features(&members)?;
            let keep = select_exemplars(&z, dim, &self.classes.centroids[&c], self.memory.capacity);
            self.memory.store(c, keep.into_iter().map(|i| members[i].clone()).collect());
        }
        Ok(())
    }
}

fn semantic_loss(tape: &mut Tape, variant: Variant, z: Var, cm: &[f64], idx: &[usize], k: usize, spread: f64) -> Var {
    match variant {
        Variant::Nno => {
            let logits = ncm_logits(tape, z, cm);
            cross_entropy(tape, logits, idx)
        }
        Variant::DeepNno => {
            let scores = deepnno_scores(tape, z, cm);
            bce_loss(tape, scores, &one_hot(idx, k))
        }
        Variant::Bdoc => {
            let phi = bdoc_scores(tape, z, cm, spread);
            let logits = tape.scale(phi, -1.0);
            cross_entropy(tape, logits, idx)
        }
    }
}

/// Ground-truth score used to rank feature entries for masking.
fn sc_score_fn<'a>(variant: Variant, classes: &'a [u32], cm: &'a [f64], spread: f64) -> Box<ScoreFn<'a>> {
    Box::new(move |tape: &mut Tape, z: Var, y: u32| -> Result<Var> {
        let j = label_indices(&[y], classes)?[0];
        let k = classes.len();
        let pick = one_hot(&[j], k);
        Ok(match variant {
            Variant::DeepNno => {
                let s = deepnno_scores(tape, z, cm);
                tape.weighted_sum(s, pick)
            }
            Variant::Bdoc | Variant::Nno => {
                let logits = if variant == Variant::Bdoc {
                    let phi = bdoc_scores(tape, z, cm, spread);
                    tape.scale(phi, -1.0)
                } else {
                    ncm_logits(tape, z, cm)
                };
                let lp = tape.log_softmax_rows(logits);
                let p = tape.exp(lp);
                tape.weighted_sum(p, pick)
            }
        })
    })
}
