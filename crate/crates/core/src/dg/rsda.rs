//! Evolutionary search for the transformations that currently hurt the
//! model most.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::transforms::{BasicTransform, ComposedTransform, MAX_CHAIN};
use crate::datagen::{ImageShape, Sample};
use crate::error::{Error, Result};
use crate::numerics::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RsdaConfig {
    /// Training iterations between evolutions; 0 disables evolution.
    pub update_frequency: usize,
    pub population: usize,
    /// Evaluated generations, counting the initial random population.
    pub generations: usize,
    /// Fittest candidates appended per evolution.
    pub append: usize,
    /// Magnitude jitter as a fraction of each kind's range.
    pub mutation_scale: f32,
    /// Probability that a training sample is left untransformed.
    pub clean_fraction: f64,
}

impl Default for RsdaConfig {
    fn default() -> Self {
        RsdaConfig {
            update_frequency: 20,
            population: 8,
            generations: 3,
            append: 2,
            mutation_scale: 0.1,
            clean_fraction: 0.5,
        }
    }
}

impl RsdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.generations == 0 || self.append == 0 {
            return Err(Error::Config(
                "rsda needs population >= 2, generations >= 1 and append >= 1".into(),
            ));
        }
        if self.append > self.population {
            return Err(Error::Config(format!(
                "rsda.append ({}) exceeds the population ({})",
                self.append, self.population
            )));
        }
        if !(0.0..=1.0).contains(&self.clean_fraction) {
            return Err(Error::Config("rsda.clean_fraction must be in [0, 1]".into()));
        }
        if !(self.mutation_scale >= 0.0 && self.mutation_scale.is_finite()) {
            return Err(Error::Config("rsda.mutation_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// The augmentation set. Starts as `{identity}` and only grows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformPool {
    pub config: RsdaConfig,
    pub transforms: Vec<ComposedTransform>,
}

impl TransformPool {
    pub fn new(config: RsdaConfig) -> Self {
        TransformPool {
            config,
            transforms: vec![ComposedTransform::identity()],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.transforms.iter().all(ComposedTransform::is_identity)
    }
}

/// Transforms each sample with one member of the pool drawn uniformly,
/// except for a `clean_fraction` share left as is.
pub fn rsda_augment_batch(pool: &TransformPool, batch: &[Sample], shape: ImageShape, seed: u64) -> Vec<Sample> {
    if pool.is_identity() {
        return batch.to_vec();
    }
    batch
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = rng::stream(seed, "rsda-pick", i as u64);
            if r.random_bool(pool.config.clean_fraction) {
                return s.clone();
            }
            let pick = r.random_range(0..pool.transforms.len());
            pool.transforms[pick].apply(s, shape, rng::derive_seed(seed, "rsda-apply", i as u64))
        })
        .collect()
}

fn random_chain(r: &mut rng::Rng) -> ComposedTransform {
    let len = r.random_range(1..=MAX_CHAIN);
    ComposedTransform {
        chain: (0..len).map(|_| BasicTransform::random(r)).collect(),
    }
}

fn mutate(parent: &ComposedTransform, scale: f32, r: &mut rng::Rng) -> ComposedTransform {
    let mut child = parent.clone();
    for t in &mut child.chain {
        let (lo, hi) = t.kind.range();
        if hi > lo && scale > 0.0 {
            let jitter = Normal::new(0.0, (scale * (hi - lo)) as f64).unwrap().sample(r) as f32;
            t.magnitude = (t.magnitude + jitter).clamp(lo, hi);
        }
    }
    if r.random_bool(0.5) {
        let n = child.chain.len();
        match r.random_range(0..3) {
            0 if n < MAX_CHAIN => child.chain.insert(r.random_range(0..=n), BasicTransform::random(r)),
            1 if n > 1 => {
                child.chain.remove(r.random_range(0..n));
            }
            _ if n > 0 => child.chain[r.random_range(0..n)] = BasicTransform::random(r),
            _ => child.chain.push(BasicTransform::random(r)),
        }
    }
    child
}

fn probe_accuracy(
    candidate: &ComposedTransform,
    probe: &[Sample],
    shape: ImageShape,
    accuracy: &mut dyn FnMut(&[Sample]) -> Result<f64>,
    seed: u64,
) -> Result<f64> {
    let transformed: Vec<Sample> = probe
        .iter()
        .enumerate()
        .map(|(i, s)| candidate.apply(s, shape, rng::derive_seed(seed, "rsda-probe", i as u64)))
        .collect();
    accuracy(&transformed)
}

/// Evolves `initial` and returns the final population ranked fittest
/// first. Fitness is low probe accuracy; ties keep earlier candidates.
pub fn evolve_population(
    initial: Vec<ComposedTransform>,
    config: &RsdaConfig,
    probe: &[Sample],
    shape: ImageShape,
    accuracy: &mut dyn FnMut(&[Sample]) -> Result<f64>,
    seed: u64,
) -> Result<Vec<(ComposedTransform, f64)>> {
    if probe.is_empty() {
        return Err(Error::Contract("rsda needs a non-empty probe batch".into()));
    }
    let mut r = rng::stream(seed, "rsda-evolve", 0);
    let size = initial.len();
    let mut ranked = Vec::with_capacity(size);
    for c in initial {
        let acc = probe_accuracy(&c, probe, shape, accuracy, seed)?;
        ranked.push((c, acc));
    }
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    for _ in 1..config.generations {
        let mut children = Vec::with_capacity(size);
        for _ in 0..size {
            let a = r.random_range(0..ranked.len());
            let b = r.random_range(0..ranked.len());
            let winner = if ranked[a].1 <= ranked[b].1 { a } else { b };
            let child = mutate(&ranked[winner].0, config.mutation_scale, &mut r);
            let acc = probe_accuracy(&child, probe, shape, accuracy, seed)?;
            children.push((child, acc));
        }
        ranked.extend(children);
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
        ranked.truncate(size);
    }
    Ok(ranked)
}

/// One evolution round: random initial population, search, and append the
/// `config.append` worst-performing chains to the pool. Returns them.
pub fn rsda_evolve(
    pool: &mut TransformPool,
    probe: &[Sample],
    shape: ImageShape,
    accuracy: &mut dyn FnMut(&[Sample]) -> Result<f64>,
    seed: u64,
) -> Result<Vec<ComposedTransform>> {
    let config = pool.config.clone();
    let mut r = rng::stream(seed, "rsda-init", 0);
    let initial = (0..config.population).map(|_| random_chain(&mut r)).collect();
    let ranked = evolve_population(initial, &config, probe, shape, accuracy, seed)?;
    let added: Vec<ComposedTransform> = ranked.into_iter().take(config.append).map(|(c, _)| c).collect();
    pool.transforms.extend(added.iter().cloned());
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dg::transforms::TransformKind;

    fn probe() -> Vec<Sample> {
        (0..4)
            .map(|i| Sample {
                pixels: (0..12).map(|j| ((i * 12 + j) as f32 * 0.07).fract()).collect(),
                class_id: i,
                domain_id: 0,
                instance_id: 0,
            })
            .collect()
    }

    fn shape() -> ImageShape {
        ImageShape::new(2, 2, 3)
    }

    /// Accuracy falls with mean brightness, so darker chains are fitter.
    fn brightness_accuracy(batch: &[Sample]) -> Result<f64> {
        let n: usize = batch.iter().map(|s| s.pixels.len()).sum();
        Ok(batch.iter().flat_map(|s| s.pixels.iter()).map(|&p| p as f64).sum::<f64>() / n as f64)
    }

    #[test]
    fn identity_pool_leaves_batch_unchanged() {
        let pool = TransformPool::new(RsdaConfig::default());
        assert_eq!(rsda_augment_batch(&pool, &probe(), shape(), 3), probe());
    }

    #[test]
    fn single_generation_picks_lower_accuracy() {
        let dark = ComposedTransform::new(vec![BasicTransform::new(TransformKind::Brightness, -0.3).unwrap()]).unwrap();
        let light = ComposedTransform::new(vec![BasicTransform::new(TransformKind::Brightness, 0.3).unwrap()]).unwrap();
        let config = RsdaConfig {
            population: 2,
            generations: 1,
            append: 1,
            ..RsdaConfig::default()
        };
        let ranked = evolve_population(
            vec![light, dark.clone()],
            &config,
            &probe(),
            shape(),
            &mut brightness_accuracy,
            0,
        )
        .unwrap();
        assert_eq!(ranked[0].0, dark);
    }

    #[test]
    fn zero_accuracy_model_still_grows_pool() {
        let mut pool = TransformPool::new(RsdaConfig::default());
        let added = rsda_evolve(&mut pool, &probe(), shape(), &mut |_| Ok(0.0), 1).unwrap();
        assert_eq!(added.len(), 2);
        assert_eq!(pool.transforms.len(), 3);
        assert!(pool.transforms.iter().all(|t| t.validate().is_ok()));
    }

    #[test]
    fn evolution_is_seeded() {
        let run = |seed| {
            let mut pool = TransformPool::new(RsdaConfig::default());
            rsda_evolve(&mut pool, &probe(), shape(), &mut brightness_accuracy, seed).unwrap();
            pool
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn empty_probe_is_contract_error() {
        let mut pool = TransformPool::new(RsdaConfig::default());
        let err = rsda_evolve(&mut pool, &[], shape(), &mut |_| Ok(1.0), 0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
