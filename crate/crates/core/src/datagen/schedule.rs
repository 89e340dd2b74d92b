use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng;

/// Base step, incremental steps, and the held-back unknown classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSchedule {
    pub base_classes: Vec<u32>,
    pub incremental_steps: Vec<Vec<u32>>,
    pub unknown_classes: Vec<u32>,
    pub seed: u64,
}

impl EpisodeSchedule {
    /// All training steps, base first.
    pub fn steps(&self) -> impl Iterator<Item = &[u32]> {
        std::iter::once(self.base_classes.as_slice())
            .chain(self.incremental_steps.iter().map(Vec::as_slice))
    }

    pub fn num_steps(&self) -> usize {
        1 + self.incremental_steps.len()
    }

    pub fn known_classes(&self) -> BTreeSet<u32> {
        self.steps().flatten().copied().collect()
    }

    /// Known classes after step `t` (inclusive).
    pub fn known_after(&self, t: usize) -> BTreeSet<u32> {
        self.steps().take(t + 1).flatten().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, group) in self.steps().chain(std::iter::once(self.unknown_classes.as_slice())).enumerate() {
            if group.is_empty() && i < self.num_steps() {
                return Err(Error::Config(format!("schedule step {i} is empty")));
            }
            for c in group {
                if !seen.insert(*c) {
                    return Err(Error::Config(format!("class {c} appears in more than one schedule group")));
                }
            }
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor() as usize
}

fn feasible_pairs(known: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(known, 0)];
    for base in 1..known {
        let rest = known - base;
        for step in 1..=rest {
            if rest % step == 0 {
                out.push((base, step));
            }
        }
    }
    out
}

/// Seeded known/unknown split, then a base step of `base_count` classes and
/// incremental steps of `step_size` classes each.
pub fn build_schedule(
    classes: &[u32],
    known_fraction: f64,
    base_count: usize,
    step_size: usize,
    seed: u64,
) -> Result<EpisodeSchedule> {
    if !(0.0..=1.0).contains(&known_fraction) {
        return Err(Error::Config(format!("known_fraction {known_fraction} outside [0, 1]")));
    }
    let distinct: BTreeSet<u32> = classes.iter().copied().collect();
    if distinct.len() != classes.len() {
        return Err(Error::Config("class list contains duplicates".into()));
    }
    let known = round_half_up(known_fraction * classes.len() as f64);
    let feasible = base_count >= 1
        && base_count <= known
        && if step_size == 0 {
            base_count == known
        } else {
            (known - base_count) % step_size == 0
        };
    if !feasible {
        let pairs = feasible_pairs(known);
        let shown: Vec<String> = pairs.iter().take(24).map(|(b, s)| format!("({b}, {s})")).collect();
        return Err(Error::Config(format!(
            "base_count {base_count} + k * step_size {step_size} cannot cover {known} known classes; valid (base_count, step_size) pairs: {}{}",
            shown.join(", "),
            if pairs.len() > shown.len() { ", ..." } else { "" }
        )));
    }

    let mut order = classes.to_vec();
    order.shuffle(&mut rng::stream(seed, "schedule", 0));
    let sorted = |s: &[u32]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let (known_part, unknown_part) = order.split_at(known);
    let (base, rest) = known_part.split_at(base_count);
    let incremental_steps = if step_size == 0 {
        Vec::new()
    } else {
        rest.chunks(step_size).map(sorted).collect()
    };
    let schedule = EpisodeSchedule {
        base_classes: sorted(base),
        incremental_steps,
        unknown_classes: sorted(unknown_part),
        seed,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// One reshuffle of the base classes into a validation protocol.
///
/// `val_incremental_steps` holds the three cardinality variants of the
/// same `m` incremental classes: `m` steps of one class, two steps of
/// `ceil(m/2)` and `floor(m/2)` classes, and one step of `m` classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitTrial {
    pub val_base_classes: Vec<u32>,
    pub val_incremental_steps: Vec<Vec<Vec<u32>>>,
    pub val_unknown_classes: Vec<u32>,
    pub trial_seed: u64,
}

impl SplitTrial {
    /// The trial as one schedule per cardinality variant.
    pub fn schedules(&self) -> Vec<EpisodeSchedule> {
        self.val_incremental_steps
            .iter()
            .map(|steps| EpisodeSchedule {
                base_classes: self.val_base_classes.clone(),
                incremental_steps: steps.clone(),
                unknown_classes: self.val_unknown_classes.clone(),
                seed: self.trial_seed,
            })
            .collect()
    }
}

/// Builds `num_trials` reshuffled validation splits over the base classes.
///
/// A tenth of the base classes (rounded up, at least one) play the unknown
/// role; half of the remainder (rounded half up) form the validation base
/// step; the rest are learned incrementally.
pub fn build_validation_splits(base_classes: &[u32], num_trials: usize, seed: u64) -> Result<Vec<SplitTrial>> {
    let n = base_classes.len();
    if n < 6 {
        return Err(Error::Config(format!(
            "validation splits need at least 6 base classes, got {n}"
        )));
    }
    let n_unknown = n.div_ceil(10).max(1);
    let rest = n - n_unknown;
    let n_first = rest.div_ceil(2);
    let m = rest - n_first;

    (0..num_trials)
        .map(|trial| {
            let trial_seed = rng::derive_seed(seed, "validation-trial", trial as u64);
            let mut order = base_classes.to_vec();
            order.shuffle(&mut rng::stream(trial_seed, "validation-split", 0));
            let unknown = &order[..n_unknown];
            let first = &order[n_unknown..n_unknown + n_first];
            let incr = &order[n_unknown + n_first..];
            let singles: Vec<Vec<u32>> = incr.iter().map(|&c| vec![c]).collect();
            let half = m.div_ceil(2);
            let halves = vec![incr[..half].to_vec(), incr[half..].to_vec()]
                .into_iter()
                .filter(|s| !s.is_empty())
                .collect();
            let trial = SplitTrial {
                val_base_classes: first.to_vec(),
                val_incremental_steps: vec![singles, halves, vec![incr.to_vec()]],
                val_unknown_classes: unknown.to_vec(),
                trial_seed,
            };
            for s in trial.schedules() {
                s.validate()?;
            }
            Ok(trial)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: u32) -> Vec<u32> {
        (0..n).collect()
    }

    #[test]
    fn fifty_one_class_arithmetic() {
        let s = build_schedule(&ids(51), 26.0 / 51.0, 11, 5, 0).unwrap();
        assert_eq!(s.base_classes.len(), 11);
        assert_eq!(s.incremental_steps.len(), 3);
        assert!(s.incremental_steps.iter().all(|st| st.len() == 5));
        assert_eq!(s.unknown_classes.len(), 25);
    }

    #[test]
    fn default_desk_schedule() {
        let s = build_schedule(&ids(20), 0.5, 4, 2, 3).unwrap();
        assert_eq!(s.incremental_steps.len(), 3);
        assert!(s.incremental_steps.iter().all(|st| st.len() == 2));
        assert_eq!(s.unknown_classes.len(), 10);
        assert_eq!(s.known_classes().len(), 10);
    }

    #[test]
    fn closed_world_edge_has_no_steps() {
        let s = build_schedule(&ids(20), 0.5, 10, 0, 3).unwrap();
        assert!(s.incremental_steps.is_empty());
        assert_eq!(s.num_steps(), 1);
    }

    #[test]
    fn infeasible_arithmetic_lists_pairs() {
        let err = build_schedule(&ids(20), 0.5, 4, 4, 0).unwrap_err().to_string();
        assert!(err.contains("(4, 2)") && err.contains("(4, 3)"), "{err}");
    }

    #[test]
    fn eleven_base_classes() {
        let trials = build_validation_splits(&ids(11), 3, 1).unwrap();
        for t in &trials {
            assert_eq!(t.val_unknown_classes.len(), 2);
            assert_eq!(t.val_base_classes.len(), 5);
            let shapes: Vec<Vec<usize>> = t
                .val_incremental_steps
                .iter()
                .map(|v| v.iter().map(Vec::len).collect())
                .collect();
            assert_eq!(shapes, vec![vec![1, 1, 1, 1], vec![2, 2], vec![4]]);
        }
    }

    #[test]
    fn six_base_classes() {
        let t = &build_validation_splits(&ids(6), 1, 1).unwrap()[0];
        assert_eq!(t.val_unknown_classes.len(), 1);
        assert_eq!(t.val_base_classes.len(), 3);
        let shapes: Vec<Vec<usize>> = t
            .val_incremental_steps
            .iter()
            .map(|v| v.iter().map(Vec::len).collect())
            .collect();
        assert_eq!(shapes, vec![vec![1, 1], vec![1, 1], vec![2]]);
    }

    #[test]
    fn validation_splits_are_deterministic_and_vary() {
        let a = build_validation_splits(&ids(11), 4, 9).unwrap();
        assert_eq!(a, build_validation_splits(&ids(11), 4, 9).unwrap());
        assert!(a.windows(2).any(|w| w[0].val_unknown_classes != w[1].val_unknown_classes
            || w[0].val_base_classes != w[1].val_base_classes));
        assert!(build_validation_splits(&ids(5), 1, 0).is_err());
    }
}
