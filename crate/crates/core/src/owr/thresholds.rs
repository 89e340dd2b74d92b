//! Rejection thresholds: NNO grid search, DeepNNO online update, B-DOC
//! per-class hinge refinement.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::owr_harmonic;

/// A held-out known-class sample: distance to its nearest centroid and
/// whether that centroid is the right class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeldOutKnown {
    pub distance: f64,
    pub correct: bool,
}

/// Candidate thresholds: sorted distinct observed distances, thinned to
/// `grid_points` evenly spaced ranks when `grid_points > 0`.
pub fn threshold_grid(known: &[HeldOutKnown], unknown: &[f64], grid_points: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = known
        .iter()
        .map(|k| k.distance)
        .chain(unknown.iter().copied())
        .filter(|d| d.is_finite())
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid_points > 0 && grid_points < grid.len() {
        let last = grid.len() - 1;
        let mut thinned: Vec<f64> = (0..grid_points)
            .map(|i| grid[if grid_points == 1 { last } else { i * last / (grid_points - 1) }])
            .collect();
        thinned.dedup();
        grid = thinned;
    }
    grid
}

/// OWR-H on held-out data when samples with distance `< tau` are accepted.
pub fn heldout_harmonic(known: &[HeldOutKnown], unknown: &[f64], tau: f64) -> f64 {
    let cwr = known.iter().filter(|k| k.distance < tau && k.correct).count() as f64 / known.len() as f64;
    let osa = unknown.iter().filter(|&&d| d >= tau).count() as f64 / unknown.len() as f64;
    owr_harmonic(cwr, osa)
}

/// Picks the NNO threshold maximizing held-out OWR-H. Ties go to the
/// smaller threshold.
pub fn estimate_nno_threshold(known: &[HeldOutKnown], unknown: &[f64], grid_points: usize) -> Result<f64> {
    if known.is_empty() || unknown.is_empty() {
        return Err(Error::Config(format!(
            "threshold estimation needs held-out known and pseudo-unknown samples (got {} and {})",
            known.len(),
            unknown.len()
        )));
    }
    let grid = threshold_grid(known, unknown, grid_points);
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &tau in &grid {
        let h = heldout_harmonic(known, unknown, tau);
        if h > best.0 {
            best = (h, tau);
        }
    }
    Ok(best.1)
}

/// Running weighted mean of top scores for the DeepNNO threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTracker {
    weighted_sum: f64,
    total_weight: f64,
}

impl ThresholdTracker {
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Folds a batch of `(top score, correctly classified)` pairs in and
    /// returns the new threshold clamped to `[0, 1]`, or `current` when no
    /// weight has been seen yet.
    pub fn update(&mut self, batch: &[(f64, bool)], neg_weight: f64, current: f64) -> f64 {
        for &(score, correct) in batch {
            let w = if correct { 1.0 } else { neg_weight };
            self.weighted_sum += w * score;
            self.total_weight += w;
        }
        if self.total_weight > 0.0 {
            (self.weighted_sum / self.total_weight).clamp(0.0, 1.0)
        } else {
            current
        }
    }
}

/// Reserved-set scores against one class centroid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassScores {
    /// Scores of samples belonging to the class.
    pub own: Vec<f64>,
    /// Scores of samples from the other known classes.
    pub other: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Learns per-class B-DOC thresholds.
///
/// Each threshold starts at mean + 2 std of the class's own scores and is
/// refined by gradient descent (rate `tau_lr`) on the hinge objective
/// `mean_own max(0, phi - tau) + mean_other max(0, tau - phi)`. A class with
/// no own scores starts from the pooled statistic over all classes.
pub fn bdoc_learn_thresholds(
    scores: &BTreeMap<u32, ClassScores>,
    tau_lr: f64,
    epochs: usize,
) -> Result<BTreeMap<u32, f64>> {
    if !(tau_lr >= 0.0 && tau_lr.is_finite()) {
        return Err(Error::Config(format!("tau_lr must be >= 0, got {tau_lr}")));
    }
    let pooled: Vec<f64> = scores.values().flat_map(|s| s.own.iter().copied()).collect();
    let fallback = if pooled.is_empty() {
        1.0
    } else {
        let (m, s) = mean_std(&pooled);
        m + 2.0 * s
    };
    let mut out = BTreeMap::new();
    for (&class, s) in scores {
        let mut tau = if s.own.is_empty() {
            warn!("class {class} has no reserved samples; using pooled threshold");
            fallback
        } else {
            let (m, sd) = mean_std(&s.own);
            m + 2.0 * sd
        };
        for _ in 0..epochs {
            let mut grad = 0.0;
            if !s.own.is_empty() {
                grad -= s.own.iter().filter(|&&p| p > tau).count() as f64 / s.own.len() as f64;
            }
            if !s.other.is_empty() {
                grad += s.other.iter().filter(|&&p| p < tau).count() as f64 / s.other.len() as f64;
            }
            tau = (tau - tau_lr * grad).max(0.0);
        }
        out.insert(class, tau);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(d: f64) -> HeldOutKnown {
        HeldOutKnown { distance: d, correct: true }
    }

    #[test]
    fn separable_distances_pick_smallest_perfect_threshold() {
        let known = [k(0.2), k(0.5), k(0.9)];
        let unknown = [2.5, 2.1, 3.0];
        let tau = estimate_nno_threshold(&known, &unknown, 0).unwrap();
        assert_eq!(tau, 2.1);
        assert_eq!(heldout_harmonic(&known, &unknown, tau), 1.0);
    }

    #[test]
    fn identical_distances_return_smallest_grid_point() {
        let known = [k(1.0), k(1.0)];
        let unknown = [1.0];
        assert_eq!(estimate_nno_threshold(&known, &unknown, 0).unwrap(), 1.0);
    }

    #[test]
    fn empty_heldout_is_config_error() {
        assert!(matches!(estimate_nno_threshold(&[], &[1.0], 0), Err(Error::Config(_))));
        assert!(matches!(estimate_nno_threshold(&[k(1.0)], &[], 0), Err(Error::Config(_))));
    }

    #[test]
    fn thinned_grid_keeps_extremes() {
        let known: Vec<HeldOutKnown> = (0..10).map(|i| k(i as f64)).collect();
        let g = threshold_grid(&known, &[], 4);
        assert_eq!(g, vec![0.0, 3.0, 6.0, 9.0]);
    }

    #[test]
    fn tracker_examples() {
        let mut t = ThresholdTracker::default();
        assert_eq!(t.update(&[(0.8, true), (0.8, true)], 2.0, 0.0), 0.8);

        let mut t = ThresholdTracker::default();
        assert_eq!(t.update(&[(0.9, true), (0.1, false)], 0.0, 0.0), 0.9);

        let mut t = ThresholdTracker::default();
        let tau = t.update(&[(0.9, true), (0.6, true), (0.3, false)], 2.0, 0.0);
        assert!((tau - (0.9 + 0.6 + 2.0 * 0.3) / 4.0).abs() < 1e-15);

        let mut t = ThresholdTracker::default();
        assert_eq!(t.update(&[(0.3, false)], 0.0, 0.42), 0.42);
    }

    #[test]
    fn bdoc_fixed_point_and_zero_rate() {
        let scores = BTreeMap::from([(0, ClassScores { own: vec![1.0; 4], other: vec![] })]);
        assert_eq!(bdoc_learn_thresholds(&scores, 0.1, 20).unwrap()[&0], 1.0);

        let scores = BTreeMap::from([(
            0,
            ClassScores {
                own: vec![0.1, 0.4, 0.9],
                other: vec![0.2, 3.5],
            },
        )]);
        let (m, s) = mean_std(&[0.1, 0.4, 0.9]);
        assert_eq!(bdoc_learn_thresholds(&scores, 0.0, 50).unwrap()[&0], m + 2.0 * s);
    }

    #[test]
    fn missing_class_falls_back_to_pooled_init() {
        let scores = BTreeMap::from([
            (0, ClassScores { own: vec![2.0, 2.0], other: vec![] }),
            (1, ClassScores { own: vec![], other: vec![] }),
        ]);
        let taus = bdoc_learn_thresholds(&scores, 0.1, 5).unwrap();
        assert_eq!(taus[&1], 2.0);
    }
}
