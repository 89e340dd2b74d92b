//! Self-challenging feature masking.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{rng, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScConfig {
    /// Fraction `p` of feature entries zeroed per masked sample.
    pub percentile: f64,
    /// Fraction of each batch that is masked.
    pub batch_ratio: f64,
}

impl Default for ScConfig {
    fn default() -> Self {
        ScConfig {
            percentile: 0.33,
            batch_ratio: 0.2,
        }
    }
}

impl ScConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(Error::Config(format!(
                "sc.percentile must lie in (0, 1), got {}",
                self.percentile
            )));
        }
        if !(0.0..=1.0).contains(&self.batch_ratio) {
            return Err(Error::Config(format!(
                "sc.batch_ratio must lie in [0, 1], got {}",
                self.batch_ratio
            )));
        }
        Ok(())
    }
}

/// Score of one sample's ground-truth class, recorded on a tape from a
/// `[1, dim]` feature node.
pub type ScoreFn<'a> = dyn Fn(&mut Tape, Var, u32) -> Result<Var> + 'a;

/// Cut-off such that the top `ceil(p * n)` gradient entries satisfy
/// `g >= q`: the ascending-sorted entry at `n - ceil(p * n)`.
pub fn quantile_threshold(g: &[f64], p: f64) -> f64 {
    let mut sorted = g.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let drop = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[n - drop.min(n)]
}

/// `0` where `g >= q_p`, `1` elsewhere.
pub fn feature_mask(g: &[f64], p: f64) -> Vec<f64> {
    let q = quantile_threshold(g, p);
    g.iter().map(|&v| if v >= q { 0.0 } else { 1.0 }).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    /// Row-major multiplicative mask, all ones on untouched rows.
    pub mask: Vec<f64>,
    /// `mask * z`.
    pub masked: Vec<f64>,
    /// Rows that were masked, ascending.
    pub selected: Vec<usize>,
}

/// Masks the feature entries whose ground-truth score gradient is in the
/// top `p` fraction, on a seeded `batch_ratio` share of the rows.
pub fn sc_mask(
    z: &[f64],
    dim: usize,
    labels: &[u32],
    score_fn: &ScoreFn<'_>,
    config: &ScConfig,
    seed: u64,
) -> Result<MaskedBatch> {
    config.validate()?;
    let n = labels.len();
    if z.len() != n * dim {
        return Err(Error::dimension("sc_mask features", n * dim, z.len()));
    }
    let count = ((config.batch_ratio * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "sc-select", 0));
    let mut selected = order[..count].to_vec();
    selected.sort_unstable();

    let mut mask = vec![1.0; z.len()];
    for &i in &selected {
        let row = &z[i * dim..(i + 1) * dim];
        let mut tape = Tape::new();
        let zi = tape.param(&Tensor::new(vec![1, dim], row.to_vec())?);
        let score = score_fn(&mut tape, zi, labels[i])?;
        let grads = tape.backward(score)?;
        let g = grads.get_or_zeros(zi, dim);
        mask[i * dim..(i + 1) * dim].copy_from_slice(&feature_mask(&g, config.percentile));
    }
    let masked = z.iter().zip(&mask).map(|(a, m)| a * m).collect();
    Ok(MaskedBatch { mask, masked, selected })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let g = [0.1, 0.4, 0.2, 0.3];
        assert_eq!(quantile_threshold(&g, 0.5), 0.3);
        assert_eq!(feature_mask(&g, 0.5), vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn constant_gradient_zeroes_everything() {
        assert_eq!(feature_mask(&[0.2; 5], 0.3), vec![0.0; 5]);
    }

    #[test]
    fn linear_score_masks_largest_weights() {
        let w = [0.1, 0.4, 0.2, 0.3];
        let score = |tape: &mut Tape, z: Var, _y: u32| -> Result<Var> { Ok(tape.weighted_sum(z, w.to_vec())) };
        let config = ScConfig {
            percentile: 0.5,
            batch_ratio: 1.0,
        };
        let out = sc_mask(&[1.0, 2.0, 3.0, 4.0], 4, &[0], &score, &config, 0).unwrap();
        assert_eq!(out.masked, vec![1.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn zero_ratio_leaves_batch_unchanged() {
        let score = |tape: &mut Tape, z: Var, _y: u32| -> Result<Var> { Ok(tape.sum(z)) };
        let config = ScConfig {
            percentile: 0.5,
            batch_ratio: 0.0,
        };
        let z = [1.0, -2.0, 3.0, 0.5];
        let out = sc_mask(&z, 2, &[0, 1], &score, &config, 0).unwrap();
        assert_eq!(out.masked, z.to_vec());
        assert!(out.selected.is_empty());
    }

    #[test]
    fn percentile_bounds_are_config_errors() {
        for p in [0.0, 1.0, -0.1] {
            let c = ScConfig {
                percentile: p,
                batch_ratio: 0.5,
            };
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }
}
