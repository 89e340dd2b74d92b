//! Relative-rotation self-supervision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::transforms::random_augment;
use crate::datagen::{ImageShape, Sample};
use crate::error::{Error, Result};
use crate::numerics::{rng, Mlp, MlpSpec, Tape, Var};
use crate::owr::cross_entropy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RrConfig {
    /// Auxiliary loss weight; 0 disables the branch.
    pub xi: f64,
    pub hidden: usize,
}

impl Default for RrConfig {
    fn default() -> Self {
        RrConfig { xi: 0.5, hidden: 32 }
    }
}

impl RrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::Config(format!("rr.xi must be >= 0, got {}", self.xi)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("rr.hidden must be positive".into()));
        }
        Ok(())
    }
}

/// Rotates a square image by `quarter_turns * 90` degrees counterclockwise:
/// pixel `(r, c)` moves to `(W - 1 - c, r)` per quarter turn.
pub fn rotate90(px: &[f32], shape: ImageShape, quarter_turns: usize) -> Result<Vec<f32>> {
    if shape.height != shape.width {
        return Err(Error::Contract(format!(
            "rotation needs square images, got {}x{}",
            shape.height, shape.width
        )));
    }
    let n = shape.width;
    let mut cur = px.to_vec();
    for _ in 0..quarter_turns % 4 {
        let mut next = vec![0.0; cur.len()];
        for r in 0..n {
            for c in 0..n {
                for ch in 0..shape.channels {
                    next[shape.index(n - 1 - c, r, ch)] = cur[shape.index(r, c, ch)];
                }
            }
        }
        cur = next;
    }
    Ok(cur)
}

/// Rotated, augmented copies with their rotation labels in `0..4`.
pub fn rr_build_batch(batch: &[Sample], shape: ImageShape, seed: u64) -> Result<Vec<(Sample, usize)>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let theta = rng::stream(seed, "rr-theta", i as u64).random_range(0..4);
            let rotated = Sample {
                pixels: rotate90(&s.pixels, shape, theta)?,
                ..s.clone()
            };
            Ok((random_augment(&rotated, shape, rng::derive_seed(seed, "rr-aug", i as u64), 1.0), theta))
        })
        .collect()
}

/// Branch mapping a concatenated feature pair to 4 rotation logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationHead {
    pub mlp: Mlp,
    pub xi: f64,
}

impl RotationHead {
    pub fn new(feature_dim: usize, config: &RrConfig, seed: u64) -> Result<Self> {
        let mlp = Mlp::new(&MlpSpec::new(
            vec![2 * feature_dim, config.hidden, 4],
            rng::derive_seed(seed, "rr-head", 0),
        ))?;
        Ok(RotationHead { mlp, xi: config.xi })
    }
}

/// Cross-entropy of `head(concat(z, z_rot))` against the rotation labels.
pub fn rr_aux_loss(tape: &mut Tape, head: &Mlp, head_params: &[Var], z: Var, z_rot: Var, theta: &[usize]) -> Result<Var> {
    let pair = tape.concat_cols(z, z_rot);
    let logits = head.forward(tape, head_params, pair)?;
    Ok(cross_entropy(tape, logits, theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turn_matches_worked_example() {
        let shape = ImageShape::new(2, 2, 1);
        let (a, b, c, d) = (0.1, 0.2, 0.3, 0.4);
        assert_eq!(rotate90(&[a, b, c, d], shape, 1).unwrap(), vec![b, d, a, c]);
        assert_eq!(rotate90(&[a, b, c, d], shape, 0).unwrap(), vec![a, b, c, d]);
    }

    #[test]
    fn four_turns_are_identity() {
        let shape = ImageShape::new(5, 5, 3);
        let px: Vec<f32> = (0..75).map(|i| i as f32 / 75.0).collect();
        assert_eq!(rotate90(&px, shape, 4).unwrap(), px);
        let once = rotate90(&px, shape, 1).unwrap();
        assert_eq!(rotate90(&once, shape, 3).unwrap(), px);
    }

    #[test]
    fn non_square_is_contract_error() {
        let err = rotate90(&[0.0; 6], ImageShape::new(2, 3, 1), 1).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn batch_keeps_semantic_labels() {
        let shape = ImageShape::new(4, 4, 3);
        let batch: Vec<Sample> = (0..6)
            .map(|i| Sample {
                pixels: vec![0.5; 48],
                class_id: i,
                domain_id: 0,
                instance_id: 0,
            })
            .collect();
        let out = rr_build_batch(&batch, shape, 2).unwrap();
        for ((s, theta), orig) in out.iter().zip(&batch) {
            assert_eq!(s.class_id, orig.class_id);
            assert!(*theta < 4);
        }
    }

    #[test]
    fn uniform_logits_give_log4() {
        let head = Mlp::from_layers(vec![crate::numerics::Linear {
            weight: crate::numerics::Tensor::zeros(&[4, 4]),
            bias: crate::numerics::Tensor::zeros(&[4]),
        }])
        .unwrap();
        let mut tape = Tape::new();
        let params = head.bind(&mut tape);
        let z = tape.constant(vec![3, 2], vec![0.3, -1.0, 2.0, 0.5, 0.1, 0.0]);
        let zr = tape.constant(vec![3, 2], vec![1.0, 1.0, -2.0, 0.5, 0.0, 0.7]);
        let l = rr_aux_loss(&mut tape, &head, &params, z, zr, &[0, 3, 2]).unwrap();
        assert!((tape.value(l)[0] - 4f64.ln()).abs() < 1e-12);
    }
}
