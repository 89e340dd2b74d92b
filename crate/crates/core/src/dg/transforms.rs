//! Label-preserving image transforms used by the augmentation plugins.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{bilinear, hsv_to_rgb, rgb_to_hsv, ImageShape, Sample};
use crate::error::{Error, Result};
use crate::numerics::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Hue,
    Contrast,
    Brightness,
    Saturation,
    RandomCrop,
    Mirroring,
}

impl TransformKind {
    pub const ALL: [TransformKind; 6] = [
        TransformKind::Hue,
        TransformKind::Contrast,
        TransformKind::Brightness,
        TransformKind::Saturation,
        TransformKind::RandomCrop,
        TransformKind::Mirroring,
    ];

    /// Closed magnitude range.
    ///
    /// * hue: rotation in turns, `[-0.5, 0.5]`
    /// * contrast: factor about the image mean, `[0.3, 1.7]`
    /// * brightness: additive offset, `[-0.4, 0.4]`
    /// * saturation: factor toward/away from gray, `[0, 2]`
    /// * random_crop: kept side fraction, `[0.5, 1]`
    /// * mirroring: ignored, `[1, 1]`
    pub fn range(self) -> (f32, f32) {
        match self {
            TransformKind::Hue => (-0.1, 0.1),
            TransformKind::Contrast => (0.3, 1.7),
            TransformKind::Brightness => (-0.4, 0.4),
            TransformKind::Saturation => (0.0, 2.0),
            TransformKind::RandomCrop => (0.7, 1.0),
            TransformKind::Mirroring => (1.0, 1.0),
        }
    }

    /// Magnitude at which the transform does nothing.
    pub fn neutral(self) -> f32 {
        match self {
            TransformKind::Hue | TransformKind::Brightness => 0.0,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasicTransform {
    pub kind: TransformKind,
    pub magnitude: f32,
}

impl fmt::Display for BasicTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}({:.3})", self.kind, self.magnitude)
    }
}

impl BasicTransform {
    pub fn new(kind: TransformKind, magnitude: f32) -> Result<Self> {
        let t = BasicTransform { kind, magnitude };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.kind.range();
        if !(self.magnitude >= lo && self.magnitude <= hi) {
            return Err(Error::Config(format!(
                "{:?} magnitude {} outside [{lo}, {hi}]",
                self.kind, self.magnitude
            )));
        }
        Ok(())
    }

    /// Uniformly random kind and magnitude.
    pub fn random(rng: &mut rng::Rng) -> Self {
        Self::random_scaled(rng, 1.0)
    }

    /// Random kind and magnitude, with the magnitude pulled toward neutral
    /// by `strength` in `[0, 1]`.
    pub fn random_scaled(rng: &mut rng::Rng, strength: f32) -> Self {
        let kind = TransformKind::ALL[rng.random_range(0..TransformKind::ALL.len())];
        let (lo, hi) = kind.range();
        let m = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        let n = kind.neutral();
        let magnitude = if kind == TransformKind::Mirroring {
            m
        } else {
            (n + strength.clamp(0.0, 1.0) * (m - n)).clamp(lo, hi)
        };
        BasicTransform { kind, magnitude }
    }

    /// Applies the transform in place; `rng` is only drawn from by
    /// random_crop. Output pixels are clamped to `[0, 1]`.
    pub fn apply(&self, px: &mut Vec<f32>, shape: ImageShape, rng: &mut rng::Rng) {
        let m = self.magnitude;
        match self.kind {
            TransformKind::Hue if shape.channels == 3 => {
                for p in px.chunks_exact_mut(3) {
                    let [h, s, v] = rgb_to_hsv(p[0] as f64, p[1] as f64, p[2] as f64);
                    let rgb = hsv_to_rgb(h + m as f64, s, v);
                    p.iter_mut().zip(rgb).for_each(|(d, c)| *d = c as f32);
                }
            }
            TransformKind::Saturation if shape.channels == 3 => {
                for p in px.chunks_exact_mut(3) {
                    let gray = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
                    p.iter_mut().for_each(|c| *c = gray + (*c - gray) * m);
                }
            }
            TransformKind::Hue | TransformKind::Saturation => {}
            TransformKind::Contrast => {
                let mean = (px.iter().map(|&p| p as f64).sum::<f64>() / px.len() as f64) as f32;
                px.iter_mut().for_each(|p| *p = (*p - mean) * m + mean);
            }
            TransformKind::Brightness => px.iter_mut().for_each(|p| *p += m),
            TransformKind::RandomCrop => {
                if m < 1.0 {
                    *px = crop_resize(px, shape, m as f64, rng);
                }
            }
            TransformKind::Mirroring => mirror(px, shape),
        }
        px.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    }
}

fn mirror(px: &mut [f32], shape: ImageShape) {
    for r in 0..shape.height {
        for c in 0..shape.width / 2 {
            for ch in 0..shape.channels {
                px.swap(shape.index(r, c, ch), shape.index(r, shape.width - 1 - c, ch));
            }
        }
    }
}

/// Crops a random window of `frac` times each side and resizes it back.
fn crop_resize(px: &[f32], shape: ImageShape, frac: f64, rng: &mut rng::Rng) -> Vec<f32> {
    let ch = (shape.height as f64 - 1.0) * frac;
    let cw = (shape.width as f64 - 1.0) * frac;
    let top = rng.random_range(0.0..=(shape.height as f64 - 1.0 - ch));
    let left = rng.random_range(0.0..=(shape.width as f64 - 1.0 - cw));
    let sy = if shape.height > 1 { ch / (shape.height - 1) as f64 } else { 0.0 };
    let sx = if shape.width > 1 { cw / (shape.width - 1) as f64 } else { 0.0 };
    let mut out = vec![0.0; px.len()];
    for r in 0..shape.height {
        for c in 0..shape.width {
            for k in 0..shape.channels {
                out[shape.index(r, c, k)] = bilinear(px, shape, top + r as f64 * sy, left + c as f64 * sx, k);
            }
        }
    }
    out
}

/// Up to three basic transforms applied left to right. The empty chain is
/// the identity.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComposedTransform {
    pub chain: Vec<BasicTransform>,
}

pub const MAX_CHAIN: usize = 3;

impl fmt::Display for ComposedTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.chain.is_empty() {
            return write!(f, "identity");
        }
        let parts: Vec<String> = self.chain.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join(" > "))
    }
}

impl ComposedTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(chain: Vec<BasicTransform>) -> Result<Self> {
        let t = ComposedTransform { chain };
        t.validate()?;
        Ok(t)
    }

    pub fn is_identity(&self) -> bool {
        self.chain.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.chain.len() > MAX_CHAIN {
            return Err(Error::Config(format!(
                "transform chains hold at most {MAX_CHAIN} steps, got {}",
                self.chain.len()
            )));
        }
        self.chain.iter().try_for_each(BasicTransform::validate)
    }

    pub fn apply(&self, sample: &Sample, shape: ImageShape, seed: u64) -> Sample {
        let mut out = sample.clone();
        let mut r = rng::stream(seed, "transform", 0);
        for t in &self.chain {
            t.apply(&mut out.pixels, shape, &mut r);
        }
        out
    }
}

/// One random basic transform per sample, used to diversify rotated copies
/// and reserved threshold samples. `strength` scales the magnitude.
pub fn random_augment(sample: &Sample, shape: ImageShape, seed: u64, strength: f32) -> Sample {
    let mut r = rng::stream(seed, "random-augment", 0);
    let t = BasicTransform::random_scaled(&mut r, strength);
    let mut out = sample.clone();
    t.apply(&mut out.pixels, shape, &mut r);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> ImageShape {
        ImageShape::new(4, 4, 3)
    }

    fn sample(v: impl Fn(usize) -> f32) -> Sample {
        Sample {
            pixels: (0..48).map(v).collect(),
            class_id: 3,
            domain_id: 0,
            instance_id: 1,
        }
    }

    #[test]
    fn mirroring_twice_is_identity() {
        let s = sample(|i| (i as f32 * 0.37).fract());
        let m = BasicTransform::new(TransformKind::Mirroring, 1.0).unwrap();
        let twice = ComposedTransform::new(vec![m, m]).unwrap();
        assert_eq!(twice.apply(&s, shape(), 5), s);
        let once = ComposedTransform::new(vec![m]).unwrap();
        assert_ne!(once.apply(&s, shape(), 5), s);
    }

    #[test]
    fn brightness_clamps_at_one() {
        let s = sample(|_| 0.9);
        let t = ComposedTransform::new(vec![BasicTransform::new(TransformKind::Brightness, 0.2).unwrap()]).unwrap();
        assert!(t.apply(&s, shape(), 0).pixels.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn neutral_magnitudes_preserve_pixels() {
        let s = sample(|i| (i as f32 * 0.13).fract());
        for kind in TransformKind::ALL {
            if kind == TransformKind::Mirroring {
                continue;
            }
            let t = ComposedTransform::new(vec![BasicTransform::new(kind, kind.neutral()).unwrap()]).unwrap();
            let out = t.apply(&s, shape(), 1);
            for (a, b) in out.pixels.iter().zip(&s.pixels) {
                assert!((a - b).abs() < 1e-5, "{kind:?}");
            }
        }
    }

    #[test]
    fn out_of_range_magnitude_and_long_chains_are_rejected() {
        assert!(BasicTransform::new(TransformKind::Hue, 0.7).is_err());
        let m = BasicTransform::new(TransformKind::Mirroring, 1.0).unwrap();
        assert!(ComposedTransform::new(vec![m; 4]).is_err());
    }

    #[test]
    fn random_transforms_stay_in_range_and_keep_labels() {
        let s = sample(|i| (i as f32 * 0.29).fract());
        for seed in 0..50 {
            let out = random_augment(&s, shape(), seed, 1.0);
            assert_eq!(out.class_id, s.class_id);
            assert!(out.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn zero_strength_is_neutral_except_mirroring() {
        let mut r = rng::stream(1, "t", 0);
        for _ in 0..100 {
            let t = BasicTransform::random_scaled(&mut r, 0.0);
            if t.kind != TransformKind::Mirroring {
                assert_eq!(t.magnitude, t.kind.neutral());
            }
        }
    }
}
