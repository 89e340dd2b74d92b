use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, ImageShape, Sample};
use crate::error::{Error, Result};
use crate::numerics::rng;

/// Parametric acquisition condition. Applied in the fixed order
/// scale jitter, color map, contrast, blur, noise, occlusion, clamp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub domain_id: u32,
    /// Per-channel gain; indexed modulo its length.
    #[serde(default = "one")]
    pub color_gain: Vec<f32>,
    /// Per-channel bias; indexed modulo its length.
    #[serde(default = "zero")]
    pub color_bias: Vec<f32>,
    /// Contrast factor around the image mean.
    #[serde(default = "unit")]
    pub contrast: f32,
    #[serde(default)]
    pub blur_radius: usize,
    #[serde(default)]
    pub noise_sigma: f32,
    #[serde(default)]
    pub occlusion_count: usize,
    #[serde(default)]
    pub occlusion_max: usize,
    #[serde(default = "unit")]
    pub scale_min: f32,
    #[serde(default = "unit")]
    pub scale_max: f32,
}

fn one() -> Vec<f32> {
    vec![1.0]
}
fn zero() -> Vec<f32> {
    vec![0.0]
}
fn unit() -> f32 {
    1.0
}

impl DomainSpec {
    pub fn identity(domain_id: u32) -> Self {
        DomainSpec {
            domain_id,
            color_gain: one(),
            color_bias: zero(),
            contrast: 1.0,
            blur_radius: 0,
            noise_sigma: 0.0,
            occlusion_count: 0,
            occlusion_max: 0,
            scale_min: 1.0,
            scale_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
        if self.color_gain.is_empty() || self.color_bias.is_empty() {
            return Err(Error::Config("color_gain and color_bias need at least one entry".into()));
        }
        if !finite(&self.color_gain) || !finite(&self.color_bias) {
            return Err(Error::Config("color map must be finite".into()));
        }
        if !(self.contrast.is_finite() && self.contrast >= 0.0) {
            return Err(Error::Config("contrast must be finite and non-negative".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be finite and non-negative".into()));
        }
        if self.occlusion_count > 0 && self.occlusion_max == 0 {
            return Err(Error::Config("occlusion_max must be positive when occluding".into()));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(Error::Config("scale jitter needs 0 < scale_min <= scale_max".into()));
        }
        Ok(())
    }
}

/// The three shipped domains: clean, stylized (global color and contrast
/// remap), cluttered (dim lighting, blur, noise, occlusion, scale jitter).
pub fn default_domains() -> Vec<DomainSpec> {
    vec![
        DomainSpec::identity(0),
        DomainSpec {
            domain_id: 1,
            color_gain: vec![0.85, 0.9, 1.1],
            color_bias: vec![0.08, 0.04, -0.04],
            contrast: 0.75,
            ..DomainSpec::identity(1)
        },
        DomainSpec {
            domain_id: 2,
            color_gain: vec![0.75, 0.8, 0.9],
            color_bias: vec![0.06, 0.06, 0.02],
            contrast: 0.8,
            blur_radius: 1,
            noise_sigma: 0.1,
            occlusion_count: 2,
            occlusion_max: 7,
            scale_min: 0.65,
            scale_max: 0.9,
        },
    ]
}

pub(crate) fn bilinear(px: &[f32], shape: ImageShape, y: f64, x: f64, ch: usize) -> f32 {
    let y = y.clamp(0.0, (shape.height - 1) as f64);
    let x = x.clamp(0.0, (shape.width - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(shape.height - 1), (x0 + 1).min(shape.width - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |r, c| px[shape.index(r, c, ch)] as f64;
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    (top * (1.0 - fy) + bot * fy) as f32
}

/// Rescales content about the image center, clamping at the borders.
pub(crate) fn rescale(px: &[f32], shape: ImageShape, factor: f64) -> Vec<f32> {
    let (cy, cx) = ((shape.height as f64 - 1.0) / 2.0, (shape.width as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; px.len()];
    for r in 0..shape.height {
        for c in 0..shape.width {
            let sy = (r as f64 - cy) / factor + cy;
            let sx = (c as f64 - cx) / factor + cx;
            for ch in 0..shape.channels {
                out[shape.index(r, c, ch)] = bilinear(px, shape, sy, sx, ch);
            }
        }
    }
    out
}

fn box_blur(px: &[f32], shape: ImageShape, radius: usize) -> Vec<f32> {
    let mut out = vec![0.0; px.len()];
    let r = radius as isize;
    for row in 0..shape.height as isize {
        for col in 0..shape.width as isize {
            for ch in 0..shape.channels {
                let (mut acc, mut n) = (0.0f32, 0.0f32);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (y, x) = (row + dy, col + dx);
                        if y >= 0 && x >= 0 && (y as usize) < shape.height && (x as usize) < shape.width {
                            acc += px[shape.index(y as usize, x as usize, ch)];
                            n += 1.0;
                        }
                    }
                }
                out[shape.index(row as usize, col as usize, ch)] = acc / n;
            }
        }
    }
    out
}

/// Seed for the noise stage, exposed so callers can replay a realization.
pub fn noise_stream(seed: u64) -> rng::Rng {
    rng::stream(seed, "domain-noise", 0)
}

/// Renders `sample` under `spec`. Class and instance ids are preserved;
/// the domain id becomes `spec.domain_id`.
pub fn apply_domain(sample: &Sample, spec: &DomainSpec, shape: ImageShape, seed: u64) -> Sample {
    let mut px = sample.pixels.clone();
    if spec.scale_min != 1.0 || spec.scale_max != 1.0 {
        let mut r = rng::stream(seed, "domain-scale", 0);
        let factor = if spec.scale_min < spec.scale_max {
            r.random_range(spec.scale_min as f64..spec.scale_max as f64)
        } else {
            spec.scale_min as f64
        };
        px = rescale(&px, shape, factor);
    }
    let identity_map = spec.color_gain.iter().all(|&g| g == 1.0) && spec.color_bias.iter().all(|&b| b == 0.0);
    if !identity_map {
        for (i, p) in px.iter_mut().enumerate() {
            let ch = i % shape.channels;
            let g = spec.color_gain[ch % spec.color_gain.len()];
            let b = spec.color_bias[ch % spec.color_bias.len()];
            *p = *p * g + b;
        }
    }
    if spec.contrast != 1.0 {
        let mean = px.iter().map(|&p| p as f64).sum::<f64>() / px.len() as f64;
        let m = mean as f32;
        px.iter_mut().for_each(|p| *p = (*p - m) * spec.contrast + m);
    }
    if spec.blur_radius > 0 {
        px = box_blur(&px, shape, spec.blur_radius);
    }
    if spec.noise_sigma > 0.0 {
        let mut r = noise_stream(seed);
        let normal = Normal::new(0.0, spec.noise_sigma as f64).unwrap();
        px.iter_mut().for_each(|p| *p += normal.sample(&mut r) as f32);
    }
    if spec.occlusion_count > 0 {
        let mut r = rng::stream(seed, "domain-occlusion", 0);
        for _ in 0..spec.occlusion_count {
            let ph = r.random_range(1..=spec.occlusion_max.min(shape.height));
            let pw = r.random_range(1..=spec.occlusion_max.min(shape.width));
            let top = r.random_range(0..=shape.height - ph);
            let left = r.random_range(0..=shape.width - pw);
            let color: Vec<f32> = (0..shape.channels).map(|_| r.random::<f32>()).collect();
            for row in top..top + ph {
                for col in left..left + pw {
                    for (ch, &c) in color.iter().enumerate() {
                        px[shape.index(row, col, ch)] = c;
                    }
                }
            }
        }
    }
    px.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    Sample {
        pixels: px,
        class_id: sample.class_id,
        domain_id: spec.domain_id,
        instance_id: sample.instance_id,
    }
}

/// Applies a domain to every sample, with a per-sample seed.
pub fn shift_dataset(ds: &Dataset, spec: &DomainSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let shape = ds.shape();
    let samples = ds
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| apply_domain(s, spec, shape, rng::derive_seed(seed, "domain", ((spec.domain_id as u64) << 32) | i as u64)))
        .collect();
    Dataset::from_samples(shape, samples)
}
