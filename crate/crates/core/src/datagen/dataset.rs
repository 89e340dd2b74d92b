use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        ImageShape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }
}

impl Default for ImageShape {
    fn default() -> Self {
        ImageShape::new(16, 16, 3)
    }
}

/// One labelled image, channel-last row-major pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub pixels: Vec<f32>,
    pub class_id: u32,
    pub domain_id: u32,
    pub instance_id: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    shape: ImageShape,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(shape: ImageShape) -> Self {
        Dataset {
            shape,
            samples: Vec::new(),
        }
    }

    pub fn from_samples(shape: ImageShape, samples: Vec<Sample>) -> Result<Self> {
        let mut ds = Dataset::new(shape);
        for s in samples {
            ds.push(s)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.pixels.len() != self.shape.len() {
            return Err(Error::dimension(
                "dataset sample",
                self.shape.len(),
                sample.pixels.len(),
            ));
        }
        if let Some(p) = sample.pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Contract(format!("pixel value {p} outside [0, 1]")));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn classes(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.class_id).collect()
    }

    /// Held-out instance per class: the largest instance id.
    pub fn test_instances(&self) -> BTreeMap<u32, u32> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            let e = out.entry(s.class_id).or_insert(s.instance_id);
            *e = (*e).max(s.instance_id);
        }
        out
    }

    /// Instance-wise split: one held-out instance per class for testing,
    /// all other instances for training. Returns sample indices.
    pub fn instance_split(&self) -> (Vec<usize>, Vec<usize>) {
        let held = self.test_instances();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, s) in self.samples.iter().enumerate() {
            if held[&s.class_id] == s.instance_id {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Flattens samples into a row-major `f64` matrix.
pub fn to_matrix<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Vec<f64> {
    samples
        .into_iter()
        .flat_map(|s| s.pixels.iter().map(|&p| p as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(class: u32, instance: u32) -> Sample {
        Sample {
            pixels: vec![0.5; 12],
            class_id: class,
            domain_id: 0,
            instance_id: instance,
        }
    }

    #[test]
    fn push_validates_extent_and_range() {
        let mut ds = Dataset::new(ImageShape::new(2, 2, 3));
        assert!(ds.push(sample(0, 0)).is_ok());
        let mut bad = sample(0, 0);
        bad.pixels.pop();
        assert!(ds.push(bad).is_err());
        let mut bad = sample(0, 0);
        bad.pixels[3] = 1.5;
        assert!(ds.push(bad).is_err());
    }

    #[test]
    fn split_holds_out_last_instance() {
        let shape = ImageShape::new(2, 2, 3);
        let ds = Dataset::from_samples(
            shape,
            vec![sample(0, 0), sample(0, 1), sample(1, 3), sample(1, 2), sample(0, 1)],
        )
        .unwrap();
        let (train, test) = ds.instance_split();
        assert_eq!(train, vec![0, 3]);
        assert_eq!(test, vec![1, 2, 4]);
    }
}
