use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::scores::sq_euclidean;
use crate::datagen::Sample;

/// Stored samples of past classes, rehearsed in later steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExemplarMemory {
    pub capacity: usize,
    pub per_class: BTreeMap<u32, Vec<Sample>>,
}

impl ExemplarMemory {
    pub fn new(capacity: usize) -> Self {
        ExemplarMemory {
            capacity,
            per_class: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.per_class.values().flatten()
    }

    pub fn store(&mut self, class: u32, samples: Vec<Sample>) {
        if self.capacity == 0 {
            return;
        }
        let mut samples = samples;
        samples.truncate(self.capacity);
        self.per_class.insert(class, samples);
    }
}

/// Indices of the `capacity` rows of `features` (row-major, `dim` wide)
/// closest to `centroid`, nearest first; ties keep input order.
pub fn select_exemplars(features: &[f64], dim: usize, centroid: &[f64], capacity: usize) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = features
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, z)| (sq_euclidean(z, centroid), i))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(capacity).map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_cases() {
        let f = [0.0, 5.0, 1.0, -0.5, 9.0];
        assert_eq!(select_exemplars(&f, 1, &[0.0], 10).len(), 5);
        assert_eq!(select_exemplars(&f, 1, &[0.0], 1), vec![0]);
        assert_eq!(select_exemplars(&f, 1, &[0.0], 3), vec![0, 3, 2]);
        assert!(select_exemplars(&f, 1, &[0.0], 0).is_empty());
    }

    #[test]
    fn zero_capacity_memory_stays_empty() {
        let mut m = ExemplarMemory::new(0);
        m.store(1, vec![]);
        assert!(m.is_empty() && m.per_class.is_empty());
    }
}
