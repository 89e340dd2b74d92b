use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Centroids, counts and rejection thresholds shared by all variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub centroids: BTreeMap<u32, Vec<f64>>,
    pub counts: BTreeMap<u32, u64>,
    /// Global rejection threshold (NNO, DeepNNO).
    pub global_threshold: f64,
    /// Per-class rejection thresholds (B-DOC).
    pub class_thresholds: BTreeMap<u32, f64>,
    /// NNO normalization factor.
    pub normalizer: f64,
    /// B-DOC feature spread.
    pub feature_std: f64,
}

impl Default for ClassModel {
    fn default() -> Self {
        ClassModel {
            centroids: BTreeMap::new(),
            counts: BTreeMap::new(),
            global_threshold: 0.0,
            class_thresholds: BTreeMap::new(),
            normalizer: 1.0,
            feature_std: 1.0,
        }
    }
}

impl ClassModel {
    pub fn classes(&self) -> Vec<u32> {
        self.centroids.keys().copied().collect()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.centroids.values().next().map(Vec::len)
    }

    /// Centroids stacked row-wise in class order.
    pub fn centroid_matrix(&self) -> Vec<f64> {
        self.centroids.values().flatten().copied().collect()
    }

    /// Streaming class means: `mu <- (n * mu + sum z) / (n + k)`.
    /// `z` is row-major `[labels.len(), dim]`.
    pub fn update_centroids_online(
        &mut self,
        z: &[f64],
        labels: &[u32],
        allowed: &BTreeSet<u32>,
    ) -> Result<()> {
        if labels.is_empty() {
            return Ok(());
        }
        let dim = z.len() / labels.len();
        if dim * labels.len() != z.len() {
            return Err(Error::dimension("update_centroids_online", labels.len(), z.len()));
        }
        if let Some(c) = labels.iter().find(|c| !allowed.contains(c)) {
            return Err(Error::Contract(format!("class {c} is not part of the current step")));
        }
        let mut sums: BTreeMap<u32, (Vec<f64>, u64)> = BTreeMap::new();
        for (row, &y) in z.chunks_exact(dim).zip(labels) {
            let e = sums.entry(y).or_insert_with(|| (vec![0.0; dim], 0));
            e.0.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            e.1 += 1;
        }
        for (y, (sum, k)) in sums {
            let n = self.counts.get(&y).copied().unwrap_or(0);
            let mu = self.centroids.entry(y).or_insert_with(|| vec![0.0; dim]);
            if mu.len() != dim {
                return Err(Error::dimension("centroid", mu.len(), dim));
            }
            let total = (n + k) as f64;
            for (m, s) in mu.iter_mut().zip(&sum) {
                *m = (n as f64 * *m + s) / total;
            }
            self.counts.insert(y, n + k);
        }
        Ok(())
    }

    /// Moves each present class's centroid toward its batch mean by
    /// `1 - momentum`; classes without a centroid start at the batch mean.
    pub fn ema_update(&mut self, z: &[f64], labels: &[u32], momentum: f64) {
        if labels.is_empty() {
            return;
        }
        let dim = z.len() / labels.len();
        let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
        for (row, &y) in z.chunks_exact(dim).zip(labels) {
            let e = sums.entry(y).or_insert_with(|| (vec![0.0; dim], 0));
            e.0.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            e.1 += 1;
        }
        for (y, (sum, k)) in sums {
            let mean: Vec<f64> = sum.iter().map(|s| s / k as f64).collect();
            match self.centroids.get_mut(&y) {
                Some(mu) => mu
                    .iter_mut()
                    .zip(&mean)
                    .for_each(|(m, b)| *m = momentum * *m + (1.0 - momentum) * b),
                None => {
                    self.centroids.insert(y, mean);
                }
            }
            *self.counts.entry(y).or_insert(0) += k as u64;
        }
    }

    /// Replaces the centroids of the given classes by exact means.
    pub fn reset_centroids(&mut self, z: &[f64], labels: &[u32]) -> Result<()> {
        let classes: BTreeSet<u32> = labels.iter().copied().collect();
        for c in &classes {
            self.centroids.remove(c);
            self.counts.remove(c);
        }
        self.update_centroids_online(z, labels, &classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn allowed(c: &[u32]) -> BTreeSet<u32> {
        c.iter().copied().collect()
    }

    #[test]
    fn single_sample_fresh_class() {
        let mut m = ClassModel::default();
        m.update_centroids_online(&[2.0, 2.0], &[5], &allowed(&[5])).unwrap();
        assert_eq!(m.centroids[&5], vec![2.0, 2.0]);
        assert_eq!(m.counts[&5], 1);
    }

    #[test]
    fn streamed_pair_is_mean() {
        let mut m = ClassModel::default();
        m.update_centroids_online(&[0.0, 0.0], &[1], &allowed(&[1])).unwrap();
        m.update_centroids_online(&[2.0, 2.0], &[1], &allowed(&[1])).unwrap();
        assert_eq!(m.centroids[&1], vec![1.0, 1.0]);
        assert_eq!(m.counts[&1], 2);
    }

    #[test]
    fn unseen_class_is_a_contract_error() {
        let mut m = ClassModel::default();
        let r = m.update_centroids_online(&[0.0, 0.0], &[3], &allowed(&[1]));
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn ema_initializes_then_blends() {
        let mut m = ClassModel::default();
        m.ema_update(&[1.0, 1.0, 3.0, 3.0], &[0, 0], 0.9);
        assert_eq!(m.centroids[&0], vec![2.0, 2.0]);
        m.ema_update(&[12.0, 12.0], &[0], 0.9);
        assert!((m.centroids[&0][0] - 3.0).abs() < 1e-12);
    }
}
