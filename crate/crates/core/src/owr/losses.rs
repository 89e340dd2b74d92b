//! Training objectives, recorded on a [`Tape`].

use log::warn;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// Probability clamp for the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Row index of each label within `classes`.
pub fn label_indices(labels: &[u32], classes: &[u32]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|y| {
            classes
                .iter()
                .position(|c| c == y)
                .ok_or_else(|| Error::Contract(format!("label {y} has no centroid")))
        })
        .collect()
}

/// Row-major one-hot matrix `[labels.len(), num_classes]`.
pub fn one_hot(indices: &[usize], num_classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; indices.len() * num_classes];
    for (i, &j) in indices.iter().enumerate() {
        out[i * num_classes + j] = 1.0;
    }
    out
}

/// Mean over batch and classes of `-[t ln p + (1 - t) ln(1 - p)]`, with
/// `p` clamped to `[eps, 1 - eps]`.
pub fn bce_loss(tape: &mut Tape, scores: Var, targets: &[f64]) -> Var {
    let n = targets.len() as f64;
    let p = tape.clamp(scores, BCE_EPS, 1.0 - BCE_EPS);
    let log_p = tape.ln(p);
    let neg = tape.scale(p, -1.0);
    let q = tape.add_scalar(neg, 1.0);
    let log_q = tape.ln(q);
    let pos_term = tape.weighted_sum(log_p, targets.to_vec());
    let neg_term = tape.weighted_sum(log_q, targets.iter().map(|t| 1.0 - t).collect());
    let total = tape.add(pos_term, neg_term);
    tape.scale(total, -1.0 / n)
}

/// Mean softmax cross-entropy of `[n, k]` logits against class indices.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Var {
    let k = tape.shape(logits)[1];
    let log_probs = tape.log_softmax_rows(logits);
    let picked = tape.weighted_sum(log_probs, one_hot(targets, k));
    tape.scale(picked, -1.0 / targets.len() as f64)
}

/// Batch mean of `||z - z_old||`, the previous extractor's features
/// entering as constants.
pub fn distillation_loss(tape: &mut Tape, z: Var, z_old: &[f64]) -> Result<Var> {
    if tape.value(z).len() != z_old.len() {
        return Err(Error::dimension("distillation features", tape.value(z).len(), z_old.len()));
    }
    let old = tape.constant(tape.shape(z).to_vec(), z_old.to_vec());
    let diff = tape.sub(z, old);
    let sq = tape.square(diff);
    let per_row = tape.sum_rows(sq);
    let norms = tape.sqrt(per_row);
    Ok(tape.mean(norms))
}

/// `exp(-||z - mu_y|| / 2)` for every row and centroid.
pub fn deepnno_scores(tape: &mut Tape, z: Var, centroids: &[f64]) -> Var {
    let d = tape.shape(z)[1];
    let mu = tape.constant(vec![centroids.len() / d, d], centroids.to_vec());
    let sq = tape.sq_dist(z, mu);
    let dist = tape.sqrt(sq);
    let half = tape.scale(dist, -0.5);
    tape.exp(half)
}

/// `||z - mu_y||^2 / spread` for every row and centroid.
pub fn bdoc_scores(tape: &mut Tape, z: Var, centroids: &[f64], spread: f64) -> Var {
    let d = tape.shape(z)[1];
    let mu = tape.constant(vec![centroids.len() / d, d], centroids.to_vec());
    let sq = tape.sq_dist(z, mu);
    tape.scale(sq, 1.0 / spread)
}

/// Negative squared distances, the nearest-class-mean logits.
pub fn ncm_logits(tape: &mut Tape, z: Var, centroids: &[f64]) -> Var {
    let d = tape.shape(z)[1];
    let mu = tape.constant(vec![centroids.len() / d, d], centroids.to_vec());
    let sq = tape.sq_dist(z, mu);
    tape.scale(sq, -1.0)
}

/// Soft nearest-neighbour loss over the batch.
///
/// Per anchor `x`: `-log(sum_{same class} e^{-||z - z_j||^2 / spread} /
/// sum_{others} e^{-||z - z_k||^2 / spread})`, averaged over anchors that
/// have at least one same-class peer. Anchors without a peer are skipped;
/// with no valid anchor the loss is a constant 0.
pub fn snnl_loss(tape: &mut Tape, z: Var, labels: &[u32], spread: f64) -> Result<Var> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::Contract(format!("SNNL needs a batch of at least 2, got {n}")));
    }
    if tape.shape(z)[0] != n {
        return Err(Error::dimension("SNNL labels", tape.shape(z)[0], n));
    }
    let mut same = vec![0.0; n * n];
    let mut others = vec![0.0; n * n];
    let mut valid = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                others[i * n + j] = 1.0;
                if labels[i] == labels[j] {
                    same[i * n + j] = 1.0;
                    valid[i] = 1.0;
                }
            }
        }
    }
    let n_valid: f64 = valid.iter().sum();
    if n_valid == 0.0 {
        warn!("SNNL batch has no same-class pairs; loss is 0");
        return Ok(tape.constant(vec![1], vec![0.0]));
    }
    let dist = tape.sq_dist(z, z);
    let sim = tape.scale(dist, -1.0 / spread);
    let num = tape.masked_logsumexp_rows(sim, same);
    let den = tape.masked_logsumexp_rows(sim, others);
    let per_anchor = tape.sub(den, num);
    Ok(tape.weighted_sum(per_anchor, valid.iter().map(|v| v / n_valid).collect()))
}
