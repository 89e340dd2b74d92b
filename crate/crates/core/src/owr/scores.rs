//! Scoring functions and prediction rules of the three methods.

use serde::{Deserialize, Serialize};

use super::{ClassModel, Variant};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prediction {
    Known(u32),
    Unknown,
}

impl Prediction {
    pub fn is_unknown(self) -> bool {
        matches!(self, Prediction::Unknown)
    }
}

/// Per-class scores in class order plus the decision.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub scores: Vec<(u32, f64)>,
    pub prediction: Prediction,
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    sq_euclidean(a, b).sqrt()
}

pub(crate) fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_model(model: &ClassModel, z: &[f64]) -> Result<()> {
    match model.feature_dim() {
        None => Err(Error::Contract("classification needs at least one known class".into())),
        Some(d) if d != z.len() => Err(Error::dimension("feature vector", d, z.len())),
        _ => Ok(()),
    }
}

/// Highest score; ties resolve to the first class in class order.
fn argmax(scores: &[(u32, f64)]) -> u32 {
    scores
        .iter()
        .fold(None::<(u32, f64)>, |best, &(c, s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((c, s)),
        })
        .unwrap()
        .0
}

/// Lowest score; ties resolve to the first class in class order.
fn argmin(scores: &[(u32, f64)]) -> u32 {
    scores
        .iter()
        .fold(None::<(u32, f64)>, |best, &(c, s)| match best {
            Some((_, b)) if b <= s => best,
            _ => Some((c, s)),
        })
        .unwrap()
        .0
}

/// `phi_y = N (1 - d(z, mu_y) / tau)`; unknown iff every score is `<= 0`.
pub fn nno_classify(model: &ClassModel, z: &[f64]) -> Result<Classification> {
    check_model(model, z)?;
    let tau = model.global_threshold;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("NNO threshold must be > 0, got {tau}")));
    }
    let scores: Vec<(u32, f64)> = model
        .centroids
        .iter()
        .map(|(&c, mu)| (c, model.normalizer * (1.0 - euclidean(z, mu) / tau)))
        .collect();
    let prediction = if scores.iter().all(|&(_, s)| s <= 0.0) {
        Prediction::Unknown
    } else {
        Prediction::Known(argmax(&scores))
    };
    Ok(Classification { scores, prediction })
}

/// `phi_y = exp(-||z - mu_y|| / 2)`; unknown iff every score is `<= tau`.
pub fn deepnno_classify(model: &ClassModel, z: &[f64]) -> Result<Classification> {
    check_model(model, z)?;
    let scores: Vec<(u32, f64)> = model
        .centroids
        .iter()
        .map(|(&c, mu)| (c, (-0.5 * euclidean(z, mu)).exp()))
        .collect();
    let tau = model.global_threshold;
    let prediction = if scores.iter().all(|&(_, s)| s <= tau) {
        Prediction::Unknown
    } else {
        Prediction::Known(argmax(&scores))
    };
    Ok(Classification { scores, prediction })
}

/// `phi_y = ||z - mu_y||^2 / spread`; low is close. Unknown iff every score
/// exceeds its class threshold, otherwise the argmin.
pub fn bdoc_classify(model: &ClassModel, z: &[f64]) -> Result<Classification> {
    check_model(model, z)?;
    let spread = model.feature_std;
    if !(spread > 0.0) {
        return Err(Error::Contract(format!("feature spread must be > 0, got {spread}")));
    }
    let mut scores = Vec::with_capacity(model.centroids.len());
    let mut all_rejected = true;
    for (&c, mu) in &model.centroids {
        let tau = *model
            .class_thresholds
            .get(&c)
            .ok_or_else(|| Error::Contract(format!("missing rejection threshold for class {c}")))?;
        let s = sq_euclidean(z, mu) / spread;
        all_rejected &= s > tau;
        scores.push((c, s));
    }
    let prediction = if all_rejected {
        Prediction::Unknown
    } else {
        Prediction::Known(argmin(&scores))
    };
    Ok(Classification { scores, prediction })
}

/// Dispatches on `variant`. With `reject == false` the unknown branch of
/// the decision rule is disabled and the best known class is returned.
pub fn classify(variant: Variant, model: &ClassModel, z: &[f64], reject: bool) -> Result<Classification> {
    let mut c = match (variant, reject) {
        (Variant::Nno, true) => nno_classify(model, z)?,
        (Variant::DeepNno, _) => deepnno_classify(model, z)?,
        (Variant::Bdoc, true) => bdoc_classify(model, z)?,
        // Without rejection the thresholds are irrelevant; NNO's argmax of
        // N(1 - d/tau) is the nearest centroid for any tau > 0.
        (Variant::Nno, false) | (Variant::Bdoc, false) => {
            check_model(model, z)?;
            let scores: Vec<(u32, f64)> = model
                .centroids
                .iter()
                .map(|(&c, mu)| (c, sq_euclidean(z, mu)))
                .collect();
            let best = argmin(&scores);
            return Ok(Classification {
                scores,
                prediction: Prediction::Known(best),
            });
        }
    };
    if !reject {
        let best = match variant {
            Variant::Bdoc => argmin(&c.scores),
            _ => argmax(&c.scores),
        };
        c.prediction = Prediction::Known(best);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn model(centroids: &[(u32, Vec<f64>)]) -> ClassModel {
        ClassModel {
            centroids: centroids.iter().cloned().collect(),
            ..ClassModel::default()
        }
    }

    #[test]
    fn nno_examples() {
        let mut m = model(&[(0, vec![3.0, 4.0])]);
        m.global_threshold = 10.0;
        let c = nno_classify(&m, &[3.0, 4.0]).unwrap();
        assert_eq!(c.scores[0].1, 1.0);
        assert_eq!(c.prediction, Prediction::Known(0));

        let m0 = ClassModel {
            global_threshold: 10.0,
            ..model(&[(0, vec![0.0, 0.0])])
        };
        let c = nno_classify(&m0, &[3.0, 4.0]).unwrap();
        assert!((c.scores[0].1 - 0.5).abs() < 1e-15);

        let m1 = ClassModel {
            global_threshold: 2.5,
            ..model(&[(0, vec![0.0, 0.0])])
        };
        let c = nno_classify(&m1, &[3.0, 4.0]).unwrap();
        assert_eq!(c.scores[0].1, -1.0);
        assert_eq!(c.prediction, Prediction::Unknown);
    }

    #[test]
    fn nno_zero_threshold_is_config_error() {
        let m = model(&[(0, vec![0.0, 0.0])]);
        assert!(matches!(nno_classify(&m, &[1.0, 1.0]), Err(Error::Config(_))));
    }

    #[test]
    fn deepnno_examples() {
        let m = model(&[(0, vec![0.0, 0.0])]);
        assert_eq!(deepnno_classify(&m, &[0.0, 0.0]).unwrap().scores[0].1, 1.0);
        let s = deepnno_classify(&m, &[1.0, 0.0]).unwrap().scores[0].1;
        assert!((s - 0.606_530_659_712_633_4).abs() < 1e-12);

        let strict = ClassModel {
            global_threshold: 1.0,
            ..model(&[(0, vec![0.0, 0.0]), (1, vec![1.0, 1.0])])
        };
        for z in [[0.0, 0.0], [1.0, 1.0], [0.3, 0.2]] {
            assert!(deepnno_classify(&strict, &z).unwrap().prediction.is_unknown());
        }
    }

    #[test]
    fn bdoc_examples() {
        let mut m = model(&[(0, vec![0.0, 0.0])]);
        m.feature_std = 2.0;
        m.class_thresholds = BTreeMap::from([(0, 0.5)]);
        let c = bdoc_classify(&m, &[0.0, 0.0]).unwrap();
        assert_eq!((c.scores[0].1, c.prediction), (0.0, Prediction::Known(0)));
        let c = bdoc_classify(&m, &[1.0, 1.0]).unwrap();
        assert_eq!(c.scores[0].1, 1.0);
        assert_eq!(c.prediction, Prediction::Unknown);
        m.class_thresholds.clear();
        assert!(matches!(bdoc_classify(&m, &[0.0, 0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn empty_model_is_a_contract_error() {
        let m = ClassModel::default();
        assert!(matches!(deepnno_classify(&m, &[0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn disabled_rejection_returns_best_known() {
        let m = ClassModel {
            global_threshold: 1.0,
            ..model(&[(0, vec![0.0, 0.0]), (1, vec![5.0, 5.0])])
        };
        let c = classify(Variant::DeepNno, &m, &[4.0, 4.0], false).unwrap();
        assert_eq!(c.prediction, Prediction::Known(1));
        let c = classify(Variant::Nno, &m, &[1.0, 0.5], false).unwrap();
        assert_eq!(c.prediction, Prediction::Known(0));
    }
}
