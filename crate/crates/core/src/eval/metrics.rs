use crate::error::{Error, Result};
use crate::owr::Prediction;

/// Fraction of known-class samples classified correctly. With rejection,
/// an unknown prediction counts as wrong; without it the predictions must
/// come from a decision rule with the unknown branch disabled.
pub fn closed_world_accuracy(predictions: &[Prediction], labels: &[u32], with_rejection: bool) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Contract("closed-world accuracy of an empty test set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::dimension("closed-world labels", predictions.len(), labels.len()));
    }
    if !with_rejection && predictions.iter().any(|p| p.is_unknown()) {
        return Err(Error::Contract(
            "predictions without rejection must not contain unknown".into(),
        ));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| **p == Prediction::Known(**y))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Fraction of unknown-class samples predicted unknown.
pub fn open_set_accuracy(predictions: &[Prediction]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Contract("open-set accuracy of an empty unknown set".into()));
    }
    Ok(predictions.iter().filter(|p| p.is_unknown()).count() as f64 / predictions.len() as f64)
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn owr_harmonic(cwr: f64, osa: f64) -> f64 {
    if cwr + osa == 0.0 {
        0.0
    } else {
        2.0 * cwr * osa / (cwr + osa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Prediction::{Known, Unknown};

    #[test]
    fn closed_world_examples() {
        let labels = [1, 2, 3, 4, 5];
        let all = labels.map(Known);
        assert_eq!(closed_world_accuracy(&all, &labels, true).unwrap(), 1.0);
        assert_eq!(closed_world_accuracy(&[Unknown; 5], &labels, true).unwrap(), 0.0);
        let mixed = [Known(1), Known(2), Known(3), Unknown, Known(9)];
        assert_eq!(closed_world_accuracy(&mixed, &labels, true).unwrap(), 0.6);
        assert!(closed_world_accuracy(&mixed, &labels, false).is_err());
        assert!(matches!(closed_world_accuracy(&[], &[], true), Err(Error::Contract(_))));
    }

    #[test]
    fn open_set_examples() {
        assert_eq!(open_set_accuracy(&[Unknown; 3]).unwrap(), 1.0);
        assert_eq!(open_set_accuracy(&[Known(0); 3]).unwrap(), 0.0);
        let mut p = vec![Unknown; 7];
        p.extend([Known(1); 3]);
        assert_eq!(open_set_accuracy(&p).unwrap(), 0.7);
        assert!(matches!(open_set_accuracy(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn harmonic_examples() {
        assert_eq!(owr_harmonic(0.5, 0.5), 0.5);
        assert_eq!(owr_harmonic(1.0, 0.0), 0.0);
        assert_eq!(owr_harmonic(0.0, 0.0), 0.0);
        assert!((owr_harmonic(0.6, 0.4) - 0.48).abs() < 1e-15);
    }
}
