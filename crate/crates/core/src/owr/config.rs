use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Nno,
    DeepNno,
    Bdoc,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Nno, Variant::DeepNno, Variant::Bdoc];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Nno => "nno",
            Variant::DeepNno => "deepnno",
            Variant::Bdoc => "bdoc",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nno" => Ok(Variant::Nno),
            "deepnno" => Ok(Variant::DeepNno),
            "bdoc" | "b-doc" => Ok(Variant::Bdoc),
            other => Err(Error::Config(format!(
                "unknown method '{other}', expected one of nno, deepnno, bdoc"
            ))),
        }
    }
}

/// How the B-DOC feature spread is pooled into one scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadPooling {
    /// Standard deviation over every feature component in the epoch.
    #[default]
    Component,
    /// Standard deviation of per-sample feature norms.
    SampleNorm,
}

/// Hyperparameters of one OWR method. Fields that do not apply to the
/// chosen variant are ignored but still range-checked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub variant: Variant,
    /// Distillation weight.
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    /// SNNL weight (B-DOC).
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::epochs_base")]
    pub epochs_base: usize,
    #[serde(default = "defaults::epochs_incremental")]
    pub epochs_incremental: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Weight of misclassified samples in the DeepNNO threshold update.
    #[serde(default = "defaults::neg_weight")]
    pub neg_weight: f64,
    /// Threshold learning rate (B-DOC).
    #[serde(default = "defaults::tau_lr")]
    pub tau_lr: f64,
    #[serde(default = "defaults::tau_epochs")]
    pub tau_epochs: usize,
    /// Number of candidate thresholds for NNO; 0 uses every observed distance.
    #[serde(default)]
    pub tau_grid_points: usize,
    #[serde(default = "defaults::exemplars_per_class")]
    pub exemplars_per_class: usize,
    /// Fraction of each step's training samples held out for thresholds.
    #[serde(default = "defaults::reserve_fraction")]
    pub reserve_fraction: f64,
    /// Magnitude scale of the augmentations applied to reserved samples.
    #[serde(default = "defaults::reserve_augment_strength")]
    pub reserve_augment_strength: f32,
    /// EMA momentum of centroids while the extractor trains.
    #[serde(default = "defaults::centroid_momentum")]
    pub centroid_momentum: f64,
    #[serde(default)]
    pub spread_pooling: SpreadPooling,
    /// Global gradient-norm cap; 0 disables clipping.
    #[serde(default = "defaults::grad_clip")]
    pub grad_clip: f64,
    /// Hidden widths of the feature extractor.
    #[serde(default = "defaults::hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "defaults::feature_dim")]
    pub feature_dim: usize,
}

pub(crate) mod defaults {
    pub fn lambda() -> f64 {
        1.0
    }
    pub fn gamma() -> f64 {
        0.5
    }
    pub fn lr() -> f64 {
        0.05
    }
    pub fn weight_decay() -> f64 {
        5e-3
    }
    pub fn epochs_base() -> usize {
        40
    }
    pub fn epochs_incremental() -> usize {
        25
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn neg_weight() -> f64 {
        2.0
    }
    pub fn tau_lr() -> f64 {
        1.0
    }
    pub fn tau_epochs() -> usize {
        200
    }
    pub fn exemplars_per_class() -> usize {
        5
    }
    pub fn reserve_fraction() -> f64 {
        0.1
    }
    pub fn reserve_augment_strength() -> f32 {
        0.25
    }
    pub fn centroid_momentum() -> f64 {
        0.9
    }
    pub fn grad_clip() -> f64 {
        5.0
    }
    pub fn hidden() -> Vec<usize> {
        vec![128]
    }
    pub fn feature_dim() -> usize {
        32
    }
}

impl MethodConfig {
    pub fn new(variant: Variant) -> Self {
        MethodConfig {
            variant,
            lambda: defaults::lambda(),
            gamma: defaults::gamma(),
            lr: defaults::lr(),
            weight_decay: defaults::weight_decay(),
            epochs_base: defaults::epochs_base(),
            epochs_incremental: defaults::epochs_incremental(),
            batch_size: defaults::batch_size(),
            neg_weight: defaults::neg_weight(),
            tau_lr: defaults::tau_lr(),
            tau_epochs: defaults::tau_epochs(),
            tau_grid_points: 0,
            exemplars_per_class: defaults::exemplars_per_class(),
            reserve_fraction: defaults::reserve_fraction(),
            reserve_augment_strength: defaults::reserve_augment_strength(),
            centroid_momentum: defaults::centroid_momentum(),
            spread_pooling: SpreadPooling::Component,
            grad_clip: defaults::grad_clip(),
            hidden: defaults::hidden(),
            feature_dim: defaults::feature_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("weight_decay", self.weight_decay),
            ("neg_weight", self.neg_weight),
            ("tau_lr", self.tau_lr),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(0.0..0.5).contains(&self.reserve_fraction) {
            return Err(Error::Config("reserve_fraction must be in [0, 0.5)".into()));
        }
        if !(0.0..=1.0).contains(&self.reserve_augment_strength) {
            return Err(Error::Config("reserve_augment_strength must be in [0, 1]".into()));
        }
        if self.feature_dim < 2 || self.hidden.contains(&0) {
            return Err(Error::Config("feature_dim must be >= 2 and hidden widths positive".into()));
        }
        if !(0.0..1.0).contains(&self.centroid_momentum) {
            return Err(Error::Config("centroid_momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_variant_names() {
        assert_eq!("B-DOC".parse::<Variant>().unwrap(), Variant::Bdoc);
        assert!("knn".parse::<Variant>().is_err());
    }

    #[test]
    fn validation_catches_ranges() {
        let mut c = MethodConfig::new(Variant::DeepNno);
        c.validate().unwrap();
        c.gamma = -1.0;
        assert!(c.validate().is_err());
        let mut c = MethodConfig::new(Variant::Nno);
        c.lr = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let ok: MethodConfig = toml::from_str("variant = \"bdoc\"\nlambda = 2.0").unwrap();
        assert_eq!(ok.lambda, 2.0);
        assert!(toml::from_str::<MethodConfig>("variant = \"bdoc\"\nlamda = 2.0").is_err());
    }
}
