use serde::{Deserialize, Serialize};

use super::rotation::{RotationHead, RrConfig};
use super::rsda::{RsdaConfig, TransformPool};
use super::self_challenging::ScConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgMethod {
    #[default]
    None,
    Rsda,
    Rr,
    Sc,
}

impl DgMethod {
    pub const ALL: [DgMethod; 4] = [DgMethod::None, DgMethod::Rsda, DgMethod::Rr, DgMethod::Sc];

    pub fn name(self) -> &'static str {
        match self {
            DgMethod::None => "none",
            DgMethod::Rsda => "rsda",
            DgMethod::Rr => "rr",
            DgMethod::Sc => "sc",
        }
    }
}

impl std::fmt::Display for DgMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DgMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DgMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown dg method {s:?}, expected none, rsda, rr or sc")))
    }
}

/// Plugin selection plus the parameters of every plugin; only the selected
/// one is used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgConfig {
    pub method: DgMethod,
    pub rsda: RsdaConfig,
    pub rr: RrConfig,
    pub sc: ScConfig,
}

impl DgConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_method(method: DgMethod) -> Self {
        DgConfig {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rsda.validate()?;
        self.rr.validate()?;
        self.sc.validate()
    }
}

/// Mutable state of the selected plugin during one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgPlugin {
    pub config: DgConfig,
    pub pool: TransformPool,
    pub head: Option<RotationHead>,
    /// Training iterations seen so far, across steps.
    pub iterations: u64,
}

impl DgPlugin {
    pub fn new(config: DgConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let head = match config.method {
            DgMethod::Rr if config.rr.xi > 0.0 => Some(RotationHead::new(feature_dim, &config.rr, seed)?),
            _ => None,
        };
        Ok(DgPlugin {
            pool: TransformPool::new(config.rsda.clone()),
            config,
            head,
            iterations: 0,
        })
    }

    pub fn method(&self) -> DgMethod {
        self.config.method
    }
}
