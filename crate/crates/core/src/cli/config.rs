//! Experiment configuration files and run manifests.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{build_schedule, default_domains, BenchmarkParams, DomainSpec, EpisodeSchedule};
use crate::dg::DgConfig;
use crate::error::{Error, Result};
use crate::eval::SearchGrid;
use crate::owr::{MethodConfig, Variant};

/// Environment variable holding a comma-separated seed list that replaces
/// the configured one.
pub const SEED_ENV: &str = "OWRLAB_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Share of the classes that are ever learned; the rest stay unknown.
    pub known_fraction: f64,
    pub base_count: usize,
    pub step_size: usize,
    pub train_domain: u32,
    pub test_domains: Vec<u32>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            known_fraction: 0.5,
            base_count: 4,
            step_size: 2,
            train_domain: 0,
            test_domains: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    pub num_trials: usize,
    pub grid: SearchGrid,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            num_trials: 2,
            grid: SearchGrid::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Version that wrote the file; set in manifests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owrlab_version: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Directory of `domain_<id>.owrd` files; generated in memory when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub benchmark: BenchmarkParams,
    #[serde(default = "default_domains")]
    pub domains: Vec<DomainSpec>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodConfig>,
    #[serde(default = "default_plugins")]
    pub plugins: Vec<DgConfig>,
    #[serde(default)]
    pub validation: ValidationConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output() -> PathBuf {
    PathBuf::from("owrlab-out")
}

fn default_methods() -> Vec<MethodConfig> {
    Variant::ALL.into_iter().map(MethodConfig::new).collect()
}

fn default_plugins() -> Vec<DgConfig> {
    vec![DgConfig::none()]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            owrlab_version: None,
            seeds: default_seeds(),
            output_dir: default_output(),
            data_dir: None,
            benchmark: BenchmarkParams::default(),
            domains: default_domains(),
            schedule: ScheduleConfig::default(),
            methods: default_methods(),
            plugins: default_plugins(),
            validation: ValidationConfig::default(),
        }
    }
}

/// Parses `text` strictly. Errors name the offending key path.
pub fn parse_config(text: &str, source_name: &str) -> Result<ExperimentConfig> {
    let parse_err = |path: String, e: toml::de::Error| Error::Parse {
        source_name: source_name.to_string(),
        offset: e.span().map_or(0, |s| s.start as u64),
        message: if path.is_empty() || path == "." {
            e.message().to_string()
        } else {
            format!("at key `{path}`: {}", e.message())
        },
    };
    let de = toml::Deserializer::parse(text).map_err(|e| parse_err(String::new(), e))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        parse_err(path, e.into_inner())
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

/// Parses a comma-separated seed list.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| Error::Config(format!("{SEED_ENV}: `{s}` is not a non-negative integer")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Replaces the seed list from the environment when the variable is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(text) = std::env::var(SEED_ENV) {
            self.seeds = parse_seed_list(&text)?;
        }
        Ok(())
    }

    pub fn classes(&self) -> Vec<u32> {
        (0..self.benchmark.num_classes as u32).collect()
    }

    pub fn schedule_for(&self, seed: u64) -> Result<EpisodeSchedule> {
        let s = &self.schedule;
        build_schedule(&self.classes(), s.known_fraction, s.base_count, s.step_size, seed)
    }

    /// Checks every precondition a command relies on before work starts.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if let Some(s) = self.seeds.iter().find(|&&s| s > i64::MAX as u64) {
            return Err(Error::Config(format!("seed {s} exceeds {}", i64::MAX)));
        }
        let unique: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.benchmark.validate()?;
        let mut ids = BTreeSet::new();
        for d in &self.domains {
            d.validate()?;
            if !ids.insert(d.domain_id) {
                return Err(Error::Config(format!("domain {} is defined twice", d.domain_id)));
            }
        }
        let s = &self.schedule;
        if s.test_domains.is_empty() {
            return Err(Error::Config("schedule.test_domains must not be empty".into()));
        }
        for d in std::iter::once(&s.train_domain).chain(&s.test_domains) {
            if !ids.contains(d) {
                return Err(Error::Config(format!("domain {d} is used by the schedule but not defined")));
            }
        }
        for &seed in &self.seeds {
            self.schedule_for(seed)?;
        }
        if self.methods.is_empty() || self.plugins.is_empty() {
            return Err(Error::Config("methods and plugins must not be empty".into()));
        }
        for m in &self.methods {
            m.validate()?;
        }
        for p in &self.plugins {
            p.validate()?;
        }
        self.validation.grid.validate()?;
        if self.validation.num_trials == 0 {
            return Err(Error::Config("validation.num_trials must be positive".into()));
        }
        Ok(())
    }

    /// Fully resolved TOML with every default spelled out.
    pub fn to_manifest(&self) -> Result<String> {
        let mut m = self.clone();
        m.owrlab_version = Some(env!("CARGO_PKG_VERSION").to_string());
        toml::to_string_pretty(&m).map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config("", "t").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let err = parse_config("[[methods]]\nvariant = \"nno\"\nlearning_rate = 1\n", "t").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("methods[0]"), "{msg}");
        assert!(msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn wrong_type_names_key_and_type() {
        let err = parse_config("[schedule]\nbase_count = \"four\"\n", "t").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("schedule.base_count"), "{msg}");
        assert!(msg.contains("usize"), "{msg}");
    }

    #[test]
    fn manifest_round_trips() {
        let mut c = ExperimentConfig::default();
        c.plugins.push(DgConfig::with_method(crate::dg::DgMethod::Sc));
        let text = c.to_manifest().unwrap();
        let back = parse_config(&text, "manifest").unwrap();
        assert_eq!(back.owrlab_version.as_deref(), Some(env!("CARGO_PKG_VERSION")));
        assert_eq!(ExperimentConfig { owrlab_version: None, ..back }, c);
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("3, 4,5").unwrap(), vec![3, 4, 5]);
        assert!(parse_seed_list("1,x").is_err());
    }

    #[test]
    fn schedule_domains_must_exist() {
        let mut c = ExperimentConfig::default();
        c.schedule.test_domains.push(9);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
