//! JSON run configuration shared by every subcommand.
//!
//! Each subcommand reads only the sections it needs and reports a missing or
//! malformed one with its field path. Relative paths are resolved against the
//! directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use qnnguard::explorer::ExploreConfig;
use qnnguard::faultsim::{Campaign, FaultModel};
use qnnguard::WordLayout;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Quantized model header; the blob sits next to it with extension `.bin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantized: Option<PathBuf>,
    /// Protected image header; the blob sits next to it with extension `.bin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protected: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bitwidth: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<WordLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<Campaign>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore: Option<ExploreConfig>,
    /// Result files consumed by `report`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
}

/// A parsed config and the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config = parse(&text)?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Resolved path of a required path-valued field.
    pub fn path(&self, field: &str, value: &Option<PathBuf>) -> CliResult<PathBuf> {
        value
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::config(field, "required for this subcommand"))
    }

    /// Overrides every master seed in the config.
    pub fn apply_seed(&mut self, seed: u64) {
        if let Some(f) = &mut self.config.fault {
            f.master_seed = seed;
        }
        if let Some(c) = &mut self.config.campaign {
            c.fault.master_seed = seed;
        }
        if let Some(e) = &mut self.config.explore {
            e.campaign.master_seed = seed;
        }
    }
}

pub fn parse(text: &str) -> CliResult<Config> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = match e.path().to_string() {
            p if p == "." => "<root>".to_string(),
            p => p,
        };
        CliError::config(field, e.inner())
    })
}

pub fn required<'a, T>(field: &str, value: &'a Option<T>) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::config(field, "required for this subcommand"))
}

/// Companion blob of a JSON header (`x.json` -> `x.bin`).
pub fn blob_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_path_reported_for_bad_values() {
        let err = parse(r#"{"campaign":{"mode":"bernoulli","p":"x","master_seed":1,"n_runs":2}}"#)
            .unwrap_err();
        match err {
            CliError::Config { field, .. } => assert!(field.starts_with("campaign"), "{field}"),
            other => panic!("{other:?}"),
        }
        let err = parse(r#"{"layout":{"word_width":8,"value_bits":8,"protected_bits":1,"copies":2,"policy":"majority"}}"#)
            .unwrap_err();
        assert!(
            matches!(err, CliError::Config { ref field, .. } if field == "layout"),
            "{err}"
        );
        let err = parse(r#"{"explore":{"bitwidths":[8]}}"#).unwrap_err();
        assert!(
            matches!(err, CliError::Config { ref field, .. } if field == "explore"),
            "{err}"
        );
        let err = parse(r#"{"modle":"x"}"#).unwrap_err();
        assert!(matches!(err, CliError::Config { .. }));
    }

    #[test]
    fn seed_override_reaches_every_section() {
        let mut lc = LoadedConfig {
            config: parse(
                r#"{"fault":{"mode":"exact_k","k":1,"master_seed":1},
                    "campaign":{"mode":"bernoulli","p":0.1,"master_seed":2,"n_runs":1}}"#,
            )
            .unwrap(),
            base_dir: PathBuf::from("."),
        };
        lc.apply_seed(99);
        assert_eq!(lc.config.fault.unwrap().master_seed, 99);
        assert_eq!(lc.config.campaign.unwrap().fault.master_seed, 99);
    }
}
