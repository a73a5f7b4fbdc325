//! Settings resolved from the config file and command-line flags.
//!
//! Flags override config keys, which override built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::ValueEnum;
use roomgroup_core::pipeline::DEFAULT_TAU;
use roomgroup_core::{RemoteService, RuleTable};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Pair scores from a CSV file.
    Precomputed,
    /// Cached embeddings scored by a dense head.
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    /// Answers from a ground-truth document.
    Oracle,
    /// Always the first offered bed type.
    FirstOption,
    /// HTTP predictor service.
    Remote,
}

/// Keys accepted in the config file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<BackendKind>,
    pub tau: Option<f64>,
    pub seed: Option<u64>,
    pub predictor: Option<PredictorKind>,
    pub endpoint: Option<String>,
    pub retries: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub rules: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("--config: cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("--config: {}: {e}", path.display())))
    }
}

/// Flag values before merging; `None` means not given.
#[derive(Debug, Clone, Default)]
pub struct FlagValues {
    pub backend: Option<BackendKind>,
    pub tau: Option<f64>,
    pub seed: Option<u64>,
    pub predictor: Option<PredictorKind>,
    pub endpoint: Option<String>,
    pub retries: Option<usize>,
    pub rules: Option<PathBuf>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub backend: BackendKind,
    pub tau: f64,
    pub seed: u64,
    pub predictor: PredictorKind,
    pub endpoint: Option<String>,
    pub retries: usize,
    pub timeout: Duration,
    pub rules: RuleTable,
    pub jobs: usize,
}

impl Settings {
    pub fn resolve(flags: FlagValues, file: FileConfig) -> Result<Self, CliError> {
        let tau = flags.tau.or(file.tau).unwrap_or(DEFAULT_TAU);
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(CliError::Config(format!("--tau: must be in (0, 1], got {tau}")));
        }
        let jobs = flags.jobs.or(file.jobs).unwrap_or(1);
        if jobs == 0 {
            return Err(CliError::Config("--jobs: must be at least 1".into()));
        }
        let rules = match flags.rules.or(file.rules) {
            Some(path) => {
                require_file("--rules", &path)?;
                RuleTable::load(&path).map_err(|e| CliError::Config(format!("--rules: {e}")))?
            }
            None => RuleTable::default(),
        };
        Ok(Settings {
            backend: flags.backend.or(file.backend).unwrap_or(BackendKind::Precomputed),
            tau,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            predictor: flags.predictor.or(file.predictor).unwrap_or(PredictorKind::FirstOption),
            endpoint: flags.endpoint.or(file.endpoint),
            retries: flags.retries.or(file.retries).unwrap_or(RemoteService::DEFAULT_RETRIES),
            timeout: Duration::from_secs(file.timeout_secs.unwrap_or(30)),
            rules,
            jobs,
        })
    }
}

/// Fails with a config error naming `flag` unless `path` is a readable file.
pub fn require_file(flag: &str, path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{flag}: file not found: {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: FileConfig = toml::from_str("tau = 0.7\nseed = 3\npredictor = \"remote\"\njobs = 2").unwrap();
        let flags = FlagValues {
            seed: Some(9),
            ..FlagValues::default()
        };
        let s = Settings::resolve(flags, file).unwrap();
        assert_eq!(s.tau, 0.7);
        assert_eq!(s.seed, 9);
        assert_eq!(s.predictor, PredictorKind::Remote);
        assert_eq!(s.jobs, 2);
        assert_eq!(s.backend, BackendKind::Precomputed);
        assert_eq!(s.retries, 2);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(toml::from_str::<FileConfig>("colour = 1").is_err());
        let flags = FlagValues {
            tau: Some(0.0),
            ..FlagValues::default()
        };
        assert!(matches!(Settings::resolve(flags, FileConfig::default()), Err(CliError::Config(m)) if m.contains("--tau")));
        let flags = FlagValues {
            rules: Some("/nonexistent/rules.json".into()),
            ..FlagValues::default()
        };
        assert!(matches!(Settings::resolve(flags, FileConfig::default()), Err(CliError::Config(m)) if m.contains("--rules")));
    }
}
