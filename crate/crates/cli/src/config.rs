//! Engine configuration: TOML or JSON, every section optional.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use editloop_core::controller::LoopConfig;
use editloop_core::evaluator::{ScorerConfig, ScorerKind};
use editloop_core::executor::{RoutingTable, Tool};
use editloop_core::http::EndpointConfig;
use editloop_core::planner::PlannerConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Endpoint name that, when present, enables the remote perceiver.
pub const PERCEIVER_ENDPOINT: &str = "perceiver";

/// Prefix of environment variables that override endpoint URLs, as in
/// `EDITLOOP_ENDPOINT_EDITOR_URL` for the endpoint named `editor`.
pub const ENV_PREFIX: &str = "EDITLOOP_ENDPOINT_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Dotted field path when the error concerns one field.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { path, .. } => Some(path),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub max_iterations: usize,
    pub patience: usize,
    pub epsilon: f64,
    pub ceiling: f64,
}

impl Default for LoopSection {
    fn default() -> Self {
        let d = LoopConfig::default();
        Self {
            max_iterations: d.max_iterations,
            patience: d.patience,
            epsilon: d.epsilon,
            ceiling: d.ceiling,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(rename = "loop")]
    pub loop_: LoopSection,
    pub planner: PlannerConfig,
    pub scorers: ScorerConfig,
    pub routing: RoutingTable,
    pub endpoints: BTreeMap<String, EndpointConfig>,
    pub io: IoSection,
    /// Overrides `planner.rng_seed` when set.
    pub seed: Option<u64>,
}

impl EngineConfig {
    /// Parses TOML or JSON (chosen by extension, JSON when the text starts
    /// with `{`), applies environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        let mut cfg = Self::parse(&text, json)?;
        cfg.apply_env(std::env::vars());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults plus environment overrides.
    pub fn from_env() -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_env(std::env::vars());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, ConfigError> {
        let value: serde_json::Value = if json {
            serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?
        };
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::invalid(path, e.into_inner().to_string())
        })
    }

    /// `EDITLOOP_ENDPOINT_<NAME>_URL` sets the URL of endpoint `<name>`
    /// (lowercased), creating the endpoint if needed.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) {
        for (k, v) in vars {
            let Some(name) = k.strip_prefix(ENV_PREFIX).and_then(|r| r.strip_suffix("_URL")) else {
                continue;
            };
            if name.is_empty() {
                continue;
            }
            let name = name.to_ascii_lowercase();
            match self.endpoints.get_mut(&name) {
                Some(ep) => ep.url = v,
                None => {
                    self.endpoints.insert(name, EndpointConfig::new(v));
                }
            }
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        let mut planner = self.planner.clone();
        if let Some(seed) = self.seed {
            planner.rng_seed = seed;
        }
        LoopConfig {
            max_iterations: self.loop_.max_iterations,
            patience: self.loop_.patience,
            epsilon: self.loop_.epsilon,
            ceiling: self.loop_.ceiling,
            planner,
            scorer: self.scorers.clone(),
            routing: self.routing.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.loop_config().validate().map_err(|(field, msg)| {
            let path = match field.as_str() {
                "scorer" => "scorers".to_string(),
                f if f.starts_with("planner.") || f == "routing" => f.to_string(),
                f => format!("loop.{f}"),
            };
            ConfigError::invalid(path, msg)
        })?;
        for (name, ep) in &self.endpoints {
            if ep.url.trim().is_empty() {
                return Err(ConfigError::invalid(format!("endpoints.{name}.url"), "must not be empty"));
            }
            if !(ep.timeout_secs.is_finite() && ep.timeout_secs > 0.0) {
                return Err(ConfigError::invalid(format!("endpoints.{name}.timeout_secs"), "must be positive"));
            }
            if ep.max_in_flight == 0 {
                return Err(ConfigError::invalid(format!("endpoints.{name}.max_in_flight"), "must be at least 1"));
            }
        }
        for (cat, tools) in &self.routing.routes {
            for t in tools {
                if let Tool::Editor(name) = t {
                    if !self.endpoints.contains_key(name) {
                        return Err(ConfigError::invalid(
                            format!("routing.routes.{cat}"),
                            format!("editor '{name}' has no entry in endpoints"),
                        ));
                    }
                }
            }
        }
        for (i, e) in self.scorers.entries.iter().enumerate() {
            if let ScorerKind::External { endpoint, fallback: None, .. } = &e.kind {
                if !self.endpoints.contains_key(endpoint) {
                    return Err(ConfigError::invalid(
                        format!("scorers.entries[{i}].endpoint"),
                        format!("endpoint '{endpoint}' is not configured and no fallback is declared"),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = EngineConfig::parse("", false).unwrap();
        assert_eq!(c, EngineConfig::default());
        assert_eq!(c.loop_config(), LoopConfig::default());
    }

    #[test]
    fn negative_budget_names_the_field() {
        let e = EngineConfig::parse("[planner]\nbudget = -5\n", false).unwrap_err();
        assert_eq!(e.field(), Some("planner.budget"));
        let e = EngineConfig::parse(r#"{"planner": {"budget": 0}}"#, true)
            .unwrap()
            .validate()
            .unwrap_err();
        assert_eq!(e.field(), Some("planner.budget"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = EngineConfig::parse("[loop]\nmax_iters = 2\n", false).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { .. }), "{e}");
    }

    #[test]
    fn loop_fields_are_prefixed() {
        let c = EngineConfig::parse("[loop]\nmax_iterations = 1\npatience = 2\n", false).unwrap();
        assert_eq!(c.validate().unwrap_err().field(), Some("loop.patience"));
    }

    #[test]
    fn env_overrides_urls() {
        let mut c = EngineConfig::parse("[endpoints.editor]\nurl = \"http://a\"\n", false).unwrap();
        c.apply_env([
            ("EDITLOOP_ENDPOINT_EDITOR_URL".to_string(), "http://b".to_string()),
            ("EDITLOOP_ENDPOINT_PERCEIVER_URL".to_string(), "http://c".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ]);
        assert_eq!(c.endpoints["editor"].url, "http://b");
        assert_eq!(c.endpoints["perceiver"].url, "http://c");
    }

    #[test]
    fn seed_overrides_planner_seed() {
        let c = EngineConfig::parse("seed = 42\n[planner]\nrng_seed = 1\n", false).unwrap();
        assert_eq!(c.loop_config().planner.rng_seed, 42);
    }

    #[test]
    fn editor_routes_need_endpoints() {
        let c = EngineConfig {
            routing: RoutingTable::default().with_editor("kontext"),
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().field().unwrap().starts_with("routing.routes"));
    }
}
