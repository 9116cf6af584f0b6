use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::ops::Operator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    GlobalTone,
    ContrastAdjust,
    ColorBalance,
    LocalRetouch,
    SemanticEdit,
    BackgroundAlter,
    Geometric,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::GlobalTone,
        Category::ContrastAdjust,
        Category::ColorBalance,
        Category::LocalRetouch,
        Category::SemanticEdit,
        Category::BackgroundAlter,
        Category::Geometric,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::GlobalTone => "GlobalTone",
            Category::ContrastAdjust => "ContrastAdjust",
            Category::ColorBalance => "ColorBalance",
            Category::LocalRetouch => "LocalRetouch",
            Category::SemanticEdit => "SemanticEdit",
            Category::BackgroundAlter => "BackgroundAlter",
            Category::Geometric => "Geometric",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ActionError;

    /// Accepts the canonical names as well as snake_case / spaced variants
    /// ("global_tone", "global tone").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let cat = match key.as_str() {
            "globaltone" | "tone" => Category::GlobalTone,
            "contrastadjust" | "contrast" => Category::ContrastAdjust,
            "colorbalance" | "color" | "colour" | "colourbalance" => Category::ColorBalance,
            "localretouch" | "retouch" => Category::LocalRetouch,
            "semanticedit" | "semantic" => Category::SemanticEdit,
            "backgroundalter" | "background" => Category::BackgroundAlter,
            "geometric" | "geometry" => Category::Geometric,
            _ => return Err(ActionError::UnknownCategory(s.to_string())),
        };
        Ok(cat)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Heuristic,
    ExternalPerceiver,
    UserGuided,
}

/// Operator name plus named real parameters. Unlisted parameters take the
/// operator's default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProceduralParams {
    pub operator: Operator,
    pub params: BTreeMap<String, f64>,
}

impl ProceduralParams {
    pub fn new(operator: Operator) -> Self {
        Self {
            operator,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn validate(&self) -> Result<(), ActionError> {
        self.operator.spec().check(&self.params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionPayload {
    Procedural(ProceduralParams),
    Generative { text: String },
}

impl ActionPayload {
    /// Stable textual key used to deduplicate proposals.
    pub fn key(&self) -> String {
        match self {
            ActionPayload::Procedural(p) => {
                let mut s = p.operator.name().to_string();
                for (k, v) in &p.params {
                    s.push_str(&format!(";{k}={v:.6}"));
                }
                s
            }
            ActionPayload::Generative { text } => format!("gen:{}", text.trim().to_lowercase()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditAction {
    pub id: String,
    pub category: Category,
    pub instruction: String,
    pub payload: ActionPayload,
    pub origin: Origin,
}

impl EditAction {
    pub fn procedural(
        id: impl Into<String>,
        category: Category,
        instruction: impl Into<String>,
        params: ProceduralParams,
    ) -> Self {
        Self {
            id: id.into(),
            category,
            instruction: instruction.into(),
            payload: ActionPayload::Procedural(params),
            origin: Origin::Heuristic,
        }
    }

    pub fn generative(id: impl Into<String>, category: Category, instruction: impl Into<String>) -> Self {
        let instruction = instruction.into();
        Self {
            id: id.into(),
            category,
            payload: ActionPayload::Generative {
                text: instruction.clone(),
            },
            instruction,
            origin: Origin::Heuristic,
        }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    pub fn validate(&self) -> Result<(), ActionError> {
        if self.id.trim().is_empty() {
            return Err(ActionError::EmptyId);
        }
        match &self.payload {
            ActionPayload::Procedural(p) => p.validate(),
            ActionPayload::Generative { text } if text.trim().is_empty() => {
                Err(ActionError::EmptyInstruction(self.id.clone()))
            }
            ActionPayload::Generative { .. } => Ok(()),
        }
    }

    pub fn dedup_key(&self) -> (Category, String) {
        (self.category, self.payload.key())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error("unknown action category '{0}'")]
    UnknownCategory(String),
    #[error("unknown operator '{0}'")]
    UnknownOperator(String),
    #[error("operator {operator} has no parameter '{param}'")]
    UnknownParam { operator: String, param: String },
    #[error("parameter {operator}.{param} = {value} outside [{min}, {max}]")]
    ParamOutOfRange {
        operator: String,
        param: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid parameters for {operator}: {reason}")]
    InvalidParams { operator: String, reason: String },
    #[error("action id must not be empty")]
    EmptyId,
    #[error("generative action '{0}' has an empty instruction")]
    EmptyInstruction(String),
}
