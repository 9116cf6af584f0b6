use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::heuristic::HeuristicPerceiver;
use super::{PerceiveError, Perceiver, PerceiverContext, Scene};
use crate::action::{Category, EditAction, Origin, ProceduralParams};
use crate::evaluator::Decoding;
use crate::executor::Operator;
use crate::http::{EndpointConfig, JsonClient};
use crate::imaging::ImageState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub action: String,
    pub accepted: bool,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProposalRequest {
    pub image: String,
    pub scene: String,
    pub memory: Vec<MemoryEntry>,
    pub user_prompt: Option<String>,
    pub k: usize,
    pub decoding: Decoding,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProposedAction {
    pub id: String,
    pub category: String,
    pub instruction: String,
    #[serde(default)]
    pub params: Option<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProposalResponse {
    pub actions: Vec<ProposedAction>,
}

/// Client for a remote vision-language perceiver.
#[derive(Debug)]
pub struct ExternalPerceiver {
    client: JsonClient,
    decoding: Decoding,
    scenes: HeuristicPerceiver,
}

impl ExternalPerceiver {
    pub fn new(endpoint: EndpointConfig) -> Self {
        Self {
            client: JsonClient::new(endpoint),
            decoding: Decoding::perceiver_default(),
            scenes: HeuristicPerceiver::default(),
        }
    }

    pub fn request(state: &ImageState, ctx: &PerceiverContext, decoding: &Decoding) -> Result<ProposalRequest, PerceiveError> {
        Ok(ProposalRequest {
            image: state
                .image
                .to_base64_png()
                .map_err(|e| PerceiveError::MalformedResponse(e.to_string()))?,
            scene: ctx.scene.as_str().to_string(),
            memory: ctx
                .memory
                .flattened()
                .filter(|t| t.executed)
                .map(|t| MemoryEntry {
                    action: t.action_id.clone(),
                    accepted: t.accepted,
                    delta: t.score_delta,
                })
                .collect(),
            user_prompt: ctx.user_prompt.clone(),
            k: ctx.k,
            decoding: decoding.clone(),
        })
    }

    /// Validates a service reply into at most `k` distinct actions.
    pub fn parse_response(resp: ProposalResponse, k: usize) -> Result<Vec<EditAction>, PerceiveError> {
        let mut out = Vec::new();
        let mut ids = BTreeSet::new();
        let mut keys = BTreeSet::new();
        for p in resp.actions {
            let action = parse_action(p)?;
            if ids.insert(action.id.clone()) && keys.insert(action.dedup_key()) {
                out.push(action);
            }
            if out.len() == k {
                break;
            }
        }
        Ok(out)
    }
}

fn parse_action(p: ProposedAction) -> Result<EditAction, PerceiveError> {
    let bad = |m: String| PerceiveError::MalformedResponse(m);
    let category: Category = p.category.parse().map_err(|e| bad(format!("{e}")))?;
    let action = match p.params {
        None => EditAction::generative(p.id.clone(), category, p.instruction.clone()),
        Some(map) => {
            let operator: Operator = map
                .get("operator")
                .and_then(|v| v.as_str())
                .ok_or_else(|| bad(format!("action '{}' params lack an operator name", p.id)))?
                .parse()
                .map_err(|e| bad(format!("{e}")))?;
            let mut params = ProceduralParams {
                operator,
                params: BTreeMap::new(),
            };
            for (k, v) in map.iter().filter(|(k, _)| k.as_str() != "operator") {
                let n = v
                    .as_f64()
                    .ok_or_else(|| bad(format!("parameter {k} of '{}' is not a number", p.id)))?;
                params.params.insert(k.clone(), n);
            }
            EditAction::procedural(p.id.clone(), category, p.instruction.clone(), params)
        }
    }
    .with_origin(Origin::ExternalPerceiver);
    action.validate().map_err(|e| bad(e.to_string()))?;
    Ok(action)
}

impl Perceiver for ExternalPerceiver {
    fn classify_scene(&self, state: &ImageState) -> Scene {
        self.scenes.classify_scene(state)
    }

    fn propose(&self, state: &ImageState, ctx: &PerceiverContext) -> Result<Vec<EditAction>, PerceiveError> {
        let request = Self::request(state, ctx, &self.decoding)?;
        let resp: ProposalResponse = self.client.post_json(&request)?;
        Self::parse_response(resp, ctx.k)
    }
}
