//! Candidate action proposal.
//!
//! The heuristic backend maps image statistics, scene type and user prompt
//! keywords to corrective edits and runs fully offline. The external backend
//! speaks a JSON protocol to a vision-language service and falls back to the
//! heuristic one when the service is down or answers nonsense.

mod external;
mod heuristic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::EditAction;
use crate::http::ExternalError;
use crate::imaging::ImageState;
use crate::memory::EditingMemory;

pub use crate::stats::{compute_statistics, ImageStatistics};
pub use external::{ExternalPerceiver, MemoryEntry, ProposalRequest, ProposalResponse, ProposedAction};
pub use heuristic::{classify_statistics, HeuristicPerceiver, Thresholds};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scene {
    Portrait,
    Landscape,
    Urban,
    Food,
    Object,
    Night,
    Unknown,
}

impl Scene {
    pub fn as_str(self) -> &'static str {
        match self {
            Scene::Portrait => "Portrait",
            Scene::Landscape => "Landscape",
            Scene::Urban => "Urban",
            Scene::Food => "Food",
            Scene::Object => "Object",
            Scene::Night => "Night",
            Scene::Unknown => "Unknown",
        }
    }
}

/// Memory exclusion window, in rounds.
pub const MEMORY_WINDOW: usize = 3;

#[derive(Clone, Debug)]
pub struct PerceiverContext {
    pub scene: Scene,
    pub memory: EditingMemory,
    pub user_prompt: Option<String>,
    pub k: usize,
}

impl PerceiverContext {
    pub fn new(scene: Scene, k: usize) -> Self {
        Self {
            scene,
            memory: EditingMemory::default(),
            user_prompt: None,
            k: k.max(1),
        }
    }

    pub fn with_prompt(mut self, prompt: Option<String>) -> Self {
        self.user_prompt = prompt.filter(|p| !p.trim().is_empty());
        self
    }

    pub fn with_memory(mut self, memory: EditingMemory) -> Self {
        self.memory = memory;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceiveError {
    #[error("external perceiver unavailable: {0}")]
    ExternalUnavailable(String),
    #[error("malformed perceiver response: {0}")]
    MalformedResponse(String),
}

impl From<ExternalError> for PerceiveError {
    fn from(e: ExternalError) -> Self {
        match e {
            ExternalError::Malformed(m) => PerceiveError::MalformedResponse(m),
            other => PerceiveError::ExternalUnavailable(other.to_string()),
        }
    }
}

pub trait Perceiver: Send + Sync {
    fn classify_scene(&self, state: &ImageState) -> Scene;

    /// At most `ctx.k` distinct candidate actions for `state`.
    fn propose(&self, state: &ImageState, ctx: &PerceiverContext) -> Result<Vec<EditAction>, PerceiveError>;
}

impl<T: Perceiver + ?Sized> Perceiver for std::sync::Arc<T> {
    fn classify_scene(&self, state: &ImageState) -> Scene {
        (**self).classify_scene(state)
    }

    fn propose(&self, state: &ImageState, ctx: &PerceiverContext) -> Result<Vec<EditAction>, PerceiveError> {
        (**self).propose(state, ctx)
    }
}

impl<T: Perceiver + ?Sized> Perceiver for &T {
    fn classify_scene(&self, state: &ImageState) -> Scene {
        (**self).classify_scene(state)
    }

    fn propose(&self, state: &ImageState, ctx: &PerceiverContext) -> Result<Vec<EditAction>, PerceiveError> {
        (**self).propose(state, ctx)
    }
}

/// Tries `primary`, falling back to the heuristic backend on any error.
pub struct FallbackPerceiver<P> {
    primary: P,
    fallback: HeuristicPerceiver,
}

impl<P: Perceiver> FallbackPerceiver<P> {
    pub fn new(primary: P) -> Self {
        Self {
            primary,
            fallback: HeuristicPerceiver::default(),
        }
    }
}

impl<P: Perceiver> Perceiver for FallbackPerceiver<P> {
    fn classify_scene(&self, state: &ImageState) -> Scene {
        self.primary.classify_scene(state)
    }

    fn propose(&self, state: &ImageState, ctx: &PerceiverContext) -> Result<Vec<EditAction>, PerceiveError> {
        match self.primary.propose(state, ctx) {
            Ok(actions) => Ok(actions),
            Err(e) => {
                log::warn!("perceiver fallback to heuristic backend: {e}");
                self.fallback.propose(state, ctx)
            }
        }
    }
}
