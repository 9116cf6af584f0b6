//! Weighted scorer ensemble and the accept/revert rule.
//!
//! Every scorer reports a raw value in `[0, 1]`; the aggregate is
//! `Σ wᵢ·rawᵢ / Σ wᵢ` over the scorers that succeeded on that call.

mod builtin;
mod external;
pub mod nss;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{EndpointConfig, ExternalError};
use crate::imaging::{content_hash, PixelImage};

pub use builtin::{
    colorfulness_score, contrast_score, exposure_score, nss_quality, sharpness_score, tone_score, BuiltinMetric,
};
pub use external::{ExternalScorer, ScoreRequest, ScoreResponse};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("image too small for {metric}: {width}x{height} (need at least {min}x{min})")]
    ImageTooSmall {
        metric: &'static str,
        width: usize,
        height: usize,
        min: usize,
    },
    #[error(transparent)]
    External(#[from] ExternalError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("every scorer failed: {0:?}")]
    AllScorersFailed(Vec<String>),
    #[error("score reports come from different scorer configurations")]
    ConfigMismatch,
    #[error("invalid scorer configuration: {0}")]
    InvalidConfig(String),
    #[error("scorer '{scorer}' references unknown endpoint '{endpoint}'")]
    UnknownEndpoint { scorer: String, endpoint: String },
}

/// One quality signal mapped into `[0, 1]`.
pub trait Scorer: Send + Sync {
    fn score(&self, image: &PixelImage) -> Result<f64, ScoreError>;

    /// Remote scorers are fanned out on threads; local ones run inline.
    fn is_remote(&self) -> bool {
        false
    }
}

impl<F> Scorer for F
where
    F: Fn(&PixelImage) -> Result<f64, ScoreError> + Send + Sync,
{
    fn score(&self, image: &PixelImage) -> Result<f64, ScoreError> {
        self(image)
    }
}

/// Anything that turns an image into a [`ScoreReport`].
pub trait ImageEvaluator: Send + Sync {
    fn evaluate(&self, image: &PixelImage) -> Result<ScoreReport, EvalError>;
}

impl<T: ImageEvaluator + ?Sized> ImageEvaluator for Arc<T> {
    fn evaluate(&self, image: &PixelImage) -> Result<ScoreReport, EvalError> {
        (**self).evaluate(image)
    }
}

impl<T: ImageEvaluator + ?Sized> ImageEvaluator for &T {
    fn evaluate(&self, image: &PixelImage) -> Result<ScoreReport, EvalError> {
        (**self).evaluate(image)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

impl Decoding {
    /// Sampling defaults sent to an external UGC-quality scorer.
    pub fn ugc_default() -> Self {
        Self {
            max_tokens: 32,
            temperature: 0.7,
            top_p: 0.9,
        }
    }

    /// Sampling defaults sent to an external perceiver.
    pub fn perceiver_default() -> Self {
        Self {
            max_tokens: 1024,
            temperature: 0.7,
            top_p: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerKind {
    Builtin {
        metric: BuiltinMetric,
    },
    External {
        /// Name of an entry in the engine's endpoint table.
        endpoint: String,
        /// Native score range, used when the service does not report one.
        #[serde(default)]
        range: Option<[f64; 2]>,
        #[serde(default)]
        reference_text: Option<String>,
        #[serde(default)]
        decoding: Option<Decoding>,
        /// Built-in metric used when the endpoint is not configured at all.
        #[serde(default)]
        fallback: Option<BuiltinMetric>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerEntry {
    pub id: String,
    pub weight: f64,
    pub kind: ScorerKind,
}

impl ScorerEntry {
    pub fn builtin(id: &str, weight: f64, metric: BuiltinMetric) -> Self {
        Self {
            id: id.to_string(),
            weight,
            kind: ScorerKind::Builtin { metric },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub entries: Vec<ScorerEntry>,
}

pub const SEMANTIC_WEIGHT: f64 = 1.0;
pub const AESTHETIC_WEIGHT: f64 = 2.0;
pub const PREFERENCE_WEIGHT: f64 = 2.0;
pub const UGC_WEIGHT: f64 = 0.8;

impl Default for ScorerConfig {
    /// Four slots weighted 1.0 / 2.0 / 2.0 / 0.8 (normalizer 5.8), each
    /// backed by its offline built-in substitute.
    fn default() -> Self {
        Self {
            entries: vec![
                ScorerEntry::builtin("semantic", SEMANTIC_WEIGHT, BuiltinMetric::Tone),
                ScorerEntry::builtin("aesthetic", AESTHETIC_WEIGHT, BuiltinMetric::Colorfulness),
                ScorerEntry::builtin("preference", PREFERENCE_WEIGHT, BuiltinMetric::NssQuality),
                ScorerEntry::builtin("ugc", UGC_WEIGHT, BuiltinMetric::Sharpness),
            ],
        }
    }
}

impl ScorerConfig {
    pub fn normalizer(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.entries.is_empty() {
            return Err(EvalError::InvalidConfig("at least one scorer is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(EvalError::InvalidConfig(format!(
                    "entries[{i}].weight must be positive (got {})",
                    e.weight
                )));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(EvalError::InvalidConfig(format!("duplicate scorer id '{}'", e.id)));
            }
            if let ScorerKind::External { range: Some([lo, hi]), .. } = &e.kind {
                if lo.partial_cmp(hi) != Some(std::cmp::Ordering::Less) {
                    return Err(EvalError::InvalidConfig(format!("entries[{i}].range must satisfy lo < hi")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerScore {
    pub id: String,
    pub weight: f64,
    pub raw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmittedScorer {
    pub id: String,
    pub weight: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_scorer: Vec<ScorerScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub omitted: Vec<OmittedScorer>,
    pub normalizer: f64,
    pub aggregate: f64,
    #[serde(with = "hex_digest")]
    pub image_digest: u64,
}

impl ScoreReport {
    /// Combines raw scores; omitted scorers contribute to neither sum.
    pub fn combine(per_scorer: Vec<ScorerScore>, omitted: Vec<OmittedScorer>, image_digest: u64) -> Self {
        let normalizer: f64 = per_scorer.iter().map(|s| s.weight).sum();
        let weighted: f64 = per_scorer.iter().map(|s| s.weight * s.raw).sum();
        let aggregate = if normalizer > 0.0 { weighted / normalizer } else { 0.0 };
        Self {
            per_scorer,
            omitted,
            normalizer,
            aggregate,
            image_digest,
        }
    }

    /// Report for a single unit-weight scorer; convenient for scripted evaluators.
    pub fn single(id: &str, raw: f64, image_digest: u64) -> Self {
        Self::combine(
            vec![ScorerScore {
                id: id.to_string(),
                weight: 1.0,
                raw,
            }],
            Vec::new(),
            image_digest,
        )
    }

    /// Sorted ids of every configured scorer, succeeded or omitted.
    pub fn scorer_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .per_scorer
            .iter()
            .map(|s| s.id.as_str())
            .chain(self.omitted.iter().map(|s| s.id.as_str()))
            .collect();
        ids.sort_unstable();
        ids
    }
}

mod hex_digest {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Accept,
    Revert,
}

/// Accept only a strict improvement beyond `epsilon`.
pub fn compare_and_decide(current: &ScoreReport, candidate: &ScoreReport, epsilon: f64) -> Result<Decision, EvalError> {
    if current.scorer_ids() != candidate.scorer_ids() {
        return Err(EvalError::ConfigMismatch);
    }
    Ok(if candidate.aggregate > current.aggregate + epsilon {
        Decision::Accept
    } else {
        Decision::Revert
    })
}

struct ActiveScorer {
    id: String,
    weight: f64,
    scorer: Arc<dyn Scorer>,
}

/// The configured ensemble.
pub struct Evaluator {
    scorers: Vec<ActiveScorer>,
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.scorers.iter().map(|s| (&s.id, s.weight)))
            .finish()
    }
}

impl Evaluator {
    /// Builds the ensemble. External entries whose endpoint is absent from
    /// `endpoints` use their declared built-in fallback, or fail.
    pub fn from_config(cfg: &ScorerConfig, endpoints: &BTreeMap<String, EndpointConfig>) -> Result<Self, EvalError> {
        cfg.validate()?;
        let mut scorers = Vec::with_capacity(cfg.entries.len());
        for e in &cfg.entries {
            let scorer: Arc<dyn Scorer> = match &e.kind {
                ScorerKind::Builtin { metric } => Arc::new(*metric),
                ScorerKind::External {
                    endpoint,
                    range,
                    reference_text,
                    decoding,
                    fallback,
                } => match (endpoints.get(endpoint), fallback) {
                    (Some(ep), _) => Arc::new(ExternalScorer::new(
                        ep.clone(),
                        *range,
                        reference_text.clone(),
                        decoding.clone(),
                    )),
                    (None, Some(metric)) => Arc::new(*metric),
                    (None, None) => {
                        return Err(EvalError::UnknownEndpoint {
                            scorer: e.id.clone(),
                            endpoint: endpoint.clone(),
                        })
                    }
                },
            };
            scorers.push(ActiveScorer {
                id: e.id.clone(),
                weight: e.weight,
                scorer,
            });
        }
        Ok(Self { scorers })
    }

    pub fn builtin_default() -> Self {
        Self::from_config(&ScorerConfig::default(), &BTreeMap::new()).expect("default scorer config is valid")
    }

    /// Ensemble over caller-supplied scorers.
    pub fn from_scorers(entries: Vec<(String, f64, Arc<dyn Scorer>)>) -> Result<Self, EvalError> {
        if entries.is_empty() {
            return Err(EvalError::InvalidConfig("at least one scorer is required".into()));
        }
        if let Some((id, w, _)) = entries.iter().find(|(_, w, _)| !(w.is_finite() && *w > 0.0)) {
            return Err(EvalError::InvalidConfig(format!("weight of '{id}' must be positive (got {w})")));
        }
        Ok(Self {
            scorers: entries
                .into_iter()
                .map(|(id, weight, scorer)| ActiveScorer { id, weight, scorer })
                .collect(),
        })
    }

    pub fn normalizer(&self) -> f64 {
        self.scorers.iter().map(|s| s.weight).sum()
    }

    fn run_all(&self, image: &PixelImage) -> Vec<Result<f64, ScoreError>> {
        if self.scorers.iter().any(|s| s.scorer.is_remote()) && self.scorers.len() > 1 {
            std::thread::scope(|scope| {
                let handles: Vec<_> = self
                    .scorers
                    .iter()
                    .map(|s| scope.spawn(move || s.scorer.score(image)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join().unwrap_or_else(|_| {
                            Err(ScoreError::External(ExternalError::Unavailable("scorer panicked".into())))
                        })
                    })
                    .collect()
            })
        } else {
            self.scorers.iter().map(|s| s.scorer.score(image)).collect()
        }
    }
}

impl ImageEvaluator for Evaluator {
    fn evaluate(&self, image: &PixelImage) -> Result<ScoreReport, EvalError> {
        let mut per_scorer = Vec::new();
        let mut omitted = Vec::new();
        for (s, result) in self.scorers.iter().zip(self.run_all(image)) {
            match result {
                Ok(raw) if raw.is_finite() => per_scorer.push(ScorerScore {
                    id: s.id.clone(),
                    weight: s.weight,
                    raw: raw.clamp(0.0, 1.0),
                }),
                Ok(raw) => omitted.push(OmittedScorer {
                    id: s.id.clone(),
                    weight: s.weight,
                    reason: format!("non-finite score {raw}"),
                }),
                Err(e) => {
                    log::debug!("scorer {} skipped: {e}", s.id);
                    omitted.push(OmittedScorer {
                        id: s.id.clone(),
                        weight: s.weight,
                        reason: e.to_string(),
                    })
                }
            }
        }
        if per_scorer.is_empty() {
            return Err(EvalError::AllScorersFailed(omitted.into_iter().map(|o| o.reason).collect()));
        }
        Ok(ScoreReport::combine(per_scorer, omitted, content_hash(image)))
    }
}
