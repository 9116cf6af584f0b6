//! Applies edit actions: native operators for parametric edits, external
//! editors for semantic ones, routed per action category.

mod generative;
pub mod ops;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionError, ActionPayload, Category, EditAction, ProceduralParams};
use crate::evaluator::ImageEvaluator;
use crate::http::{EndpointConfig, ExternalError};
use crate::imaging::PixelImage;

pub use generative::{apply_generative, EditRequest, EditResponse, GenerativeEditor, HttpEditor};
pub use ops::{apply_procedural, Operator, OperatorSpec, ParamSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    External(#[from] ExternalError),
    #[error("editor '{0}' is not configured")]
    UnknownEditor(String),
    #[error("no procedural proxy declared for category {0}")]
    NoProxy(Category),
    #[error("every tool failed for action '{action}': {failures:?}")]
    AllToolsFailed { action: String, failures: Vec<String> },
}

/// Applies an action to an image.
pub trait ActionExecutor: Send + Sync {
    fn apply(&self, action: &EditAction, image: &PixelImage) -> Result<PixelImage, ExecError>;
}

impl<T: ActionExecutor + ?Sized> ActionExecutor for Arc<T> {
    fn apply(&self, action: &EditAction, image: &PixelImage) -> Result<PixelImage, ExecError> {
        (**self).apply(action, image)
    }
}

impl<T: ActionExecutor + ?Sized> ActionExecutor for &T {
    fn apply(&self, action: &EditAction, image: &PixelImage) -> Result<PixelImage, ExecError> {
        (**self).apply(action, image)
    }
}

/// `"procedural"` or the name of a configured editor endpoint.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Tool {
    Procedural,
    Editor(String),
}

impl From<String> for Tool {
    fn from(s: String) -> Self {
        if s.eq_ignore_ascii_case("procedural") {
            Tool::Procedural
        } else {
            Tool::Editor(s)
        }
    }
}

impl From<Tool> for String {
    fn from(t: Tool) -> Self {
        match t {
            Tool::Procedural => "procedural".into(),
            Tool::Editor(name) => name,
        }
    }
}

impl std::fmt::Display for Tool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tool::Procedural => f.write_str("procedural"),
            Tool::Editor(n) => f.write_str(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingTable {
    pub routes: BTreeMap<Category, Vec<Tool>>,
    /// How many tools to run side by side for one action (1 or 2).
    pub parallel_candidates: u8,
    /// Procedural stand-ins for generative actions, per category.
    pub proxies: BTreeMap<Category, ProceduralParams>,
}

impl Default for RoutingTable {
    fn default() -> Self {
        let routes = Category::ALL
            .into_iter()
            .map(|c| (c, vec![Tool::Procedural]))
            .collect();
        Self {
            routes,
            parallel_candidates: 1,
            proxies: default_proxies(),
        }
    }
}

fn default_proxies() -> BTreeMap<Category, ProceduralParams> {
    use Operator::*;
    BTreeMap::from([
        (
            Category::GlobalTone,
            ProceduralParams::new(ToneCurve).with("shadows", 0.04).with("highlights", 0.02),
        ),
        (Category::ContrastAdjust, ProceduralParams::new(Contrast).with("factor", 1.1)),
        (Category::ColorBalance, ProceduralParams::new(Saturation).with("factor", 1.1)),
        (Category::LocalRetouch, ProceduralParams::new(UnsharpSharpen).with("amount", 0.3)),
        (
            Category::SemanticEdit,
            ProceduralParams::new(ToneCurve).with("shadows", 0.03).with("highlights", 0.03),
        ),
        (Category::BackgroundAlter, ProceduralParams::new(Vignette).with("strength", 0.15)),
        (
            Category::Geometric,
            ProceduralParams::new(Crop)
                .with("left", 0.02)
                .with("top", 0.02)
                .with("right", 0.98)
                .with("bottom", 0.98),
        ),
    ])
}

impl RoutingTable {
    /// Sends semantics-heavy categories to `editor` first, keeping the
    /// procedural proxy as fallback.
    pub fn with_editor(mut self, editor: &str) -> Self {
        for c in [Category::SemanticEdit, Category::BackgroundAlter, Category::LocalRetouch] {
            self.routes
                .insert(c, vec![Tool::Editor(editor.to_string()), Tool::Procedural]);
        }
        self
    }

    pub fn tools(&self, category: Category) -> &[Tool] {
        self.routes.get(&category).map(Vec::as_slice).unwrap_or(&[Tool::Procedural])
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(1..=2).contains(&self.parallel_candidates) {
            return Err(format!(
                "parallel_candidates must be 1 or 2 (got {})",
                self.parallel_candidates
            ));
        }
        for c in Category::ALL {
            let tools = self
                .routes
                .get(&c)
                .ok_or_else(|| format!("routes.{c} is missing"))?;
            if tools.is_empty() {
                return Err(format!("routes.{c} must list at least one tool"));
            }
            if !tools.contains(&Tool::Procedural) {
                return Err(format!("routes.{c} must include the procedural fallback"));
            }
            let proxy = self
                .proxies
                .get(&c)
                .ok_or_else(|| format!("proxies.{c} is missing"))?;
            proxy.validate().map_err(|e| format!("proxies.{c}: {e}"))?;
        }
        Ok(())
    }

    /// Endpoint names referenced by any route.
    pub fn editors(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .routes
            .values()
            .flatten()
            .filter_map(|t| match t {
                Tool::Editor(n) => Some(n.as_str()),
                Tool::Procedural => None,
            })
            .collect();
        names.sort_unstable();
        names.dedup();
        names
    }
}

/// Category-routed executor with fallback and optional keep-best arbitration.
pub struct ToolRouter {
    routing: RoutingTable,
    editors: BTreeMap<String, Arc<dyn GenerativeEditor>>,
    arbiter: Option<Arc<dyn ImageEvaluator>>,
}

impl std::fmt::Debug for ToolRouter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRouter")
            .field("routing", &self.routing)
            .field("editors", &self.editors.keys().collect::<Vec<_>>())
            .field("arbiter", &self.arbiter.is_some())
            .finish()
    }
}

impl ToolRouter {
    pub fn new(routing: RoutingTable) -> Self {
        Self {
            routing,
            editors: BTreeMap::new(),
            arbiter: None,
        }
    }

    /// Router whose editor tools are HTTP clients for the named endpoints.
    /// Routes naming an endpoint that is not in `endpoints` fail at call
    /// time and fall through to the next tool.
    pub fn from_endpoints(routing: RoutingTable, endpoints: &BTreeMap<String, EndpointConfig>) -> Self {
        let mut router = Self::new(routing);
        for name in router.routing.editors().into_iter().map(str::to_string).collect::<Vec<_>>() {
            if let Some(ep) = endpoints.get(&name) {
                router.editors.insert(name, Arc::new(HttpEditor::new(ep.clone())));
            }
        }
        router
    }

    pub fn with_editor(mut self, name: &str, editor: Arc<dyn GenerativeEditor>) -> Self {
        self.editors.insert(name.to_string(), editor);
        self
    }

    pub fn with_arbiter(mut self, evaluator: Arc<dyn ImageEvaluator>) -> Self {
        self.arbiter = Some(evaluator);
        self
    }

    pub fn routing(&self) -> &RoutingTable {
        &self.routing
    }

    fn run_tool(&self, tool: &Tool, action: &EditAction, image: &PixelImage) -> Result<PixelImage, ExecError> {
        match tool {
            Tool::Procedural => {
                let params = match &action.payload {
                    ActionPayload::Procedural(p) => p,
                    ActionPayload::Generative { .. } => self
                        .routing
                        .proxies
                        .get(&action.category)
                        .ok_or(ExecError::NoProxy(action.category))?,
                };
                Ok(apply_procedural(params, image)?)
            }
            Tool::Editor(name) => {
                let editor = self
                    .editors
                    .get(name)
                    .ok_or_else(|| ExecError::UnknownEditor(name.clone()))?;
                let text = match &action.payload {
                    ActionPayload::Generative { text } => text.as_str(),
                    ActionPayload::Procedural(_) => action.instruction.as_str(),
                };
                Ok(editor.edit(text, image)?)
            }
        }
    }

    fn pick_best(&self, mut results: Vec<(Tool, PixelImage)>) -> PixelImage {
        if results.len() == 1 {
            return results.pop().unwrap().1;
        }
        let Some(arbiter) = &self.arbiter else {
            return results.swap_remove(0).1;
        };
        let mut best: Option<(f64, PixelImage)> = None;
        for (tool, img) in results {
            let score = match arbiter.evaluate(&img) {
                Ok(r) => r.aggregate,
                Err(e) => {
                    log::warn!("arbitration failed for {tool}: {e}");
                    f64::NEG_INFINITY
                }
            };
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, img));
            }
        }
        best.unwrap().1
    }
}

impl ActionExecutor for ToolRouter {
    fn apply(&self, action: &EditAction, image: &PixelImage) -> Result<PixelImage, ExecError> {
        let tools = self.routing.tools(action.category);
        let width = self.routing.parallel_candidates.clamp(1, 2) as usize;
        let mut failures = Vec::new();
        for chunk in tools.chunks(width) {
            let outcomes: Vec<(Tool, Result<PixelImage, ExecError>)> = if chunk.len() > 1 {
                std::thread::scope(|s| {
                    let handles: Vec<_> = chunk
                        .iter()
                        .map(|t| (t.clone(), s.spawn(move || self.run_tool(t, action, image))))
                        .collect();
                    handles
                        .into_iter()
                        .map(|(t, h)| {
                            let r = h.join().unwrap_or_else(|_| {
                                Err(ExecError::External(ExternalError::Unavailable("tool panicked".into())))
                            });
                            (t, r)
                        })
                        .collect()
                })
            } else {
                chunk
                    .iter()
                    .map(|t| (t.clone(), self.run_tool(t, action, image)))
                    .collect()
            };
            let mut ok = Vec::new();
            for (tool, r) in outcomes {
                match r {
                    Ok(img) => ok.push((tool, img)),
                    Err(e) => {
                        log::warn!("tool {tool} failed on action {}: {e}", action.id);
                        failures.push(format!("{tool}: {e}"));
                    }
                }
            }
            if !ok.is_empty() {
                return Ok(self.pick_best(ok));
            }
        }
        Err(ExecError::AllToolsFailed {
            action: action.id.clone(),
            failures,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{ImageEvaluator, ScoreReport};
    use crate::imaging::content_hash;

    struct Fixed(f64);
    impl GenerativeEditor for Fixed {
        fn edit(&self, _: &str, image: &PixelImage) -> Result<PixelImage, ExternalError> {
            Ok(PixelImage::constant(image.width(), image.height(), [self.0; 3]))
        }
    }

    struct Down;
    impl GenerativeEditor for Down {
        fn edit(&self, _: &str, _: &PixelImage) -> Result<PixelImage, ExternalError> {
            Err(ExternalError::Unavailable("down".into()))
        }
    }

    /// Scores an image by its first sample.
    struct FirstSample;
    impl ImageEvaluator for FirstSample {
        fn evaluate(&self, image: &PixelImage) -> Result<ScoreReport, crate::evaluator::EvalError> {
            Ok(ScoreReport::single("first", image.pixel(0, 0)[0], content_hash(image)))
        }
    }

    fn semantic() -> EditAction {
        EditAction::generative("sky", Category::SemanticEdit, "replace the sky")
    }

    #[test]
    fn procedural_route_matches_operator() {
        let img = PixelImage::constant(4, 4, [0.3; 3]);
        let params = ProceduralParams::new(Operator::Brightness).with("delta", 0.1);
        let action = EditAction::procedural("b", Category::GlobalTone, "brighten", params.clone());
        let out = ToolRouter::new(RoutingTable::default()).apply(&action, &img).unwrap();
        assert_eq!(out, apply_procedural(&params, &img).unwrap());
    }

    #[test]
    fn keep_best_of_two() {
        let mut routing = RoutingTable::default();
        routing.parallel_candidates = 2;
        routing.routes.insert(
            Category::SemanticEdit,
            vec![Tool::Editor("a".into()), Tool::Editor("b".into()), Tool::Procedural],
        );
        let router = ToolRouter::new(routing)
            .with_editor("a", Arc::new(Fixed(0.8)))
            .with_editor("b", Arc::new(Fixed(0.6)))
            .with_arbiter(Arc::new(FirstSample));
        let out = router.apply(&semantic(), &PixelImage::constant(2, 2, [0.1; 3])).unwrap();
        assert!((out.pixel(0, 0)[0] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn dead_editor_falls_back_to_proxy() {
        let routing = RoutingTable::default().with_editor("flux");
        let router = ToolRouter::new(routing.clone()).with_editor("flux", Arc::new(Down));
        let img = PixelImage::constant(4, 4, [0.4; 3]);
        let out = router.apply(&semantic(), &img).unwrap();
        let proxy = &routing.proxies[&Category::SemanticEdit];
        assert_eq!(out, apply_procedural(proxy, &img).unwrap());
    }

    #[test]
    fn unconfigured_editor_falls_back() {
        let router = ToolRouter::new(RoutingTable::default().with_editor("missing"));
        assert!(router.apply(&semantic(), &PixelImage::constant(4, 4, [0.4; 3])).is_ok());
    }

    #[test]
    fn all_tools_failed_is_typed() {
        let mut routing = RoutingTable::default();
        routing.routes.insert(Category::SemanticEdit, vec![Tool::Editor("x".into())]);
        routing.proxies.clear();
        let err = ToolRouter::new(routing)
            .apply(&semantic(), &PixelImage::constant(2, 2, [0.4; 3]))
            .unwrap_err();
        assert!(matches!(err, ExecError::AllToolsFailed { .. }));
    }

    #[test]
    fn routing_validation() {
        assert!(RoutingTable::default().validate().is_ok());
        let mut bad = RoutingTable::default();
        bad.routes.insert(Category::Geometric, vec![Tool::Editor("e".into())]);
        assert!(bad.validate().unwrap_err().contains("Geometric"));
        let mut bad = RoutingTable::default();
        bad.parallel_candidates = 3;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn routing_totality_over_editor_subsets() {
        let names = ["e1", "e2"];
        let mut routing = RoutingTable::default();
        routing.parallel_candidates = 2;
        for c in Category::ALL {
            routing.routes.insert(
                c,
                vec![Tool::Editor("e1".into()), Tool::Editor("e2".into()), Tool::Procedural],
            );
        }
        let img = PixelImage::constant(8, 8, [0.5; 3]);
        for mask in 0..4u8 {
            let mut router = ToolRouter::new(routing.clone());
            for (i, n) in names.iter().enumerate() {
                let ed: Arc<dyn GenerativeEditor> = if mask & (1 << i) != 0 {
                    Arc::new(Fixed(0.2))
                } else {
                    Arc::new(Down)
                };
                router = router.with_editor(n, ed);
            }
            for c in Category::ALL {
                let a = EditAction::generative(format!("g{c}"), c, "edit");
                assert!(router.apply(&a, &img).is_ok());
            }
        }
    }

    #[test]
    fn tool_serializes_as_string() {
        let v = serde_json::to_value(vec![Tool::Editor("flux".into()), Tool::Procedural]).unwrap();
        assert_eq!(v, serde_json::json!(["flux", "procedural"]));
    }
}
