use serde::Serialize;

use super::{search, Environment, PlannerConfig};
use crate::action::EditAction;
use crate::evaluator::ImageEvaluator;
use crate::executor::ActionExecutor;
use crate::imaging::{downscale, ImageState};
use crate::perceiver::{Perceiver, PerceiverContext};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedAction {
    pub action: EditAction,
    pub visits: u64,
    pub mean_reward: f64,
}

/// The reduced-resolution editing world the planner searches.
pub struct ImageEnvironment<'a, P, X, V> {
    pub perceiver: &'a P,
    pub executor: &'a X,
    pub evaluator: &'a V,
    pub ctx: PerceiverContext,
}

impl<P: Perceiver, X: ActionExecutor, V: ImageEvaluator> Environment for ImageEnvironment<'_, P, X, V> {
    type State = ImageState;
    type Action = EditAction;

    fn actions(&self, state: &ImageState) -> Vec<EditAction> {
        match self.perceiver.propose(state, &self.ctx) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("proposal failed during planning: {e}");
                Vec::new()
            }
        }
    }

    fn step(&self, state: &ImageState, action: &EditAction) -> Result<ImageState, String> {
        self.executor
            .apply(action, &state.image)
            .map(|img| state.successor(&action.id, img))
            .map_err(|e| e.to_string())
    }

    fn reward(&self, state: &ImageState) -> f64 {
        match self.evaluator.evaluate(&state.image) {
            Ok(r) => r.aggregate,
            Err(e) => {
                log::warn!("simulation scoring failed: {e}");
                0.0
            }
        }
    }

    fn action_id(&self, action: &EditAction) -> String {
        action.id.clone()
    }
}

/// Searches from a downscaled copy of `root` and returns the best
/// `cfg.top_k` root actions. An empty result means nothing was proposed.
pub fn plan<P, X, V>(
    root: &ImageState,
    cfg: &PlannerConfig,
    perceiver: &P,
    sim_executor: &X,
    evaluator: &V,
    ctx: &PerceiverContext,
) -> Vec<RankedAction>
where
    P: Perceiver,
    X: ActionExecutor,
    V: ImageEvaluator,
{
    let mut ranked = plan_all(root, cfg, perceiver, sim_executor, evaluator, ctx);
    ranked.truncate(cfg.top_k);
    ranked
}

/// Like [`plan`] but returns every expanded root action in rank order.
pub fn plan_all<P, X, V>(
    root: &ImageState,
    cfg: &PlannerConfig,
    perceiver: &P,
    sim_executor: &X,
    evaluator: &V,
    ctx: &PerceiverContext,
) -> Vec<RankedAction>
where
    P: Perceiver,
    X: ActionExecutor,
    V: ImageEvaluator,
{
    let mut ctx = ctx.clone();
    ctx.k = cfg.actions_per_node.max(1);
    let env = ImageEnvironment {
        perceiver,
        executor: sim_executor,
        evaluator,
        ctx,
    };
    let sim_root = ImageState {
        image: std::sync::Arc::new(downscale(&root.image, cfg.sim_scale)),
        step: root.step,
        history: root.history.clone(),
        cached_score: None,
    };
    let all = PlannerConfig {
        top_k: usize::MAX,
        ..cfg.clone()
    };
    search(&env, sim_root, &all)
        .into_iter()
        .map(|r| RankedAction {
            action: r.action,
            visits: r.visits,
            mean_reward: r.mean_reward,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::Evaluator;
    use crate::executor::{apply_procedural, RoutingTable, ToolRouter};
    use crate::imaging::{PixelImage, Scale};
    use crate::perceiver::{HeuristicPerceiver, Scene};
    use crate::planner::{Mcts, SearchTree};

    fn dark_state() -> ImageState {
        ImageState::initial(PixelImage::from_fn(48, 40, |x, y| {
            let v = 0.05 + 0.2 * (x as f64 / 48.0) + 0.05 * ((y % 4) as f64 / 4.0);
            [v, v * 0.9, v * 0.8]
        }))
    }

    #[test]
    fn plan_is_deterministic_and_bounded() {
        let perceiver = HeuristicPerceiver::default();
        let exec = ToolRouter::new(RoutingTable::default());
        let eval = Evaluator::builtin_default();
        let ctx = PerceiverContext::new(Scene::Unknown, 5);
        let cfg = PlannerConfig {
            budget: 8,
            depth: 2,
            rng_seed: 4,
            ..Default::default()
        };
        let a = plan(&dark_state(), &cfg, &perceiver, &exec, &eval, &ctx);
        let b = plan(&dark_state(), &cfg, &perceiver, &exec, &eval, &ctx);
        assert_eq!(a, b);
        assert!(!a.is_empty() && a.len() <= cfg.top_k);
        assert!(a.windows(2).all(|w| w[0].visits >= w[1].visits));
    }

    #[test]
    fn expanded_child_matches_direct_application() {
        let perceiver = HeuristicPerceiver::default();
        let exec = ToolRouter::new(RoutingTable::default());
        let eval = Evaluator::builtin_default();
        let env = ImageEnvironment {
            perceiver: &perceiver,
            executor: &exec,
            evaluator: &eval,
            ctx: PerceiverContext::new(Scene::Unknown, 3),
        };
        let root = ImageState::initial(downscale(&dark_state().image, Scale::Half));
        let cfg = PlannerConfig { budget: 1, ..Default::default() };
        let mut m = Mcts::new(&env, root.clone(), &cfg);
        m.run(1);
        let tree: &SearchTree<_, _> = m.tree();
        let child = &tree.nodes[tree.root().children[0]];
        let action = child.incoming_action.as_ref().unwrap();
        let crate::action::ActionPayload::Procedural(p) = &action.payload else {
            panic!("heuristic proposals are procedural");
        };
        let direct = apply_procedural(p, &root.image).unwrap();
        assert_eq!(*child.state.image, direct);
        assert_eq!(child.state.image.width(), 24);
    }
}
