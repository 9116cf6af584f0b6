use serde::{Deserialize, Serialize};

use crate::controller::{Engine, LoopConfig, LoopError};
use crate::imaging::{ImageState, PixelImage};
use crate::perceiver::PerceiverContext;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// One proposal call, every action applied in order, no evaluation.
    SingleShot,
    /// Repeated propose-and-apply of the first proposal, no evaluation.
    OpenLoopChain,
    /// The closed loop with a one-step planner.
    GreedyClosedLoop,
    /// The closed loop with the configured tree search.
    MctsClosedLoop,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::SingleShot,
        Strategy::OpenLoopChain,
        Strategy::GreedyClosedLoop,
        Strategy::MctsClosedLoop,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::SingleShot => "single-shot",
            Strategy::OpenLoopChain => "open-loop chain",
            Strategy::GreedyClosedLoop => "greedy closed-loop",
            Strategy::MctsClosedLoop => "MCTS closed-loop",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub image: usize,
    pub initial: f64,
    pub final_aggregate: f64,
    pub actions_applied: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub mean_initial: f64,
    pub mean_final: f64,
    /// Images whose final aggregate fell below their initial one.
    pub regressions: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub outcomes: Vec<StrategyOutcome>,
    pub summary: Vec<StrategySummary>,
}

impl ComparisonReport {
    pub fn summary_for(&self, s: Strategy) -> Option<&StrategySummary> {
        self.summary.iter().find(|x| x.strategy == s)
    }
}

/// Loop settings the greedy baseline uses: depth 1 and one simulation per
/// candidate.
pub fn greedy_config(cfg: &LoopConfig) -> LoopConfig {
    let mut g = cfg.clone();
    g.planner.depth = 1;
    g.planner.budget = cfg.planner.actions_per_node;
    g.planner.top_k = cfg.planner.top_k.min(g.planner.budget);
    g
}

fn score(engine: &Engine, img: &PixelImage) -> Result<f64, LoopError> {
    engine
        .evaluator
        .evaluate(img)
        .map(|r| r.aggregate)
        .map_err(LoopError::InitialScore)
}

fn open_loop(engine: &Engine, input: &PixelImage, cfg: &LoopConfig, chain: bool) -> (PixelImage, usize) {
    let mut state = ImageState::initial(input.clone());
    let scene = engine.perceiver.classify_scene(&state);
    let ctx = PerceiverContext::new(scene, cfg.planner.actions_per_node);
    let mut applied = 0;
    let rounds = if chain { cfg.max_iterations } else { 1 };
    for _ in 0..rounds {
        let proposals = engine.perceiver.propose(&state, &ctx).unwrap_or_default();
        let batch = if chain { proposals.into_iter().take(1).collect() } else { proposals };
        if batch.is_empty() {
            break;
        }
        for action in batch {
            if let Ok(img) = engine.executor.apply(&action, &state.image) {
                state = state.successor(&action.id, img);
                applied += 1;
            }
        }
    }
    ((*state.image).clone(), applied)
}

pub fn run_strategy(
    engine: &Engine,
    input: &PixelImage,
    strategy: Strategy,
    cfg: &LoopConfig,
) -> Result<(f64, f64, usize), LoopError> {
    let initial = score(engine, input)?;
    match strategy {
        Strategy::SingleShot | Strategy::OpenLoopChain => {
            let (img, applied) = open_loop(engine, input, cfg, strategy == Strategy::OpenLoopChain);
            Ok((initial, score(engine, &img)?, applied))
        }
        Strategy::GreedyClosedLoop | Strategy::MctsClosedLoop => {
            let c = if strategy == Strategy::GreedyClosedLoop {
                greedy_config(cfg)
            } else {
                cfg.clone()
            };
            let t = engine.run(input.clone(), &c, None)?;
            Ok((t.initial_aggregate(), t.final_aggregate(), t.states.len() - 1))
        }
    }
}

/// Runs each strategy on each image with shared components.
pub fn compare_strategies(
    images: &[PixelImage],
    strategies: &[Strategy],
    cfg: &LoopConfig,
    engine: &Engine,
) -> Result<ComparisonReport, LoopError> {
    let mut outcomes = Vec::new();
    for &strategy in strategies {
        for (i, img) in images.iter().enumerate() {
            let (initial, final_aggregate, actions_applied) = run_strategy(engine, img, strategy, cfg)?;
            outcomes.push(StrategyOutcome {
                strategy,
                image: i,
                initial,
                final_aggregate,
                actions_applied,
            });
        }
    }
    let summary = strategies
        .iter()
        .map(|&s| {
            let rows: Vec<_> = outcomes.iter().filter(|o| o.strategy == s).collect();
            let n = rows.len().max(1) as f64;
            StrategySummary {
                strategy: s,
                mean_initial: rows.iter().map(|o| o.initial).sum::<f64>() / n,
                mean_final: rows.iter().map(|o| o.final_aggregate).sum::<f64>() / n,
                regressions: rows.iter().filter(|o| o.final_aggregate < o.initial).count(),
            }
        })
        .collect();
    Ok(ComparisonReport { outcomes, summary })
}
