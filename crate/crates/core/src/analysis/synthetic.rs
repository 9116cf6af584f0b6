//! Small fully enumerable decision trees with deterministic rewards, an
//! exhaustive oracle for them, and an image-space wrapper that lets the full
//! controller run on the same trees.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::action::{Category, EditAction};
use crate::evaluator::{EvalError, ImageEvaluator, ScoreReport};
use crate::executor::{ActionExecutor, ExecError};
use crate::imaging::{content_hash, ImageState, PixelImage};
use crate::perceiver::{PerceiveError, Perceiver, PerceiverContext, Scene};
use crate::planner::{search, Environment, PlannerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub reward: f64,
    pub children: Vec<usize>,
}

/// A rooted tree of states; node 0 is the root. An action is the index of a
/// child in its parent's list.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeEnv {
    pub nodes: Vec<TreeNode>,
}

impl TreeEnv {
    pub fn new() -> Self {
        Self {
            nodes: vec![TreeNode {
                reward: 0.0,
                children: Vec::new(),
            }],
        }
    }

    pub fn add_child(&mut self, parent: usize, reward: f64) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            reward,
            children: Vec::new(),
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Every internal node has between 2 and `max_actions` children and all
    /// leaves sit at `depth`. Rewards are independent and uniform on [0, 1).
    pub fn random(seed: u64, max_actions: usize, depth: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = Self::new();
        env.nodes[0].reward = rng.random();
        let mut frontier = vec![0usize];
        for _ in 0..depth {
            let mut next = Vec::new();
            for p in frontier {
                let n = rng.random_range(2..=max_actions.max(2));
                for _ in 0..n {
                    let r = rng.random();
                    next.push(env.add_child(p, r));
                }
            }
            frontier = next;
        }
        env
    }

    /// Depth-2 instance. With `trap`, root action 0 pays 0.6 immediately and
    /// leads only to 0.6, while root action 1 pays 0.4 but leads to 0.95.
    /// Without it, the greedy path is also the optimal one.
    pub fn trap(seed: u64, trap: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = Self::new();
        env.nodes[0].reward = 0.3;
        let extra = rng.random_range(0..=2usize);
        if trap {
            let x = env.add_child(0, 0.6);
            for _ in 0..rng.random_range(2..=4usize) {
                env.add_child(x, 0.6);
            }
            let y = env.add_child(0, 0.4);
            let n = rng.random_range(2..=4usize);
            let hit = rng.random_range(0..n);
            for i in 0..n {
                let r = if i == hit { 0.95 } else { rng.random_range(0.0..0.5) };
                env.add_child(y, r);
            }
        } else {
            let x = env.add_child(0, 0.6);
            let n = rng.random_range(2..=4usize);
            let hit = rng.random_range(0..n);
            for i in 0..n {
                let r = if i == hit { 0.9 } else { rng.random_range(0.0..0.6) };
                env.add_child(x, r);
            }
            let y = env.add_child(0, 0.4);
            for _ in 0..rng.random_range(2..=4usize) {
                let r = rng.random_range(0.0..0.7);
                env.add_child(y, r);
            }
        }
        for _ in 0..extra {
            let d = env.add_child(0, rng.random_range(0.0..0.35));
            for _ in 0..rng.random_range(2..=4usize) {
                let r = rng.random_range(0.0..0.55);
                env.add_child(d, r);
            }
        }
        env
    }

    /// Length of the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(env: &TreeEnv, n: usize) -> usize {
            env.nodes[n].children.iter().map(|&c| 1 + go(env, c)).max().unwrap_or(0)
        }
        go(self, 0)
    }

    /// Best reward reachable at exactly `steps` further actions, or the
    /// node's own reward if it is a leaf before that.
    pub fn best_value(&self, node: usize, steps: usize) -> f64 {
        let n = &self.nodes[node];
        if steps == 0 || n.children.is_empty() {
            return n.reward;
        }
        n.children
            .iter()
            .map(|&c| self.best_value(c, steps - 1))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Root action index with the highest [`best_value`](Self::best_value).
    pub fn optimal_action(&self, node: usize, steps: usize) -> Option<usize> {
        let n = &self.nodes[node];
        (0..n.children.len()).max_by(|&a, &b| {
            self.best_value(n.children[a], steps - 1)
                .total_cmp(&self.best_value(n.children[b], steps - 1))
                .then(b.cmp(&a))
        })
    }

    /// Final reward of always taking the child with the highest immediate
    /// reward, first index on ties.
    pub fn greedy_value(&self, node: usize, steps: usize) -> f64 {
        let mut cur = node;
        for _ in 0..steps {
            let n = &self.nodes[cur];
            let Some(&next) = n.children.iter().rev().max_by(|&&a, &&b| self.nodes[a].reward.total_cmp(&self.nodes[b].reward)) else {
                break;
            };
            cur = next;
        }
        self.nodes[cur].reward
    }

    pub fn has_trap(&self, steps: usize) -> bool {
        self.greedy_value(0, steps) < self.best_value(0, steps)
    }
}

impl Default for TreeEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for TreeEnv {
    type State = usize;
    type Action = usize;

    fn actions(&self, state: &usize) -> Vec<usize> {
        (0..self.nodes[*state].children.len()).collect()
    }

    fn step(&self, state: &usize, action: &usize) -> Result<usize, String> {
        self.nodes[*state]
            .children
            .get(*action)
            .copied()
            .ok_or_else(|| format!("no action {action} at node {state}"))
    }

    fn reward(&self, state: &usize) -> f64 {
        self.nodes[*state].reward
    }

    fn action_id(&self, action: &usize) -> String {
        format!("{action:03}")
    }
}

/// Plans from the current node, commits the top action and repeats for
/// `steps` steps, shrinking the horizon as the end approaches. Returns the
/// final node.
pub fn receding_horizon(env: &TreeEnv, cfg: &PlannerConfig, steps: usize) -> usize {
    let mut node = 0;
    for t in 0..steps {
        let c = PlannerConfig {
            depth: cfg.depth.min(steps - t).max(1),
            rng_seed: cfg.rng_seed.wrapping_add(t as u64),
            ..cfg.clone()
        };
        let Some(top) = search(env, node, &c).into_iter().next() else {
            break;
        };
        node = env.nodes[node].children[top.action];
    }
    node
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrapRow {
    pub seed: u64,
    pub has_trap: bool,
    /// Final reward of the receding-horizon agent with a one-step planner.
    pub greedy: f64,
    /// Final reward of the receding-horizon agent with the configured depth.
    pub mcts: f64,
    /// Exhaustive best reachable reward.
    pub oracle_best: f64,
    /// Exhaustive greedy-path reward.
    pub oracle_greedy: f64,
}

/// Depth-2 trap instances, every other one without a trap, each solved by a
/// greedy and a lookahead agent and by brute force.
pub fn trap_suite(instances: usize, cfg: &PlannerConfig) -> Vec<TrapRow> {
    const STEPS: usize = 2;
    (0..instances as u64)
        .map(|seed| {
            let env = TreeEnv::trap(seed, seed % 2 == 0);
            let greedy_cfg = PlannerConfig {
                depth: 1,
                rng_seed: seed,
                ..cfg.clone()
            };
            let mcts_cfg = PlannerConfig {
                depth: cfg.depth.max(STEPS),
                rng_seed: seed,
                ..cfg.clone()
            };
            TrapRow {
                seed,
                has_trap: env.has_trap(STEPS),
                greedy: env.nodes[receding_horizon(&env, &greedy_cfg, STEPS)].reward,
                mcts: env.nodes[receding_horizon(&env, &mcts_cfg, STEPS)].reward,
                oracle_best: env.best_value(0, STEPS),
                oracle_greedy: env.greedy_value(0, STEPS),
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct BudgetRow {
    pub budget: usize,
    /// Mean over environments of the best value reachable after the chosen
    /// root action.
    pub mean_reward: f64,
    /// Fraction of environments where the chosen action is optimal.
    pub optimal_rate: f64,
    pub runs: usize,
}

/// Quality of the executed top-1 root action as a function of simulation
/// budget, over `seeds` random trees.
pub fn budget_sweep(budgets: &[usize], seeds: usize, max_actions: usize, depth: usize) -> Vec<BudgetRow> {
    let envs: Vec<TreeEnv> = (0..seeds as u64)
        .map(|s| TreeEnv::random(s, max_actions, depth))
        .collect();
    budgets
        .iter()
        .map(|&budget| {
            let mut total = 0.0;
            let mut optimal = 0usize;
            for (s, env) in envs.iter().enumerate() {
                let cfg = PlannerConfig {
                    budget,
                    depth,
                    top_k: 1,
                    rng_seed: s as u64,
                    ..Default::default()
                };
                let top = search(env, 0, &cfg)[0].action;
                total += env.best_value(env.nodes[0].children[top], depth - 1);
                if Some(top) == env.optimal_action(0, depth) {
                    optimal += 1;
                }
            }
            BudgetRow {
                budget,
                mean_reward: total / seeds as f64,
                optimal_rate: optimal as f64 / seeds as f64,
                runs: seeds,
            }
        })
        .collect()
}

/// Encodes a node index into a 1×1 image so the image-space components can
/// walk a [`TreeEnv`].
pub fn encode_node(node: usize) -> PixelImage {
    assert!(node < 1 << 24, "node index too large to encode");
    let c = |shift: usize| ((node >> shift) & 0xff) as f64 / 255.0;
    PixelImage::constant(1, 1, [c(0), c(8), c(16)])
}

pub fn decode_node(image: &PixelImage) -> usize {
    let p = image.pixel(0, 0);
    let b = |v: f64| (v * 255.0).round() as usize;
    b(p[0]) | (b(p[1]) << 8) | (b(p[2]) << 16)
}

/// Perceiver, executor and evaluator backed by a [`TreeEnv`].
#[derive(Clone, Debug)]
pub struct ScriptedWorld {
    pub env: Arc<TreeEnv>,
}

impl ScriptedWorld {
    pub fn new(env: TreeEnv) -> Self {
        Self { env: Arc::new(env) }
    }

    pub fn root_image(&self) -> PixelImage {
        encode_node(0)
    }

    fn action_id(node: usize, child: usize) -> String {
        format!("n{node}_to_n{child}")
    }
}

impl Perceiver for ScriptedWorld {
    fn classify_scene(&self, _: &ImageState) -> Scene {
        Scene::Unknown
    }

    fn propose(&self, state: &ImageState, ctx: &PerceiverContext) -> Result<Vec<EditAction>, PerceiveError> {
        let node = decode_node(&state.image);
        let children = &self
            .env
            .nodes
            .get(node)
            .ok_or_else(|| PerceiveError::MalformedResponse(format!("unknown node {node}")))?
            .children;
        Ok(children
            .iter()
            .take(ctx.k)
            .map(|&c| {
                let id = Self::action_id(node, c);
                EditAction::generative(id.clone(), Category::SemanticEdit, id)
            })
            .collect())
    }
}

impl ActionExecutor for ScriptedWorld {
    fn apply(&self, action: &EditAction, image: &PixelImage) -> Result<PixelImage, ExecError> {
        let node = decode_node(image);
        self.env.nodes[node]
            .children
            .iter()
            .find(|&&c| Self::action_id(node, c) == action.id)
            .map(|&c| encode_node(c))
            .ok_or_else(|| ExecError::AllToolsFailed {
                action: action.id.clone(),
                failures: vec![format!("not available at node {node}")],
            })
    }
}

impl ImageEvaluator for ScriptedWorld {
    fn evaluate(&self, image: &PixelImage) -> Result<ScoreReport, EvalError> {
        let node = decode_node(image);
        Ok(ScoreReport::single("scripted", self.env.nodes[node].reward, content_hash(image)))
    }
}

/// A linear chain where each of three actions adds 0.1 to the reward, plus a
/// harmful sibling at every step.
pub fn staircase() -> TreeEnv {
    let mut env = TreeEnv::new();
    env.nodes[0].reward = 0.3;
    let mut cur = 0;
    for step in 1..=3 {
        let good = env.add_child(cur, 0.3 + 0.1 * step as f64);
        env.add_child(cur, 0.05);
        cur = good;
    }
    env
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_round_trips() {
        for n in [0usize, 1, 255, 256, 70_000, (1 << 24) - 1] {
            assert_eq!(decode_node(&encode_node(n)), n);
        }
    }

    #[test]
    fn random_tree_shape() {
        let env = TreeEnv::random(3, 4, 3);
        assert!(env.nodes[0].children.len() >= 2 && env.nodes[0].children.len() <= 4);
        fn leaf_depths(env: &TreeEnv, n: usize, d: usize, out: &mut Vec<usize>) {
            if env.nodes[n].children.is_empty() {
                out.push(d);
            }
            for &c in &env.nodes[n].children {
                leaf_depths(env, c, d + 1, out);
            }
        }
        let mut depths = Vec::new();
        leaf_depths(&env, 0, 0, &mut depths);
        assert!(depths.iter().all(|&d| d == 3));
    }

    #[test]
    fn trap_oracles() {
        let t = TreeEnv::trap(1, true);
        assert_eq!(t.greedy_value(0, 2), 0.6);
        assert_eq!(t.best_value(0, 2), 0.95);
        assert_eq!(t.optimal_action(0, 2), Some(1));
        assert!(t.has_trap(2));
        let f = TreeEnv::trap(1, false);
        assert!(!f.has_trap(2));
    }

    #[test]
    fn greedy_planner_falls_into_trap() {
        let t = TreeEnv::trap(5, true);
        let greedy = PlannerConfig { budget: 10, depth: 1, top_k: 1, ..Default::default() };
        assert_eq!(t.nodes[receding_horizon(&t, &greedy, 2)].reward, 0.6);
        let deep = PlannerConfig { budget: 200, depth: 2, top_k: 1, ..Default::default() };
        assert_eq!(t.nodes[receding_horizon(&t, &deep, 2)].reward, 0.95);
    }
}
