//! Monte Carlo tree search over edit-action sequences.
//!
//! Each simulation walks the tree with UCT, expands one untried action,
//! rolls out uniformly random actions until the planning horizon, scores the
//! final state once and backs that reward up the visited path. The search is
//! generic over [`Environment`]; [`plan`] binds it to images.

mod image;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::Scale;

pub use image::{plan, plan_all, ImageEnvironment, RankedAction};

/// A deterministic simulation environment for the search.
pub trait Environment {
    type State: Clone;
    type Action: Clone;

    /// Candidate actions; empty means the state is terminal.
    fn actions(&self, state: &Self::State) -> Vec<Self::Action>;

    /// Applies an action. An error drops the action from consideration.
    fn step(&self, state: &Self::State, action: &Self::Action) -> Result<Self::State, String>;

    fn reward(&self, state: &Self::State) -> f64;

    /// Stable identifier used for deterministic tie-breaking.
    fn action_id(&self, action: &Self::Action) -> String;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Simulations per planning call.
    pub budget: usize,
    /// Planning horizon: tree depth plus rollout length never exceeds this.
    pub depth: usize,
    pub top_k: usize,
    pub uct_c: f64,
    pub sim_scale: Scale,
    pub rng_seed: u64,
    /// Actions requested from the perceiver per node.
    pub actions_per_node: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            budget: 20,
            depth: 3,
            top_k: 3,
            uct_c: std::f64::consts::SQRT_2,
            sim_scale: Scale::Half,
            rng_seed: 0,
            actions_per_node: 5,
        }
    }
}

impl PlannerConfig {
    /// Returns the offending field name and reason.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.budget == 0 {
            return Err(("budget", "must be at least 1".into()));
        }
        if self.depth == 0 {
            return Err(("depth", "must be at least 1".into()));
        }
        if self.top_k == 0 {
            return Err(("top_k", "must be at least 1".into()));
        }
        if self.top_k > self.budget {
            return Err(("top_k", format!("must not exceed budget ({})", self.budget)));
        }
        if !(self.uct_c.is_finite() && self.uct_c > 0.0) {
            return Err(("uct_c", "must be a positive finite number".into()));
        }
        if self.actions_per_node == 0 {
            return Err(("actions_per_node", "must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SearchNode<S, A> {
    pub state: S,
    pub incoming_action: Option<A>,
    pub visits: u64,
    pub mean_reward: f64,
    pub children: Vec<usize>,
    /// `None` until the node's actions have been requested.
    pub untried: Option<Vec<A>>,
    pub depth: usize,
    pub parent: Option<usize>,
}

impl<S, A> SearchNode<S, A> {
    fn new(state: S, incoming_action: Option<A>, depth: usize, parent: Option<usize>) -> Self {
        Self {
            state,
            incoming_action,
            visits: 0,
            mean_reward: 0.0,
            children: Vec::new(),
            untried: None,
            depth,
            parent,
        }
    }

    /// No untried actions left and nothing to descend into.
    pub fn is_terminal(&self) -> bool {
        matches!(&self.untried, Some(u) if u.is_empty()) && self.children.is_empty()
    }

    pub fn is_fully_expanded(&self) -> bool {
        matches!(&self.untried, Some(u) if u.is_empty())
    }
}

/// Arena-allocated search tree; node 0 is the root.
#[derive(Clone, Debug)]
pub struct SearchTree<S, A> {
    pub nodes: Vec<SearchNode<S, A>>,
}

impl<S, A> SearchTree<S, A> {
    pub fn new(root: S) -> Self {
        Self {
            nodes: vec![SearchNode::new(root, None, 0, None)],
        }
    }

    pub fn root(&self) -> &SearchNode<S, A> {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &SearchNode<S, A> {
        &self.nodes[id]
    }
}

/// UCT value `Q + c·sqrt(ln N / n)`.
pub fn uct_score(q: f64, parent_visits: u64, child_visits: u64, c: f64) -> f64 {
    q + c * ((parent_visits as f64).ln() / child_visits as f64).sqrt()
}

/// Child of `node` maximizing the UCT value; exact ties are broken uniformly
/// at random.
///
/// # Panics
/// If the node has no children or any child is unvisited.
pub fn select_uct<S, A>(tree: &SearchTree<S, A>, node: usize, c: f64, rng: &mut impl Rng) -> usize {
    let parent = &tree.nodes[node];
    assert!(!parent.children.is_empty(), "select_uct on a node without children");
    let mut best = f64::NEG_INFINITY;
    let mut ties: Vec<usize> = Vec::new();
    for &child in &parent.children {
        let ch = &tree.nodes[child];
        assert!(ch.visits > 0, "select_uct requires every child to be visited");
        let score = uct_score(ch.mean_reward, parent.visits, ch.visits, c);
        if score > best {
            best = score;
            ties.clear();
            ties.push(child);
        } else if score == best {
            ties.push(child);
        }
    }
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

/// Requests the node's actions if that has not happened yet. Nodes at the
/// horizon get none.
fn ensure_untried<E: Environment>(tree: &mut SearchTree<E::State, E::Action>, node: usize, env: &E, horizon: usize) {
    if tree.nodes[node].untried.is_none() {
        let actions = if tree.nodes[node].depth >= horizon {
            Vec::new()
        } else {
            env.actions(&tree.nodes[node].state)
        };
        tree.nodes[node].untried = Some(actions);
    }
}

/// Pops untried actions in proposal order until one executes, attaching its
/// result as a new unvisited child. Returns `None` when every remaining
/// action failed.
pub fn expand<E: Environment>(tree: &mut SearchTree<E::State, E::Action>, node: usize, env: &E) -> Option<usize> {
    loop {
        let action = {
            let untried = tree.nodes[node].untried.as_mut()?;
            if untried.is_empty() {
                return None;
            }
            untried.remove(0)
        };
        match env.step(&tree.nodes[node].state, &action) {
            Ok(state) => {
                let depth = tree.nodes[node].depth + 1;
                let id = tree.nodes.len();
                tree.nodes.push(SearchNode::new(state, Some(action), depth, Some(node)));
                tree.nodes[node].children.push(id);
                return Some(id);
            }
            Err(e) => {
                log::debug!("simulated action {} failed: {e}", env.action_id(&action));
            }
        }
    }
}

/// Applies up to `d` uniformly random actions, each drawn from a fresh
/// proposal, stopping early at terminal states or on execution failure.
pub fn rollout<E: Environment>(env: &E, start: &E::State, d: usize, rng: &mut impl Rng) -> E::State {
    rollout_with_first(env, start, None, d, rng)
}

fn rollout_with_first<E: Environment>(
    env: &E,
    start: &E::State,
    first: Option<Vec<E::Action>>,
    d: usize,
    rng: &mut impl Rng,
) -> E::State {
    let mut state = start.clone();
    let mut first = first;
    for _ in 0..d {
        let actions = first.take().unwrap_or_else(|| env.actions(&state));
        if actions.is_empty() {
            break;
        }
        let a = &actions[rng.random_range(0..actions.len())];
        match env.step(&state, a) {
            Ok(next) => state = next,
            Err(_) => break,
        }
    }
    state
}

/// Adds `reward` to every node on `path` via the incremental mean.
pub fn backpropagate<S, A>(tree: &mut SearchTree<S, A>, path: &[usize], reward: f64) {
    for &id in path {
        let n = &mut tree.nodes[id];
        n.visits += 1;
        n.mean_reward += (reward - n.mean_reward) / n.visits as f64;
    }
}

/// Root action statistics after a search.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedChild<A> {
    pub action: A,
    pub visits: u64,
    pub mean_reward: f64,
}

/// A single search over an [`Environment`].
pub struct Mcts<'e, E: Environment> {
    env: &'e E,
    tree: SearchTree<E::State, E::Action>,
    rng: ChaCha8Rng,
    uct_c: f64,
    horizon: usize,
    simulations: usize,
}

impl<'e, E: Environment> Mcts<'e, E> {
    pub fn new(env: &'e E, root: E::State, cfg: &PlannerConfig) -> Self {
        Self {
            env,
            tree: SearchTree::new(root),
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            uct_c: cfg.uct_c,
            horizon: cfg.depth.max(1),
            simulations: 0,
        }
    }

    pub fn tree(&self) -> &SearchTree<E::State, E::Action> {
        &self.tree
    }

    pub fn simulations(&self) -> usize {
        self.simulations
    }

    /// One selection → expansion → rollout → backpropagation pass.
    pub fn simulate(&mut self) {
        let env = self.env;
        let mut path = vec![0usize];
        let mut node = 0usize;
        loop {
            ensure_untried(&mut self.tree, node, env, self.horizon);
            let n = &self.tree.nodes[node];
            if n.untried.as_ref().is_some_and(|u| !u.is_empty()) {
                if let Some(child) = expand(&mut self.tree, node, env) {
                    path.push(child);
                    node = child;
                    break;
                }
                // every remaining action failed; fall through to selection
            }
            if self.tree.nodes[node].children.is_empty() {
                break;
            }
            node = select_uct(&self.tree, node, self.uct_c, &mut self.rng);
            path.push(node);
        }

        let leaf_depth = self.tree.nodes[node].depth;
        let remaining = self.horizon.saturating_sub(leaf_depth);
        let terminal_state = if remaining > 0 {
            ensure_untried(&mut self.tree, node, env, self.horizon);
            let first = self.tree.nodes[node].untried.clone();
            rollout_with_first(env, &self.tree.nodes[node].state, first, remaining, &mut self.rng)
        } else {
            self.tree.nodes[node].state.clone()
        };
        let reward = env.reward(&terminal_state);
        backpropagate(&mut self.tree, &path, reward);
        self.simulations += 1;
    }

    pub fn run(&mut self, budget: usize) {
        for _ in 0..budget {
            self.simulate();
        }
    }

    /// Root children by visits, then mean reward (both descending), then
    /// action id ascending.
    pub fn ranked(&self) -> Vec<RankedChild<E::Action>> {
        let mut out: Vec<(String, RankedChild<E::Action>)> = self
            .tree
            .root()
            .children
            .iter()
            .map(|&c| {
                let n = &self.tree.nodes[c];
                let action = n.incoming_action.clone().expect("non-root node has an action");
                (
                    self.env.action_id(&action),
                    RankedChild {
                        action,
                        visits: n.visits,
                        mean_reward: n.mean_reward,
                    },
                )
            })
            .collect();
        out.sort_by(|(ia, a), (ib, b)| {
            b.visits
                .cmp(&a.visits)
                .then(b.mean_reward.total_cmp(&a.mean_reward))
                .then(ia.cmp(ib))
        });
        out.into_iter().map(|(_, r)| r).collect()
    }
}

/// Runs `cfg.budget` simulations and returns the top `cfg.top_k` root actions.
pub fn search<E: Environment>(env: &E, root: E::State, cfg: &PlannerConfig) -> Vec<RankedChild<E::Action>> {
    let mut mcts = Mcts::new(env, root, cfg);
    mcts.run(cfg.budget);
    let mut ranked = mcts.ranked();
    ranked.truncate(cfg.top_k);
    ranked
}
