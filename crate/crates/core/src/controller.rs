//! The perceive, plan, execute, evaluate loop.
//!
//! Every iteration replans from the current accepted image, executes the
//! planner's top-K actions at full resolution, keeps the best-scoring result
//! only if it beats the current image, and records the outcome in memory.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Category, EditAction, Origin};
use crate::evaluator::{compare_and_decide, Decision, EvalError, Evaluator, ImageEvaluator, ScoreReport, ScorerConfig};
use crate::executor::{ActionExecutor, ExecError, RoutingTable, ToolRouter};
use crate::http::EndpointConfig;
use crate::imaging::{content_hash, ImageState, PixelImage, StateRecord};
use crate::memory::{EditingMemory, TriedAction};
use crate::perceiver::{HeuristicPerceiver, PerceiveError, Perceiver, PerceiverContext, Scene};
use crate::planner::{plan_all, PlannerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub max_iterations: usize,
    /// Consecutive non-improving iterations before stopping.
    pub patience: usize,
    pub epsilon: f64,
    /// Inputs already scoring above this get at most one iteration.
    pub ceiling: f64,
    pub planner: PlannerConfig,
    pub scorer: ScorerConfig,
    pub routing: RoutingTable,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3,
            patience: 2,
            epsilon: 0.0,
            ceiling: 0.95,
            planner: PlannerConfig::default(),
            scorer: ScorerConfig::default(),
            routing: RoutingTable::default(),
        }
    }
}

impl LoopConfig {
    /// Returns a dotted field path and reason for the first violation.
    pub fn validate(&self) -> Result<(), (String, String)> {
        if self.max_iterations == 0 {
            return Err(("max_iterations".into(), "must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(("patience".into(), "must be at least 1".into()));
        }
        if self.patience > self.max_iterations {
            return Err((
                "patience".into(),
                format!("must not exceed max_iterations ({})", self.max_iterations),
            ));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(("epsilon".into(), "must be a finite non-negative number".into()));
        }
        if !self.ceiling.is_finite() {
            return Err(("ceiling".into(), "must be finite".into()));
        }
        self.planner
            .validate()
            .map_err(|(f, m)| (format!("planner.{f}"), m))?;
        self.scorer
            .validate()
            .map_err(|e| ("scorer".to_string(), e.to_string()))?;
        self.routing
            .validate()
            .map_err(|m| ("routing".to_string(), m))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    MaxIterations,
    NoImprovement,
    Fixpoint,
    NoActions,
}

/// Wall-clock time per component. Planner time excludes perceiver calls made
/// during planning; its executor and evaluator sub-entries are included in it.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    pub perceiver: Duration,
    pub planner: Duration,
    pub planner_executor: Duration,
    pub planner_evaluator: Duration,
    pub executor: Duration,
    pub evaluator: Duration,
    pub total: Duration,
}

impl Serialize for Timings {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m: BTreeMap<&str, f64> = [
            ("perceiver", self.perceiver),
            ("planner", self.planner),
            ("planner_executor", self.planner_executor),
            ("planner_evaluator", self.planner_evaluator),
            ("executor", self.executor),
            ("evaluator", self.evaluator),
            ("total", self.total),
        ]
        .into_iter()
        .map(|(k, d)| (k, d.as_secs_f64()))
        .collect();
        m.serialize(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateRecord {
    pub action_id: String,
    pub category: Category,
    pub instruction: String,
    pub origin: Origin,
    pub planned_visits: u64,
    pub planned_mean_reward: f64,
    pub executed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

/// A root action the planner expanded, with its search statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsideredAction {
    pub action_id: String,
    pub category: Category,
    pub visits: u64,
    pub mean_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub iteration: usize,
    pub root_digest: String,
    pub current_aggregate: f64,
    pub considered: Vec<ConsideredAction>,
    /// The forwarded top-K, executed at full resolution.
    pub candidates: Vec<CandidateRecord>,
    pub best_candidate: Option<String>,
    pub decision: Option<Decision>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Accepted states, starting with the input.
    pub states: Vec<ImageState>,
    pub reports: Vec<ScoreReport>,
    pub rounds: Vec<RoundRecord>,
    pub termination_reason: TerminationReason,
    pub timings: Timings,
    pub scene: Scene,
    pub user_prompt: Option<String>,
    pub memory: EditingMemory,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryReport {
    pub scene: Scene,
    pub user_prompt: Option<String>,
    pub initial_aggregate: f64,
    pub final_aggregate: f64,
    pub termination_reason: TerminationReason,
    pub iterations: usize,
    pub states: Vec<StateRecord>,
    pub rounds: Vec<RoundRecord>,
    pub memory: EditingMemory,
    pub timings: Timings,
}

impl Trajectory {
    pub fn final_state(&self) -> &ImageState {
        self.states.last().expect("trajectory always holds the input state")
    }

    pub fn initial_aggregate(&self) -> f64 {
        self.reports[0].aggregate
    }

    pub fn final_aggregate(&self) -> f64 {
        self.reports.last().map(|r| r.aggregate).unwrap_or(0.0)
    }

    pub fn report(&self) -> TrajectoryReport {
        TrajectoryReport {
            scene: self.scene,
            user_prompt: self.user_prompt.clone(),
            initial_aggregate: self.initial_aggregate(),
            final_aggregate: self.final_aggregate(),
            termination_reason: self.termination_reason,
            iterations: self.rounds.len(),
            states: self.states.iter().map(|s| s.to_record()).collect(),
            rounds: self.rounds.clone(),
            memory: self.memory.clone(),
            timings: self.timings,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.report()).expect("trajectory report serializes")
    }
}

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("invalid loop configuration at {0}: {1}")]
    InvalidConfig(String, String),
    #[error("could not score the input image: {0}")]
    InitialScore(EvalError),
}

/// The collaborators one loop run talks to.
#[derive(Clone)]
pub struct Engine {
    pub perceiver: Arc<dyn Perceiver>,
    /// Full-resolution executor.
    pub executor: Arc<dyn ActionExecutor>,
    /// Executor used inside planning simulations.
    pub sim_executor: Arc<dyn ActionExecutor>,
    pub evaluator: Arc<dyn ImageEvaluator>,
}

impl Engine {
    pub fn new(
        perceiver: Arc<dyn Perceiver>,
        executor: Arc<dyn ActionExecutor>,
        sim_executor: Arc<dyn ActionExecutor>,
        evaluator: Arc<dyn ImageEvaluator>,
    ) -> Self {
        Self {
            perceiver,
            executor,
            sim_executor,
            evaluator,
        }
    }

    /// Heuristic perceiver, routed executor and the configured scorers, with
    /// externals resolved against `endpoints`. Simulations always use the
    /// procedural proxies.
    pub fn from_config(cfg: &LoopConfig, endpoints: &BTreeMap<String, EndpointConfig>) -> Result<Self, EvalError> {
        let evaluator: Arc<dyn ImageEvaluator> = Arc::new(Evaluator::from_config(&cfg.scorer, endpoints)?);
        let executor = ToolRouter::from_endpoints(cfg.routing.clone(), endpoints).with_arbiter(evaluator.clone());
        let mut sim_routing = cfg.routing.clone();
        for tools in sim_routing.routes.values_mut() {
            tools.retain(|t| *t == crate::executor::Tool::Procedural);
        }
        sim_routing.parallel_candidates = 1;
        Ok(Self {
            perceiver: Arc::new(HeuristicPerceiver::default()),
            executor: Arc::new(executor),
            sim_executor: Arc::new(ToolRouter::new(sim_routing)),
            evaluator,
        })
    }

    pub fn offline(cfg: &LoopConfig) -> Result<Self, EvalError> {
        Self::from_config(cfg, &BTreeMap::new())
    }

    pub fn with_perceiver(mut self, perceiver: Arc<dyn Perceiver>) -> Self {
        self.perceiver = perceiver;
        self
    }

    pub fn run(&self, input: PixelImage, cfg: &LoopConfig, user_prompt: Option<String>) -> Result<Trajectory, LoopError> {
        run_loop_with(self, input, cfg, user_prompt)
    }
}

/// Runs the loop with offline built-in components.
pub fn run_loop(input: PixelImage, cfg: &LoopConfig, user_prompt: Option<String>) -> Result<Trajectory, LoopError> {
    let engine = Engine::offline(cfg).map_err(|e| LoopError::InvalidConfig("scorer".into(), e.to_string()))?;
    engine.run(input, cfg, user_prompt)
}

#[derive(Default)]
struct Clock(AtomicU64);

impl Clock {
    fn add(&self, d: Duration) {
        self.0.fetch_add(d.as_nanos() as u64, Ordering::Relaxed);
    }

    fn get(&self) -> Duration {
        Duration::from_nanos(self.0.load(Ordering::Relaxed))
    }
}

fn timed<T>(clock: &Clock, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    clock.add(t.elapsed());
    out
}

struct TimedPerceiver<'a>(&'a dyn Perceiver, &'a Clock);

impl Perceiver for TimedPerceiver<'_> {
    fn classify_scene(&self, state: &ImageState) -> Scene {
        timed(self.1, || self.0.classify_scene(state))
    }

    fn propose(&self, state: &ImageState, ctx: &PerceiverContext) -> Result<Vec<EditAction>, PerceiveError> {
        timed(self.1, || self.0.propose(state, ctx))
    }
}

struct TimedExecutor<'a>(&'a dyn ActionExecutor, &'a Clock);

impl ActionExecutor for TimedExecutor<'_> {
    fn apply(&self, action: &EditAction, image: &PixelImage) -> Result<PixelImage, ExecError> {
        timed(self.1, || self.0.apply(action, image))
    }
}

struct TimedEvaluator<'a>(&'a dyn ImageEvaluator, &'a Clock);

impl ImageEvaluator for TimedEvaluator<'_> {
    fn evaluate(&self, image: &PixelImage) -> Result<ScoreReport, EvalError> {
        timed(self.1, || self.0.evaluate(image))
    }
}

fn hex(d: u64) -> String {
    format!("{d:016x}")
}

pub fn run_loop_with(
    engine: &Engine,
    input: PixelImage,
    cfg: &LoopConfig,
    user_prompt: Option<String>,
) -> Result<Trajectory, LoopError> {
    cfg.validate().map_err(|(f, m)| LoopError::InvalidConfig(f, m))?;
    let start = Instant::now();
    let perceiver_clock = Clock::default();
    let sim_exec_clock = Clock::default();
    let sim_eval_clock = Clock::default();
    let mut timings = Timings::default();

    let perceiver = TimedPerceiver(engine.perceiver.as_ref(), &perceiver_clock);
    let sim_executor = TimedExecutor(engine.sim_executor.as_ref(), &sim_exec_clock);
    let sim_evaluator = TimedEvaluator(engine.evaluator.as_ref(), &sim_eval_clock);

    let t = Instant::now();
    let initial_report = engine.evaluator.evaluate(&input).map_err(LoopError::InitialScore)?;
    timings.evaluator += t.elapsed();

    let mut current = ImageState::initial(input).with_score(initial_report.clone());
    let scene = perceiver.classify_scene(&current);
    let user_prompt = user_prompt.filter(|p| !p.trim().is_empty());
    let mut memory = EditingMemory::new(initial_report.aggregate);
    let mut states = vec![current.clone()];
    let mut reports = vec![initial_report];
    let mut rounds = Vec::new();

    let max_iterations = if reports[0].aggregate > cfg.ceiling {
        1
    } else {
        cfg.max_iterations
    };
    let mut stale = 0usize;
    let mut reason = TerminationReason::MaxIterations;

    for iteration in 1..=max_iterations {
        let ctx = PerceiverContext::new(scene, cfg.planner.actions_per_node)
            .with_prompt(user_prompt.clone())
            .with_memory(memory.clone());
        let mut planner_cfg = cfg.planner.clone();
        planner_cfg.rng_seed = cfg.planner.rng_seed.wrapping_add(iteration as u64 - 1);

        let perceiver_before = perceiver_clock.get();
        let t = Instant::now();
        let mut ranked = plan_all(&current, &planner_cfg, &perceiver, &sim_executor, &sim_evaluator, &ctx);
        let plan_wall = t.elapsed();
        let considered: Vec<ConsideredAction> = ranked
            .iter()
            .map(|r| ConsideredAction {
                action_id: r.action.id.clone(),
                category: r.action.category,
                visits: r.visits,
                mean_reward: r.mean_reward,
            })
            .collect();
        ranked.truncate(cfg.planner.top_k);
        timings.planner += plan_wall.saturating_sub(perceiver_clock.get() - perceiver_before);

        let current_report = reports.last().expect("non-empty").clone();
        let root_digest = current.digest();
        if ranked.is_empty() {
            reason = TerminationReason::NoActions;
            break;
        }

        // Execute every forwarded action, then score every result.
        let t = Instant::now();
        let outputs: Vec<Result<PixelImage, ExecError>> = std::thread::scope(|s| {
            let handles: Vec<_> = ranked
                .iter()
                .map(|r| s.spawn(|| engine.executor.apply(&r.action, &current.image)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("executor thread panicked")).collect()
        });
        timings.executor += t.elapsed();

        let t = Instant::now();
        let scored: Vec<Option<Result<ScoreReport, EvalError>>> = std::thread::scope(|s| {
            let handles: Vec<_> = outputs
                .iter()
                .map(|o| {
                    s.spawn(|| match o {
                        Ok(img) => Some(engine.evaluator.evaluate(img)),
                        Err(_) => None,
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluator thread panicked")).collect()
        });
        timings.evaluator += t.elapsed();

        let mut candidates = Vec::with_capacity(ranked.len());
        let mut tried = Vec::with_capacity(ranked.len());
        let mut best: Option<(usize, ScoreReport)> = None;
        let mut executed_digests = Vec::new();
        for (i, ((r, out), score)) in ranked.iter().zip(&outputs).zip(scored).enumerate() {
            let mut rec = CandidateRecord {
                action_id: r.action.id.clone(),
                category: r.action.category,
                instruction: r.action.instruction.clone(),
                origin: r.action.origin,
                planned_visits: r.visits,
                planned_mean_reward: r.mean_reward,
                executed: false,
                error: None,
                aggregate: None,
                digest: None,
            };
            match (out, score) {
                (Err(e), _) => rec.error = Some(e.to_string()),
                (Ok(img), Some(Ok(report))) => {
                    let d = content_hash(img);
                    executed_digests.push(d);
                    rec.executed = true;
                    rec.aggregate = Some(report.aggregate);
                    rec.digest = Some(hex(d));
                    if best.as_ref().is_none_or(|(_, b)| report.aggregate > b.aggregate) {
                        best = Some((i, report));
                    }
                }
                (Ok(img), Some(Err(e))) => {
                    executed_digests.push(content_hash(img));
                    rec.executed = true;
                    rec.error = Some(e.to_string());
                }
                (Ok(_), None) => unreachable!("scored exactly the successful outputs"),
            }
            tried.push(TriedAction {
                action_id: rec.action_id.clone(),
                accepted: false,
                score_delta: rec.aggregate.map(|a| a - current_report.aggregate).unwrap_or(0.0),
                executed: rec.executed,
            });
            candidates.push(rec);
        }

        let mut decision = None;
        let mut accepted_score = None;
        let mut best_id = None;
        if let Some((i, report)) = best {
            best_id = Some(ranked[i].action.id.clone());
            let d = match compare_and_decide(&current_report, &report, cfg.epsilon) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("cannot compare candidate {}: {e}", ranked[i].action.id);
                    Decision::Revert
                }
            };
            decision = Some(d);
            if d == Decision::Accept {
                tried[i].accepted = true;
                accepted_score = Some(report.aggregate);
                let image = outputs[i].as_ref().expect("best candidate executed").clone();
                current = current.successor(&ranked[i].action.id, image).with_score(report.clone());
                states.push(current.clone());
                reports.push(report);
            }
        }
        memory.record(iteration, tried, accepted_score);
        rounds.push(RoundRecord {
            iteration,
            root_digest: hex(root_digest),
            current_aggregate: current_report.aggregate,
            considered,
            candidates,
            best_candidate: best_id,
            decision,
        });

        if accepted_score.is_some() {
            stale = 0;
        } else {
            stale += 1;
        }
        let fixpoint = !executed_digests.is_empty() && executed_digests.iter().all(|&d| d == root_digest);
        if fixpoint {
            reason = TerminationReason::Fixpoint;
            break;
        }
        if stale >= cfg.patience {
            reason = TerminationReason::NoImprovement;
            break;
        }
        if iteration == max_iterations {
            reason = TerminationReason::MaxIterations;
        }
    }

    timings.perceiver = perceiver_clock.get();
    timings.planner_executor = sim_exec_clock.get();
    timings.planner_evaluator = sim_eval_clock.get();
    timings.total = start.elapsed();

    Ok(Trajectory {
        states,
        reports,
        rounds,
        termination_reason: reason,
        timings,
        scene,
        user_prompt,
        memory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::ScoreError;

    fn textured(w: usize, h: usize, base: f64) -> PixelImage {
        PixelImage::from_fn(w, h, |x, y| {
            let t = ((x * 7 + y * 13) % 17) as f64 / 17.0;
            [base + 0.1 * t, base + 0.05 * t, base]
        })
    }

    fn flat_engine(cfg: &LoopConfig) -> Engine {
        let ev = Evaluator::from_scorers(vec![(
            "flat".into(),
            1.0,
            Arc::new(|_: &PixelImage| Ok::<f64, ScoreError>(0.5)) as Arc<dyn crate::evaluator::Scorer>,
        )])
        .unwrap();
        let mut e = Engine::offline(cfg).unwrap();
        e.evaluator = Arc::new(ev);
        e
    }

    #[test]
    fn flat_evaluator_never_accepts() {
        let cfg = LoopConfig::default();
        let input = textured(32, 32, 0.2);
        let t = flat_engine(&cfg).run(input.clone(), &cfg, None).unwrap();
        assert_eq!(t.termination_reason, TerminationReason::NoImprovement);
        assert_eq!(t.rounds.len(), cfg.patience);
        assert_eq!(*t.final_state().image, input);
        assert_eq!(t.states.len(), 1);
    }

    #[test]
    fn single_iteration_bound() {
        let cfg = LoopConfig {
            max_iterations: 1,
            patience: 1,
            ..Default::default()
        };
        let t = run_loop(textured(32, 32, 0.1), &cfg, None).unwrap();
        assert_eq!(t.states.len(), 2);
        assert_eq!(t.termination_reason, TerminationReason::MaxIterations);
        assert!(t.final_aggregate() > t.initial_aggregate());
    }

    #[test]
    fn replans_from_accepted_state_and_records_all_candidates() {
        let cfg = LoopConfig::default();
        let t = run_loop(textured(40, 32, 0.1), &cfg, Some("make it warmer".into())).unwrap();
        let mut accepted = 0;
        for (round, mem) in t.rounds.iter().zip(&t.memory.rounds) {
            assert_eq!(round.root_digest, hex(t.states[accepted].digest()));
            if round.decision == Some(Decision::Accept) {
                accepted += 1;
            }
            let ids: Vec<_> = mem.actions_tried.iter().map(|a| &a.action_id).collect();
            let cand: Vec<_> = round.candidates.iter().map(|c| &c.action_id).collect();
            assert_eq!(ids, cand);
        }
        assert!(t.reports.windows(2).all(|w| w[1].aggregate > w[0].aggregate));
        let v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v["user_prompt"], "make it warmer");
        assert!(v["timings"]["total"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn ceiling_caps_iterations() {
        let cfg = LoopConfig {
            ceiling: 0.4,
            ..Default::default()
        };
        let e = flat_engine(&cfg);
        let t = e.run(textured(32, 32, 0.3), &cfg, None).unwrap();
        assert_eq!(t.rounds.len(), 1);
    }

    #[test]
    fn validation_paths() {
        let cfg = LoopConfig {
            patience: 5,
            ..Default::default()
        };
        assert_eq!(cfg.validate().unwrap_err().0, "patience");
        let mut cfg = LoopConfig::default();
        cfg.planner.budget = 0;
        assert_eq!(cfg.validate().unwrap_err().0, "planner.budget");
    }
}
