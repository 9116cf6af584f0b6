use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use super::table::format_table;
use crate::action::{ActionPayload, EditAction};
use crate::controller::{Engine, Timings};
use crate::evaluator::{EvalError, ImageEvaluator, ScoreReport};
use crate::executor::{apply_procedural, ActionExecutor, ExecError};
use crate::imaging::{content_hash, ImageState, PixelImage};
use crate::perceiver::{HeuristicPerceiver, PerceiveError, Perceiver, PerceiverContext, Scene};
use crate::stats::compute_statistics;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileEntry {
    pub component: String,
    pub seconds: f64,
    pub percent_of_total: f64,
    /// Share of the enclosing row; top-level rows use the total.
    pub percent_of_parent: f64,
    pub nested: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileReport {
    pub entries: Vec<ProfileEntry>,
    pub total_seconds: f64,
}

fn pct(part: f64, whole: f64) -> f64 {
    if whole > 0.0 {
        100.0 * part / whole
    } else {
        0.0
    }
}

impl ProfileReport {
    pub fn from_timings(t: &Timings) -> Self {
        let total = t.total.as_secs_f64();
        let planner = t.planner.as_secs_f64();
        let row = |name: &str, d: Duration, parent: f64, nested: bool| ProfileEntry {
            component: name.to_string(),
            seconds: d.as_secs_f64(),
            percent_of_total: pct(d.as_secs_f64(), total),
            percent_of_parent: pct(d.as_secs_f64(), parent),
            nested,
        };
        Self {
            entries: vec![
                row("perceiver", t.perceiver, total, false),
                row("planner", t.planner, total, false),
                row("planner_executor", t.planner_executor, planner, true),
                row("planner_evaluator", t.planner_evaluator, planner, true),
                row("executor", t.executor, total, false),
                row("evaluator", t.evaluator, total, false),
            ],
            total_seconds: total,
        }
    }

    pub fn entry(&self, name: &str) -> Option<&ProfileEntry> {
        self.entries.iter().find(|e| e.component == name)
    }

    /// Sum of top-level percentages.
    pub fn top_level_percent(&self) -> f64 {
        self.entries.iter().filter(|e| !e.nested).map(|e| e.percent_of_total).sum()
    }

    pub fn to_table(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .entries
            .iter()
            .map(|e| {
                let name = match e.component.as_str() {
                    "perceiver" => "Perceiver".to_string(),
                    "planner" => "Planner".to_string(),
                    "planner_executor" => "  - Executor (in planner)".to_string(),
                    "planner_evaluator" => "  - Evaluator (in planner)".to_string(),
                    "executor" => "Executor".to_string(),
                    "evaluator" => "Evaluator".to_string(),
                    other => other.to_string(),
                };
                let share = if e.nested {
                    format!("{:.1}% of planner", e.percent_of_parent)
                } else {
                    format!("{:.1}%", e.percent_of_total)
                };
                vec![name, format!("{:.3}", e.seconds), share]
            })
            .collect();
        rows.push(vec!["Total".into(), format!("{:.3}", self.total_seconds), "100.0%".into()]);
        format_table(&["Component", "Time (s)", "Share"], &rows)
    }
}

/// Injected per-call delays for the profiling harness.
#[derive(Clone, Copy, Debug)]
pub struct Delays {
    pub perceiver: Duration,
    pub sim_executor: Duration,
    pub sim_evaluator: Duration,
    pub executor: Duration,
    pub evaluator: Duration,
}

impl Default for Delays {
    fn default() -> Self {
        Self {
            perceiver: Duration::from_millis(2),
            sim_executor: Duration::from_millis(3),
            sim_evaluator: Duration::from_millis(2),
            executor: Duration::from_millis(40),
            evaluator: Duration::from_millis(10),
        }
    }
}

/// Call counters shared by the delayed components.
#[derive(Debug, Default)]
pub struct CallCounts {
    pub perceiver: AtomicUsize,
    pub sim_executor: AtomicUsize,
    pub sim_evaluator: AtomicUsize,
    pub executor: AtomicUsize,
    pub evaluator: AtomicUsize,
}

struct SlowPerceiver(Duration, Arc<CallCounts>, HeuristicPerceiver);

impl Perceiver for SlowPerceiver {
    fn classify_scene(&self, state: &ImageState) -> Scene {
        std::thread::sleep(self.0);
        self.1.perceiver.fetch_add(1, Ordering::Relaxed);
        self.2.classify_scene(state)
    }

    fn propose(&self, state: &ImageState, ctx: &PerceiverContext) -> Result<Vec<EditAction>, PerceiveError> {
        std::thread::sleep(self.0);
        self.1.perceiver.fetch_add(1, Ordering::Relaxed);
        self.2.propose(state, ctx)
    }
}

struct SlowExecutor(Duration, Arc<CallCounts>, bool);

impl ActionExecutor for SlowExecutor {
    fn apply(&self, action: &EditAction, image: &PixelImage) -> Result<PixelImage, ExecError> {
        std::thread::sleep(self.0);
        let c = if self.2 { &self.1.sim_executor } else { &self.1.executor };
        c.fetch_add(1, Ordering::Relaxed);
        match &action.payload {
            ActionPayload::Procedural(p) => apply_procedural(p, image).map_err(ExecError::Action),
            ActionPayload::Generative { .. } => Ok(image.clone()),
        }
    }
}

/// Scores by mean luminance closeness to mid-grey; cheap and image-dependent.
struct SlowEvaluator(Duration, Duration, Arc<CallCounts>, usize);

impl ImageEvaluator for SlowEvaluator {
    fn evaluate(&self, image: &PixelImage) -> Result<ScoreReport, EvalError> {
        // reduced-resolution copies are narrower than the full input
        let sim = image.width() < self.3;
        std::thread::sleep(if sim { self.1 } else { self.0 });
        let c = if sim { &self.2.sim_evaluator } else { &self.2.evaluator };
        c.fetch_add(1, Ordering::Relaxed);
        let s = compute_statistics(image);
        let raw = (1.0 - 2.0 * (s.mean_luminance - 0.5).abs()).clamp(0.0, 1.0);
        Ok(ScoreReport::single("exposure", raw, content_hash(image)))
    }
}

/// An engine whose components sleep for known durations and count calls.
/// `full_width` tells the evaluator which images are simulation copies.
pub fn delayed_engine(delays: Delays, full_width: usize) -> (Engine, Arc<CallCounts>) {
    let counts = Arc::new(CallCounts::default());
    let engine = Engine::new(
        Arc::new(SlowPerceiver(delays.perceiver, counts.clone(), HeuristicPerceiver::default())),
        Arc::new(SlowExecutor(delays.executor, counts.clone(), false)),
        Arc::new(SlowExecutor(delays.sim_executor, counts.clone(), true)),
        Arc::new(SlowEvaluator(delays.evaluator, delays.sim_evaluator, counts.clone(), full_width)),
    );
    (engine, counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_total_has_no_nan() {
        let r = ProfileReport::from_timings(&Timings::default());
        assert!(r.entries.iter().all(|e| e.percent_of_total == 0.0 && e.percent_of_parent == 0.0));
        assert!(r.to_table().contains("Total"));
    }

    #[test]
    fn percentages_from_known_timings() {
        let t = Timings {
            perceiver: Duration::from_millis(10),
            planner: Duration::from_millis(250),
            planner_executor: Duration::from_millis(200),
            planner_evaluator: Duration::from_millis(25),
            executor: Duration::from_millis(180),
            evaluator: Duration::from_millis(30),
            total: Duration::from_millis(470),
        };
        let r = ProfileReport::from_timings(&t);
        assert!((r.entry("planner").unwrap().percent_of_total - 25000.0 / 470.0).abs() < 1e-9);
        assert!((r.entry("planner_executor").unwrap().percent_of_parent - 80.0).abs() < 1e-9);
        assert!((r.top_level_percent() - 100.0).abs() < 1e-9);
    }
}
