use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriedAction {
    pub action_id: String,
    pub accepted: bool,
    /// Candidate aggregate minus the aggregate of the state it was tried on.
    /// Zero for candidates that failed to execute.
    pub score_delta: f64,
    #[serde(default = "yes")]
    pub executed: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryRound {
    pub iteration: usize,
    pub actions_tried: Vec<TriedAction>,
}

/// Per-round outcomes that condition later proposals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditingMemory {
    pub rounds: Vec<MemoryRound>,
    pub best_score_so_far: f64,
}

impl EditingMemory {
    pub fn new(initial_score: f64) -> Self {
        Self {
            rounds: Vec::new(),
            best_score_so_far: initial_score,
        }
    }

    /// Appends a round. Iterations must be strictly increasing.
    ///
    /// # Panics
    /// If `iteration` does not exceed the last recorded iteration.
    pub fn record(&mut self, iteration: usize, actions_tried: Vec<TriedAction>, accepted_score: Option<f64>) {
        if let Some(last) = self.rounds.last() {
            assert!(iteration > last.iteration, "memory iterations must increase");
        }
        if let Some(s) = accepted_score {
            self.best_score_so_far = self.best_score_so_far.max(s);
        }
        self.rounds.push(MemoryRound {
            iteration,
            actions_tried,
        });
    }

    /// Ids of actions that were executed and rejected within the last
    /// `window` rounds.
    pub fn recently_rejected(&self, window: usize) -> BTreeSet<&str> {
        self.rounds
            .iter()
            .rev()
            .take(window)
            .flat_map(|r| r.actions_tried.iter())
            .filter(|a| a.executed && !a.accepted)
            .map(|a| a.action_id.as_str())
            .collect()
    }

    pub fn flattened(&self) -> impl Iterator<Item = &TriedAction> {
        self.rounds.iter().flat_map(|r| r.actions_tried.iter())
    }
}

impl Default for EditingMemory {
    fn default() -> Self {
        Self::new(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tried(id: &str, accepted: bool) -> TriedAction {
        TriedAction {
            action_id: id.into(),
            accepted,
            score_delta: if accepted { 0.1 } else { -0.1 },
            executed: true,
        }
    }

    #[test]
    fn rejection_window() {
        let mut m = EditingMemory::new(0.3);
        m.record(1, vec![tried("a", false)], None);
        m.record(2, vec![tried("b", true), tried("c", false)], Some(0.5));
        m.record(3, vec![tried("d", false)], None);
        m.record(4, vec![tried("e", false)], None);
        let r = m.recently_rejected(3);
        assert!(!r.contains("a"));
        assert!(r.contains("c") && r.contains("d") && r.contains("e"));
        assert!(!r.contains("b"));
        assert_eq!(m.best_score_so_far, 0.5);
    }

    #[test]
    #[should_panic]
    fn iterations_must_increase() {
        let mut m = EditingMemory::default();
        m.record(2, vec![], None);
        m.record(2, vec![], None);
    }
}
