//! Experiments around the planner and the loop: rank agreement between
//! reduced and full resolution scoring, strategy comparisons, budget sweeps
//! and runtime profiles.

pub mod profile;
pub mod rank;
pub mod sim2real;
pub mod strategies;
pub mod synthetic;
pub mod table;

pub use profile::{delayed_engine, CallCounts, Delays, ProfileEntry, ProfileReport};
pub use rank::{average_ranks, kendall_tau, ranking, retained, spearman, topk_retention, RankError};
pub use sim2real::{random_candidates, sim2real_experiment, synthetic_images, RankConsistencyReport};
pub use strategies::{compare_strategies, greedy_config, run_strategy, ComparisonReport, Strategy, StrategyOutcome, StrategySummary};
pub use synthetic::{budget_sweep, receding_horizon, staircase, trap_suite, BudgetRow, ScriptedWorld, TrapRow, TreeEnv};
pub use table::format_table;
