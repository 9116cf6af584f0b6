//! Command-line front end: single-image editing, batch runs and the
//! analysis experiments.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand, ValueEnum};
use editloop_core::analysis::{
    budget_sweep, compare_strategies, delayed_engine, format_table, sim2real_experiment, staircase, synthetic_images,
    trap_suite, Delays, ProfileReport, ScriptedWorld, Strategy, TreeEnv,
};
use editloop_core::controller::{Engine, TerminationReason, Trajectory};
use editloop_core::evaluator::{EvalError, Evaluator};
use editloop_core::imaging::{PixelImage, Scale};
use editloop_core::perceiver::{ExternalPerceiver, FallbackPerceiver};
use serde::Serialize;
use thiserror::Error;

pub use config::{ConfigError, EngineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

const DEFAULT_OUT: &str = "editloop-out";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Parser)]
#[command(name = "editloop", version, about = "Closed-loop photo editing with tree-search planning")]
pub struct Cli {
    /// Engine configuration file (TOML or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the planner seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Full,
    Half,
    Quarter,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Edit one image.
    Edit {
        input: PathBuf,
        /// Free-text guidance such as "warmer mood".
        #[arg(long)]
        prompt: Option<String>,
    },
    /// Edit every PNG or JPEG in a directory.
    Batch {
        input_dir: PathBuf,
        /// Images processed at once.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Planner benchmarks on synthetic decision trees.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = vec![5, 10, 15, 20])]
        budgets: Vec<usize>,
        /// Random environments per budget.
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, default_value_t = 20)]
        traps: usize,
    },
    /// Rank agreement between reduced and full resolution scoring.
    Sim2real {
        #[arg(long, value_enum, default_value_t = ScaleArg::All)]
        scale: ScaleArg,
        /// Synthetic images, ignored with --input-dir.
        #[arg(long, default_value_t = 20)]
        images: usize,
        #[arg(long, default_value_t = 10)]
        candidates: usize,
        #[arg(long)]
        input_dir: Option<PathBuf>,
    },
    /// Per-component runtime breakdown; uses fixed-delay mock components
    /// unless an input image is given.
    Profile { input: Option<PathBuf> },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("unreadable input: {0}")]
    Input(String),
    #[error("internal failure: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let level = if cli.verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();

    let cfg = match load_config(cli.config.as_deref(), cli.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.io.output.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    let result = match &cli.command {
        Command::Edit { input, prompt } => cmd_edit(input, &cfg, &out, prompt.clone()).map(|_| EXIT_OK),
        Command::Batch { input_dir, parallel } => cmd_batch(input_dir, &cfg, &out, *parallel).map(|s| s.exit_code()),
        Command::Bench { budgets, seeds, traps } => cmd_bench(budgets, *seeds, *traps, &cfg, &out).map(|_| EXIT_OK),
        Command::Sim2real {
            scale,
            images,
            candidates,
            input_dir,
        } => cmd_sim2real(*scale, *images, *candidates, input_dir.as_deref(), &cfg, &out).map(|_| EXIT_OK),
        Command::Profile { input } => cmd_profile(input.as_deref(), &cfg, &out).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            if let CliError::Internal(msg) = &e {
                write_error_report(&out, msg);
            }
            e.exit_code()
        }
    }
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<EngineConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::from_env()?,
    };
    if seed.is_some() {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_error_report(out: &Path, msg: &str) {
    let body = serde_json::json!({ "error": msg, "exit_code": EXIT_INTERNAL });
    if std::fs::create_dir_all(out).is_ok() {
        let _ = std::fs::write(out.join("error.json"), serde_json::to_string_pretty(&body).unwrap_or_default());
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(internal)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(internal)?;
    std::fs::write(path, text).map_err(internal)
}

/// Built-in components, with remote perceiver, editors and scorers wired in
/// for every configured endpoint.
pub fn build_engine(cfg: &EngineConfig) -> Result<Engine, CliError> {
    let engine = Engine::from_config(&cfg.loop_config(), &cfg.endpoints).map_err(|e| match e {
        EvalError::UnknownEndpoint { ref scorer, .. } => CliError::Config(ConfigError::Invalid {
            path: format!("scorers.{scorer}"),
            message: e.to_string(),
        }),
        other => CliError::Config(ConfigError::Invalid {
            path: "scorers".into(),
            message: other.to_string(),
        }),
    })?;
    Ok(match cfg.endpoints.get(config::PERCEIVER_ENDPOINT) {
        Some(ep) => engine.with_perceiver(Arc::new(FallbackPerceiver::new(ExternalPerceiver::new(ep.clone())))),
        None => engine,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EditOutcome {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub initial_aggregate: f64,
    pub final_aggregate: f64,
    pub termination_reason: TerminationReason,
    pub accepted_edits: Vec<String>,
    pub final_digest: String,
}

fn load_image(path: &Path) -> Result<PixelImage, CliError> {
    PixelImage::load(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Runs the loop on one image and writes final.png, the accepted states and
/// trajectory.json into `out`.
pub fn edit_with_engine(
    engine: &Engine,
    input: &Path,
    cfg: &EngineConfig,
    out: &Path,
    prompt: Option<String>,
) -> Result<(EditOutcome, Trajectory), CliError> {
    let image = load_image(input)?;
    let lc = cfg.loop_config();
    let t = engine.run(image, &lc, prompt).map_err(internal)?;
    let states_dir = out.join("states");
    std::fs::create_dir_all(&states_dir).map_err(internal)?;
    for (i, s) in t.states.iter().enumerate() {
        s.image.save(states_dir.join(format!("state_{i:02}.png"))).map_err(internal)?;
    }
    t.final_state().image.save(out.join("final.png")).map_err(internal)?;
    std::fs::write(out.join("trajectory.json"), t.to_json()).map_err(internal)?;
    let outcome = EditOutcome {
        input: input.to_path_buf(),
        output_dir: out.to_path_buf(),
        initial_aggregate: t.initial_aggregate(),
        final_aggregate: t.final_aggregate(),
        termination_reason: t.termination_reason,
        accepted_edits: t.final_state().history.clone(),
        final_digest: format!("{:016x}", t.final_state().digest()),
    };
    Ok((outcome, t))
}

pub fn cmd_edit(input: &Path, cfg: &EngineConfig, out: &Path, prompt: Option<String>) -> Result<EditOutcome, CliError> {
    let engine = build_engine(cfg)?;
    let (outcome, t) = edit_with_engine(&engine, input, cfg, out, prompt)?;
    let rows: Vec<Vec<String>> = t
        .rounds
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                r.best_candidate.clone().unwrap_or_else(|| "-".into()),
                r.candidates
                    .iter()
                    .filter_map(|c| c.aggregate)
                    .reduce(f64::max)
                    .map_or_else(|| "-".into(), |v| format!("{v:.4}")),
                format!("{:.4}", r.current_aggregate),
                r.decision.map(|d| format!("{d:?}")).unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    println!("{}", format_table(&["Iter", "Best candidate", "Score", "Current", "Decision"], &rows));
    println!(
        "{:?}: {:.4} -> {:.4}, written to {}",
        outcome.termination_reason,
        outcome.initial_aggregate,
        outcome.final_aggregate,
        out.display()
    );
    Ok(outcome)
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchEntry {
    pub input: PathBuf,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<EditOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchSummary {
    pub total: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub entries: Vec<BatchEntry>,
}

impl BatchSummary {
    /// Success unless every image failed; an empty batch succeeds.
    pub fn exit_code(&self) -> i32 {
        if self.total > 0 && self.succeeded == 0 {
            EXIT_INTERNAL
        } else {
            EXIT_OK
        }
    }
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_batch(input_dir: &Path, cfg: &EngineConfig, out: &Path, parallel: usize) -> Result<BatchSummary, CliError> {
    let files = list_images(input_dir)?;
    let engine = build_engine(cfg)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<BatchEntry>>> = Mutex::new(vec![None; files.len()]);
    std::thread::scope(|s| {
        for _ in 0..parallel.clamp(1, files.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(path) = files.get(i) else { break };
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let entry = match edit_with_engine(&engine, path, cfg, &out.join(&stem), None) {
                    Ok((outcome, _)) => BatchEntry {
                        input: path.clone(),
                        ok: true,
                        outcome: Some(outcome),
                        error: None,
                    },
                    Err(e) => {
                        log::warn!("{}: {e}", path.display());
                        BatchEntry {
                            input: path.clone(),
                            ok: false,
                            outcome: None,
                            error: Some(e.to_string()),
                        }
                    }
                };
                results.lock().expect("results lock")[i] = Some(entry);
            });
        }
    });
    let entries: Vec<BatchEntry> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|e| e.expect("every image processed"))
        .collect();
    let succeeded = entries.iter().filter(|e| e.ok).count();
    let summary = BatchSummary {
        total: entries.len(),
        succeeded,
        failed: entries.len() - succeeded,
        entries,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!("{} of {} images edited, summary in {}", summary.succeeded, summary.total, out.display());
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub budget_sweep: Vec<editloop_core::analysis::BudgetRow>,
    pub traps: Vec<editloop_core::analysis::TrapRow>,
    pub strategies: editloop_core::analysis::ComparisonReport,
}

pub fn cmd_bench(budgets: &[usize], seeds: usize, traps: usize, cfg: &EngineConfig, out: &Path) -> Result<BenchReport, CliError> {
    if budgets.is_empty() || budgets.contains(&0) || seeds == 0 {
        return Err(CliError::Config(ConfigError::Invalid {
            path: "bench".into(),
            message: "budgets and seeds must be positive".into(),
        }));
    }
    let planner = cfg.loop_config().planner;
    let sweep = budget_sweep(budgets, seeds, 4, 3);
    let trap_cfg = editloop_core::planner::PlannerConfig {
        budget: 200,
        top_k: 1,
        ..planner
    };
    let trap_rows = trap_suite(traps, &trap_cfg);

    // Strategies on scripted worlds. Only one action is forwarded so the
    // lookahead is what decides.
    let mut lc = cfg.loop_config();
    lc.planner.top_k = 1;
    lc.planner.budget = 200;
    let mut outcomes = Vec::new();
    let mut worlds: Vec<TreeEnv> = (0..4).map(|s| TreeEnv::trap(s, s % 2 == 0)).collect();
    worlds.push(staircase());
    for env in worlds {
        let world = Arc::new(ScriptedWorld::new(env));
        let engine = Engine::new(world.clone(), world.clone(), world.clone(), world.clone());
        let r = compare_strategies(&[world.root_image()], &Strategy::ALL, &lc, &engine).map_err(internal)?;
        outcomes.extend(r.outcomes);
    }
    let strategies = summarize(outcomes);

    let rows: Vec<Vec<String>> = sweep
        .iter()
        .map(|r| vec![r.budget.to_string(), format!("{:.4}", r.mean_reward), format!("{:.2}", r.optimal_rate), r.runs.to_string()])
        .collect();
    println!("{}", format_table(&["Budget", "Mean reward", "Optimal rate", "Runs"], &rows));
    let rows: Vec<Vec<String>> = trap_rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.has_trap.to_string(),
                format!("{:.2}", r.greedy),
                format!("{:.2}", r.mcts),
                format!("{:.2}", r.oracle_best),
            ]
        })
        .collect();
    println!("{}", format_table(&["Instance", "Trap", "Greedy", "MCTS", "Oracle"], &rows));
    let rows: Vec<Vec<String>> = strategies
        .summary
        .iter()
        .map(|s| vec![s.strategy.label().to_string(), format!("{:.4}", s.mean_initial), format!("{:.4}", s.mean_final), s.regressions.to_string()])
        .collect();
    println!("{}", format_table(&["Strategy", "Initial", "Final", "Regressions"], &rows));

    let report = BenchReport {
        budget_sweep: sweep,
        traps: trap_rows,
        strategies,
    };
    write_json(&out.join("bench.json"), &report)?;
    Ok(report)
}

fn summarize(outcomes: Vec<editloop_core::analysis::StrategyOutcome>) -> editloop_core::analysis::ComparisonReport {
    let summary = Strategy::ALL
        .iter()
        .map(|&s| {
            let rows: Vec<_> = outcomes.iter().filter(|o| o.strategy == s).collect();
            let n = rows.len().max(1) as f64;
            editloop_core::analysis::StrategySummary {
                strategy: s,
                mean_initial: rows.iter().map(|o| o.initial).sum::<f64>() / n,
                mean_final: rows.iter().map(|o| o.final_aggregate).sum::<f64>() / n,
                regressions: rows.iter().filter(|o| o.final_aggregate < o.initial).count(),
            }
        })
        .collect();
    editloop_core::analysis::ComparisonReport { outcomes, summary }
}

pub fn cmd_sim2real(
    scale: ScaleArg,
    images: usize,
    candidates: usize,
    input_dir: Option<&Path>,
    cfg: &EngineConfig,
    out: &Path,
) -> Result<Vec<editloop_core::analysis::RankConsistencyReport>, CliError> {
    let imgs = match input_dir {
        Some(dir) => list_images(dir)?.iter().map(|p| load_image(p)).collect::<Result<Vec<_>, _>>()?,
        None => synthetic_images(images, 128, 96, cfg.seed.unwrap_or(7)),
    };
    let evaluator = Evaluator::from_config(&cfg.scorers, &Default::default()).map_err(|e| {
        CliError::Config(ConfigError::Invalid {
            path: "scorers".into(),
            message: format!("{e} (this experiment runs offline)"),
        })
    })?;
    let scales = match scale {
        ScaleArg::Full => vec![Scale::Full],
        ScaleArg::Half => vec![Scale::Half],
        ScaleArg::Quarter => vec![Scale::Quarter],
        ScaleArg::All => vec![Scale::Full, Scale::Half, Scale::Quarter],
    };
    let seed = cfg.seed.unwrap_or(11);
    let reports: Vec<_> = scales
        .into_iter()
        .map(|s| sim2real_experiment(&imgs, candidates, s, &evaluator, seed))
        .collect();
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.scale.label().to_string(),
                format!("{:.3}", r.spearman),
                format!("{:.3}", r.kendall_tau),
                format!("{:.0}%", 100.0 * r.top1_retention),
                format!("{:.0}%", 100.0 * r.top3_retention),
                r.n.to_string(),
            ]
        })
        .collect();
    println!("{}", format_table(&["Resolution", "Spearman", "Kendall tau", "Top-1", "Top-3", "Images"], &rows));
    write_json(&out.join("sim2real.json"), &reports)?;
    Ok(reports)
}

pub fn cmd_profile(input: Option<&Path>, cfg: &EngineConfig, out: &Path) -> Result<ProfileReport, CliError> {
    let lc = cfg.loop_config();
    let t = match input {
        Some(p) => {
            let engine = build_engine(cfg)?;
            engine.run(load_image(p)?, &lc, None).map_err(internal)?
        }
        None => {
            let img = synthetic_images(1, 64, 48, 3).remove(0);
            let (engine, _) = delayed_engine(Delays::default(), img.width());
            engine.run(img, &lc, None).map_err(internal)?
        }
    };
    let report = ProfileReport::from_timings(&t.timings);
    println!("{}", report.to_table());
    write_json(&out.join("profile.json"), &report)?;
    Ok(report)
}
