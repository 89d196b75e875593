//! End-to-end experiment: one shared train/test split, every requested
//! strategy x budget x mode combination, then comparison tables and
//! plot-ready CSVs.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::allocation::{allocate, placement_stats, AllocOptions, PlacementPlan, PlacementStats};
use crate::cooccur::{build_cooccurrence, CoOccurrenceGraph, DEFAULT_MAX_DEGREE};
use crate::grouping::{
    group_frequency, group_naive, CorrelationGrouper, GroupingPlan, Strategy, WeightTarget,
};
use crate::hwmodel::CostConfig;
use crate::sim::{
    compare_runs, comparison_csv, ComparisonRow, ExecMode, SimConfig, SimReport, Simulator,
};
use crate::trace::{generate_synthetic, parse_trace, GeneratorParams, Trace};

/// Pipeline stage an error came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Trace,
    Graph,
    Grouping,
    Allocation,
    Simulation,
    Compare,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Trace => "trace",
            Stage::Graph => "graph",
            Stage::Grouping => "grouping",
            Stage::Allocation => "allocation",
            Stage::Simulation => "simulation",
            Stage::Compare => "compare",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct ExperimentError {
    pub stage: Stage,
    pub message: String,
}

impl ExperimentError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        ExperimentError {
            stage,
            message: message.to_string(),
        }
    }
}

trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T, ExperimentError>;
}

impl<T, E: fmt::Display> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, ExperimentError> {
        self.map_err(|e| ExperimentError::new(stage, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Trace file; the synthetic generator is used when absent.
    pub trace_path: Option<PathBuf>,
    pub generator: GeneratorParams,
    pub train_fraction: f64,
    pub strategies: Vec<Strategy>,
    pub group_size: usize,
    /// Extra crossbars as a fraction of the base crossbar count.
    pub budgets: Vec<f64>,
    pub batch_size: usize,
    /// Hardware/energy document (JSON or `key = value`); defaults when absent.
    pub hw_config: Option<PathBuf>,
    pub exec_modes: Vec<ExecMode>,
    /// Left out of snapshots so relocated runs stay byte-identical.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Per-node edge cap for the co-occurrence graph; `None` keeps every edge.
    pub max_degree: Option<usize>,
    pub weight_target: WeightTarget,
    pub alloc: AllocOptions,
    /// Run the comparison is normalized to. Defaults to `nmars` when that
    /// mode runs, otherwise the first run.
    pub baseline: Option<String>,
    /// Group sizes swept for the single-row activation analysis.
    pub single_row_group_sizes: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            trace_path: None,
            generator: GeneratorParams::with_defaults(10_000, 60_000),
            train_fraction: 0.8,
            strategies: Strategy::ALL.to_vec(),
            group_size: 64,
            budgets: vec![0.0, 0.05, 0.10, 0.20],
            batch_size: 256,
            hw_config: None,
            exec_modes: ExecMode::ALL.to_vec(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            max_degree: Some(DEFAULT_MAX_DEGREE),
            weight_target: WeightTarget::Group,
            alloc: AllocOptions::default(),
            baseline: None,
            single_row_group_sizes: vec![8, 16, 32, 64],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, costs: &CostConfig) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::new(Stage::Config, m));
        let rows = costs.hw.xbar_rows;
        if self.group_size < 1 || self.group_size > rows {
            return fail(format!(
                "group_size {} must be in 1..={rows}",
                self.group_size
            ));
        }
        if let Some(&gs) = self
            .single_row_group_sizes
            .iter()
            .find(|&&gs| gs < 1 || gs > rows)
        {
            return fail(format!(
                "single-row sweep group size {gs} must be in 1..={rows}"
            ));
        }
        if self.strategies.is_empty() || self.budgets.is_empty() || self.exec_modes.is_empty() {
            return fail("strategies, budgets and exec_modes must be nonempty".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1".into());
        }
        if let Some(b) = self.budgets.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return fail(format!("budget {b} must be >= 0"));
        }
        Ok(())
    }

    pub fn load_costs(&self) -> Result<CostConfig, ExperimentError> {
        match &self.hw_config {
            Some(p) => CostConfig::load(p)
                .map_err(|e| ExperimentError::new(Stage::Config, format!("{}: {e}", p.display()))),
            None => Ok(CostConfig::default()),
        }
    }
}

/// Budget as a percentage, rounded to drop float noise (0.05 -> 5).
pub fn budget_pct(budget: f64) -> f64 {
    (budget * 100.0 * 1e6).round() / 1e6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub strategy: Strategy,
    pub budget_pct: f64,
    pub mode: ExecMode,
    pub report: SimReport,
    pub placement: PlacementStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleRowPoint {
    pub group_size: usize,
    pub single_row_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunRecord>,
    pub baseline: String,
    pub comparison: Vec<ComparisonRow>,
    pub single_row: Vec<SingleRowPoint>,
    pub trace_sha256: String,
    pub hw_config_sha256: Option<String>,
    /// Placement dumps keyed by `<strategy>-dup<pct>`.
    #[serde(skip)]
    pub placements: Vec<(String, PlacementPlan)>,
}

fn run_name(strategy: Strategy, pct: f64, mode: ExecMode) -> String {
    format!("{strategy}-dup{pct}-{mode}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load_trace(cfg: &ExperimentConfig) -> Result<Trace, ExperimentError> {
    match &cfg.trace_path {
        Some(p) => parse_trace(p).map_err(|e| {
            if e.is_not_found() {
                ExperimentError::new(Stage::Trace, format!("not found: {}", p.display()))
            } else {
                ExperimentError::new(Stage::Trace, e)
            }
        }),
        None => {
            let params = GeneratorParams {
                seed: cfg.seed,
                ..cfg.generator.clone()
            };
            generate_synthetic(&params).stage(Stage::Trace)
        }
    }
}

pub fn make_grouping(
    strategy: Strategy,
    graph: &CoOccurrenceGraph,
    group_size: usize,
    target: WeightTarget,
) -> GroupingPlan {
    match strategy {
        Strategy::Naive => group_naive(graph.num_items(), group_size),
        Strategy::Frequency => group_frequency(graph, group_size),
        Strategy::Correlation => CorrelationGrouper::new(graph, group_size)
            .target(target)
            .run(None),
    }
}

/// Runs the whole matrix in memory. `nmars` ignores grouping and replication,
/// so it runs once on the naive unreplicated placement.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    let costs = cfg.load_costs()?;
    cfg.validate(&costs)?;
    let hw_config_sha256 = match &cfg.hw_config {
        Some(p) => Some(sha256_hex(&fs::read(p).stage(Stage::Config)?)),
        None => None,
    };

    let trace = load_trace(cfg)?;
    let trace_sha256 = sha256_hex(trace.to_text().as_bytes());
    let (train, test) = trace.split(cfg.train_fraction).stage(Stage::Trace)?;
    let graph = build_cooccurrence(&train, cfg.max_degree);

    let sim_cfg = |mode| SimConfig {
        batch_size: cfg.batch_size,
        exec_mode: mode,
        hw: costs.hw.clone(),
        em: costs.em.clone(),
    };
    let simulate = |plan: &PlacementPlan, mode| -> Result<SimReport, ExperimentError> {
        let sc = sim_cfg(mode);
        Simulator::new(plan, &sc)
            .and_then(|s| s.run_trace(&test))
            .stage(Stage::Simulation)
    };

    let mut runs = Vec::new();
    let mut placements = Vec::new();
    for &strategy in &cfg.strategies {
        let grouping = make_grouping(strategy, &graph, cfg.group_size, cfg.weight_target);
        for &budget in &cfg.budgets {
            let plan = allocate(
                &grouping,
                &graph,
                &costs.hw,
                cfg.batch_size,
                budget,
                cfg.alloc,
            )
            .stage(Stage::Allocation)?;
            let pct = budget_pct(budget);
            let stats = placement_stats(&plan);
            for &mode in cfg.exec_modes.iter().filter(|&&m| m != ExecMode::Nmars) {
                runs.push(RunRecord {
                    name: run_name(strategy, pct, mode),
                    strategy,
                    budget_pct: pct,
                    mode,
                    report: simulate(&plan, mode)?,
                    placement: stats.clone(),
                });
            }
            placements.push((format!("{strategy}-dup{pct}"), plan));
        }
    }
    if cfg.exec_modes.contains(&ExecMode::Nmars) {
        let grouping = group_naive(graph.num_items(), cfg.group_size);
        let plan = allocate(&grouping, &graph, &costs.hw, cfg.batch_size, 0.0, cfg.alloc)
            .stage(Stage::Allocation)?;
        runs.push(RunRecord {
            name: "nmars".into(),
            strategy: Strategy::Naive,
            budget_pct: 0.0,
            mode: ExecMode::Nmars,
            report: simulate(&plan, ExecMode::Nmars)?,
            placement: placement_stats(&plan),
        });
    }

    let baseline = match &cfg.baseline {
        Some(b) => b.clone(),
        None if runs.iter().any(|r| r.name == "nmars") => "nmars".into(),
        None => runs[0].name.clone(),
    };
    let named: Vec<(String, SimReport)> = runs
        .iter()
        .map(|r| (r.name.clone(), r.report.clone()))
        .collect();
    let comparison = compare_runs(&named, &baseline).stage(Stage::Compare)?;

    let mut single_row = Vec::new();
    for &gs in &cfg.single_row_group_sizes {
        let grouping = make_grouping(Strategy::Correlation, &graph, gs, cfg.weight_target);
        let plan = allocate(&grouping, &graph, &costs.hw, cfg.batch_size, 0.0, cfg.alloc)
            .stage(Stage::Allocation)?;
        let report = simulate(&plan, ExecMode::Switched)?;
        single_row.push(SingleRowPoint {
            group_size: gs,
            single_row_fraction: report.single_row_fraction(),
        });
    }

    Ok(ExperimentOutcome {
        runs,
        baseline,
        comparison,
        single_row,
        trace_sha256,
        hw_config_sha256,
        placements,
    })
}

/// Runs the pipeline and writes every artifact under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    let outcome = run_pipeline(cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir.join("reports")).stage(Stage::Output)?;
    fs::create_dir_all(dir.join("plans")).stage(Stage::Output)?;

    let costs = cfg.load_costs()?;
    let snapshot = json!({
        "experiment": cfg,
        "hardware": costs.to_map(),
    });
    write_json(&dir.join("config.json"), &snapshot)?;
    let manifest = json!({
        "trace_sha256": outcome.trace_sha256,
        "hw_config_sha256": outcome.hw_config_sha256,
        "config_sha256": sha256_hex(serde_json::to_string(&snapshot).unwrap_or_default().as_bytes()),
        "baseline": outcome.baseline,
        "runs": outcome.runs.iter().map(|r| r.name.as_str()).collect::<Vec<_>>(),
    });
    write_json(&dir.join("manifest.json"), &manifest)?;

    for run in &outcome.runs {
        write_json(
            &dir.join("reports").join(format!("{}.json", run.name)),
            &run.report,
        )?;
    }
    for (key, plan) in &outcome.placements {
        write_json(
            &dir.join("plans").join(format!("{key}.json")),
            &plan.to_dump_json(),
        )?;
        write_text(
            &dir.join("plans").join(format!("{key}.groups.txt")),
            &plan.grouping.to_dump_text(),
        )?;
    }
    write_text(
        &dir.join("comparison.csv"),
        &comparison_csv(&outcome.comparison),
    )?;
    emit_figure_data(&outcome, dir)?;
    Ok(outcome)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value).stage(Stage::Output)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text)
        .map_err(|e| ExperimentError::new(Stage::Output, format!("{}: {e}", path.display())))
}

pub const FIGURE_FILES: [&str; 5] = [
    "copy_histogram.csv",
    "single_row_fraction.csv",
    "activations.csv",
    "duplication_sweep.csv",
    "overall.csv",
];

/// Writes the five plot-ready CSVs and returns their paths.
///
/// - `copy_histogram.csv`: strategy,budget_pct,replicas,num_groups,evenness
/// - `single_row_fraction.csv`: group_size,single_row_fraction
/// - `activations.csv`: run,strategy,mode,total_activations
/// - `duplication_sweep.csv`: budget_pct,speedup,energy_eff (vs. the 0% run)
/// - `overall.csv`: run,speedup,energy_eff (vs. the baseline)
pub fn emit_figure_data(
    outcome: &ExperimentOutcome,
    dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    if outcome.runs.is_empty() {
        return Err(ExperimentError::new(Stage::Output, "no runs to report"));
    }
    fs::create_dir_all(dir).stage(Stage::Output)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<(), ExperimentError> {
        let path = dir.join(name);
        write_text(&path, &body)?;
        files.push(path);
        Ok(())
    };

    // one histogram per placement; the first mode's run carries it
    let mut s = String::from("strategy,budget_pct,replicas,num_groups,evenness\n");
    let mut seen = Vec::new();
    for r in &outcome.runs {
        let key = (
            r.strategy,
            r.budget_pct.to_bits(),
            r.mode == ExecMode::Nmars,
        );
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let label = if r.mode == ExecMode::Nmars {
            "nmars"
        } else {
            r.strategy.as_str()
        };
        for (replicas, n) in &r.placement.histogram {
            let _ = writeln!(
                s,
                "{label},{},{replicas},{n},{}",
                r.budget_pct, r.placement.evenness
            );
        }
    }
    emit(FIGURE_FILES[0], s)?;

    let mut s = String::from("group_size,single_row_fraction\n");
    for p in &outcome.single_row {
        let _ = writeln!(s, "{},{}", p.group_size, p.single_row_fraction);
    }
    emit(FIGURE_FILES[1], s)?;

    let mut s = String::from("run,strategy,mode,total_activations\n");
    for r in outcome.runs.iter().filter(|r| r.budget_pct == 0.0) {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.name, r.strategy, r.mode, r.report.total_activations
        );
    }
    emit(FIGURE_FILES[2], s)?;

    // duplication sweep of the correlation strategy (or the first one) in its
    // first non-baseline mode
    let mut s = String::from("budget_pct,speedup,energy_eff\n");
    let sweep_strategy = if outcome
        .runs
        .iter()
        .any(|r| r.strategy == Strategy::Correlation && r.mode != ExecMode::Nmars)
    {
        Strategy::Correlation
    } else {
        outcome.runs[0].strategy
    };
    let sweep: Vec<&RunRecord> = outcome
        .runs
        .iter()
        .filter(|r| r.strategy == sweep_strategy && r.mode != ExecMode::Nmars)
        .collect();
    if let Some(first) = sweep.first() {
        let mode = first.mode;
        let sweep: Vec<&RunRecord> = sweep.into_iter().filter(|r| r.mode == mode).collect();
        let reference = sweep
            .iter()
            .find(|r| r.budget_pct == 0.0)
            .unwrap_or(&sweep[0]);
        for r in &sweep {
            let speedup =
                reference.report.makespan_cycles as f64 / r.report.makespan_cycles.max(1) as f64;
            let eff = reference.report.total_energy / r.report.total_energy;
            let _ = writeln!(s, "{},{speedup},{eff}", r.budget_pct);
        }
    }
    emit(FIGURE_FILES[3], s)?;

    let mut s = String::from("run,speedup,energy_eff\n");
    for c in &outcome.comparison {
        let _ = writeln!(s, "{},{},{}", c.name, c.speedup, c.energy_eff);
    }
    emit(FIGURE_FILES[4], s)?;

    Ok(files)
}
