//! Argument parsing, config-file merging and subcommand execution for the
//! `xbarsim` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};
use thiserror::Error;
use xbarsim_core::allocation::{allocate, placement_stats};
use xbarsim_core::experiment::{load_trace, make_grouping, run_experiment, Stage};
use xbarsim_core::grouping::{validate_grouping, Strategy, WeightTarget};
use xbarsim_core::sim::{ExecMode, SimConfig, Simulator};
use xbarsim_core::{
    build_cooccurrence, trace_stats, write_trace, ExperimentConfig, ExperimentError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] ExperimentError),
    #[error("output: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "xbarsim",
    version,
    about = "Crossbar embedding-reduction simulator"
)]
pub struct Cli {
    /// JSON object or `key = value` file holding any experiment parameter.
    /// Flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cluster-Zipf trace.
    Gen(GenArgs),
    /// Trace statistics and co-occurrence graph dump.
    Analyze(AnalyzeArgs),
    /// Grouping and replica placement dumps.
    Plan(PlanArgs),
    /// Simulate a single strategy/budget/mode run.
    Sim(SimArgs),
    /// Run the full strategy x budget x mode matrix.
    Exp(ExpArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub zipf_s: Option<f64>,
    #[arg(long)]
    pub mean_len: Option<f64>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub intra_prob: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output trace file.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct TraceArgs {
    /// Trace file; the configured generator is used when omitted.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-node edge cap; 0 keeps every edge.
    #[arg(long)]
    pub max_degree: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub trace: TraceArgs,
    /// Output directory for `stats.json` and `graph.txt`.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct PlanOpts {
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Extra crossbars as a fraction of the base count (0.2 = 20%).
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hw_config: Option<PathBuf>,
    /// Score candidates against the seed only instead of the whole group.
    #[arg(long)]
    pub seed_weight: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub trace: TraceArgs,
    #[command(flatten)]
    pub plan: PlanOpts,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[command(flatten)]
    pub trace: TraceArgs,
    #[command(flatten)]
    pub plan: PlanOpts,
    #[arg(long)]
    pub mode: Option<ExecMode>,
    /// Report file; printed to stdout when omitted.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExpArgs {
    #[command(flatten)]
    pub trace: TraceArgs,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hw_config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<Strategy>>,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<ExecMode>>,
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// Reads an experiment config from a JSON object or `key = value` lines.
/// Keyed values are parsed as JSON when possible and as strings otherwise;
/// dotted keys address nested objects (`generator.zipf_s = 1.1`).
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, String> {
    let value = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| e.to_string())?
    } else {
        let mut root = Map::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            let val = val.trim();
            let parsed =
                serde_json::from_str(val).unwrap_or_else(|_| Value::String(val.to_string()));
            insert_dotted(&mut root, key.trim(), parsed)
                .map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Value::Object(root)
    };
    serde_json::from_value(value).map_err(|e| e.to_string())
}

fn insert_dotted(root: &mut Map<String, Value>, key: &str, value: Value) -> Result<(), String> {
    match key.split_once('.') {
        None => {
            root.insert(key.to_string(), value);
            Ok(())
        }
        Some((head, rest)) => {
            let child = root
                .entry(head.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            match child {
                Value::Object(m) => insert_dotted(m, rest, value),
                _ => Err(format!("`{head}` is not an object")),
            }
        }
    }
}

fn apply_trace_args(cfg: &mut ExperimentConfig, a: &TraceArgs) {
    if let Some(p) = &a.trace {
        cfg.trace_path = Some(p.clone());
    }
    if let Some(f) = a.train_fraction {
        cfg.train_fraction = f;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.max_degree {
        cfg.max_degree = (d > 0).then_some(d);
    }
}

fn apply_plan_opts(cfg: &mut ExperimentConfig, p: &PlanOpts) {
    if let Some(s) = p.strategy {
        cfg.strategies = vec![s];
    }
    if let Some(g) = p.group_size {
        cfg.group_size = g;
    }
    if let Some(b) = p.budget {
        cfg.budgets = vec![b];
    }
    if let Some(b) = p.batch_size {
        cfg.batch_size = b;
    }
    if let Some(h) = &p.hw_config {
        cfg.hw_config = Some(h.clone());
    }
    if p.seed_weight {
        cfg.weight_target = WeightTarget::Seed;
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Executes a parsed command line. Returns text for stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Gen(a) => {
            let g = &mut cfg.generator;
            if let Some(n) = a.items {
                g.num_items = n;
                if a.clusters.is_none() {
                    g.num_clusters = (n / 64).max(1);
                }
            }
            if let Some(v) = a.queries {
                g.num_queries = v;
            }
            if let Some(v) = a.zipf_s {
                g.zipf_s = v;
            }
            if let Some(v) = a.mean_len {
                g.mean_len = v;
            }
            if let Some(v) = a.clusters {
                g.num_clusters = v;
            }
            if let Some(v) = a.intra_prob {
                g.intra_prob = v;
            }
            if let Some(v) = a.seed {
                cfg.seed = v;
            }
            cfg.trace_path = None;
            let trace = load_trace(&cfg)?;
            write_trace(&trace, &a.out).map_err(|e| ExperimentError::new(Stage::Output, e))?;
            Ok(format!(
                "wrote {} queries over {} items to {}\n",
                trace.len(),
                trace.num_items(),
                a.out.display()
            ))
        }
        Command::Analyze(a) => {
            apply_trace_args(&mut cfg, &a.trace);
            let trace = load_trace(&cfg)?;
            let (train, _) = trace
                .split(cfg.train_fraction)
                .map_err(|e| ExperimentError::new(Stage::Trace, e))?;
            let stats = trace_stats(&train);
            let graph = build_cooccurrence(&train, cfg.max_degree);
            write(&a.out.join("stats.json"), &pretty(&stats))?;
            write(&a.out.join("graph.txt"), &graph.to_dump_text())?;
            Ok(format!(
                "items {} | train queries {} | mean length {:.2} | tail exponent {} | edges {}\n",
                train.num_items(),
                train.len(),
                stats.query_len_mean,
                stats
                    .freq_tail_exponent
                    .map_or("n/a".into(), |e| format!("{e:.3}")),
                graph.num_edges()
            ))
        }
        Command::Plan(a) => {
            apply_trace_args(&mut cfg, &a.trace);
            apply_plan_opts(&mut cfg, &a.plan);
            let (plan, test) = build_plan(&cfg)?;
            drop(test);
            let stats = placement_stats(&plan);
            write(&a.out.join("groups.txt"), &plan.grouping.to_dump_text())?;
            write(&a.out.join("placement.json"), &pretty(&plan.to_dump_json()))?;
            write(&a.out.join("placement_stats.json"), &pretty(&stats))?;
            Ok(format!(
                "{} groups | {} extra replicas | {} crossbars | evenness {:.4}\n",
                plan.num_groups(),
                plan.extra_replicas(),
                plan.crossbars_used(),
                stats.evenness
            ))
        }
        Command::Sim(a) => {
            apply_trace_args(&mut cfg, &a.trace);
            apply_plan_opts(&mut cfg, &a.plan);
            if let Some(m) = a.mode {
                cfg.exec_modes = vec![m];
            }
            let (plan, test) = build_plan(&cfg)?;
            let costs = cfg.load_costs()?;
            let sc = SimConfig {
                batch_size: cfg.batch_size,
                exec_mode: cfg.exec_modes[0],
                hw: costs.hw,
                em: costs.em,
            };
            let report = Simulator::new(&plan, &sc)
                .and_then(|s| s.run_trace(&test))
                .map_err(|e| ExperimentError::new(Stage::Simulation, e))?;
            let text = pretty(&report);
            match a.out {
                Some(p) => {
                    write(&p, &text)?;
                    Ok(format!(
                        "makespan {} cycles | energy {}\n",
                        report.makespan_cycles, report.total_energy
                    ))
                }
                None => Ok(text),
            }
        }
        Command::Exp(a) => {
            apply_trace_args(&mut cfg, &a.trace);
            if let Some(v) = a.group_size {
                cfg.group_size = v;
            }
            if let Some(v) = a.batch_size {
                cfg.batch_size = v;
            }
            if let Some(h) = a.hw_config {
                cfg.hw_config = Some(h);
            }
            if let Some(v) = a.strategies {
                cfg.strategies = v;
            }
            if let Some(v) = a.budgets {
                cfg.budgets = v;
            }
            if let Some(v) = a.modes {
                cfg.exec_modes = v;
            }
            if let Some(b) = a.baseline {
                cfg.baseline = Some(b);
            }
            if let Some(o) = a.out {
                cfg.output_dir = o;
            }
            let outcome = run_experiment(&cfg)?;
            let mut s = format!(
                "{} runs, baseline {}\n",
                outcome.runs.len(),
                outcome.baseline
            );
            for row in &outcome.comparison {
                s.push_str(&format!(
                    "{:<32} speedup {:>8.3}  energy_eff {:>8.3}\n",
                    row.name, row.speedup, row.energy_eff
                ));
            }
            Ok(s)
        }
    }
}

/// Builds the placement for the first configured strategy and budget,
/// returning it with the held-out queries.
fn build_plan(
    cfg: &ExperimentConfig,
) -> Result<(xbarsim_core::PlacementPlan, xbarsim_core::Trace), CliError> {
    let costs = cfg.load_costs()?;
    cfg.validate(&costs)?;
    let trace = load_trace(cfg)?;
    let (train, test) = trace
        .split(cfg.train_fraction)
        .map_err(|e| ExperimentError::new(Stage::Trace, e))?;
    let graph = build_cooccurrence(&train, cfg.max_degree);
    let grouping = make_grouping(cfg.strategies[0], &graph, cfg.group_size, cfg.weight_target);
    validate_grouping(&grouping, graph.num_items())
        .map_err(|e| ExperimentError::new(Stage::Grouping, e))?;
    let plan = allocate(
        &grouping,
        &graph,
        &costs.hw,
        cfg.batch_size,
        cfg.budgets[0],
        cfg.alloc,
    )
    .map_err(|e| ExperimentError::new(Stage::Allocation, e))?;
    Ok((plan, test))
}
