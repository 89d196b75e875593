//! Batched cycle-level execution of a query trace over a placement.
//!
//! Every crossbar is a FIFO server. A query touches one replica per group it
//! needs; its lookup finishes when the last of those activations finishes,
//! after which the partial sums cross the (uncontended) global bus. Batches
//! are barriers: queues start empty for each batch.

use std::fmt::{self, Write as _};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{AllocError, PlacementPlan};
use crate::hwmodel::{
    activation_cost_with, aggregate_cost, ConversionPolicy, EnergyModel, HardwareConfig, HwError,
    Mode,
};
use crate::trace::{ItemId, Query, Trace};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("item {0} is not covered by the placement")]
    Uncovered(ItemId),
    #[error("routing: {0}")]
    Routing(#[from] AllocError),
    #[error("hardware: {0}")]
    Hardware(#[from] HwError),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("empty trace")]
    EmptyTrace,
    #[error("baseline run `{0}` not found")]
    UnknownBaseline(String),
    #[error("run `{0}` has zero makespan or energy")]
    Degenerate(String),
}

/// How a batch is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// One activation per touched group, popcount picks read or MAC.
    Switched,
    /// As `Switched` but every conversion runs at full resolution.
    NoSwitch,
    /// Baseline: one single-row read per item on its home crossbar, then
    /// every item vector is aggregated over the bus.
    Nmars,
}

impl ExecMode {
    pub const ALL: [ExecMode; 3] = [ExecMode::Switched, ExecMode::NoSwitch, ExecMode::Nmars];

    pub fn as_str(self) -> &'static str {
        match self {
            ExecMode::Switched => "switched",
            ExecMode::NoSwitch => "no_switch",
            ExecMode::Nmars => "nmars",
        }
    }

    fn policy(self) -> ConversionPolicy {
        match self {
            ExecMode::Switched => ConversionPolicy::Switched,
            ExecMode::NoSwitch => ConversionPolicy::AlwaysMac,
            ExecMode::Nmars => ConversionPolicy::AlwaysRead,
        }
    }
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "switched" => Ok(ExecMode::Switched),
            "no_switch" => Ok(ExecMode::NoSwitch),
            "nmars" => Ok(ExecMode::Nmars),
            other => Err(format!("unknown exec mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub batch_size: usize,
    pub exec_mode: ExecMode,
    pub hw: HardwareConfig,
    pub em: EnergyModel,
}

impl SimConfig {
    pub fn new(batch_size: usize, exec_mode: ExecMode) -> Self {
        SimConfig {
            batch_size,
            exec_mode,
            hw: HardwareConfig::default(),
            em: EnergyModel::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub xbar: f64,
    pub adc: f64,
    pub popcount: f64,
    pub bus: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.xbar + self.adc + self.popcount + self.bus
    }

    fn add(&mut self, other: &EnergyBreakdown) {
        self.xbar += other.xbar;
        self.adc += other.adc;
        self.popcount += other.popcount;
        self.bus += other.bus;
    }
}

/// One crossbar activation as scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActivationRecord {
    pub query: usize,
    pub group: usize,
    pub crossbar: usize,
    pub rows: usize,
    pub mode: Mode,
    pub start: u64,
    pub finish: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchResult {
    /// Per query: cycle its last activation finishes.
    pub lookup_done: Vec<u64>,
    /// Per query: `lookup_done` plus bus aggregation.
    pub completion: Vec<u64>,
    pub activations: Vec<ActivationRecord>,
    pub energy: EnergyBreakdown,
    pub makespan: u64,
}

impl BatchResult {
    pub fn single_row_activations(&self) -> u64 {
        self.activations.iter().filter(|a| a.rows == 1).count() as u64
    }

    pub fn read_mode_activations(&self) -> u64 {
        self.activations
            .iter()
            .filter(|a| a.mode == Mode::Read)
            .count() as u64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub total_activations: u64,
    /// Activations that drove exactly one row.
    pub single_row_activations: u64,
    /// Activations that drove two or more rows.
    pub mac_activations: u64,
    /// Activations converted at read resolution.
    pub read_mode_activations: u64,
    pub makespan_cycles: u64,
    pub total_energy: f64,
    pub energy_breakdown: EnergyBreakdown,
    pub per_batch_makespans: Vec<u64>,
    pub queries_processed: u64,
}

impl SimReport {
    pub fn single_row_fraction(&self) -> f64 {
        if self.total_activations == 0 {
            0.0
        } else {
            self.single_row_activations as f64 / self.total_activations as f64
        }
    }

    fn absorb(&mut self, batch: &BatchResult, queries: usize) {
        let single = batch.single_row_activations();
        let total = batch.activations.len() as u64;
        self.total_activations += total;
        self.single_row_activations += single;
        self.mac_activations += total - single;
        self.read_mode_activations += batch.read_mode_activations();
        self.makespan_cycles += batch.makespan;
        self.per_batch_makespans.push(batch.makespan);
        self.energy_breakdown.add(&batch.energy);
        self.total_energy = self.energy_breakdown.total();
        self.queries_processed += queries as u64;
    }
}

/// Executes batches against one placement. Holds the item-to-group map so it
/// is built once per run.
pub struct Simulator<'a> {
    plan: &'a PlacementPlan,
    cfg: &'a SimConfig,
    item_group: Vec<u32>,
}

impl<'a> Simulator<'a> {
    pub fn new(plan: &'a PlacementPlan, cfg: &'a SimConfig) -> Result<Self, SimError> {
        if cfg.batch_size < 1 {
            return Err(SimError::Config("batch_size must be >= 1".into()));
        }
        cfg.hw.validate()?;
        cfg.em.validate()?;
        Ok(Simulator {
            plan,
            cfg,
            item_group: plan.grouping.item_to_group(plan.num_items),
        })
    }

    fn group_of(&self, id: ItemId) -> Result<usize, SimError> {
        match self.item_group.get(id as usize) {
            Some(&g) if g != u32::MAX => Ok(g as usize),
            _ => Err(SimError::Uncovered(id)),
        }
    }

    pub fn run_batch(&self, queries: &[Query]) -> Result<BatchResult, SimError> {
        let hw = &self.cfg.hw;
        let em = &self.cfg.em;
        let mode = self.cfg.exec_mode;
        let policy = mode.policy();

        // crossbar -> (free at, activations queued this batch)
        let mut queues: FxHashMap<usize, (u64, u64)> = FxHashMap::default();
        let mut out = BatchResult {
            lookup_done: Vec::with_capacity(queries.len()),
            completion: Vec::with_capacity(queries.len()),
            ..BatchResult::default()
        };
        let mut touched: Vec<(usize, usize)> = Vec::new();

        for (qi, q) in queries.iter().enumerate() {
            touched.clear();
            match mode {
                ExecMode::Switched | ExecMode::NoSwitch => {
                    let mut groups: Vec<usize> = q
                        .items()
                        .iter()
                        .map(|&id| self.group_of(id))
                        .collect::<Result<_, _>>()?;
                    groups.sort_unstable();
                    for g in groups {
                        match touched.last_mut() {
                            Some((last, rows)) if *last == g => *rows += 1,
                            _ => touched.push((g, 1)),
                        }
                    }
                }
                ExecMode::Nmars => {
                    for &id in q.items() {
                        touched.push((self.group_of(id)?, 1));
                    }
                }
            }

            let mut done = 0u64;
            for &(g, rows) in &touched {
                let crossbar = match mode {
                    ExecMode::Nmars => *self
                        .plan
                        .group_to_crossbars
                        .get(g)
                        .and_then(|x| x.first())
                        .ok_or(AllocError::UnknownGroup(g))?,
                    _ => self.plan.route(g, |x| queues.get(&x).map_or(0, |q| q.1))?,
                };
                let cost = activation_cost_with(rows, policy, hw, em)?;
                let slot = queues.entry(crossbar).or_insert((0, 0));
                let start = slot.0;
                let finish = start + cost.cycles;
                *slot = (finish, slot.1 + 1);
                done = done.max(finish);
                out.energy.xbar += cost.xbar_energy;
                out.energy.adc += cost.adc_energy;
                out.energy.popcount += cost.popcount_energy;
                out.activations.push(ActivationRecord {
                    query: qi,
                    group: g,
                    crossbar,
                    rows,
                    mode: cost.mode,
                    start,
                    finish,
                });
            }

            // one partial sum per activated crossbar
            let bus = aggregate_cost(touched.len(), hw, em);
            out.energy.bus += bus.energy;
            out.lookup_done.push(done);
            out.completion.push(done + bus.cycles);
        }
        out.makespan = out.completion.iter().copied().max().unwrap_or(0);
        Ok(out)
    }

    pub fn run_trace(&self, test: &Trace) -> Result<SimReport, SimError> {
        if test.is_empty() {
            return Err(SimError::EmptyTrace);
        }
        let mut report = SimReport::default();
        for batch in test.queries().chunks(self.cfg.batch_size) {
            let result = self.run_batch(batch)?;
            report.absorb(&result, batch.len());
        }
        Ok(report)
    }
}

pub fn simulate_batch(
    queries: &[Query],
    plan: &PlacementPlan,
    cfg: &SimConfig,
) -> Result<BatchResult, SimError> {
    Simulator::new(plan, cfg)?.run_batch(queries)
}

pub fn simulate_trace(
    test: &Trace,
    plan: &PlacementPlan,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    Simulator::new(plan, cfg)?.run_trace(test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub makespan_cycles: u64,
    pub total_energy: f64,
    pub total_activations: u64,
    /// Baseline makespan over this run's makespan.
    pub speedup: f64,
    /// Baseline energy over this run's energy.
    pub energy_eff: f64,
}

/// Speedup and energy-efficiency of every run relative to `baseline`.
pub fn compare_runs(
    reports: &[(String, SimReport)],
    baseline: &str,
) -> Result<Vec<ComparisonRow>, SimError> {
    let (_, base) = reports
        .iter()
        .find(|(n, _)| n == baseline)
        .ok_or_else(|| SimError::UnknownBaseline(baseline.to_string()))?;
    reports
        .iter()
        .map(|(name, r)| {
            if r.makespan_cycles == 0 || r.total_energy <= 0.0 {
                return Err(SimError::Degenerate(name.clone()));
            }
            Ok(ComparisonRow {
                name: name.clone(),
                makespan_cycles: r.makespan_cycles,
                total_energy: r.total_energy,
                total_activations: r.total_activations,
                speedup: base.makespan_cycles as f64 / r.makespan_cycles as f64,
                energy_eff: base.total_energy / r.total_energy,
            })
        })
        .collect()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s =
        String::from("run,makespan_cycles,total_energy,total_activations,speedup,energy_eff\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.name, r.makespan_cycles, r.total_energy, r.total_activations, r.speedup, r.energy_eff
        );
    }
    s
}
