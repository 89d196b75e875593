//! Access-aware replica allocation.
//!
//! Hot groups get extra copies on distinct crossbars. The copy count is
//! log-scaled:
//!
//! ```text
//! copies = floor( log(freq) / log(freq_total) * log(batch_size) )
//! ```
//!
//! which flattens the power-law spread of group frequencies so that warm
//! groups still receive a copy or two while the hottest ones do not absorb
//! the whole budget.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cooccur::CoOccurrenceGraph;
use crate::grouping::{validate_grouping, GroupingPlan, GroupingViolation};
use crate::hwmodel::HardwareConfig;

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("invalid grouping: {0}")]
    Grouping(#[from] GroupingViolation),
    #[error("group of {size} items does not fit a {rows}-row crossbar")]
    GroupTooLarge { size: usize, rows: usize },
    #[error("{needed} crossbars needed, hardware has room for {available}")]
    Capacity { needed: usize, available: usize },
    #[error("unknown group {0}")]
    UnknownGroup(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Two,
    E,
    Ten,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Two => x.log2(),
            LogBase::E => x.ln(),
            LogBase::Ten => x.log10(),
        }
    }
}

/// Whether replica counts are derived from group or member frequencies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopyGranularity {
    #[default]
    Group,
    /// Each member is scored on its own; the group takes the largest count.
    Embedding,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocOptions {
    pub log_base: LogBase,
    pub granularity: CopyGranularity,
}

// keeps exact integer results such as 2.9999999999 from flooring down
const FLOOR_SLACK: f64 = 1e-9;

/// Extra copies (beyond the original) for a group, base-2 logarithms.
pub fn compute_copies(
    group_freq: u64,
    freq_total: u64,
    batch_size: usize,
) -> Result<u32, AllocError> {
    compute_copies_in(LogBase::Two, group_freq, freq_total, batch_size)
}

pub fn compute_copies_in(
    base: LogBase,
    group_freq: u64,
    freq_total: u64,
    batch_size: usize,
) -> Result<u32, AllocError> {
    if batch_size < 2 {
        return Err(AllocError::Param(format!("batch_size {batch_size} < 2")));
    }
    if freq_total < 2 {
        return Err(AllocError::Param(format!("freq_total {freq_total} < 2")));
    }
    if group_freq > freq_total {
        return Err(AllocError::Param(format!(
            "group_freq {group_freq} exceeds freq_total {freq_total}"
        )));
    }
    if group_freq <= 1 {
        return Ok(0);
    }
    let ratio = (group_freq as f64).log2() / (freq_total as f64).log2();
    let copies = (ratio * base.log(batch_size as f64) + FLOOR_SLACK).floor();
    Ok(copies.max(0.0) as u32)
}

/// Linear-proportional baseline: splits `total_extra` copies in proportion to
/// frequency, largest remainders first (ties to the lower index).
pub fn proportional_copies(freqs: &[u64], total_extra: u64) -> Vec<u32> {
    let sum: u64 = freqs.iter().sum();
    if sum == 0 {
        return vec![0; freqs.len()];
    }
    let mut out = Vec::with_capacity(freqs.len());
    let mut rems = Vec::with_capacity(freqs.len());
    let mut assigned = 0u64;
    for (i, &f) in freqs.iter().enumerate() {
        let num = u128::from(total_extra) * u128::from(f);
        let q = (num / u128::from(sum)) as u64;
        out.push(q as u32);
        rems.push((num % u128::from(sum), i));
        assigned += q;
    }
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take((total_extra - assigned) as usize) {
        out[i] += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub grouping: GroupingPlan,
    /// Copies per group, original included (always >= 1).
    pub replicas: Vec<u32>,
    /// Physical crossbar of every replica, original first.
    pub group_to_crossbars: Vec<Vec<usize>>,
    pub crossbar_capacity_rows: usize,
    /// Training access count per group.
    pub group_freq: Vec<u64>,
    pub num_items: usize,
}

impl PlacementPlan {
    pub fn num_groups(&self) -> usize {
        self.replicas.len()
    }

    pub fn extra_replicas(&self) -> u64 {
        self.replicas.iter().map(|&r| u64::from(r) - 1).sum()
    }

    pub fn crossbars_used(&self) -> usize {
        self.group_to_crossbars.iter().map(Vec::len).sum()
    }

    /// The replica of `group` with the least pending load (ties: lowest
    /// crossbar index).
    pub fn route(&self, group: usize, load: impl Fn(usize) -> u64) -> Result<usize, AllocError> {
        self.group_to_crossbars
            .get(group)
            .and_then(|xbars| xbars.iter().copied().min_by_key(|&x| (load(x), x)))
            .ok_or(AllocError::UnknownGroup(group))
    }

    /// `{"placement": {group: [crossbars]}, "histogram": {...}, "evenness": e}`
    pub fn to_dump_json(&self) -> Value {
        let placement: serde_json::Map<String, Value> = self
            .group_to_crossbars
            .iter()
            .enumerate()
            .map(|(g, x)| (g.to_string(), json!(x)))
            .collect();
        let stats = placement_stats(self);
        json!({
            "placement": placement,
            "histogram": stats.histogram_json(),
            "evenness": stats.evenness,
        })
    }
}

pub fn route_query(
    plan: &PlacementPlan,
    load: impl Fn(usize) -> u64,
    group: usize,
) -> Result<usize, AllocError> {
    plan.route(group, load)
}

/// Places every group once, then spends up to `budget * num_groups` extra
/// crossbars on log-scaled replicas. When the wanted copies overshoot the
/// budget, the least frequently accessed duplicated groups lose copies first.
/// Replicas are dealt round-robin across tiles.
pub fn allocate(
    grouping: &GroupingPlan,
    graph: &CoOccurrenceGraph,
    hw: &HardwareConfig,
    batch_size: usize,
    duplication_budget: f64,
    opts: AllocOptions,
) -> Result<PlacementPlan, AllocError> {
    let num_items = graph.num_items();
    validate_grouping(grouping, num_items)?;
    if !(duplication_budget >= 0.0 && duplication_budget.is_finite()) {
        return Err(AllocError::Param(format!(
            "duplication budget {duplication_budget} must be >= 0"
        )));
    }
    if let Some(big) = grouping.groups.iter().find(|g| g.len() > hw.xbar_rows) {
        return Err(AllocError::GroupTooLarge {
            size: big.len(),
            rows: hw.xbar_rows,
        });
    }

    let slices = hw.slice_factor();
    let per_tile = hw.crossbars_per_tile() / slices;
    let capacity = per_tile * hw.num_tiles;
    let base = grouping.len();
    if base > capacity {
        return Err(AllocError::Capacity {
            needed: base * slices,
            available: capacity * slices,
        });
    }

    let group_freq: Vec<u64> = grouping
        .groups
        .iter()
        .map(|g| g.iter().map(|&id| graph.freq(id)).sum())
        .collect();
    let freq_total: u64 = group_freq.iter().sum();

    let budget_slots = ((duplication_budget * base as f64) + FLOOR_SLACK).floor() as u64;
    let budget_slots = budget_slots.min((capacity - base) as u64);

    if budget_slots > 0 && batch_size < 2 {
        return Err(AllocError::Param(format!("batch_size {batch_size} < 2")));
    }
    let mut extra = vec![0u32; base];
    if budget_slots > 0 && freq_total >= 2 {
        match opts.granularity {
            CopyGranularity::Group => {
                for (e, &f) in extra.iter_mut().zip(&group_freq) {
                    *e = compute_copies_in(opts.log_base, f, freq_total, batch_size)?;
                }
            }
            CopyGranularity::Embedding => {
                for (e, members) in extra.iter_mut().zip(&grouping.groups) {
                    for &id in members {
                        let c = compute_copies_in(
                            opts.log_base,
                            graph.freq(id),
                            freq_total,
                            batch_size,
                        )?;
                        *e = (*e).max(c);
                    }
                }
            }
        }

        let wanted: u64 = extra.iter().map(|&e| u64::from(e)).sum();
        if wanted > budget_slots {
            let mut excess = wanted - budget_slots;
            let mut order: Vec<usize> = (0..base).filter(|&g| extra[g] > 0).collect();
            order.sort_by_key(|&g| (group_freq[g], std::cmp::Reverse(g)));
            for g in order {
                if excess == 0 {
                    break;
                }
                let cut = u64::from(extra[g]).min(excess);
                extra[g] -= cut as u32;
                excess -= cut;
            }
        }
    }

    // originals first, then extra copies in group order
    let mut next = 0usize;
    let mut slot = || {
        let tile = next % hw.num_tiles;
        let local = next / hw.num_tiles;
        next += 1;
        tile * hw.crossbars_per_tile() + local * slices
    };
    let mut group_to_crossbars: Vec<Vec<usize>> = (0..base).map(|_| vec![slot()]).collect();
    for (g, &e) in extra.iter().enumerate() {
        for _ in 0..e {
            group_to_crossbars[g].push(slot());
        }
    }

    let plan = PlacementPlan {
        grouping: grouping.clone(),
        replicas: extra.iter().map(|&e| e + 1).collect(),
        group_to_crossbars,
        crossbar_capacity_rows: hw.xbar_rows,
        group_freq,
        num_items,
    };
    debug_assert!(plan.crossbars_used() <= capacity);
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementStats {
    /// Replica count -> number of groups with that many replicas.
    pub histogram: BTreeMap<u32, usize>,
    /// Shannon entropy of the histogram normalized by `ln(#classes)`; 0 for a
    /// single class.
    pub evenness: f64,
    /// Share of groups with at least one extra copy.
    pub duplicated_fraction: f64,
}

impl PlacementStats {
    fn histogram_json(&self) -> Value {
        let m: serde_json::Map<String, Value> = self
            .histogram
            .iter()
            .map(|(r, n)| (r.to_string(), json!(n)))
            .collect();
        Value::Object(m)
    }
}

/// Statistics over a replica-count vector (original included).
pub fn copy_stats(replicas: &[u32]) -> PlacementStats {
    let mut histogram = BTreeMap::new();
    for &r in replicas {
        *histogram.entry(r).or_insert(0usize) += 1;
    }
    let total = replicas.len() as f64;
    let evenness = if histogram.len() <= 1 {
        0.0
    } else {
        let h: f64 = histogram
            .values()
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum();
        h / (histogram.len() as f64).ln()
    };
    let duplicated = replicas.iter().filter(|&&r| r >= 2).count();
    PlacementStats {
        histogram,
        evenness,
        duplicated_fraction: if replicas.is_empty() {
            0.0
        } else {
            duplicated as f64 / total
        },
    }
}

pub fn placement_stats(plan: &PlacementPlan) -> PlacementStats {
    copy_stats(&plan.replicas)
}
