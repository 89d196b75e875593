//! Cycle-stepped reference scheduler.
//!
//! Written from the behavioral contract only: activations are issued in
//! query order (groups ascending, or item order for the per-item baseline),
//! routed to the least-loaded replica, served FIFO per crossbar, and the
//! clock is advanced one cycle at a time until every queue drains.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use xbarsim_core::grouping::{GroupingPlan, Strategy};
use xbarsim_core::sim::{ExecMode, SimConfig, SimReport};
use xbarsim_core::{EnergyModel, HardwareConfig, PlacementPlan, Query, Trace};

pub struct Instance {
    pub plan: PlacementPlan,
    pub trace: Trace,
    pub cfg: SimConfig,
}

/// Random instance with at most 4 crossbars, 8 queries and 3 replicas per
/// group. Energies are multiples of 1/8 so every sum is exact in binary.
pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let num_groups = rng.random_range(1..=4usize);
    let group_size = rng.random_range(1..=4usize);
    let mut items: Vec<u32> = Vec::new();
    let mut groups = Vec::new();
    for _ in 0..num_groups {
        let len = rng.random_range(1..=group_size);
        let start = items.len() as u32;
        let g: Vec<u32> = (start..start + len as u32).collect();
        items.extend(&g);
        groups.push(g);
    }
    // scramble which IDs land in which group
    let mut perm = items.clone();
    perm.shuffle(rng);
    for g in &mut groups {
        for id in g.iter_mut() {
            *id = perm[*id as usize];
        }
    }
    let num_items = items.len();

    // split at most 4 crossbar slots across groups, each getting 1..=3
    let mut slots: Vec<usize> = (0..8).collect();
    slots.shuffle(rng);
    let mut budget = 4 - num_groups;
    let mut group_to_crossbars = Vec::new();
    let mut next = 0;
    for _ in 0..num_groups {
        let extra = rng.random_range(0..=budget.min(2));
        budget -= extra;
        group_to_crossbars.push(slots[next..next + 1 + extra].to_vec());
        next += 1 + extra;
    }
    let replicas = group_to_crossbars.iter().map(|x| x.len() as u32).collect();

    let num_queries = rng.random_range(1..=8usize);
    let queries = (0..num_queries)
        .map(|_| {
            let len = rng.random_range(1..=num_items);
            let mut ids: Vec<u32> = (0..num_items as u32).collect();
            ids.shuffle(rng);
            Query::new(ids[..len].iter().copied()).unwrap()
        })
        .collect();
    let trace = Trace::new(num_items, queries).unwrap();

    fn eighth(rng: &mut impl Rng, hi: u32) -> f64 {
        f64::from(rng.random_range(0..=hi)) / 8.0
    }
    let hw = HardwareConfig {
        xbar_rows: 8,
        xbar_cols: rng.random_range(1..=4usize),
        bits_per_cell: rng.random_range(1..=2usize),
        adc_bits: rng.random_range(3..=6u32),
        read_adc_bits: rng.random_range(1..=3u32),
        embedding_dim: rng.random_range(1..=8usize),
        bits_per_feature: rng.random_range(1..=4usize),
        bus_width_bits: rng.random_range(1..=32usize),
        ..HardwareConfig::default()
    };
    let em = EnergyModel {
        e_comparator: eighth(rng, 16),
        e_xbar_row: eighth(rng, 16),
        e_popcount: eighth(rng, 16),
        e_bus_bit: eighth(rng, 4),
        t_activation: rng.random_range(1..=3u64),
        t_bus_word: rng.random_range(0..=2u64),
        t_popcount: rng.random_range(0..=2u64),
    };
    let exec_mode = ExecMode::ALL[rng.random_range(0..3usize)];
    let cfg = SimConfig {
        batch_size: rng.random_range(1..=8usize),
        exec_mode,
        hw,
        em,
    };
    let plan = PlacementPlan {
        grouping: GroupingPlan {
            groups,
            group_size,
            strategy: Strategy::Naive,
        },
        replicas,
        group_to_crossbars,
        crossbar_capacity_rows: 8,
        group_freq: vec![1; num_groups],
        num_items,
    };
    Instance { plan, trace, cfg }
}

struct Job {
    query: usize,
    duration: u64,
}

/// Reference report for `inst`.
pub fn oracle_report(inst: &Instance) -> SimReport {
    let hw = &inst.cfg.hw;
    let em = &inst.cfg.em;
    let mode = inst.cfg.exec_mode;
    let group_of = |id: u32| {
        inst.plan
            .grouping
            .groups
            .iter()
            .position(|g| g.contains(&id))
            .expect("covered item")
    };
    let slices = {
        let bits = hw.embedding_dim * hw.bits_per_feature;
        let per_xbar = hw.xbar_cols * hw.bits_per_cell;
        bits.div_ceil(per_xbar).max(1) as u64
    };
    let comparators = |bits: u32| f64::from(2u32.pow(bits) - 1);
    let popcount_paid = mode == ExecMode::Switched;
    let duration = slices * em.t_activation + if popcount_paid { em.t_popcount } else { 0 };
    let psum_bits = (hw.embedding_dim * hw.adc_bits as usize) as u64;
    let words = psum_bits.div_ceil(hw.bus_width_bits as u64);

    let mut rep = SimReport::default();
    for batch in inst.trace.queries().chunks(inst.cfg.batch_size) {
        let mut fifo: BTreeMap<usize, VecDeque<Job>> = BTreeMap::new();
        let mut issued: BTreeMap<usize, u64> = BTreeMap::new();
        let mut touched_per_query = Vec::new();
        for (qi, q) in batch.iter().enumerate() {
            // (group, rows) in issue order
            let accesses: Vec<(usize, usize)> = match mode {
                ExecMode::Nmars => q.items().iter().map(|&id| (group_of(id), 1)).collect(),
                _ => {
                    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
                    for &id in q.items() {
                        *rows.entry(group_of(id)).or_default() += 1;
                    }
                    rows.into_iter().collect()
                }
            };
            touched_per_query.push(accesses.len() as u64);
            for (g, rows) in accesses {
                let replicas = &inst.plan.group_to_crossbars[g];
                let xbar = if mode == ExecMode::Nmars {
                    replicas[0]
                } else {
                    let mut best = replicas[0];
                    for &x in replicas {
                        let (lx, lb) = (
                            issued.get(&x).copied().unwrap_or(0),
                            issued.get(&best).copied().unwrap_or(0),
                        );
                        if lx < lb || (lx == lb && x < best) {
                            best = x;
                        }
                    }
                    best
                };
                *issued.entry(xbar).or_default() += 1;
                fifo.entry(xbar).or_default().push_back(Job {
                    query: qi,
                    duration,
                });

                let read = match mode {
                    ExecMode::Switched => rows == 1,
                    ExecMode::NoSwitch => false,
                    ExecMode::Nmars => true,
                };
                let conv = if read {
                    if hw.read_adc_free {
                        0.0
                    } else {
                        comparators(hw.read_adc_bits)
                    }
                } else {
                    comparators(hw.adc_bits)
                };
                rep.total_activations += 1;
                if rows == 1 {
                    rep.single_row_activations += 1;
                } else {
                    rep.mac_activations += 1;
                }
                if read {
                    rep.read_mode_activations += 1;
                }
                rep.energy_breakdown.xbar += rows as f64 * em.e_xbar_row;
                rep.energy_breakdown.adc +=
                    (slices as usize * hw.xbar_cols) as f64 * conv * em.e_comparator;
                if popcount_paid {
                    rep.energy_breakdown.popcount += em.e_popcount;
                }
            }
        }

        // advance the clock cycle by cycle
        let mut lookup_done = vec![0u64; batch.len()];
        let mut remaining: BTreeMap<usize, u64> = BTreeMap::new();
        let mut t = 0u64;
        while fifo.values().any(|q| !q.is_empty()) {
            for (&x, q) in fifo.iter_mut() {
                let Some(head) = q.front() else { continue };
                let left = remaining.entry(x).or_insert(head.duration);
                *left -= 1;
                if *left == 0 {
                    let job = q.pop_front().unwrap();
                    lookup_done[job.query] = lookup_done[job.query].max(t + 1);
                    remaining.remove(&x);
                }
            }
            t += 1;
        }

        let mut makespan = 0;
        for (qi, &n) in touched_per_query.iter().enumerate() {
            rep.energy_breakdown.bus += (n * psum_bits) as f64 * em.e_bus_bit;
            makespan = makespan.max(lookup_done[qi] + n * words * em.t_bus_word);
        }
        rep.makespan_cycles += makespan;
        rep.per_batch_makespans.push(makespan);
        rep.queries_processed += batch.len() as u64;
    }
    let e = &rep.energy_breakdown;
    rep.total_energy = e.xbar + e.adc + e.popcount + e.bus;
    rep
}
