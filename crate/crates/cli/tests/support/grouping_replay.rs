//! Replays a traced greedy grouping step by step and recomputes every
//! admission from scratch.

use rand::Rng;
use xbarsim_core::grouping::{Admission, GroupingPlan};
use xbarsim_core::CoOccurrenceGraph;

pub fn random_graph(rng: &mut impl Rng) -> CoOccurrenceGraph {
    let n = rng.random_range(1..=60usize);
    let density = rng.random_range(0.0..0.3);
    let freq: Vec<u64> = (0..n).map(|_| rng.random_range(0..6u64)).collect();
    let mut edges = Vec::new();
    for a in 0..n as u32 {
        for b in a + 1..n as u32 {
            if rng.random_bool(density) {
                edges.push((a, b, rng.random_range(1..=4u64)));
            }
        }
    }
    CoOccurrenceGraph::from_edges(freq, edges).unwrap()
}

/// Checks that every admission picked the ungrouped item with the largest
/// summed edge weight to the current members (ties: higher frequency, then
/// lower ID), that groups close only when full or out of candidates, and
/// that isolated seeds are packed in hot order at the end.
pub fn check_argmax(
    g: &CoOccurrenceGraph,
    plan: &GroupingPlan,
    log: &[Admission],
    group_size: usize,
) -> Result<(), String> {
    let n = g.num_items();
    let w = |a: u32, b: u32| g.weight(a, b);
    let mut hot: Vec<u32> = (0..n as u32).collect();
    hot.sort_by(|&a, &b| g.freq(b).cmp(&g.freq(a)).then(a.cmp(&b)));

    let mut grouped = vec![false; n];
    let mut next_group = 0usize;
    let mut log_pos = 0usize;
    let mut isolated = Vec::new();

    for &seed in &hot {
        if grouped[seed as usize] {
            continue;
        }
        grouped[seed as usize] = true;
        let has_candidate = (0..n as u32).any(|x| !grouped[x as usize] && w(seed, x) > 0);
        if !has_candidate && group_size > 1 {
            isolated.push(seed);
            continue;
        }
        let Some(members) = plan.groups.get(next_group).filter(|grp| grp[0] == seed) else {
            return Err(format!("group {next_group} should start at seed {seed}"));
        };
        let mut current = vec![seed];
        loop {
            let best = (0..n as u32)
                .filter(|&x| !grouped[x as usize])
                .map(|x| (current.iter().map(|&m| w(m, x)).sum::<u64>(), x))
                .filter(|&(s, _)| s > 0)
                .max_by(|&(sa, a), &(sb, b)| {
                    sa.cmp(&sb).then(g.freq(a).cmp(&g.freq(b))).then(b.cmp(&a))
                });
            if current.len() == group_size || best.is_none() {
                if current != *members {
                    return Err(format!(
                        "group {next_group}: replay {current:?} != {members:?}"
                    ));
                }
                break;
            }
            let (score, x) = best.unwrap();
            let Some(adm) = log.get(log_pos) else {
                return Err(format!(
                    "group {next_group}: log ended before admitting {x}"
                ));
            };
            if *adm
                != (Admission {
                    group: next_group,
                    item: x,
                    weight: score,
                })
            {
                return Err(format!(
                    "group {next_group}: expected admit {x} ({score}), got {adm:?}"
                ));
            }
            log_pos += 1;
            grouped[x as usize] = true;
            current.push(x);
        }
        next_group += 1;
    }
    if log_pos != log.len() {
        return Err(format!("{} unexplained admissions", log.len() - log_pos));
    }
    let tail: Vec<Vec<u32>> = isolated.chunks(group_size).map(<[_]>::to_vec).collect();
    if plan.groups[next_group..] != tail[..] {
        return Err("set-aside packing differs".into());
    }
    Ok(())
}
