//! Partitioning embeddings into crossbar-sized groups.
//!
//! Three strategies share one plan type:
//! - correlation-aware greedy growth over the co-occurrence graph,
//! - frequency order (hottest items packed together),
//! - naive consecutive ID ranges.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cooccur::CoOccurrenceGraph;
use crate::trace::ItemId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Naive,
    Frequency,
    Correlation,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Naive, Strategy::Frequency, Strategy::Correlation];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Frequency => "frequency",
            Strategy::Correlation => "correlation",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Strategy::Naive),
            "frequency" => Ok(Strategy::Frequency),
            "correlation" => Ok(Strategy::Correlation),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingPlan {
    pub groups: Vec<Vec<ItemId>>,
    pub group_size: usize,
    pub strategy: Strategy,
}

impl GroupingPlan {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Group index of every item in `0..num_items`; `u32::MAX` marks an
    /// uncovered item.
    pub fn item_to_group(&self, num_items: usize) -> Vec<u32> {
        let mut map = vec![u32::MAX; num_items];
        for (g, members) in self.groups.iter().enumerate() {
            for &id in members {
                if let Some(slot) = map.get_mut(id as usize) {
                    *slot = g as u32;
                }
            }
        }
        map
    }

    /// One group per line, IDs space-separated.
    pub fn to_dump_text(&self) -> String {
        let mut s = String::new();
        for g in &self.groups {
            for (i, id) in g.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{id}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GroupingViolation {
    #[error("duplicate: item {id} appears in more than one group")]
    Duplicate { id: ItemId },
    #[error("size: group {group} has {len} items (limit {limit})")]
    Size {
        group: usize,
        len: usize,
        limit: usize,
    },
    #[error("missing: item {id} is not grouped")]
    Missing { id: ItemId },
    #[error("range: item {id} is outside the universe of {num_items}")]
    OutOfRange { id: ItemId, num_items: usize },
}

/// Checks that `plan` is an exact partition of `0..num_items` into groups of
/// `1..=group_size` items, reporting the first violation.
pub fn validate_grouping(plan: &GroupingPlan, num_items: usize) -> Result<(), GroupingViolation> {
    let mut seen = vec![false; num_items];
    for (g, members) in plan.groups.iter().enumerate() {
        if members.is_empty() || members.len() > plan.group_size {
            return Err(GroupingViolation::Size {
                group: g,
                len: members.len(),
                limit: plan.group_size,
            });
        }
        for &id in members {
            let slot = seen
                .get_mut(id as usize)
                .ok_or(GroupingViolation::OutOfRange { id, num_items })?;
            if *slot {
                return Err(GroupingViolation::Duplicate { id });
            }
            *slot = true;
        }
    }
    match seen.iter().position(|s| !s) {
        Some(id) => Err(GroupingViolation::Missing { id: id as ItemId }),
        None => Ok(()),
    }
}

pub fn group_naive(num_items: usize, group_size: usize) -> GroupingPlan {
    assert!(group_size >= 1, "group_size must be >= 1");
    let ids: Vec<ItemId> = (0..num_items as ItemId).collect();
    GroupingPlan {
        groups: ids.chunks(group_size).map(<[_]>::to_vec).collect(),
        group_size,
        strategy: Strategy::Naive,
    }
}

/// IDs ordered by frequency descending, ties by ID ascending.
fn hot_order(g: &CoOccurrenceGraph) -> Vec<ItemId> {
    let mut ids: Vec<ItemId> = (0..g.num_items() as ItemId).collect();
    ids.sort_by_key(|&id| (Reverse(g.freq(id)), id));
    ids
}

pub fn group_frequency(g: &CoOccurrenceGraph, group_size: usize) -> GroupingPlan {
    assert!(group_size >= 1, "group_size must be >= 1");
    GroupingPlan {
        groups: hot_order(g).chunks(group_size).map(<[_]>::to_vec).collect(),
        group_size,
        strategy: Strategy::Frequency,
    }
}

/// What a candidate's score is measured against during greedy growth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightTarget {
    /// Sum of edge weights to every current group member.
    #[default]
    Group,
    /// Edge weight to the group's seed only.
    Seed,
}

/// One greedy admission, recorded for instrumentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Admission {
    pub group: usize,
    pub item: ItemId,
    pub weight: u64,
}

pub fn group_correlation_aware(g: &CoOccurrenceGraph, group_size: usize) -> GroupingPlan {
    CorrelationGrouper::new(g, group_size).run(None)
}

/// Like [`group_correlation_aware`], also returning every admission step.
pub fn group_correlation_aware_traced(
    g: &CoOccurrenceGraph,
    group_size: usize,
    target: WeightTarget,
) -> (GroupingPlan, Vec<Admission>) {
    let mut log = Vec::new();
    let plan = CorrelationGrouper::new(g, group_size)
        .target(target)
        .run(Some(&mut log));
    (plan, log)
}

/// Greedy correlation-aware grouping.
///
/// Seeds are taken hottest-first. Each group starts from its seed and keeps
/// admitting the ungrouped neighbor of the group with the highest score
/// (ties: higher frequency, then lower ID) until it is full or no candidate
/// remains. A seed that finds no candidate at all is set aside and the
/// set-aside items are packed, in the same hot order, after the main pass.
pub struct CorrelationGrouper<'a> {
    graph: &'a CoOccurrenceGraph,
    group_size: usize,
    target: WeightTarget,
}

impl<'a> CorrelationGrouper<'a> {
    pub fn new(graph: &'a CoOccurrenceGraph, group_size: usize) -> Self {
        assert!(group_size >= 1, "group_size must be >= 1");
        CorrelationGrouper {
            graph,
            group_size,
            target: WeightTarget::Group,
        }
    }

    pub fn target(mut self, target: WeightTarget) -> Self {
        self.target = target;
        self
    }

    pub fn run(&self, mut log: Option<&mut Vec<Admission>>) -> GroupingPlan {
        let g = self.graph;
        let n = g.num_items();
        let mut grouped = vec![false; n];
        let mut frontier = Frontier::new(n);
        let mut groups: Vec<Vec<ItemId>> = Vec::new();
        let mut set_aside: Vec<ItemId> = Vec::new();

        for seed in hot_order(g) {
            if grouped[seed as usize] {
                continue;
            }
            grouped[seed as usize] = true;
            let mut group = vec![seed];

            frontier.expand(g, self.target, seed, seed, &grouped);
            while group.len() < self.group_size {
                let Some((id, weight)) = frontier.pop_best(&grouped) else {
                    break;
                };
                grouped[id as usize] = true;
                group.push(id);
                if let Some(log) = log.as_deref_mut() {
                    log.push(Admission {
                        group: groups.len(),
                        item: id,
                        weight,
                    });
                }
                frontier.expand(g, self.target, seed, id, &grouped);
            }
            frontier.reset();

            if group.len() == 1 && self.group_size > 1 {
                set_aside.push(seed);
            } else {
                groups.push(group);
            }
        }

        groups.extend(set_aside.chunks(self.group_size).map(<[_]>::to_vec));
        GroupingPlan {
            groups,
            group_size: self.group_size,
            strategy: Strategy::Correlation,
        }
    }
}

/// Candidate set of the group being grown. Scores only ever increase, so
/// the heap keeps superseded entries and skips them lazily on pop.
struct Frontier {
    score: Vec<u64>,
    is_candidate: Vec<bool>,
    touched: Vec<ItemId>,
    heap: BinaryHeap<(u64, u64, Reverse<ItemId>)>,
}

impl Frontier {
    fn new(n: usize) -> Self {
        Frontier {
            score: vec![0; n],
            is_candidate: vec![false; n],
            touched: Vec::new(),
            heap: BinaryHeap::new(),
        }
    }

    fn expand(
        &mut self,
        g: &CoOccurrenceGraph,
        target: WeightTarget,
        seed: ItemId,
        member: ItemId,
        grouped: &[bool],
    ) {
        for &(nb, w) in g.neighbors(member).expect("member in range") {
            let i = nb as usize;
            if grouped[i] {
                continue;
            }
            let fresh = !self.is_candidate[i];
            if fresh {
                self.is_candidate[i] = true;
                self.touched.push(nb);
            }
            match target {
                WeightTarget::Group => self.score[i] += w,
                WeightTarget::Seed if fresh => {
                    self.score[i] = if member == seed {
                        w
                    } else {
                        g.weight(seed, nb)
                    };
                }
                WeightTarget::Seed => continue,
            }
            self.heap.push((self.score[i], g.freq(nb), Reverse(nb)));
        }
    }

    fn pop_best(&mut self, grouped: &[bool]) -> Option<(ItemId, u64)> {
        while let Some((s, _, Reverse(id))) = self.heap.pop() {
            if !grouped[id as usize] && s == self.score[id as usize] {
                return Some((id, s));
            }
        }
        None
    }

    fn reset(&mut self) {
        self.heap.clear();
        for id in self.touched.drain(..) {
            self.score[id as usize] = 0;
            self.is_candidate[id as usize] = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: ItemId = 0;
    const B: ItemId = 1;
    const C: ItemId = 2;
    const D: ItemId = 3;

    fn abcd() -> CoOccurrenceGraph {
        CoOccurrenceGraph::from_edges(
            vec![8, 7, 6, 1],
            [(A, B, 5), (A, C, 3), (B, C, 2), (C, D, 1)],
        )
        .unwrap()
    }

    #[test]
    fn best_pair_is_ab() {
        // exhaustive: heaviest pair among all 6 pairs
        let g = abcd();
        let mut best = (0, 0, 0);
        for a in 0..4 {
            for b in a + 1..4 {
                let w = g.weight(a, b);
                if w > best.2 {
                    best = (a, b, w);
                }
            }
        }
        assert_eq!((best.0, best.1), (A, B));
    }

    #[test]
    fn hand_traced_example() {
        let plan = group_correlation_aware(&abcd(), 2);
        assert_eq!(plan.groups, vec![vec![A, B], vec![C, D]]);
        validate_grouping(&plan, 4).unwrap();
    }

    #[test]
    fn edgeless_falls_back_to_hot_order() {
        let g = CoOccurrenceGraph::from_edges(vec![1, 1, 1, 1], []).unwrap();
        let plan = group_correlation_aware(&g, 2);
        assert_eq!(plan.groups, vec![vec![0, 1], vec![2, 3]]);
        let g = CoOccurrenceGraph::from_edges(vec![1, 5, 1, 3], []).unwrap();
        assert_eq!(
            group_correlation_aware(&g, 2).groups,
            vec![vec![1, 3], vec![0, 2]]
        );
    }

    #[test]
    fn group_size_one_is_identity_partition() {
        let g = abcd();
        for plan in [
            group_correlation_aware(&g, 1),
            group_frequency(&g, 1),
            group_naive(4, 1),
        ] {
            assert_eq!(plan.len(), 4);
            assert!(plan.groups.iter().all(|grp| grp.len() == 1));
            validate_grouping(&plan, 4).unwrap();
        }
    }

    #[test]
    fn group_level_score_uses_all_members() {
        // seed 0 admits 1; then 3 (edges to both 0 and 1) beats 2 (edge to 0 only)
        let g = CoOccurrenceGraph::from_edges(
            vec![10, 9, 5, 4],
            [(0, 1, 5), (0, 2, 3), (0, 3, 2), (1, 3, 2)],
        )
        .unwrap();
        let plan = group_correlation_aware(&g, 3);
        assert_eq!(plan.groups[0], vec![0, 1, 3]);
        let (seed_plan, _) = group_correlation_aware_traced(&g, 3, WeightTarget::Seed);
        assert_eq!(seed_plan.groups[0], vec![0, 1, 2]);
    }

    #[test]
    fn seed_target_admits_zero_weight_candidates() {
        // 2 is reachable only through 1, so its weight to the seed is 0
        let g = CoOccurrenceGraph::from_edges(vec![3, 2, 1], [(0, 1, 2), (1, 2, 1)]).unwrap();
        let (plan, log) = group_correlation_aware_traced(&g, 3, WeightTarget::Seed);
        assert_eq!(plan.groups, vec![vec![0, 1, 2]]);
        assert_eq!(log.last().unwrap().weight, 0);
    }

    #[test]
    fn early_close_keeps_partial_group() {
        // 0-1 connected, 2 and 3 isolated, group_size 3
        let g = CoOccurrenceGraph::from_edges(vec![4, 3, 2, 1], [(0, 1, 1)]).unwrap();
        let plan = group_correlation_aware(&g, 3);
        assert_eq!(plan.groups, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn frequency_sort_and_chunk() {
        let g = CoOccurrenceGraph::from_edges(vec![5, 1, 9, 3], []).unwrap();
        assert_eq!(group_frequency(&g, 2).groups, vec![vec![2, 0], vec![3, 1]]);
        let g = CoOccurrenceGraph::from_edges(vec![2; 5], []).unwrap();
        assert_eq!(
            group_frequency(&g, 2).groups,
            vec![vec![0, 1], vec![2, 3], vec![4]]
        );
        assert_eq!(group_frequency(&g, 9).len(), 1);
    }

    #[test]
    fn naive_ranges() {
        assert_eq!(
            group_naive(5, 2).groups,
            vec![vec![0, 1], vec![2, 3], vec![4]]
        );
        assert_eq!(group_naive(4, 4).groups, vec![vec![0, 1, 2, 3]]);
        assert!(group_naive(0, 3).is_empty());
    }

    #[test]
    fn validation_reports() {
        let ok = group_naive(4, 2);
        assert_eq!(validate_grouping(&ok, 4), Ok(()));

        let dup = GroupingPlan {
            groups: vec![vec![0, 1], vec![1, 2], vec![3]],
            ..ok.clone()
        };
        let err = validate_grouping(&dup, 4).unwrap_err();
        assert_eq!(err, GroupingViolation::Duplicate { id: 1 });
        assert!(err.to_string().starts_with("duplicate"));

        let big = GroupingPlan {
            groups: vec![vec![0, 1, 2], vec![3]],
            ..ok.clone()
        };
        assert!(validate_grouping(&big, 4)
            .unwrap_err()
            .to_string()
            .starts_with("size"));

        let missing = GroupingPlan {
            groups: vec![vec![0, 1], vec![3]],
            ..ok.clone()
        };
        assert_eq!(
            validate_grouping(&missing, 4),
            Err(GroupingViolation::Missing { id: 2 })
        );

        let empty = GroupingPlan {
            groups: vec![vec![0, 1], vec![], vec![2, 3]],
            ..ok
        };
        assert!(matches!(
            validate_grouping(&empty, 4),
            Err(GroupingViolation::Size { group: 1, .. })
        ));
    }

    #[test]
    fn dump_text() {
        assert_eq!(group_naive(3, 2).to_dump_text(), "0 1\n2\n");
    }

    #[test]
    fn item_to_group_map() {
        let plan = group_naive(5, 2);
        assert_eq!(plan.item_to_group(6), vec![0, 0, 1, 1, 2, u32::MAX]);
    }
}
