//! Per-round communication graphs, the members of `G(n, f)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{ProcSet, ProcessId, MAX_PROCESSES};

/// One round's delivery relation: for every process, the set it hears from.
///
/// Equality is by in-neighbor sets. The serialized form is one sorted list of
/// 1-based in-neighbors per process, listed in process order.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct CommunicationGraph {
    in_neighbors: Vec<ProcSet>,
}

impl CommunicationGraph {
    /// Builds a graph without checking membership in `G(n, f)`.
    pub fn from_sets(in_neighbors: Vec<ProcSet>) -> Result<Self> {
        let n = in_neighbors.len();
        if n == 0 || n > MAX_PROCESSES {
            return Err(Error::MalformedGraph(format!("unsupported vertex count {n}")));
        }
        for (slot, set) in in_neighbors.iter().enumerate() {
            if set.max_index() > n {
                return Err(Error::MalformedGraph(format!(
                    "in-neighbors of p{} name vertex {} outside [1, {n}]",
                    slot + 1,
                    set.max_index()
                )));
            }
        }
        Ok(CommunicationGraph { in_neighbors })
    }

    /// Builds a graph from 1-based in-neighbor lists.
    pub fn from_lists(lists: &[Vec<usize>]) -> Result<Self> {
        let n = lists.len();
        let mut sets = Vec::with_capacity(n);
        for (slot, list) in lists.iter().enumerate() {
            let mut s = ProcSet::EMPTY;
            for &j in list {
                if j == 0 || j > n {
                    return Err(Error::MalformedGraph(format!(
                        "in-neighbor {j} of p{} outside [1, {n}]",
                        slot + 1
                    )));
                }
                s.insert(ProcessId::new(j));
            }
            sets.push(s);
        }
        Self::from_sets(sets)
    }

    /// Every process hears from every process.
    pub fn complete(n: usize) -> Self {
        CommunicationGraph {
            in_neighbors: vec![ProcSet::full(n); n],
        }
    }

    pub fn n(&self) -> usize {
        self.in_neighbors.len()
    }

    pub fn in_neighbors(&self, p: ProcessId) -> ProcSet {
        self.in_neighbors[p.slot()]
    }

    pub fn in_neighbor_sets(&self) -> &[ProcSet] {
        &self.in_neighbors
    }

    /// Processes that hear from `p` in this graph.
    pub fn out_neighbors(&self, p: ProcessId) -> ProcSet {
        self.in_neighbors
            .iter()
            .enumerate()
            .filter(|(_, s)| s.contains(p))
            .map(|(slot, _)| ProcessId::from_slot(slot))
            .collect()
    }

    pub fn with_in_neighbors(mut self, p: ProcessId, set: ProcSet) -> Self {
        self.in_neighbors[p.slot()] = set;
        self
    }

    /// Membership in `G(n, f)`: self-loops everywhere and in-degree at least `n - f`.
    ///
    /// A vertex-count mismatch is a structural error rather than `false`.
    pub fn validate(&self, n: usize, f: usize) -> Result<bool> {
        if self.n() != n {
            return Err(Error::MalformedGraph(format!(
                "graph has {} vertices, expected {n}",
                self.n()
            )));
        }
        let need = n.saturating_sub(f);
        Ok(self
            .in_neighbors
            .iter()
            .enumerate()
            .all(|(slot, s)| s.contains(ProcessId::from_slot(slot)) && s.len() >= need))
    }

    pub fn to_lists(&self) -> Vec<Vec<usize>> {
        self.in_neighbors
            .iter()
            .map(|s| s.iter().map(|p| p.index()).collect())
            .collect()
    }
}

/// Shorthand for [`CommunicationGraph::validate`].
pub fn validate_communication_graph(g: &CommunicationGraph, n: usize, f: usize) -> Result<bool> {
    g.validate(n, f)
}

impl Serialize for CommunicationGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_lists().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CommunicationGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let lists = Vec::<Vec<usize>>::deserialize(deserializer)?;
        CommunicationGraph::from_lists(&lists).map_err(serde::de::Error::custom)
    }
}

/// The in-neighbor sets admissible for `p` in `G(n, f)`, in increasing mask order.
pub fn admissible_in_sets(n: usize, f: usize, p: ProcessId) -> Vec<ProcSet> {
    let need = n.saturating_sub(f);
    let own = ProcSet::singleton(p);
    let others = ProcSet::full(n).without(p).bits();
    // enumerate submasks of the other processes
    let mut out = Vec::new();
    let mut sub = others;
    loop {
        let s = ProcSet::from_bits(sub).union(own);
        if s.len() >= need {
            out.push(s);
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & others;
    }
    out.sort();
    out
}

/// `|G(n, f)|` as the product of per-vertex choice counts.
pub fn graph_count(n: usize, f: usize) -> u128 {
    let need_others = n.saturating_sub(f).saturating_sub(1);
    let per_vertex: u128 = (need_others..n).map(|k| binomial(n as u128 - 1, k as u128)).sum();
    per_vertex.pow(n as u32)
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Default cap on enumerated graph counts.
pub const DEFAULT_GRAPH_CAP: u128 = 1 << 22;

/// All members of `G(n, f)` in canonical (lexicographic per-vertex mask) order.
pub fn enumerate_graphs(n: usize, f: usize) -> Result<Vec<CommunicationGraph>> {
    enumerate_graphs_capped(n, f, DEFAULT_GRAPH_CAP)
}

pub fn enumerate_graphs_capped(n: usize, f: usize, cap: u128) -> Result<Vec<CommunicationGraph>> {
    if n == 0 || n > MAX_PROCESSES || f > n {
        return Err(Error::Precondition(format!("need n >= 1 and 0 <= f <= n, got n={n} f={f}")));
    }
    let count = graph_count(n, f);
    if count > cap {
        return Err(Error::Capacity {
            what: format!("G({n},{f})"),
            count,
            cap,
        });
    }
    let choices: Vec<Vec<ProcSet>> = ProcessId::all(n).map(|p| admissible_in_sets(n, f, p)).collect();
    let mut out = Vec::with_capacity(count as usize);
    let mut idx = vec![0usize; n];
    loop {
        let sets = idx.iter().enumerate().map(|(v, &k)| choices[v][k]).collect();
        out.push(CommunicationGraph { in_neighbors: sets });
        // odometer, last vertex fastest
        let mut v = n;
        loop {
            if v == 0 {
                return Ok(out);
            }
            v -= 1;
            idx[v] += 1;
            if idx[v] < choices[v].len() {
                break;
            }
            idx[v] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: every digraph on n vertices, filtered by the definition.
    fn naive_count(n: usize, f: usize) -> usize {
        let edges = n * n;
        (0u64..(1u64 << edges))
            .filter(|mask| {
                (0..n).all(|i| {
                    let self_loop = mask & (1 << (i * n + i)) != 0;
                    let indeg = (0..n).filter(|j| mask & (1 << (j * n + i)) != 0).count();
                    self_loop && indeg >= n - f
                })
            })
            .count()
    }

    #[test]
    fn complete_graph_is_valid() {
        assert!(CommunicationGraph::complete(3).validate(3, 1).unwrap());
    }

    #[test]
    fn isolated_vertex_is_invalid() {
        let g = CommunicationGraph::from_lists(&[vec![1], vec![1, 2, 3], vec![1, 2, 3]]).unwrap();
        assert!(!g.validate(3, 1).unwrap());
    }

    #[test]
    fn missing_self_loop_is_invalid() {
        let g = CommunicationGraph::from_lists(&[vec![2, 3], vec![1, 2, 3], vec![1, 2, 3]]).unwrap();
        assert!(!g.validate(3, 1).unwrap());
    }

    #[test]
    fn out_of_range_vertex_is_structural_error() {
        assert!(matches!(
            CommunicationGraph::from_lists(&[vec![1, 4], vec![2], vec![3]]),
            Err(Error::MalformedGraph(_))
        ));
        let g = CommunicationGraph::complete(2);
        assert!(g.validate(3, 1).is_err());
    }

    #[test]
    fn counts_match_naive_filter() {
        assert_eq!(naive_count(3, 1), 27);
        for (n, f) in [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2), (4, 1), (4, 2)] {
            let graphs = enumerate_graphs(n, f).unwrap();
            assert_eq!(graphs.len(), naive_count(n, f), "n={n} f={f}");
            assert_eq!(graphs.len() as u128, graph_count(n, f));
            assert!(graphs.iter().all(|g| g.validate(n, f).unwrap()));
            let mut sorted = graphs.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted, graphs, "canonical order, no duplicates");
        }
    }

    #[test]
    fn small_cases() {
        assert_eq!(enumerate_graphs(2, 0).unwrap(), vec![CommunicationGraph::complete(2)]);
        assert_eq!(enumerate_graphs(3, 0).unwrap().len(), 1);
        assert_eq!(graph_count(5, 2), 11u128.pow(5));
    }

    #[test]
    fn capacity_error_reports_count() {
        match enumerate_graphs_capped(5, 2, 1000) {
            Err(Error::Capacity { count, .. }) => assert_eq!(count, 161051),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn serde_round_trip() {
        let g = CommunicationGraph::from_lists(&[vec![2, 1], vec![2, 3], vec![3, 1]]).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        assert_eq!(text, "[[1,2],[2,3],[1,3]]");
        assert_eq!(serde_json::from_str::<CommunicationGraph>(&text).unwrap(), g);
    }
}
