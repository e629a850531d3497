//! Reach sets and silenced processes on lasso schedules.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::process::{ProcSet, ProcessId};
use crate::run::{ValidityReport, ViolationKind};
use crate::schedule::LassoSchedule;
use crate::view::View;

/// Processes that receive `i`'s round-`r` message.
pub fn rcv_set(s: &LassoSchedule, i: ProcessId, r: usize) -> ProcSet {
    s.resolve_round(r).out_neighbors(i)
}

fn rcv_union(s: &LassoSchedule, from: ProcSet, r: usize) -> ProcSet {
    let g = s.resolve_round(r);
    ProcessId::all(s.n())
        .filter(|&j| !g.in_neighbors(j).intersection(from).is_empty())
        .collect()
}

/// `Reach_i(r, t)`.
pub fn reach(s: &LassoSchedule, i: ProcessId, r: usize, t: usize) -> ProcSet {
    assert!(t >= r && r >= 1, "need t >= r >= 1");
    let mut set = ProcSet::singleton(i);
    for round in r..t {
        set = rcv_union(s, set, round);
    }
    set
}

/// Reach of one process from one round, up to its fixpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReachTable {
    pub source: ProcessId,
    pub start: usize,
    /// `sets[k]` is `Reach_i(start, start + k)`.
    pub sets: Vec<ProcSet>,
    /// First `t` with `Reach_i(start, t)` equal to the fixpoint.
    pub fixpoint_round: usize,
    pub fixpoint: ProcSet,
}

/// Iterates the monotone reach sequence until it has not grown for a whole
/// cycle past the prefix; by periodicity it never grows afterwards.
pub fn reach_table(s: &LassoSchedule, i: ProcessId, r: usize) -> ReachTable {
    let mut sets = vec![ProcSet::singleton(i)];
    let mut stable_for = 0;
    let mut fixpoint_round = r;
    let mut t = r;
    loop {
        let cur = *sets.last().unwrap();
        if t > s.prefix().len() && stable_for >= s.cycle().len() {
            break;
        }
        let next = rcv_union(s, cur, t);
        t += 1;
        // only stability over cycle rounds carries over to every later round
        if next == cur && t - 1 > s.prefix().len() {
            stable_for += 1;
        } else {
            stable_for = 0;
            fixpoint_round = t;
        }
        sets.push(next);
    }
    let fixpoint = *sets.last().unwrap();
    ReachTable {
        source: i,
        start: r,
        sets,
        fixpoint_round,
        fixpoint,
    }
}

/// `Reach_i(r, ∞)`.
pub fn reach_infinity(s: &LassoSchedule, i: ProcessId, r: usize) -> ProcSet {
    reach_table(s, i, r).fixpoint
}

/// First round from which `i` is silenced, if any. Rounds past the phase range
/// repeat earlier suffixes, so only `1..=|prefix| + |cycle|` is searched.
pub fn silenced_from(s: &LassoSchedule, i: ProcessId) -> Option<usize> {
    (1..=s.phase_range()).find(|&r| reach_infinity(s, i, r).len() <= s.f())
}

pub fn silenced_processes(s: &LassoSchedule) -> ProcSet {
    ProcessId::all(s.n()).filter(|&i| silenced_from(s, i).is_some()).collect()
}

/// Not silenced iff the reach from every phase-range round is everybody; also
/// that any reach larger than `f` is everybody.
pub fn check_lemma2(s: &LassoSchedule) -> ValidityReport {
    let n = s.n();
    let mut report = ValidityReport::default();
    for i in ProcessId::all(n) {
        let sizes: Vec<usize> = (1..=s.phase_range()).map(|r| reach_infinity(s, i, r).len()).collect();
        let silenced = sizes.iter().any(|&k| k <= s.f());
        let full = sizes.iter().all(|&k| k == n);
        report.check(silenced != full, ViolationKind::Lemma2, Some(i), 0, || {
            format!("{i}: silenced = {silenced} but all reaches full = {full} ({sizes:?})")
        });
        for (k, &size) in sizes.iter().enumerate() {
            report.check(size <= s.f() || size == n, ViolationKind::Lemma2, Some(i), k + 1, || {
                format!("{i}: reach from round {} has size {size}, above f but below n", k + 1)
            });
        }
    }
    report
}

/// At most `f` silenced processes when `n > 2f`.
pub fn check_lemma3(s: &LassoSchedule) -> ValidityReport {
    let mut report = ValidityReport::default();
    if s.n() <= 2 * s.f() {
        report.fail(ViolationKind::Precondition, None, 0, format!("n = {} is not above 2f = {}", s.n(), 2 * s.f()));
        return report;
    }
    let sil = silenced_processes(s);
    report.check(sil.len() <= s.f(), ViolationKind::Lemma3, None, 0, || {
        format!("{} silenced processes {sil:?} for f = {}", sil.len(), s.f())
    });
    report
}

/// With one fault, a process silenced from round `R` holds, at every round
/// `r >= R + 1`, the round-`(r - 2)` views of all processes.
///
/// `views[r][i]` is the full-information view of `p_{i+1}` after round `r`.
pub fn check_lemma6(s: &LassoSchedule, views: &[Vec<View>]) -> Result<ValidityReport> {
    if s.f() != 1 || s.n() <= 2 {
        return Err(Error::Precondition(format!(
            "the lag-2 property is stated for f = 1 and n > 2 (got n = {}, f = {})",
            s.n(),
            s.f()
        )));
    }
    let budget = views.len().saturating_sub(1);
    let mut report = ValidityReport::default();
    for i in ProcessId::all(s.n()) {
        let Some(from) = silenced_from(s, i) else { continue };
        for r in (from + 1).max(2)..=budget {
            let v = &views[r][i.slot()];
            for j in ProcessId::all(s.n()) {
                report.check(v.contains_view_of(j, r - 2), ViolationKind::Lemma6, Some(i), r, || {
                    format!("{i} silenced from round {from} lacks the round-{} view of {j} at round {r}", r - 2)
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{enumerate_graphs, CommunicationGraph};

    fn p(i: usize) -> ProcessId {
        ProcessId::new(i)
    }

    /// Straight recursion over the unrolled schedule.
    fn naive_reach(graphs: &[CommunicationGraph], i: ProcessId, r: usize, t: usize) -> ProcSet {
        if t == r {
            return ProcSet::singleton(i);
        }
        let prev = naive_reach(graphs, i, r, t - 1);
        let g = &graphs[t - 2];
        let mut out = ProcSet::EMPTY;
        for j in prev.iter() {
            for k in ProcessId::all(g.n()) {
                if g.in_neighbors(k).contains(j) {
                    out.insert(k);
                }
            }
        }
        out
    }

    #[test]
    fn complete_graph_reach() {
        let s = LassoSchedule::complete(4, 1);
        assert_eq!(rcv_set(&s, p(2), 3), ProcSet::full(4));
        assert_eq!(reach(&s, p(2), 3, 3), ProcSet::singleton(p(2)));
        assert_eq!(reach(&s, p(2), 3, 4), ProcSet::full(4));
        assert_eq!(reach_infinity(&s, p(1), 1), ProcSet::full(4));
        assert!(silenced_processes(&s).is_empty());
    }

    #[test]
    fn chain_schedule_matches_naive_recursion() {
        // p1 -> p2 -> p3 -> p4 relay over successive rounds
        let g = |lists: &[Vec<usize>]| CommunicationGraph::from_lists(lists).unwrap();
        let g1 = g(&[vec![1, 2, 3], vec![1, 2, 3], vec![2, 3, 4], vec![2, 3, 4]]);
        let g2 = g(&[vec![1, 3, 4], vec![1, 2, 4], vec![1, 2, 3], vec![2, 3, 4]]);
        let g3 = g(&[vec![1, 2, 4], vec![2, 3, 4], vec![1, 3, 4], vec![1, 3, 4]]);
        let s = LassoSchedule::new(4, 1, vec![g1.clone(), g2.clone()], vec![g3.clone(), g1.clone()]).unwrap();
        let graphs = s.unroll(20);
        for i in ProcessId::all(4) {
            for r in 1..6 {
                for t in r..12 {
                    assert_eq!(reach(&s, i, r, t), naive_reach(&graphs, i, r, t), "{i} {r} {t}");
                }
            }
        }
    }

    #[test]
    fn only_self_loop_out() {
        let g = CommunicationGraph::from_lists(&[vec![1, 2], vec![2, 3], vec![2, 3]]).unwrap();
        let s = LassoSchedule::new(3, 1, vec![], vec![g]).unwrap();
        assert_eq!(rcv_set(&s, p(3), 1), ProcSet::from_iter([p(2), p(3)]));
        assert_eq!(rcv_set(&s, p(1), 1), ProcSet::singleton(p(1)));
        assert_eq!(silenced_processes(&s), ProcSet::singleton(p(1)));
        assert!(check_lemma2(&s).is_ok());
    }

    #[test]
    fn exhaustive_single_graph_lemmas() {
        for (n, f) in [(3, 1), (4, 1)] {
            for g in enumerate_graphs(n, f).unwrap() {
                let s = LassoSchedule::new(n, f, vec![], vec![g]).unwrap();
                assert!(check_lemma2(&s).is_ok());
                assert!(check_lemma3(&s).is_ok());
            }
        }
    }

    #[test]
    fn table_is_monotone() {
        let gs = enumerate_graphs(3, 1).unwrap();
        let s = LassoSchedule::new(3, 1, vec![gs[3].clone(), gs[20].clone()], vec![gs[7].clone(), gs[11].clone()]).unwrap();
        for i in ProcessId::all(3) {
            let t = reach_table(&s, i, 1);
            assert_eq!(t.sets[0], ProcSet::singleton(i));
            for w in t.sets.windows(2) {
                assert!(w[0].is_subset(w[1]));
            }
            assert_eq!(reach(&s, i, 1, t.fixpoint_round), t.fixpoint);
            assert_eq!(reach(&s, i, 1, t.fixpoint_round + 30), t.fixpoint);
        }
    }

    #[test]
    fn stable_prefix_round_does_not_end_the_search() {
        // nobody but p3 hears p3 in round 2, then p1 does from round 3 on
        let g = |lists: &[Vec<usize>]| CommunicationGraph::from_lists(lists).unwrap();
        let c = g(&[vec![1, 2, 3], vec![2, 3], vec![1, 3]]);
        let s = LassoSchedule::new(3, 1, vec![c.clone(), g(&[vec![1, 2], vec![1, 2], vec![1, 3]])], vec![c]).unwrap();
        assert_eq!(reach_infinity(&s, p(3), 2), ProcSet::full(3));
        assert!(silenced_processes(&s).is_empty());
    }

    #[test]
    fn lemma6_precondition() {
        let s = LassoSchedule::complete(5, 2);
        assert!(check_lemma6(&s, &[]).is_err());
    }
}
