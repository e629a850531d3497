//! Lasso schedules: a finite prefix followed by a cycle repeated forever.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CommunicationGraph;
use crate::process::{ProcSet, ProcessId};

/// An infinite Heard-Of schedule `G_1, G_2, …` in prefix + cycle form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLasso")]
pub struct LassoSchedule {
    n: usize,
    f: usize,
    prefix: Vec<CommunicationGraph>,
    cycle: Vec<CommunicationGraph>,
}

#[derive(Deserialize)]
struct RawLasso {
    n: usize,
    f: usize,
    #[serde(default)]
    prefix: Vec<CommunicationGraph>,
    cycle: Vec<CommunicationGraph>,
}

impl TryFrom<RawLasso> for LassoSchedule {
    type Error = Error;

    fn try_from(raw: RawLasso) -> Result<Self> {
        LassoSchedule::new(raw.n, raw.f, raw.prefix, raw.cycle)
    }
}

impl LassoSchedule {
    /// Validates every graph against `G(n, f)`.
    pub fn new(
        n: usize,
        f: usize,
        prefix: Vec<CommunicationGraph>,
        cycle: Vec<CommunicationGraph>,
    ) -> Result<Self> {
        if cycle.is_empty() {
            return Err(Error::InvalidSchedule("cycle must be nonempty".into()));
        }
        if f > n {
            return Err(Error::InvalidSchedule(format!("f={f} exceeds n={n}")));
        }
        for (k, g) in prefix.iter().chain(cycle.iter()).enumerate() {
            if !g.validate(n, f)? {
                return Err(Error::InvalidSchedule(format!(
                    "graph {} (round {}) is not in G({n},{f})",
                    k,
                    k + 1
                )));
            }
        }
        Ok(LassoSchedule { n, f, prefix, cycle })
    }

    /// Complete graph forever.
    pub fn complete(n: usize, f: usize) -> Self {
        LassoSchedule::new(n, f, vec![], vec![CommunicationGraph::complete(n)])
            .expect("complete graph is always valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn prefix(&self) -> &[CommunicationGraph] {
        &self.prefix
    }

    pub fn cycle(&self) -> &[CommunicationGraph] {
        &self.cycle
    }

    /// Number of rounds after which suffixes repeat: `|prefix| + |cycle|`.
    pub fn phase_range(&self) -> usize {
        self.prefix.len() + self.cycle.len()
    }

    /// Graph of 1-based round `r`: `prefix[r-1]` inside the prefix, else the
    /// cycle slot `(r - |prefix| - 1) mod |cycle|` (0-based).
    pub fn resolve_round(&self, r: usize) -> &CommunicationGraph {
        assert!(r >= 1, "rounds are 1-based");
        if r <= self.prefix.len() {
            &self.prefix[r - 1]
        } else {
            &self.cycle[(r - self.prefix.len() - 1) % self.cycle.len()]
        }
    }

    /// The first `rounds` graphs.
    pub fn unroll(&self, rounds: usize) -> Vec<CommunicationGraph> {
        (1..=rounds).map(|r| self.resolve_round(r).clone()).collect()
    }

    /// Canonical JSON text (sorted-by-process, sorted-within-set).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Replaces the graph of round `r` (in prefix or first cycle occurrence) with a checked one.
    pub fn map_graphs<F>(&self, mut f: F) -> Result<LassoSchedule>
    where
        F: FnMut(usize, &CommunicationGraph) -> CommunicationGraph,
    {
        let p = self.prefix.len();
        let prefix = self.prefix.iter().enumerate().map(|(k, g)| f(k + 1, g)).collect();
        let cycle = self.cycle.iter().enumerate().map(|(k, g)| f(p + k + 1, g)).collect();
        LassoSchedule::new(self.n, self.f, prefix, cycle)
    }
}

/// Names a message in an AMP schedule: the `seq`-th send (0-based) of `sender`.
///
/// Every AMP step sends exactly one message, so `seq` equals the sender's step
/// index. Inside a cycle, references are written for the first iteration and shift
/// by the sender's per-iteration step count in later iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MsgRef {
    pub from: ProcessId,
    pub seq: i64,
}

impl MsgRef {
    pub fn new(from: ProcessId, seq: i64) -> Self {
        MsgRef { from, seq }
    }
}

/// One atomic AMP step of `process`: receive the listed messages (none means `⊥`),
/// compute, then broadcast.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AmpStep {
    pub process: ProcessId,
    #[serde(default)]
    pub deliver: Vec<MsgRef>,
}

impl AmpStep {
    pub fn new(process: ProcessId, deliver: Vec<MsgRef>) -> Self {
        AmpStep { process, deliver }
    }

    pub fn bottom(process: ProcessId) -> Self {
        AmpStep { process, deliver: vec![] }
    }
}

/// An AMP schedule in lasso form. Processes absent from the cycle are faulty.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawAmpLasso")]
pub struct AmpLassoSchedule {
    n: usize,
    f: usize,
    prefix: Vec<AmpStep>,
    cycle: Vec<AmpStep>,
    faulty_hint: ProcSet,
}

#[derive(Deserialize)]
struct RawAmpLasso {
    n: usize,
    f: usize,
    #[serde(default)]
    prefix: Vec<AmpStep>,
    cycle: Vec<AmpStep>,
    #[serde(default)]
    faulty_hint: Option<ProcSet>,
}

impl TryFrom<RawAmpLasso> for AmpLassoSchedule {
    type Error = Error;

    fn try_from(raw: RawAmpLasso) -> Result<Self> {
        let s = AmpLassoSchedule::new(raw.n, raw.f, raw.prefix, raw.cycle)?;
        if let Some(h) = raw.faulty_hint {
            if h != s.faulty_hint {
                return Err(Error::InvalidSchedule(format!(
                    "faulty_hint {h:?} disagrees with processes absent from the cycle {:?}",
                    s.faulty_hint
                )));
            }
        }
        Ok(s)
    }
}

impl AmpLassoSchedule {
    /// Checks structure and the per-iteration Integrity / No Duplicates conditions
    /// over an unrolling long enough to expose every cycle interaction.
    pub fn new(n: usize, f: usize, prefix: Vec<AmpStep>, cycle: Vec<AmpStep>) -> Result<Self> {
        if cycle.is_empty() {
            return Err(Error::InvalidSchedule("cycle must be nonempty".into()));
        }
        for a in prefix.iter().chain(cycle.iter()) {
            if a.process.index() > n {
                return Err(Error::InvalidSchedule(format!("{} outside [1, {n}]", a.process)));
            }
            for m in &a.deliver {
                if m.from.index() > n {
                    return Err(Error::InvalidSchedule(format!("sender {} outside [1, {n}]", m.from)));
                }
            }
        }
        let in_cycle: ProcSet = cycle.iter().map(|a| a.process).collect();
        let faulty_hint = ProcSet::full(n).difference(in_cycle);
        if faulty_hint.len() > f {
            return Err(Error::InvalidSchedule(format!(
                "{} processes never step in the cycle but f = {f}",
                faulty_hint.len()
            )));
        }
        let s = AmpLassoSchedule {
            n,
            f,
            prefix,
            cycle,
            faulty_hint,
        };
        let unrolled = s.unroll_iterations(s.integrity_iterations());
        check_integrity(n, &unrolled)?;
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn prefix(&self) -> &[AmpStep] {
        &self.prefix
    }

    pub fn cycle(&self) -> &[AmpStep] {
        &self.cycle
    }

    pub fn faulty(&self) -> ProcSet {
        self.faulty_hint
    }

    /// Steps of `p` per cycle iteration.
    pub fn cycle_steps(&self, p: ProcessId) -> i64 {
        self.cycle.iter().filter(|a| a.process == p).count() as i64
    }

    /// Steps of `p` inside the prefix.
    pub fn prefix_steps(&self, p: ProcessId) -> i64 {
        self.prefix.iter().filter(|a| a.process == p).count() as i64
    }

    /// Iterations needed so that any two cycle references of one sender that could
    /// ever name the same message appear in the unrolling.
    fn integrity_iterations(&self) -> usize {
        let mut spread = 0i64;
        for p in ProcessId::all(self.n) {
            let seqs: Vec<i64> = self
                .cycle
                .iter()
                .flat_map(|a| a.deliver.iter())
                .filter(|m| m.from == p)
                .map(|m| m.seq)
                .collect();
            if let (Some(lo), Some(hi)) = (seqs.iter().min(), seqs.iter().max()) {
                let c = self.cycle_steps(p).max(1);
                spread = spread.max((hi - lo) / c + 1);
            }
        }
        (spread as usize + 3).min(64)
    }

    /// The action at 0-based position `k` of the infinite unrolling, with cycle
    /// references shifted to absolute sequence numbers.
    pub fn action(&self, k: usize) -> AmpStep {
        if k < self.prefix.len() {
            return self.prefix[k].clone();
        }
        let rel = k - self.prefix.len();
        let iter = (rel / self.cycle.len()) as i64;
        let a = &self.cycle[rel % self.cycle.len()];
        AmpStep {
            process: a.process,
            deliver: a
                .deliver
                .iter()
                .map(|m| MsgRef::new(m.from, m.seq + iter * self.cycle_steps(m.from)))
                .collect(),
        }
    }

    /// Prefix plus `iterations` copies of the cycle, references made absolute.
    pub fn unroll_iterations(&self, iterations: usize) -> Vec<AmpStep> {
        (0..self.prefix.len() + iterations * self.cycle.len())
            .map(|k| self.action(k))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Round-robin schedule in which every step delivers the most recent message of
    /// every process not yet delivered; no process is faulty.
    pub fn all_deliver(n: usize, f: usize) -> Self {
        let order: Vec<ProcessId> = ProcessId::all(n).collect();
        fair_with_flush(n, f, vec![], &order, &[]).expect("all-deliver schedule is valid")
    }
}

/// Builds a fair lasso: `random_prefix` is followed by one flush step per
/// non-faulty process (in `order`) that delivers every pending message to it, then
/// a cycle in which each process in `order` steps once and receives the latest
/// message of every non-faulty process. Faulty senders in `keep_last_pending` have
/// their final prefix message withheld from everyone.
pub fn fair_with_flush(
    n: usize,
    f: usize,
    random_prefix: Vec<AmpStep>,
    order: &[ProcessId],
    keep_last_pending: &[ProcessId],
) -> Result<AmpLassoSchedule> {
    let live: ProcSet = order.iter().copied().collect();
    let mut prefix = random_prefix;
    // delivered[i] holds (sender, seq) already delivered to i
    let mut sent = vec![0i64; n];
    let mut delivered = vec![std::collections::BTreeSet::new(); n];
    for a in &prefix {
        for m in &a.deliver {
            delivered[a.process.slot()].insert(*m);
        }
        sent[a.process.slot()] += 1;
    }
    let last_withheld: Vec<Option<MsgRef>> = ProcessId::all(n)
        .map(|p| {
            if keep_last_pending.contains(&p) && !live.contains(p) && sent[p.slot()] > 0 {
                Some(MsgRef::new(p, sent[p.slot()] - 1))
            } else {
                None
            }
        })
        .collect();
    for &i in order {
        let mut deliver = Vec::new();
        for j in ProcessId::all(n) {
            for seq in 0..sent[j.slot()] {
                let m = MsgRef::new(j, seq);
                if !delivered[i.slot()].contains(&m) && last_withheld[j.slot()] != Some(m) {
                    deliver.push(m);
                }
            }
        }
        for m in &deliver {
            delivered[i.slot()].insert(*m);
        }
        prefix.push(AmpStep::new(i, deliver));
        sent[i.slot()] += 1;
    }
    let pos = |p: ProcessId| order.iter().position(|&q| q == p);
    let mut cycle = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        let mut deliver = Vec::new();
        for &j in order {
            let base = sent[j.slot()];
            let seq = if pos(j).unwrap() < k { base } else { base - 1 };
            deliver.push(MsgRef::new(j, seq));
        }
        deliver.sort();
        cycle.push(AmpStep::new(i, deliver));
    }
    AmpLassoSchedule::new(n, f, prefix, cycle)
}

/// Integrity and No Duplicates over a finite absolute action sequence.
fn check_integrity(n: usize, actions: &[AmpStep]) -> Result<()> {
    let mut sent = vec![0i64; n];
    let mut delivered = vec![std::collections::BTreeSet::new(); n];
    for (k, a) in actions.iter().enumerate() {
        for m in &a.deliver {
            if m.seq < 0 || m.seq >= sent[m.from.slot()] {
                return Err(Error::InvalidSchedule(format!(
                    "action {k}: {} receives unsent message ({}, {}) (Integrity)",
                    a.process, m.from, m.seq
                )));
            }
            if !delivered[a.process.slot()].insert(*m) {
                return Err(Error::InvalidSchedule(format!(
                    "action {k}: {} receives ({}, {}) twice (No Duplicates)",
                    a.process, m.from, m.seq
                )));
            }
        }
        sent[a.process.slot()] += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(lists: &[&[usize]]) -> CommunicationGraph {
        CommunicationGraph::from_lists(&lists.iter().map(|l| l.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn resolve_round_indexing() {
        let g1 = g(&[&[1, 2], &[1, 2, 3], &[1, 2, 3]]);
        let g2 = g(&[&[1, 2, 3], &[2, 3], &[1, 2, 3]]);
        let g3 = g(&[&[1, 2, 3], &[1, 2, 3], &[1, 3]]);
        let s = LassoSchedule::new(3, 1, vec![g1.clone()], vec![g2.clone(), g3.clone()]).unwrap();
        assert_eq!(s.resolve_round(1), &g1);
        assert_eq!(s.resolve_round(2), &g2);
        assert_eq!(s.resolve_round(3), &g3);
        // (4 - 1 - 1) mod 2 = 0 is the first cycle slot
        assert_eq!(s.resolve_round(4), &g2);
        let single = LassoSchedule::new(3, 1, vec![], vec![g3.clone()]).unwrap();
        assert!((1..20).all(|r| single.resolve_round(r) == &g3));
    }

    #[test]
    fn rejects_invalid_graphs() {
        let bad = g(&[&[1], &[1, 2, 3], &[1, 2, 3]]);
        assert!(LassoSchedule::new(3, 1, vec![], vec![bad]).is_err());
        assert!(LassoSchedule::new(3, 1, vec![], vec![]).is_err());
    }

    #[test]
    fn json_is_byte_stable() {
        let s = LassoSchedule::new(3, 1, vec![g(&[&[2, 1], &[1, 2, 3], &[3, 1]])], vec![CommunicationGraph::complete(3)])
            .unwrap();
        let text = s.to_json();
        let back = LassoSchedule::from_json(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn malformed_file_is_parse_error() {
        assert!(matches!(LassoSchedule::from_json("{\"n\":3}"), Err(Error::Parse(_))));
    }

    #[test]
    fn amp_all_deliver_shifts_cycle_references() {
        let s = AmpLassoSchedule::all_deliver(3, 1);
        assert!(s.faulty().is_empty());
        // after the flush, the cycle step of p1 in iteration t delivers (j, t + k)
        let a0 = s.action(s.prefix().len());
        let a1 = s.action(s.prefix().len() + 3);
        for (m0, m1) in a0.deliver.iter().zip(a1.deliver.iter()) {
            assert_eq!(m0.from, m1.from);
            assert_eq!(m1.seq, m0.seq + 1);
        }
    }

    #[test]
    fn amp_integrity_enforced_at_load() {
        let p1 = ProcessId::new(1);
        let bad = AmpLassoSchedule::new(2, 1, vec![AmpStep::new(p1, vec![MsgRef::new(p1, 0)])], vec![AmpStep::bottom(p1)]);
        assert!(bad.is_err(), "message delivered before it is sent");
        let dup = AmpLassoSchedule::new(
            2,
            1,
            vec![AmpStep::bottom(p1), AmpStep::new(p1, vec![MsgRef::new(p1, 0)])],
            vec![AmpStep::new(p1, vec![MsgRef::new(p1, 0)])],
        );
        assert!(dup.is_err(), "same message twice at p1");
    }

    #[test]
    fn amp_faulty_count_bounded() {
        let p1 = ProcessId::new(1);
        let r = AmpLassoSchedule::new(3, 1, vec![], vec![AmpStep::bottom(p1)]);
        assert!(r.is_err(), "two processes absent from the cycle with f = 1");
    }
}
