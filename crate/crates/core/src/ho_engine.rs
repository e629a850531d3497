//! Lockstep round engine for the heard-of family (plain, silence-faulty and crash
//! variants) and its validity checker.
//!
//! Within a round the events are ordered p1..pn sends, then p1..pn receives; a
//! decision follows the receive that triggered it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CommunicationGraph;
use crate::process::{ProcSet, ProcessId};
use crate::protocol::{HoProtocol, ProcessCtx, Seeds, Value};
use crate::run::{Event, Model, MsgId, Run, ValidityReport, ViolationKind};
use crate::schedule::LassoSchedule;

/// Crash round of each process, if any. A process crashed at round `c` takes no
/// events in rounds `c, c+1, …`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashMap {
    crash_round: Vec<Option<usize>>,
}

impl CrashMap {
    pub fn none(n: usize) -> Self {
        CrashMap {
            crash_round: vec![None; n],
        }
    }

    pub fn with_crash(mut self, p: ProcessId, round: usize) -> Self {
        assert!(round >= 1, "rounds are 1-based");
        self.crash_round[p.slot()] = Some(round);
        self
    }

    pub fn crash_round(&self, p: ProcessId) -> Option<usize> {
        self.crash_round.get(p.slot()).copied().flatten()
    }

    /// Crashed at or before `round`.
    pub fn is_down(&self, p: ProcessId, round: usize) -> bool {
        self.crash_round(p).is_some_and(|c| c <= round)
    }

    pub fn crashed(&self) -> ProcSet {
        self.crash_round
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_some())
            .map(|(k, _)| ProcessId::from_slot(k))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.crash_round.iter().all(Option::is_none)
    }

    fn last_crash(&self) -> usize {
        self.crash_round.iter().flatten().copied().max().unwrap_or(0)
    }
}

/// A run together with every process's state after each round.
#[derive(Clone, Debug)]
pub struct HoExecution<S> {
    pub run: Run,
    /// `states[r][i]`: state of `p_{i+1}` after round `r` (`r = 0` is the initial
    /// state); `None` once crashed.
    pub states: Vec<Vec<Option<S>>>,
}

fn check_args(n: usize, inputs: &[Value], budget: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::Precondition(format!("{} inputs for n = {n}", inputs.len())));
    }
    if budget == 0 {
        return Err(Error::Precondition("round budget must be at least 1".into()));
    }
    Ok(())
}

/// Executes `budget` rounds of `proto` on the schedule with the given crashes and
/// coin seeds.
pub fn execute<P: HoProtocol>(
    proto: &P,
    inputs: &[Value],
    s: &LassoSchedule,
    crashes: &CrashMap,
    seeds: &Seeds,
    model: Model,
    budget: usize,
) -> Result<HoExecution<P::State>> {
    let n = s.n();
    check_args(n, inputs, budget)?;
    let mut run = Run::new(model, n, s.f(), inputs.to_vec());
    let mut coins = seeds.streams();
    let mut states: Vec<Option<P::State>> = ProcessId::all(n)
        .map(|p| {
            Some(proto.init(
                ProcessCtx { pid: p, n, f: s.f() },
                inputs[p.slot()],
            ))
        })
        .collect();
    let mut history = vec![states.clone()];
    for round in 1..=budget {
        for p in ProcessId::all(n) {
            if crashes.is_down(p, round) {
                states[p.slot()] = None;
            }
        }
        let g = s.resolve_round(round);
        let msgs: Vec<Option<P::Msg>> = states
            .iter()
            .map(|st| st.as_ref().map(|st| proto.send(st, round)))
            .collect();
        for p in ProcessId::all(n) {
            if let Some(m) = &msgs[p.slot()] {
                run.events.push(Event::Send {
                    process: p,
                    at: round,
                    id: MsgId { from: p, tag: round },
                    payload: format!("{m:?}"),
                });
            }
        }
        for p in ProcessId::all(n) {
            let Some(state) = states[p.slot()].as_mut() else { continue };
            let heard: Vec<(ProcessId, P::Msg)> = g
                .in_neighbors(p)
                .iter()
                .filter_map(|q| msgs[q.slot()].clone().map(|m| (q, m)))
                .collect();
            run.events.push(Event::Receive {
                process: p,
                at: round,
                messages: heard.iter().map(|(q, _)| MsgId { from: *q, tag: round }).collect(),
            });
            if let Some(v) = proto.receive(state, round, &heard, &mut coins[p.slot()]) {
                run.record_decision(p, round, v)?;
            }
        }
        history.push(states.clone());
    }
    run.length = budget;
    run.faulty = crashes.crashed();
    Ok(HoExecution { run, states: history })
}

/// Runs under the heard-of model proper: nobody is faulty.
pub fn run_ho<P: HoProtocol>(proto: &P, inputs: &[Value], s: &LassoSchedule, budget: usize) -> Result<Run> {
    Ok(trace_ho(proto, inputs, s, budget)?.run)
}

pub fn trace_ho<P: HoProtocol>(
    proto: &P,
    inputs: &[Value],
    s: &LassoSchedule,
    budget: usize,
) -> Result<HoExecution<P::State>> {
    let seeds = Seeds::derive(0, s.n());
    execute(proto, inputs, s, &CrashMap::none(s.n()), &seeds, Model::Ho, budget)
}

/// Same execution as [`run_ho`]; silenced processes are classified faulty.
pub fn run_sfho<P: HoProtocol>(proto: &P, inputs: &[Value], s: &LassoSchedule, budget: usize) -> Result<Run> {
    let mut run = run_ho(proto, inputs, s, budget)?;
    run.model = Model::Sfho;
    run.faulty = crate::silence::silenced_processes(s);
    Ok(run)
}

/// Runs with crashes; crashed processes are faulty.
pub fn run_cfho<P: HoProtocol>(
    proto: &P,
    inputs: &[Value],
    s: &LassoSchedule,
    crashes: &CrashMap,
    budget: usize,
) -> Result<Run> {
    Ok(trace_cfho(proto, inputs, s, crashes, budget)?.run)
}

pub fn trace_cfho<P: HoProtocol>(
    proto: &P,
    inputs: &[Value],
    s: &LassoSchedule,
    crashes: &CrashMap,
    budget: usize,
) -> Result<HoExecution<P::State>> {
    let seeds = Seeds::derive(0, s.n());
    let model = if crashes.is_empty() { Model::Ho } else { Model::Cfho };
    execute(proto, inputs, s, crashes, &seeds, model, budget)
}

/// Rewrites a crash schedule into a plain heard-of schedule: from its crash round
/// on, a crashed process is heard by nobody else and hears itself and every
/// process that never crashes.
pub fn cfho_schedule_to_ho(s: &LassoSchedule, crashes: &CrashMap) -> Result<LassoSchedule> {
    if crashes.is_empty() {
        return Ok(s.clone());
    }
    let n = s.n();
    let survivors = ProcSet::full(n).difference(crashes.crashed());
    let transform = |round: usize| -> Result<CommunicationGraph> {
        let g = s.resolve_round(round);
        let down: ProcSet = ProcessId::all(n).filter(|&p| crashes.is_down(p, round)).collect();
        let sets = ProcessId::all(n)
            .map(|p| {
                if down.contains(p) {
                    survivors.with(p)
                } else {
                    g.in_neighbors(p).difference(down)
                }
            })
            .collect();
        let out = CommunicationGraph::from_sets(sets).map_err(|e| Error::Transformation {
            round,
            reason: e.to_string(),
        })?;
        if !out.validate(n, s.f())? {
            return Err(Error::Transformation {
                round,
                reason: format!("resulting graph {:?} is outside the admissible set", out.to_lists()),
            });
        }
        Ok(out)
    };
    let stable_from = s.prefix().len().max(crashes.last_crash().saturating_sub(1));
    let prefix = (1..=stable_from).map(transform).collect::<Result<Vec<_>>>()?;
    let cycle = (stable_from + 1..=stable_from + s.cycle().len())
        .map(transform)
        .collect::<Result<Vec<_>>>()?;
    LassoSchedule::new(n, s.f(), prefix, cycle)
}

/// Weak Liveness, Integrity and No Duplicates for every round and receiving
/// process. Crashed processes are exempt once they stop taking events.
pub fn check_ho_validity(run: &Run) -> ValidityReport {
    let n = run.n;
    let mut report = ValidityReport::default();
    let rounds = run.ho_rounds();
    let sent: std::collections::HashSet<MsgId> = run
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Send { id, .. } => Some(*id),
            _ => None,
        })
        .collect();
    for rec in &rounds {
        let r = rec.round;
        for p in ProcessId::all(n) {
            let Some(received) = &rec.received[p.slot()] else {
                let exempt = run.model == Model::Cfho && run.faulty.contains(p);
                report.check(exempt, ViolationKind::WeakLiveness, Some(p), r, || {
                    format!("{p} has no receive in round {r}")
                });
                continue;
            };
            let own = received.contains(&MsgId { from: p, tag: r });
            report.check(
                own && received.len() + run.f >= n,
                ViolationKind::WeakLiveness,
                Some(p),
                r,
                || format!("{p} received {} messages in round {r} (own included: {own}), needs {}", received.len(), n.saturating_sub(run.f)),
            );
            let foreign: Vec<&MsgId> = received.iter().filter(|m| m.tag != r || !sent.contains(m)).collect();
            report.check(foreign.is_empty(), ViolationKind::Integrity, Some(p), r, || {
                format!("{p} received messages not sent in round {r}: {foreign:?}")
            });
            let mut senders: Vec<ProcessId> = received.iter().map(|m| m.from).collect();
            senders.sort();
            let before = senders.len();
            senders.dedup();
            report.check(senders.len() == before, ViolationKind::NoDuplicates, Some(p), r, || {
                format!("{p} received a duplicate in round {r}")
            });
        }
    }
    report
}
