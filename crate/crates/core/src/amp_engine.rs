//! Asynchronous engine, fairness checking on lassos, and the point-to-point
//! adapters.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::process::{ProcSet, ProcessId};
use crate::protocol::{AmpProtocol, CoinStream, ProcessCtx, Seeds, Value};
use crate::run::{Event, Model, MsgId, Run, ValidityReport, ViolationKind};
use crate::schedule::{fair_with_flush, AmpLassoSchedule, AmpStep, MsgRef};

/// Delivery status of one in-transit message at one recipient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delivery {
    Pending,
    DeliveredAt(usize),
}

/// A sent message and where it has arrived so far.
#[derive(Clone, Debug)]
pub struct InTransit<M> {
    pub id: MsgId,
    pub payload: M,
    pub status: Vec<Delivery>,
}

/// A run with the final local states and the message pool.
#[derive(Clone, Debug)]
pub struct AmpExecution<S, M> {
    pub run: Run,
    pub states: Vec<S>,
    pub pool: Vec<Vec<InTransit<M>>>,
}

pub fn run_amp<P: AmpProtocol>(proto: &P, inputs: &[Value], s: &AmpLassoSchedule, step_budget: usize) -> Result<Run> {
    Ok(execute_amp(proto, inputs, s, &Seeds::derive(0, s.n()), step_budget)?.run)
}

/// Executes the first `step_budget` actions of the unrolled schedule.
pub fn execute_amp<P: AmpProtocol>(
    proto: &P,
    inputs: &[Value],
    s: &AmpLassoSchedule,
    seeds: &Seeds,
    step_budget: usize,
) -> Result<AmpExecution<P::State, P::Msg>> {
    let n = s.n();
    if inputs.len() != n {
        return Err(Error::Precondition(format!("{} inputs for n = {n}", inputs.len())));
    }
    if step_budget == 0 {
        return Err(Error::Precondition("step budget must be at least 1".into()));
    }
    let mut run = Run::new(Model::Amp, n, s.f(), inputs.to_vec());
    let mut coins = seeds.streams();
    let mut states: Vec<P::State> = ProcessId::all(n)
        .map(|p| proto.init(ProcessCtx { pid: p, n, f: s.f() }, inputs[p.slot()]))
        .collect();
    let mut pool: Vec<Vec<InTransit<P::Msg>>> = vec![Vec::new(); n];
    for k in 0..step_budget {
        let AmpStep { process: p, deliver } = s.action(k);
        let mut batch = Vec::with_capacity(deliver.len());
        for m in &deliver {
            let msg = pool[m.from.slot()]
                .get_mut(m.seq as usize)
                .filter(|_| m.seq >= 0)
                .ok_or_else(|| Error::InvalidSchedule(format!("step {k}: ({}, {}) was never sent", m.from, m.seq)))?;
            if msg.status[p.slot()] != Delivery::Pending {
                return Err(Error::InvalidSchedule(format!("step {k}: ({}, {}) delivered twice to {p}", m.from, m.seq)));
            }
            msg.status[p.slot()] = Delivery::DeliveredAt(k);
            batch.push((m.from, msg.payload.clone()));
        }
        run.events.push(Event::Receive {
            process: p,
            at: k,
            messages: deliver.iter().map(|m| MsgId { from: m.from, tag: m.seq as usize }).collect(),
        });
        let (out, decision) = proto.step(&mut states[p.slot()], &batch, &mut coins[p.slot()]);
        if let Some(v) = decision {
            run.record_decision(p, k, v)?;
        }
        let id = MsgId {
            from: p,
            tag: pool[p.slot()].len(),
        };
        run.events.push(Event::Send {
            process: p,
            at: k,
            id,
            payload: format!("{out:?}"),
        });
        pool[p.slot()].push(InTransit {
            id,
            payload: out,
            status: vec![Delivery::Pending; n],
        });
    }
    run.length = step_budget;
    run.faulty = s.faulty();
    Ok(AmpExecution { run, states, pool })
}

/// Which liveness conditions [`check_amp_fairness_with`] enforces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FairnessOptions {
    /// Point-to-point variant: the last message of a faulty sender must also reach
    /// every non-faulty process.
    pub full_liveness: bool,
}

pub fn check_amp_fairness(s: &AmpLassoSchedule) -> ValidityReport {
    check_amp_fairness_with(s, FairnessOptions::default())
}

/// Checks the four delivery conditions on the lasso.
///
/// The cycle is periodic with references shifting by the sender's per-iteration
/// step count, so it suffices to follow messages sent in the prefix and in the
/// first cycle iteration over an unrolling that covers the largest delivery lag.
pub fn check_amp_fairness_with(s: &AmpLassoSchedule, opts: FairnessOptions) -> ValidityReport {
    let n = s.n();
    let faulty = s.faulty();
    let mut report = ValidityReport::default();
    let iterations = fairness_iterations(s);
    let actions = s.unroll_iterations(iterations);

    let mut sent = vec![0i64; n];
    let mut delivered = vec![BTreeSet::new(); n];
    for (k, a) in actions.iter().enumerate() {
        for m in &a.deliver {
            report.check(m.seq >= 0 && m.seq < sent[m.from.slot()], ViolationKind::Integrity, Some(a.process), k, || {
                format!("{} receives unsent ({}, {})", a.process, m.from, m.seq)
            });
            let fresh = delivered[a.process.slot()].insert(*m);
            report.check(fresh, ViolationKind::NoDuplicates, Some(a.process), k, || {
                format!("{} receives ({}, {}) twice", a.process, m.from, m.seq)
            });
        }
        sent[a.process.slot()] += 1;
    }

    for j in ProcessId::all(n) {
        let horizon = s.prefix_steps(j) + s.cycle_steps(j);
        let last = s.prefix_steps(j) - 1;
        for seq in 0..horizon {
            let m = MsgRef::new(j, seq);
            for i in ProcessId::all(n).filter(|i| !faulty.contains(*i)) {
                if delivered[i.slot()].contains(&m) {
                    report.pass();
                    continue;
                }
                let detail = format!("message ({j}, {seq}) never reaches {i}");
                if !faulty.contains(j) {
                    report.fail(ViolationKind::NonFaultyLiveness, Some(i), seq as usize, detail);
                } else if seq != last {
                    report.fail(ViolationKind::FaultyQuasiLiveness, Some(i), seq as usize, detail);
                } else if opts.full_liveness {
                    report.fail(ViolationKind::FullLiveness, Some(i), seq as usize, detail);
                } else {
                    report.pass();
                }
            }
        }
    }
    report
}

/// Cycle iterations after which a message sent in the first iteration has had
/// every chance to be delivered.
fn fairness_iterations(s: &AmpLassoSchedule) -> usize {
    let mut lag = 1i64;
    for a in s.cycle() {
        for m in &a.deliver {
            let c = s.cycle_steps(m.from);
            if c > 0 {
                let newest = s.prefix_steps(m.from) + c - 1;
                lag = lag.max((newest - m.seq) / c + 1);
            }
        }
    }
    (lag as usize + 2).min(64)
}

/// A fair lasso with a random prefix: at most `f` random processes take a few
/// prefix steps and then crash, every live process takes random steps delivering
/// random subsets of pending messages, then all pending messages are flushed and a
/// round-robin cycle in random order follows.
pub fn random_fair_amp<R: Rng + ?Sized>(n: usize, f: usize, prefix_len: usize, rng: &mut R) -> AmpLassoSchedule {
    let mut ids: Vec<ProcessId> = ProcessId::all(n).collect();
    ids.shuffle(rng);
    let crashes = rng.gen_range(0..=f);
    let faulty: ProcSet = ids[..crashes].iter().copied().collect();
    let mut sent = vec![0i64; n];
    let mut delivered = vec![BTreeSet::new(); n];
    let mut prefix = Vec::new();
    for _ in 0..prefix_len {
        let p = ProcessId::new(rng.gen_range(1..=n));
        let mut deliver = Vec::new();
        for j in ProcessId::all(n) {
            for seq in 0..sent[j.slot()] {
                let m = MsgRef::new(j, seq);
                if !delivered[p.slot()].contains(&m) && rng.gen_bool(0.5) {
                    deliver.push(m);
                }
            }
        }
        for m in &deliver {
            delivered[p.slot()].insert(*m);
        }
        prefix.push(AmpStep::new(p, deliver));
        sent[p.slot()] += 1;
    }
    let mut order: Vec<ProcessId> = ProcessId::all(n).filter(|p| !faulty.contains(*p)).collect();
    order.shuffle(rng);
    let withheld: Vec<ProcessId> = faulty.iter().filter(|_| rng.gen_bool(0.5)).collect();
    fair_with_flush(n, f, prefix, &order, &withheld).expect("generated lasso is valid")
}

/// A protocol written against point-to-point primitives: every step receives a
/// batch and may send any number of messages to individual processes.
pub trait FlpProtocol {
    type State: Clone + std::fmt::Debug;
    type Msg: Clone + std::fmt::Debug;

    fn decision_fn_id(&self) -> String;

    fn init(&self, ctx: ProcessCtx, input: Value) -> Self::State;

    fn step(
        &self,
        state: &mut Self::State,
        received: &[(ProcessId, Self::Msg)],
        coins: &mut CoinStream,
    ) -> (Vec<(ProcessId, Self::Msg)>, Option<Value>);
}

/// Point-to-point sends become one broadcast of tagged pairs `⟨m, j⟩`; a receiver
/// keeps only the pairs tagged with its own id.
#[derive(Clone, Copy, Debug)]
pub struct FlpToAmp<P>(pub P);

#[derive(Clone, Debug)]
pub struct FlpToAmpState<S> {
    pub pid: ProcessId,
    pub inner: S,
}

impl<P: FlpProtocol> AmpProtocol for FlpToAmp<P> {
    type State = FlpToAmpState<P::State>;
    type Msg = Vec<(P::Msg, ProcessId)>;

    fn decision_fn_id(&self) -> String {
        self.0.decision_fn_id()
    }

    fn init(&self, ctx: ProcessCtx, input: Value) -> Self::State {
        FlpToAmpState {
            pid: ctx.pid,
            inner: self.0.init(ctx, input),
        }
    }

    fn step(&self, state: &mut Self::State, received: &[(ProcessId, Self::Msg)], coins: &mut CoinStream) -> (Self::Msg, Option<Value>) {
        let mine: Vec<(ProcessId, P::Msg)> = received
            .iter()
            .flat_map(|(from, tagged)| {
                tagged
                    .iter()
                    .filter(|(_, to)| *to == state.pid)
                    .map(move |(m, _)| (*from, m.clone()))
            })
            .collect();
        let (out, d) = self.0.step(&mut state.inner, &mine, coins);
        (out.into_iter().map(|(to, m)| (m, to)).collect(), d)
    }
}

/// A broadcast becomes `n` point-to-point sends; every point-to-point receive is
/// surfaced as a broadcast receive.
#[derive(Clone, Copy, Debug)]
pub struct AmpToFlp<P>(pub P);

#[derive(Clone, Debug)]
pub struct AmpToFlpState<S> {
    pub n: usize,
    pub inner: S,
}

impl<P: AmpProtocol> FlpProtocol for AmpToFlp<P> {
    type State = AmpToFlpState<P::State>;
    type Msg = P::Msg;

    fn decision_fn_id(&self) -> String {
        self.0.decision_fn_id()
    }

    fn init(&self, ctx: ProcessCtx, input: Value) -> Self::State {
        AmpToFlpState {
            n: ctx.n,
            inner: self.0.init(ctx, input),
        }
    }

    fn step(&self, state: &mut Self::State, received: &[(ProcessId, P::Msg)], coins: &mut CoinStream) -> (Vec<(ProcessId, P::Msg)>, Option<Value>) {
        let (m, d) = self.0.step(&mut state.inner, received, coins);
        (ProcessId::all(state.n).map(|j| (j, m.clone())).collect(), d)
    }
}

/// Point-to-point engine on the asynchronous schedule format: delivering
/// `(j, seq)` at `i` hands over what `j` addressed to `i` in its `seq`-th step, if
/// anything.
pub fn run_flp<P: FlpProtocol>(proto: &P, inputs: &[Value], s: &AmpLassoSchedule, step_budget: usize) -> Result<Run> {
    let n = s.n();
    if inputs.len() != n {
        return Err(Error::Precondition(format!("{} inputs for n = {n}", inputs.len())));
    }
    let mut run = Run::new(Model::Flp, n, s.f(), inputs.to_vec());
    let mut coins = Seeds::derive(0, n).streams();
    let mut states: Vec<P::State> = ProcessId::all(n)
        .map(|p| proto.init(ProcessCtx { pid: p, n, f: s.f() }, inputs[p.slot()]))
        .collect();
    // outbox[j][seq][i]
    let mut outbox: Vec<Vec<Vec<Option<P::Msg>>>> = vec![Vec::new(); n];
    for k in 0..step_budget {
        let AmpStep { process: p, deliver } = s.action(k);
        let mut batch = Vec::new();
        let mut ids = Vec::new();
        for m in &deliver {
            let slot = outbox[m.from.slot()]
                .get_mut(m.seq as usize)
                .ok_or_else(|| Error::InvalidSchedule(format!("step {k}: ({}, {}) was never sent", m.from, m.seq)))?;
            if let Some(msg) = slot[p.slot()].take() {
                batch.push((m.from, msg));
                ids.push(MsgId { from: m.from, tag: m.seq as usize });
            }
        }
        run.events.push(Event::Receive { process: p, at: k, messages: ids });
        let (out, d) = proto.step(&mut states[p.slot()], &batch, &mut coins[p.slot()]);
        if let Some(v) = d {
            run.record_decision(p, k, v)?;
        }
        let mut row = vec![None; n];
        let seq = outbox[p.slot()].len();
        for (to, m) in out {
            run.events.push(Event::Send {
                process: p,
                at: k,
                id: MsgId { from: p, tag: seq },
                payload: format!("{to}:{m:?}"),
            });
            row[to.slot()] = Some(m);
        }
        outbox[p.slot()].push(row);
    }
    run.length = step_budget;
    run.faulty = s.faulty();
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::EchoAmp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(i: usize) -> ProcessId {
        ProcessId::new(i)
    }

    #[test]
    fn all_deliver_is_fair_and_decides() {
        let s = AmpLassoSchedule::all_deliver(3, 1);
        assert!(check_amp_fairness(&s).is_ok());
        assert!(check_amp_fairness_with(&s, FairnessOptions { full_liveness: true }).is_ok());
        let run = run_amp(&EchoAmp, &[4, 2, 7], &s, 30).unwrap();
        assert!(run.faulty.is_empty());
        assert_eq!(run.outputs, vec![Some(2); 3]);
    }

    #[test]
    fn prefix_only_process_is_faulty() {
        let prefix = vec![AmpStep::bottom(p(3))];
        let s = fair_with_flush(3, 1, prefix, &[p(1), p(2)], &[]).unwrap();
        assert_eq!(s.faulty(), ProcSet::singleton(p(3)));
        let run = run_amp(&EchoAmp, &[4, 2, 7], &s, 20).unwrap();
        assert!(run.faulty.contains(p(3)));
        assert!(check_amp_fairness(&s).is_ok());
    }

    #[test]
    fn pending_forever_is_reported() {
        // p1 and p2 alternate; p2 never receives anything from p1
        let s = AmpLassoSchedule::new(
            2,
            0,
            vec![],
            vec![AmpStep::bottom(p(1)), AmpStep::new(p(2), vec![MsgRef::new(p(2), -1)])],
        );
        // (p2, -1) is unsent in the first iteration
        assert!(s.is_err());
        let s = AmpLassoSchedule::new(
            2,
            0,
            vec![AmpStep::bottom(p(1)), AmpStep::bottom(p(2))],
            vec![
                AmpStep::new(p(1), vec![MsgRef::new(p(1), 0), MsgRef::new(p(2), 0)]),
                AmpStep::new(p(2), vec![MsgRef::new(p(2), 0)]),
            ],
        )
        .unwrap();
        let report = check_amp_fairness(&s);
        assert!(report.has(ViolationKind::NonFaultyLiveness));
        assert!(report
            .violations
            .iter()
            .all(|v| v.kind == ViolationKind::NonFaultyLiveness && v.process == Some(p(2))));
    }

    #[test]
    fn faulty_last_message_is_exempt() {
        // p3 sends twice and crashes; its last send reaches nobody
        let prefix = vec![AmpStep::bottom(p(3)), AmpStep::bottom(p(3))];
        let s = fair_with_flush(3, 1, prefix.clone(), &[p(1), p(2)], &[p(3)]).unwrap();
        assert!(check_amp_fairness(&s).is_ok());
        let strict = check_amp_fairness_with(&s, FairnessOptions { full_liveness: true });
        assert!(strict.has(ViolationKind::FullLiveness));

        // withholding the second-to-last send instead is a violation
        let mut bad = s.prefix().to_vec();
        for a in bad.iter_mut() {
            a.deliver.retain(|m| !(m.from == p(3) && m.seq == 0) || a.process != p(1));
        }
        let b = AmpLassoSchedule::new(3, 1, bad, s.cycle().to_vec()).unwrap();
        let report = check_amp_fairness(&b);
        assert!(report.has(ViolationKind::FaultyQuasiLiveness));
    }

    #[test]
    fn random_fair_lassos_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = random_fair_amp(4, 1, 8, &mut rng);
            assert!(check_amp_fairness(&s).is_ok(), "{}", s.to_json());
            assert!(s.faulty().len() <= 1);
        }
    }

    #[derive(Clone, Copy, Debug)]
    struct Ping;

    impl FlpProtocol for Ping {
        type State = bool;
        type Msg = u64;
        fn decision_fn_id(&self) -> String {
            "ping".into()
        }
        fn init(&self, ctx: ProcessCtx, _input: Value) -> bool {
            ctx.pid.index() == 1
        }
        fn step(&self, first: &mut bool, received: &[(ProcessId, u64)], _: &mut CoinStream) -> (Vec<(ProcessId, u64)>, Option<Value>) {
            let out = if std::mem::take(first) { vec![(ProcessId::new(2), 7)] } else { vec![] };
            (out, received.first().map(|(_, m)| *m))
        }
    }

    #[test]
    fn tagged_broadcast_reaches_only_addressee() {
        let s = AmpLassoSchedule::all_deliver(3, 1);
        let run = run_amp(&FlpToAmp(Ping), &[0, 0, 0], &s, 12).unwrap();
        assert_eq!(run.outputs, vec![None, Some(7), None]);
    }

    #[test]
    fn broadcast_becomes_n_sends() {
        let s = AmpLassoSchedule::all_deliver(3, 1);
        let run = run_flp(&AmpToFlp(EchoAmp), &[1, 2, 3], &s, 1).unwrap();
        let sends = run.events.iter().filter(|e| matches!(e, Event::Send { .. })).count();
        assert_eq!(sends, 3);
    }

    #[test]
    fn adapters_round_trip() {
        let s = AmpLassoSchedule::all_deliver(3, 1);
        let direct = run_amp(&EchoAmp, &[5, 3, 8], &s, 30).unwrap();
        let twice = run_amp(&FlpToAmp(AmpToFlp(EchoAmp)), &[5, 3, 8], &s, 30).unwrap();
        let flp = run_flp(&AmpToFlp(EchoAmp), &[5, 3, 8], &s, 30).unwrap();
        assert_eq!(direct.outputs, twice.outputs);
        assert_eq!(direct.outputs, flp.outputs);
    }
}
