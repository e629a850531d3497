//! Simulations between the models: round-based protocols hosted in the
//! asynchronous model, asynchronous protocols hosted in rounds, and the two lifts
//! from the silenced-faulty model back to plain heard-of rounds.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use crate::amp_engine::execute_amp;
use crate::error::{Error, Result};
use crate::graph::{enumerate_graphs, CommunicationGraph};
use crate::ho_engine::{execute, CrashMap, HoExecution};
use crate::process::{ProcSet, ProcessId};
use crate::protocol::{split_seed, AmpProtocol, CoinStream, HoProtocol, ProcessCtx, Seeds, Value};
use crate::run::{Event, Model, MsgId, Run, ValidityReport, ViolationKind};
use crate::schedule::{AmpLassoSchedule, LassoSchedule};
use crate::silence::silenced_processes;
use crate::tasks::Task;
use crate::view::{first_decision, View, ViewDecision};

// ---------------------------------------------------------------------------
// Rounds on top of asynchronous steps

/// Hosts a round-based protocol as an asynchronous one: each process waits for
/// `n - f` messages tagged with its current round before completing it.
#[derive(Clone, Debug)]
pub struct Alg1Host<P> {
    pub inner: P,
    /// Rounds to simulate before stopping.
    pub rounds: usize,
}

#[derive(Clone, Debug)]
pub struct Alg1MachineState<S, M> {
    pub ctx: ProcessCtx,
    /// Last round sent; `0` before the first send.
    pub round: usize,
    /// Messages buffered per round, keyed by sender.
    pub received: BTreeMap<usize, BTreeMap<ProcessId, M>>,
    pub inner: S,
    /// Heard-of set of every completed round.
    pub completed: Vec<ProcSet>,
    /// Round messages sent so far, for the extracted run.
    pub sent: Vec<M>,
    pub decision: Option<(usize, Value)>,
}

impl<S, M: Clone> Alg1MachineState<S, M> {
    fn ho_send<P: HoProtocol<State = S, Msg = M>>(&mut self, p: &P) -> Option<(usize, M)> {
        self.round += 1;
        let m = p.send(&self.inner, self.round);
        self.received.entry(self.round).or_default().insert(self.ctx.pid, m.clone());
        self.sent.push(m.clone());
        Some((self.round, m))
    }
}

impl<P: HoProtocol> AmpProtocol for Alg1Host<P> {
    type State = Alg1MachineState<P::State, P::Msg>;
    /// `None` is a heartbeat step with nothing new to send.
    type Msg = Option<(usize, P::Msg)>;

    fn decision_fn_id(&self) -> String {
        format!("rounds({})", self.inner.decision_fn_id())
    }

    fn init(&self, ctx: ProcessCtx, input: Value) -> Self::State {
        Alg1MachineState {
            ctx,
            round: 0,
            received: BTreeMap::new(),
            inner: self.inner.init(ctx, input),
            completed: Vec::new(),
            sent: Vec::new(),
            decision: None,
        }
    }

    fn step(&self, st: &mut Self::State, batch: &[(ProcessId, Self::Msg)], coins: &mut CoinStream) -> (Self::Msg, Option<Value>) {
        for (from, m) in batch {
            if let Some((r, m)) = m {
                st.received.entry(*r).or_default().entry(*from).or_insert_with(|| m.clone());
            }
        }
        if st.round == 0 {
            return (st.ho_send(&self.inner), None);
        }
        let ready = st.completed.len() < st.round
            && st.received.get(&st.round).is_some_and(|b| b.len() >= st.ctx.n - st.ctx.f);
        if !ready {
            return (None, None);
        }
        let heard: Vec<(ProcessId, P::Msg)> = st.received.remove(&st.round).unwrap().into_iter().collect();
        st.completed.push(heard.iter().map(|(q, _)| *q).collect());
        let d = self.inner.receive(&mut st.inner, st.round, &heard, coins);
        if let Some(v) = d {
            st.decision = Some((st.round, v));
        }
        let out = if st.round < self.rounds { st.ho_send(&self.inner) } else { None };
        (out, d)
    }
}

/// Budgets for a simulation: simulated rounds and host steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimBudgets {
    pub rounds: usize,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct Alg1Outcome<S, M> {
    pub amp_run: Run,
    /// The simulated round run, cut at the last round every non-faulty host completed.
    pub ho_run: Run,
    pub hosts: Vec<Alg1MachineState<S, M>>,
    /// Non-faulty hosts whose simulated process is still undecided.
    pub undecided: ProcSet,
}

/// Runs `proto` in rounds over the asynchronous schedule `s`.
pub fn simulate_ho_in_amp<P: HoProtocol + Clone>(
    proto: &P,
    inputs: &[Value],
    s: &AmpLassoSchedule,
    seeds: &Seeds,
    budgets: SimBudgets,
) -> Result<Alg1Outcome<P::State, P::Msg>> {
    let host = Alg1Host {
        inner: proto.clone(),
        rounds: budgets.rounds,
    };
    let exec = execute_amp(&host, inputs, s, seeds, budgets.steps)?;
    let n = s.n();
    let faulty = s.faulty();
    let hosts = exec.states;
    let length = ProcessId::all(n)
        .filter(|p| !faulty.contains(*p))
        .map(|p| hosts[p.slot()].completed.len())
        .min()
        .unwrap_or(0);
    let mut ho_run = Run::new(Model::Cfho, n, s.f(), inputs.to_vec());
    ho_run.faulty = faulty;
    for r in 1..=length {
        for p in ProcessId::all(n) {
            if let Some(m) = hosts[p.slot()].sent.get(r - 1) {
                ho_run.events.push(Event::Send {
                    process: p,
                    at: r,
                    id: MsgId { from: p, tag: r },
                    payload: format!("{m:?}"),
                });
            }
        }
        for p in ProcessId::all(n) {
            let h = &hosts[p.slot()];
            if let Some(set) = h.completed.get(r - 1) {
                ho_run.events.push(Event::Receive {
                    process: p,
                    at: r,
                    messages: set.iter().map(|q| MsgId { from: q, tag: r }).collect(),
                });
            }
            if let Some((dr, v)) = h.decision {
                if dr == r {
                    ho_run.record_decision(p, r, v)?;
                }
            }
        }
    }
    ho_run.length = length;
    let undecided = ho_run.undecided().difference(faulty);
    Ok(Alg1Outcome {
        amp_run: exec.run,
        ho_run,
        hosts,
        undecided,
    })
}

/// Validity of a (crash-faulty) round run: every receive comes from that round's
/// sends, has no repeated sender, includes the receiver and at least `n - f`
/// messages; non-crashed processes receive in every round.
pub fn check_cfho_validity(run: &Run) -> ValidityReport {
    let mut report = ValidityReport::default();
    let need = run.n - run.f;
    let mut sent: BTreeSet<(ProcessId, usize)> = BTreeSet::new();
    let mut got: BTreeSet<(ProcessId, usize)> = BTreeSet::new();
    for e in &run.events {
        match e {
            Event::Send { process, at, .. } => {
                sent.insert((*process, *at));
            }
            Event::Receive { process, at, messages } => {
                let p = *process;
                report.check(got.insert((p, *at)), ViolationKind::NoDuplicates, Some(p), *at, || {
                    format!("{p} receives twice in round {at}")
                });
                let froms: BTreeSet<ProcessId> = messages.iter().map(|m| m.from).collect();
                report.check(froms.len() == messages.len(), ViolationKind::NoDuplicates, Some(p), *at, || {
                    format!("{p} receives a repeated sender in round {at}")
                });
                for m in messages {
                    report.check(m.tag == *at && sent.contains(&(m.from, m.tag)), ViolationKind::Integrity, Some(p), *at, || {
                        format!("{p} receives ({}, {}) in round {at}, never sent", m.from, m.tag)
                    });
                }
                report.check(froms.contains(&p) && froms.len() >= need, ViolationKind::WeakLiveness, Some(p), *at, || {
                    format!("{p} hears {} processes in round {at}", froms.len())
                });
            }
            Event::Decide { .. } => {}
        }
    }
    for p in run.non_faulty().iter() {
        for r in 1..=run.length {
            report.check(got.contains(&(p, r)), ViolationKind::NonFaultyLiveness, Some(p), r, || {
                format!("non-faulty {p} has no receive in round {r}")
            });
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Asynchronous steps on top of rounds

/// `⟨s, t⟩`: the `t`-th message sent by `s`.
pub type Stamp = (ProcessId, u64);

/// Everything a host has seen: tagged messages and acknowledgements
/// `ack(j, ⟨s, m, t⟩)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Seen<M> {
    pub msgs: BTreeMap<Stamp, M>,
    pub acks: BTreeSet<(ProcessId, Stamp)>,
}

impl<M> Default for Seen<M> {
    fn default() -> Self {
        Seen {
            msgs: BTreeMap::new(),
            acks: BTreeSet::new(),
        }
    }
}

/// One simulated asynchronous step of a host.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alg2Step {
    /// Round in which the step happened; `0` for the initial step.
    pub round: usize,
    /// Messages released to it, `⊥` if empty.
    pub delivered: Vec<Stamp>,
    pub sent: Stamp,
}

#[derive(Clone, Debug)]
pub struct Alg2MachineState<S, M> {
    pub ctx: ProcessCtx,
    pub inner: S,
    pub seen: Arc<Seen<M>>,
    /// Message stamps seen at the last release.
    pub old: BTreeSet<Stamp>,
    pub latest: Option<Stamp>,
    /// Next timestamp.
    pub t: u64,
    /// Round in which `latest` was sent.
    pub latest_since: usize,
    pub steps: Vec<Alg2Step>,
    /// Decision of the initial step, reported in round 1.
    pub early: Option<Value>,
}

impl<S, M: Clone> Alg2MachineState<S, M> {
    fn amp_send(&mut self, m: M, round: usize) -> Stamp {
        let stamp = (self.ctx.pid, self.t);
        Arc::make_mut(&mut self.seen).msgs.insert(stamp, m);
        self.latest = Some(stamp);
        self.latest_since = round;
        self.t += 1;
        stamp
    }
}

/// Hosts an asynchronous protocol in rounds: every round each host broadcasts all
/// it has seen, and its process takes a step once `f` other hosts acknowledge its
/// latest message.
#[derive(Clone, Debug)]
pub struct Alg2Host<P>(pub P);

impl<P: AmpProtocol> HoProtocol for Alg2Host<P>
where
    P::Msg: PartialEq,
{
    type State = Alg2MachineState<P::State, P::Msg>;
    type Msg = Arc<Seen<P::Msg>>;

    fn decision_fn_id(&self) -> String {
        format!("echoed({})", self.0.decision_fn_id())
    }

    /// The first step receives `⊥`; it uses no coins.
    fn init(&self, ctx: ProcessCtx, input: Value) -> Self::State {
        let mut inner = self.0.init(ctx, input);
        let mut coins = CoinStream::new(split_seed(u64::MAX, ctx.pid.index() as u64));
        let (m, early) = self.0.step(&mut inner, &[], &mut coins);
        let mut st = Alg2MachineState {
            ctx,
            inner,
            seen: Arc::new(Seen::default()),
            old: BTreeSet::new(),
            latest: None,
            t: 0,
            latest_since: 0,
            steps: Vec::new(),
            early,
        };
        let sent = st.amp_send(m, 0);
        st.steps.push(Alg2Step {
            round: 0,
            delivered: Vec::new(),
            sent,
        });
        st
    }

    fn send(&self, st: &Self::State, _round: usize) -> Self::Msg {
        st.seen.clone()
    }

    fn receive(&self, st: &mut Self::State, round: usize, heard: &[(ProcessId, Self::Msg)], coins: &mut CoinStream) -> Option<Value> {
        let me = st.ctx.pid;
        let early = st.early.take();
        let mut ackers = ProcSet::EMPTY;
        {
            let seen = Arc::make_mut(&mut st.seen);
            for (_, theirs) in heard {
                for (stamp, m) in &theirs.msgs {
                    if !seen.msgs.contains_key(stamp) {
                        seen.msgs.insert(*stamp, m.clone());
                        seen.acks.insert((me, *stamp));
                    }
                }
                for a in &theirs.acks {
                    seen.acks.insert(*a);
                    if Some(a.1) == st.latest && a.0 != me {
                        ackers.insert(a.0);
                    }
                }
            }
        }
        if st.latest.is_none() || ackers.len() < st.ctx.f {
            return early;
        }
        let pending: Vec<Stamp> = st.seen.msgs.keys().filter(|k| !st.old.contains(k)).copied().collect();
        let batch: Vec<(ProcessId, P::Msg)> = pending.iter().map(|k| (k.0, st.seen.msgs[k].clone())).collect();
        st.old = st.seen.msgs.keys().copied().collect();
        st.latest = None;
        let (m, d) = self.0.step(&mut st.inner, &batch, coins);
        let sent = st.amp_send(m, round);
        st.steps.push(Alg2Step {
            round,
            delivered: pending,
            sent,
        });
        early.or(d)
    }
}

#[derive(Clone, Debug)]
pub struct Alg2Outcome<S, M> {
    /// The host run, with silenced hosts faulty.
    pub sfho_run: Run,
    pub amp_run: Run,
    pub hosts: HoExecution<Alg2MachineState<S, M>>,
    /// Hosts whose latest message went unacknowledged for the final `window` rounds.
    pub blocked: ProcSet,
    pub window: usize,
}

/// Rounds without release after which a host counts as blocked forever. The
/// acknowledgements for a non-silenced host need two passes over the reach
/// fixpoint, which stabilises within the phase range plus `n` cycles.
pub fn blocking_window(s: &LassoSchedule) -> usize {
    2 * (s.phase_range() + s.n() * s.cycle().len()) + 2
}

/// Runs `proto` as simulated asynchronous processes hosted on round schedule `s`
/// for `budgets.rounds` rounds (`budgets.steps` is unused here).
pub fn simulate_amp_in_sfho<P: AmpProtocol + Clone>(
    proto: &P,
    inputs: &[Value],
    s: &LassoSchedule,
    seeds: &Seeds,
    budgets: SimBudgets,
) -> Result<Alg2Outcome<P::State, P::Msg>>
where
    P::Msg: PartialEq,
{
    let n = s.n();
    if n <= 2 * s.f() {
        return Err(Error::Precondition(format!("n = {n} must exceed 2f = {}", 2 * s.f())));
    }
    let window = blocking_window(s);
    if budgets.rounds <= window {
        return Err(Error::Precondition(format!(
            "round budget {} must exceed the blocking window {window}",
            budgets.rounds
        )));
    }
    let host = Alg2Host(proto.clone());
    let exec = execute(&host, inputs, s, &CrashMap::none(n), seeds, Model::Sfho, budgets.rounds)?;
    let mut sfho_run = exec.run.clone();
    sfho_run.faulty = silenced_processes(s);
    let last = exec.states.last().unwrap();
    let hosts: Vec<&Alg2MachineState<P::State, P::Msg>> = last.iter().map(|h| h.as_ref().unwrap()).collect();
    let blocked: ProcSet = ProcessId::all(n)
        .filter(|p| {
            let h = hosts[p.slot()];
            h.latest.is_some() && budgets.rounds - h.latest_since >= window
        })
        .collect();

    let mut amp_run = Run::new(Model::Amp, n, s.f(), inputs.to_vec());
    amp_run.faulty = blocked;
    let mut order: Vec<(usize, ProcessId, &Alg2Step)> = hosts
        .iter()
        .enumerate()
        .flat_map(|(slot, h)| h.steps.iter().map(move |st| (st.round, ProcessId::from_slot(slot), st)))
        .collect();
    order.sort_by_key(|(r, p, st)| (*r, *p, st.sent.1));
    let decisions: BTreeMap<(ProcessId, usize), Value> = exec
        .run
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Decide { process, at, value } => Some(((*process, *at), *value)),
            _ => None,
        })
        .collect();
    for (k, (round, p, st)) in order.into_iter().enumerate() {
        amp_run.events.push(Event::Receive {
            process: p,
            at: k,
            messages: st.delivered.iter().map(|(s, t)| MsgId { from: *s, tag: *t as usize }).collect(),
        });
        if let Some(v) = decisions.get(&(p, round)) {
            amp_run.record_decision(p, k, *v)?;
        }
        amp_run.events.push(Event::Send {
            process: p,
            at: k,
            id: MsgId { from: p, tag: st.sent.1 as usize },
            payload: String::new(),
        });
        amp_run.length = k + 1;
    }
    Ok(Alg2Outcome {
        sfho_run,
        amp_run,
        hosts: exec,
        blocked,
        window,
    })
}

/// Integrity and No Duplicates of an asynchronous run: each message is received
/// after it was sent, at most once per receiver.
pub fn check_amp_safety(run: &Run) -> ValidityReport {
    let mut report = ValidityReport::default();
    let mut sent: BTreeSet<MsgId> = BTreeSet::new();
    let mut got: BTreeSet<(ProcessId, MsgId)> = BTreeSet::new();
    for e in &run.events {
        match e {
            Event::Send { id, .. } => {
                sent.insert(*id);
            }
            Event::Receive { process, at, messages } => {
                for m in messages {
                    report.check(sent.contains(m), ViolationKind::Integrity, Some(*process), *at, || {
                        format!("{process} receives ({}, {}) before it is sent", m.from, m.tag)
                    });
                    report.check(got.insert((*process, *m)), ViolationKind::NoDuplicates, Some(*process), *at, || {
                        format!("{process} receives ({}, {}) twice", m.from, m.tag)
                    });
                }
            }
            Event::Decide { .. } => {}
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Lifts from the silenced-faulty model to plain rounds

/// Colorless lift: decide as the wrapped rule does, or else adopt the decision of
/// any heard process that has already decided (the smallest, if several).
///
/// Other processes' decisions are recomputed from their views, so the lifted
/// protocol stays full-information.
#[derive(Clone, Debug, Default)]
pub struct LiftedColorless<D>(pub D);

impl<D: ViewDecision> LiftedColorless<D> {
    /// First round at which the owner of `w` decides under the lift.
    pub fn decision_of(&self, n: usize, f: usize, w: &View) -> Option<(Value, usize)> {
        first_decision(self, ProcessCtx { pid: w.pid(), n, f }, w)
    }
}

impl<D: ViewDecision> ViewDecision for LiftedColorless<D> {
    fn id(&self) -> String {
        format!("colorless({})", self.0.id())
    }

    fn coins_per_round(&self) -> usize {
        self.0.coins_per_round()
    }

    fn decide(&self, ctx: ProcessCtx, view: &View) -> Option<Value> {
        self.0.decide(ctx, view).or_else(|| {
            view.heard()
                .iter()
                .filter(|(j, _)| *j != ctx.pid)
                .filter_map(|(_, w)| self.decision_of(ctx.n, ctx.f, w).map(|(o, _)| o))
                .min()
        })
    }
}

pub fn lift_colorless<D: ViewDecision>(d: D) -> crate::view::FullInfo<LiftedColorless<D>> {
    crate::view::FullInfo(LiftedColorless(d))
}

/// Which line of the colored lift produced a decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecisionRule {
    /// The wrapped rule decided on this view.
    Normal,
    /// Every other process was seen decided; the value comes from a reconstructed run.
    Alternate,
}

/// Colored lift for one fault.
///
/// A process decides as the wrapped rule does. If instead its view certifies that
/// every other process has decided, it rebuilds a run consistent with everything
/// it knows: the first completion in enumeration order of its latest knowledge of
/// each process up to the current round, continued with loss-free rounds until it
/// decides there, and whose output vector the task accepts. It decides its own
/// output in that run.
#[derive(Clone, Debug)]
pub struct LiftedColoredF1<D> {
    pub inner: D,
    pub task: Task,
    /// Loss-free rounds tried after the reconstructed prefix.
    pub extension: usize,
    graphs: Arc<Vec<CommunicationGraph>>,
    errors: Arc<Mutex<Vec<String>>>,
}

impl<D: ViewDecision> LiftedColoredF1<D> {
    pub fn new(inner: D, task: Task) -> Result<Self> {
        let n = task.n;
        if n <= 2 {
            return Err(Error::Precondition(format!("the colored lift needs n > 2, got {n}")));
        }
        Ok(LiftedColoredF1 {
            inner,
            extension: 3 * n + 3,
            graphs: Arc::new(enumerate_graphs(n, 1)?),
            task,
            errors: Arc::new(Mutex::new(Vec::new())),
        })
    }

    /// Reconstruction failures met so far; each one means a precondition was violated.
    pub fn errors(&self) -> Vec<String> {
        self.errors.lock().unwrap().clone()
    }

    fn ctx(&self, pid: ProcessId) -> ProcessCtx {
        ProcessCtx { pid, n: self.task.n, f: 1 }
    }

    /// The wrapped rule's first decision for the owner of `w`.
    fn inner_decision(&self, w: &View) -> Option<Value> {
        first_decision(&self.inner, self.ctx(w.pid()), w).map(|(o, _)| o)
    }

    /// Whether `view` certifies that every other process has decided.
    fn all_others_decided(&self, ctx: ProcessCtx, view: &View) -> bool {
        let latest = view.latest_views();
        ProcessId::all(ctx.n)
            .filter(|j| *j != ctx.pid)
            .all(|j| latest.get(&j).is_some_and(|w| self.inner_decision(w).is_some()))
    }

    /// The alternate decision of `ctx.pid` at `view`.
    pub fn reconstruct(&self, ctx: ProcessCtx, view: &View) -> Result<Value> {
        let n = ctx.n;
        let inputs_map = view.known_inputs();
        if inputs_map.len() < n {
            return Err(Error::Reconstruction(format!(
                "{} knows only {} of {n} inputs at round {}",
                ctx.pid,
                inputs_map.len(),
                view.round()
            )));
        }
        let inputs: Vec<Value> = inputs_map.values().copied().collect();
        let mut known = view.latest_views();
        known.insert(ctx.pid, view.clone());
        let start: Vec<View> = ProcessId::all(n).map(|p| View::initial(p, inputs[p.slot()])).collect();
        let mut found = None;
        self.complete(ctx, view.round(), 1, start, &known, &inputs, &mut found);
        found.ok_or_else(|| {
            Error::Reconstruction(format!(
                "no accepted completion for {} at round {} within {} extra rounds",
                ctx.pid,
                view.round(),
                self.extension
            ))
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn complete(
        &self,
        ctx: ProcessCtx,
        upto: usize,
        t: usize,
        prev: Vec<View>,
        known: &BTreeMap<ProcessId, View>,
        inputs: &[Value],
        found: &mut Option<Value>,
    ) {
        if found.is_some() {
            return;
        }
        if t > upto {
            *found = self.extend_and_decide(ctx, prev, inputs);
            return;
        }
        let n = ctx.n;
        let targets: Vec<Option<View>> = ProcessId::all(n)
            .map(|p| known.get(&p).filter(|w| w.round() >= t).and_then(|w| w.at_round(t)))
            .collect();
        'graphs: for g in self.graphs.iter() {
            for (slot, target) in targets.iter().enumerate() {
                if let Some(w) = target {
                    if g.in_neighbors(ProcessId::from_slot(slot)) != w.heard_from() {
                        continue 'graphs;
                    }
                }
            }
            let mut next = Vec::with_capacity(n);
            for p in ProcessId::all(n) {
                let heard = g.in_neighbors(p).iter().map(|q| (q, prev[q.slot()].clone())).collect();
                let coins = targets[p.slot()].as_ref().map(|w| w.coins().to_vec()).unwrap_or_default();
                let v = View::extend(p, t, heard, coins);
                if targets[p.slot()].as_ref().is_some_and(|w| *w != v) {
                    continue 'graphs;
                }
                next.push(v);
            }
            self.complete(ctx, upto, t + 1, next, known, inputs, found);
            if found.is_some() {
                return;
            }
        }
    }

    fn extend_and_decide(&self, ctx: ProcessCtx, mut views: Vec<View>, inputs: &[Value]) -> Option<Value> {
        let n = ctx.n;
        let mut out: Vec<Option<Value>> = views.iter().map(|w| self.inner_decision(w)).collect();
        let mut extra = 0;
        while out.iter().any(|o| o.is_none()) && extra < self.extension {
            extra += 1;
            let round = views[0].round() + 1;
            let all: Vec<(ProcessId, View)> = ProcessId::all(n).map(|q| (q, views[q.slot()].clone())).collect();
            views = ProcessId::all(n).map(|p| View::extend(p, round, all.clone(), Vec::new())).collect();
            for p in ProcessId::all(n) {
                if out[p.slot()].is_none() {
                    out[p.slot()] = self.inner.decide(self.ctx(p), &views[p.slot()]);
                }
            }
        }
        let mine = out[ctx.pid.slot()]?;
        self.task.check_output(inputs, &out).ok()?.then_some(mine)
    }

    /// First decision of the owner of `w` under the lift, with the rule that fired.
    pub fn decision_rule(&self, w: &View) -> Option<(Value, usize, DecisionRule)> {
        let ctx = self.ctx(w.pid());
        for v in w.own_chain().iter().skip(1) {
            if let Some(o) = self.inner.decide(ctx, v) {
                return Some((o, v.round(), DecisionRule::Normal));
            }
            if let Some(o) = self.alternate(ctx, v) {
                return Some((o, v.round(), DecisionRule::Alternate));
            }
        }
        None
    }

    /// Processes whose decision came from a reconstructed run.
    pub fn alternate_users(&self, views: &[View]) -> ProcSet {
        views
            .iter()
            .filter(|w| matches!(self.decision_rule(w), Some((_, _, DecisionRule::Alternate))))
            .map(|w| w.pid())
            .collect()
    }

    fn alternate(&self, ctx: ProcessCtx, view: &View) -> Option<Value> {
        if !self.all_others_decided(ctx, view) {
            return None;
        }
        match self.reconstruct(ctx, view) {
            Ok(o) => Some(o),
            Err(e) => {
                self.errors.lock().unwrap().push(e.to_string());
                None
            }
        }
    }
}

impl<D: ViewDecision> ViewDecision for LiftedColoredF1<D> {
    fn id(&self) -> String {
        format!("colored-f1({}, {})", self.inner.id(), self.task.name)
    }

    fn decide(&self, ctx: ProcessCtx, view: &View) -> Option<Value> {
        self.inner.decide(ctx, view).or_else(|| self.alternate(ctx, view))
    }
}

pub fn lift_colored_f1<D: ViewDecision>(d: D, task: Task) -> Result<crate::view::FullInfo<LiftedColoredF1<D>>> {
    Ok(crate::view::FullInfo(LiftedColoredF1::new(d, task)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ho_engine::trace_ho;
    use crate::protocols::{EchoAmp, LazyMin, MinConsensus, MinView};
    use crate::tasks::make_lower_kset;
    use crate::view::FullInfo;
    use rand::SeedableRng;

    fn p(i: usize) -> ProcessId {
        ProcessId::new(i)
    }

    /// Nobody hears `p1`; `p2` and `p3` hear each other.
    fn silence_p1() -> LassoSchedule {
        let g = CommunicationGraph::from_lists(&[vec![1, 2], vec![2, 3], vec![2, 3]]).unwrap();
        LassoSchedule::new(3, 1, vec![], vec![g]).unwrap()
    }

    #[test]
    fn hosted_rounds_on_all_deliver() {
        let s = AmpLassoSchedule::all_deliver(3, 1);
        let out = simulate_ho_in_amp(&MinConsensus, &[4, 2, 7], &s, &Seeds::derive(1, 3), SimBudgets { rounds: 3, steps: 60 }).unwrap();
        assert!(check_cfho_validity(&out.ho_run).is_ok());
        assert!(out.undecided.is_empty());
        assert!(out.ho_run.length >= 1);
        for h in &out.hosts {
            assert!(h.completed.iter().all(|set| set.len() >= 2));
            assert!(h.round <= 1 + h.completed.len());
        }
        assert!(out.ho_run.decided_values().is_subset(&[4, 2, 7].into()));
    }

    #[test]
    fn first_send_moves_to_round_one() {
        let host = Alg1Host { inner: MinConsensus, rounds: 2 };
        let ctx = ProcessCtx { pid: p(1), n: 3, f: 1 };
        let mut st = host.init(ctx, 5);
        assert_eq!(st.round, 0);
        let (m, _) = host.step(&mut st, &[], &mut CoinStream::new(0));
        assert_eq!(m, Some((1, 5)));
        assert_eq!(st.round, 1);
        // a message for round 2 is buffered, not used in round 1
        let (m, _) = host.step(&mut st, &[(p(2), Some((2, 1)))], &mut CoinStream::new(0));
        assert_eq!(m, None);
        assert!(st.completed.is_empty());
        assert_eq!(st.received[&2].len(), 1);
        let (m, d) = host.step(&mut st, &[(p(3), Some((1, 9)))], &mut CoinStream::new(0));
        assert_eq!((m, d), (Some((2, 5)), Some(5)));
    }

    #[test]
    fn hosted_rounds_with_a_faulty_host() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = crate::amp_engine::random_fair_amp(3, 1, 6, &mut rng);
            let out = simulate_ho_in_amp(&MinConsensus, &[3, 1, 2], &s, &Seeds::derive(0, 3), SimBudgets { rounds: 4, steps: 200 }).unwrap();
            let report = check_cfho_validity(&out.ho_run);
            assert!(report.is_ok(), "{:?}", report.violations);
            assert!(out.undecided.is_empty());
        }
    }

    #[test]
    fn hosted_steps_on_complete_graphs() {
        let s = LassoSchedule::complete(3, 1);
        let out = simulate_amp_in_sfho(&EchoAmp, &[5, 3, 8], &s, &Seeds::derive(0, 3), SimBudgets { rounds: 20, steps: 0 }).unwrap();
        assert!(out.blocked.is_empty());
        assert!(check_amp_safety(&out.amp_run).is_ok());
        assert!(out.sfho_run.all_non_faulty_decided());
        for h in out.hosts.states.last().unwrap().iter().flatten() {
            for w in h.steps.windows(2) {
                assert!(w[1].round - w[0].round <= 2, "{:?}", h.steps);
            }
        }
    }

    #[test]
    fn empty_pending_releases_bottom() {
        let host = Alg2Host(EchoAmp);
        let ctx = ProcessCtx { pid: p(1), n: 3, f: 1 };
        let mut st = host.init(ctx, 1);
        st.old = st.seen.msgs.keys().copied().collect();
        let latest = st.latest.unwrap();
        let mut theirs = Seen::<std::collections::BTreeSet<Value>>::default();
        theirs.acks.insert((p(2), latest));
        host.receive(&mut st, 1, &[(p(2), Arc::new(theirs))], &mut CoinStream::new(0));
        assert_eq!(st.steps.len(), 2);
        assert!(st.steps[1].delivered.is_empty());
    }

    #[test]
    fn silenced_host_blocks() {
        let s = silence_p1();
        let out = simulate_amp_in_sfho(&EchoAmp, &[5, 3, 8], &s, &Seeds::derive(0, 3), SimBudgets { rounds: 40, steps: 0 }).unwrap();
        assert_eq!(out.blocked, silenced_processes(&s));
        assert_eq!(out.blocked, ProcSet::singleton(p(1)));
        assert!(check_amp_safety(&out.amp_run).is_ok());
    }

    #[test]
    fn colorless_lift_adopts() {
        let s = silence_p1();
        let exec = trace_ho(&lift_colorless(LazyMin), &[0, 1, 2], &s, 4).unwrap();
        assert!(exec.run.outputs.iter().all(|o| o.is_some()));
        // p2, p3 decide min{1, 2}; p1 never gets confirmed and adopts
        assert_eq!(exec.run.outputs, vec![Some(1); 3]);
        let plain = trace_ho(&FullInfo(LazyMin), &[0, 1, 2], &s, 4).unwrap();
        assert_eq!(plain.run.outputs[0], None);
        let own = trace_ho(&lift_colorless(MinView), &[0, 1, 2], &s, 2).unwrap();
        assert_eq!(own.run.outputs, trace_ho(&FullInfo(MinView), &[0, 1, 2], &s, 2).unwrap().run.outputs);
    }

    #[test]
    fn colored_lift_reconstructs() {
        let task = make_lower_kset(3, 2, &[0, 1, 2]).unwrap();
        let lifted = lift_colored_f1(LazyMin, task.clone()).unwrap();
        let s = silence_p1();
        let exec = trace_ho(&lifted, &[0, 1, 2], &s, 5).unwrap();
        assert!(exec.run.outputs.iter().all(|o| o.is_some()), "{:?}", exec.run.outputs);
        assert!(task.check_output(&[0, 1, 2], &exec.run.outputs).unwrap());
        let views: Vec<View> = exec.states.last().unwrap().iter().map(|st| st.as_ref().unwrap().view.clone()).collect();
        assert_eq!(lifted.0.alternate_users(&views), ProcSet::singleton(p(1)));
        assert!(lifted.0.errors().is_empty());
        // p1's round-1 view is {p1, p2}: its own output in the rebuilt run is 0
        assert_eq!(exec.run.outputs[0], Some(0));
    }

    #[test]
    fn colored_lift_is_plain_without_silencing() {
        let task = make_lower_kset(3, 2, &[0, 1, 2]).unwrap();
        let lifted = lift_colored_f1(LazyMin, task).unwrap();
        let s = LassoSchedule::complete(3, 1);
        let a = trace_ho(&lifted, &[2, 0, 1], &s, 4).unwrap();
        let b = trace_ho(&FullInfo(LazyMin), &[2, 0, 1], &s, 4).unwrap();
        assert_eq!(a.run.outputs, b.run.outputs);
        let views: Vec<View> = a.states.last().unwrap().iter().map(|st| st.as_ref().unwrap().view.clone()).collect();
        assert!(lifted.0.alternate_users(&views).is_empty());
    }
}
