//! Concrete protocols used by the tests, the explorer and the command line.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::process::ProcessId;
use crate::protocol::{AmpProtocol, CoinStream, HoProtocol, ProcessCtx, Value};
use crate::view::{View, ViewDecision};

/// Broadcasts its input every round and never decides.
#[derive(Clone, Copy, Debug, Default)]
pub struct EchoHo;

impl HoProtocol for EchoHo {
    type State = Value;
    type Msg = Value;

    fn decision_fn_id(&self) -> String {
        "echo".into()
    }

    fn init(&self, _ctx: ProcessCtx, input: Value) -> Value {
        input
    }

    fn send(&self, state: &Value, _round: usize) -> Value {
        *state
    }

    fn receive(&self, _: &mut Value, _: usize, _: &[(ProcessId, Value)], _: &mut CoinStream) -> Option<Value> {
        None
    }
}

/// One round of exchanging inputs, then decide the minimum received.
#[derive(Clone, Copy, Debug, Default)]
pub struct MinConsensus;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinState {
    pub input: Value,
    pub decided: bool,
}

impl HoProtocol for MinConsensus {
    type State = MinState;
    type Msg = Value;

    fn decision_fn_id(&self) -> String {
        "min".into()
    }

    fn init(&self, _ctx: ProcessCtx, input: Value) -> MinState {
        MinState { input, decided: false }
    }

    fn send(&self, state: &MinState, _round: usize) -> Value {
        state.input
    }

    fn receive(&self, state: &mut MinState, _round: usize, heard: &[(ProcessId, Value)], _: &mut CoinStream) -> Option<Value> {
        if state.decided {
            return None;
        }
        state.decided = true;
        heard.iter().map(|(_, v)| *v).min()
    }
}

/// Decides its own input in round 1: breaks agreement as soon as inputs differ.
#[derive(Clone, Copy, Debug, Default)]
pub struct DecideOwnInput;

impl HoProtocol for DecideOwnInput {
    type State = MinState;
    type Msg = Value;

    fn decision_fn_id(&self) -> String {
        "own-input".into()
    }

    fn init(&self, _ctx: ProcessCtx, input: Value) -> MinState {
        MinState { input, decided: false }
    }

    fn send(&self, state: &MinState, _round: usize) -> Value {
        state.input
    }

    fn receive(&self, state: &mut MinState, _: usize, _: &[(ProcessId, Value)], _: &mut CoinStream) -> Option<Value> {
        if state.decided {
            return None;
        }
        state.decided = true;
        Some(state.input)
    }
}

/// Full-information minimum: decides the minimum of the inputs it received in
/// round 1, but only once a message shows that some other process knows its own
/// input. A process nobody hears from may therefore never decide.
#[derive(Clone, Copy, Debug, Default)]
pub struct LazyMin;

impl ViewDecision for LazyMin {
    fn id(&self) -> String {
        "lazy-min".into()
    }

    fn decide(&self, ctx: ProcessCtx, view: &View) -> Option<Value> {
        if view.round() < 2 {
            return None;
        }
        let confirmed = view
            .heard()
            .iter()
            .any(|(j, w)| *j != ctx.pid && w.contains_view_of(ctx.pid, 0));
        confirmed.then(|| view.round_one_inputs().into_iter().min().unwrap())
    }
}

/// Full-information round-1 minimum (same outputs as [`MinConsensus`]).
#[derive(Clone, Copy, Debug, Default)]
pub struct MinView;

impl ViewDecision for MinView {
    fn id(&self) -> String {
        "min".into()
    }

    fn decide(&self, _ctx: ProcessCtx, view: &View) -> Option<Value> {
        (view.round() == 1).then(|| view.round_one_inputs().into_iter().min().unwrap())
    }
}

/// New name `(initial name mod N) + 1`, decided in round 1. Anonymous.
#[derive(Clone, Copy, Debug)]
pub struct ModNDelta {
    pub modulus: u64,
}

impl ViewDecision for ModNDelta {
    fn id(&self) -> String {
        format!("mod-{}", self.modulus)
    }

    fn decide(&self, _ctx: ProcessCtx, view: &View) -> Option<Value> {
        let a = view.anonymous();
        (a.round() >= 1).then(|| a.input() % self.modulus + 1)
    }
}

/// Asynchronous echo: gathers known inputs and decides their minimum at its third
/// step.
#[derive(Clone, Copy, Debug, Default)]
pub struct EchoAmp;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EchoAmpState {
    pub known: BTreeSet<Value>,
    pub steps: usize,
}

impl AmpProtocol for EchoAmp {
    type State = EchoAmpState;
    type Msg = BTreeSet<Value>;

    fn decision_fn_id(&self) -> String {
        "echo-amp".into()
    }

    fn init(&self, _ctx: ProcessCtx, input: Value) -> EchoAmpState {
        EchoAmpState {
            known: BTreeSet::from([input]),
            steps: 0,
        }
    }

    fn step(
        &self,
        state: &mut EchoAmpState,
        received: &[(ProcessId, BTreeSet<Value>)],
        _: &mut CoinStream,
    ) -> (BTreeSet<Value>, Option<Value>) {
        for (_, m) in received {
            state.known.extend(m.iter().copied());
        }
        state.steps += 1;
        let d = (state.steps == 3).then(|| *state.known.iter().next().unwrap());
        (state.known.clone(), d)
    }
}

/// One entry of the renaming vector: the state a process announces for itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NameEntry {
    pub suggestion: Option<u64>,
    pub counter: u64,
    pub decided: bool,
}

/// Known entries keyed by initial name.
pub type NameVector = BTreeMap<Value, NameEntry>;

/// Asynchronous renaming into `[1, n + f]` over stable vectors.
///
/// Every process keeps a vector of the latest entry of each initial name it has
/// heard of, and only its owner changes an entry. A vector is stable once
/// `n - f` distinct processes (itself included) have sent an identical copy since it last changed.
/// On a stable vector the process keeps its suggestion if nobody else suggests the
/// same name and decides; otherwise it takes the `r`-th name not suggested by
/// others, `r` being the rank of its initial name among the undecided entries whose
/// suggestion is missing or shared.
///
/// Ranking only those entries keeps names at most `n + ceil((n - 1) / 2)`, which is
/// `n + f` when `n = 2f + 1`; for larger `n` the `n + f` range is only sampled.
///
/// All decisions depend only on initial names and received contents, never on
/// process positions.
#[derive(Clone, Copy, Debug)]
pub struct RenamingAmp {
    pub n: usize,
    pub f: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenamingState {
    pub name: Value,
    pub vector: NameVector,
    /// Senders of copies of the current vector, including ourselves.
    pub echoed: BTreeSet<ProcessId>,
    pub output: Option<u64>,
    need: usize,
}

impl RenamingAmp {
    pub fn new(n: usize, f: usize) -> Self {
        RenamingAmp { n, f }
    }

    fn choose(state: &RenamingState) -> u64 {
        let taken: BTreeSet<u64> = state
            .vector
            .iter()
            .filter(|(id, _)| **id != state.name)
            .filter_map(|(_, e)| e.suggestion)
            .collect();
        let clashes = |id: &Value, e: &NameEntry| {
            e.suggestion.is_none()
                || state.vector.iter().any(|(other, o)| other != id && o.suggestion == e.suggestion)
        };
        let rank = state
            .vector
            .iter()
            .filter(|(id, e)| **id == state.name || (!e.decided && **id < state.name && clashes(id, e)))
            .count();
        (1u64..).filter(|s| !taken.contains(s)).nth(rank - 1).unwrap()
    }
}

impl AmpProtocol for RenamingAmp {
    type State = RenamingState;
    type Msg = NameVector;

    fn decision_fn_id(&self) -> String {
        format!("renaming-{}-{}", self.n, self.f)
    }

    fn init(&self, _ctx: ProcessCtx, input: Value) -> RenamingState {
        RenamingState {
            name: input,
            vector: BTreeMap::from([(input, NameEntry { suggestion: None, counter: 0, decided: false })]),
            echoed: BTreeSet::new(),
            output: None,
            need: self.n - self.f,
        }
    }

    fn step(&self, state: &mut RenamingState, received: &[(ProcessId, NameVector)], _: &mut CoinStream) -> (NameVector, Option<Value>) {
        let mut changed = false;
        for (_, m) in received {
            for (id, e) in m {
                if *id == state.name {
                    continue;
                }
                match state.vector.get(id) {
                    Some(old) if old.counter >= e.counter => {}
                    _ => {
                        state.vector.insert(*id, *e);
                        changed = true;
                    }
                }
            }
        }
        if changed {
            state.echoed.clear();
        }
        for (j, m) in received {
            if *m == state.vector {
                state.echoed.insert(*j);
            }
        }
        let mut decision = None;
        if state.output.is_none() && state.echoed.len() >= state.need {
            let own = state.vector[&state.name];
            let clash = own.suggestion.is_none()
                || state
                    .vector
                    .iter()
                    .any(|(id, e)| *id != state.name && e.suggestion == own.suggestion);
            let entry = if clash {
                NameEntry {
                    suggestion: Some(Self::choose(state)),
                    counter: own.counter + 1,
                    decided: false,
                }
            } else {
                decision = own.suggestion;
                state.output = own.suggestion;
                NameEntry {
                    decided: true,
                    counter: own.counter + 1,
                    ..own
                }
            };
            state.vector.insert(state.name, entry);
            state.echoed.clear();
        }
        (state.vector.clone(), decision)
    }
}

/// Runs an asynchronous protocol in rounds: the initial step receives `⊥`, and
/// each later round is one step receiving exactly that round's messages.
#[derive(Clone, Copy, Debug)]
pub struct AmpAsHo<P>(pub P);

#[derive(Clone, Debug)]
pub struct AmpAsHoState<S, M> {
    pub inner: S,
    pub outgoing: M,
    pub early: Option<Value>,
}

impl<P: AmpProtocol> HoProtocol for AmpAsHo<P> {
    type State = AmpAsHoState<P::State, P::Msg>;
    type Msg = P::Msg;

    fn decision_fn_id(&self) -> String {
        self.0.decision_fn_id()
    }

    fn init(&self, ctx: ProcessCtx, input: Value) -> Self::State {
        let mut inner = self.0.init(ctx, input);
        let mut coins = CoinStream::new(crate::protocol::split_seed(u64::MAX, ctx.pid.index() as u64));
        let (outgoing, early) = self.0.step(&mut inner, &[], &mut coins);
        AmpAsHoState { inner, outgoing, early }
    }

    fn send(&self, state: &Self::State, _round: usize) -> P::Msg {
        state.outgoing.clone()
    }

    fn receive(&self, state: &mut Self::State, _round: usize, heard: &[(ProcessId, P::Msg)], coins: &mut CoinStream) -> Option<Value> {
        let (m, d) = self.0.step(&mut state.inner, heard, coins);
        state.outgoing = m;
        state.early.take().or(d)
    }
}
