//! Full-information views for round-based protocols.
//!
//! A view is a process's complete local history: its input, and for every round
//! the views it received (its own previous view among them) and the coins it drew.
//! Views are immutable DAG nodes with structural sharing, so a round-`r` view
//! costs one node on top of the round-`(r-1)` views it references.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{ProcSet, ProcessId};
use crate::protocol::{CoinStream, HoProtocol, ProcessCtx, Value};

#[derive(PartialEq, Eq)]
struct ViewNode {
    pid: ProcessId,
    round: usize,
    input: Value,
    /// Round-`round` messages, sorted by sender; empty for round 0.
    heard: Vec<(ProcessId, View)>,
    coins: Vec<u64>,
    digest: u64,
}

/// A full-information view. Cloning is a reference-count bump.
#[derive(Clone)]
pub struct View(Arc<ViewNode>);

impl View {
    /// Round-0 view: the initial state.
    pub fn initial(pid: ProcessId, input: Value) -> View {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (pid, 0usize, input).hash(&mut h);
        View(Arc::new(ViewNode {
            pid,
            round: 0,
            input,
            heard: Vec::new(),
            coins: Vec::new(),
            digest: h.finish(),
        }))
    }

    /// Round-`round` view of `pid` after receiving `heard` (must include `pid`'s own
    /// round-`(round-1)` view).
    pub fn extend(pid: ProcessId, round: usize, mut heard: Vec<(ProcessId, View)>, coins: Vec<u64>) -> View {
        heard.sort_by_key(|(p, _)| *p);
        let own = heard
            .iter()
            .find(|(p, _)| *p == pid)
            .map(|(_, v)| v.clone())
            .expect("a process always hears from itself");
        debug_assert_eq!(own.round() + 1, round);
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (pid, round, own.input()).hash(&mut h);
        for (p, v) in &heard {
            (p, v.digest()).hash(&mut h);
        }
        coins.hash(&mut h);
        View(Arc::new(ViewNode {
            pid,
            round,
            input: own.input(),
            heard,
            coins,
            digest: h.finish(),
        }))
    }

    pub fn pid(&self) -> ProcessId {
        self.0.pid
    }

    pub fn round(&self) -> usize {
        self.0.round
    }

    pub fn input(&self) -> Value {
        self.0.input
    }

    pub fn coins(&self) -> &[u64] {
        &self.0.coins
    }

    pub fn digest(&self) -> u64 {
        self.0.digest
    }

    /// Messages received in this view's round, sorted by sender.
    pub fn heard(&self) -> &[(ProcessId, View)] {
        &self.0.heard
    }

    pub fn heard_from(&self) -> ProcSet {
        self.0.heard.iter().map(|(p, _)| *p).collect()
    }

    /// Own view of the previous round.
    pub fn prev(&self) -> Option<&View> {
        self.0.heard.iter().find(|(p, _)| *p == self.0.pid).map(|(_, v)| v)
    }

    /// Own views from round 0 up to this one.
    pub fn own_chain(&self) -> Vec<View> {
        let mut chain = vec![self.clone()];
        while let Some(p) = chain.last().unwrap().prev().cloned() {
            chain.push(p);
        }
        chain.reverse();
        chain
    }

    /// Own view at an earlier round.
    pub fn at_round(&self, round: usize) -> Option<View> {
        let mut v = self.clone();
        while v.round() > round {
            v = v.prev()?.clone();
        }
        (v.round() == round).then_some(v)
    }

    pub fn ptr_eq(&self, other: &View) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Visits every distinct node reachable from this view once.
    pub fn for_each_node(&self, mut visit: impl FnMut(&View)) {
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !seen.insert(v.key()) {
                continue;
            }
            visit(&v);
            for (_, w) in v.heard() {
                stack.push(w.clone());
            }
        }
    }

    /// For every process, its most recent view contained in this one.
    pub fn latest_views(&self) -> BTreeMap<ProcessId, View> {
        let mut best: BTreeMap<ProcessId, View> = BTreeMap::new();
        self.for_each_node(|v| {
            let e = best.entry(v.pid()).or_insert_with(|| v.clone());
            if v.round() > e.round() {
                *e = v.clone();
            }
        });
        best
    }

    /// Inputs of every process known to this view.
    pub fn known_inputs(&self) -> BTreeMap<ProcessId, Value> {
        let mut out = BTreeMap::new();
        self.for_each_node(|v| {
            out.insert(v.pid(), v.input());
        });
        out
    }

    /// Whether `p`'s round-`round` view is part of this view.
    pub fn contains_view_of(&self, p: ProcessId, round: usize) -> bool {
        if self.pid() == p && self.round() >= round {
            return true;
        }
        let mut found = false;
        self.for_each_node(|v| {
            if v.pid() == p && v.round() >= round {
                found = true;
            }
        });
        found
    }

    /// Inputs received in round 1 (the round-0 views heard in round 1).
    pub fn round_one_inputs(&self) -> Vec<Value> {
        match self.at_round(1) {
            Some(v1) => v1.heard().iter().map(|(_, w)| w.input()).collect(),
            None => vec![self.input()],
        }
    }

    /// Deep structural equality with memoised node pairs.
    fn deep_eq(&self, other: &View, memo: &mut HashSet<(usize, usize)>) -> bool {
        if self.ptr_eq(other) {
            return true;
        }
        let (a, b) = (&self.0, &other.0);
        if a.digest != b.digest || a.pid != b.pid || a.round != b.round || a.input != b.input {
            return false;
        }
        if a.coins != b.coins || a.heard.len() != b.heard.len() {
            return false;
        }
        if !memo.insert((self.key(), other.key())) {
            return true;
        }
        a.heard
            .iter()
            .zip(&b.heard)
            .all(|((p, v), (q, w))| p == q && v.deep_eq(w, memo))
    }

    /// Anonymous accessor: exposes contents but no process identities.
    pub fn anonymous(&self) -> AnonView<'_> {
        AnonView { view: self }
    }
}

impl PartialEq for View {
    fn eq(&self, other: &View) -> bool {
        self.deep_eq(other, &mut HashSet::new())
    }
}

impl Eq for View {}

impl Hash for View {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.digest.hash(state);
    }
}

impl fmt::Debug for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "View({}@r{}#{:016x})", self.pid(), self.round(), self.digest())
    }
}

/// One entry of a view's event log: the initial state (round 0) or the local
/// history extension at the end of a round, referencing earlier entries.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogEvent {
    pub pid: ProcessId,
    pub round: usize,
    pub input: Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub heard: Vec<(ProcessId, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coins: Vec<u64>,
}

/// Canonical arena form of a view: entries in dependency order, structurally equal
/// sub-views stored once, the view itself last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<LogEvent>,
}

impl EventLog {
    /// Rebuilds the view at the last entry, checking that references point backwards
    /// and that every extension includes its owner's previous view.
    pub fn to_view(&self) -> Result<View> {
        let mut built: Vec<View> = Vec::with_capacity(self.events.len());
        for (k, e) in self.events.iter().enumerate() {
            let v = if e.round == 0 {
                if !e.heard.is_empty() {
                    return Err(Error::Parse(format!("log entry {k}: round-0 entry with messages")));
                }
                View::initial(e.pid, e.input)
            } else {
                let mut heard = Vec::with_capacity(e.heard.len());
                for &(p, idx) in &e.heard {
                    let w = built
                        .get(idx)
                        .ok_or_else(|| Error::Parse(format!("log entry {k}: forward reference {idx}")))?;
                    if w.pid() != p || w.round() + 1 != e.round {
                        return Err(Error::Parse(format!("log entry {k}: reference {idx} is not a round-{} view of {p}", e.round - 1)));
                    }
                    heard.push((p, w.clone()));
                }
                match heard.iter().find(|(p, _)| *p == e.pid) {
                    Some((_, own)) if own.input() == e.input => {}
                    _ => return Err(Error::Parse(format!("log entry {k}: own previous view missing"))),
                }
                View::extend(e.pid, e.round, heard, e.coins.clone())
            };
            built.push(v);
        }
        built.pop().ok_or_else(|| Error::Parse("empty view log".into()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }

    pub fn from_json(text: &str) -> Result<EventLog> {
        Ok(serde_json::from_str(text)?)
    }
}

impl View {
    /// Canonical event log of this view.
    pub fn to_log(&self) -> EventLog {
        let mut events: Vec<LogEvent> = Vec::new();
        let mut index: HashMap<LogEvent, usize> = HashMap::new();
        let mut by_ptr: HashMap<usize, usize> = HashMap::new();
        fn visit(
            v: &View,
            events: &mut Vec<LogEvent>,
            index: &mut HashMap<LogEvent, usize>,
            by_ptr: &mut HashMap<usize, usize>,
        ) -> usize {
            if let Some(&k) = by_ptr.get(&v.key()) {
                return k;
            }
            let heard = v
                .heard()
                .iter()
                .map(|(p, w)| (*p, visit(w, events, index, by_ptr)))
                .collect();
            let e = LogEvent {
                pid: v.pid(),
                round: v.round(),
                input: v.input(),
                heard,
                coins: v.coins().to_vec(),
            };
            let k = *index.entry(e.clone()).or_insert_with(|| {
                events.push(e);
                events.len() - 1
            });
            by_ptr.insert(v.key(), k);
            k
        }
        visit(self, &mut events, &mut index, &mut by_ptr);
        EventLog { events }
    }

    /// The same view with process identities renamed by `perm` (a permutation).
    pub fn relabel(&self, perm: &dyn Fn(ProcessId) -> ProcessId) -> View {
        fn go(v: &View, perm: &dyn Fn(ProcessId) -> ProcessId, memo: &mut HashMap<usize, View>) -> View {
            if let Some(w) = memo.get(&v.key()) {
                return w.clone();
            }
            let out = if v.round() == 0 {
                View::initial(perm(v.pid()), v.input())
            } else {
                let heard = v.heard().iter().map(|(p, w)| (perm(*p), go(w, perm, memo))).collect();
                View::extend(perm(v.pid()), v.round(), heard, v.coins().to_vec())
            };
            memo.insert(v.key(), out.clone());
            out
        }
        go(self, perm, &mut HashMap::new())
    }
}

/// A view with process identities hidden. Decision functions written against this
/// type are anonymous by construction.
#[derive(Clone, Copy)]
pub struct AnonView<'a> {
    view: &'a View,
}

impl<'a> AnonView<'a> {
    pub fn round(&self) -> usize {
        self.view.round()
    }

    pub fn input(&self) -> Value {
        self.view.input()
    }

    pub fn coins(&self) -> &'a [u64] {
        self.view.coins()
    }

    /// Own previous view.
    pub fn prev(&self) -> Option<AnonView<'a>> {
        self.view.prev().map(|v| AnonView { view: v })
    }

    /// The other views received this round, in an order that does not depend on
    /// process identities.
    pub fn others(&self) -> Vec<AnonView<'a>> {
        let own = self.view.pid();
        let mut v: Vec<&View> = self
            .view
            .heard()
            .iter()
            .filter(|(p, _)| *p != own)
            .map(|(_, w)| w)
            .collect();
        v.sort_by_key(|w| (w.input(), w.round(), w.digest()));
        v.into_iter().map(|w| AnonView { view: w }).collect()
    }

    /// Inputs appearing anywhere in the view.
    pub fn known_inputs(&self) -> std::collections::BTreeSet<Value> {
        self.view.known_inputs().into_values().collect()
    }
}

/// A decision function over full-information views.
pub trait ViewDecision {
    fn id(&self) -> String;

    /// Coins drawn per round of local computation, recorded in the view.
    fn coins_per_round(&self) -> usize {
        0
    }

    /// Called on every new view until it first returns a value.
    fn decide(&self, ctx: ProcessCtx, view: &View) -> Option<Value>;
}

/// First round at which `d` fires along `view`'s own chain, with the value.
pub fn first_decision<D: ViewDecision + ?Sized>(d: &D, ctx: ProcessCtx, view: &View) -> Option<(Value, usize)> {
    view.own_chain()
        .iter()
        .skip(1)
        .find_map(|v| d.decide(ctx, v).map(|o| (o, v.round())))
}

/// Cache of [`first_decision`] keyed by node identity.
#[derive(Default)]
pub struct DecisionCache {
    map: std::cell::RefCell<HashMap<usize, Option<(Value, usize)>>>,
}

impl DecisionCache {
    /// `first_decision` for the owner of `view`, memoised per node.
    pub fn decision_of<D: ViewDecision + ?Sized>(&self, d: &D, n: usize, f: usize, view: &View) -> Option<(Value, usize)> {
        if let Some(hit) = self.map.borrow().get(&view.key()) {
            return *hit;
        }
        let ctx = ProcessCtx { pid: view.pid(), n, f };
        let earlier = view.prev().and_then(|p| self.decision_of(d, n, f, p));
        let out = earlier.or_else(|| {
            if view.round() == 0 {
                None
            } else {
                d.decide(ctx, view).map(|o| (o, view.round()))
            }
        });
        self.map.borrow_mut().insert(view.key(), out);
        out
    }
}

/// State of a full-information process.
#[derive(Clone, Debug)]
pub struct FullInfoState {
    pub ctx: ProcessCtx,
    pub view: View,
    pub decided: Option<Value>,
}

/// Runs a [`ViewDecision`] as a full-information round protocol: every message is
/// the sender's current view.
#[derive(Clone, Debug, Default)]
pub struct FullInfo<D>(pub D);

impl<D: ViewDecision> HoProtocol for FullInfo<D> {
    type State = FullInfoState;
    type Msg = View;

    fn decision_fn_id(&self) -> String {
        self.0.id()
    }

    fn init(&self, ctx: ProcessCtx, input: Value) -> FullInfoState {
        FullInfoState {
            ctx,
            view: View::initial(ctx.pid, input),
            decided: None,
        }
    }

    fn send(&self, state: &FullInfoState, _round: usize) -> View {
        state.view.clone()
    }

    fn receive(
        &self,
        state: &mut FullInfoState,
        round: usize,
        heard: &[(ProcessId, View)],
        coins: &mut CoinStream,
    ) -> Option<Value> {
        let flips = (0..self.0.coins_per_round()).map(|_| coins.next_u64()).collect();
        state.view = View::extend(state.ctx.pid, round, heard.to_vec(), flips);
        if state.decided.is_some() {
            return None;
        }
        let d = self.0.decide(state.ctx, &state.view);
        state.decided = d;
        d
    }
}
