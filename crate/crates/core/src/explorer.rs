//! Bounded exhaustive exploration of round-based execution trees, the two-process
//! separation schedule and the collision search built on it.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{enumerate_graphs_capped, CommunicationGraph};
use crate::ho_engine::trace_ho;
use crate::process::{ProcSet, ProcessId};
use crate::protocol::{CoinStream, HoProtocol, ProcessCtx, Seeds, Value};
use crate::schedule::LassoSchedule;
use crate::tasks::Task;
use crate::view::{FullInfo, View, ViewDecision};

/// Default bound on `|𝒢|^depth · |𝓘|`.
pub const DEFAULT_BRANCH_CAP: u128 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Safety,
    Decision,
}

#[derive(Clone, Debug)]
pub struct ExploreConfig {
    pub depth: usize,
    pub mode: Mode,
    pub cap: u128,
    /// Worker threads; `1` explores sequentially.
    pub jobs: usize,
    /// Loss-free rounds appended to leaves with undecided processes.
    pub extension: usize,
    /// Input vectors to explore instead of all of the task's.
    pub inputs: Option<Vec<Vec<Value>>>,
    pub seed: u64,
}

impl ExploreConfig {
    pub fn new(depth: usize, mode: Mode) -> Self {
        ExploreConfig {
            depth,
            mode,
            cap: DEFAULT_BRANCH_CAP,
            jobs: 1,
            extension: 12,
            inputs: None,
            seed: 0,
        }
    }
}

/// A branch of the tree, replayable as a lasso by [`Trace::to_lasso`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Trace {
    pub inputs: Vec<Value>,
    pub graphs: Vec<CommunicationGraph>,
    pub outputs: Vec<Option<Value>>,
    pub reason: String,
}

impl Trace {
    /// The branch followed by complete graphs forever.
    pub fn to_lasso(&self, f: usize) -> Result<LassoSchedule> {
        let n = self.inputs.len();
        LassoSchedule::new(n, f, self.graphs.clone(), vec![CommunicationGraph::complete(n)])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub nodes: u64,
    pub leaves: u64,
    /// First Δ violation in canonical branch order.
    pub counterexample: Option<Trace>,
    pub violations: u64,
    /// Leaves with some undecided process.
    pub undecided_leaves: u64,
    /// Undecided leaves whose loss-free extension decides everybody.
    pub extendable: u64,
    pub stuck: u64,
    pub first_stuck: Option<Trace>,
    pub hook_failures: u64,
    pub first_hook_failure: Option<Trace>,
}

impl Verdict {
    pub fn safe(&self) -> bool {
        self.violations == 0
    }

    /// Safe, no stuck leaves and no hook failures.
    pub fn ok(&self) -> bool {
        self.safe() && self.stuck == 0 && self.hook_failures == 0
    }

    /// Every leaf decided without extension.
    pub fn all_decided(&self) -> bool {
        self.undecided_leaves == 0
    }

    fn merge(&mut self, o: Verdict) {
        // callers merge in canonical order, so the first example wins
        self.nodes += o.nodes;
        self.leaves += o.leaves;
        self.violations += o.violations;
        self.undecided_leaves += o.undecided_leaves;
        self.extendable += o.extendable;
        self.stuck += o.stuck;
        self.hook_failures += o.hook_failures;
        self.counterexample = self.counterexample.take().or(o.counterexample);
        self.first_stuck = self.first_stuck.take().or(o.first_stuck);
        self.first_hook_failure = self.first_hook_failure.take().or(o.first_hook_failure);
    }
}

/// What a leaf hook sees.
pub struct Leaf<'a, S> {
    pub inputs: &'a [Value],
    pub graphs: &'a [CommunicationGraph],
    pub outputs: &'a [Option<Value>],
    pub states: &'a [S],
    /// After the loss-free extension, in decision mode when something was undecided.
    pub extended: Option<(&'a [Option<Value>], &'a [S])>,
}

#[derive(Clone)]
struct Node<S> {
    states: Vec<S>,
    outputs: Vec<Option<Value>>,
    coins: Vec<CoinStream>,
}

fn step<P: HoProtocol>(proto: &P, node: &mut Node<P::State>, g: &CommunicationGraph, round: usize) -> std::result::Result<(), String> {
    let msgs: Vec<P::Msg> = node.states.iter().map(|s| proto.send(s, round)).collect();
    for p in ProcessId::all(node.states.len()) {
        let heard: Vec<(ProcessId, P::Msg)> = g.in_neighbors(p).iter().map(|q| (q, msgs[q.slot()].clone())).collect();
        if let Some(v) = proto.receive(&mut node.states[p.slot()], round, &heard, &mut node.coins[p.slot()]) {
            if node.outputs[p.slot()].is_some() {
                return Err(format!("{p} decides twice (round {round})"));
            }
            node.outputs[p.slot()] = Some(v);
        }
    }
    Ok(())
}

struct Ctx<'a, P, H> {
    proto: &'a P,
    task: &'a Task,
    graphs: &'a [CommunicationGraph],
    cfg: &'a ExploreConfig,
    hook: &'a H,
}

impl<P, H> Ctx<'_, P, H>
where
    P: HoProtocol,
    H: Fn(&Leaf<P::State>) -> std::result::Result<(), String>,
{
    fn valid(&self, inputs: &[Value], outputs: &[Option<Value>]) -> bool {
        self.task.check_output(inputs, outputs).unwrap_or(false)
    }

    fn dfs(&self, inputs: &[Value], path: &mut Vec<usize>, node: Node<P::State>, out: &mut Verdict) {
        out.nodes += 1;
        let trace = |path: &[usize], outputs: &[Option<Value>], reason: String| Trace {
            inputs: inputs.to_vec(),
            graphs: path.iter().map(|&k| self.graphs[k].clone()).collect(),
            outputs: outputs.to_vec(),
            reason,
        };
        if path.len() == self.cfg.depth {
            self.leaf(inputs, path, node, out, &trace);
            return;
        }
        let round = path.len() + 1;
        for k in 0..self.graphs.len() {
            let mut child = node.clone();
            path.push(k);
            match step(self.proto, &mut child, &self.graphs[k], round) {
                Ok(()) => self.dfs(inputs, path, child, out),
                Err(e) => {
                    out.nodes += 1;
                    out.leaves += 1;
                    out.violations += 1;
                    if out.counterexample.is_none() {
                        out.counterexample = Some(trace(path, &child.outputs, e));
                    }
                }
            }
            path.pop();
        }
    }

    fn leaf(
        &self,
        inputs: &[Value],
        path: &[usize],
        node: Node<P::State>,
        out: &mut Verdict,
        trace: &dyn Fn(&[usize], &[Option<Value>], String) -> Trace,
    ) {
        out.leaves += 1;
        if !self.valid(inputs, &node.outputs) {
            out.violations += 1;
            if out.counterexample.is_none() {
                out.counterexample = Some(trace(path, &node.outputs, "output vector outside the task".into()));
            }
            return;
        }
        let mut extended = None;
        if node.outputs.iter().any(|o| o.is_none()) {
            out.undecided_leaves += 1;
            if self.cfg.mode == Mode::Decision {
                let n = inputs.len();
                let complete = CommunicationGraph::complete(n);
                let mut ext = node.clone();
                let mut round = path.len();
                let mut failure = None;
                while ext.outputs.iter().any(|o| o.is_none()) && round < path.len() + self.cfg.extension {
                    round += 1;
                    if let Err(e) = step(self.proto, &mut ext, &complete, round) {
                        failure = Some(e);
                        break;
                    }
                }
                if failure.is_none() && !self.valid(inputs, &ext.outputs) {
                    failure = Some("extension leaves the task".into());
                }
                if let Some(e) = failure {
                    out.violations += 1;
                    if out.counterexample.is_none() {
                        out.counterexample = Some(trace(path, &ext.outputs, e));
                    }
                    return;
                }
                if ext.outputs.iter().all(|o| o.is_some()) {
                    out.extendable += 1;
                } else {
                    out.stuck += 1;
                    if out.first_stuck.is_none() {
                        out.first_stuck = Some(trace(path, &ext.outputs, "undecided after loss-free extension".into()));
                    }
                }
                extended = Some(ext);
            }
        }
        let graphs: Vec<CommunicationGraph> = path.iter().map(|&k| self.graphs[k].clone()).collect();
        let leaf = Leaf {
            inputs,
            graphs: &graphs,
            outputs: &node.outputs,
            states: &node.states,
            extended: extended.as_ref().map(|e| (e.outputs.as_slice(), e.states.as_slice())),
        };
        if let Err(e) = (self.hook)(&leaf) {
            out.hook_failures += 1;
            if out.first_hook_failure.is_none() {
                out.first_hook_failure = Some(trace(path, &node.outputs, e));
            }
        }
    }
}

/// Explores every input vector and every graph sequence of length `depth`.
pub fn explore<P>(proto: &P, task: &Task, f: usize, cfg: &ExploreConfig) -> Result<Verdict>
where
    P: HoProtocol + Sync,
    P::State: Send,
{
    explore_with(proto, task, f, cfg, &|_: &Leaf<P::State>| Ok(()))
}

/// [`explore`] with a check run at every leaf.
pub fn explore_with<P, H>(proto: &P, task: &Task, f: usize, cfg: &ExploreConfig, hook: &H) -> Result<Verdict>
where
    P: HoProtocol + Sync,
    P::State: Send,
    H: Fn(&Leaf<P::State>) -> std::result::Result<(), String> + Sync,
{
    let n = task.n;
    let graphs = enumerate_graphs_capped(n, f, cfg.cap)?;
    let inputs = match &cfg.inputs {
        Some(v) => v.clone(),
        None => task.input_vectors(),
    };
    for i in &inputs {
        if !task.contains_input(i) {
            return Err(Error::Domain(format!("{i:?} is not an input vector of {}", task.name)));
        }
    }
    let branches = (graphs.len() as u128)
        .checked_pow(cfg.depth as u32)
        .and_then(|b| b.checked_mul(inputs.len() as u128))
        .unwrap_or(u128::MAX);
    if branches > cfg.cap {
        return Err(Error::Capacity {
            what: format!("exploration of {} at depth {}", task.name, cfg.depth),
            count: branches,
            cap: cfg.cap,
        });
    }
    let ctx = Ctx {
        proto,
        task,
        graphs: &graphs,
        cfg,
        hook,
    };
    let seeds = Seeds::derive(cfg.seed, n);
    let root = |input: &[Value]| Node {
        states: ProcessId::all(n).map(|p| proto.init(ProcessCtx { pid: p, n, f }, input[p.slot()])).collect(),
        outputs: vec![None; n],
        coins: seeds.streams(),
    };
    let run_one = |k: usize| {
        let mut v = Verdict::default();
        ctx.dfs(&inputs[k], &mut Vec::new(), root(&inputs[k]), &mut v);
        v
    };
    let jobs = cfg.jobs.max(1).min(inputs.len().max(1));
    let parts: Vec<Verdict> = if jobs == 1 {
        (0..inputs.len()).map(run_one).collect()
    } else {
        let next = AtomicUsize::new(0);
        let done: Mutex<BTreeMap<usize, Verdict>> = Mutex::new(BTreeMap::new());
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    if k >= inputs.len() {
                        break;
                    }
                    let v = run_one(k);
                    done.lock().unwrap().insert(k, v);
                });
            }
        });
        done.into_inner().unwrap().into_values().collect()
    };
    let mut total = Verdict::default();
    for v in parts {
        total.merge(v);
    }
    Ok(total)
}

/// `p_1..p_{n-2}` hear each other; nobody else hears `p_{n-1}` or `p_n`, who hear
/// `p_1..p_{n-2}` and themselves. One graph, repeated forever.
pub fn separation_schedule(n: usize, f: usize) -> Result<LassoSchedule> {
    if f < 2 || 2 * f >= n {
        return Err(Error::Precondition(format!("the separation schedule needs 1 < f < n/2 (n = {n}, f = {f})")));
    }
    let core: ProcSet = (1..=n - 2).map(ProcessId::new).collect();
    let sets: Vec<ProcSet> = ProcessId::all(n)
        .map(|p| if core.contains(p) { core } else { core.with(p) })
        .collect();
    let g = CommunicationGraph::from_sets(sets)?;
    LassoSchedule::new(n, f, vec![], vec![g])
}

/// Two candidate names that lead `p_{n-1}` to the same new name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Collision {
    pub a: Value,
    pub b: Value,
    pub name: Value,
}

/// For each candidate `a` at `p_{n-1}` (others named by `fixed_names`, with the
/// last entry at `p_n`), runs `proto` on the separation schedule and returns the
/// first pair of candidates mapped to the same new name.
pub fn find_collision_with<P: HoProtocol>(
    proto: &P,
    n: usize,
    f: usize,
    fixed_names: &[Value],
    candidates: &[Value],
    round_budget: usize,
) -> Result<Option<Collision>> {
    let s = separation_schedule(n, f)?;
    if fixed_names.len() != n - 1 {
        return Err(Error::Precondition(format!("need {} fixed names, got {}", n - 1, fixed_names.len())));
    }
    let names_n = (n + f) as u64;
    if (candidates.len() as u64) < names_n + 1 {
        return Err(Error::Precondition(format!(
            "need at least {} candidates for {names_n} new names, got {}",
            names_n + 1,
            candidates.len()
        )));
    }
    if let Some(c) = candidates.iter().find(|c| fixed_names.contains(c)) {
        return Err(Error::Precondition(format!("candidate {c} is also a fixed name")));
    }
    let target = ProcessId::new(n - 1);
    let mut seen: BTreeMap<Value, Value> = BTreeMap::new();
    for &a in candidates {
        let mut inputs = fixed_names[..n - 2].to_vec();
        inputs.push(a);
        inputs.push(fixed_names[n - 2]);
        let run = trace_ho(proto, &inputs, &s, round_budget)?.run;
        let Some(name) = run.outputs[target.slot()] else {
            return Err(Error::Undecided {
                candidate: a,
                budget: round_budget,
            });
        };
        if let Some(&b) = seen.get(&name) {
            return Ok(Some(Collision { a: b, b: a, name }));
        }
        seen.insert(name, a);
    }
    Ok(None)
}

/// [`find_collision_with`] for a full-information decision rule.
pub fn find_collision<D: ViewDecision>(
    delta: D,
    n: usize,
    f: usize,
    fixed_names: &[Value],
    candidates: &[Value],
    round_budget: usize,
) -> Result<Option<Collision>> {
    find_collision_with(&FullInfo(delta), n, f, fixed_names, candidates, round_budget)
}

/// Views of `p_{n-1}` and `p_n` round by round on the separation schedule.
pub fn separation_views(n: usize, f: usize, names: &[Value], rounds: usize) -> Result<Vec<(View, View)>> {
    let s = separation_schedule(n, f)?;
    let exec = trace_ho(&FullInfo(crate::protocols::MinView), names, &s, rounds)?;
    Ok(exec
        .states
        .iter()
        .map(|row| {
            let v = |p: usize| row[p].as_ref().unwrap().view.clone();
            (v(n - 2), v(n - 1))
        })
        .collect())
}

/// Exchanging `a` and `b` between `p_{n-1}` and `p_n` exchanges their view
/// sequences, up to relabelling the two processes.
pub fn check_separation_symmetry(n: usize, f: usize, fixed: &[Value], a: Value, b: Value, rounds: usize) -> Result<bool> {
    let mut ab = fixed.to_vec();
    ab.extend([a, b]);
    let mut ba = fixed.to_vec();
    ba.extend([b, a]);
    if ab.len() != n {
        return Err(Error::Precondition(format!("need {} fixed names, got {}", n - 2, fixed.len())));
    }
    let (x, y) = (ProcessId::new(n - 1), ProcessId::new(n));
    let swap = move |p: ProcessId| {
        if p == x {
            y
        } else if p == y {
            x
        } else {
            p
        }
    };
    let one = separation_views(n, f, &ab, rounds)?;
    let two = separation_views(n, f, &ba, rounds)?;
    Ok(one
        .iter()
        .zip(&two)
        .all(|((u1, v1), (u2, v2))| *u1 == v2.relabel(&swap) && *v1 == u2.relabel(&swap)))
}
