//! Runs produced by the engines, and validity reports.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::process::{ProcSet, ProcessId};
use crate::protocol::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Model {
    Amp,
    Ho,
    Sfho,
    Cfho,
    Flp,
}

impl Model {
    pub fn is_round_based(self) -> bool {
        matches!(self, Model::Ho | Model::Sfho | Model::Cfho)
    }
}

/// Names a message: the sender and its round (round-based models) or its send
/// sequence number (asynchronous models).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MsgId {
    pub from: ProcessId,
    pub tag: usize,
}

/// One event. `at` is the round (1-based) or the global step index (0-based).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Send {
        process: ProcessId,
        at: usize,
        id: MsgId,
        payload: String,
    },
    /// An empty `messages` list is a receive of `⊥`.
    Receive {
        process: ProcessId,
        at: usize,
        messages: Vec<MsgId>,
    },
    Decide {
        process: ProcessId,
        at: usize,
        value: Value,
    },
}

impl Event {
    pub fn process(&self) -> ProcessId {
        match self {
            Event::Send { process, .. } | Event::Receive { process, .. } | Event::Decide { process, .. } => *process,
        }
    }

    pub fn at(&self) -> usize {
        match self {
            Event::Send { at, .. } | Event::Receive { at, .. } | Event::Decide { at, .. } => *at,
        }
    }
}

/// Round-`round` sends and receives, reconstructed from a round-based run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HoRoundRecord {
    pub round: usize,
    pub sent: Vec<Option<String>>,
    pub received: Vec<Option<Vec<MsgId>>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub model: Model,
    pub n: usize,
    pub f: usize,
    pub inputs: Vec<Value>,
    pub outputs: Vec<Option<Value>>,
    /// Round or step index of each decision.
    pub decided_at: Vec<Option<usize>>,
    pub faulty: ProcSet,
    /// Rounds executed (round-based) or steps executed (asynchronous).
    pub length: usize,
    pub events: Vec<Event>,
}

impl Run {
    pub fn new(model: Model, n: usize, f: usize, inputs: Vec<Value>) -> Run {
        Run {
            model,
            n,
            f,
            inputs,
            outputs: vec![None; n],
            decided_at: vec![None; n],
            faulty: ProcSet::EMPTY,
            length: 0,
            events: Vec::new(),
        }
    }

    /// Records a decision event, rejecting a second decision by the same process.
    pub fn record_decision(&mut self, p: ProcessId, at: usize, value: Value) -> Result<()> {
        if self.outputs[p.slot()].is_some() {
            return Err(crate::Error::ProtocolViolation {
                process: p,
                at,
                reason: "decided twice".into(),
            });
        }
        self.outputs[p.slot()] = Some(value);
        self.decided_at[p.slot()] = Some(at);
        self.events.push(Event::Decide { process: p, at, value });
        Ok(())
    }

    pub fn non_faulty(&self) -> ProcSet {
        ProcSet::full(self.n).difference(self.faulty)
    }

    /// Every non-faulty process has decided.
    pub fn all_non_faulty_decided(&self) -> bool {
        self.non_faulty().iter().all(|p| self.outputs[p.slot()].is_some())
    }

    pub fn undecided(&self) -> ProcSet {
        ProcessId::all(self.n).filter(|p| self.outputs[p.slot()].is_none()).collect()
    }

    pub fn decided_values(&self) -> std::collections::BTreeSet<Value> {
        self.outputs.iter().flatten().copied().collect()
    }

    /// Per-round records of a round-based run.
    pub fn ho_rounds(&self) -> Vec<HoRoundRecord> {
        let mut out: Vec<HoRoundRecord> = (1..=self.length)
            .map(|round| HoRoundRecord {
                round,
                sent: vec![None; self.n],
                received: vec![None; self.n],
            })
            .collect();
        for e in &self.events {
            match e {
                Event::Send { process, at, payload, .. } if *at >= 1 && *at <= self.length => {
                    out[at - 1].sent[process.slot()] = Some(payload.clone());
                }
                Event::Receive { process, at, messages } if *at >= 1 && *at <= self.length => {
                    out[at - 1].received[process.slot()] = Some(messages.clone());
                }
                _ => {}
            }
        }
        out
    }

    /// Events that belong to `p`, in order.
    pub fn local_events(&self, p: ProcessId) -> Vec<&Event> {
        self.events.iter().filter(|e| e.process() == p).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run serializes")
    }

    pub fn from_json(text: &str) -> Result<Run> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    WeakLiveness,
    Integrity,
    NoDuplicates,
    NonFaultyLiveness,
    FaultyQuasiLiveness,
    /// The point-to-point variant: every message to a non-faulty process arrives.
    FullLiveness,
    Lemma2,
    Lemma3,
    Lemma6,
    Precondition,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub process: Option<ProcessId>,
    pub at: usize,
    pub detail: String,
}

/// Outcome of a checker: how many conditions were evaluated and which failed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn pass(&mut self) {
        self.checked += 1;
    }

    pub fn fail(&mut self, kind: ViolationKind, process: Option<ProcessId>, at: usize, detail: impl Into<String>) {
        self.checked += 1;
        self.violations.push(Violation {
            kind,
            process,
            at,
            detail: detail.into(),
        });
    }

    /// Records a pass or a failure depending on `ok`.
    pub fn check(&mut self, ok: bool, kind: ViolationKind, process: Option<ProcessId>, at: usize, detail: impl FnOnce() -> String) {
        if ok {
            self.pass();
        } else {
            self.fail(kind, process, at, detail());
        }
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn merge(&mut self, other: ValidityReport) {
        self.checked += other.checked;
        self.violations.extend(other.violations);
    }
}
