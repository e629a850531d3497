//! Protocol interfaces for the round-based and asynchronous engines, and local coins.

use std::fmt::Debug;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::process::ProcessId;

/// Input and output values. Initial names, consensus values and new names all fit.
pub type Value = u64;

/// What a process knows about the system it runs in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProcessCtx {
    pub pid: ProcessId,
    pub n: usize,
    pub f: usize,
}

/// A round-based protocol: every round each process sends, receives the messages of
/// its heard-of set, then computes.
///
/// Implementations are deterministic given their state, the received messages and
/// the coin stream. Returning a decision twice is a protocol violation.
pub trait HoProtocol {
    type State: Clone + Debug;
    type Msg: Clone + Debug;

    /// Identifies the decision function; all processes share it.
    fn decision_fn_id(&self) -> String;

    fn init(&self, ctx: ProcessCtx, input: Value) -> Self::State;

    fn send(&self, state: &Self::State, round: usize) -> Self::Msg;

    /// `heard` is sorted by sender and always contains the receiver's own message.
    fn receive(
        &self,
        state: &mut Self::State,
        round: usize,
        heard: &[(ProcessId, Self::Msg)],
        coins: &mut CoinStream,
    ) -> Option<Value>;
}

/// An asynchronous protocol: each atomic step receives a (possibly empty) batch of
/// messages, computes, and broadcasts exactly one message.
pub trait AmpProtocol {
    type State: Clone + Debug;
    type Msg: Clone + Debug;

    fn decision_fn_id(&self) -> String;

    fn init(&self, ctx: ProcessCtx, input: Value) -> Self::State;

    /// An empty `received` is a receive of `⊥`.
    fn step(
        &self,
        state: &mut Self::State,
        received: &[(ProcessId, Self::Msg)],
        coins: &mut CoinStream,
    ) -> (Self::Msg, Option<Value>);
}

/// A process's private coin: a deterministic stream identified by a seed.
#[derive(Clone, Debug)]
pub struct CoinStream {
    seed: u64,
    rng: ChaCha8Rng,
    flips: u64,
}

impl CoinStream {
    pub fn new(seed: u64) -> Self {
        CoinStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            flips: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of draws consumed so far.
    pub fn flips(&self) -> u64 {
        self.flips
    }

    pub fn next_u64(&mut self) -> u64 {
        self.flips += 1;
        self.rng.next_u64()
    }

    pub fn flip(&mut self) -> bool {
        self.flips += 1;
        self.rng.gen_bool(0.5)
    }

    /// Uniform in `[0, k)`.
    pub fn below(&mut self, k: u64) -> u64 {
        self.flips += 1;
        self.rng.gen_range(0..k)
    }
}

/// Per-process coin seeds.
///
/// [`Seeds::derive`] splits one master seed into disjoint per-process domains, so
/// streams of distinct processes are independent and a run replays from its seeds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    per_process: Vec<u64>,
}

impl Seeds {
    pub fn derive(master: u64, n: usize) -> Self {
        Seeds {
            per_process: (0..n as u64).map(|i| split_seed(master, i)).collect(),
        }
    }

    pub fn explicit(per_process: Vec<u64>) -> Self {
        Seeds { per_process }
    }

    /// Replaces the seed of one process and keeps the others.
    pub fn with_process(mut self, p: ProcessId, seed: u64) -> Self {
        self.per_process[p.slot()] = seed;
        self
    }

    pub fn get(&self, p: ProcessId) -> u64 {
        self.per_process[p.slot()]
    }

    pub fn len(&self) -> usize {
        self.per_process.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_process.is_empty()
    }

    pub fn streams(&self) -> Vec<CoinStream> {
        self.per_process.iter().map(|&s| CoinStream::new(s)).collect()
    }
}

/// SplitMix64 over `(master, domain)`.
pub fn split_seed(master: u64, domain: u64) -> u64 {
    let mut z = master ^ domain.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
