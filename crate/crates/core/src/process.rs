//! Process identities and small process sets.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Largest system size supported by the bitset representation.
pub const MAX_PROCESSES: usize = 64;

/// A process `p_i`, identified by its 1-based position `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(usize);

impl ProcessId {
    /// Builds `p_index`. Panics on index 0; range against `n` is checked by callers that know `n`.
    pub fn new(index: usize) -> Self {
        assert!(
            (1..=MAX_PROCESSES).contains(&index),
            "process index {index} out of range"
        );
        ProcessId(index)
    }

    /// From a 0-based slot.
    pub fn from_slot(slot: usize) -> Self {
        ProcessId::new(slot + 1)
    }

    /// 1-based index.
    pub fn index(self) -> usize {
        self.0
    }

    /// 0-based slot, for indexing per-process vectors.
    pub fn slot(self) -> usize {
        self.0 - 1
    }

    /// Iterates `p_1..=p_n`.
    pub fn all(n: usize) -> impl Iterator<Item = ProcessId> + Clone {
        (1..=n).map(ProcessId::new)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Set of processes stored as a 64-bit mask. Bit `k` stands for `p_{k+1}`.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcSet(u64);

impl ProcSet {
    pub const EMPTY: ProcSet = ProcSet(0);

    pub fn from_bits(bits: u64) -> Self {
        ProcSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    /// `{p_1, …, p_n}`.
    pub fn full(n: usize) -> Self {
        if n >= 64 {
            ProcSet(u64::MAX)
        } else {
            ProcSet((1u64 << n) - 1)
        }
    }

    pub fn singleton(p: ProcessId) -> Self {
        ProcSet(1u64 << p.slot())
    }

    pub fn contains(self, p: ProcessId) -> bool {
        self.0 & (1u64 << p.slot()) != 0
    }

    pub fn insert(&mut self, p: ProcessId) {
        self.0 |= 1u64 << p.slot();
    }

    pub fn remove(&mut self, p: ProcessId) {
        self.0 &= !(1u64 << p.slot());
    }

    pub fn with(mut self, p: ProcessId) -> Self {
        self.insert(p);
        self
    }

    pub fn without(mut self, p: ProcessId) -> Self {
        self.remove(p);
        self
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: ProcSet) -> ProcSet {
        ProcSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ProcSet) -> ProcSet {
        ProcSet(self.0 & other.0)
    }

    pub fn difference(self, other: ProcSet) -> ProcSet {
        ProcSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: ProcSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Members in increasing index order.
    pub fn iter(self) -> impl Iterator<Item = ProcessId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let slot = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(ProcessId::from_slot(slot))
        })
    }

    /// Highest member index, or 0 when empty.
    pub fn max_index(self) -> usize {
        64 - self.0.leading_zeros() as usize
    }
}

impl FromIterator<ProcessId> for ProcSet {
    fn from_iter<I: IntoIterator<Item = ProcessId>>(iter: I) -> Self {
        let mut s = ProcSet::EMPTY;
        for p in iter {
            s.insert(p);
        }
        s
    }
}

impl fmt::Debug for ProcSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|p| p.index())).finish()
    }
}

impl Serialize for ProcSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter().map(|p| p.index()))
    }
}

impl<'de> Deserialize<'de> for ProcSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let ids = Vec::<usize>::deserialize(deserializer)?;
        let mut s = ProcSet::EMPTY;
        for id in ids {
            if !(1..=MAX_PROCESSES).contains(&id) {
                return Err(serde::de::Error::custom(format!(
                    "process index {id} out of range"
                )));
            }
            s.insert(ProcessId::new(id));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_operations() {
        let a: ProcSet = [1, 3].into_iter().map(ProcessId::new).collect();
        let b = ProcSet::singleton(ProcessId::new(2));
        assert_eq!(a.union(b), ProcSet::full(3));
        assert_eq!(a.len(), 2);
        assert!(a.contains(ProcessId::new(3)));
        assert!(!a.contains(ProcessId::new(2)));
        assert_eq!(a.iter().map(|p| p.index()).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(a.max_index(), 3);
        assert!(b.is_subset(ProcSet::full(2)));
    }

    #[test]
    fn serde_is_sorted_list() {
        let s: ProcSet = [4, 2].into_iter().map(ProcessId::new).collect();
        assert_eq!(serde_json::to_string(&s).unwrap(), "[2,4]");
        let back: ProcSet = serde_json::from_str("[4,2]").unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<ProcSet>("[0]").is_err());
    }
}
