//! Tasks as input/output relations with `⊥`-closure, the colorless test, and the
//! concrete tasks and protocols used throughout.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::Value;
use crate::protocols::{MinConsensus, RenamingAmp};

/// The output relation, as a named predicate or as explicit pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case")]
pub enum TaskKind {
    /// All decided values equal one input value.
    Consensus,
    /// At most `k` distinct decided values, all input values.
    SetAgreement { k: usize },
    /// Distinct new names in `[1, new_names]`.
    Renaming { new_names: u64 },
    /// Set agreement where `p_i` may only decide values at most its own input.
    LowerSetAgreement { k: usize },
    /// Every process may decide the single value `output`.
    Trivial { output: Value },
    /// Full-vector pairs; partial vectors are valid if some pair extends them.
    Explicit { pairs: BTreeSet<(Vec<Value>, Vec<Value>)> },
}

/// Which input vectors the task admits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSet {
    /// Every vector over the input alphabet.
    All,
    /// Vectors with pairwise distinct entries.
    Distinct,
    Explicit(BTreeSet<Vec<Value>>),
}

/// How a task's colorless status is known.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorlessFlag {
    Declared,
    Verified,
    Colored,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub n: usize,
    pub input_alphabet: Vec<Value>,
    /// Output values; `⊥` is implicit.
    pub output_alphabet: Vec<Value>,
    pub inputs: InputSet,
    pub kind: TaskKind,
    pub colorless: ColorlessFlag,
}

/// Default bound on `|𝓘| · |𝓞|` for [`is_colorless`].
pub const DEFAULT_COLORLESS_CAP: u128 = 50_000_000;

fn values_of(o: &[Option<Value>]) -> BTreeSet<Value> {
    o.iter().flatten().copied().collect()
}

impl Task {
    pub fn contains_input(&self, input: &[Value]) -> bool {
        if input.len() != self.n || !input.iter().all(|x| self.input_alphabet.contains(x)) {
            return false;
        }
        match &self.inputs {
            InputSet::All => true,
            InputSet::Distinct => input.iter().collect::<BTreeSet<_>>().len() == input.len(),
            InputSet::Explicit(set) => set.contains(input),
        }
    }

    /// The input vectors in lexicographic order.
    pub fn input_vectors(&self) -> Vec<Vec<Value>> {
        if let InputSet::Explicit(set) = &self.inputs {
            return set.iter().cloned().collect();
        }
        let mut alphabet = self.input_alphabet.clone();
        alphabet.sort();
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(self.n);
        fn rec(t: &Task, alphabet: &[Value], cur: &mut Vec<Value>, out: &mut Vec<Vec<Value>>) {
            if cur.len() == t.n {
                if t.contains_input(cur) {
                    out.push(cur.clone());
                }
                return;
            }
            for &x in alphabet {
                if t.inputs == InputSet::Distinct && cur.contains(&x) {
                    continue;
                }
                cur.push(x);
                rec(t, alphabet, cur, out);
                cur.pop();
            }
        }
        rec(self, &alphabet, &mut cur, &mut out);
        out
    }

    pub fn input_count(&self) -> u128 {
        let a = self.input_alphabet.len() as u128;
        match &self.inputs {
            InputSet::All => a.pow(self.n as u32),
            InputSet::Distinct => (0..self.n as u128).map(|k| a.saturating_sub(k)).product(),
            InputSet::Explicit(set) => set.len() as u128,
        }
    }

    /// All output vectors over the output alphabet with `⊥`.
    pub fn output_vectors(&self) -> Vec<Vec<Option<Value>>> {
        let mut options: Vec<Option<Value>> = vec![None];
        options.extend(self.output_alphabet.iter().map(|&v| Some(v)));
        let mut out = vec![Vec::new()];
        for _ in 0..self.n {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<Option<Value>>| {
                    options.iter().map(move |o| {
                        let mut v = prefix.clone();
                        v.push(*o);
                        v
                    })
                })
                .collect();
        }
        out
    }

    /// Relation on full vectors.
    fn full_valid(&self, input: &[Value], output: &[Value]) -> bool {
        if !output.iter().all(|o| self.output_alphabet.contains(o)) {
            return false;
        }
        let o: Vec<Option<Value>> = output.iter().map(|&v| Some(v)).collect();
        self.partial_valid(input, &o)
    }

    /// Relation on partial vectors, `⊥`-closure included.
    fn partial_valid(&self, input: &[Value], output: &[Option<Value>]) -> bool {
        if output.len() != self.n {
            return false;
        }
        if !output.iter().flatten().all(|o| self.output_alphabet.contains(o)) {
            return false;
        }
        let vals = values_of(output);
        let inputs: BTreeSet<Value> = input.iter().copied().collect();
        let undecided = output.iter().filter(|o| o.is_none()).count();
        let fillable_from_inputs = inputs.iter().any(|v| self.output_alphabet.contains(v));
        match &self.kind {
            TaskKind::Consensus => {
                vals.len() <= 1 && vals.is_subset(&inputs) && (!vals.is_empty() || undecided == 0 || fillable_from_inputs)
            }
            TaskKind::SetAgreement { k } => {
                vals.len() <= *k && vals.is_subset(&inputs) && (!vals.is_empty() || undecided == 0 || (fillable_from_inputs && *k >= 1))
            }
            TaskKind::Renaming { new_names } => {
                let decided = self.n - undecided;
                vals.len() == decided
                    && vals.iter().all(|&v| (1..=*new_names).contains(&v))
                    && (undecided as u64) <= new_names - decided as u64
            }
            TaskKind::LowerSetAgreement { k } => {
                let own_ok = output
                    .iter()
                    .zip(input)
                    .all(|(o, &x)| o.is_none_or(|v| v <= x && inputs.contains(&v)));
                let lowest = *inputs.iter().next().unwrap();
                let needs_new = output
                    .iter()
                    .zip(input)
                    .any(|(o, &x)| o.is_none() && !vals.iter().any(|&v| v <= x));
                let extra = usize::from(needs_new && self.output_alphabet.contains(&lowest));
                own_ok && vals.len() + extra <= *k && (!needs_new || extra == 1)
            }
            TaskKind::Trivial { output: v } => vals.iter().all(|x| x == v),
            TaskKind::Explicit { pairs } => pairs.iter().any(|(i, o)| {
                i.as_slice() == input && o.iter().zip(output).all(|(full, part)| part.is_none_or(|p| p == *full))
            }),
        }
    }

    /// `(I, O) ∈ Δ`, with `⊥` entries allowed in `O`.
    pub fn check_output(&self, input: &[Value], output: &[Option<Value>]) -> Result<bool> {
        if !self.contains_input(input) {
            return Err(Error::Domain(format!("{input:?} is not an input vector of {}", self.name)));
        }
        Ok(self.partial_valid(input, output))
    }

    /// The same relation decided by searching completions of the `⊥` entries.
    pub fn check_output_by_completion(&self, input: &[Value], output: &[Option<Value>]) -> Result<bool> {
        if !self.contains_input(input) {
            return Err(Error::Domain(format!("{input:?} is not an input vector of {}", self.name)));
        }
        fn rec(t: &Task, input: &[Value], partial: &mut Vec<Value>, output: &[Option<Value>]) -> bool {
            let k = partial.len();
            if k == output.len() {
                return t.full_valid(input, partial);
            }
            let choices: Vec<Value> = match output[k] {
                Some(v) => vec![v],
                None => t.output_alphabet.clone(),
            };
            choices.into_iter().any(|v| {
                partial.push(v);
                let ok = rec(t, input, partial, output);
                partial.pop();
                ok
            })
        }
        Ok(rec(self, input, &mut Vec::new(), output))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("task serializes")
    }

    pub fn from_json(text: &str) -> Result<Task> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Brute-force test of the colorless condition over all input and output vectors.
pub fn is_colorless(t: &Task) -> Result<bool> {
    is_colorless_capped(t, DEFAULT_COLORLESS_CAP)
}

pub fn is_colorless_capped(t: &Task, cap: u128) -> Result<bool> {
    let outputs_count = (t.output_alphabet.len() as u128 + 1).pow(t.n as u32);
    let count = t.input_count().saturating_mul(outputs_count);
    if count > cap {
        return Err(Error::Capacity {
            what: format!("colorless check of {}", t.name),
            count,
            cap,
        });
    }
    let inputs = t.input_vectors();
    let outputs = t.output_vectors();
    let in_vals: Vec<BTreeSet<Value>> = inputs.iter().map(|i| i.iter().copied().collect()).collect();
    let out_vals: Vec<BTreeSet<Value>> = outputs.iter().map(|o| values_of(o)).collect();
    for (a, i) in inputs.iter().enumerate() {
        for (b, o) in outputs.iter().enumerate() {
            if !t.partial_valid(i, o) {
                continue;
            }
            for (c, i2) in inputs.iter().enumerate() {
                if in_vals[a].is_subset(&in_vals[c]) && !t.partial_valid(i2, o) {
                    return Ok(false);
                }
            }
            for (d, o2) in outputs.iter().enumerate() {
                if out_vals[d].is_subset(&out_vals[b]) && !t.partial_valid(i, o2) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

fn check_values(n: usize, values: &[Value]) -> Result<Vec<Value>> {
    if n == 0 || values.is_empty() {
        return Err(Error::Precondition("need n >= 1 and a nonempty value set".into()));
    }
    let mut v = values.to_vec();
    v.sort();
    v.dedup();
    Ok(v)
}

pub fn make_consensus(n: usize, values: &[Value]) -> Result<Task> {
    let v = check_values(n, values)?;
    Ok(Task {
        name: format!("consensus-{n}"),
        n,
        input_alphabet: v.clone(),
        output_alphabet: v,
        inputs: InputSet::All,
        kind: TaskKind::Consensus,
        colorless: ColorlessFlag::Declared,
    })
}

pub fn make_kset(n: usize, k: usize, values: &[Value]) -> Result<Task> {
    let v = check_values(n, values)?;
    if k == 0 {
        return Err(Error::Precondition("k-set agreement needs k >= 1".into()));
    }
    Ok(Task {
        name: format!("{k}-set-agreement-{n}"),
        n,
        input_alphabet: v.clone(),
        output_alphabet: v,
        inputs: InputSet::All,
        kind: TaskKind::SetAgreement { k },
        colorless: ColorlessFlag::Declared,
    })
}

/// Renaming from initial names `[1, m]` to new names `[1, new_names]`.
pub fn make_renaming(n: usize, m: u64, new_names: u64) -> Result<Task> {
    if m <= new_names {
        return Err(Error::Precondition(format!("initial name space {m} must exceed the new one {new_names}")));
    }
    if (new_names as usize) < n || (m as usize) < n {
        return Err(Error::Precondition(format!("{n} processes cannot get distinct names from {new_names}")));
    }
    Ok(Task {
        name: format!("renaming-{n}-{m}-{new_names}"),
        n,
        input_alphabet: (1..=m).collect(),
        output_alphabet: (1..=new_names).collect(),
        inputs: InputSet::Distinct,
        kind: TaskKind::Renaming { new_names },
        colorless: ColorlessFlag::Colored,
    })
}

/// `k`-set agreement where each process decides an input value no larger than its
/// own input. Colored: the admissible outputs of `p_i` depend on `p_i`'s input.
pub fn make_lower_kset(n: usize, k: usize, values: &[Value]) -> Result<Task> {
    let v = check_values(n, values)?;
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    Ok(Task {
        name: format!("lower-{k}-set-agreement-{n}"),
        n,
        input_alphabet: v.clone(),
        output_alphabet: v,
        inputs: InputSet::All,
        kind: TaskKind::LowerSetAgreement { k },
        colorless: ColorlessFlag::Colored,
    })
}

pub fn make_trivial(n: usize, values: &[Value], output: Value) -> Result<Task> {
    let v = check_values(n, values)?;
    Ok(Task {
        name: format!("trivial-{n}"),
        n,
        input_alphabet: v,
        output_alphabet: vec![output],
        inputs: InputSet::All,
        kind: TaskKind::Trivial { output },
        colorless: ColorlessFlag::Declared,
    })
}

/// Replaces a declared flag by the verdict of [`is_colorless`].
pub fn verify_colorless(mut t: Task) -> Result<Task> {
    t.colorless = if is_colorless(&t)? {
        ColorlessFlag::Verified
    } else {
        ColorlessFlag::Colored
    };
    Ok(t)
}

/// One round of exchanging inputs, deciding the minimum: `(n-1)`-set agreement
/// whenever every process misses at most `n - 2` messages.
pub fn min_set_agreement_protocol(_n: usize) -> MinConsensus {
    MinConsensus
}

pub fn renaming_amp_protocol(n: usize, f: usize) -> Result<RenamingAmp> {
    if n <= 2 * f {
        return Err(Error::Precondition(format!("renaming needs n > 2f (n = {n}, f = {f})")));
    }
    Ok(RenamingAmp::new(n, f))
}

/// Initial names must be pairwise distinct.
pub fn check_distinct_names(names: &[Value]) -> Result<()> {
    let set: BTreeSet<&Value> = names.iter().collect();
    if set.len() != names.len() {
        return Err(Error::Domain(format!("duplicate initial names in {names:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_tasks() -> Vec<Task> {
        vec![
            make_consensus(3, &[1, 2]).unwrap(),
            make_kset(3, 2, &[0, 1, 2]).unwrap(),
            make_renaming(3, 5, 4).unwrap(),
            make_lower_kset(3, 2, &[0, 1, 2]).unwrap(),
            make_trivial(3, &[0, 1], 0).unwrap(),
        ]
    }

    #[test]
    fn consensus_examples() {
        let t = make_consensus(3, &[1, 2]).unwrap();
        assert!(t.check_output(&[1, 2, 2], &[Some(2), Some(2), Some(2)]).unwrap());
        assert!(t.check_output(&[1, 2, 2], &[Some(2), None, Some(2)]).unwrap());
        assert!(!t.check_output(&[1, 2, 2], &[Some(1), Some(2), Some(2)]).unwrap());
        assert!(t.check_output(&[1, 3, 2], &[None; 3]).is_err());
        assert_eq!(make_consensus(3, &[0, 1]).unwrap().input_vectors().len(), 8);
    }

    #[test]
    fn partial_predicates_match_completion_search() {
        for t in all_tasks() {
            for i in t.input_vectors() {
                for o in t.output_vectors() {
                    assert_eq!(
                        t.check_output(&i, &o).unwrap(),
                        t.check_output_by_completion(&i, &o).unwrap(),
                        "{} {i:?} {o:?}",
                        t.name
                    );
                }
            }
        }
    }

    #[test]
    fn bottom_closure_and_totality() {
        for t in all_tasks() {
            for i in t.input_vectors() {
                assert!(t.check_output(&i, &vec![None; t.n]).unwrap(), "{} not total", t.name);
                for o in t.output_vectors() {
                    if !t.check_output(&i, &o).unwrap() {
                        continue;
                    }
                    for k in 0..t.n {
                        let mut o2 = o.clone();
                        o2[k] = None;
                        assert!(t.check_output(&i, &o2).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn colorless_classification() {
        assert!(is_colorless(&make_consensus(3, &[0, 1]).unwrap()).unwrap());
        assert!(is_colorless(&make_kset(3, 2, &[0, 1, 2]).unwrap()).unwrap());
        assert!(is_colorless(&make_trivial(3, &[0, 1], 0).unwrap()).unwrap());
        assert!(!is_colorless(&make_renaming(3, 6, 4).unwrap()).unwrap());
        assert!(!is_colorless(&make_lower_kset(3, 2, &[0, 1, 2]).unwrap()).unwrap());
        let t = make_renaming(5, 11, 7).unwrap();
        assert!(matches!(is_colorless_capped(&t, 1000), Err(Error::Capacity { .. })));
    }

    #[test]
    fn constructor_parameters() {
        let t = make_renaming(5, 11, 7).unwrap();
        assert_eq!(t.input_alphabet.len(), 11);
        assert_eq!(t.output_alphabet.len(), 7);
        assert!(make_renaming(3, 4, 4).is_err());
        let k = make_kset(4, 3, &[0, 1, 2, 3]).unwrap();
        assert!(k.check_output(&[0, 1, 2, 3], &[Some(0), Some(1), Some(2), Some(2)]).unwrap());
        assert!(!k.check_output(&[0, 1, 2, 3], &[Some(0), Some(1), Some(2), Some(3)]).unwrap());
        assert!(check_distinct_names(&[5, 9, 5]).is_err());
        assert!(renaming_amp_protocol(4, 2).is_err());
    }

    #[test]
    fn explicit_task() {
        let pairs = BTreeSet::from([(vec![0, 1], vec![0, 0]), (vec![0, 1], vec![1, 1])]);
        let t = Task {
            name: "explicit".into(),
            n: 2,
            input_alphabet: vec![0, 1],
            output_alphabet: vec![0, 1],
            inputs: InputSet::Explicit(BTreeSet::from([vec![0, 1]])),
            kind: TaskKind::Explicit { pairs },
            colorless: ColorlessFlag::Declared,
        };
        assert!(t.check_output(&[0, 1], &[Some(1), None]).unwrap());
        assert!(!t.check_output(&[0, 1], &[Some(1), Some(0)]).unwrap());
        let back = Task::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn renaming_protocol_stays_within_n_plus_f() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut decided = 0;
        for (n, f) in [(3, 1), (5, 2), (5, 1)] {
            let task = make_renaming(n, 11, (n + f) as u64).unwrap();
            let proto = renaming_amp_protocol(n, f).unwrap();
            for _ in 0..60 {
                let mut names: Vec<Value> = (1..=11).collect();
                names.shuffle(&mut rng);
                names.truncate(n);
                let s = crate::amp_engine::random_fair_amp(n, f, 3 * n, &mut rng);
                let run = crate::amp_engine::run_amp(&proto, &names, &s, 4000).unwrap();
                assert!(task.check_output(&names, &run.outputs).unwrap(), "{names:?} -> {:?}", run.outputs);
                assert!(run.all_non_faulty_decided(), "{names:?} on {s:?}");
                decided += run.outputs.iter().flatten().count();
            }
        }
        assert!(decided > 0);
    }
}
