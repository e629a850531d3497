//! Local-coin protocols against a non-adaptive adversary: frozen schedules, Monte
//! Carlo decision estimates, the probabilistic pigeonhole bound and the
//! randomized separation experiment.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::explorer::separation_schedule;
use crate::ho_engine::execute;
use crate::ho_engine::CrashMap;
use crate::process::ProcessId;
use crate::protocol::{split_seed, HoProtocol, ProcessCtx, Seeds, Value};
use crate::run::{Model, Run};
use crate::scalar::Real;
use crate::schedule::LassoSchedule;
use crate::silence::silenced_processes;
use crate::tasks::Task;
use crate::view::{FullInfo, View, ViewDecision};

/// A probability vector over `N` outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution<T>(pub Vec<T>);

impl<T: Real> Distribution<T> {
    /// Checks nonnegativity and normalisation.
    pub fn new(x: Vec<T>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Domain("empty distribution".into()));
        }
        let tol = T::tolerance() * T::from_usize(x.len()).unwrap();
        if x.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::Domain("negative or NaN probability".into()));
        }
        let sum = x.iter().fold(T::zero(), |a, b| a + *b);
        if (sum - T::one()).abs() > tol {
            return Err(Error::Domain(format!("probabilities sum to {sum:?}")));
        }
        let d = Distribution(x);
        debug_assert!(d.norm_sq() + tol >= T::one() / T::from_usize(d.len()).unwrap());
        Ok(d)
    }

    pub fn uniform(n: usize) -> Self {
        Distribution(vec![T::one() / T::from_usize(n).unwrap(); n])
    }

    pub fn point(n: usize, k: usize) -> Self {
        let mut v = vec![T::zero(); n];
        v[k] = T::one();
        Distribution(v)
    }

    /// Uniform point of the simplex (normalised exponentials).
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let s: f64 = e.iter().sum();
        Distribution(e.into_iter().map(|v| T::from_f64_lossy(v / s)).collect())
    }

    /// Empirical distribution of `samples` over outcomes `0..n`.
    pub fn empirical(n: usize, samples: &[usize]) -> Result<Self> {
        let mut c = vec![0usize; n];
        for &s in samples {
            *c.get_mut(s).ok_or_else(|| Error::Domain(format!("outcome {s} outside 0..{n}")))? += 1;
        }
        let total = T::from_usize(samples.len().max(1)).unwrap();
        Ok(Distribution(c.into_iter().map(|k| T::from_usize(k).unwrap() / total).collect()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.0.iter().zip(&other.0).fold(T::zero(), |a, (x, y)| a + *x * *y)
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }
}

/// `max(⌈(1 + 2√N / √(2(1/N − c)))^(N−1)⌉, 2)`: enough distributions over `N`
/// outcomes that two of them have inner product at least `c`.
pub fn pigeonhole_l<T: Real>(n: usize, c: T) -> Result<u64> {
    let nn = T::from_usize(n).ok_or_else(|| Error::Domain("N too large".into()))?;
    if n == 0 || !(c > T::zero()) || c >= T::one() / nn {
        return Err(Error::Domain(format!("need N >= 1 and 0 < c < 1/N (N = {n}, c = {c:?})")));
    }
    let two = T::one() + T::one();
    let base = T::one() + two * nn.sqrt() / (two * (T::one() / nn - c)).sqrt();
    let value = base.powi(n as i32 - 1).ceil();
    let as_f64 = value.to_f64().unwrap_or(f64::INFINITY);
    if !as_f64.is_finite() || as_f64 > u64::MAX as f64 {
        return Err(Error::Capacity {
            what: format!("pigeonhole bound for N = {n}"),
            count: u128::MAX,
            cap: u64::MAX as u128,
        });
    }
    Ok((as_f64 as u64).max(2))
}

/// First pair `(a, b)`, `a < b`, with `x_a · x_b >= c`.
pub fn find_colliding_pair<T: Real>(dists: &[Distribution<T>], c: T) -> Option<(usize, usize)> {
    for a in 0..dists.len() {
        for b in a + 1..dists.len() {
            if dists[a].dot(&dists[b]) >= c {
                return Some((a, b));
            }
        }
    }
    None
}

/// A round schedule fixed, with its hash, before any coin seed is chosen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenSchedule {
    schedule: LassoSchedule,
    hash: String,
}

fn schedule_hash(s: &LassoSchedule) -> String {
    let digest = Sha256::digest(s.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl FrozenSchedule {
    pub fn freeze(schedule: LassoSchedule) -> Self {
        let hash = schedule_hash(&schedule);
        FrozenSchedule { schedule, hash }
    }

    pub fn schedule(&self) -> &LassoSchedule {
        &self.schedule
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Fails if the schedule no longer matches the recorded hash.
    pub fn verify(&self) -> Result<()> {
        if schedule_hash(&self.schedule) != self.hash {
            return Err(Error::ScheduleMutated);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("frozen schedule serializes")
    }

    /// Loads a record; the hash is checked before any use.
    pub fn from_json(text: &str) -> Result<Self> {
        let f: FrozenSchedule = serde_json::from_str(text)?;
        f.verify()?;
        Ok(f)
    }
}

/// One run with the given coin seeds on a frozen schedule.
pub fn run_randomized<P: HoProtocol>(proto: &P, inputs: &[Value], s: &FrozenSchedule, seeds: &Seeds, budget: usize) -> Result<Run> {
    s.verify()?;
    let n = s.schedule.n();
    if seeds.len() != n {
        return Err(Error::Precondition(format!("{} seeds for n = {n}", seeds.len())));
    }
    Ok(execute(proto, inputs, &s.schedule, &CrashMap::none(n), seeds, Model::Ho, budget)?.run)
}

/// Binomial proportion with a 95% Wilson interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub trials: u64,
    pub successes: u64,
    pub p_hat: f64,
    pub low: f64,
    pub high: f64,
}

impl Estimate {
    pub fn new(successes: u64, trials: u64) -> Self {
        let nn = trials.max(1) as f64;
        let p = successes as f64 / nn;
        let z = 1.959964_f64;
        let denom = 1.0 + z * z / nn;
        let centre = (p + z * z / (2.0 * nn)) / denom;
        let half = z * (p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)).sqrt() / denom;
        Estimate {
            trials,
            successes,
            p_hat: p,
            low: (centre - half).max(0.0),
            high: (centre + half).min(1.0),
        }
    }

    /// Standard error of `p_hat`.
    pub fn sigma(&self) -> f64 {
        (self.p_hat * (1.0 - self.p_hat) / self.trials.max(1) as f64).sqrt()
    }
}

/// Fraction of trials in which every process that must decide does so within
/// `budget` rounds: everybody under `Model::Ho`, the non-silenced under
/// `Model::Sfho`. Any output vector outside the task is an error.
pub fn estimate_decision_prob<P: HoProtocol>(
    proto: &P,
    task: &Task,
    inputs: &[Value],
    s: &FrozenSchedule,
    model: Model,
    trials: u64,
    budget: usize,
    master_seed: u64,
) -> Result<Estimate> {
    if trials == 0 {
        return Err(Error::Precondition("need at least one trial".into()));
    }
    let n = s.schedule.n();
    let must = match model {
        Model::Sfho => crate::process::ProcSet::full(n).difference(silenced_processes(&s.schedule)),
        Model::Ho => crate::process::ProcSet::full(n),
        other => return Err(Error::Precondition(format!("decision estimates are round-based, not {other:?}"))),
    };
    let mut ok = 0;
    for t in 0..trials {
        let seeds = Seeds::derive(split_seed(master_seed, t), n);
        let run = run_randomized(proto, inputs, s, &seeds, budget)?;
        if !task.check_output(inputs, &run.outputs)? {
            return Err(Error::Safety(format!("trial {t}: outputs {:?} violate {} on {inputs:?}", run.outputs, task.name)));
        }
        if must.iter().all(|p| run.outputs[p.slot()].is_some()) {
            ok += 1;
        }
    }
    Ok(Estimate::new(ok, trials))
}

/// Decides the round-1 minimum at the first round whose coin shows heads.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeadsThenMin;

impl ViewDecision for HeadsThenMin {
    fn id(&self) -> String {
        "heads-then-min".into()
    }

    fn coins_per_round(&self) -> usize {
        1
    }

    fn decide(&self, _ctx: ProcessCtx, view: &View) -> Option<Value> {
        let heads = view.coins().first().is_some_and(|c| c & 1 == 1);
        (view.round() >= 1 && heads).then(|| view.round_one_inputs().into_iter().min().unwrap())
    }
}

/// Anonymous toy rule in round 1: the `r`-th smallest of the names heard keeps
/// name `r` when `r <= reserved`; otherwise a uniformly random name in
/// `reserved + 1 ..= names`.
#[derive(Clone, Copy, Debug)]
pub struct RankOrRandomName {
    pub reserved: u64,
    pub names: u64,
}

impl ViewDecision for RankOrRandomName {
    fn id(&self) -> String {
        format!("rank-or-random-{}-{}", self.reserved, self.names)
    }

    fn coins_per_round(&self) -> usize {
        1
    }

    fn decide(&self, _ctx: ProcessCtx, view: &View) -> Option<Value> {
        let a = view.anonymous();
        if a.round() != 1 {
            return None;
        }
        let rank = a.others().iter().filter(|o| o.input() < a.input()).count() as u64 + 1;
        if rank <= self.reserved {
            return Some(rank);
        }
        let k = self.names - self.reserved;
        Some(self.reserved + 1 + a.coins()[0] % k)
    }
}

/// Result of the randomized separation experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparationReport {
    pub n: usize,
    pub f: usize,
    /// Names left for `p_{n-1}` and `p_n`: `N - (n - 2)`.
    pub k: usize,
    pub c: f64,
    pub bound: u64,
    pub schedule_hash: String,
    pub candidates_examined: usize,
    pub pair: (Value, Value),
    pub estimated_overlap: f64,
    pub trials: u64,
    pub collisions: u64,
    pub frequency: f64,
    pub sigma: f64,
    pub undecided: u64,
    pub delta_violations: u64,
    /// Correlation of the two processes' names given the fixed core coins.
    pub correlation: f64,
}

/// Experiment parameters.
#[derive(Clone, Debug)]
pub struct SeparationConfig {
    pub n: usize,
    pub f: usize,
    /// Names of `p_1..p_{n-2}`.
    pub core_names: Vec<Value>,
    /// Names tried at `p_{n-1}`, in order.
    pub candidates: Vec<Value>,
    /// Runs per candidate when estimating its name distribution.
    pub samples: u64,
    pub trials: u64,
    pub budget: usize,
    pub master_seed: u64,
}

/// On the frozen separation schedule, with the core processes' coins fixed:
/// estimates the name distribution of `p_{n-1}` for each candidate until two
/// candidates overlap by at least `1/(2k)`, then measures how often `p_{n-1}`
/// and `p_n` collide when given that pair with independent coins.
///
/// Each trial checks the task on the outputs with either separated process
/// removed; the collision between them is what the experiment counts.
pub fn randomized_separation<D: ViewDecision>(delta: D, task: &Task, cfg: &SeparationConfig) -> Result<SeparationReport> {
    let (n, f) = (cfg.n, cfg.f);
    let frozen = FrozenSchedule::freeze(separation_schedule(n, f)?);
    if cfg.core_names.len() != n - 2 {
        return Err(Error::Precondition(format!("need {} core names", n - 2)));
    }
    let names = (n + f) as u64;
    let k = (names - (n as u64 - 2)) as usize;
    let c = 1.0 / (2.0 * k as f64);
    let bound = pigeonhole_l(k, c)?;
    let proto = FullInfo(delta);
    let core_seed = split_seed(cfg.master_seed, 0);
    let seeds_for = |x: u64, y: u64| {
        let mut s: Vec<u64> = (0..n - 2).map(|i| split_seed(core_seed, i as u64)).collect();
        s.extend([x, y]);
        Seeds::explicit(s)
    };
    let (x, y) = (ProcessId::new(n - 1), ProcessId::new(n));
    let outcome = |v: Value| -> Result<usize> {
        let lo = names - k as u64 + 1;
        if v < lo || v > names {
            return Err(Error::Domain(format!("separated process decided {v}, outside {lo}..={names}")));
        }
        Ok((v - lo) as usize)
    };
    let mut inputs = cfg.core_names.clone();
    inputs.extend([0, 0]);
    let mut dists: Vec<Distribution<f64>> = Vec::new();
    let mut pair = None;
    let mut examined = 0;
    for (idx, &a) in cfg.candidates.iter().enumerate() {
        examined += 1;
        inputs[n - 2] = a;
        // p_n's name is irrelevant to p_{n-1}'s views; a placeholder distinct from a
        inputs[n - 1] = a + 1;
        let mut samples = Vec::with_capacity(cfg.samples as usize);
        for t in 0..cfg.samples {
            let seeds = seeds_for(split_seed(cfg.master_seed, 1 + (idx as u64) * cfg.samples + t), 0);
            let run = run_randomized(&proto, &inputs, &frozen, &seeds, cfg.budget)?;
            let Some(v) = run.outputs[x.slot()] else {
                return Err(Error::Undecided { candidate: a, budget: cfg.budget });
            };
            samples.push(outcome(v)?);
        }
        let d = Distribution::empirical(k, &samples)?;
        if let Some(j) = dists.iter().position(|e| e.dot(&d) >= c) {
            pair = Some((cfg.candidates[j], a, dists[j].dot(&d)));
            break;
        }
        dists.push(d);
        if examined as u64 >= bound {
            break;
        }
    }
    let Some((a, b, overlap)) = pair else {
        return Err(Error::Precondition(format!(
            "no pair with overlap {c} among {examined} candidates (bound {bound})"
        )));
    };
    inputs[n - 2] = a;
    inputs[n - 1] = b;
    let (mut collisions, mut undecided, mut violations) = (0u64, 0u64, 0u64);
    let (mut sx, mut sy, mut sxy, mut sxx, mut syy, mut decided) = (0.0, 0.0, 0.0, 0.0, 0.0, 0u64);
    let trial_base = split_seed(cfg.master_seed, u64::MAX);
    for t in 0..cfg.trials {
        let seeds = seeds_for(split_seed(trial_base, 2 * t), split_seed(trial_base, 2 * t + 1));
        let run = run_randomized(&proto, &inputs, &frozen, &seeds, cfg.budget)?;
        let (ox, oy) = (run.outputs[x.slot()], run.outputs[y.slot()]);
        for drop in [x, y] {
            let mut o = run.outputs.clone();
            o[drop.slot()] = None;
            if !task.check_output(&inputs, &o)? {
                violations += 1;
            }
        }
        match (ox, oy) {
            (Some(u), Some(v)) => {
                collisions += u64::from(u == v);
                let (u, v) = (u as f64, v as f64);
                sx += u;
                sy += v;
                sxy += u * v;
                sxx += u * u;
                syy += v * v;
                decided += 1;
            }
            _ => undecided += 1,
        }
    }
    let m = decided.max(1) as f64;
    let cov = sxy / m - (sx / m) * (sy / m);
    let var = (sxx / m - (sx / m).powi(2)) * (syy / m - (sy / m).powi(2));
    let correlation = if var > 0.0 { cov / var.sqrt() } else { 0.0 };
    let est = Estimate::new(collisions, cfg.trials);
    Ok(SeparationReport {
        n,
        f,
        k,
        c,
        bound,
        schedule_hash: frozen.hash().to_string(),
        candidates_examined: examined,
        pair: (a, b),
        estimated_overlap: overlap,
        trials: cfg.trials,
        collisions,
        frequency: est.p_hat,
        sigma: est.sigma(),
        undecided,
        delta_violations: violations,
        correlation,
    })
}
