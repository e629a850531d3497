use anyhow::{anyhow, bail, Context, Result};
use hoamp::protocols::{AmpAsHo, DecideOwnInput, EchoAmp, EchoHo, LazyMin, MinConsensus, MinView, ModNDelta, RenamingAmp};
use hoamp::sims::{lift_colored_f1, lift_colorless};
use hoamp::tasks::{make_consensus, make_kset, make_lower_kset, make_renaming, make_trivial, Task};
use hoamp::view::FullInfo;
use hoamp::{AmpProtocol, HoProtocol, Value};

pub const HO_PROTOCOLS: &[&str] = &[
    "min-consensus",
    "echo-ho",
    "decide-own",
    "min-view",
    "lazy-min",
    "lifted-min",
    "lifted-lazy-min",
    "mod-n",
    "renaming",
];

pub const AMP_PROTOCOLS: &[&str] = &["echo-amp", "renaming"];

/// Something to do with a round protocol once its concrete type is known.
pub trait HoVisit {
    type Out;
    fn visit<P>(self, proto: &P) -> Self::Out
    where
        P: HoProtocol + Clone + Sync,
        P::State: Send;
}

pub trait AmpVisit {
    type Out;
    fn visit<P>(self, proto: &P) -> Self::Out
    where
        P: AmpProtocol + Clone,
        P::Msg: PartialEq;
}

/// `task` is only needed by the colored lift, which searches for Δ-valid runs.
pub fn with_ho<V: HoVisit>(name: &str, n: usize, f: usize, task: Option<&Task>, v: V) -> Result<V::Out> {
    Ok(match name {
        "min-consensus" => v.visit(&MinConsensus),
        "echo-ho" => v.visit(&EchoHo),
        "decide-own" => v.visit(&DecideOwnInput),
        "min-view" => v.visit(&FullInfo(MinView)),
        "lazy-min" => v.visit(&FullInfo(LazyMin)),
        "lifted-min" => v.visit(&lift_colorless(MinView)),
        "lifted-lazy-min" => {
            let task = task.ok_or_else(|| anyhow!("lifted-lazy-min needs --task"))?;
            v.visit(&lift_colored_f1(LazyMin, task.clone())?)
        }
        "mod-n" => v.visit(&FullInfo(ModNDelta { modulus: (n + f) as u64 })),
        "renaming" => v.visit(&AmpAsHo(RenamingAmp::new(n, f))),
        other => bail!("unknown round protocol {other:?}; expected one of {}", HO_PROTOCOLS.join(", ")),
    })
}

pub fn with_amp<V: AmpVisit>(name: &str, n: usize, f: usize, v: V) -> Result<V::Out> {
    Ok(match name {
        "echo-amp" => v.visit(&EchoAmp),
        "renaming" => v.visit(&RenamingAmp::new(n, f)),
        other => bail!("unknown asynchronous protocol {other:?}; expected one of {}", AMP_PROTOCOLS.join(", ")),
    })
}

/// `consensus`, `kset:K`, `lower-kset:K`, `renaming:M:N`, `trivial:V`, or `@file.json`.
pub fn parse_task(spec: &str, n: usize, values: &[Value]) -> Result<Task> {
    if let Some(path) = spec.strip_prefix('@') {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading task file {path}"))?;
        let t = Task::from_json(&text)?;
        if t.n != n {
            bail!("task file is for n = {}, not {n}", t.n);
        }
        return Ok(t);
    }
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |k: usize| -> Result<u64> {
        parts
            .get(k)
            .ok_or_else(|| anyhow!("task {spec:?} is missing a parameter"))?
            .parse::<u64>()
            .with_context(|| format!("bad number in task {spec:?}"))
    };
    let t = match parts[0] {
        "consensus" => make_consensus(n, values)?,
        "kset" => make_kset(n, num(1)? as usize, values)?,
        "lower-kset" => make_lower_kset(n, num(1)? as usize, values)?,
        "renaming" => make_renaming(n, num(1)?, num(2)?)?,
        "trivial" => make_trivial(n, values, num(1)?)?,
        other => bail!("unknown task {other:?}"),
    };
    Ok(t)
}

pub fn parse_values(text: &str) -> Result<Vec<Value>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<Value>().with_context(|| format!("bad value {s:?}")))
        .collect()
}
