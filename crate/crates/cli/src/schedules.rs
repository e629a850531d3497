use std::path::Path;

use anyhow::{bail, Context, Result};
use hoamp::amp_engine::random_fair_amp;
use hoamp::explorer::separation_schedule;
use hoamp::graph::admissible_in_sets;
use hoamp::{AmpLassoSchedule, CommunicationGraph, LassoSchedule, ProcessId};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_graph<R: Rng>(n: usize, f: usize, rng: &mut R) -> CommunicationGraph {
    let sets = ProcessId::all(n).map(|q| *admissible_in_sets(n, f, q).choose(rng).unwrap()).collect();
    CommunicationGraph::from_sets(sets).unwrap()
}

pub fn random_lasso<R: Rng>(n: usize, f: usize, max_prefix: usize, max_cycle: usize, rng: &mut R) -> LassoSchedule {
    let prefix = (0..rng.gen_range(0..=max_prefix)).map(|_| random_graph(n, f, rng)).collect();
    let cycle = (0..rng.gen_range(1..=max_cycle)).map(|_| random_graph(n, f, rng)).collect();
    LassoSchedule::new(n, f, prefix, cycle).unwrap()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// A round schedule from a file, or from `complete`, `separation` or `random`.
pub fn ho_schedule(file: Option<&Path>, generator: &str, n: usize, f: usize, seed: u64) -> Result<LassoSchedule> {
    if let Some(path) = file {
        let s = LassoSchedule::from_json(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
        if s.n() != n || s.f() != f {
            bail!("schedule is for n = {}, f = {}; asked for n = {n}, f = {f}", s.n(), s.f());
        }
        return Ok(s);
    }
    Ok(match generator {
        "complete" => LassoSchedule::complete(n, f),
        "separation" => separation_schedule(n, f)?,
        "random" => random_lasso(n, f, 3, 3, &mut rng(seed)),
        other => bail!("unknown round schedule generator {other:?}"),
    })
}

/// An asynchronous schedule from a file, or from `all-deliver` or `random`.
pub fn amp_schedule(file: Option<&Path>, generator: &str, n: usize, f: usize, seed: u64) -> Result<AmpLassoSchedule> {
    if let Some(path) = file {
        let s = AmpLassoSchedule::from_json(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
        if s.n() != n || s.f() != f {
            bail!("schedule is for n = {}, f = {}; asked for n = {n}, f = {f}", s.n(), s.f());
        }
        return Ok(s);
    }
    Ok(match generator {
        "all-deliver" | "complete" => AmpLassoSchedule::all_deliver(n, f),
        "random" => random_fair_amp(n, f, 3 * n, &mut rng(seed)),
        other => bail!("unknown asynchronous schedule generator {other:?}"),
    })
}
