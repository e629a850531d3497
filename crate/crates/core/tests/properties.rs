use std::collections::BTreeSet;

use hoamp::amp_engine::{random_fair_amp, run_amp};
use hoamp::explorer::{explore, find_collision, ExploreConfig, Mode};
use hoamp::graph::{admissible_in_sets, graph_count};
use hoamp::ho_engine::{cfho_schedule_to_ho, run_ho, trace_cfho, trace_ho, CrashMap};
use hoamp::metric::{lcp_distance, lcp_distance_seq};
use hoamp::protocols::{EchoAmp, MinConsensus, MinView, ModNDelta};
use hoamp::randomized::{Distribution, FrozenSchedule};
use hoamp::silence::{check_lemma3, reach, reach_infinity, silenced_processes};
use hoamp::sims::{blocking_window, check_amp_safety, simulate_amp_in_sfho, simulate_ho_in_amp, SimBudgets};
use hoamp::tasks::{make_consensus, make_kset, make_renaming};
use hoamp::view::FullInfo;
use hoamp::{
    enumerate_graphs, validate_communication_graph, CommunicationGraph, Error, EventLog, LassoSchedule, ProcSet,
    ProcessId, Seeds, Value, View,
};
use num_rational::BigRational;
use proptest::prelude::*;
use proptest::sample::Index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph(n: usize, f: usize) -> impl Strategy<Value = CommunicationGraph> {
    prop::collection::vec(any::<Index>(), n).prop_map(move |ix| {
        let sets = ProcessId::all(n)
            .zip(ix)
            .map(|(q, k)| {
                let choices = admissible_in_sets(n, f, q);
                choices[k.index(choices.len())]
            })
            .collect();
        CommunicationGraph::from_sets(sets).unwrap()
    })
}

fn lasso_for(n: usize, f: usize) -> impl Strategy<Value = LassoSchedule> {
    (prop::collection::vec(graph(n, f), 0..3), prop::collection::vec(graph(n, f), 1..4))
        .prop_map(move |(p, c)| LassoSchedule::new(n, f, p, c).unwrap())
}

fn sizes() -> impl Strategy<Value = (usize, usize)> {
    prop::sample::select(vec![(3, 1), (4, 1), (5, 1), (5, 2), (4, 0), (3, 0)])
}

fn lasso() -> impl Strategy<Value = LassoSchedule> {
    sizes().prop_flat_map(|(n, f)| lasso_for(n, f))
}

/// `n > 2f` only.
fn majority_lasso() -> impl Strategy<Value = LassoSchedule> {
    prop::sample::select(vec![(3, 1), (4, 1), (5, 2), (5, 1)]).prop_flat_map(|(n, f)| lasso_for(n, f))
}

/// Reach by explicit path search over (process, round) pairs.
fn naive_reach(s: &LassoSchedule, i: ProcessId, r: usize, t: usize) -> ProcSet {
    let n = s.n();
    let mut holds = vec![false; n];
    holds[i.slot()] = true;
    for round in r..t {
        let g = s.resolve_round(round);
        let mut next = vec![false; n];
        for to in 0..n {
            for from in 0..n {
                if holds[from] && g.in_neighbors(ProcessId::from_slot(to)).contains(ProcessId::from_slot(from)) {
                    next[to] = true;
                }
            }
        }
        holds = next;
    }
    (0..n).filter(|&k| holds[k]).map(ProcessId::from_slot).collect()
}

fn views_of(s: &LassoSchedule, inputs: &[Value], rounds: usize) -> Vec<Vec<View>> {
    trace_ho(&FullInfo(MinView), inputs, s, rounds)
        .unwrap()
        .states
        .into_iter()
        .map(|row| row.into_iter().map(|st| st.unwrap().view).collect())
        .collect()
}

proptest! {
    #[test]
    fn lcp_distance_is_an_ultrametric(a in lasso_for(3, 1), b in lasso_for(3, 1), c in lasso_for(3, 1)) {
        let h = 24;
        let (ua, ub, uc) = (a.unroll(h), b.unroll(h), c.unroll(h));
        let d = |x: &[CommunicationGraph], y: &[CommunicationGraph]| lcp_distance_seq::<_, f64>(x, y);
        prop_assert!(d(&ua, &uc) <= d(&ua, &ub).max(d(&ub, &uc)));
        prop_assert_eq!(d(&ua, &ub), d(&ub, &ua));

        // lassos this short are certified well inside the horizon
        let e = |x: &LassoSchedule, y: &LassoSchedule| {
            let r = lcp_distance::<BigRational>(x, y, 32);
            assert!(r.is_exact());
            r.upper()
        };
        let (ab, bc, ac) = (e(&a, &b), e(&b, &c), e(&a, &c));
        prop_assert!(ac <= ab.clone().max(bc));
        prop_assert_eq!(e(&a, &a), BigRational::from_integer(0.into()));
    }

    #[test]
    fn graph_validation_matches_membership(n in 1usize..=4, f in 0usize..=4, masks in prop::collection::vec(0u32..16, 4)) {
        prop_assume!(f <= n);
        let lists: Vec<Vec<usize>> = (0..n)
            .map(|v| (0..n).filter(|&u| masks[v] >> u & 1 == 1).map(|u| u + 1).collect())
            .collect();
        let g = CommunicationGraph::from_lists(&lists).unwrap();
        let brute = (0..n).all(|v| lists[v].contains(&(v + 1)) && lists[v].len() >= n - f);
        prop_assert_eq!(validate_communication_graph(&g, n, f).unwrap(), brute);
        let listed = enumerate_graphs(n, f).unwrap();
        prop_assert_eq!(listed.contains(&g), brute);
    }

    #[test]
    fn out_of_range_vertex_is_malformed(n in 1usize..=4, bad in 5usize..9) {
        let mut lists: Vec<Vec<usize>> = (1..=n).map(|v| vec![v]).collect();
        lists[0].push(bad);
        prop_assert!(matches!(CommunicationGraph::from_lists(&lists), Err(Error::MalformedGraph(_))));
    }

    #[test]
    fn view_logs_round_trip(s in lasso(), rounds in 1usize..5, pick in any::<Index>(), inputs in prop::collection::vec(0u64..4, 5)) {
        let n = s.n();
        let views = views_of(&s, &inputs[..n], rounds);
        let flat: Vec<&View> = views.iter().flatten().collect();
        let v = flat[pick.index(flat.len())];
        let text = v.to_log().to_json();
        let back = EventLog::from_json(&text).unwrap().to_view().unwrap();
        prop_assert_eq!(&back, v);
        prop_assert_eq!(back.to_log().to_json(), text);
    }

    #[test]
    fn views_extend_their_predecessors(s in lasso(), rounds in 1usize..5) {
        let n = s.n();
        let inputs: Vec<Value> = (0..n as Value).collect();
        let views = views_of(&s, &inputs, rounds);
        for r in 1..views.len() {
            for i in 0..n {
                prop_assert_eq!(views[r][i].prev().unwrap(), &views[r - 1][i]);
            }
        }
    }

    #[test]
    fn ho_rounds_hear_enough_including_self(s in lasso(), budget in 1usize..6) {
        let n = s.n();
        let inputs: Vec<Value> = (0..n as Value).rev().collect();
        let run = run_ho(&MinConsensus, &inputs, &s, budget).unwrap();
        for rec in run.ho_rounds() {
            for p in ProcessId::all(n) {
                let got = rec.received[p.slot()].as_ref().unwrap();
                let from: BTreeSet<ProcessId> = got.iter().map(|m| m.from).collect();
                prop_assert!(from.len() >= n - s.f());
                prop_assert!(from.contains(&p));
            }
        }
    }

    #[test]
    fn ho_engine_is_deterministic(s in lasso(), budget in 1usize..6) {
        let inputs: Vec<Value> = (0..s.n() as Value).collect();
        let a = run_ho(&FullInfo(MinView), &inputs, &s, budget).unwrap();
        let b = run_ho(&FullInfo(MinView), &inputs, &s, budget).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn crash_rewrite_keeps_survivor_views(
        s in majority_lasso(),
        victims in prop::collection::vec((any::<Index>(), 1usize..5), 0..3),
    ) {
        let n = s.n();
        let mut crashes = CrashMap::none(n);
        let mut down = ProcSet::EMPTY;
        for (ix, round) in victims.into_iter().take(s.f()) {
            let p = ProcessId::from_slot(ix.index(n));
            if !down.contains(p) {
                down.insert(p);
                crashes = crashes.with_crash(p, round);
            }
        }
        let rewritten = match cfho_schedule_to_ho(&s, &crashes) {
            Ok(r) => r,
            Err(Error::Transformation { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let inputs: Vec<Value> = (0..n as Value).collect();
        let a = trace_cfho(&FullInfo(MinView), &inputs, &s, &crashes, 6).unwrap();
        let b = trace_ho(&FullInfo(MinView), &inputs, &rewritten, 6).unwrap();
        for r in 0..a.states.len() {
            for p in ProcessId::all(n).filter(|p| !down.contains(*p)) {
                let x = &a.states[r][p.slot()].as_ref().unwrap().view;
                let y = &b.states[r][p.slot()].as_ref().unwrap().view;
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn amp_runs_are_safe_and_deterministic(seed in any::<u64>(), n in 2usize..5, f in 0usize..2, prefix in 0usize..8) {
        prop_assume!(f < n);
        let s = random_fair_amp(n, f, prefix, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(s.faulty().len() <= f);
        let inputs: Vec<Value> = (0..n as Value).collect();
        let a = run_amp(&EchoAmp, &inputs, &s, 200).unwrap();
        prop_assert!(check_amp_safety(&a).is_ok());
        let b = run_amp(&EchoAmp, &inputs, &s, 200).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn reach_grows_and_matches_path_search(s in lasso(), i in any::<Index>(), r in 1usize..5, span in 0usize..8) {
        let p = ProcessId::from_slot(i.index(s.n()));
        let t = r + span;
        let now = reach(&s, p, r, t);
        prop_assert_eq!(now, naive_reach(&s, p, r, t));
        prop_assert!(now.is_subset(reach(&s, p, r, t + 1)));
    }

    #[test]
    fn at_most_f_silenced(s in majority_lasso()) {
        prop_assert!(check_lemma3(&s).is_ok());
        prop_assert!(silenced_processes(&s).len() <= s.f());
    }

    #[test]
    fn reach_above_f_is_everybody(s in lasso()) {
        for i in ProcessId::all(s.n()) {
            for r in 1..=s.phase_range() + 1 {
                let k = reach_infinity(&s, i, r).len();
                prop_assert!(k <= s.f() || k == s.n(), "{i} from round {r}: {k}");
            }
        }
    }

    #[test]
    fn frozen_schedules_reject_tampering(a in lasso_for(3, 1), b in lasso_for(3, 1)) {
        let frozen = FrozenSchedule::freeze(a.clone());
        prop_assert!(FrozenSchedule::from_json(&frozen.to_json()).is_ok());
        let mut doc: serde_json::Value = serde_json::from_str(&frozen.to_json()).unwrap();
        doc["schedule"] = serde_json::from_str(&b.to_json()).unwrap();
        let res = FrozenSchedule::from_json(&doc.to_string());
        if a == b {
            prop_assert!(res.is_ok());
        } else {
            prop_assert_eq!(res.unwrap_err(), Error::ScheduleMutated);
        }
    }

    #[test]
    fn distributions_have_norm_at_least_one_over_n(w in prop::collection::vec(0.0f64..10.0, 1..40)) {
        let total: f64 = w.iter().sum();
        prop_assume!(total > 1e-6);
        let x = Distribution::new(w.iter().map(|v| v / total).collect()).unwrap();
        prop_assert!(x.norm_sq() >= 1.0 / w.len() as f64 - 1e-12);
    }

    #[test]
    fn pigeonhole_always_collides(modulus in 1u64..=7, start in 10u64..500, extra in 0usize..4) {
        let (n, f) = (5, 2);
        let candidates: Vec<Value> = (start..start + 8 + extra as u64).collect();
        let c = find_collision(ModNDelta { modulus }, n, f, &[1, 2, 3, 4], &candidates, 3).unwrap();
        prop_assert!(c.is_some());
        let c = c.unwrap();
        prop_assert_eq!(c.a % modulus, c.b % modulus);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn alg1_round_counter_is_bounded(seed in any::<u64>(), prefix in 0usize..8) {
        let (n, f) = (3, 1);
        let s = random_fair_amp(n, f, prefix, &mut ChaCha8Rng::seed_from_u64(seed));
        let out = simulate_ho_in_amp(&MinConsensus, &[2, 0, 1], &s, &Seeds::derive(seed, n), SimBudgets { rounds: 4, steps: 300 }).unwrap();
        for h in &out.hosts {
            // consumed rounds move from `received` to `completed`
            prop_assert!(h.completed.iter().all(|ho| ho.len() >= n - f && ho.contains(h.ctx.pid)));
            let full = h.completed.len() + h.received.values().filter(|m| m.len() >= n - f).count();
            prop_assert!(h.round <= 1 + full, "round {} with {full} full rounds", h.round);
        }
    }

    #[test]
    fn alg2_acknowledged_messages_reach_everyone(s in lasso_for(3, 1)) {
        let window = blocking_window(&s);
        let rounds = 2 * window + 4;
        let out = simulate_amp_in_sfho(&EchoAmp, &[3, 1, 2], &s, &Seeds::derive(0, 3), SimBudgets { rounds, steps: 0 }).unwrap();
        let silenced = silenced_processes(&s);
        let last = out.hosts.states.last().unwrap();
        for i in ProcessId::all(3).filter(|p| !silenced.contains(*p)) {
            let steps = &last[i.slot()].as_ref().unwrap().steps;
            for w in steps.windows(2) {
                // w[0]'s message was acknowledged by the time w[1] happened
                if w[1].round + window > rounds {
                    continue;
                }
                for j in ProcessId::all(3) {
                    let seen = &last[j.slot()].as_ref().unwrap().seen;
                    prop_assert!(seen.msgs.contains_key(&w[0].sent), "{:?} of {i} missing at {j}", w[0].sent);
                }
            }
        }
    }

    #[test]
    fn bottom_closure_of_tasks(kind in 0usize..3, pick in any::<Index>(), out in any::<Index>(), erase in prop::collection::vec(any::<bool>(), 3)) {
        let t = match kind {
            0 => make_consensus(3, &[0, 1]).unwrap(),
            1 => make_kset(3, 2, &[0, 1, 2]).unwrap(),
            _ => make_renaming(3, 5, 4).unwrap(),
        };
        let inputs = t.input_vectors();
        let i = &inputs[pick.index(inputs.len())];
        let valid: Vec<_> = t.output_vectors().into_iter().filter(|o| t.check_output(i, o).unwrap()).collect();
        prop_assume!(!valid.is_empty());
        let mut o = valid[out.index(valid.len())].clone();
        for (k, e) in erase.iter().enumerate() {
            if *e {
                o[k] = None;
            }
        }
        prop_assert!(t.check_output(i, &o).unwrap());
        prop_assert_eq!(t.check_output(i, &o).unwrap(), t.check_output_by_completion(i, &o).unwrap());
    }

    #[test]
    fn exploration_covers_every_branch(depth in 1usize..3, input in prop::collection::vec(0u64..2, 3)) {
        let task = make_consensus(3, &[0, 1]).unwrap();
        let mut cfg = ExploreConfig::new(depth, Mode::Safety);
        cfg.inputs = Some(vec![input]);
        let v = explore(&MinConsensus, &task, 1, &cfg).unwrap();
        prop_assert_eq!(v.leaves as u128, graph_count(3, 1).pow(depth as u32));
    }
}
