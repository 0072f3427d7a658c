use std::collections::BTreeSet;

use cexplain_core::mdp::{max_reach_probability, reach_probability_under_strategy, IterationOptions};
use cexplain_core::random::{random_mdp, RandomMdpConfig};
use cexplain_core::{Mdp, MdpBuilder, ReachabilityRequirement, StateId, Strategy, TargetSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn goal(m: &Mdp) -> ReachabilityRequirement {
    ReachabilityRequirement::new(TargetSpec::Proposition(m.prop_by_name("goal").unwrap()), 0.5).unwrap()
}

/// Simulates the chain induced by `sigma` inside `restrict` and returns the
/// fraction of runs that hit a target.
fn simulate(m: &Mdp, sigma: &Strategy, req: &ReachabilityRequirement, restrict: &BTreeSet<StateId>, runs: usize) -> f64 {
    let targets = req.target_set(m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut hits = 0usize;
    for _ in 0..runs {
        let mut s = m.initial();
        loop {
            if targets.contains(s) {
                hits += 1;
                break;
            }
            if !restrict.contains(&s) {
                break;
            }
            let c = m.choice(s, sigma.get(s).unwrap()).unwrap();
            let mut u: f64 = rng.gen();
            let mut next = c.successors.last().unwrap().0;
            for &(t, p) in &c.successors {
                if u < p {
                    next = t;
                    break;
                }
                u -= p;
            }
            if next == s && c.successors.len() == 1 {
                break;
            }
            s = next;
        }
    }
    hits as f64 / runs as f64
}

#[test]
fn restricted_chain_matches_simulation() {
    let mut b = MdpBuilder::new();
    b.initial("s0")
        .transition("s0", "go", "s1", 0.9)
        .transition("s0", "go", "out", 0.1)
        .transition("s1", "go", "t", 1.0)
        .transition("out", "go", "t", 1.0)
        .transition("t", "stop", "t", 1.0)
        .label("t", "goal");
    let m = b.build().unwrap();
    let req = goal(&m);
    let go = m.action_by_name("go").unwrap();
    let mut sigma = Strategy::new();
    for name in ["s0", "s1", "out"] {
        sigma.set(m.state_by_name(name).unwrap(), go);
    }
    let restrict: BTreeSet<StateId> = ["s0", "s1", "t"].iter().map(|n| m.state_by_name(n).unwrap()).collect();
    let exact = reach_probability_under_strategy(&m, &sigma, &req, &restrict).unwrap()[m.initial().0];
    assert!((exact - 0.9).abs() < 1e-12);
    let estimate = simulate(&m, &sigma, &req, &restrict, 1_000_000);
    assert!((estimate - 0.9).abs() < 0.002, "estimate {estimate}");
}

#[test]
fn best_of_two_actions() {
    let mut b = MdpBuilder::new();
    b.initial("s0")
        .transition("s0", "a", "t", 0.5)
        .transition("s0", "a", "sink", 0.5)
        .transition("s0", "b", "t", 0.2)
        .transition("s0", "b", "sink", 0.8)
        .transition("t", "stop", "t", 1.0)
        .transition("sink", "stop", "sink", 1.0)
        .label("t", "goal");
    let m = b.build().unwrap();
    let v = max_reach_probability(&m, &goal(&m), &IterationOptions::default()).unwrap();
    assert!((v[0] - 0.5).abs() < 1e-9);
}

/// Maximum over every positional strategy, each evaluated by a linear solve.
fn best_positional(m: &Mdp, req: &ReachabilityRequirement) -> f64 {
    let targets = req.target_set(m).unwrap();
    let free: Vec<StateId> = m.states().filter(|&s| !targets.contains(s)).collect();
    let all: BTreeSet<StateId> = m.states().collect();
    let mut best: f64 = 0.0;
    let mut pick = vec![0usize; free.len()];
    loop {
        let mut sigma = Strategy::new();
        for (k, &s) in free.iter().enumerate() {
            sigma.set(s, m.choices(s)[pick[k]].action);
        }
        let v = reach_probability_under_strategy(m, &sigma, req, &all).unwrap();
        best = best.max(v[m.initial().0]);
        let mut k = 0;
        loop {
            if k == free.len() {
                return best;
            }
            pick[k] += 1;
            if pick[k] < m.choices(free[k]).len() {
                break;
            }
            pick[k] = 0;
            k += 1;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn value_iteration_matches_strategy_enumeration(seed in 0u64..1_000_000) {
        let cfg = RandomMdpConfig { max_states: 6, ..RandomMdpConfig::default() };
        let m = random_mdp(seed, &cfg);
        let req = goal(&m);
        let v = max_reach_probability(&m, &req, &IterationOptions::default()).unwrap();
        let oracle = best_positional(&m, &req);
        prop_assert!((v[m.initial().0] - oracle).abs() < 1e-7, "{} vs {}", v[m.initial().0], oracle);
    }
}
