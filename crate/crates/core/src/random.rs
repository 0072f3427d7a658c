//! Seeded generator of small labelled MDPs for differential testing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{max_reach_probability, IterationOptions, Mdp, MdpBuilder, ReachabilityRequirement, TargetSpec};

#[derive(Clone, Debug)]
pub struct RandomMdpConfig {
    pub min_states: usize,
    pub max_states: usize,
    /// Upper bound on enabled actions per state.
    pub max_actions: usize,
    /// Number of propositions, including the target proposition `goal`.
    pub max_props: usize,
    /// Probability that a non-target state also has a `stop` self-loop.
    pub stop_probability: f64,
}

impl Default for RandomMdpConfig {
    fn default() -> Self {
        RandomMdpConfig { min_states: 3, max_states: 8, max_actions: 3, max_props: 4, stop_probability: 0.25 }
    }
}

/// Names of the moving actions; `stop` is added separately.
const MOVES: [&str; 3] = ["left", "right", "forward"];

/// A random model whose targets are the states labelled `goal`. Targets and
/// some other states have a `stop` self-loop, so end components occur.
pub fn random_mdp(seed: u64, cfg: &RandomMdpConfig) -> Mdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(cfg.min_states..=cfg.max_states);
    let props = rng.gen_range(2..=cfg.max_props.max(2));
    let name = |i: usize| format!("s{i}");
    let mut b = MdpBuilder::new();
    b.initial(&name(0));
    for i in 1..n {
        b.state(&name(i));
    }
    for a in MOVES {
        b.action(a);
    }
    b.action("stop");
    b.prop("goal");
    for p in 1..props {
        b.prop(&format!("p{p}"));
    }
    let goals = rng.gen_range(1..=2.min(n - 1));
    let mut order: Vec<usize> = (1..n).collect();
    order.shuffle(&mut rng);
    let targets: Vec<usize> = order[..goals].to_vec();

    for s in 0..n {
        if targets.contains(&s) {
            b.label(&name(s), "goal");
            b.transition(&name(s), "stop", &name(s), 1.0);
        } else {
            let mut alphabet: Vec<&str> = MOVES.to_vec();
            if rng.gen_bool(cfg.stop_probability) {
                alphabet.push("stop");
            }
            alphabet.shuffle(&mut rng);
            let k = rng.gen_range(1..=cfg.max_actions.min(alphabet.len()));
            let mut chosen: Vec<&str> = alphabet[..k].to_vec();
            chosen.sort();
            for a in chosen {
                if a == "stop" {
                    b.transition(&name(s), "stop", &name(s), 1.0);
                    continue;
                }
                let fanout = rng.gen_range(1..=3.min(n));
                let mut succ: Vec<usize> = (0..n).collect();
                succ.shuffle(&mut rng);
                let succ = &succ[..fanout];
                let weights: Vec<u32> = succ.iter().map(|_| rng.gen_range(1..=9)).collect();
                let total: u32 = weights.iter().sum();
                for (&t, &w) in succ.iter().zip(&weights) {
                    b.transition(&name(s), a, &name(t), w as f64 / total as f64);
                }
            }
        }
        for p in 1..props {
            if rng.gen_bool(0.45) {
                b.label(&name(s), &format!("p{p}"));
            }
        }
    }
    b.build().expect("generated models are valid")
}

/// A random model together with a violated requirement (`λ` drawn below the
/// maximum reachability probability). Seeds whose model cannot reach a
/// target are skipped deterministically.
pub fn random_instance(seed: u64, cfg: &RandomMdpConfig) -> (Mdp, ReachabilityRequirement) {
    let mut attempt = 0u64;
    loop {
        let sub = seed.wrapping_mul(1_000_003).wrapping_add(attempt);
        attempt += 1;
        let m = random_mdp(sub, cfg);
        let goal = m.prop_by_name("goal").expect("generator labels targets");
        let probe = ReachabilityRequirement::new(TargetSpec::Proposition(goal), 0.0).expect("valid threshold");
        let vmax = max_reach_probability(&m, &probe, &IterationOptions::default()).expect("small models converge")
            [m.initial().0];
        if vmax < 0.05 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sub ^ 0x5eed);
        // Keep λ + ε clear of Pr^max so the instance is robustly violated.
        let lambda = (rng.gen_range(0.05..0.95) * vmax * 1e4).floor() / 1e4;
        let req = ReachabilityRequirement::new(TargetSpec::Proposition(goal), lambda).expect("valid threshold");
        return (m, req);
    }
}
