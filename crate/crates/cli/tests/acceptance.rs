//! Acceptance run: every criterion prints one PASS or FAIL line, and the
//! process fails if any criterion fails.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cexplain_core::explain::{brute_force_min_explanation, check_complete, check_sound};
use cexplain_core::fixture::{small_warehouse, small_warehouse_requirement};
use cexplain_core::mdp::reach_probability_under_strategy;
use cexplain_core::milp::{build_explanation_milp, export_lp, parse_lp, EncodingOptions, ModelError};
use cexplain_core::pipeline::{run, Encoding, ExplainOptions, Run};
use cexplain_core::random::{random_instance, RandomMdpConfig};
use cexplain_core::solver::{solve, SolverConfig};
use cexplain_core::templates::enumerate_candidates;
use cexplain_core::warehouse::{generate_grid, GridLayout};
use cexplain_core::{Mdp, ReachabilityRequirement, SolveStatus, StateId, TargetSpec, Vocabulary};

const EPSILON: f64 = 1e-6;
const VERIFY_SLACK: f64 = 1e-8;
const LP_TOL: f64 = 1e-9;
const RANDOM_INSTANCES: usize = 100;
const LP_INSTANCES: usize = 20;
const FIXTURE_BUDGET: Duration = Duration::from_secs(5);
const ORACLE_BUDGET: Duration = Duration::from_secs(300);
const N10_BUDGET: Duration = Duration::from_secs(60);
const N20_BUDGET: Duration = Duration::from_secs(600);
const MAX_WAREHOUSE_SENTENCES: usize = 6;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict { ok, detail: detail.into() }
}

/// A solved instance kept for the soundness sweep.
struct Solved {
    name: String,
    mdp: Mdp,
    req: ReachabilityRequirement,
    run: Run,
}

fn explain(m: &Mdp, v: &Vocabulary, req: &ReachabilityRequirement, opts: &ExplainOptions) -> Option<Run> {
    run(m, v, req, opts, Encoding::Explanation).ok()?.run().cloned()
}

fn options(unit_search: bool) -> ExplainOptions {
    ExplainOptions { epsilon: EPSILON, unit_search, ..ExplainOptions::default() }
}

fn fixture(solved: &mut Vec<Solved>) -> Verdict {
    let start = Instant::now();
    let (m, v) = small_warehouse();
    let req = small_warehouse_requirement(&m);
    let mut fails = Vec::new();
    let s1 = m.state_by_name("s1").unwrap();
    let succ = |a: &str| -> Vec<(String, f64)> {
        let c = m.choice(s1, m.action_by_name(a).unwrap()).unwrap();
        c.successors.iter().map(|&(t, p)| (m.state_name(t).to_string(), p)).collect()
    };
    let targets = req.target_set(&m).unwrap();
    let non_target_pairs: usize = m.states().filter(|&s| !targets.contains(s)).map(|s| m.choices(s).len()).sum();
    if m.num_states() != 9 || m.num_actions() != 5 || m.num_props() != 12 || non_target_pairs != 11 {
        fails.push("model shape".to_string());
    }
    if targets.iter().map(|s| m.state_name(s)).collect::<Vec<_>>() != ["s9"] {
        fails.push("target set".into());
    }
    if succ("move_east") != [("s2".into(), 0.9), ("s4".into(), 0.1)]
        || succ("move_south") != [("s2".into(), 0.1), ("s4".into(), 0.9)]
    {
        fails.push("s1 transitions".into());
    }
    let Some(r) = explain(&m, &v, &req, &options(true)) else {
        return verdict(false, "no explanation");
    };
    let st = &r.report.stats;
    if (st.reach_vars, st.choice_vars, st.sentence_vars) != (9, 11, 60) {
        fails.push(format!("columns {}/{}/{}", st.reach_vars, st.choice_vars, st.sentence_vars));
    }
    if r.report.objective != Some(4.0) {
        fails.push(format!("objective {:?}", r.report.objective));
    }
    let members: Vec<&str> = r.report.members.iter().map(|x| x.state.as_str()).collect();
    if members != ["s1", "s4", "s5", "s7", "s8", "s9"] {
        fails.push(format!("members {members:?}"));
    }
    let expected = [
        "The robot moves south when north of pick-up area.",
        "The robot moves east when west of pick-up area.",
        "The robot moves north when in pick-up area.",
        "The robot stops when in human zone.",
    ];
    if r.report.sentences != expected {
        fails.push(format!("sentences {:?}", r.report.sentences));
    }
    let full = explain(&m, &v, &req, &options(false));
    if full.as_ref().and_then(|f| f.report.objective) != Some(4.0) {
        fails.push("full branch and bound objective".into());
    }
    let baseline = run(&m, &v, &req, &options(true), Encoding::MinimalStates).unwrap();
    let base = baseline.run().and_then(|b| b.report.objective);
    if base != Some(6.0) {
        fails.push(format!("baseline {base:?}"));
    }
    let took = start.elapsed();
    if took >= FIXTURE_BUDGET {
        fails.push(format!("took {took:?}"));
    }
    solved.push(Solved { name: "fixture".into(), mdp: m.clone(), req: req.clone(), run: r });
    if let Some(f) = full {
        solved.push(Solved { name: "fixture (full search)".into(), mdp: m, req, run: f });
    }
    if fails.is_empty() {
        verdict(true, format!("9/11/60 columns, 4 sentences S3..S6, 6 members, baseline 6, {took:.2?}"))
    } else {
        verdict(false, fails.join("; "))
    }
}

/// The first `count` random instances whose explanation model can be built.
fn instances(count: usize) -> (Vec<(u64, Mdp, ReachabilityRequirement)>, usize) {
    let cfg = RandomMdpConfig::default();
    let mut out = Vec::new();
    let mut skipped = 0;
    let mut seed = 0;
    while out.len() < count {
        let (m, req) = random_instance(seed, &cfg);
        let terminal = m.action_by_name("stop");
        let enc = EncodingOptions { epsilon: EPSILON, terminal_action: terminal };
        match build_explanation_milp(&m, &req, &enumerate_candidates(&m, 1), &enc) {
            Err(ModelError::Uncoverable(_)) => skipped += 1,
            _ => out.push((seed, m, req)),
        }
        seed += 1;
    }
    (out, skipped)
}

fn oracle_equivalence(
    cases: &[(u64, Mdp, ReachabilityRequirement)],
    skipped: usize,
    solved: &mut Vec<Solved>,
) -> Verdict {
    let start = Instant::now();
    let mut fails = Vec::new();
    let mut explained = 0;
    for (seed, m, req) in cases {
        let terminal = m.action_by_name("stop");
        let cands = enumerate_candidates(m, 1);
        let enc = EncodingOptions { epsilon: EPSILON, terminal_action: terminal };
        let p = build_explanation_milp(m, req, &cands, &enc).unwrap();
        let milp = solve(&p, &SolverConfig::default());
        let oracle = brute_force_min_explanation(m, req, &cands, EPSILON, terminal).unwrap().map(|(k, _)| k as f64);
        let expected_status = if oracle.is_some() { SolveStatus::Optimal } else { SolveStatus::Infeasible };
        if milp.objective != oracle || milp.status != expected_status {
            fails.push(format!("seed {seed}: milp {:?} oracle {oracle:?}", milp.objective));
        }
        let v = Vocabulary::from_names(m);
        for unit_search in [false, true] {
            let r = explain(m, &v, req, &options(unit_search));
            let objective = r.as_ref().and_then(|r| r.report.objective);
            if objective != oracle {
                fails.push(format!("seed {seed}: pipeline (unit search {unit_search}) {objective:?} oracle {oracle:?}"));
            }
            if let Some(r) = r.filter(|r| r.report.status == SolveStatus::Optimal) {
                let name = format!("random seed {seed} (unit search {unit_search})");
                solved.push(Solved { name, mdp: m.clone(), req: req.clone(), run: r });
            }
        }
        explained += usize::from(oracle.is_some());
    }
    let took = start.elapsed();
    if took >= ORACLE_BUDGET {
        fails.push(format!("took {took:?}"));
    }
    if fails.is_empty() {
        verdict(
            true,
            format!(
                "{} instances ({explained} explainable, {skipped} seeds skipped for an undescribable initial state), {took:.2?}",
                cases.len()
            ),
        )
    } else {
        verdict(false, fails.join("; "))
    }
}

fn soundness(solved: &[Solved]) -> Verdict {
    let mut fails = Vec::new();
    for s in solved {
        let (Some(cex), Some(expl)) = (&s.run.counterexample, &s.run.explanation) else {
            fails.push(format!("{}: no explanation", s.name));
            continue;
        };
        let members: BTreeSet<StateId> = cex.members.iter().copied().collect();
        let recheck = reach_probability_under_strategy(&s.mdp, &cex.sigma, &s.req, &members).unwrap()[s.mdp.initial().0];
        let needed = s.req.lambda + EPSILON - VERIFY_SLACK;
        if !check_sound(&s.mdp, cex, expl).holds
            || !check_complete(&s.mdp, cex, expl).holds
            || cex.verified_probability < needed
            || recheck < needed
        {
            fails.push(format!("{}: verified {} recheck {recheck}", s.name, cex.verified_probability));
        }
    }
    if fails.is_empty() {
        verdict(true, format!("{} optimal solves sound, complete and above λ+ε", solved.len()))
    } else {
        verdict(false, fails.join("; "))
    }
}

fn dominance(cases: &[(u64, Mdp, ReachabilityRequirement)]) -> Verdict {
    let mut fails = Vec::new();
    let mut compared = 0;
    for (seed, m, req) in cases {
        let v = Vocabulary::from_names(m);
        let Some(expl) = explain(m, &v, req, &options(true)) else { continue };
        let Some(cex) = &expl.counterexample else { continue };
        let base = run(m, &v, req, &options(true), Encoding::MinimalStates).unwrap();
        let Some(base) = base.run().and_then(|b| b.counterexample.as_ref()) else {
            fails.push(format!("seed {seed}: no baseline"));
            continue;
        };
        compared += 1;
        if base.members.len() > cex.members.len() {
            fails.push(format!("seed {seed}: {} > {}", base.members.len(), cex.members.len()));
        }
    }
    if fails.is_empty() {
        verdict(true, format!("{compared} instances, fewest states <= explanation members"))
    } else {
        verdict(false, fails.join("; "))
    }
}

fn warehouse(solved: &mut Vec<Solved>) -> Verdict {
    let mut fails = Vec::new();
    let mut detail = Vec::new();
    for (n, budget) in [(10, N10_BUDGET), (20, N20_BUDGET)] {
        let start = Instant::now();
        let w = generate_grid(&GridLayout::default_for(n)).unwrap();
        if n == 10 && w.mdp.num_states() != 100 {
            fails.push(format!("N=10 has {} states", w.mdp.num_states()));
        }
        let zone = w.mdp.prop_by_name(&w.target_prop).unwrap();
        let req = ReachabilityRequirement::new(TargetSpec::Proposition(zone), 0.1).unwrap();
        let r = explain(&w.mdp, &w.vocabulary, &req, &options(true));
        let took = start.elapsed();
        let Some(r) = r.filter(|r| r.report.status == SolveStatus::Optimal) else {
            fails.push(format!("N={n}: not solved to optimality"));
            continue;
        };
        let k = r.report.sentences.len();
        let both = r.report.sound.as_ref().is_some_and(|v| v.holds) && r.report.complete.as_ref().is_some_and(|v| v.holds);
        if k > MAX_WAREHOUSE_SENTENCES || !both || took >= budget {
            fails.push(format!("N={n}: {k} sentences, checkers {both}, {took:?}"));
        }
        detail.push(format!("N={n}: {} states, {k} sentences, {took:.2?}", w.mdp.num_states()));
        solved.push(Solved { name: format!("warehouse N={n}"), mdp: w.mdp, req, run: r });
    }
    if fails.is_empty() {
        verdict(true, detail.join("; "))
    } else {
        verdict(false, fails.join("; "))
    }
}

fn lp_round_trip(cases: &[(u64, Mdp, ReachabilityRequirement)]) -> Verdict {
    let (fm, _) = small_warehouse();
    let freq = small_warehouse_requirement(&fm);
    let mut models: Vec<(String, &Mdp, &ReachabilityRequirement)> = vec![("fixture".into(), &fm, &freq)];
    models.extend(cases.iter().take(LP_INSTANCES).map(|(seed, m, r)| (format!("seed {seed}"), m, r)));
    let mut fails = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, m, req) in &models {
        let enc = EncodingOptions { epsilon: EPSILON, terminal_action: m.action_by_name("stop") };
        let p = build_explanation_milp(m, req, &enumerate_candidates(m, 1), &enc).unwrap();
        let q = match parse_lp(&export_lp(&p)) {
            Ok(q) => q,
            Err(e) => {
                fails.push(format!("{name}: {e}"));
                continue;
            }
        };
        let (a, b) = (solve(&p, &SolverConfig::default()), solve(&q, &SolverConfig::default()));
        match (a.objective, b.objective) {
            (Some(x), Some(y)) if a.is_optimal() && b.is_optimal() => {
                worst = worst.max((x - y).abs());
                if (x - y).abs() >= LP_TOL {
                    fails.push(format!("{name}: {x} vs {y}"));
                }
            }
            (None, None) if a.status == b.status => {}
            _ => fails.push(format!("{name}: {:?} vs {:?}", a.status, b.status)),
        }
    }
    if fails.is_empty() {
        verdict(true, format!("{} models, largest objective difference {worst:e}", models.len()))
    } else {
        verdict(false, fails.join("; "))
    }
}

fn determinism() -> Verdict {
    let model = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/small_warehouse.mdp");
    let once = || {
        Command::new(env!("CARGO_BIN_EXE_cexplain"))
            .args(["explain", model.to_str().unwrap(), "--target", "in_human_zone", "--lambda", "0.3"])
            .output()
            .expect("binary runs")
    };
    let (a, b) = (once(), once());
    let ok = a.status.code() == Some(2) && b.status.code() == Some(2) && a.stdout == b.stdout && !a.stdout.is_empty();
    verdict(ok, format!("{} bytes, exit {:?}", a.stdout.len(), a.status.code()))
}

fn main() -> ExitCode {
    let mut solved = Vec::new();
    let (cases, skipped) = instances(RANDOM_INSTANCES);
    let mut results = vec![
        ("1 fixture reproduction", fixture(&mut solved)),
        ("2 minimality oracle equivalence", oracle_equivalence(&cases, skipped, &mut solved)),
    ];
    let scaling = warehouse(&mut solved);
    results.push(("3 sound, complete, violating", soundness(&solved)));
    results.push(("4 baseline dominance", dominance(&cases)));
    results.push(("5 warehouse scaling", scaling));
    results.push(("6 LP round trip", lp_round_trip(&cases)));
    results.push(("7 determinism", determinism()));
    results.sort_by_key(|r| r.0);
    let mut all = true;
    for (name, v) in &results {
        println!("{} criterion {name}: {}", if v.ok { "PASS" } else { "FAIL" }, v.detail);
        all &= v.ok;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
