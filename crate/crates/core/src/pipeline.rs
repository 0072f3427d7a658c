//! End-to-end runs: model check, encode, solve, extract, explain, check.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::explain::{
    check_complete, check_sound, extract_counterexample, order_sentences, selected_sentences,
    CounterexampleSubsystem, ExplainError, Explanation, Verdict, MEMBERSHIP_TOL,
};
use crate::mdp::{max_reach_probability, IterationOptions, Mdp, MdpError, ReachabilityRequirement};
use crate::milp::{
    build_explanation_milp, build_minimal_state_milp, EncodingOptions, MilpProblem, ModelError, ReachabilityBound,
    VarTag, DEFAULT_EPSILON,
};
use crate::solver::{solve_with, MilpSolution, SolveStats, SolveStatus, SolverConfig};
use crate::templates::{enumerate_candidates, SentenceTuple, Vocabulary};
use crate::warehouse::{generate_grid, GridLayout, LayoutError};

/// Name of the action used by default to describe what happens in targets.
pub const DEFAULT_TERMINAL_ACTION: &str = "stop";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("max conjunction must be at least 1")]
    BadConjunction,
}

#[derive(Clone, Debug)]
pub struct ExplainOptions {
    pub epsilon: f64,
    /// Largest number of propositions conjoined in one sentence.
    pub max_conjunction: usize,
    /// Action describing target states; ignored when the model lacks it.
    pub terminal_action: Option<String>,
    pub membership_tol: f64,
    pub iteration: IterationOptions,
    pub solver: SolverConfig,
    /// Find the smallest unit set by a combinatorial search over exact
    /// reachability checks and solve the model with that set pinned.
    /// Otherwise branch and bound runs on the full model.
    pub unit_search: bool,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            epsilon: DEFAULT_EPSILON,
            max_conjunction: 1,
            terminal_action: Some(DEFAULT_TERMINAL_ACTION.into()),
            membership_tol: MEMBERSHIP_TOL,
            iteration: IterationOptions::default(),
            solver: SolverConfig::default(),
            unit_search: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Minimise the number of sentences.
    Explanation,
    /// Minimise the number of states.
    MinimalStates,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EncodingStats {
    pub columns: usize,
    pub rows: usize,
    pub binary: usize,
    pub continuous: usize,
    pub reach_vars: usize,
    pub choice_vars: usize,
    pub sentence_vars: usize,
    pub include_vars: usize,
    pub rank_vars: usize,
    pub step_vars: usize,
}

impl EncodingStats {
    pub fn of(p: &MilpProblem) -> Self {
        EncodingStats {
            columns: p.num_columns(),
            rows: p.constraints().len(),
            binary: p.num_binary(),
            continuous: p.num_continuous(),
            reach_vars: p.count_tagged(|t| matches!(t, VarTag::Reach(_))),
            choice_vars: p.count_tagged(|t| matches!(t, VarTag::Choice(..))),
            sentence_vars: p.count_tagged(|t| matches!(t, VarTag::Sentence(_))),
            include_vars: p.count_tagged(|t| matches!(t, VarTag::Include(_))),
            rank_vars: p.count_tagged(|t| matches!(t, VarTag::Rank(_))),
            step_vars: p.count_tagged(|t| matches!(t, VarTag::Step(..))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MemberReport {
    pub state: String,
    pub target: bool,
    /// Chosen action (absent for targets).
    pub action: Option<String>,
    pub p: f64,
    /// 1-based number of the designated sentence.
    pub sentence: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Timings {
    pub check_secs: f64,
    pub encode_secs: f64,
    pub solve_secs: f64,
    pub explain_secs: f64,
}

/// Everything a command prints about one run.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    /// `(name, sha256)` of every input file; filled in by the caller.
    pub inputs: Vec<(String, String)>,
    pub encoding: Encoding,
    pub requirement: String,
    pub initial: String,
    pub max_probability: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub candidates: usize,
    pub stats: EncodingStats,
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub bound: f64,
    pub nodes: u64,
    pub lp_iterations: u64,
    pub sentences: Vec<String>,
    pub members: Vec<MemberReport>,
    pub verified_probability: Option<f64>,
    pub sound: Option<Verdict>,
    pub complete: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

/// A run that found a violation, with the intermediate artefacts.
#[derive(Clone, Debug)]
pub struct Run {
    pub report: RunReport,
    pub candidates: Vec<SentenceTuple>,
    pub problem: MilpProblem,
    pub solution: MilpSolution,
    pub counterexample: Option<CounterexampleSubsystem>,
    pub explanation: Option<Explanation>,
}

#[derive(Clone, Debug)]
pub enum Outcome {
    /// The requirement holds: no strategy exceeds λ.
    Holds { max_probability: f64 },
    Violated(Box<Run>),
}

impl Outcome {
    pub fn run(&self) -> Option<&Run> {
        match self {
            Outcome::Holds { .. } => None,
            Outcome::Violated(r) => Some(r),
        }
    }
}

/// `Pr^max(s̄ ⊨ ◇T)`.
pub fn check(m: &Mdp, req: &ReachabilityRequirement, it: &IterationOptions) -> Result<f64, PipelineError> {
    let report = m.validate_for(&req.target_set(m)?);
    if !report.is_valid() {
        return Err(MdpError::Invalid(report).into());
    }
    Ok(max_reach_probability(m, req, it)?[m.initial().0])
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Computes a minimal sound and complete explanation.
pub fn run_explain(
    m: &Mdp,
    v: &Vocabulary,
    req: &ReachabilityRequirement,
    opts: &ExplainOptions,
) -> Result<Outcome, PipelineError> {
    run(m, v, req, opts, Encoding::Explanation)
}

/// Computes a counterexample with the fewest states.
pub fn run_baseline(m: &Mdp, req: &ReachabilityRequirement, opts: &ExplainOptions) -> Result<Outcome, PipelineError> {
    run(m, &Vocabulary::from_names(m), req, opts, Encoding::MinimalStates)
}

pub fn run(
    m: &Mdp,
    v: &Vocabulary,
    req: &ReachabilityRequirement,
    opts: &ExplainOptions,
    encoding: Encoding,
) -> Result<Outcome, PipelineError> {
    if opts.max_conjunction == 0 {
        return Err(PipelineError::BadConjunction);
    }
    let t0 = Instant::now();
    let vmax = check(m, req, &opts.iteration)?;
    if vmax <= req.lambda {
        return Ok(Outcome::Holds { max_probability: vmax });
    }
    let t1 = Instant::now();
    let terminal = opts.terminal_action.as_deref().and_then(|a| m.action_by_name(a));
    let enc = EncodingOptions { epsilon: opts.epsilon, terminal_action: terminal };
    let candidates = match encoding {
        Encoding::Explanation => enumerate_candidates(m, opts.max_conjunction),
        Encoding::MinimalStates => Vec::new(),
    };
    let problem = match encoding {
        Encoding::Explanation => build_explanation_milp(m, req, &candidates, &enc),
        Encoding::MinimalStates => build_minimal_state_milp(m, req, &enc),
    };
    let problem = match problem {
        Ok(p) => p,
        Err(ModelError::NoViolation { max_probability, .. }) => return Ok(Outcome::Holds { max_probability }),
        Err(e) => return Err(e.into()),
    };
    let t2 = Instant::now();
    let bound = match encoding {
        Encoding::Explanation => {
            ReachabilityBound::for_explanation(m, req, &problem, &candidates, opts.epsilon, terminal)?
        }
        Encoding::MinimalStates => ReachabilityBound::for_minimal_states(m, req, &problem, opts.epsilon)?,
    };
    let solution = if opts.unit_search {
        solve_by_units(&problem, &bound, &opts.solver)
    } else {
        solve_with(&problem, &opts.solver, Some(&bound))
    };
    let t3 = Instant::now();

    let mut counterexample = None;
    let mut explanation = None;
    if let Some(values) = &solution.values {
        let cex = extract_counterexample(m, req, &problem, values, opts.epsilon, opts.membership_tol)?;
        if encoding == Encoding::Explanation {
            let vocab = v.completed_for(m);
            let selected = selected_sentences(&problem, values, &candidates);
            explanation = Some(order_sentences(m, &vocab, &cex, &selected, &candidates, terminal)?);
        }
        counterexample = Some(cex);
    }
    let t4 = Instant::now();

    let (sound, complete) = match (&counterexample, &explanation) {
        (Some(c), Some(e)) => (Some(check_sound(m, c, e)), Some(check_complete(m, c, e))),
        _ => (None, None),
    };
    let members = counterexample
        .as_ref()
        .map(|c| {
            c.members
                .iter()
                .map(|&s| MemberReport {
                    state: m.state_name(s).to_string(),
                    target: c.target_members.contains(&s),
                    action: c.sigma.get(s).map(|a| m.action_name(a).to_string()),
                    p: c.p[&s],
                    sentence: explanation.as_ref().and_then(|e| e.coverage.get(&s)).map(|k| k + 1),
                })
                .collect()
        })
        .unwrap_or_default();
    let report = RunReport {
        inputs: Vec::new(),
        encoding,
        requirement: req.describe(m),
        initial: m.state_name(m.initial()).to_string(),
        max_probability: vmax,
        lambda: req.lambda,
        epsilon: opts.epsilon,
        candidates: candidates.len(),
        stats: EncodingStats::of(&problem),
        status: solution.status,
        objective: solution.objective,
        bound: solution.bound,
        nodes: solution.stats.nodes,
        lp_iterations: solution.stats.lp_iterations,
        sentences: explanation.iter().flat_map(|e| e.sentences.iter().map(|s| s.text.clone())).collect(),
        members,
        verified_probability: counterexample.as_ref().map(|c| c.verified_probability),
        sound,
        complete,
        timings: Some(Timings {
            check_secs: secs(t1 - t0),
            encode_secs: secs(t2 - t1),
            solve_secs: secs(t3 - t2),
            explain_secs: secs(t4 - t3),
        }),
    };
    Ok(Outcome::Violated(Box::new(Run { report, candidates, problem, solution, counterexample, explanation })))
}

/// A solution using a greedily chosen, inclusion-minimal set of units.
/// Solves `problem` through a search over unit sets: the model with the
/// best set and its strategy pinned yields the assignment, and the search
/// supplies the optimality proof. Falls back to the full model when the
/// pinned one disagrees with the search.
fn solve_by_units(problem: &MilpProblem, bound: &ReachabilityBound, cfg: &SolverConfig) -> MilpSolution {
    let start = Instant::now();
    let lower: Vec<f64> = problem.columns().iter().map(|c| c.lower).collect();
    let upper: Vec<f64> = problem.columns().iter().map(|c| c.upper).collect();
    let search = bound.minimum_units(&lower, &upper, cfg);
    let Some(units) = &search.units else {
        return MilpSolution {
            status: search.status,
            objective: None,
            values: None,
            bound: search.lower_bound,
            stats: SolveStats { nodes: search.nodes, lp_iterations: 0, wall_time: start.elapsed() },
        };
    };
    let strategy = bound.strategy(units, &upper);
    let mut pinned = solve_with(&bound.pin(problem, units, Some(&strategy)), cfg, Some(bound));
    if !pinned.is_optimal() {
        pinned = solve_with(&bound.pin(problem, units, None), cfg, Some(bound));
    }
    let mut solution = if pinned.is_optimal() {
        let objective = pinned.objective.unwrap_or(f64::NAN);
        MilpSolution { status: search.status, bound: search.lower_bound.min(objective), ..pinned }
    } else {
        solve_with(problem, cfg, Some(bound))
    };
    solution.stats.nodes += search.nodes;
    solution.stats.wall_time = start.elapsed();
    solution
}

fn yes_no(v: &Option<Verdict>) -> &'static str {
    match v {
        Some(v) if v.holds => "yes",
        Some(_) => "no",
        None => "n/a",
    }
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::NodeLimit => "node limit reached",
        SolveStatus::TimeLimit => "time limit reached",
        SolveStatus::Failure => "numerical failure",
    }
}

/// Human-readable report. Timings are printed only when present.
pub fn render_text(r: &RunReport) -> String {
    let mut o = String::new();
    for (name, digest) in &r.inputs {
        let _ = writeln!(o, "input {name} sha256 {digest}");
    }
    let _ = writeln!(o, "requirement: {}", r.requirement);
    let _ = writeln!(o, "max probability from {}: {:.6}", r.initial, r.max_probability);
    let _ = writeln!(o, "status: violated; solver {}", status_name(r.status));
    if r.encoding == Encoding::Explanation {
        let _ = writeln!(o);
        let _ = writeln!(o, "explanation ({} sentences):", r.sentences.len());
        for (k, s) in r.sentences.iter().enumerate() {
            let _ = writeln!(o, "  {}. {s}", k + 1);
        }
    }
    let _ = writeln!(o);
    let names: Vec<&str> = r.members.iter().map(|m| m.state.as_str()).collect();
    let _ = writeln!(o, "counterexample: {} states ({})", names.len(), names.join(", "));
    for mem in &r.members {
        let what = match (&mem.action, mem.target) {
            (_, true) => "target".to_string(),
            (Some(a), false) => a.clone(),
            (None, false) => "-".to_string(),
        };
        let sentence = mem.sentence.map(|k| format!("  [{k}]")).unwrap_or_default();
        let _ = writeln!(o, "  {:<10} {:<14} p = {:.6}{sentence}", mem.state, what, mem.p);
    }
    if let Some(v) = r.verified_probability {
        let _ = writeln!(o, "verified probability: {v:.6} (threshold {} + {:e})", r.lambda, r.epsilon);
    }
    match r.objective {
        Some(obj) => {
            let _ = writeln!(o, "objective: {} (lower bound {})", obj.round(), r.bound.ceil().max(0.0));
        }
        None => {
            let _ = writeln!(o, "objective: none (lower bound {})", r.bound.ceil().max(0.0));
        }
    }
    let s = &r.stats;
    let _ = writeln!(
        o,
        "encoding: {} rows, {} continuous, {} binary ({} choice, {} sentence, {} include, {} step), {} candidates",
        s.rows, s.continuous, s.binary, s.choice_vars, s.sentence_vars, s.include_vars, s.step_vars, r.candidates
    );
    let _ = writeln!(o, "search: {} nodes, {} LP iterations", r.nodes, r.lp_iterations);
    if r.encoding == Encoding::Explanation {
        let _ = writeln!(o, "sound: {}", yes_no(&r.sound));
        let _ = writeln!(o, "complete: {}", yes_no(&r.complete));
        for d in r.sound.iter().chain(&r.complete).flat_map(|v| &v.diagnostics) {
            let _ = writeln!(o, "  ! {d}");
        }
    }
    if let Some(t) = &r.timings {
        let _ = writeln!(
            o,
            "time: check {:.3}s, encode {:.3}s, solve {:.3}s, explain {:.3}s",
            t.check_secs, t.encode_secs, t.solve_secs, t.explain_secs
        );
    }
    o
}

/// One line of a scaling series.
#[derive(Clone, Debug, Serialize)]
pub struct SeriesRow {
    pub n: usize,
    pub states: usize,
    pub transitions: usize,
    pub binary_vars: usize,
    pub real_vars: usize,
    pub status: Option<SolveStatus>,
    pub cex_states: Option<usize>,
    pub sentences: Option<usize>,
    pub sound: Option<bool>,
    pub complete: Option<bool>,
    pub secs: f64,
    pub baseline_status: Option<SolveStatus>,
    pub baseline_states: Option<usize>,
    pub baseline_secs: Option<f64>,
}

/// Generates `layout(n)` for every `n` and runs the explanation pipeline
/// (and the baseline when asked) on the human-zone requirement.
pub fn scale_series(
    n_list: &[usize],
    layout: impl Fn(usize) -> GridLayout,
    lambda: f64,
    opts: &ExplainOptions,
    baseline: bool,
) -> Result<Vec<SeriesRow>, PipelineError> {
    let mut rows = Vec::new();
    for &n in n_list {
        let w = generate_grid(&layout(n))?;
        let req = w.requirement(lambda);
        let start = Instant::now();
        let outcome = run_explain(&w.mdp, &w.vocabulary, &req, opts)?;
        let secs = start.elapsed().as_secs_f64();
        let mut row = SeriesRow {
            n,
            states: w.mdp.num_states(),
            transitions: w.mdp.num_transitions(),
            binary_vars: 0,
            real_vars: 0,
            status: None,
            cex_states: None,
            sentences: None,
            sound: None,
            complete: None,
            secs,
            baseline_status: None,
            baseline_states: None,
            baseline_secs: None,
        };
        if let Some(run) = outcome.run() {
            let r = &run.report;
            row.binary_vars = r.stats.binary;
            row.real_vars = r.stats.continuous;
            row.status = Some(r.status);
            row.cex_states = run.counterexample.as_ref().map(|c| c.members.len());
            row.sentences = run.explanation.as_ref().map(|e| e.sentences.len());
            row.sound = r.sound.as_ref().map(|v| v.holds);
            row.complete = r.complete.as_ref().map(|v| v.holds);
        }
        if baseline {
            let start = Instant::now();
            let b = run_baseline(&w.mdp, &req, opts)?;
            row.baseline_secs = Some(start.elapsed().as_secs_f64());
            if let Some(run) = b.run() {
                row.baseline_status = Some(run.report.status);
                row.baseline_states = run.counterexample.as_ref().map(|c| c.members.len());
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Tab-separated table of a series. Times are omitted unless asked for.
pub fn render_series(rows: &[SeriesRow], timings: bool) -> String {
    fn opt<T: ToString>(v: Option<T>) -> String {
        v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
    }
    let mut cols = vec![
        "n", "states", "transitions", "binary_vars", "real_vars", "status", "cex_states", "sentences", "sound",
        "complete",
    ];
    if timings {
        cols.push("secs");
    }
    cols.extend(["baseline_status", "baseline_states"]);
    if timings {
        cols.push("baseline_secs");
    }
    let mut o = cols.join("\t");
    o.push('\n');
    for r in rows {
        let mut f = vec![
            r.n.to_string(),
            r.states.to_string(),
            r.transitions.to_string(),
            r.binary_vars.to_string(),
            r.real_vars.to_string(),
            opt(r.status.map(status_name)),
            opt(r.cex_states),
            opt(r.sentences),
            opt(r.sound),
            opt(r.complete),
        ];
        if timings {
            f.push(format!("{:.3}", r.secs));
        }
        f.push(opt(r.baseline_status.map(status_name)));
        f.push(opt(r.baseline_states));
        if timings {
            f.push(opt(r.baseline_secs.map(|s| format!("{s:.3}"))));
        }
        o.push_str(&f.join("\t"));
        o.push('\n');
    }
    o
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{small_warehouse, small_warehouse_requirement};
    use crate::mdp::{ReachabilityRequirement, TargetSpec};

    #[test]
    fn small_warehouse_explanation() {
        let (m, v) = small_warehouse();
        let req = small_warehouse_requirement(&m);
        let out = run_explain(&m, &v, &req, &ExplainOptions::default()).unwrap();
        let run = out.run().expect("requirement is violated");
        let r = &run.report;
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_eq!(r.objective, Some(4.0));
        assert_eq!((r.stats.reach_vars, r.stats.choice_vars, r.stats.sentence_vars), (9, 11, 60));
        assert_eq!(
            r.sentences,
            vec![
                "The robot moves south when north of pick-up area.",
                "The robot moves east when west of pick-up area.",
                "The robot moves north when in pick-up area.",
                "The robot stops when in human zone.",
            ]
        );
        let members: Vec<&str> = r.members.iter().map(|x| x.state.as_str()).collect();
        assert_eq!(members, vec!["s1", "s4", "s5", "s7", "s8", "s9"]);
        assert!(r.sound.as_ref().unwrap().holds && r.complete.as_ref().unwrap().holds);
    }

    #[test]
    fn small_warehouse_baseline() {
        let (m, _) = small_warehouse();
        let req = small_warehouse_requirement(&m);
        let out = run_baseline(&m, &req, &ExplainOptions::default()).unwrap();
        let run = out.run().unwrap();
        assert_eq!(run.report.objective, Some(6.0));
        assert_eq!(run.counterexample.as_ref().unwrap().members.len(), 6);
    }

    #[test]
    fn holding_requirement_has_no_run() {
        let (m, v) = small_warehouse();
        let zone = m.prop_by_name("in_human_zone").unwrap();
        let req = ReachabilityRequirement::new(TargetSpec::Proposition(zone), 0.6).unwrap();
        let out = run_explain(&m, &v, &req, &ExplainOptions::default()).unwrap();
        assert!(matches!(out, Outcome::Holds { max_probability } if (max_probability - 0.5211).abs() < 1e-3));
    }

    #[test]
    fn text_report_without_timings_is_stable() {
        let (m, v) = small_warehouse();
        let req = small_warehouse_requirement(&m);
        let render = || {
            let out = run_explain(&m, &v, &req, &ExplainOptions::default()).unwrap();
            let mut r = out.run().unwrap().report.clone();
            r.timings = None;
            render_text(&r)
        };
        let a = render();
        assert_eq!(a, render());
        assert!(a.contains("  4. The robot stops when in human zone.\n"));
    }

    #[test]
    fn series_on_tiny_grid() {
        let rows = scale_series(&[3], GridLayout::default_for, 0.1, &ExplainOptions::default(), true).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].states, 9);
        let table = render_series(&rows, false);
        assert_eq!(table.lines().count(), 2);
    }

    #[test]
    fn unit_search_agrees_with_full_branch_and_bound() {
        let cfg = crate::random::RandomMdpConfig::default();
        let full = ExplainOptions { unit_search: false, ..ExplainOptions::default() };
        let mut compared = 0;
        for seed in 0..40 {
            let (m, req) = crate::random::random_instance(seed, &cfg);
            let v = Vocabulary::from_names(&m);
            for encoding in [Encoding::Explanation, Encoding::MinimalStates] {
                let (Ok(a), Ok(b)) = (
                    run(&m, &v, &req, &ExplainOptions::default(), encoding),
                    run(&m, &v, &req, &full, encoding),
                ) else {
                    continue;
                };
                let (Some(a), Some(b)) = (a.run(), b.run()) else { panic!("seed {seed}: requirement holds") };
                assert_eq!(a.report.status, b.report.status, "seed {seed}");
                assert_eq!(a.report.objective, b.report.objective, "seed {seed}");
                compared += usize::from(a.report.objective.is_some());
            }
        }
        assert!(compared >= 40);
    }
}
