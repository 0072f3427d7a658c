//! From a solved MILP to a counterexample subsystem and an ordered, checked
//! natural-language explanation; plus an exhaustive minimality oracle.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use itertools::Itertools;
use serde::Serialize;
use thiserror::Error;

use crate::mdp::{
    reach_probability_under_strategy, ActionId, Mdp, MdpError, ReachabilityRequirement, StateId, Strategy, TargetSet,
};
use crate::milp::{describable_targets, MilpProblem, VarTag};
use crate::templates::{instantiate, Sentence, SentenceTuple, TemplateError, Vocabulary};

pub const MEMBERSHIP_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("solution has no value for column `{0}`")]
    MissingColumn(String),
    #[error("state `{0}` carries probability but no action is chosen")]
    NoChoice(String),
    #[error("no selected sentence describes action `{action}` in state `{state}`")]
    Uncovered { state: String, action: String },
    #[error("subsystem reaches the targets with probability {verified}, below the required {required}")]
    Verification { verified: f64, required: f64 },
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
}

/// A critical subsystem read off a MILP solution.
#[derive(Clone, Debug, Serialize)]
pub struct CounterexampleSubsystem {
    /// States reachable from the initial state along chosen actions through
    /// states with positive probability, including the targets reached.
    pub members: BTreeSet<StateId>,
    pub target_members: BTreeSet<StateId>,
    /// Chosen action of every non-target member.
    pub sigma: Strategy,
    /// Solver value of `p_s` per member.
    pub p: BTreeMap<StateId, f64>,
    /// Exact reachability probability inside the subsystem.
    pub verified_probability: f64,
}

fn value_of(problem: &MilpProblem, values: &[f64], tag: VarTag) -> Result<f64, ExplainError> {
    problem.tagged(tag).map(|j| values[j]).ok_or_else(|| ExplainError::MissingColumn(tag.name()))
}

/// Builds the subsystem selected by `values` (a solution of either encoding)
/// and verifies it reaches the targets with probability at least `λ + ε`.
pub fn extract_counterexample(
    m: &Mdp,
    req: &ReachabilityRequirement,
    problem: &MilpProblem,
    values: &[f64],
    epsilon: f64,
    membership_tol: f64,
) -> Result<CounterexampleSubsystem, ExplainError> {
    let targets = req.target_set(m)?;
    let init = m.initial();
    let mut members = BTreeSet::new();
    let mut sigma = Strategy::new();
    let mut p = BTreeMap::new();
    let mut queue = VecDeque::from([init]);
    members.insert(init);
    while let Some(s) = queue.pop_front() {
        p.insert(s, value_of(problem, values, VarTag::Reach(s))?);
        if targets.contains(s) {
            continue;
        }
        let mut chosen = None;
        for c in m.choices(s) {
            if value_of(problem, values, VarTag::Choice(s, c.action))? > 0.5 {
                chosen = Some(c);
                break;
            }
        }
        let c = chosen.ok_or_else(|| ExplainError::NoChoice(m.state_name(s).to_string()))?;
        sigma.set(s, c.action);
        for &(t, _) in &c.successors {
            if members.contains(&t) {
                continue;
            }
            if targets.contains(t) || value_of(problem, values, VarTag::Reach(t))? > membership_tol {
                members.insert(t);
                queue.push_back(t);
            }
        }
    }
    let target_members: BTreeSet<StateId> = members.iter().copied().filter(|&s| targets.contains(s)).collect();
    let verified = reach_probability_under_strategy(m, &sigma, req, &members)?[init.0];
    let required = (req.lambda + epsilon - 1e-8).min(p[&init] - 1e-6);
    if verified < required {
        return Err(ExplainError::Verification { verified, required });
    }
    Ok(CounterexampleSubsystem { members, target_members, sigma, p, verified_probability: verified })
}

/// Ordered explanation sentences.
#[derive(Clone, Debug, Serialize)]
pub struct Explanation {
    pub sentences: Vec<Sentence>,
    /// Member state → index into `sentences` of its designated sentence.
    pub coverage: BTreeMap<StateId, usize>,
    /// Action used to describe what happens in target states.
    pub terminal_action: Option<ActionId>,
    /// Number of sentence columns set in the solution.
    pub selected: usize,
}

/// Candidate indices selected (`μ = 1`) in `values`.
pub fn selected_sentences(problem: &MilpProblem, values: &[f64], candidates: &[SentenceTuple]) -> Vec<usize> {
    candidates
        .iter()
        .filter(|c| problem.tagged(VarTag::Sentence(c.index)).is_some_and(|j| values[j] > 0.5))
        .map(|c| c.index)
        .collect()
}

/// Orders the selected sentences by a breadth-first walk of the subsystem
/// from the initial state (successors in ascending id, each state visited
/// once). Each state is described by the lowest-index selected sentence that
/// matches its chosen action; target states use `terminal`.
pub fn order_sentences(
    m: &Mdp,
    v: &Vocabulary,
    cex: &CounterexampleSubsystem,
    selected: &[usize],
    candidates: &[SentenceTuple],
    terminal: Option<ActionId>,
) -> Result<Explanation, ExplainError> {
    let chosen: Vec<&SentenceTuple> = selected.iter().map(|&i| &candidates[i]).collect();
    let mut sentences: Vec<Sentence> = Vec::new();
    let mut position: BTreeMap<usize, usize> = BTreeMap::new();
    let mut coverage = BTreeMap::new();
    let mut visited = BTreeSet::from([m.initial()]);
    let mut queue = VecDeque::from([m.initial()]);
    while let Some(s) = queue.pop_front() {
        let action = if cex.target_members.contains(&s) {
            match terminal {
                Some(a) if m.choice(s, a).is_some() => a,
                _ => continue,
            }
        } else {
            cex.sigma.get(s).ok_or_else(|| ExplainError::NoChoice(m.state_name(s).to_string()))?
        };
        match chosen.iter().find(|t| t.describes(m, s, action)) {
            Some(t) => {
                let k = match position.get(&t.index) {
                    Some(&k) => k,
                    None => {
                        sentences.push(instantiate(v, m, t)?);
                        position.insert(t.index, sentences.len() - 1);
                        sentences.len() - 1
                    }
                };
                coverage.insert(s, k);
            }
            None if cex.target_members.contains(&s) => {}
            None => {
                return Err(ExplainError::Uncovered {
                    state: m.state_name(s).to_string(),
                    action: m.action_name(action).to_string(),
                })
            }
        }
        if cex.target_members.contains(&s) {
            continue;
        }
        let c = m.choice(s, action).expect("chosen action is enabled");
        for &(t, _) in &c.successors {
            if cex.members.contains(&t) && visited.insert(t) {
                queue.push_back(t);
            }
        }
    }
    Ok(Explanation { sentences, coverage, terminal_action: terminal, selected: selected.len() })
}

/// Outcome of a checker with a human-readable reason per failure.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Verdict {
    pub holds: bool,
    pub diagnostics: Vec<String>,
}

impl Verdict {
    fn from_diagnostics(diagnostics: Vec<String>) -> Self {
        Verdict { holds: diagnostics.is_empty(), diagnostics }
    }
}

fn behaviour(m: &Mdp, cex: &CounterexampleSubsystem, expl: &Explanation, s: StateId) -> Option<ActionId> {
    if cex.target_members.contains(&s) {
        expl.terminal_action.filter(|&a| m.choice(s, a).is_some())
    } else {
        cex.sigma.get(s)
    }
}

/// Every sentence describes the behaviour of at least one member state.
pub fn check_sound(m: &Mdp, cex: &CounterexampleSubsystem, expl: &Explanation) -> Verdict {
    let mut diagnostics = Vec::new();
    for (k, sen) in expl.sentences.iter().enumerate() {
        let t = &sen.source;
        let witnessed = cex
            .members
            .iter()
            .any(|&s| behaviour(m, cex, expl, s).is_some_and(|a| t.describes(m, s, a)));
        if !witnessed {
            diagnostics.push(format!("sentence {} (\"{}\") describes no state of the counterexample", k + 1, sen.text));
        }
    }
    Verdict::from_diagnostics(diagnostics)
}

/// Every non-target member has exactly one designated sentence, and that
/// sentence matches its chosen action and labels.
pub fn check_complete(m: &Mdp, cex: &CounterexampleSubsystem, expl: &Explanation) -> Verdict {
    let mut diagnostics = Vec::new();
    for &s in cex.members.iter().filter(|s| !cex.target_members.contains(s)) {
        let name = m.state_name(s);
        let Some(&k) = expl.coverage.get(&s) else {
            diagnostics.push(format!("state {name} is not described by any sentence"));
            continue;
        };
        let Some(sen) = expl.sentences.get(k) else {
            diagnostics.push(format!("state {name} refers to missing sentence {}", k + 1));
            continue;
        };
        match cex.sigma.get(s) {
            Some(a) if sen.source.describes(m, s, a) => {}
            _ => diagnostics.push(format!("sentence {} does not describe the behaviour of state {name}", k + 1)),
        }
    }
    for &s in expl.coverage.keys() {
        if !cex.members.contains(&s) {
            diagnostics.push(format!("state {} is described but not part of the counterexample", m.state_name(s)));
        }
    }
    Verdict::from_diagnostics(diagnostics)
}

/// Exhaustive-search limits.
pub const ORACLE_MAX_STATES: usize = 12;
pub const ORACLE_MAX_ACTIONS: usize = 3;
pub const ORACLE_MAX_CANDIDATES: usize = 24;

/// Smallest number of sentences of any sound and complete explanation of
/// any counterexample, by enumerating sentence subsets in order of size.
///
/// For a subset `D`, the admissible actions are those described by some
/// sentence of `D`; when `terminal` is given, steps into a target whose
/// terminal behaviour could be described but is not described by `D` are
/// inadmissible as well. `D` suffices iff the maximum probability of reaching
/// the targets with admissible actions only is at least `λ + ε`.
///
/// Returns the minimum and the lexicographically first optimal subset.
pub fn brute_force_min_explanation(
    m: &Mdp,
    req: &ReachabilityRequirement,
    candidates: &[SentenceTuple],
    epsilon: f64,
    terminal: Option<ActionId>,
) -> Result<Option<(usize, Vec<usize>)>, ExplainError> {
    if m.num_states() > ORACLE_MAX_STATES {
        return Err(ExplainError::TooLarge(format!("{} states", m.num_states())));
    }
    if let Some(s) = m.states().find(|&s| m.choices(s).len() > ORACLE_MAX_ACTIONS) {
        return Err(ExplainError::TooLarge(format!("{} actions in state {}", m.choices(s).len(), m.state_name(s))));
    }
    if candidates.len() > ORACLE_MAX_CANDIDATES {
        return Err(ExplainError::TooLarge(format!("{} candidates", candidates.len())));
    }
    let targets = req.target_set(m)?;
    let describable = describable_targets(m, &targets, candidates, terminal);
    let required = req.lambda + epsilon;
    let init = m.initial();

    for k in 0..=candidates.len() {
        for subset in (0..candidates.len()).combinations(k) {
            let chosen: Vec<&SentenceTuple> = subset.iter().map(|&i| &candidates[i]).collect();
            let covers = |s: StateId, a: ActionId| chosen.iter().any(|t| t.describes(m, s, a));
            let blocked: Vec<bool> = m
                .states()
                .map(|t| describable[t.0] && !covers(t, terminal.expect("describable implies a terminal action")))
                .collect();
            let value = if targets.contains(init) {
                if blocked[init.0] {
                    0.0
                } else {
                    1.0
                }
            } else {
                max_reach_admissible(m, &targets, |s, a| {
                    covers(s, a) && m.choice(s, a).is_some_and(|c| c.successors.iter().all(|&(t, _)| !blocked[t.0]))
                })[init.0]
            };
            if value >= required - 1e-9 {
                return Ok(Some((k, subset)));
            }
        }
    }
    Ok(None)
}

/// Maximum reachability using admissible actions only; states without an
/// admissible action are absorbing failures. Plain value iteration from zero
/// after removing states that cannot reach `T`.
fn max_reach_admissible(m: &Mdp, targets: &TargetSet, admissible: impl Fn(StateId, ActionId) -> bool) -> Vec<f64> {
    let n = m.num_states();
    let mut can = vec![false; n];
    for t in targets.iter() {
        can[t.0] = true;
    }
    loop {
        let mut changed = false;
        for s in m.states() {
            if !can[s.0] && m.choices(s).iter().any(|c| admissible(s, c.action) && c.successors.iter().any(|&(t, _)| can[t.0])) {
                can[s.0] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut v: Vec<f64> = (0..n).map(|i| if targets.contains(StateId(i)) { 1.0 } else { 0.0 }).collect();
    for _ in 0..10_000_000 {
        let mut delta: f64 = 0.0;
        for s in m.states().filter(|&s| can[s.0] && !targets.contains(s)) {
            let best = m
                .choices(s)
                .iter()
                .filter(|c| admissible(s, c.action))
                .map(|c| c.successors.iter().map(|&(t, p)| p * v[t.0]).sum::<f64>())
                .fold(0.0, f64::max);
            delta = delta.max(best - v[s.0]);
            v[s.0] = best;
        }
        if delta < 1e-13 {
            break;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{MdpBuilder, TargetSpec};
    use crate::templates::enumerate_candidates;

    fn chain() -> (Mdp, ReachabilityRequirement) {
        // a --go--> b --go--> goal, one label everywhere: one sentence suffices.
        let mut b = MdpBuilder::new();
        b.initial("a")
            .transition("a", "go", "b", 1.0)
            .transition("b", "go", "g", 0.8)
            .transition("b", "go", "a", 0.2)
            .transition("g", "go", "g", 1.0)
            .label("a", "floor")
            .label("b", "floor")
            .label("g", "goal");
        let m = b.build().unwrap();
        let req = ReachabilityRequirement::new(TargetSpec::Proposition(m.prop_by_name("goal").unwrap()), 0.5).unwrap();
        (m, req)
    }

    #[test]
    fn one_sentence_lower_bound() {
        let (m, req) = chain();
        let cands = enumerate_candidates(&m, 1);
        let (k, witness) = brute_force_min_explanation(&m, &req, &cands, 1e-6, None).unwrap().unwrap();
        assert_eq!(k, 1);
        assert_eq!(cands[witness[0]].props, vec![m.prop_by_name("floor").unwrap()]);
    }

    #[test]
    fn terminal_sentence_counts() {
        let (m, req) = chain();
        let cands = enumerate_candidates(&m, 1);
        let go = m.action_by_name("go").unwrap();
        let (k, _) = brute_force_min_explanation(&m, &req, &cands, 1e-6, Some(go)).unwrap().unwrap();
        assert_eq!(k, 2);
    }

    #[test]
    fn checkers_flag_injected_and_missing_sentences() {
        let (m, _) = chain();
        let cands = enumerate_candidates(&m, 1);
        let (a, b, g) = (StateId(0), StateId(1), StateId(2));
        let go = m.action_by_name("go").unwrap();
        let cex = CounterexampleSubsystem {
            members: BTreeSet::from([a, b, g]),
            target_members: BTreeSet::from([g]),
            sigma: [(a, go), (b, go)].into_iter().collect(),
            p: BTreeMap::new(),
            verified_probability: 1.0,
        };
        let v = Vocabulary::from_names(&m);
        let floor = cands.iter().find(|c| c.props == vec![m.prop_by_name("floor").unwrap()]).unwrap().index;
        let expl = order_sentences(&m, &v, &cex, &[floor], &cands, None).unwrap();
        assert_eq!(expl.sentences.len(), 1);
        assert_eq!(expl.sentences[0].text, "The robot go when floor.");
        assert!(check_sound(&m, &cex, &expl).holds);
        assert!(check_complete(&m, &cex, &expl).holds);

        let mut injected = expl.clone();
        let goal = cands.iter().find(|c| c.props == vec![m.prop_by_name("goal").unwrap()]).unwrap();
        injected.sentences.push(instantiate(&v, &m, goal).unwrap());
        let verdict = check_sound(&m, &cex, &injected);
        assert!(!verdict.holds);
        assert!(verdict.diagnostics[0].contains("The robot go when goal."));

        let mut missing = expl;
        missing.coverage.remove(&b);
        let verdict = check_complete(&m, &cex, &missing);
        assert!(!verdict.holds);
        assert!(verdict.diagnostics[0].contains("state b"));
    }

    #[test]
    fn oracle_rejects_large_instances() {
        let mut b = MdpBuilder::new();
        b.initial("s0");
        for i in 0..13 {
            b.transition(&format!("s{i}"), "go", &format!("s{}", (i + 1) % 13), 1.0);
        }
        b.label("s3", "goal");
        let m = b.build().unwrap();
        let req = ReachabilityRequirement::new(TargetSpec::Proposition(m.prop_by_name("goal").unwrap()), 0.5).unwrap();
        let err = brute_force_min_explanation(&m, &req, &enumerate_candidates(&m, 1), 1e-6, None).unwrap_err();
        assert!(matches!(err, ExplainError::TooLarge(_)));
    }
}
