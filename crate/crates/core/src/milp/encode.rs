//! MILP encodings of the counterexample problems.
//!
//! Both encodings share the reachability core: a probability column `p_s`
//! per state and a choice column `θ_{s,α}` per enabled non-target pair,
//! linked by
//!
//! ```text
//! p_init >= λ + ε
//! p_t = 1                                       t ∈ T
//! p_s <= (1 - θ_{s,α}) + Σ P(s,α,s')·p_{s'}     s ∉ T, α ∈ Act(s)
//! p_s <= Σ_α θ_{s,α}                            s ∉ T
//! ```
//!
//! The explanation encoding adds a sentence column `μ_i` per candidate and
//! requires every chosen pair to be covered by a selected sentence; it
//! minimises the number of sentences. The state-minimal encoding instead
//! minimises the number of included states.
//!
//! The core alone admits spurious solutions on end components that never
//! leave the non-target states (a self-loop satisfies `p_s <= p_s` for any
//! `p_s`). For states inside such end components the encoders add a rank
//! column `r_s` and require every chosen internal step to strictly increase
//! the rank, which forbids closed cycles. Models without such end components
//! (after removing states that cannot reach a target) get no extra columns.

use std::collections::BTreeSet;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use thiserror::Error;

use super::problem::{MilpProblem, Relation, VarKind, VarTag};
use crate::mdp::{
    can_reach, max_reach_probability, ActionId, Choice, IterationOptions, Mdp, MdpError, ReachabilityRequirement,
    StateId, TargetSet,
};
use crate::templates::SentenceTuple;

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("no counterexample exists: maximum reachability {max_probability} does not exceed {lambda}")]
    NoViolation { max_probability: f64, lambda: f64 },
    #[error("epsilon must be positive and keep λ + ε <= 1 (got ε = {0})")]
    BadEpsilon(f64),
    #[error("initial state `{0}` has no enabled action that any candidate sentence can describe")]
    Uncoverable(String),
}

/// Knobs shared by both encoders.
#[derive(Clone, Copy, Debug)]
pub struct EncodingOptions {
    /// Margin replacing the strict `p_init > λ`.
    pub epsilon: f64,
    /// When set, every target entered by a chosen step must be described by a
    /// sentence built from this action (e.g. "stops").
    pub terminal_action: Option<ActionId>,
}

impl Default for EncodingOptions {
    fn default() -> Self {
        EncodingOptions { epsilon: DEFAULT_EPSILON, terminal_action: None }
    }
}

/// Candidate sentences able to describe action `a` in state `s`.
pub fn covering_candidates<'c>(
    m: &'c Mdp,
    candidates: &'c [SentenceTuple],
    s: StateId,
    a: ActionId,
) -> impl Iterator<Item = &'c SentenceTuple> + 'c {
    candidates.iter().filter(move |c| c.describes(m, s, a))
}

/// Non-target `(s, α)` pairs that no candidate describes; the encoding
/// forces `θ_{s,α} = 0` for them.
pub fn coverage_gaps(
    m: &Mdp,
    req: &ReachabilityRequirement,
    candidates: &[SentenceTuple],
) -> Result<Vec<(StateId, ActionId)>, MdpError> {
    let targets = req.target_set(m)?;
    Ok(m.states()
        .filter(|&s| !targets.contains(s))
        .flat_map(|s| m.enabled(s).map(move |a| (s, a)))
        .filter(|&(s, a)| covering_candidates(m, candidates, s, a).next().is_none())
        .collect())
}

/// Targets whose terminal behaviour can be put into words.
pub fn describable_targets(
    m: &Mdp,
    targets: &TargetSet,
    candidates: &[SentenceTuple],
    terminal: Option<ActionId>,
) -> Vec<bool> {
    m.states()
        .map(|t| match terminal {
            Some(a) if targets.contains(t) => {
                m.choice(t, a).is_some() && covering_candidates(m, candidates, t, a).next().is_some()
            }
            _ => false,
        })
        .collect()
}

struct Core {
    problem: MilpProblem,
    p: Vec<usize>,
    /// `θ` column of every non-target choice, indexed like `m.choices(s)`.
    theta: Vec<Vec<usize>>,
}

fn check_preconditions(m: &Mdp, req: &ReachabilityRequirement, opts: &EncodingOptions) -> Result<TargetSet, ModelError> {
    if !(opts.epsilon > 0.0) || req.lambda + opts.epsilon > 1.0 {
        return Err(ModelError::BadEpsilon(opts.epsilon));
    }
    let report = m.validate();
    if !report.is_valid() {
        return Err(MdpError::Invalid(report).into());
    }
    let targets = req.target_set(m)?;
    let vmax = max_reach_probability(m, req, &IterationOptions::default())?;
    let at_init = vmax[m.initial().0];
    if at_init <= req.lambda {
        return Err(ModelError::NoViolation { max_probability: at_init, lambda: req.lambda });
    }
    Ok(targets)
}

/// Non-target states that can reach `T` and are reachable from the initial
/// state, both using only choices accepted by `allowed`. All other states
/// can be given probability zero without losing any subsystem.
fn active_states(m: &Mdp, targets: &TargetSet, allowed: impl Fn(StateId, &Choice) -> bool + Copy) -> Vec<bool> {
    let live = can_reach(m, targets, allowed);
    let mut seen = vec![false; m.num_states()];
    let mut queue = std::collections::VecDeque::new();
    let init = m.initial();
    if live[init.0] && !targets.contains(init) {
        seen[init.0] = true;
        queue.push_back(init);
    }
    while let Some(s) = queue.pop_front() {
        for c in m.choices(s).iter().filter(|c| allowed(s, c)) {
            for &(t, _) in &c.successors {
                if live[t.0] && !targets.contains(t) && !seen[t.0] {
                    seen[t.0] = true;
                    queue.push_back(t);
                }
            }
        }
    }
    seen
}

/// Builds columns `p`, `θ` and rows for the reachability core in the
/// deterministic order `p_init`, `p_t = 1`, transition rows, choice rows.
fn reachability_core(
    m: &Mdp,
    req: &ReachabilityRequirement,
    targets: &TargetSet,
    opts: &EncodingOptions,
    active: &[bool],
) -> Core {
    let mut problem = MilpProblem::new();
    let p: Vec<usize> = m
        .states()
        .map(|s| {
            let upper = if targets.contains(s) || active[s.0] { 1.0 } else { 0.0 };
            problem.add_tagged(VarTag::Reach(s), VarKind::Continuous, 0.0, upper)
        })
        .collect();
    let theta: Vec<Vec<usize>> = m
        .states()
        .map(|s| {
            if targets.contains(s) {
                Vec::new()
            } else {
                let upper = if active[s.0] { 1.0 } else { 0.0 };
                m.choices(s)
                    .iter()
                    .map(|c| problem.add_tagged(VarTag::Choice(s, c.action), VarKind::Binary, 0.0, upper))
                    .collect()
            }
        })
        .collect();

    let init = m.initial();
    problem.add_constraint(vec![(p[init.0], 1.0)], Relation::Ge, req.lambda + opts.epsilon);
    for t in targets.iter() {
        problem.add_constraint(vec![(p[t.0], 1.0)], Relation::Eq, 1.0);
    }
    for s in m.states().filter(|&s| !targets.contains(s)) {
        for (c, &th) in m.choices(s).iter().zip(&theta[s.0]) {
            // p_s + θ - Σ P p' <= 1
            let mut terms = vec![(p[s.0], 1.0), (th, 1.0)];
            for &(t, pr) in &c.successors {
                if t == s {
                    terms[0].1 -= pr;
                } else {
                    terms.push((p[t.0], -pr));
                }
            }
            problem.add_constraint(terms, Relation::Le, 1.0);
        }
    }
    for s in m.states().filter(|&s| !targets.contains(s)) {
        let mut terms = vec![(p[s.0], 1.0)];
        terms.extend(theta[s.0].iter().map(|&th| (th, -1.0)));
        problem.add_constraint(terms, Relation::Le, 0.0);
    }
    Core { problem, p, theta }
}

/// Maximal end components of the sub-MDP on `region` restricted to choices
/// accepted by `allowed`. Returns, for every state, the component id if the
/// state lies in a non-trivial end component.
pub(crate) fn end_components(
    m: &Mdp,
    region: &[bool],
    allowed: &dyn Fn(StateId, &Choice) -> bool,
) -> Vec<Option<usize>> {
    let n = m.num_states();
    let mut block: Vec<Option<usize>> = (0..n).map(|i| region[i].then_some(0)).collect();
    loop {
        let internal = |s: StateId, c: &Choice, block: &[Option<usize>]| {
            allowed(s, c) && c.successors.iter().all(|&(t, _)| block[t.0].is_some() && block[t.0] == block[s.0])
        };
        let mut g = DiGraph::<usize, ()>::new();
        let nodes: Vec<_> = (0..n).map(|i| g.add_node(i)).collect();
        for s in m.states().filter(|s| block[s.0].is_some()) {
            for c in m.choices(s).iter().filter(|c| internal(s, c, &block)) {
                for &(t, _) in &c.successors {
                    g.add_edge(nodes[s.0], nodes[t.0], ());
                }
            }
        }
        let mut next: Vec<Option<usize>> = vec![None; n];
        let mut sccs = tarjan_scc(&g);
        for scc in &mut sccs {
            scc.sort();
        }
        sccs.sort_by_key(|scc| g[scc[0]]);
        let mut id = 0;
        for scc in sccs {
            let members: Vec<usize> = scc.iter().map(|&nx| g[nx]).filter(|&i| block[i].is_some()).collect();
            if members.is_empty() {
                continue;
            }
            for &i in &members {
                next[i] = Some(id);
            }
            id += 1;
        }
        // A component is only kept if each member has an action staying inside it.
        let mut changed = true;
        while changed {
            changed = false;
            for s in m.states() {
                if next[s.0].is_some() && !m.choices(s).iter().any(|c| internal(s, c, &next)) {
                    next[s.0] = None;
                    changed = true;
                }
            }
        }
        let same_partition = (0..n).all(|i| {
            (0..n).all(|j| (block[i].is_some() && block[i] == block[j]) == (next[i].is_some() && next[i] == next[j]))
        });
        if same_partition {
            return next;
        }
        block = next;
    }
}

/// Adds rank columns and rows excluding closed cycles inside end components.
fn add_rank_constraints(
    m: &Mdp,
    core: &mut Core,
    region: &[bool],
    allowed: &dyn Fn(StateId, &Choice) -> bool,
) {
    let comp = end_components(m, region, allowed);
    let mut size = std::collections::BTreeMap::<usize, usize>::new();
    for c in comp.iter().flatten() {
        *size.entry(*c).or_default() += 1;
    }
    if size.is_empty() {
        return;
    }
    let rank: Vec<Option<usize>> = m
        .states()
        .map(|s| comp[s.0].map(|_| core.problem.add_tagged(VarTag::Rank(s), VarKind::Continuous, 0.0, 1.0)))
        .collect();
    for s in m.states() {
        let Some(k) = comp[s.0] else { continue };
        let delta = 1.0 / size[&k] as f64;
        for (c, &th) in m.choices(s).iter().zip(&core.theta[s.0]) {
            let inside = allowed(s, c) && c.successors.iter().all(|&(t, _)| comp[t.0] == Some(k));
            if !inside {
                continue;
            }
            let others: Vec<StateId> = c.successors.iter().map(|&(t, _)| t).filter(|&t| t != s).collect();
            let rs = rank[s.0].expect("member has a rank");
            match others.as_slice() {
                [] => core.problem.add_constraint(vec![(th, 1.0)], Relation::Le, 0.0),
                [t] => core.problem.add_constraint(
                    vec![(rs, 1.0), (rank[t.0].expect("member has a rank"), -1.0), (th, 1.0)],
                    Relation::Le,
                    1.0 - delta,
                ),
                _ => {
                    let ws: Vec<(StateId, usize)> = others
                        .iter()
                        .map(|&t| {
                            (t, core.problem.add_tagged(VarTag::Step(s, c.action, t), VarKind::Binary, 0.0, 1.0))
                        })
                        .collect();
                    let mut terms = vec![(th, 1.0)];
                    terms.extend(ws.iter().map(|&(_, w)| (w, -1.0)));
                    core.problem.add_constraint(terms, Relation::Le, 0.0);
                    for (t, w) in ws {
                        core.problem.add_constraint(
                            vec![(rs, 1.0), (rank[t.0].expect("member has a rank"), -1.0), (w, 1.0)],
                            Relation::Le,
                            1.0 - delta,
                        );
                    }
                }
            }
        }
    }
}

/// The explanation-minimal MILP: minimise the number of selected sentences.
///
/// Columns are ordered `p` (by state), `θ` (by state, action), `μ` (by
/// candidate index), then any rank columns. Rows follow the order initial
/// threshold, target rows, transition rows, choice rows, coverage rows,
/// target-description rows, rank rows.
pub fn build_explanation_milp(
    m: &Mdp,
    req: &ReachabilityRequirement,
    candidates: &[SentenceTuple],
    opts: &EncodingOptions,
) -> Result<MilpProblem, ModelError> {
    let targets = check_preconditions(m, req, opts)?;
    let coverable = |s: StateId, c: &Choice| covering_candidates(m, candidates, s, c.action).next().is_some();
    let init = m.initial();
    if !targets.contains(init) && !m.choices(init).iter().any(|c| coverable(init, c)) {
        return Err(ModelError::Uncoverable(m.state_name(init).to_string()));
    }
    let live = active_states(m, &targets, coverable);
    let mut core = reachability_core(m, req, &targets, opts, &live);
    let mu: Vec<usize> = candidates
        .iter()
        .map(|c| core.problem.add_tagged(VarTag::Sentence(c.index), VarKind::Binary, 0.0, 1.0))
        .collect();
    let mu_col = |c: &SentenceTuple| mu[c.index];

    for s in m.states().filter(|&s| !targets.contains(s)) {
        for (c, &th) in m.choices(s).iter().zip(&core.theta[s.0]) {
            let mut terms = vec![(th, 1.0)];
            terms.extend(covering_candidates(m, candidates, s, c.action).map(|k| (mu_col(k), -1.0)));
            core.problem.add_constraint(terms, Relation::Le, 0.0);
        }
    }

    let describable = describable_targets(m, &targets, candidates, opts.terminal_action);
    if let Some(term) = opts.terminal_action {
        let cover = |t: StateId| -> Vec<(usize, f64)> {
            covering_candidates(m, candidates, t, term).map(|k| (mu_col(k), -1.0)).collect()
        };
        if describable[init.0] {
            let terms = cover(init).into_iter().map(|(j, _)| (j, 1.0)).collect();
            core.problem.add_constraint(terms, Relation::Ge, 1.0);
        }
        for s in m.states().filter(|&s| !targets.contains(s)) {
            for (c, &th) in m.choices(s).iter().zip(&core.theta[s.0]) {
                for &(t, _) in &c.successors {
                    if describable[t.0] {
                        let mut terms = vec![(th, 1.0)];
                        terms.extend(cover(t));
                        core.problem.add_constraint(terms, Relation::Le, 0.0);
                    }
                }
            }
        }
    }

    add_rank_constraints(m, &mut core, &live, &coverable);
    core.problem.set_objective(mu.iter().map(|&j| (j, 1.0)).collect());
    Ok(core.problem)
}

/// The state-minimal MILP: minimise the number of states in the subsystem.
///
/// Non-target states are included when they carry probability
/// (`p_s <= x_s`); a target counts once some chosen step can enter it.
pub fn build_minimal_state_milp(
    m: &Mdp,
    req: &ReachabilityRequirement,
    opts: &EncodingOptions,
) -> Result<MilpProblem, ModelError> {
    let targets = check_preconditions(m, req, opts)?;
    let live = active_states(m, &targets, |_, _| true);
    let mut core = reachability_core(m, req, &targets, opts, &live);
    let x: Vec<usize> = m
        .states()
        .map(|s| core.problem.add_tagged(VarTag::Include(s), VarKind::Binary, 0.0, 1.0))
        .collect();
    let init = m.initial();
    if targets.contains(init) {
        core.problem.add_constraint(vec![(x[init.0], 1.0)], Relation::Ge, 1.0);
    }
    for s in m.states().filter(|&s| !targets.contains(s)) {
        core.problem.add_constraint(vec![(core.p[s.0], 1.0), (x[s.0], -1.0)], Relation::Le, 0.0);
    }
    for s in m.states().filter(|&s| !targets.contains(s)) {
        for (c, &th) in m.choices(s).iter().zip(&core.theta[s.0]) {
            let entered: BTreeSet<StateId> =
                c.successors.iter().map(|&(t, _)| t).filter(|&t| targets.contains(t)).collect();
            for t in entered {
                core.problem.add_constraint(vec![(th, 1.0), (x[t.0], -1.0)], Relation::Le, 0.0);
            }
        }
    }
    add_rank_constraints(m, &mut core, &live, &|_, _| true);
    core.problem.set_objective(x.iter().map(|&j| (j, 1.0)).collect());
    Ok(core.problem)
}
