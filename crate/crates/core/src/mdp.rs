//! Markov decision processes with labelled states, reachability requirements,
//! positional strategies and the two reachability oracles used throughout the
//! crate: maximum reachability by value iteration and exact evaluation of a
//! fixed strategy on a sub-model.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

/// Tolerance for a distribution summing to one.
pub const DISTRIBUTION_TOL: f64 = 1e-9;

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident, $prefix:literal) => {
        $(#[$doc])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
        pub struct $name(pub usize);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Dense index of a state.
    StateId,
    "s#"
);
id_type!(
    /// Dense index into the global action alphabet.
    ActionId,
    "a#"
);
id_type!(
    /// Dense index into the atomic-proposition alphabet.
    PropId,
    "ap#"
);

/// One enabled action of a state together with its successor distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    pub action: ActionId,
    pub successors: Vec<(StateId, f64)>,
}

/// A labelled MDP `(S, s̄, Act, P, L)` with per-state enabled actions.
///
/// Construction through [`MdpBuilder::build`] validates the model; the
/// unchecked constructor exists so that malformed inputs can still be
/// inspected with [`Mdp::validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    state_names: Vec<String>,
    action_names: Vec<String>,
    prop_names: Vec<String>,
    initial: StateId,
    choices: Vec<Vec<Choice>>,
    labels: Vec<Vec<PropId>>,
}

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("invalid model:\n{0}")]
    Invalid(ValidationReport),
    #[error("value iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("strategy is undefined on state `{0}`")]
    StrategyUndefined(String),
    #[error("strategy picks action `{action}` which is not enabled in state `{state}`")]
    StrategyNotEnabled { state: String, action: String },
    #[error("initial state `{0}` is not a member of the subsystem")]
    InitialNotMember(String),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("requirement: {0}")]
    Requirement(String),
}

/// Kinds of structural violations reported by [`Mdp::validate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Violation {
    InitialOutOfRange { initial: usize, states: usize },
    DistributionSum { state: String, action: String, sum: f64 },
    BadProbability { state: String, action: String, successor: String, probability: f64 },
    DuplicateTransition { state: String, action: String, successor: String },
    DuplicateAction { state: String, action: String },
    SuccessorOutOfRange { state: String, action: String, successor: usize },
    ActionOutOfRange { state: String, action: usize },
    LabelOutOfRange { state: String, prop: usize },
    Deadlock { state: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InitialOutOfRange { initial, states } => {
                write!(f, "initial out of range: {initial} (model has {states} states)")
            }
            Violation::DistributionSum { state, action, sum } => {
                write!(f, "distribution sum of ({state}, {action}) is {sum}, expected 1")
            }
            Violation::BadProbability { state, action, successor, probability } => write!(
                f,
                "probability {probability} of ({state}, {action}, {successor}) is outside (0, 1]"
            ),
            Violation::DuplicateTransition { state, action, successor } => {
                write!(f, "duplicate transition ({state}, {action}, {successor})")
            }
            Violation::DuplicateAction { state, action } => {
                write!(f, "action {action} listed twice for state {state}")
            }
            Violation::SuccessorOutOfRange { state, action, successor } => {
                write!(f, "successor id {successor} of ({state}, {action}) is out of range")
            }
            Violation::ActionOutOfRange { state, action } => {
                write!(f, "action id {action} of state {state} is out of range")
            }
            Violation::LabelOutOfRange { state, prop } => {
                write!(f, "proposition id {prop} labelling state {state} is out of range")
            }
            Violation::Deadlock { state } => {
                write!(f, "non-target state {state} is reachable but has no enabled action")
            }
        }
    }
}

/// List of violations; empty means the model is well formed.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl Mdp {
    /// Assembles a model without checking any invariant.
    pub fn from_parts_unchecked(
        state_names: Vec<String>,
        action_names: Vec<String>,
        prop_names: Vec<String>,
        initial: StateId,
        mut choices: Vec<Vec<Choice>>,
        mut labels: Vec<Vec<PropId>>,
    ) -> Self {
        let n = state_names.len();
        choices.resize(n, Vec::new());
        labels.resize(n, Vec::new());
        for cs in &mut choices {
            cs.sort_by_key(|c| c.action);
            for c in cs.iter_mut() {
                c.successors.sort_by_key(|&(s, _)| s);
            }
        }
        for l in &mut labels {
            l.sort();
            l.dedup();
        }
        Mdp { state_names, action_names, prop_names, initial, choices, labels }
    }

    pub fn num_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn num_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn num_props(&self) -> usize {
        self.prop_names.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.num_states()).map(StateId)
    }

    pub fn state_name(&self, s: StateId) -> &str {
        &self.state_names[s.0]
    }

    pub fn action_name(&self, a: ActionId) -> &str {
        &self.action_names[a.0]
    }

    pub fn prop_name(&self, p: PropId) -> &str {
        &self.prop_names[p.0]
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    pub fn prop_names(&self) -> &[String] {
        &self.prop_names
    }

    pub fn state_by_name(&self, name: &str) -> Option<StateId> {
        self.state_names.iter().position(|n| n == name).map(StateId)
    }

    pub fn action_by_name(&self, name: &str) -> Option<ActionId> {
        self.action_names.iter().position(|n| n == name).map(ActionId)
    }

    pub fn prop_by_name(&self, name: &str) -> Option<PropId> {
        self.prop_names.iter().position(|n| n == name).map(PropId)
    }

    /// Enabled choices of `s`, sorted by action id.
    pub fn choices(&self, s: StateId) -> &[Choice] {
        &self.choices[s.0]
    }

    pub fn choice(&self, s: StateId, a: ActionId) -> Option<&Choice> {
        self.choices[s.0].iter().find(|c| c.action == a)
    }

    pub fn enabled(&self, s: StateId) -> impl Iterator<Item = ActionId> + '_ {
        self.choices[s.0].iter().map(|c| c.action)
    }

    /// `L(s)`, sorted ascending.
    pub fn labels(&self, s: StateId) -> &[PropId] {
        &self.labels[s.0]
    }

    pub fn has_label(&self, s: StateId, p: PropId) -> bool {
        self.labels[s.0].binary_search(&p).is_ok()
    }

    /// Total number of `(s, α, s')` entries.
    pub fn num_transitions(&self) -> usize {
        self.choices.iter().flatten().map(|c| c.successors.len()).sum()
    }

    /// Total number of enabled `(s, α)` pairs.
    pub fn num_choices(&self) -> usize {
        self.choices.iter().map(Vec::len).sum()
    }

    /// Structural validation: ranges, distributions, duplicates.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let n = self.num_states();
        if self.initial.0 >= n {
            violations.push(Violation::InitialOutOfRange { initial: self.initial.0, states: n });
        }
        for s in self.states() {
            let sname = self.state_names[s.0].clone();
            let mut seen_actions = BTreeSet::new();
            for c in &self.choices[s.0] {
                if c.action.0 >= self.num_actions() {
                    violations.push(Violation::ActionOutOfRange { state: sname.clone(), action: c.action.0 });
                    continue;
                }
                let aname = self.action_names[c.action.0].clone();
                if !seen_actions.insert(c.action) {
                    violations.push(Violation::DuplicateAction { state: sname.clone(), action: aname.clone() });
                }
                let mut seen_succ = BTreeSet::new();
                let mut sum = 0.0;
                for &(t, pr) in &c.successors {
                    if t.0 >= n {
                        violations.push(Violation::SuccessorOutOfRange {
                            state: sname.clone(),
                            action: aname.clone(),
                            successor: t.0,
                        });
                        continue;
                    }
                    let tname = self.state_names[t.0].clone();
                    if !(pr > 0.0 && pr <= 1.0) {
                        violations.push(Violation::BadProbability {
                            state: sname.clone(),
                            action: aname.clone(),
                            successor: tname.clone(),
                            probability: pr,
                        });
                    }
                    if !seen_succ.insert(t) {
                        violations.push(Violation::DuplicateTransition {
                            state: sname.clone(),
                            action: aname.clone(),
                            successor: tname,
                        });
                    }
                    sum += pr;
                }
                if (sum - 1.0).abs() > DISTRIBUTION_TOL {
                    violations.push(Violation::DistributionSum { state: sname.clone(), action: aname, sum });
                }
            }
            for &p in &self.labels[s.0] {
                if p.0 >= self.num_props() {
                    violations.push(Violation::LabelOutOfRange { state: sname.clone(), prop: p.0 });
                }
            }
        }
        ValidationReport { violations }
    }

    /// [`Mdp::validate`] plus the deadlock rule, which needs the target set:
    /// every non-target state reachable from the initial state must have an
    /// enabled action.
    pub fn validate_for(&self, targets: &TargetSet) -> ValidationReport {
        let mut report = self.validate();
        if !report.is_valid() {
            return report;
        }
        for s in self.reachable_from(self.initial, |s| !targets.contains(s)) {
            if !targets.contains(s) && self.choices[s.0].is_empty() {
                report.violations.push(Violation::Deadlock { state: self.state_names[s.0].clone() });
            }
        }
        report
    }

    /// States reachable from `from` (inclusive), expanding only states for
    /// which `expand` holds. Returned in ascending order.
    pub fn reachable_from(&self, from: StateId, expand: impl Fn(StateId) -> bool) -> Vec<StateId> {
        let mut seen = vec![false; self.num_states()];
        let mut queue = VecDeque::from([from]);
        seen[from.0] = true;
        while let Some(s) = queue.pop_front() {
            if !expand(s) {
                continue;
            }
            for c in &self.choices[s.0] {
                for &(t, _) in &c.successors {
                    if !seen[t.0] {
                        seen[t.0] = true;
                        queue.push_back(t);
                    }
                }
            }
        }
        (0..seen.len()).filter(|&i| seen[i]).map(StateId).collect()
    }
}

/// Incremental, name-based construction of an [`Mdp`].
#[derive(Clone, Debug, Default)]
pub struct MdpBuilder {
    states: Vec<String>,
    actions: Vec<String>,
    props: Vec<String>,
    initial: Option<usize>,
    transitions: Vec<(usize, usize, usize, f64)>,
    labels: Vec<(usize, usize)>,
}

impl MdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn intern(list: &mut Vec<String>, name: &str) -> usize {
        match list.iter().position(|n| n == name) {
            Some(i) => i,
            None => {
                list.push(name.to_string());
                list.len() - 1
            }
        }
    }

    pub fn state(&mut self, name: &str) -> StateId {
        StateId(Self::intern(&mut self.states, name))
    }

    pub fn action(&mut self, name: &str) -> ActionId {
        ActionId(Self::intern(&mut self.actions, name))
    }

    pub fn prop(&mut self, name: &str) -> PropId {
        PropId(Self::intern(&mut self.props, name))
    }

    pub fn initial(&mut self, name: &str) -> &mut Self {
        let s = self.state(name);
        self.initial = Some(s.0);
        self
    }

    pub fn transition(&mut self, from: &str, action: &str, to: &str, probability: f64) -> &mut Self {
        let f = self.state(from).0;
        let a = self.action(action).0;
        let t = self.state(to).0;
        self.transitions.push((f, a, t, probability));
        self
    }

    pub fn label(&mut self, state: &str, prop: &str) -> &mut Self {
        let s = self.state(state).0;
        let p = self.prop(prop).0;
        self.labels.push((s, p));
        self
    }

    /// Builds without validating.
    pub fn build_unchecked(&self) -> Mdp {
        let n = self.states.len();
        let mut choices: Vec<Vec<Choice>> = vec![Vec::new(); n];
        for &(f, a, t, pr) in &self.transitions {
            let cs = &mut choices[f];
            match cs.iter_mut().find(|c| c.action.0 == a) {
                Some(c) => c.successors.push((StateId(t), pr)),
                None => cs.push(Choice { action: ActionId(a), successors: vec![(StateId(t), pr)] }),
            }
        }
        let mut labels = vec![Vec::new(); n];
        for &(s, p) in &self.labels {
            labels[s].push(PropId(p));
        }
        Mdp::from_parts_unchecked(
            self.states.clone(),
            self.actions.clone(),
            self.props.clone(),
            StateId(self.initial.unwrap_or(0)),
            choices,
            labels,
        )
    }

    pub fn build(&self) -> Result<Mdp, MdpError> {
        let m = self.build_unchecked();
        let report = m.validate();
        if report.is_valid() {
            Ok(m)
        } else {
            Err(MdpError::Invalid(report))
        }
    }
}

/// How the target set `T` is specified.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum TargetSpec {
    /// All states labelled with the proposition.
    Proposition(PropId),
    /// An explicit list of states.
    States(Vec<StateId>),
}

/// Dense membership vector for `T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetSet(Vec<bool>);

impl TargetSet {
    pub fn contains(&self, s: StateId) -> bool {
        self.0[s.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = StateId> + '_ {
        self.0.iter().enumerate().filter(|(_, &t)| t).map(|(i, _)| StateId(i))
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&t| t).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// "The probability of reaching `T` is at most λ".
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReachabilityRequirement {
    pub targets: TargetSpec,
    pub lambda: f64,
}

impl ReachabilityRequirement {
    pub fn new(targets: TargetSpec, lambda: f64) -> Result<Self, MdpError> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(MdpError::Requirement(format!("threshold {lambda} is outside [0, 1)")));
        }
        if let TargetSpec::States(v) = &targets {
            if v.is_empty() {
                return Err(MdpError::Requirement("empty target set".into()));
            }
        }
        Ok(ReachabilityRequirement { targets, lambda })
    }

    /// Resolves the target set against `m`; errors when it is empty or refers
    /// to unknown ids.
    pub fn target_set(&self, m: &Mdp) -> Result<TargetSet, MdpError> {
        let mut v = vec![false; m.num_states()];
        match &self.targets {
            TargetSpec::Proposition(p) => {
                if p.0 >= m.num_props() {
                    return Err(MdpError::Requirement(format!("proposition id {} out of range", p.0)));
                }
                for s in m.states() {
                    v[s.0] = m.has_label(s, *p);
                }
            }
            TargetSpec::States(ss) => {
                for s in ss {
                    if s.0 >= m.num_states() {
                        return Err(MdpError::Requirement(format!("state id {} out of range", s.0)));
                    }
                    v[s.0] = true;
                }
            }
        }
        if !v.iter().any(|&t| t) {
            return Err(MdpError::Requirement("target set is empty".into()));
        }
        Ok(TargetSet(v))
    }

    /// Human-readable form, e.g. `P(◇ in_human_zone) <= 0.3`.
    pub fn describe(&self, m: &Mdp) -> String {
        let t = match &self.targets {
            TargetSpec::Proposition(p) => m.prop_name(*p).to_string(),
            TargetSpec::States(ss) => {
                let names: Vec<&str> = ss.iter().map(|s| m.state_name(*s)).collect();
                format!("{{{}}}", names.join(","))
            }
        };
        format!("P(reach {t}) <= {}", self.lambda)
    }
}

/// A positional strategy, defined on a subset of the states.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Strategy {
    choice: BTreeMap<StateId, ActionId>,
}

impl Strategy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, s: StateId, a: ActionId) {
        self.choice.insert(s, a);
    }

    pub fn get(&self, s: StateId) -> Option<ActionId> {
        self.choice.get(&s).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateId, ActionId)> + '_ {
        self.choice.iter().map(|(&s, &a)| (s, a))
    }

    pub fn len(&self) -> usize {
        self.choice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choice.is_empty()
    }
}

impl FromIterator<(StateId, ActionId)> for Strategy {
    fn from_iter<I: IntoIterator<Item = (StateId, ActionId)>>(iter: I) -> Self {
        Strategy { choice: iter.into_iter().collect() }
    }
}

/// Stopping rule for value iteration.
#[derive(Clone, Copy, Debug)]
pub struct IterationOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions { tolerance: 1e-10, max_iterations: 1_000_000 }
    }
}

/// States from which `T` is reachable with positive probability using only
/// choices accepted by `allowed`.
pub(crate) fn can_reach(m: &Mdp, targets: &TargetSet, allowed: impl Fn(StateId, &Choice) -> bool) -> Vec<bool> {
    let n = m.num_states();
    let mut preds: Vec<Vec<StateId>> = vec![Vec::new(); n];
    for s in m.states() {
        if targets.contains(s) {
            continue;
        }
        for c in m.choices(s) {
            if !allowed(s, c) {
                continue;
            }
            for &(t, _) in &c.successors {
                preds[t.0].push(s);
            }
        }
    }
    let mut reach = vec![false; n];
    let mut queue: VecDeque<StateId> = targets.iter().collect();
    for t in targets.iter() {
        reach[t.0] = true;
    }
    while let Some(s) = queue.pop_front() {
        for &p in &preds[s.0] {
            if !reach[p.0] {
                reach[p.0] = true;
                queue.push_back(p);
            }
        }
    }
    reach
}

/// `Pr^max(s ⊨ ◇T)` for every state, by value iteration from the zero vector.
///
/// States that cannot reach `T` at all are fixed to zero up front; the
/// remaining values are iterated until the largest update falls below
/// `opts.tolerance`.
pub fn max_reach_probability(
    m: &Mdp,
    req: &ReachabilityRequirement,
    opts: &IterationOptions,
) -> Result<Vec<f64>, MdpError> {
    let targets = req.target_set(m)?;
    max_reach_with_trace(m, &targets, opts, |_| {})
}

pub(crate) fn max_reach_with_trace(
    m: &Mdp,
    targets: &TargetSet,
    opts: &IterationOptions,
    mut trace: impl FnMut(&[f64]),
) -> Result<Vec<f64>, MdpError> {
    let n = m.num_states();
    let reach = can_reach(m, targets, |_, _| true);
    let mut v: Vec<f64> = (0..n).map(|i| if targets.0[i] { 1.0 } else { 0.0 }).collect();
    let active: Vec<StateId> = m.states().filter(|&s| reach[s.0] && !targets.contains(s)).collect();
    trace(&v);
    let mut next = v.clone();
    for iteration in 0..opts.max_iterations {
        let mut residual: f64 = 0.0;
        for &s in &active {
            let best = m
                .choices(s)
                .iter()
                .map(|c| c.successors.iter().map(|&(t, p)| p * v[t.0]).sum::<f64>())
                .fold(0.0, f64::max);
            residual = residual.max((best - v[s.0]).abs());
            next[s.0] = best;
        }
        std::mem::swap(&mut v, &mut next);
        next.copy_from_slice(&v);
        trace(&v);
        if residual < opts.tolerance {
            return Ok(v);
        }
        if iteration + 1 == opts.max_iterations {
            return Err(MdpError::NotConverged { iterations: opts.max_iterations, residual });
        }
    }
    Err(MdpError::NotConverged { iterations: 0, residual: f64::INFINITY })
}

/// A maximising strategy for the given value vector.
///
/// Among value-attaining actions, each state picks one that makes progress
/// towards `T`; plain argmax would happily choose a self-loop, whose value
/// ties with the optimum.
pub fn extract_max_strategy(m: &Mdp, req: &ReachabilityRequirement, values: &[f64]) -> Result<Strategy, MdpError> {
    let targets = req.target_set(m)?;
    let n = m.num_states();
    let optimal: Vec<Vec<&Choice>> = m
        .states()
        .map(|s| {
            let val = |c: &Choice| c.successors.iter().map(|&(t, p)| p * values[t.0]).sum::<f64>();
            let best = m.choices(s).iter().map(val).fold(0.0, f64::max);
            m.choices(s).iter().filter(|c| val(c) >= best - 1e-9 * best.max(1e-3)).collect()
        })
        .collect();
    let mut done: Vec<bool> = (0..n).map(|i| targets.0[i]).collect();
    let mut sigma = Strategy::new();
    loop {
        let mut progressed = false;
        for s in m.states() {
            if done[s.0] || values[s.0] <= 0.0 {
                continue;
            }
            if let Some(c) = optimal[s.0].iter().find(|c| c.successors.iter().any(|&(t, _)| done[t.0])) {
                sigma.set(s, c.action);
                done[s.0] = true;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    for s in m.states() {
        if !targets.contains(s) && sigma.get(s).is_none() {
            if let Some(c) = m.choices(s).first() {
                sigma.set(s, c.action);
            }
        }
    }
    Ok(sigma)
}

/// Exact probability of `◇T` in the Markov chain induced by `sigma` on
/// `restrict`; mass leaving `restrict` is lost. Values outside `restrict`
/// are reported as zero.
pub fn reach_probability_under_strategy(
    m: &Mdp,
    sigma: &Strategy,
    req: &ReachabilityRequirement,
    restrict: &BTreeSet<StateId>,
) -> Result<Vec<f64>, MdpError> {
    let targets = req.target_set(m)?;
    let n = m.num_states();
    let inside = |s: StateId| restrict.contains(&s);
    let mut step: Vec<Vec<(StateId, f64)>> = vec![Vec::new(); n];
    for &s in restrict {
        if targets.contains(s) {
            continue;
        }
        let a = sigma.get(s).ok_or_else(|| MdpError::StrategyUndefined(m.state_name(s).to_string()))?;
        let c = m.choice(s, a).ok_or_else(|| MdpError::StrategyNotEnabled {
            state: m.state_name(s).to_string(),
            action: m.action_name(a).to_string(),
        })?;
        step[s.0] = c.successors.iter().copied().filter(|&(t, _)| inside(t)).collect();
    }

    // Graph pre-pass: only states that can reach T inside the chain are unknowns.
    let mut preds: Vec<Vec<StateId>> = vec![Vec::new(); n];
    for &s in restrict {
        for &(t, _) in &step[s.0] {
            preds[t.0].push(s);
        }
    }
    let mut live = vec![false; n];
    let mut queue: VecDeque<StateId> = restrict.iter().copied().filter(|&s| targets.contains(s)).collect();
    for &t in &queue {
        live[t.0] = true;
    }
    while let Some(s) = queue.pop_front() {
        for &p in &preds[s.0] {
            if !live[p.0] {
                live[p.0] = true;
                queue.push_back(p);
            }
        }
    }

    let mut v = vec![0.0; n];
    for &s in restrict {
        if targets.contains(s) {
            v[s.0] = 1.0;
        }
    }
    let unknowns: Vec<StateId> = restrict.iter().copied().filter(|&s| live[s.0] && !targets.contains(s)).collect();
    if unknowns.is_empty() {
        return Ok(v);
    }
    let mut pos = vec![usize::MAX; n];
    for (i, s) in unknowns.iter().enumerate() {
        pos[s.0] = i;
    }
    let k = unknowns.len();
    if k <= 2000 {
        let mut a = DMatrix::<f64>::identity(k, k);
        let mut b = DVector::<f64>::zeros(k);
        for (i, &s) in unknowns.iter().enumerate() {
            for &(t, p) in &step[s.0] {
                if targets.contains(t) {
                    b[i] += p;
                } else if live[t.0] {
                    a[(i, pos[t.0])] -= p;
                }
            }
        }
        let x = a.lu().solve(&b).ok_or(MdpError::NotConverged { iterations: 0, residual: f64::NAN })?;
        for (i, s) in unknowns.iter().enumerate() {
            v[s.0] = x[i].clamp(0.0, 1.0);
        }
    } else {
        // Gauss-Seidel on the transient part.
        for _ in 0..1_000_000 {
            let mut residual: f64 = 0.0;
            for &s in &unknowns {
                let nv: f64 = step[s.0].iter().map(|&(t, p)| p * v[t.0]).sum();
                residual = residual.max((nv - v[s.0]).abs());
                v[s.0] = nv;
            }
            if residual < 1e-12 {
                return Ok(v);
            }
        }
        return Err(MdpError::NotConverged { iterations: 1_000_000, residual: f64::NAN });
    }
    Ok(v)
}

/// The sub-model of `m` on `members` under `sigma`, with an explicit sink.
#[derive(Clone, Debug)]
pub struct Subsystem {
    pub mdp: Mdp,
    /// Sub-model state index → original state (the sink maps to `None`).
    pub origin: Vec<Option<StateId>>,
    pub sink: StateId,
}

/// Restricts `m` to `members`: every non-target member keeps only `σ(s)`,
/// targets keep their choices, and probability mass leaving `members` is sent
/// to a fresh absorbing sink.
pub fn induced_subsystem(
    m: &Mdp,
    sigma: &Strategy,
    members: &BTreeSet<StateId>,
    req: &ReachabilityRequirement,
) -> Result<Subsystem, MdpError> {
    if !members.contains(&m.initial()) {
        return Err(MdpError::InitialNotMember(m.state_name(m.initial()).to_string()));
    }
    let targets = req.target_set(m)?;
    let order: Vec<StateId> = members.iter().copied().collect();
    let sink = StateId(order.len());
    let mut index = vec![None; m.num_states()];
    for (i, s) in order.iter().enumerate() {
        index[s.0] = Some(StateId(i));
    }
    let redirect = |c: &Choice| -> Choice {
        let mut succ: Vec<(StateId, f64)> = Vec::new();
        let mut lost = 0.0;
        for &(t, p) in &c.successors {
            match index[t.0] {
                Some(i) => succ.push((i, p)),
                None => lost += p,
            }
        }
        if lost > 0.0 {
            succ.push((sink, lost));
        }
        Choice { action: c.action, successors: succ }
    };
    let mut choices = Vec::with_capacity(order.len() + 1);
    let mut labels = Vec::with_capacity(order.len() + 1);
    for &s in &order {
        let cs = if targets.contains(s) {
            m.choices(s).iter().map(redirect).collect()
        } else {
            let a = sigma.get(s).ok_or_else(|| MdpError::StrategyUndefined(m.state_name(s).to_string()))?;
            let c = m.choice(s, a).ok_or_else(|| MdpError::StrategyNotEnabled {
                state: m.state_name(s).to_string(),
                action: m.action_name(a).to_string(),
            })?;
            vec![redirect(c)]
        };
        choices.push(cs);
        labels.push(m.labels(s).to_vec());
    }
    choices.push(vec![Choice { action: ActionId(0), successors: vec![(sink, 1.0)] }]);
    labels.push(Vec::new());
    let mut names: Vec<String> = order.iter().map(|&s| m.state_name(s).to_string()).collect();
    let mut sink_name = "sink".to_string();
    while names.contains(&sink_name) {
        sink_name.push('_');
    }
    names.push(sink_name);
    let mdp = Mdp::from_parts_unchecked(
        names,
        m.action_names().to_vec(),
        m.prop_names().to_vec(),
        index[m.initial().0].expect("initial is a member"),
        choices,
        labels,
    );
    let mut origin: Vec<Option<StateId>> = order.into_iter().map(Some).collect();
    origin.push(None);
    Ok(Subsystem { mdp, origin, sink })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_state() -> Mdp {
        let mut b = MdpBuilder::new();
        b.initial("s0")
            .transition("s0", "a", "t", 0.5)
            .transition("s0", "a", "sink", 0.5)
            .transition("s0", "b", "t", 0.2)
            .transition("s0", "b", "sink", 0.8)
            .transition("t", "a", "t", 1.0)
            .transition("sink", "a", "sink", 1.0)
            .label("t", "goal");
        b.build().unwrap()
    }

    fn goal(m: &Mdp, lambda: f64) -> ReachabilityRequirement {
        ReachabilityRequirement::new(TargetSpec::Proposition(m.prop_by_name("goal").unwrap()), lambda).unwrap()
    }

    #[test]
    fn valid_chain_has_empty_report() {
        let mut b = MdpBuilder::new();
        b.initial("s0").transition("s0", "go", "s1", 1.0).transition("s1", "go", "s1", 1.0);
        assert!(b.build_unchecked().validate().is_valid());
    }

    #[test]
    fn distribution_sum_violation_names_pair() {
        let mut b = MdpBuilder::new();
        b.initial("s0").transition("s0", "go", "s1", 0.95).transition("s1", "go", "s1", 1.0);
        let r = b.build_unchecked().validate();
        assert_eq!(r.violations.len(), 1);
        match &r.violations[0] {
            Violation::DistributionSum { state, action, sum } => {
                assert_eq!(state, "s0");
                assert_eq!(action, "go");
                assert!((sum - 0.95).abs() < 1e-12);
            }
            v => panic!("unexpected {v:?}"),
        }
    }

    #[test]
    fn initial_out_of_range() {
        let m = Mdp::from_parts_unchecked(
            vec!["s0".into(), "s1".into()],
            vec!["go".into()],
            vec![],
            StateId(2),
            vec![
                vec![Choice { action: ActionId(0), successors: vec![(StateId(1), 1.0)] }],
                vec![Choice { action: ActionId(0), successors: vec![(StateId(1), 1.0)] }],
            ],
            vec![],
        );
        let r = m.validate();
        assert_eq!(r.violations, vec![Violation::InitialOutOfRange { initial: 2, states: 2 }]);
    }

    #[test]
    fn duplicates_and_bad_probabilities() {
        let mut b = MdpBuilder::new();
        b.initial("s0")
            .transition("s0", "go", "s1", 0.5)
            .transition("s0", "go", "s1", 0.5)
            .transition("s1", "go", "s1", 1.5);
        let r = b.build_unchecked().validate();
        assert!(r.violations.iter().any(|v| matches!(v, Violation::DuplicateTransition { .. })));
        assert!(r.violations.iter().any(|v| matches!(v, Violation::BadProbability { .. })));
    }

    #[test]
    fn deadlock_needs_targets() {
        let mut b = MdpBuilder::new();
        b.initial("s0").transition("s0", "go", "s1", 1.0).state("s2");
        let m = b.build().unwrap();
        let req = ReachabilityRequirement::new(TargetSpec::States(vec![StateId(2)]), 0.1).unwrap();
        let r = m.validate_for(&req.target_set(&m).unwrap());
        assert_eq!(r.violations, vec![Violation::Deadlock { state: "s1".into() }]);
    }

    #[test]
    fn target_initial_is_certain() {
        let mut b = MdpBuilder::new();
        b.initial("t").transition("t", "stop", "t", 1.0).label("t", "goal");
        let m = b.build().unwrap();
        let v = max_reach_probability(&m, &goal(&m, 0.5), &IterationOptions::default()).unwrap();
        assert_eq!(v, vec![1.0]);
    }

    #[test]
    fn certain_two_state_reach() {
        let mut b = MdpBuilder::new();
        b.initial("s0").transition("s0", "go", "t", 1.0).transition("t", "go", "t", 1.0).label("t", "goal");
        let m = b.build().unwrap();
        let v = max_reach_probability(&m, &goal(&m, 0.5), &IterationOptions::default()).unwrap();
        assert_eq!(v[0], 1.0);
    }

    #[test]
    fn max_over_two_actions() {
        let m = three_state();
        let req = goal(&m, 0.1);
        let v = max_reach_probability(&m, &req, &IterationOptions::default()).unwrap();
        // Oracle: enumerate both positional choices at s0.
        let by_strategy: Vec<f64> = ["a", "b"]
            .iter()
            .map(|a| {
                let sigma: Strategy = [(StateId(0), m.action_by_name(a).unwrap())].into_iter().collect();
                let all: BTreeSet<StateId> = m.states().collect();
                let sigma = {
                    let mut s = sigma;
                    s.set(m.state_by_name("sink").unwrap(), ActionId(0));
                    s
                };
                reach_probability_under_strategy(&m, &sigma, &req, &all).unwrap()[0]
            })
            .collect();
        assert_eq!(by_strategy, vec![0.5, 0.2]);
        assert!((v[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mut b = MdpBuilder::new();
        b.initial("s0")
            .transition("s0", "go", "s0", 0.99)
            .transition("s0", "go", "t", 0.01)
            .transition("t", "go", "t", 1.0)
            .label("t", "goal");
        let m = b.build().unwrap();
        let err = max_reach_probability(&m, &goal(&m, 0.5), &IterationOptions { tolerance: 1e-12, max_iterations: 5 })
            .unwrap_err();
        match err {
            MdpError::NotConverged { iterations, residual } => {
                assert_eq!(iterations, 5);
                assert!(residual > 0.0);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn strategy_evaluation_cases() {
        let mut b = MdpBuilder::new();
        b.initial("s0")
            .transition("s0", "go", "s1", 0.9)
            .transition("s0", "go", "out", 0.1)
            .transition("s1", "go", "t", 1.0)
            .transition("t", "go", "t", 1.0)
            .transition("out", "go", "out", 1.0)
            .label("t", "goal");
        let m = b.build().unwrap();
        let req = goal(&m, 0.5);
        let go = m.action_by_name("go").unwrap();
        let sigma: Strategy = m.states().map(|s| (s, go)).collect();
        let s = |n: &str| m.state_by_name(n).unwrap();
        let restrict: BTreeSet<_> = [s("s0"), s("s1"), s("t")].into_iter().collect();
        let v = reach_probability_under_strategy(&m, &sigma, &req, &restrict).unwrap();
        assert!((v[0] - 0.9).abs() < 1e-12);
        assert_eq!(v[s("s1").0], 1.0);

        let only_t: BTreeSet<_> = [s("t")].into_iter().collect();
        let v = reach_probability_under_strategy(&m, &Strategy::new(), &req, &only_t).unwrap();
        assert_eq!(v[s("t").0], 1.0);

        let err = reach_probability_under_strategy(&m, &Strategy::new(), &req, &restrict).unwrap_err();
        assert!(matches!(err, MdpError::StrategyUndefined(name) if name == "s0"));
    }

    #[test]
    fn induced_subsystem_sends_lost_mass_to_sink() {
        let mut b = MdpBuilder::new();
        b.initial("s0")
            .transition("s0", "go", "t", 0.4)
            .transition("s0", "go", "d", 0.6)
            .transition("t", "go", "t", 1.0)
            .transition("d", "go", "d", 1.0)
            .label("t", "goal");
        let m = b.build().unwrap();
        let req = goal(&m, 0.1);
        let go = m.action_by_name("go").unwrap();
        let sigma: Strategy = [(StateId(0), go)].into_iter().collect();
        let members: BTreeSet<_> = [m.state_by_name("s0").unwrap(), m.state_by_name("t").unwrap()].into_iter().collect();
        let sub = induced_subsystem(&m, &sigma, &members, &req).unwrap();
        assert!(sub.mdp.validate().is_valid());
        let c = &sub.mdp.choices(sub.mdp.initial())[0];
        let to_sink: f64 = c.successors.iter().filter(|(t, _)| *t == sub.sink).map(|(_, p)| p).sum();
        assert!((to_sink - 0.6).abs() < 1e-12);
        let sum: f64 = c.successors.iter().map(|(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-12);

        let missing: BTreeSet<_> = [m.state_by_name("t").unwrap()].into_iter().collect();
        assert!(matches!(induced_subsystem(&m, &sigma, &missing, &req), Err(MdpError::InitialNotMember(_))));
    }

    #[test]
    fn self_loop_tie_does_not_stall_strategy() {
        let mut b = MdpBuilder::new();
        b.initial("s0")
            .transition("s0", "stop", "s0", 1.0)
            .transition("s0", "go", "t", 1.0)
            .transition("t", "stop", "t", 1.0)
            .label("t", "goal");
        let m = b.build().unwrap();
        let req = goal(&m, 0.5);
        let v = max_reach_probability(&m, &req, &IterationOptions::default()).unwrap();
        let sigma = extract_max_strategy(&m, &req, &v).unwrap();
        assert_eq!(sigma.get(StateId(0)), m.action_by_name("go"));
    }
}
