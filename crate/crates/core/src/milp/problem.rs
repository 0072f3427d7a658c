use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::mdp::{ActionId, StateId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        })
    }
}

/// Semantic role of a column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum VarTag {
    /// `p_s`: probability of reaching the targets from `s` inside the subsystem.
    Reach(StateId),
    /// `θ_{s,α}`: the strategy picks `α` in `s`.
    Choice(StateId, ActionId),
    /// `μ_i`: candidate sentence `i` is part of the explanation.
    Sentence(usize),
    /// `x_s`: state `s` belongs to the subsystem (state-minimal encoding).
    Include(StateId),
    /// `r_s`: rank used to rule out end components that never reach a target.
    Rank(StateId),
    /// `w_{s,α,s'}`: the rank of `s` increases along the step to `s'`.
    Step(StateId, ActionId, StateId),
    Other,
}

impl VarTag {
    /// Recovers the tag from the deterministic column naming scheme.
    pub fn from_name(name: &str) -> VarTag {
        let mut parts = name.split('_');
        let head = parts.next().unwrap_or("");
        let nums: Option<Vec<usize>> = parts.map(|p| p.parse().ok()).collect();
        match (head, nums.as_deref()) {
            ("p", Some(&[s])) => VarTag::Reach(StateId(s)),
            ("t", Some(&[s, a])) => VarTag::Choice(StateId(s), ActionId(a)),
            ("mu", Some(&[i])) => VarTag::Sentence(i),
            ("x", Some(&[s])) => VarTag::Include(StateId(s)),
            ("r", Some(&[s])) => VarTag::Rank(StateId(s)),
            ("w", Some(&[s, a, t])) => VarTag::Step(StateId(s), ActionId(a), StateId(t)),
            _ => VarTag::Other,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            VarTag::Reach(s) => format!("p_{}", s.0),
            VarTag::Choice(s, a) => format!("t_{}_{}", s.0, a.0),
            VarTag::Sentence(i) => format!("mu_{i}"),
            VarTag::Include(s) => format!("x_{}", s.0),
            VarTag::Rank(s) => format!("r_{}", s.0),
            VarTag::Step(s, a, t) => format!("w_{}_{}_{}", s.0, a.0, t.0),
            VarTag::Other => "v".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub tag: VarTag,
}

/// `Σ terms (rel) rhs`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Constraint {
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// A minimisation MILP over bounded continuous and binary columns.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MilpProblem {
    columns: Vec<Column>,
    objective: Vec<(usize, f64)>,
    constraints: Vec<Constraint>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl MilpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a column; panics on a duplicate name.
    pub fn add_column(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64, tag: VarTag) -> usize {
        let name = name.into();
        let id = self.columns.len();
        let prev = self.index.insert(name.clone(), id);
        assert!(prev.is_none(), "duplicate column name {name}");
        self.columns.push(Column { name, kind, lower, upper, tag });
        id
    }

    pub fn add_tagged(&mut self, tag: VarTag, kind: VarKind, lower: f64, upper: f64) -> usize {
        self.add_column(tag.name(), kind, lower, upper, tag)
    }

    pub fn add_constraint(&mut self, terms: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        debug_assert!(terms.iter().all(|&(j, _)| j < self.columns.len()));
        self.constraints.push(Constraint { terms, relation, rhs });
    }

    pub fn set_objective(&mut self, terms: Vec<(usize, f64)>) {
        self.objective = terms;
    }

    pub fn set_lower(&mut self, col: usize, lower: f64) {
        self.columns[col].lower = lower;
    }

    pub fn set_upper(&mut self, col: usize, upper: f64) {
        self.columns[col].upper = upper;
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &[(usize, f64)] {
        &self.objective
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn tagged(&self, tag: VarTag) -> Option<usize> {
        self.column(&tag.name())
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn num_continuous(&self) -> usize {
        self.columns.iter().filter(|c| c.kind == VarKind::Continuous).count()
    }

    pub fn num_binary(&self) -> usize {
        self.columns.iter().filter(|c| c.kind == VarKind::Binary).count()
    }

    pub fn count_tagged(&self, pred: impl Fn(&VarTag) -> bool) -> usize {
        self.columns.iter().filter(|c| pred(&c.tag)).count()
    }

    /// Objective value of an assignment.
    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * values[j]).sum()
    }

    /// Largest violation of any bound, constraint or integrality requirement.
    pub fn max_violation(&self, values: &[f64]) -> (f64, f64) {
        let mut feas: f64 = 0.0;
        let mut integ: f64 = 0.0;
        for (c, &v) in self.columns.iter().zip(values) {
            feas = feas.max(c.lower - v).max(v - c.upper);
            if c.kind == VarKind::Binary {
                integ = integ.max((v - v.round()).abs());
            }
        }
        for row in &self.constraints {
            let lhs: f64 = row.terms.iter().map(|&(j, a)| a * values[j]).sum();
            let viol = match row.relation {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            feas = feas.max(viol);
        }
        (feas, integ)
    }

    /// Rebuilds the name index (used after deserialisation-style construction).
    pub(crate) fn from_parts(columns: Vec<Column>, objective: Vec<(usize, f64)>, constraints: Vec<Constraint>) -> Self {
        let index = columns.iter().enumerate().map(|(i, c)| (c.name.clone(), i)).collect();
        MilpProblem { columns, objective, constraints, index }
    }
}
