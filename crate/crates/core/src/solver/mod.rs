//! A self-contained MILP solver: presolve, a bounded dual simplex for the LP
//! relaxations and best-first branch and bound over binary columns.

mod bnb;
mod lp;
mod presolve;

use std::time::Duration;

use serde::Serialize;

use crate::milp::{MilpProblem, Relation, VarKind};

pub use bnb::NodeHook;

/// Environment variable overriding the default time limit (seconds).
pub const TIME_LIMIT_ENV: &str = "CEXPLAIN_TIME_LIMIT";

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub integrality_tol: f64,
    pub feasibility_tol: f64,
    pub node_limit: u64,
    pub time_limit: Duration,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            integrality_tol: 1e-6,
            feasibility_tol: 1e-7,
            node_limit: 1_000_000,
            time_limit: Duration::from_secs(3600),
        }
    }
}

impl SolverConfig {
    /// Default configuration with the time limit taken from
    /// [`TIME_LIMIT_ENV`] when set to a positive number of seconds.
    pub fn from_env() -> Self {
        let mut cfg = SolverConfig::default();
        if let Some(secs) = std::env::var(TIME_LIMIT_ENV).ok().and_then(|v| v.trim().parse::<f64>().ok()) {
            if secs > 0.0 && secs.is_finite() {
                cfg.time_limit = Duration::from_secs_f64(secs);
            }
        }
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NodeLimit,
    TimeLimit,
    /// Numerical trouble or an unbounded relaxation.
    Failure,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SolveStats {
    pub nodes: u64,
    pub lp_iterations: u64,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Clone, Debug)]
pub struct MilpSolution {
    pub status: SolveStatus,
    /// Best objective found (present with an incumbent).
    pub objective: Option<f64>,
    /// Best assignment found, indexed like the problem's columns.
    pub values: Option<Vec<f64>>,
    /// Lower bound proven on the optimum.
    pub bound: f64,
    pub stats: SolveStats,
}

impl MilpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Solves `p` to optimality (or until a limit is hit).
pub fn solve(p: &MilpProblem, cfg: &SolverConfig) -> MilpSolution {
    bnb::solve(p, cfg, None)
}

/// Like [`solve`], with an optional hook bounding nodes by problem-specific
/// reasoning.
pub fn solve_with(p: &MilpProblem, cfg: &SolverConfig, hook: Option<&dyn NodeHook>) -> MilpSolution {
    bnb::solve(p, cfg, hook)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LpOutcome {
    Optimal,
    Infeasible,
    Unbounded,
    Failure,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpOutcome,
    pub objective: f64,
    pub values: Vec<f64>,
}

pub(crate) fn lp_rows(p: &MilpProblem) -> Vec<lp::LpRow> {
    p.constraints()
        .iter()
        .map(|c| {
            let (slack_lower, slack_upper) = match c.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lp::LpRow { terms: c.terms.clone(), slack_lower, slack_upper, rhs: c.rhs }
        })
        .collect()
}

pub(crate) fn lp_columns(p: &MilpProblem) -> Vec<(f64, f64, f64)> {
    let mut cost = vec![0.0; p.num_columns()];
    for &(j, c) in p.objective() {
        cost[j] += c;
    }
    p.columns()
        .iter()
        .zip(cost)
        .map(|(col, c)| match col.kind {
            VarKind::Binary => (col.lower.max(0.0), col.upper.min(1.0), c),
            VarKind::Continuous => (col.lower, col.upper, c),
        })
        .collect()
}

/// Solves the LP relaxation of `p` with the listed columns fixed.
pub fn solve_lp_relaxation(p: &MilpProblem, fixed: &[(usize, f64)]) -> LpSolution {
    let mut cols = lp_columns(p);
    for &(j, v) in fixed {
        cols[j].0 = v;
        cols[j].1 = v;
    }
    if cols.iter().any(|c| c.0 > c.1) {
        return LpSolution { status: LpOutcome::Infeasible, objective: f64::INFINITY, values: Vec::new() };
    }
    let mut lp = lp::DualSimplex::new(&cols, lp_rows(p));
    let limit = 50 * (p.num_columns() + p.constraints().len()) as u64 + 1000;
    let status = match lp.solve(f64::INFINITY, limit) {
        lp::LpStatus::Optimal => LpOutcome::Optimal,
        lp::LpStatus::Infeasible => LpOutcome::Infeasible,
        lp::LpStatus::Unbounded => LpOutcome::Unbounded,
        lp::LpStatus::Cutoff | lp::LpStatus::IterationLimit => LpOutcome::Failure,
    };
    LpSolution { status, objective: lp.objective(), values: lp.values().to_vec() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::VarTag;

    /// The single-choice relaxation: p <= θ, p >= 0.3 gives bound 0.3.
    #[test]
    fn relaxation_of_single_choice() {
        let mut p = MilpProblem::new();
        let reach = p.add_column("p", VarKind::Continuous, 0.0, 1.0, VarTag::Other);
        let theta = p.add_column("theta", VarKind::Binary, 0.0, 1.0, VarTag::Other);
        p.add_constraint(vec![(reach, 1.0), (theta, -1.0)], Relation::Le, 0.0);
        p.add_constraint(vec![(reach, 1.0)], Relation::Ge, 0.3);
        p.set_objective(vec![(theta, 1.0)]);
        let lp = solve_lp_relaxation(&p, &[]);
        assert_eq!(lp.status, LpOutcome::Optimal);
        assert!((lp.objective - 0.3).abs() < 1e-9);
        let sol = solve(&p, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = MilpProblem::new();
        let x = p.add_column("x", VarKind::Binary, 0.0, 1.0, VarTag::Other);
        p.add_constraint(vec![(x, 1.0)], Relation::Ge, 1.0);
        p.add_constraint(vec![(x, 1.0)], Relation::Le, 0.0);
        p.set_objective(vec![(x, 1.0)]);
        let sol = solve(&p, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.values.is_none());
    }
}
