//! Best-first branch and bound over the binary columns.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::lp::{DualSimplex, LpRow, LpStatus};
use super::presolve::{presolve, Reduced, RowSystem};
use super::{lp_columns, lp_rows, MilpSolution, SolveStats, SolveStatus, SolverConfig};
use crate::milp::{MilpProblem, VarKind};

/// Problem-specific bounding. Receives the column bounds of a node in the
/// numbering of the original problem and returns a lower bound on the
/// objective of every feasible completion (`f64::INFINITY` when none exists).
/// Nodes whose bound exceeds `cutoff` are discarded, so a hook may stop
/// refining its bound once it passes `cutoff`.
pub trait NodeHook {
    fn lower_bound(&self, lower: &[f64], upper: &[f64], cutoff: f64) -> f64;
}

struct Node {
    bound: f64,
    seq: u64,
    fixes: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Max-heap: the smallest bound, then the newest node, comes first, so
    // ties are explored depth first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(self.seq.cmp(&other.seq))
    }
}

struct Search<'a> {
    cfg: &'a SolverConfig,
    red: &'a Reduced,
    sys: RowSystem,
    lp: DualSimplex,
    root_lower: Vec<f64>,
    root_upper: Vec<f64>,
    binaries: Vec<usize>,
    integral_objective: bool,
    incumbent: Option<(f64, Vec<f64>)>,
    hook: Option<&'a dyn NodeHook>,
    lp_limit: u64,
    columns: Vec<(f64, f64, f64)>,
    rows: Vec<LpRow>,
}

impl Search<'_> {
    /// LP objective (without the presolve offset) above which a node is useless.
    fn cutoff(&self) -> f64 {
        match &self.incumbent {
            None => f64::INFINITY,
            Some((best, _)) => {
                let best = best - self.red.objective_offset;
                if self.integral_objective {
                    best - 1.0 + 1e-6
                } else {
                    best - 1e-9 * (1.0 + best.abs())
                }
            }
        }
    }

    fn most_fractional(&self, values: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &j in &self.binaries {
            let v = values[j];
            let frac = v.min(1.0 - v);
            if frac > self.cfg.integrality_tol && best.map_or(true, |(_, f)| frac > f + 1e-12) {
                best = Some((j, frac));
            }
        }
        best.map(|(j, _)| j)
    }

    /// Column bounds for a node after propagation and the hook's bound on
    /// the objective, or `None` if the node can be discarded.
    fn node_bounds(&self, fixes: &[(usize, f64)]) -> Option<(Vec<f64>, Vec<f64>, f64)> {
        let mut lo = self.root_lower.clone();
        let mut hi = self.root_upper.clone();
        for &(j, v) in fixes {
            if v < lo[j] || v > hi[j] {
                return None;
            }
            lo[j] = v;
            hi[j] = v;
        }
        self.sys.propagate(&mut lo, &mut hi, 30).ok()?;
        let mut bound = f64::NEG_INFINITY;
        if let Some(hook) = self.hook {
            let mut olo: Vec<f64> = self.red.fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
            let mut ohi = olo.clone();
            for (k, &j) in self.red.kept.iter().enumerate() {
                olo[j] = lo[k];
                ohi[j] = hi[k];
            }
            let cutoff = self.cutoff() + self.red.objective_offset;
            bound = hook.lower_bound(&olo, &ohi, cutoff);
            if bound > cutoff {
                return None;
            }
        }
        Some((lo, hi, bound))
    }

    /// Solves the node LP warm, retrying once from a fresh slack basis when
    /// the warm basis runs into numerical trouble.
    fn solve_lp(&mut self, lo: &[f64], hi: &[f64]) -> LpStatus {
        for j in 0..lo.len() {
            self.lp.set_bounds(j, lo[j], hi[j]);
        }
        let cutoff = self.cutoff();
        let status = self.lp.solve(cutoff, self.lp_limit);
        if status != LpStatus::IterationLimit {
            return status;
        }
        let iterations = self.lp.iterations;
        let cols: Vec<(f64, f64, f64)> =
            self.columns.iter().enumerate().map(|(j, &(_, _, c))| (lo[j], hi[j], c)).collect();
        self.lp = DualSimplex::new(&cols, self.rows.clone());
        self.lp.iterations = iterations;
        self.lp.solve(cutoff, self.lp_limit)
    }

    fn offer(&mut self, values: &[f64]) {
        let mut v = values.to_vec();
        for &j in &self.binaries {
            v[j] = v[j].round();
        }
        let obj = self.lp.objective() + self.red.objective_offset;
        if self.incumbent.as_ref().map_or(true, |(best, _)| obj < *best - 1e-9) {
            self.incumbent = Some((obj, v));
        }
    }

    /// Fixes the largest fractional binary to one until the relaxation is
    /// integral or infeasible.
    fn dive(&mut self, fixes: &[(usize, f64)]) {
        let mut fixes = fixes.to_vec();
        for _ in 0..self.binaries.len() {
            let values = self.lp.values().to_vec();
            let pick = self
                .binaries
                .iter()
                .copied()
                .filter(|&j| {
                    let v = values[j];
                    v.min(1.0 - v) > self.cfg.integrality_tol
                })
                .max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a)));
            let Some(j) = pick else {
                self.offer(&values);
                return;
            };
            fixes.push((j, 1.0));
            let Some((lo, hi, _)) = self.node_bounds(&fixes) else { return };
            if self.solve_lp(&lo, &hi) != LpStatus::Optimal {
                return;
            }
        }
    }
}

pub(crate) fn solve(
    p: &MilpProblem,
    cfg: &SolverConfig,
    hook: Option<&dyn NodeHook>,
) -> MilpSolution {
    let start = Instant::now();
    let mut stats = SolveStats::default();
    let infeasible = |stats: SolveStats| MilpSolution {
        status: SolveStatus::Infeasible,
        objective: None,
        values: None,
        bound: f64::INFINITY,
        stats,
    };
    let red = match presolve(p) {
        Ok(r) => r,
        Err(_) => {
            stats.wall_time = start.elapsed();
            return infeasible(stats);
        }
    };
    let q = &red.problem;
    let integer: Vec<bool> = q.columns().iter().map(|c| c.kind == VarKind::Binary).collect();
    let binaries: Vec<usize> = (0..q.num_columns()).filter(|&j| integer[j]).collect();
    let integral_objective = red.objective_offset.fract() == 0.0
        && q.objective().iter().all(|&(j, c)| integer[j] && c.fract() == 0.0);
    let sys = RowSystem::new(
        q.num_columns(),
        q.constraints().iter().map(|c| (c.terms.clone(), c.relation, c.rhs)),
        integer,
    );
    let cols = lp_columns(q);
    let mut search = Search {
        cfg,
        red: &red,
        sys,
        lp: DualSimplex::new(&cols, lp_rows(q)),
        columns: cols.clone(),
        rows: lp_rows(q),
        root_lower: cols.iter().map(|c| c.0).collect(),
        root_upper: cols.iter().map(|c| c.1).collect(),
        binaries,
        integral_objective,
        incumbent: None,
        hook,
        lp_limit: 50 * (q.num_columns() + q.constraints().len()) as u64 + 1000,
    };

    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: f64::NEG_INFINITY, seq: 0, fixes: Vec::new() });
    let mut seq = 1u64;
    let mut status = SolveStatus::Optimal;
    while let Some(node) = heap.pop() {
        if node.bound - red.objective_offset > search.cutoff() {
            continue;
        }
        if stats.nodes >= cfg.node_limit {
            status = SolveStatus::NodeLimit;
            heap.push(node);
            break;
        }
        if start.elapsed() >= cfg.time_limit {
            status = SolveStatus::TimeLimit;
            heap.push(node);
            break;
        }
        stats.nodes += 1;
        let Some((lo, hi, hook_bound)) = search.node_bounds(&node.fixes) else { continue };
        match search.solve_lp(&lo, &hi) {
            LpStatus::Optimal => {}
            LpStatus::Infeasible | LpStatus::Cutoff => continue,
            LpStatus::Unbounded | LpStatus::IterationLimit => {
                status = SolveStatus::Failure;
                break;
            }
        }
        let values = search.lp.values().to_vec();
        let obj = (search.lp.objective() + red.objective_offset).max(hook_bound);
        let Some(j) = search.most_fractional(&values) else {
            search.offer(&values);
            continue;
        };
        if node.seq == 0 {
            search.dive(&node.fixes);
        }
        for v in [1.0, 0.0] {
            let mut fixes = node.fixes.clone();
            fixes.push((j, v));
            heap.push(Node { bound: obj, seq, fixes });
            seq += 1;
        }
    }
    stats.lp_iterations = search.lp.iterations;

    let incumbent = search.incumbent.take();
    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let result = match incumbent {
        None => {
            stats.wall_time = start.elapsed();
            if status == SolveStatus::Optimal {
                return infeasible(stats);
            }
            MilpSolution { status, objective: None, values: None, bound: open_bound, stats }
        }
        Some((_, values)) => {
            let values = polish(q, &search.binaries, values);
            let full = red.expand(&values);
            let objective = p.evaluate(&full);
            let bound = if status == SolveStatus::Optimal { objective } else { open_bound.min(objective) };
            stats.wall_time = start.elapsed();
            MilpSolution { status, objective: Some(objective), values: Some(full), bound, stats }
        }
    };
    result
}

/// Solves the LP with every binary fixed to its value in `values`; `None`
/// when that LP has no optimum.
fn complete_binaries(q: &MilpProblem, binaries: &[usize], values: &[f64]) -> Option<Vec<f64>> {
    let mut cols = lp_columns(q);
    for &j in binaries {
        if values[j] < cols[j].0 || values[j] > cols[j].1 {
            return None;
        }
        cols[j].0 = values[j];
        cols[j].1 = values[j];
    }
    let mut lp = DualSimplex::new(&cols, lp_rows(q));
    let limit = 50 * (q.num_columns() + q.constraints().len()) as u64 + 1000;
    (lp.solve(f64::INFINITY, limit) == LpStatus::Optimal).then(|| lp.values().to_vec())
}

/// Recomputes the continuous part of an incumbent without branching noise.
fn polish(q: &MilpProblem, binaries: &[usize], values: Vec<f64>) -> Vec<f64> {
    complete_binaries(q, binaries, &values).unwrap_or(values)
}
