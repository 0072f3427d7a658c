//! Bound propagation and problem reduction.

use crate::milp::{MilpProblem, Relation, VarKind};

const FEAS_TOL: f64 = 1e-9;
const INT_TOL: f64 = 1e-9;

/// Rows in `≤` form (`Ge` rows are negated, `Eq` rows appear twice) with a
/// column-to-row index for worklist propagation.
#[derive(Clone, Debug)]
pub(crate) struct RowSystem {
    pub rows: Vec<(Vec<(usize, f64)>, f64)>,
    col_rows: Vec<Vec<usize>>,
    pub integer: Vec<bool>,
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) struct Infeasible;

impl RowSystem {
    pub fn new(num_cols: usize, rows: impl IntoIterator<Item = (Vec<(usize, f64)>, Relation, f64)>, integer: Vec<bool>) -> Self {
        let mut out = Vec::new();
        for (terms, rel, rhs) in rows {
            let neg: Vec<(usize, f64)> = terms.iter().map(|&(j, a)| (j, -a)).collect();
            match rel {
                Relation::Le => out.push((terms, rhs)),
                Relation::Ge => out.push((neg, -rhs)),
                Relation::Eq => {
                    out.push((terms, rhs));
                    out.push((neg, -rhs));
                }
            }
        }
        let mut col_rows = vec![Vec::new(); num_cols];
        for (i, (terms, _)) in out.iter().enumerate() {
            for &(j, _) in terms {
                col_rows[j].push(i);
            }
        }
        RowSystem { rows: out, col_rows, integer }
    }

    /// Tightens `lower`/`upper` to a fixpoint (bounded by `max_rounds`
    /// sweeps over changed rows). Integer columns are rounded.
    pub fn propagate(&self, lower: &mut [f64], upper: &mut [f64], max_rounds: usize) -> Result<(), Infeasible> {
        let mut queued = vec![true; self.rows.len()];
        let mut work: Vec<usize> = (0..self.rows.len()).collect();
        let mut rounds = 0;
        while !work.is_empty() && rounds < max_rounds {
            rounds += 1;
            let mut next = Vec::new();
            for &i in &work {
                queued[i] = false;
            }
            for i in work {
                let (terms, rhs) = &self.rows[i];
                let mut min_act = 0.0;
                let mut inf_count = 0;
                let mut inf_col = usize::MAX;
                for &(j, a) in terms {
                    let v = if a > 0.0 { a * lower[j] } else { a * upper[j] };
                    if v.is_finite() {
                        min_act += v;
                    } else {
                        inf_count += 1;
                        inf_col = j;
                    }
                }
                if inf_count == 0 && min_act > rhs + FEAS_TOL * (1.0 + rhs.abs()) {
                    return Err(Infeasible);
                }
                if inf_count > 1 {
                    continue;
                }
                for &(j, a) in terms {
                    if a == 0.0 {
                        continue;
                    }
                    let own = if a > 0.0 { a * lower[j] } else { a * upper[j] };
                    let rest = if inf_count == 1 {
                        if j != inf_col {
                            continue;
                        }
                        min_act
                    } else {
                        min_act - own
                    };
                    let bound = (rhs - rest) / a;
                    let changed = if a > 0.0 {
                        let mut nb = bound;
                        if self.integer[j] {
                            nb = (nb + INT_TOL).floor();
                        }
                        if nb < upper[j] - 1e-9 * (1.0 + nb.abs()) && (self.integer[j] || upper[j] - nb > 1e-6) {
                            upper[j] = nb;
                            true
                        } else {
                            false
                        }
                    } else {
                        let mut nb = bound;
                        if self.integer[j] {
                            nb = (nb - INT_TOL).ceil();
                        }
                        if nb > lower[j] + 1e-9 * (1.0 + nb.abs()) && (self.integer[j] || nb - lower[j] > 1e-6) {
                            lower[j] = nb;
                            true
                        } else {
                            false
                        }
                    };
                    if changed {
                        if lower[j] > upper[j] + FEAS_TOL {
                            return Err(Infeasible);
                        }
                        if lower[j] > upper[j] {
                            let mid = if self.integer[j] { lower[j].round() } else { upper[j] };
                            lower[j] = mid;
                            upper[j] = mid;
                        }
                        for &k in &self.col_rows[j] {
                            if !queued[k] {
                                queued[k] = true;
                                next.push(k);
                            }
                        }
                    }
                }
            }
            next.sort_unstable();
            work = next;
        }
        Ok(())
    }

    /// Whether lowering (`down = true`) or raising column `j` can never
    /// violate a row.
    fn free_direction(&self, j: usize, down: bool) -> bool {
        self.col_rows[j].iter().all(|&i| {
            let a = self.rows[i].0.iter().find(|t| t.0 == j).map_or(0.0, |t| t.1);
            if down {
                a >= 0.0
            } else {
                a <= 0.0
            }
        })
    }
}

/// A reduced problem plus the information needed to map solutions back.
#[derive(Clone, Debug)]
pub(crate) struct Reduced {
    pub problem: MilpProblem,
    /// Original column of each reduced column.
    pub kept: Vec<usize>,
    /// Value of every original column that was fixed by presolve.
    pub fixed: Vec<Option<f64>>,
    pub objective_offset: f64,
}

impl Reduced {
    pub fn expand(&self, reduced_values: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
        for (k, &j) in self.kept.iter().enumerate() {
            out[j] = reduced_values[k];
        }
        out
    }
}

/// Root presolve: propagation, dual fixing, removal of fixed columns and of
/// redundant rows.
pub(crate) fn presolve(p: &MilpProblem) -> Result<Reduced, Infeasible> {
    let n = p.num_columns();
    let integer: Vec<bool> = p.columns().iter().map(|c| c.kind == VarKind::Binary).collect();
    let sys = RowSystem::new(
        n,
        p.constraints().iter().map(|c| (c.terms.clone(), c.relation, c.rhs)),
        integer.clone(),
    );
    let mut lower: Vec<f64> = p.columns().iter().map(|c| c.lower).collect();
    let mut upper: Vec<f64> = p.columns().iter().map(|c| c.upper).collect();
    for j in 0..n {
        if integer[j] {
            lower[j] = lower[j].max(0.0).ceil();
            upper[j] = upper[j].min(1.0).floor();
        }
        if lower[j] > upper[j] {
            return Err(Infeasible);
        }
    }
    let mut cost = vec![0.0; n];
    for &(j, c) in p.objective() {
        cost[j] += c;
    }

    for _ in 0..20 {
        sys.propagate(&mut lower, &mut upper, 50)?;
        let mut changed = false;
        for j in 0..n {
            if lower[j] == upper[j] {
                continue;
            }
            if cost[j] >= 0.0 && lower[j].is_finite() && sys.free_direction(j, true) {
                upper[j] = lower[j];
                changed = true;
            } else if cost[j] <= 0.0 && upper[j].is_finite() && sys.free_direction(j, false) {
                lower[j] = upper[j];
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let fixed: Vec<Option<f64>> = (0..n).map(|j| (lower[j] == upper[j]).then_some(lower[j])).collect();
    let kept: Vec<usize> = (0..n).filter(|&j| fixed[j].is_none()).collect();
    let mut new_index = vec![usize::MAX; n];
    for (k, &j) in kept.iter().enumerate() {
        new_index[j] = k;
    }
    let mut reduced = MilpProblem::new();
    for &j in &kept {
        let c = &p.columns()[j];
        reduced.add_column(c.name.clone(), c.kind, lower[j], upper[j], c.tag);
    }
    for row in p.constraints() {
        let mut rhs = row.rhs;
        let mut terms = Vec::new();
        for &(j, a) in &row.terms {
            match fixed[j] {
                Some(v) => rhs -= a * v,
                None => terms.push((new_index[j], a)),
            }
        }
        let (mut min_act, mut max_act) = (0.0, 0.0);
        for &(k, a) in &terms {
            let (l, u) = (lower[kept[k]], upper[kept[k]]);
            min_act += if a > 0.0 { a * l } else { a * u };
            max_act += if a > 0.0 { a * u } else { a * l };
        }
        let tol = FEAS_TOL * (1.0 + rhs.abs());
        let redundant = match row.relation {
            Relation::Le => max_act <= rhs + tol,
            Relation::Ge => min_act >= rhs - tol,
            Relation::Eq => terms.is_empty() && rhs.abs() <= tol,
        };
        let violated = match row.relation {
            Relation::Le => min_act > rhs + 1e-7,
            Relation::Ge => max_act < rhs - 1e-7,
            Relation::Eq => min_act > rhs + 1e-7 || max_act < rhs - 1e-7,
        };
        if violated {
            return Err(Infeasible);
        }
        if !redundant {
            reduced.add_constraint(terms, row.relation, rhs);
        }
    }
    let mut offset = 0.0;
    let mut objective = Vec::new();
    for &(j, c) in p.objective() {
        match fixed[j] {
            Some(v) => offset += c * v,
            None => objective.push((new_index[j], c)),
        }
    }
    reduced.set_objective(objective);
    Ok(Reduced { problem: reduced, kept, fixed, objective_offset: offset })
}
