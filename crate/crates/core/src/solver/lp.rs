//! Bounded dual simplex on a dense tableau.
//!
//! Every structural column carries finite bounds (infinite ones are replaced
//! by a large artificial box), so the all-slack basis with each structural
//! column resting at the bound favoured by its cost is dual feasible and no
//! phase one is needed. Bound changes between solves keep the basis, which
//! makes re-solving after branching cheap.

const PIVOT_TOL: f64 = 1e-9;
const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const RESIDUAL_TOL: f64 = 1e-7;
const ARTIFICIAL_BOUND: f64 = 1e9;
const BLAND_AFTER: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    /// The objective provably exceeds the cutoff.
    Cutoff,
    Unbounded,
    IterationLimit,
}

/// A row `Σ a_j x_j (rel) b` in internal form: `Σ a_j x_j + s = b` with the
/// slack bounds encoding the relation.
#[derive(Clone, Debug)]
pub(crate) struct LpRow {
    pub terms: Vec<(usize, f64)>,
    pub slack_lower: f64,
    pub slack_upper: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct DualSimplex {
    m: usize,
    n: usize,
    width: usize,
    /// `B⁻¹ [A I]`, row-major.
    tab: Vec<f64>,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    artificial: Vec<bool>,
    x: Vec<f64>,
    d: Vec<f64>,
    basis: Vec<usize>,
    /// Row of a basic variable, `usize::MAX` when nonbasic.
    row_of: Vec<usize>,
    rows: Vec<LpRow>,
    pub iterations: u64,
}

impl DualSimplex {
    /// `columns` holds `(lower, upper, cost)` per structural column.
    pub fn new(columns: &[(f64, f64, f64)], rows: Vec<LpRow>) -> Self {
        let n = columns.len();
        let m = rows.len();
        let width = n + m;
        let mut lp = DualSimplex {
            m,
            n,
            width,
            tab: vec![0.0; m * width],
            cost: vec![0.0; width],
            lower: vec![0.0; width],
            upper: vec![0.0; width],
            artificial: vec![false; width],
            x: vec![0.0; width],
            d: vec![0.0; width],
            basis: vec![0; m],
            row_of: vec![usize::MAX; width],
            rows,
            iterations: 0,
        };
        for (j, &(l, u, c)) in columns.iter().enumerate() {
            lp.cost[j] = c;
            lp.set_raw_bounds(j, l, u);
        }
        for i in 0..m {
            let (l, u) = (lp.rows[i].slack_lower, lp.rows[i].slack_upper);
            lp.lower[n + i] = l;
            lp.upper[n + i] = u;
        }
        lp.cold_start();
        lp
    }

    fn set_raw_bounds(&mut self, j: usize, l: f64, u: f64) {
        let (l2, u2) = (l.max(-ARTIFICIAL_BOUND), u.min(ARTIFICIAL_BOUND));
        self.artificial[j] = l2 != l || u2 != u;
        self.lower[j] = l2;
        self.upper[j] = u2;
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.tab[i * self.width + j]
    }

    /// Resets to the slack basis, which is always dual feasible.
    fn cold_start(&mut self) {
        let (m, n, w) = (self.m, self.n, self.width);
        self.tab.iter_mut().for_each(|v| *v = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in &row.terms {
                self.tab[i * w + j] += a;
            }
            self.tab[i * w + n + i] = 1.0;
        }
        self.row_of.iter_mut().for_each(|r| *r = usize::MAX);
        for i in 0..m {
            self.basis[i] = n + i;
            self.row_of[n + i] = i;
        }
        self.d.copy_from_slice(&self.cost);
        for j in 0..n {
            self.x[j] = self.resting_value(j);
        }
        self.recompute_basic_values_from_rows();
    }

    fn resting_value(&self, j: usize) -> f64 {
        if self.d[j] >= 0.0 {
            self.lower[j]
        } else {
            self.upper[j]
        }
    }

    /// Basic values for the slack basis: `s_i = b_i - a_i x`.
    fn recompute_basic_values_from_rows(&mut self) {
        for i in 0..self.m {
            let act: f64 = self.rows[i].terms.iter().map(|&(j, a)| a * self.x[j]).sum();
            self.x[self.n + i] = self.rows[i].rhs - act;
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.x[..self.n]
    }

    pub fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.x[j]).sum()
    }

    /// Changes the bounds of structural column `j`, keeping the basis.
    pub fn set_bounds(&mut self, j: usize, l: f64, u: f64) {
        if self.lower[j] == l && self.upper[j] == u {
            return;
        }
        self.set_raw_bounds(j, l, u);
        if self.row_of[j] == usize::MAX {
            let new = self.resting_value(j);
            self.move_nonbasic(j, new);
        }
    }

    fn move_nonbasic(&mut self, j: usize, new: f64) {
        let delta = new - self.x[j];
        if delta != 0.0 {
            let w = self.width;
            for i in 0..self.m {
                let a = self.tab[i * w + j];
                if a != 0.0 {
                    self.x[self.basis[i]] -= a * delta;
                }
            }
            self.x[j] = new;
        }
    }

    /// Restores dual feasibility after drift; falls back to the slack basis
    /// when a column cannot be moved to its other bound.
    fn repair_dual(&mut self) {
        for j in 0..self.width {
            if self.row_of[j] != usize::MAX || self.lower[j] == self.upper[j] {
                continue;
            }
            let at_lower = self.x[j] == self.lower[j];
            let wrong = if at_lower { self.d[j] < -DUAL_TOL } else { self.d[j] > DUAL_TOL };
            if !wrong {
                continue;
            }
            let other = if at_lower { self.upper[j] } else { self.lower[j] };
            if other.is_finite() {
                self.move_nonbasic(j, other);
            } else {
                self.cold_start();
                return;
            }
        }
    }

    /// Solves from the current basis. Stops early with [`LpStatus::Cutoff`]
    /// once the (monotone) dual objective exceeds `cutoff`.
    pub fn solve(&mut self, cutoff: f64, max_iterations: u64) -> LpStatus {
        self.repair_dual();
        let mut refactors = 0;
        let mut stalled = 0usize;
        let mut last_obj = f64::NEG_INFINITY;
        let mut performed = 0u64;
        loop {
            if performed >= max_iterations {
                return LpStatus::IterationLimit;
            }
            let obj = self.objective();
            if obj > cutoff {
                if self.residual() > RESIDUAL_TOL && refactors < 3 {
                    refactors += 1;
                    self.refactor();
                    self.repair_dual();
                    continue;
                }
                return LpStatus::Cutoff;
            }
            if obj > last_obj + 1e-12 {
                stalled = 0;
                last_obj = obj;
            } else {
                stalled += 1;
            }
            let bland = stalled > BLAND_AFTER;
            let Some(r) = self.choose_leaving(bland) else {
                // Candidate optimum: verify against the original rows.
                if self.residual() > RESIDUAL_TOL || !self.duals_consistent() {
                    if refactors >= 3 {
                        return LpStatus::IterationLimit;
                    }
                    refactors += 1;
                    self.refactor();
                    self.repair_dual();
                    continue;
                }
                if (0..self.n).any(|j| self.artificial[j] && self.at_artificial_bound(j)) {
                    return LpStatus::Unbounded;
                }
                return LpStatus::Optimal;
            };
            if self.iterate(r, bland) {
                performed += 1;
                self.iterations += 1;
            } else if self.certifies_infeasibility(r) {
                return LpStatus::Infeasible;
            } else if refactors < 3 {
                refactors += 1;
                self.refactor();
                self.repair_dual();
            } else {
                return LpStatus::IterationLimit;
            }
        }
    }

    fn at_artificial_bound(&self, j: usize) -> bool {
        (self.lower[j] == -ARTIFICIAL_BOUND && self.x[j] <= -ARTIFICIAL_BOUND + 1.0)
            || (self.upper[j] == ARTIFICIAL_BOUND && self.x[j] >= ARTIFICIAL_BOUND - 1.0)
    }

    fn infeasibility(&self, v: usize) -> f64 {
        let x = self.x[v];
        (self.lower[v] - x).max(x - self.upper[v])
    }

    fn choose_leaving(&self, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let v = self.basis[i];
            let inf = self.infeasibility(v);
            if inf <= PRIMAL_TOL * (1.0 + self.x[v].abs().min(1e3)) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bi, binf)) => {
                    if bland {
                        v < self.basis[bi]
                    } else {
                        inf > binf
                    }
                }
            };
            if better {
                best = Some((i, inf));
            }
        }
        best.map(|(i, _)| i)
    }

    /// One dual simplex iteration on leaving row `r`. Returns `false` when
    /// the row proves primal infeasibility.
    fn iterate(&mut self, r: usize, bland: bool) -> bool {
        let w = self.width;
        let leaving = self.basis[r];
        let xr = self.x[leaving];
        let (target, dir) = if xr < self.lower[leaving] { (self.lower[leaving], 1.0) } else { (self.upper[leaving], -1.0) };
        let row = &self.tab[r * w..(r + 1) * w];

        // Eligible entering columns with their ratios |d_j / α_rj|.
        let mut cands: Vec<(f64, f64, usize)> = Vec::new();
        for j in 0..w {
            let a = row[j];
            if a.abs() <= PIVOT_TOL || self.row_of[j] != usize::MAX || self.lower[j] == self.upper[j] {
                continue;
            }
            let at_lower = self.x[j] == self.lower[j];
            let ok = if at_lower { dir * a < 0.0 } else { dir * a > 0.0 };
            if ok {
                let dj = if at_lower { self.d[j].max(0.0) } else { (-self.d[j]).max(0.0) };
                cands.push((dj / a.abs(), a.abs(), j));
            }
        }
        if cands.is_empty() {
            return false;
        }
        if bland {
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        } else {
            cands.sort_by(|a, b| {
                let ra = (a.0 / 1e-12).round();
                let rb = (b.0 / 1e-12).round();
                ra.total_cmp(&rb).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2))
            });
        }

        // Long-step ratio test: pass breakpoints of boxed columns while the
        // leaving row stays infeasible after flipping them.
        let mut slope = (xr - target).abs();
        let mut flips = Vec::new();
        let mut entering = None;
        for &(_, a, j) in &cands {
            let range = self.upper[j] - self.lower[j];
            let after = slope - a * range;
            if range.is_finite() && after > PRIMAL_TOL && !bland {
                flips.push(j);
                slope = after;
            } else {
                entering = Some(j);
                break;
            }
        }
        let Some(q) = entering else {
            return false;
        };

        let alpha_q = row[q];
        let theta_d = self.d[q] / alpha_q;
        let pivot_row: Vec<(usize, f64)> = row.iter().enumerate().filter(|(_, &a)| a != 0.0).map(|(j, &a)| (j, a)).collect();
        if theta_d != 0.0 {
            for &(j, a) in &pivot_row {
                self.d[j] -= theta_d * a;
            }
        }
        self.d[q] = 0.0;
        self.d[leaving] = -theta_d;

        for j in flips {
            let other = if self.x[j] == self.lower[j] { self.upper[j] } else { self.lower[j] };
            self.move_nonbasic(j, other);
        }

        let t = (self.x[leaving] - target) / alpha_q;
        if t != 0.0 {
            for i in 0..self.m {
                let a = self.tab[i * w + q];
                if a != 0.0 {
                    self.x[self.basis[i]] -= a * t;
                }
            }
            self.x[q] += t;
        }
        self.x[leaving] = target;

        self.pivot(r, q, &pivot_row);
        true
    }

    fn pivot(&mut self, r: usize, q: usize, pivot_row: &[(usize, f64)]) {
        let w = self.width;
        let alpha = self.tab[r * w + q];
        let scaled: Vec<(usize, f64)> = pivot_row.iter().map(|&(j, a)| (j, a / alpha)).collect();
        for &(j, a) in &scaled {
            self.tab[r * w + j] = a;
        }
        self.tab[r * w + q] = 1.0;
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.tab[i * w + q];
            if f == 0.0 {
                continue;
            }
            let base = i * w;
            for &(j, a) in &scaled {
                self.tab[base + j] -= f * a;
            }
            self.tab[base + q] = 0.0;
        }
        let leaving = self.basis[r];
        self.row_of[leaving] = usize::MAX;
        self.basis[r] = q;
        self.row_of[q] = r;
    }

    /// Checks the infeasibility claimed by row `r` on the original data: the
    /// row of `B⁻¹` combines the constraints into `Σ α_j x_j = y·b`, which
    /// must be out of reach of the column bounds.
    fn certifies_infeasibility(&self, r: usize) -> bool {
        let (n, w) = (self.n, self.width);
        let y = &self.tab[r * w + n..(r + 1) * w];
        let mut alpha = vec![0.0; w];
        let mut rhs = 0.0;
        for (k, row) in self.rows.iter().enumerate() {
            let yk = y[k];
            if yk == 0.0 {
                continue;
            }
            for &(j, a) in &row.terms {
                alpha[j] += yk * a;
            }
            alpha[n + k] += yk;
            rhs += yk * row.rhs;
        }
        let (mut lo, mut hi, mut scale) = (0.0, 0.0, rhs.abs());
        for j in 0..w {
            let a = alpha[j];
            let unbounded = !self.lower[j].is_finite() || !self.upper[j].is_finite();
            if a == 0.0 || (unbounded && a.abs() <= PIVOT_TOL) {
                continue;
            }
            let (p, q) = (a * self.lower[j], a * self.upper[j]);
            lo += p.min(q);
            hi += p.max(q);
            for v in [p, q] {
                if v.is_finite() {
                    scale += v.abs();
                }
            }
        }
        let margin = 1e-12 * (1.0 + scale);
        rhs > hi + margin || rhs < lo - margin
    }

    /// Largest residual of the original rows at the current point.
    fn residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let act: f64 = row.terms.iter().map(|&(j, a)| a * self.x[j]).sum::<f64>() + self.x[self.n + i];
            worst = worst.max((act - row.rhs).abs() / (1.0 + row.rhs.abs()));
        }
        worst
    }

    /// Recomputes reduced costs from the tableau and reports whether the
    /// maintained ones were close.
    fn duals_consistent(&mut self) -> bool {
        let w = self.width;
        let mut fresh = self.cost.clone();
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for (j, f) in fresh.iter_mut().enumerate() {
                *f -= cb * self.tab[i * w + j];
            }
        }
        let drift = fresh.iter().zip(&self.d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        self.d = fresh;
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
        let dual_ok = (0..w).all(|j| {
            if self.row_of[j] != usize::MAX || self.lower[j] == self.upper[j] {
                return true;
            }
            if self.x[j] == self.lower[j] {
                self.d[j] >= -1e-7
            } else {
                self.d[j] <= 1e-7
            }
        });
        drift < 1e-7 && dual_ok
    }

    /// Rebuilds `B⁻¹ [A I]` for the current basis by Gauss-Jordan elimination
    /// from the original rows. Columns that turn out dependent leave the basis.
    fn refactor(&mut self) {
        let (m, n, w) = (self.m, self.n, self.width);
        let wanted: Vec<usize> = self.basis.clone();
        let nonbasic_x: Vec<f64> = self.x.clone();
        self.tab.iter_mut().for_each(|v| *v = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in &row.terms {
                self.tab[i * w + j] += a;
            }
            self.tab[i * w + n + i] = 1.0;
        }
        self.row_of.iter_mut().for_each(|r| *r = usize::MAX);
        for i in 0..m {
            self.basis[i] = n + i;
            self.row_of[n + i] = i;
        }
        let mut done = vec![false; m];
        for &v in wanted.iter().filter(|&&v| v < n) {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..m {
                if done[i] {
                    continue;
                }
                let a = self.tab[i * w + v].abs();
                if a > 1e-9 && best.map_or(true, |(_, b)| a > b) {
                    best = Some((i, a));
                }
            }
            if let Some((i, _)) = best {
                let row: Vec<(usize, f64)> =
                    (0..w).map(|j| (j, self.tab[i * w + j])).filter(|&(_, a)| a != 0.0).collect();
                self.pivot(i, v, &row);
                done[i] = true;
            }
        }
        for i in 0..m {
            if !done[i] && wanted.contains(&self.basis[i]) {
                done[i] = true;
            }
        }
        // Nonbasic values stay where they were (snapped to a bound).
        for j in 0..w {
            if self.row_of[j] == usize::MAX {
                let v = nonbasic_x[j];
                self.x[j] = if (v - self.upper[j]).abs() < (v - self.lower[j]).abs() { self.upper[j] } else { self.lower[j] };
                if !self.x[j].is_finite() {
                    self.x[j] = if self.lower[j].is_finite() { self.lower[j] } else { self.upper[j] };
                }
            }
        }
        // x_B = B⁻¹ b - Σ_N T_j x_j; B⁻¹ sits in the slack columns.
        for i in 0..m {
            let mut v = 0.0;
            for (k, row) in self.rows.iter().enumerate() {
                v += self.tab[i * w + n + k] * row.rhs;
            }
            for j in 0..w {
                if self.row_of[j] == usize::MAX {
                    v -= self.tab[i * w + j] * self.x[j];
                }
            }
            self.x[self.basis[i]] = v;
        }
        let _ = self.duals_consistent();
    }

    /// Value of the slack of row `i` (for diagnostics).
    #[allow(dead_code)]
    pub fn slack(&self, i: usize) -> f64 {
        self.x[self.n + i]
    }

    #[allow(dead_code)]
    pub fn tableau_entry(&self, i: usize, j: usize) -> f64 {
        self.at(i, j)
    }
}
