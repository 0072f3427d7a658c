//! Combinatorial bounds for both encodings, used to prune branch-and-bound
//! nodes and to build a starting solution.
//!
//! Both encodings pay for "units" (sentences or states). A choice `(s, α)`
//! can be taken only if its `θ` column is still free and, for each of its
//! requirement groups, some unit of the group is still available. A node is
//! feasible iff the maximum probability of reaching the targets with such
//! choices is at least `λ + ε`; this is decided with value iteration from
//! below and interval iteration from above, answering "feasible" whenever the
//! two cannot separate, so pruning never cuts a feasible node.

use std::collections::VecDeque;
use std::time::Instant;

use super::encode::{covering_candidates, describable_targets, end_components};
use super::problem::{MilpProblem, VarTag};
use crate::mdp::{can_reach, Choice, Mdp, MdpError, ReachabilityRequirement, StateId, TargetSet};
use crate::solver::{NodeHook, SolveStatus, SolverConfig};
use crate::templates::SentenceTuple;

/// Slack subtracted from `λ + ε` so solver tolerances never make a
/// solvable node look unsolvable.
const THRESHOLD_SLACK: f64 = 1e-7;
const SWEEP_LIMIT: usize = 200_000;

struct ChoiceReq {
    theta: usize,
    /// Every group needs one available unit.
    groups: Vec<Vec<usize>>,
}

pub struct ReachabilityBound<'m> {
    m: &'m Mdp,
    targets: TargetSet,
    threshold: f64,
    /// Objective columns, each costing one.
    units: Vec<usize>,
    /// Per state, per choice; `None` for targets and missing columns.
    choices: Vec<Vec<Option<ChoiceReq>>>,
    /// Groups that must be met when the initial state is a target.
    initial_groups: Vec<Vec<usize>>,
    /// Per column, the number of requirement groups it appears in.
    weight: Vec<usize>,
}

impl<'m> ReachabilityBound<'m> {
    /// Bound for the sentence-minimal encoding built with `candidates` and
    /// `terminal` as description of target states.
    pub fn for_explanation(
        m: &'m Mdp,
        req: &ReachabilityRequirement,
        problem: &MilpProblem,
        candidates: &[SentenceTuple],
        epsilon: f64,
        terminal: Option<crate::mdp::ActionId>,
    ) -> Result<Self, MdpError> {
        let targets = req.target_set(m)?;
        let mu = |c: &SentenceTuple| problem.tagged(VarTag::Sentence(c.index));
        let describable = describable_targets(m, &targets, candidates, terminal);
        let target_group = |t: StateId| -> Vec<usize> {
            let a = terminal.expect("describable targets imply a terminal action");
            covering_candidates(m, candidates, t, a).filter_map(mu).collect()
        };
        let choices = m
            .states()
            .map(|s| {
                m.choices(s)
                    .iter()
                    .map(|c| {
                        if targets.contains(s) {
                            return None;
                        }
                        let theta = problem.tagged(VarTag::Choice(s, c.action))?;
                        let mut groups = vec![covering_candidates(m, candidates, s, c.action).filter_map(mu).collect()];
                        for &(t, _) in &c.successors {
                            if describable[t.0] {
                                groups.push(target_group(t));
                            }
                        }
                        Some(ChoiceReq { theta, groups })
                    })
                    .collect()
            })
            .collect();
        let init = m.initial();
        let initial_groups = if describable[init.0] { vec![target_group(init)] } else { Vec::new() };
        let units = candidates.iter().filter_map(mu).collect();
        Ok(Self::assemble(m, req.lambda + epsilon, problem, units, targets, choices, initial_groups))
    }

    /// Bound for the state-minimal encoding.
    pub fn for_minimal_states(
        m: &'m Mdp,
        req: &ReachabilityRequirement,
        problem: &MilpProblem,
        epsilon: f64,
    ) -> Result<Self, MdpError> {
        let targets = req.target_set(m)?;
        let x = |s: StateId| problem.tagged(VarTag::Include(s));
        let choices = m
            .states()
            .map(|s| {
                m.choices(s)
                    .iter()
                    .map(|c| {
                        if targets.contains(s) {
                            return None;
                        }
                        let theta = problem.tagged(VarTag::Choice(s, c.action))?;
                        let mut groups = vec![x(s).into_iter().collect::<Vec<_>>()];
                        for &(t, _) in &c.successors {
                            if targets.contains(t) {
                                groups.push(x(t).into_iter().collect());
                            }
                        }
                        Some(ChoiceReq { theta, groups })
                    })
                    .collect()
            })
            .collect();
        let init = m.initial();
        let initial_groups = if targets.contains(init) { vec![x(init).into_iter().collect()] } else { Vec::new() };
        let units = m.states().filter_map(x).collect();
        Ok(Self::assemble(m, req.lambda + epsilon, problem, units, targets, choices, initial_groups))
    }

    fn assemble(
        m: &'m Mdp,
        threshold: f64,
        problem: &MilpProblem,
        units: Vec<usize>,
        targets: TargetSet,
        choices: Vec<Vec<Option<ChoiceReq>>>,
        initial_groups: Vec<Vec<usize>>,
    ) -> Self {
        let mut weight = vec![0; problem.num_columns()];
        for c in choices.iter().flatten().flatten() {
            for g in &c.groups {
                for &u in g {
                    weight[u] += 1;
                }
            }
        }
        ReachabilityBound {
            m,
            targets,
            threshold: threshold - THRESHOLD_SLACK,
            units,
            choices,
            initial_groups,
            weight,
        }
    }

    fn met(groups: &[Vec<usize>], available: &dyn Fn(usize) -> bool) -> bool {
        groups.iter().all(|g| g.iter().any(|&u| available(u)))
    }

    /// Choices usable when the columns in `theta_free` are free and the
    /// units in `available` can be paid for.
    fn admissible(&self, theta_free: &dyn Fn(usize) -> bool, available: &dyn Fn(usize) -> bool) -> Vec<Vec<bool>> {
        self.choices
            .iter()
            .map(|cs| {
                cs.iter()
                    .map(|c| c.as_ref().is_some_and(|c| theta_free(c.theta) && Self::met(&c.groups, available)))
                    .collect()
            })
            .collect()
    }

    /// Whether some strategy using only choices allowed by `theta_free` and
    /// units in `available` can reach the targets with enough probability.
    fn feasible(&self, theta_free: &dyn Fn(usize) -> bool, available: &dyn Fn(usize) -> bool) -> bool {
        if self.targets.contains(self.m.initial()) {
            return Self::met(&self.initial_groups, available);
        }
        self.max_reach_at_least(&self.admissible(theta_free, available))
    }

    fn max_reach_at_least(&self, adm: &[Vec<bool>]) -> bool {
        let m = self.m;
        let n = m.num_states();
        let init = m.initial();
        let allowed = |s: StateId, ci: usize| adm[s.0][ci];
        let allowed_choice = |s: StateId, c: &Choice| {
            m.choices(s).iter().position(|d| d.action == c.action).is_some_and(|ci| allowed(s, ci))
        };
        let can = can_reach(m, &self.targets, allowed_choice);
        if !can[init.0] {
            return false;
        }
        let region: Vec<bool> = (0..n).map(|i| can[i] && !self.targets.contains(StateId(i))).collect();
        let mec = end_components(m, &region, &allowed_choice);
        let mut members: Vec<Vec<StateId>> = Vec::new();
        for s in m.states() {
            if let Some(k) = mec[s.0] {
                if members.len() <= k {
                    members.resize(k + 1, Vec::new());
                }
                members[k].push(s);
            }
        }
        let mut lo: Vec<f64> = (0..n).map(|i| if self.targets.contains(StateId(i)) { 1.0 } else { 0.0 }).collect();
        let mut hi: Vec<f64> =
            (0..n).map(|i| if self.targets.contains(StateId(i)) || can[i] { 1.0 } else { 0.0 }).collect();
        let live: Vec<StateId> = m.states().filter(|s| region[s.0]).collect();
        let bellman = |v: &[f64], s: StateId| -> f64 {
            m.choices(s)
                .iter()
                .enumerate()
                .filter(|&(ci, _)| allowed(s, ci))
                .map(|(_, c)| c.successors.iter().map(|&(t, p)| p * v[t.0]).sum::<f64>())
                .fold(0.0, f64::max)
        };
        for _ in 0..SWEEP_LIMIT {
            for &s in &live {
                lo[s.0] = bellman(&lo, s);
            }
            if lo[init.0] >= self.threshold {
                return true;
            }
            for &s in &live {
                hi[s.0] = bellman(&hi, s).min(hi[s.0]);
            }
            // Deflate each end component to its best exit.
            for (k, states) in members.iter().enumerate() {
                let mut exit: f64 = 0.0;
                for &s in states {
                    for (ci, c) in m.choices(s).iter().enumerate() {
                        if allowed(s, ci) && c.successors.iter().any(|&(t, _)| mec[t.0] != Some(k)) {
                            exit = exit.max(c.successors.iter().map(|&(t, p)| p * hi[t.0]).sum());
                        }
                    }
                }
                for &s in states {
                    hi[s.0] = hi[s.0].min(exit);
                }
            }
            if hi[init.0] < self.threshold {
                return false;
            }
            if live.iter().all(|s| hi[s.0] - lo[s.0] < 1e-12) {
                return true;
            }
        }
        true
    }

    /// A unit set that is feasible and minimal under inclusion, found by
    /// dropping units greedily, least useful first. Returns the selected
    /// columns, or `None` when even all units together are infeasible.
    pub fn greedy_units(&self, lower: &[f64], upper: &[f64]) -> Option<Vec<usize>> {
        let theta_free = |j: usize| upper[j] > 0.5;
        let mut keep = vec![false; upper.len()];
        for &u in &self.units {
            keep[u] = upper[u] > 0.5;
        }
        if !self.feasible(&theta_free, &|u| keep[u]) {
            return None;
        }
        let mut order: Vec<usize> = self.units.iter().copied().filter(|&u| keep[u] && lower[u] < 0.5).collect();
        order.sort_by_key(|&u| (self.weight[u], u));
        for u in order {
            keep[u] = false;
            if !self.feasible(&theta_free, &|v| keep[v]) {
                keep[u] = true;
            }
        }
        Some(self.units.iter().copied().filter(|&u| keep[u]).collect())
    }

    /// Units of which any feasible superset of `chosen` must contain one:
    /// every such superset enables a new choice in a state reachable under
    /// `chosen`, and leaves that region when the targets are out of reach.
    fn necessary(&self, theta_free: &dyn Fn(usize) -> bool, chosen: &[bool], open: &[bool]) -> Vec<usize> {
        let m = self.m;
        let by_chosen = |u: usize| chosen[u];
        let usable = |u: usize| chosen[u] || open[u];
        let mut out = vec![false; chosen.len()];
        let mut collect = |groups: &[Vec<usize>]| {
            for g in groups {
                if !g.iter().any(|&u| chosen[u]) {
                    for &u in g {
                        if open[u] {
                            out[u] = true;
                        }
                    }
                }
            }
        };
        let init = m.initial();
        if self.targets.contains(init) {
            collect(&self.initial_groups);
        } else {
            let adm = self.admissible(theta_free, &by_chosen);
            let mut seen = vec![false; m.num_states()];
            seen[init.0] = true;
            let mut queue = VecDeque::from([init]);
            let mut hit = false;
            while let Some(s) = queue.pop_front() {
                if self.targets.contains(s) {
                    hit = true;
                    continue;
                }
                for (ci, c) in m.choices(s).iter().enumerate() {
                    if adm[s.0][ci] {
                        for &(t, _) in &c.successors {
                            if !seen[t.0] {
                                seen[t.0] = true;
                                queue.push_back(t);
                            }
                        }
                    }
                }
            }
            for s in m.states().filter(|s| seen[s.0] && !self.targets.contains(*s)) {
                for (ci, c) in m.choices(s).iter().enumerate() {
                    let Some(req) = &self.choices[s.0][ci] else { continue };
                    if adm[s.0][ci] || !theta_free(req.theta) || !Self::met(&req.groups, &usable) {
                        continue;
                    }
                    if hit || c.successors.iter().any(|&(t, _)| !seen[t.0]) {
                        collect(&req.groups);
                    }
                }
            }
        }
        let mut units: Vec<usize> = (0..out.len()).filter(|&u| out[u]).collect();
        units.sort_by_key(|&u| (std::cmp::Reverse(self.weight[u]), u));
        units
    }

    /// Searches for a smallest feasible unit set within the bounds of the
    /// problem columns, by iterative deepening on the set size. Every call
    /// to the reachability check counts as a node.
    pub fn minimum_units(&self, lower: &[f64], upper: &[f64], cfg: &SolverConfig) -> UnitSearch {
        let start = Instant::now();
        let theta_free = |j: usize| upper[j] > 0.5;
        let mut search = UnitSearch { units: None, lower_bound: 0.0, status: SolveStatus::Optimal, nodes: 0 };
        let Some(greedy) = self.greedy_units(lower, upper) else {
            search.lower_bound = f64::INFINITY;
            search.status = SolveStatus::Infeasible;
            return search;
        };
        let mut chosen = vec![false; upper.len()];
        let mut open = vec![false; upper.len()];
        for &u in &self.units {
            chosen[u] = lower[u] > 0.5;
            open[u] = !chosen[u] && upper[u] > 0.5;
        }
        let forced = chosen.iter().filter(|&&c| c).count();
        search.lower_bound = forced as f64;
        search.units = Some(greedy.clone());
        let mut ctx = Deepening { bound: self, theta_free: &theta_free, cfg, start, nodes: 0, limit_hit: false };
        for size in forced..greedy.len() {
            let found = ctx.extend(&mut chosen, &mut open, forced, size);
            search.nodes = ctx.nodes;
            if let Some(units) = found {
                search.units = Some(units);
                search.lower_bound = size as f64;
                return search;
            }
            if ctx.limit_hit {
                search.status = if start.elapsed() >= cfg.time_limit { SolveStatus::TimeLimit } else { SolveStatus::NodeLimit };
                return search;
            }
            search.lower_bound = (size + 1) as f64;
        }
        search
    }

    /// A strategy attaining the maximal reachability probability with the
    /// choices allowed by `units`: per state the index of the chosen
    /// choice, `None` where the targets cannot be reached.
    pub fn strategy(&self, units: &[usize], upper: &[f64]) -> Vec<Option<usize>> {
        let m = self.m;
        let n = m.num_states();
        let mut available = vec![false; upper.len()];
        for &u in units {
            available[u] = true;
        }
        let adm = self.admissible(&|j| upper[j] > 0.5, &|u| available[u]);
        let mut v: Vec<f64> = (0..n).map(|i| if self.targets.contains(StateId(i)) { 1.0 } else { 0.0 }).collect();
        let value = |v: &[f64], c: &Choice| c.successors.iter().map(|&(t, p)| p * v[t.0]).sum::<f64>();
        for _ in 0..SWEEP_LIMIT {
            let mut change: f64 = 0.0;
            for s in m.states().filter(|s| !self.targets.contains(*s)) {
                let best = m
                    .choices(s)
                    .iter()
                    .enumerate()
                    .filter(|&(ci, _)| adm[s.0][ci])
                    .map(|(_, c)| value(&v, c))
                    .fold(0.0, f64::max);
                change = change.max(best - v[s.0]);
                v[s.0] = best;
            }
            if change < 1e-15 {
                break;
            }
        }
        // Among the optimal choices, pick one that moves closer to a target.
        let mut strategy: Vec<Option<usize>> = vec![None; n];
        let mut done: Vec<bool> = (0..n).map(|i| self.targets.contains(StateId(i))).collect();
        loop {
            let mut progress = false;
            for s in m.states() {
                if done[s.0] || v[s.0] <= 0.0 {
                    continue;
                }
                let pick = m.choices(s).iter().enumerate().position(|(ci, c)| {
                    adm[s.0][ci]
                        && value(&v, c) >= v[s.0] - 1e-12 * (1.0 + v[s.0])
                        && c.successors.iter().any(|&(t, _)| done[t.0])
                });
                if let Some(ci) = pick {
                    strategy[s.0] = Some(ci);
                    done[s.0] = true;
                    progress = true;
                }
            }
            if !progress {
                return strategy;
            }
        }
    }

    /// A copy of `problem` with the unit columns fixed to `units` and, for
    /// every state, the choice column of `strategy` fixed to one and the
    /// others to zero.
    pub fn pin(&self, problem: &MilpProblem, units: &[usize], strategy: Option<&[Option<usize>]>) -> MilpProblem {
        let mut pinned = problem.clone();
        for &u in &self.units {
            if units.contains(&u) {
                pinned.set_lower(u, 1.0);
            } else {
                pinned.set_upper(u, 0.0);
            }
        }
        if let Some(strategy) = strategy {
            for (s, cs) in self.choices.iter().enumerate() {
                for (ci, c) in cs.iter().enumerate() {
                    if let Some(c) = c {
                        if strategy[s] == Some(ci) {
                            pinned.set_lower(c.theta, 1.0);
                        } else {
                            pinned.set_upper(c.theta, 0.0);
                        }
                    }
                }
            }
        }
        pinned
    }
}

/// Result of [`ReachabilityBound::minimum_units`].
#[derive(Clone, Debug)]
pub struct UnitSearch {
    /// Best feasible unit set found.
    pub units: Option<Vec<usize>>,
    /// Proven lower bound on the number of units.
    pub lower_bound: f64,
    /// `Optimal` or `Infeasible` once proven, else the limit that stopped
    /// the search.
    pub status: SolveStatus,
    pub nodes: u64,
}

struct Deepening<'a, 'm> {
    bound: &'a ReachabilityBound<'m>,
    theta_free: &'a dyn Fn(usize) -> bool,
    cfg: &'a SolverConfig,
    start: Instant,
    nodes: u64,
    limit_hit: bool,
}

impl Deepening<'_, '_> {
    fn feasible(&mut self, available: &dyn Fn(usize) -> bool) -> bool {
        self.nodes += 1;
        self.bound.feasible(self.theta_free, available)
    }

    fn out_of_budget(&mut self) -> bool {
        if self.nodes >= self.cfg.node_limit || self.start.elapsed() >= self.cfg.time_limit {
            self.limit_hit = true;
        }
        self.limit_hit
    }

    /// A feasible set of at most `size` units extending `chosen` with units
    /// from `open`. Restores both vectors before returning.
    fn extend(&mut self, chosen: &mut [bool], open: &mut [bool], count: usize, size: usize) -> Option<Vec<usize>> {
        if self.out_of_budget() {
            return None;
        }
        let collect = |chosen: &[bool]| (0..chosen.len()).filter(|&u| chosen[u]).collect::<Vec<_>>();
        if self.feasible(&|u| chosen[u]) {
            return Some(collect(chosen));
        }
        if count >= size || !self.feasible(&|u| chosen[u] || open[u]) {
            return None;
        }
        let branch = self.bound.necessary(self.theta_free, chosen, open);
        let mut found = None;
        let mut closed = Vec::new();
        for &u in &branch {
            chosen[u] = true;
            open[u] = false;
            found = if count + 1 == size {
                self.feasible(&|v| chosen[v]).then(|| collect(chosen))
            } else {
                self.extend(chosen, open, count + 1, size)
            };
            chosen[u] = false;
            closed.push(u);
            if found.is_some() || self.limit_hit {
                break;
            }
        }
        for u in closed {
            open[u] = true;
        }
        found
    }
}

impl NodeHook for ReachabilityBound<'_> {
    fn lower_bound(&self, lower: &[f64], upper: &[f64], cutoff: f64) -> f64 {
        let theta_free = |j: usize| upper[j] > 0.5;
        if !self.feasible(&theta_free, &|u| upper[u] > 0.5) {
            return f64::INFINITY;
        }
        let fixed = |u: usize| lower[u] > 0.5;
        let k = self.units.iter().filter(|&&u| fixed(u)).count() as f64;
        if k + 1.0 <= cutoff || self.feasible(&theta_free, &fixed) {
            return k;
        }
        if k + 2.0 <= cutoff {
            return k + 1.0;
        }
        let one_more = self
            .units
            .iter()
            .filter(|&&u| !fixed(u) && upper[u] > 0.5)
            .any(|&extra| self.feasible(&theta_free, &|u| fixed(u) || u == extra));
        if one_more {
            k + 1.0
        } else {
            k + 2.0
        }
    }
}

#[cfg(test)]
mod tests {
    use itertools::Itertools;

    use super::*;
    use crate::explain::brute_force_min_explanation;
    use crate::milp::{build_explanation_milp, build_minimal_state_milp, EncodingOptions};
    use crate::random::{random_instance, RandomMdpConfig};
    use crate::solver::solve;
    use crate::templates::enumerate_candidates;

    const EPS: f64 = 1e-6;

    fn bounds(p: &MilpProblem) -> (Vec<f64>, Vec<f64>) {
        (p.columns().iter().map(|c| c.lower).collect(), p.columns().iter().map(|c| c.upper).collect())
    }

    /// Plain value iteration over the admissible choices, after removing
    /// states that cannot reach a target.
    fn max_reach(m: &Mdp, targets: &TargetSet, ok: impl Fn(StateId, &Choice) -> bool) -> f64 {
        let can = can_reach(m, targets, &ok);
        let mut v: Vec<f64> = m.states().map(|s| if targets.contains(s) { 1.0 } else { 0.0 }).collect();
        for _ in 0..100_000 {
            let mut delta: f64 = 0.0;
            for s in m.states().filter(|s| can[s.0] && !targets.contains(*s)) {
                let best = m
                    .choices(s)
                    .iter()
                    .filter(|c| ok(s, c))
                    .map(|c| c.successors.iter().map(|&(t, p)| p * v[t.0]).sum::<f64>())
                    .fold(0.0, f64::max);
                delta = delta.max(best - v[s.0]);
                v[s.0] = best;
            }
            if delta < 1e-14 {
                break;
            }
        }
        v[m.initial().0]
    }

    /// Fewest states of a subsystem: admissible choices start in the subset
    /// and only enter targets of the subset.
    fn brute_force_min_states(m: &Mdp, req: &ReachabilityRequirement) -> usize {
        let targets = req.target_set(m).unwrap();
        let n = m.num_states();
        for k in 1..=n {
            for subset in (0..n).combinations(k) {
                let inside = |s: StateId| subset.contains(&s.0);
                if !inside(m.initial()) {
                    continue;
                }
                let value = if targets.contains(m.initial()) {
                    1.0
                } else {
                    max_reach(m, &targets, |s, c| {
                        inside(s) && c.successors.iter().all(|&(t, _)| !targets.contains(t) || inside(t))
                    })
                };
                if value >= req.lambda + EPS - 1e-9 {
                    return k;
                }
            }
        }
        unreachable!("the full state set suffices for violated requirements")
    }

    #[test]
    fn search_matches_brute_force_explanations() {
        let cfg = RandomMdpConfig::default();
        for seed in 0..150 {
            let (m, req) = random_instance(seed, &cfg);
            let cands = enumerate_candidates(&m, 1);
            let terminal = m.action_by_name("stop");
            let enc = EncodingOptions { epsilon: EPS, terminal_action: terminal };
            let Ok(p) = build_explanation_milp(&m, &req, &cands, &enc) else { continue };
            let bound = ReachabilityBound::for_explanation(&m, &req, &p, &cands, EPS, terminal).unwrap();
            let (lo, hi) = bounds(&p);
            let search = bound.minimum_units(&lo, &hi, &SolverConfig::default());
            let oracle = brute_force_min_explanation(&m, &req, &cands, EPS, terminal).unwrap();
            match oracle {
                None => assert_eq!(search.status, SolveStatus::Infeasible, "seed {seed}"),
                Some((k, _)) => {
                    assert_eq!(search.status, SolveStatus::Optimal, "seed {seed}");
                    assert_eq!(search.units.as_ref().map(Vec::len), Some(k), "seed {seed}");
                    assert_eq!(search.lower_bound, k as f64, "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn search_matches_brute_force_state_counts() {
        let cfg = RandomMdpConfig::default();
        for seed in 0..150 {
            let (m, req) = random_instance(seed, &cfg);
            let enc = EncodingOptions { epsilon: EPS, terminal_action: None };
            let Ok(p) = build_minimal_state_milp(&m, &req, &enc) else { continue };
            let bound = ReachabilityBound::for_minimal_states(&m, &req, &p, EPS).unwrap();
            let (lo, hi) = bounds(&p);
            let search = bound.minimum_units(&lo, &hi, &SolverConfig::default());
            assert_eq!(search.status, SolveStatus::Optimal, "seed {seed}");
            assert_eq!(search.units.unwrap().len(), brute_force_min_states(&m, &req), "seed {seed}");
        }
    }

    #[test]
    fn pinned_models_are_feasible_with_the_search_optimum() {
        let cfg = RandomMdpConfig::default();
        for seed in 0..60 {
            let (m, req) = random_instance(seed, &cfg);
            let cands = enumerate_candidates(&m, 1);
            let terminal = m.action_by_name("stop");
            let enc = EncodingOptions { epsilon: EPS, terminal_action: terminal };
            let Ok(p) = build_explanation_milp(&m, &req, &cands, &enc) else { continue };
            let bound = ReachabilityBound::for_explanation(&m, &req, &p, &cands, EPS, terminal).unwrap();
            let (lo, hi) = bounds(&p);
            let Some(units) = bound.minimum_units(&lo, &hi, &SolverConfig::default()).units else { continue };
            let strategy = bound.strategy(&units, &hi);
            let sol = solve(&bound.pin(&p, &units, Some(&strategy)), &SolverConfig::default());
            assert!(sol.is_optimal(), "seed {seed}");
            assert_eq!(sol.objective, Some(units.len() as f64), "seed {seed}");
        }
    }

    #[test]
    fn hook_never_exceeds_the_optimum_of_a_node() {
        let cfg = RandomMdpConfig::default();
        for seed in 0..60 {
            let (m, req) = random_instance(seed, &cfg);
            let cands = enumerate_candidates(&m, 1);
            let terminal = m.action_by_name("stop");
            let enc = EncodingOptions { epsilon: EPS, terminal_action: terminal };
            let Ok(p) = build_explanation_milp(&m, &req, &cands, &enc) else { continue };
            let bound = ReachabilityBound::for_explanation(&m, &req, &p, &cands, EPS, terminal).unwrap();
            let sol = solve(&p, &SolverConfig::default());
            let (Some(values), Some(best)) = (sol.values, sol.objective) else { continue };
            let (lo, hi) = bounds(&p);
            assert!(bound.lower_bound(&lo, &hi, f64::INFINITY) <= best + 1e-9, "seed {seed}");
            assert!(bound.lower_bound(&lo, &hi, best) <= best + 1e-9, "seed {seed}");
            // The node fixing every unit to the optimal solution.
            let (mut nlo, mut nhi) = (lo.clone(), hi.clone());
            for &u in &bound.units {
                nlo[u] = values[u].round();
                nhi[u] = values[u].round();
            }
            assert!(bound.lower_bound(&nlo, &nhi, best) <= best + 1e-9, "seed {seed}");
        }
    }
}
