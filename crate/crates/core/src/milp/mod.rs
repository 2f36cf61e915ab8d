//! Bounded MILP oracle: best-bound branch-and-bound over a dense bounded
//! simplex, with activity-based bound propagation at every node.

mod lp;
mod lp_format;
mod model;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::predicate::{LinearExpression, Predicate, Valuation, VariableDecl};

pub use lp_format::write_lp;
pub use model::{Model, Objective, Row, Sense, Var};
pub(crate) use model::propagate;

use lp::{DenseLp, LpStatus, LpTolerances};

pub const NUM_KINDS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error("simplex pivot cap reached without convergence (numerical cycling)")]
    Cycling,
    #[error("variable {0} is not declared")]
    Undeclared(String),
    #[error("problem still has guarded constraints; normalize first")]
    Guarded,
    #[error("query kind {0} outside 1..=5")]
    BadKind(u8),
    #[error("variable {name} has invalid bounds [{lower}, {upper}]")]
    BadBounds { name: String, lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MilpStatus {
    Optimal,
    Feasible,
    Infeasible,
    /// Node budget ran out before the search closed.
    BudgetExhausted,
}

impl MilpStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, MilpStatus::Optimal | MilpStatus::Feasible)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub int_tol: f64,
    pub feas_tol: f64,
    pub opt_rel_tol: f64,
    pub node_budget: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { int_tol: 1e-6, feas_tol: 1e-7, opt_rel_tol: 1e-6, node_budget: 1_000_000 }
    }
}

/// Index-level result of [`MilpSolver::solve_model`].
#[derive(Debug, Clone)]
pub struct ModelSolution {
    pub status: MilpStatus,
    pub value: Option<f64>,
    pub x: Option<Vec<f64>>,
    pub nodes: u64,
}

#[derive(Debug, Clone)]
pub struct MilpProblem {
    pub decls: Vec<VariableDecl>,
    pub constraints: Predicate,
    pub objective: Option<(LinearExpression, Sense)>,
    pub query_kind: u8,
}

#[derive(Debug, Clone)]
pub struct MilpResult {
    pub status: MilpStatus,
    pub value: Option<f64>,
    pub witness: Option<Valuation>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct KindStats {
    pub count: u64,
    pub total_secs: f64,
    pub avg_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MilpStats {
    /// Index 0 is query kind 1.
    pub kinds: [KindStats; NUM_KINDS],
}

impl MilpStats {
    pub fn kind(&self, kind: u8) -> KindStats {
        self.kinds[(kind - 1) as usize]
    }

    pub fn total_count(&self) -> u64 {
        self.kinds.iter().map(|k| k.count).sum()
    }
}

#[derive(Debug, Default)]
struct StatsAccumulator {
    counts: [AtomicU64; NUM_KINDS],
    nanos: [AtomicU64; NUM_KINDS],
}

impl StatsAccumulator {
    fn record(&self, kind: u8, nanos: u64) {
        let i = (kind - 1) as usize;
        self.counts[i].fetch_add(1, AtomicOrdering::Relaxed);
        self.nanos[i].fetch_add(nanos, AtomicOrdering::Relaxed);
    }
}

/// MILP solver; clones share one statistics accumulator.
#[derive(Debug, Clone, Default)]
pub struct MilpSolver {
    pub options: SolverOptions,
    stats: Arc<StatsAccumulator>,
}

#[derive(Debug)]
struct Node {
    bound: f64,
    depth: u32,
    seq: u64,
    lo: Vec<f64>,
    hi: Vec<f64>,
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
    // Max-heap: smallest bound first, then deepest, then most recent.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(self.seq.cmp(&other.seq))
    }
}

impl MilpSolver {
    pub fn new(options: SolverOptions) -> Self {
        MilpSolver { options, stats: Arc::default() }
    }

    pub fn stats_snapshot(&self) -> MilpStats {
        let mut out = MilpStats::default();
        for i in 0..NUM_KINDS {
            let count = self.stats.counts[i].load(AtomicOrdering::Relaxed);
            let total_secs = self.stats.nanos[i].load(AtomicOrdering::Relaxed) as f64 * 1e-9;
            let avg_secs = if count > 0 { total_secs / count as f64 } else { 0.0 };
            out.kinds[i] = KindStats { count, total_secs, avg_secs };
        }
        out
    }

    pub fn reset_stats(&self) {
        for i in 0..NUM_KINDS {
            self.stats.counts[i].store(0, AtomicOrdering::Relaxed);
            self.stats.nanos[i].store(0, AtomicOrdering::Relaxed);
        }
    }

    /// Name-level entry point.
    pub fn solve(&self, prob: &MilpProblem) -> Result<MilpResult, MilpError> {
        if !prob.constraints.guarded.is_empty() {
            return Err(MilpError::Guarded);
        }
        let index: BTreeMap<&str, usize> =
            prob.decls.iter().enumerate().map(|(i, d)| (d.name.as_str(), i)).collect();
        let lookup = |e: &LinearExpression| -> Result<Vec<(usize, f64)>, MilpError> {
            e.terms()
                .map(|(n, a)| index.get(n).map(|&i| (i, a)).ok_or_else(|| MilpError::Undeclared(n.to_string())))
                .collect()
        };
        let mut model = Model::new(prob.decls.iter().map(|d| (d.lower, d.upper, d.kind.is_integral())).collect());
        for d in &prob.decls {
            if !(d.lower <= d.upper) || !d.lower.is_finite() || !d.upper.is_finite() {
                return Err(MilpError::BadBounds { name: d.name.clone(), lower: d.lower, upper: d.upper });
            }
        }
        for c in &prob.constraints.plain {
            model.push_row(Row::le(lookup(&c.lhs)?, c.rhs - c.lhs.constant_term()));
        }
        let mut offset = 0.0;
        if let Some((expr, sense)) = &prob.objective {
            model.set_objective(lookup(expr)?, *sense);
            offset = expr.constant_term();
        }
        let sol = self.solve_model(&model, prob.query_kind)?;
        let witness = sol.x.as_ref().map(|x| prob.decls.iter().zip(x).map(|(d, &v)| (d.name.clone(), v)).collect());
        Ok(MilpResult { status: sol.status, value: sol.value.map(|v| v + offset), witness })
    }

    /// Objective-free solve.
    pub fn feasible(&self, prob: &MilpProblem) -> Result<MilpResult, MilpError> {
        let mut p = prob.clone();
        p.objective = None;
        self.solve(&p)
    }

    /// Index-level entry point used on hot paths; records timing under `kind`.
    pub fn solve_model(&self, model: &Model, kind: u8) -> Result<ModelSolution, MilpError> {
        if !(1..=NUM_KINDS as u8).contains(&kind) {
            return Err(MilpError::BadKind(kind));
        }
        let start = Instant::now();
        let out = self.branch_and_bound(model);
        self.stats.record(kind, start.elapsed().as_nanos() as u64);
        out
    }

    fn branch_and_bound(&self, model: &Model) -> Result<ModelSolution, MilpError> {
        let opts = self.options;
        let n = model.num_vars();
        let infeasible = |nodes| Ok(ModelSolution { status: MilpStatus::Infeasible, value: None, x: None, nodes });
        let integral: Vec<bool> = model.vars.iter().map(|v| v.integral).collect();
        let mut lo: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
        let mut hi: Vec<f64> = model.vars.iter().map(|v| v.upper).collect();

        let Some(rows) = model::merge_rows(&model.rows, 1e-9) else {
            return infeasible(0);
        };
        if !model::propagate(&rows, &integral, &mut lo, &mut hi, 1e-9) {
            return infeasible(0);
        }

        let lp_rows: Vec<(Vec<(usize, f64)>, f64, f64)> =
            rows.iter().map(|r| (r.terms.clone(), r.lower, r.upper)).collect();
        let lp = DenseLp::new(n, &lp_rows);
        let tol = LpTolerances { feas: opts.feas_tol, ..LpTolerances::default() };

        // Internally always minimize.
        let mut cost = vec![0.0; n];
        let sign = match &model.objective {
            Some(o) => {
                let s = if o.sense == Sense::Maximize { -1.0 } else { 1.0 };
                for &(j, a) in &o.terms {
                    cost[j] += s * a;
                }
                s
            }
            None => 1.0,
        };
        let has_objective = model.objective.is_some();

        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        heap.push(Node { bound: f64::NEG_INFINITY, depth: 0, seq, lo, hi });
        let mut incumbent: Option<(Vec<f64>, f64)> = None;
        let mut nodes = 0u64;

        let gap = |inc: f64| opts.opt_rel_tol * 0.1 * inc.abs().max(1.0);

        while let Some(node) = heap.pop() {
            if let Some((_, inc)) = &incumbent {
                if node.bound >= inc - gap(*inc) {
                    continue;
                }
            }
            if nodes >= opts.node_budget {
                let (x, value) = match incumbent {
                    Some((x, v)) => (Some(x), Some(sign * v)),
                    None => (None, None),
                };
                return Ok(ModelSolution { status: MilpStatus::BudgetExhausted, value, x, nodes });
            }
            nodes += 1;

            let sol = lp.solve(&node.lo, &node.hi, &cost, tol);
            match sol.status {
                LpStatus::Infeasible => continue,
                LpStatus::IterationLimit => return Err(MilpError::Cycling),
                LpStatus::Optimal => {}
            }
            if let Some((_, inc)) = &incumbent {
                if sol.objective >= inc - gap(*inc) {
                    continue;
                }
            }

            let mut branch: Option<(usize, f64)> = None;
            let mut best_frac = 0.0;
            for j in 0..n {
                if !integral[j] {
                    continue;
                }
                let f = sol.x[j] - sol.x[j].floor();
                let dist = f.min(1.0 - f);
                if dist > opts.int_tol && dist > best_frac {
                    best_frac = dist;
                    branch = Some((j, sol.x[j]));
                }
            }

            match branch {
                None => {
                    // Polish: snap integers and re-solve the continuous part.
                    let mut plo = node.lo.clone();
                    let mut phi = node.hi.clone();
                    for j in 0..n {
                        if integral[j] {
                            let v = sol.x[j].round().clamp(plo[j], phi[j]);
                            plo[j] = v;
                            phi[j] = v;
                        }
                    }
                    let polished = lp.solve(&plo, &phi, &cost, tol);
                    if polished.status != LpStatus::Optimal {
                        log::debug!("integral LP point did not survive polishing; node dropped");
                        continue;
                    }
                    let mut x = polished.x;
                    for j in 0..n {
                        x[j] = x[j].clamp(plo[j], phi[j]);
                    }
                    let obj = cost.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
                    if !has_objective {
                        return Ok(ModelSolution { status: MilpStatus::Feasible, value: None, x: Some(x), nodes });
                    }
                    if incumbent.as_ref().map_or(true, |(_, inc)| obj < *inc) {
                        incumbent = Some((x, obj));
                    }
                }
                Some((j, v)) => {
                    for up in [true, false] {
                        let mut clo = node.lo.clone();
                        let mut chi = node.hi.clone();
                        if up {
                            clo[j] = v.ceil();
                        } else {
                            chi[j] = v.floor();
                        }
                        if model::propagate(&rows, &integral, &mut clo, &mut chi, 1e-9) {
                            seq += 1;
                            heap.push(Node { bound: sol.objective, depth: node.depth + 1, seq, lo: clo, hi: chi });
                        }
                    }
                }
            }
        }

        Ok(match incumbent {
            Some((x, v)) => ModelSolution { status: MilpStatus::Optimal, value: Some(sign * v), x: Some(x), nodes },
            None => ModelSolution { status: MilpStatus::Infeasible, value: None, x: None, nodes },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::{to_conjunctive, Polarity};

    fn lin(terms: &[(&str, f64)]) -> LinearExpression {
        terms.iter().fold(LinearExpression::new(), |e, &(n, a)| e.term(n, a))
    }

    #[test]
    fn maximize_bounded_real() {
        let mut c = Predicate::new();
        c.le(lin(&[("x", 1.0)]), 3.0);
        let prob = MilpProblem {
            decls: vec![VariableDecl::real("x", 0.0, 10.0).unwrap()],
            constraints: c,
            objective: Some((lin(&[("x", 1.0)]), Sense::Maximize)),
            query_kind: 1,
        };
        let r = MilpSolver::default().solve(&prob).unwrap();
        assert_eq!(r.status, MilpStatus::Optimal);
        assert!((r.value.unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn contradictory_is_infeasible() {
        let mut c = Predicate::new();
        c.le(lin(&[("x", 1.0)]), 0.0).ge(lin(&[("x", 1.0)]), 1.0);
        let prob = MilpProblem {
            decls: vec![VariableDecl::real("x", 0.0, 10.0).unwrap()],
            constraints: c,
            objective: None,
            query_kind: 1,
        };
        assert_eq!(MilpSolver::default().solve(&prob).unwrap().status, MilpStatus::Infeasible);
    }

    #[test]
    fn boolean_knapsack_matches_enumeration() {
        let mut c = Predicate::new();
        c.le(lin(&[("a", 1.0), ("b", 1.0)]), 1.0);
        let obj = lin(&[("a", 3.0), ("b", 2.0)]);
        let prob = MilpProblem {
            decls: vec![VariableDecl::boolean("a"), VariableDecl::boolean("b")],
            constraints: c.clone(),
            objective: Some((obj.clone(), Sense::Maximize)),
            query_kind: 2,
        };
        // enumerate the four points
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for a in [0.0, 1.0] {
            for b in [0.0, 1.0] {
                let v = Valuation::new().with("a", a).with("b", b);
                if crate::predicate::evaluate(&c, &v).unwrap() {
                    let val = obj.eval(&v).unwrap();
                    if val > best.0 {
                        best = (val, a, b);
                    }
                }
            }
        }
        let r = MilpSolver::default().solve(&prob).unwrap();
        assert_eq!(r.status, MilpStatus::Optimal);
        assert!((r.value.unwrap() - best.0).abs() < 1e-9);
        let w = r.witness.unwrap();
        assert_eq!((w.get("a").unwrap(), w.get("b").unwrap()), (best.1, best.2));
    }

    #[test]
    fn guarded_fixed_guard_infeasible() {
        let mut g = Predicate::new();
        g.guard_le("y", Polarity::Positive, lin(&[("x", 1.0)]), 5.0);
        g.ge(lin(&[("y", 1.0)]), 1.0);
        let decls = vec![VariableDecl::real("x", 6.0, 10.0).unwrap(), VariableDecl::boolean("y")];
        let conj = to_conjunctive(&g, &decls).unwrap();
        let prob = MilpProblem { decls, constraints: conj, objective: None, query_kind: 1 };
        assert_eq!(MilpSolver::default().feasible(&prob).unwrap().status, MilpStatus::Infeasible);
    }

    #[test]
    fn empty_and_point_boxes() {
        let solver = MilpSolver::default();
        let prob = MilpProblem {
            decls: vec![VariableDecl::real("x", -1.0, 1.0).unwrap()],
            constraints: Predicate::new(),
            objective: None,
            query_kind: 1,
        };
        assert_eq!(solver.feasible(&prob).unwrap().status, MilpStatus::Feasible);

        let mut c = Predicate::new();
        c.le(lin(&[("x", 1.0), ("z", 1.0)]), 5.0);
        let prob = MilpProblem {
            decls: vec![VariableDecl::real("x", 2.0, 2.0).unwrap(), VariableDecl::integer("z", 3.0, 3.0).unwrap()],
            constraints: c,
            objective: None,
            query_kind: 1,
        };
        let r = solver.feasible(&prob).unwrap();
        assert_eq!(r.status, MilpStatus::Feasible);
        let w = r.witness.unwrap();
        assert_eq!(w.get("x").unwrap(), 2.0);
        assert_eq!(w.get("z").unwrap(), 3.0);
    }

    #[test]
    fn stats_count_and_average() {
        let solver = MilpSolver::default();
        assert_eq!(solver.stats_snapshot().total_count(), 0);
        let prob = MilpProblem {
            decls: vec![VariableDecl::real("x", 0.0, 1.0).unwrap()],
            constraints: Predicate::new(),
            objective: None,
            query_kind: 1,
        };
        solver.solve(&prob).unwrap();
        solver.clone().solve(&prob).unwrap();
        let s = solver.stats_snapshot();
        assert_eq!(s.kind(1).count, 2);
        assert_eq!(s.kind(2).count, 0);
        assert!((s.kind(1).avg_secs - s.kind(1).total_secs / 2.0).abs() < 1e-15);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let solver = MilpSolver::new(SolverOptions { node_budget: 0, ..SolverOptions::default() });
        let prob = MilpProblem {
            decls: vec![VariableDecl::real("x", 0.0, 1.0).unwrap()],
            constraints: Predicate::new(),
            objective: None,
            query_kind: 3,
        };
        assert_eq!(solver.solve(&prob).unwrap().status, MilpStatus::BudgetExhausted);
    }
}
