//! Control abstraction of a DTLHS over quantized cells and actions.
//!
//! MILP query kinds, as reported in the statistics:
//!
//! 1. cell admissibility: `N /\ X in cell` feasible;
//! 2. successor bounds: min and max of each `x'_i` under `N /\ X in cell /\ U = a`;
//! 3. self-loop (and, in exact mode, per-successor) feasibility: `... /\ X' in cell'`;
//! 4. equilibrium: `... /\ X' = X`; a self-loop without one is eliminable;
//! 5. region membership of a cell (goal / initial region precomputation).
//!
//! Successor bounds are taken over the closed cell box; queries 3 and 4 use the
//! half-open box (see [`QuantSchema::query_box`]). Whenever the solver runs out
//! of budget the answer falls on the sound side: cell admissible, successor
//! box = declared next-state range, self-loop present and kept.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::milp::{MilpError, MilpSolver, MilpStats, MilpStatus, Model, ModelSolution, Row, Sense};
use crate::models::{Dtlhs, Layout, ModelError};
use crate::predicate::{IndexedSystem, Predicate};
use crate::quantization::{all_actions, Cell, QuantAction, QuantSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Maximum,
    Minimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuccessorMode {
    /// Cells meeting the per-coordinate bounding box of the one-step image.
    Box,
    /// Bounding-box candidates filtered by one feasibility query each.
    Exact,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub mode: SuccessorMode,
    pub jobs: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { mode: SuccessorMode::Box, jobs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Successor cells other than the source, as linear indices, ascending.
    pub successors: Vec<u32>,
    pub unsafe_exit: bool,
    /// The source cell is its own successor (maximum abstraction).
    pub self_loop: bool,
    /// The self-loop has no equilibrium inside the cell.
    pub eliminable: bool,
    pub next_box: Vec<(f64, f64)>,
}

impl Transition {
    pub fn keeps_loop(&self, variant: Variant) -> bool {
        self.self_loop && (variant == Variant::Maximum || !self.eliminable)
    }

    /// Successor cells under `variant`, source included when its loop is kept.
    pub fn cells(&self, source: u32, variant: Variant) -> Vec<u32> {
        let mut out = self.successors.clone();
        if self.keeps_loop(variant) {
            let pos = out.binary_search(&source).unwrap_or_else(|p| p);
            out.insert(pos, source);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ControlAbstraction {
    pub schema: QuantSchema,
    pub actions: Vec<QuantAction>,
    pub admissible: Vec<bool>,
    /// `transitions[cell][action]`; `None` when the action has no dynamics
    /// point in the cell.
    pub transitions: Vec<Vec<Option<Transition>>>,
    pub variant: Variant,
    pub mode: SuccessorMode,
    /// Number of queries answered on the sound side after a solver failure.
    pub unresolved: u64,
}

impl ControlAbstraction {
    pub fn num_cells(&self) -> usize {
        self.admissible.len()
    }

    pub fn transition(&self, cell: usize, action: usize) -> Option<&Transition> {
        self.transitions[cell][action].as_ref()
    }

    /// Successor cells and unsafe flag of `(cell, action)` under the
    /// abstraction's variant.
    pub fn successors(&self, cell: usize, action: usize) -> Option<(Vec<u32>, bool)> {
        self.transition(cell, action).map(|t| (t.cells(cell as u32, self.variant), t.unsafe_exit))
    }

    pub fn with_variant(&self, variant: Variant) -> ControlAbstraction {
        ControlAbstraction { variant, ..self.clone() }
    }

    pub fn stats_for(&self, variant: Variant) -> (u64, u64, u64) {
        let mut arcs = 0u64;
        let mut loops = 0u64;
        let mut kept = 0u64;
        for row in &self.transitions {
            for t in row.iter().flatten() {
                arcs += t.successors.len() as u64 + u64::from(t.unsafe_exit) + u64::from(t.keeps_loop(variant));
                loops += u64::from(t.self_loop);
                kept += u64::from(t.keeps_loop(Variant::Minimum));
            }
        }
        (arcs, loops, kept)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AbstractionStats {
    pub arcs: u64,
    pub max_loops: u64,
    pub kept_loops: u64,
    pub loop_frac: f64,
    pub cpu_secs: f64,
    pub mem_bytes: u64,
    pub admissible_cells: u64,
    pub milp: MilpStats,
}

/// Peak resident set size of this process, when the platform exposes it.
pub fn peak_rss_bytes() -> u64 {
    std::fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("VmHWM:"))
                .and_then(|l| l.split_whitespace().nth(1))
                .and_then(|kb| kb.parse::<u64>().ok())
        })
        .map_or(0, |kb| kb * 1024)
}

/// MILP front end for one DTLHS; cheap to share across worker threads.
pub struct Abstractor<'a> {
    pub h: &'a Dtlhs,
    pub schema: &'a QuantSchema,
    pub solver: MilpSolver,
    sys: IndexedSystem,
    layout: Layout,
    actions: Vec<QuantAction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    /// Every point of the closed cell box satisfies the region.
    Inside,
    /// Some point of the cell box satisfies the region.
    Meets,
}

fn sound_side(r: Result<ModelSolution, MilpError>, unresolved: &mut u64) -> Option<ModelSolution> {
    match r {
        Ok(s) if s.status == MilpStatus::BudgetExhausted => {
            *unresolved += 1;
            None
        }
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("MILP failure treated as unknown: {e}");
            *unresolved += 1;
            None
        }
    }
}

impl<'a> Abstractor<'a> {
    pub fn new(h: &'a Dtlhs, schema: &'a QuantSchema, solver: MilpSolver) -> Result<Self, ModelError> {
        if schema.dims() != h.state.len() {
            return Err(ModelError::Param(format!(
                "schema has {} dimensions, model {} state variables",
                schema.dims(),
                h.state.len()
            )));
        }
        Ok(Abstractor {
            h,
            schema,
            solver,
            sys: h.indexed()?,
            layout: h.layout(),
            actions: all_actions(h.inputs.len()),
        })
    }

    pub fn actions(&self) -> &[QuantAction] {
        &self.actions
    }

    fn model(&self, cell_box: &[(f64, f64)], action: Option<&[bool]>) -> Model {
        let mut b = self.sys.declared_bounds();
        for (k, &j) in self.layout.state.iter().enumerate() {
            b[j] = (b[j].0.max(cell_box[k].0), b[j].1.min(cell_box[k].1));
        }
        if let Some(a) = action {
            for (k, &j) in self.layout.inputs.iter().enumerate() {
                let v = if a[k] { 1.0 } else { 0.0 };
                b[j] = (v, v);
            }
        }
        self.sys.to_model(&b)
    }

    fn closed_box(&self, c: &Cell) -> Vec<(f64, f64)> {
        c.0.iter().enumerate().map(|(i, &k)| {
            let iv = self.schema.interval(i, k);
            (iv.lower, iv.upper)
        }).collect()
    }

    fn next_declared(&self) -> Vec<(f64, f64)> {
        self.h.next.iter().map(|d| (d.lower, d.upper)).collect()
    }

    /// Kind 1.
    pub fn is_admissible(&self, c: &Cell, unresolved: &mut u64) -> bool {
        let m = self.model(&self.closed_box(c), None);
        match sound_side(self.solver.solve_model(&m, 1), unresolved) {
            Some(s) => s.status.has_solution(),
            None => true,
        }
    }

    /// Kind 2: per-coordinate bounds of the one-step image, or `None` when the
    /// action has no dynamics point in the cell.
    pub fn successor_box(&self, base: &Model, unresolved: &mut u64) -> Option<Vec<(f64, f64)>> {
        let declared = self.next_declared();
        let mut out = Vec::with_capacity(declared.len());
        for (k, &j) in self.layout.next.iter().enumerate() {
            let mut bounds = [declared[k].0, declared[k].1];
            for (slot, sense) in [(0, Sense::Minimize), (1, Sense::Maximize)] {
                let mut m = base.clone();
                m.set_objective(vec![(j, 1.0)], sense);
                match sound_side(self.solver.solve_model(&m, 2), unresolved).map(|s| (s.status, s.value)) {
                    Some((MilpStatus::Infeasible, _)) => return None,
                    Some((_, Some(v))) => bounds[slot] = v,
                    _ => {}
                }
            }
            out.push((bounds[0], bounds[1]));
        }
        Some(out)
    }

    fn with_query_boxes(&self, base: &Model, from: &Cell, to: Option<&Cell>) -> Model {
        let mut m = base.clone();
        let qb = self.schema.query_box(from);
        for (k, &j) in self.layout.state.iter().enumerate() {
            let v = m.vars[j];
            m.set_bounds(j, v.lower.max(qb[k].0), v.upper.min(qb[k].1));
        }
        if let Some(to) = to {
            let qb = self.schema.query_box(to);
            for (k, &j) in self.layout.next.iter().enumerate() {
                let v = m.vars[j];
                m.set_bounds(j, v.lower.max(qb[k].0), v.upper.min(qb[k].1));
            }
        }
        m
    }

    /// Kind 3: some point of `from` reaches `to` under the base model's action.
    pub fn reaches(&self, base: &Model, from: &Cell, to: &Cell, unresolved: &mut u64) -> bool {
        let m = self.with_query_boxes(base, from, Some(to));
        match sound_side(self.solver.solve_model(&m, 3), unresolved) {
            Some(s) => s.status.has_solution(),
            None => true,
        }
    }

    /// Kind 4: true iff no equilibrium `X' = X` lies in the cell.
    pub fn self_loop_eliminable(&self, base: &Model, c: &Cell, unresolved: &mut u64) -> bool {
        let mut m = self.with_query_boxes(base, c, None);
        for (&x, &xn) in self.layout.state.iter().zip(&self.layout.next) {
            m.push_row(Row::eq(vec![(xn, 1.0), (x, -1.0)], 0.0));
        }
        match sound_side(self.solver.solve_model(&m, 4), unresolved) {
            Some(s) => s.status == MilpStatus::Infeasible,
            None => false,
        }
    }

    pub fn analyze(&self, c: &Cell, action: &[bool], mode: SuccessorMode, unresolved: &mut u64) -> Option<Transition> {
        let base = self.model(&self.closed_box(c), Some(action));
        let next_box = self.successor_box(&base, unresolved)?;
        let (cells, unsafe_exit) = self.schema.cells_in_box(&next_box);
        let me = self.schema.linear_index(c) as u32;
        let mut successors = Vec::with_capacity(cells.len());
        let mut self_loop = false;
        for d in &cells {
            let idx = self.schema.linear_index(d) as u32;
            if idx == me {
                self_loop = self.reaches(&base, c, d, unresolved);
            } else if mode == SuccessorMode::Box || self.reaches(&base, c, d, unresolved) {
                successors.push(idx);
            }
        }
        let eliminable = self_loop && self.self_loop_eliminable(&base, c, unresolved);
        Some(Transition { successors, unsafe_exit, self_loop, eliminable, next_box })
    }

    /// Kind 5 over the state variables only.
    pub fn region_membership(&self, c: &Cell, region: &[Row], how: Membership, unresolved: &mut u64) -> bool {
        let bx = self.closed_box(c);
        let n = bx.len();
        let fresh = || Model::new(bx.iter().map(|&(lo, hi)| (lo, hi, false)).collect());
        match how {
            Membership::Meets => {
                let mut m = fresh();
                for r in region {
                    m.push_row(r.clone());
                }
                match sound_side(self.solver.solve_model(&m, 5), unresolved) {
                    Some(s) => s.status.has_solution(),
                    None => true,
                }
            }
            Membership::Inside => {
                for r in region {
                    for (sense, bound) in [(Sense::Maximize, r.upper), (Sense::Minimize, r.lower)] {
                        if !bound.is_finite() {
                            continue;
                        }
                        let mut m = fresh();
                        m.set_objective(r.terms.clone(), sense);
                        debug_assert!(r.terms.iter().all(|&(j, _)| j < n));
                        let tol = 1e-9 * (1.0 + bound.abs());
                        match sound_side(self.solver.solve_model(&m, 5), unresolved).map(|s| s.value) {
                            Some(Some(v)) => {
                                let ok = if sense == Sense::Maximize { v <= bound + tol } else { v >= bound - tol };
                                if !ok {
                                    return false;
                                }
                            }
                            _ => return false,
                        }
                    }
                }
                true
            }
        }
    }
}

/// Converts a predicate over the state variables into rows indexed by state
/// position.
pub fn state_rows(h: &Dtlhs, p: &Predicate) -> Result<Vec<Row>, ModelError> {
    let sys = IndexedSystem::new(p, &h.state)?;
    if !sys.guarded.is_empty() {
        return Err(ModelError::Param("region predicates must be conjunctive".into()));
    }
    Ok(sys.plain.iter().map(|r| Row::le(r.terms.clone(), r.rhs)).collect())
}

/// Marks every cell for which the region test holds.
pub fn region_cells(
    h: &Dtlhs,
    schema: &QuantSchema,
    solver: &MilpSolver,
    region: &Predicate,
    how: Membership,
) -> Result<Vec<bool>, ModelError> {
    let rows = state_rows(h, region)?;
    let ab = Abstractor::new(h, schema, solver.clone())?;
    let mut unresolved = 0;
    Ok(schema.enumerate_cells().map(|c| ab.region_membership(&c, &rows, how, &mut unresolved)).collect())
}

struct CellResult {
    admissible: bool,
    transitions: Vec<Option<Transition>>,
    unresolved: u64,
}

fn build_cell(ab: &Abstractor<'_>, c: &Cell, mode: SuccessorMode) -> CellResult {
    let mut unresolved = 0;
    if !ab.is_admissible(c, &mut unresolved) {
        return CellResult { admissible: false, transitions: vec![None; ab.actions.len()], unresolved };
    }
    let transitions = ab.actions.iter().map(|a| ab.analyze(c, a, mode, &mut unresolved)).collect();
    CellResult { admissible: true, transitions, unresolved }
}

/// Builds the abstraction over every (cell, action) pair. Work is split into
/// contiguous cell ranges across `opts.jobs` threads and reassembled in cell
/// order, so the result does not depend on the job count.
pub fn build(
    h: &Dtlhs,
    schema: &QuantSchema,
    variant: Variant,
    solver: &MilpSolver,
    opts: BuildOptions,
) -> Result<(ControlAbstraction, AbstractionStats), ModelError> {
    let start = Instant::now();
    let before = solver.stats_snapshot();
    let ab = Abstractor::new(h, schema, solver.clone())?;
    let total = schema.total_cells();
    let jobs = opts.jobs.max(1).min(total.max(1));
    let chunk = total.div_ceil(jobs);
    let mut results: Vec<CellResult> = Vec::with_capacity(total);
    if jobs == 1 {
        for c in schema.enumerate_cells() {
            results.push(build_cell(&ab, &c, opts.mode));
        }
    } else {
        let parts: Vec<Vec<CellResult>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..jobs)
                .map(|w| {
                    let ab = &ab;
                    s.spawn(move || {
                        let lo = w * chunk;
                        let hi = ((w + 1) * chunk).min(total);
                        (lo..hi).map(|i| build_cell(ab, &schema.from_linear(i), opts.mode)).collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("abstraction worker panicked")).collect()
        });
        results = parts.into_iter().flatten().collect();
    }

    let mut unresolved = 0;
    let mut admissible = Vec::with_capacity(total);
    let mut transitions = Vec::with_capacity(total);
    for r in results {
        unresolved += r.unresolved;
        admissible.push(r.admissible);
        transitions.push(r.transitions);
    }
    let abs = ControlAbstraction {
        schema: schema.clone(),
        actions: ab.actions.clone(),
        admissible,
        transitions,
        variant,
        mode: opts.mode,
        unresolved,
    };
    let (arcs, max_loops, kept_loops) = abs.stats_for(variant);
    let after = solver.stats_snapshot();
    let mut milp = after.clone();
    for (k, b) in milp.kinds.iter_mut().zip(&before.kinds) {
        k.count -= b.count;
        k.total_secs -= b.total_secs;
        k.avg_secs = if k.count > 0 { k.total_secs / k.count as f64 } else { 0.0 };
    }
    let stats = AbstractionStats {
        arcs,
        max_loops,
        kept_loops,
        loop_frac: if max_loops > 0 { kept_loops as f64 / max_loops as f64 } else { 0.0 },
        cpu_secs: start.elapsed().as_secs_f64(),
        mem_bytes: peak_rss_bytes(),
        admissible_cells: abs.admissible.iter().filter(|&&a| a).count() as u64,
        milp,
    };
    Ok((abs, stats))
}
