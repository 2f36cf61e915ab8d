//! Closed-loop concrete simulation.
//!
//! Auxiliary variables are resolved by enumerating the boolean (mode)
//! variables of the transition predicate: for each mode the active equalities
//! are solved as a linear system, and the mode is kept when every inequality
//! holds. Robust models are not simulated directly; the plant is the nominal
//! model instantiated with drawn load and supply values.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::DecisionTree;
use crate::models::{buck, BuckParams, Dtlhs, ModelError};
use crate::predicate::{evaluate_with_tol, IndexedSystem, Predicate, PredicateError, Valuation, VarKind};
use crate::quantization::{action_bits, Cell, QuantAction, QuantSchema};
use crate::synthesis::Controller;

/// Relative tolerance for mode inequalities and the per-step trace check.
pub const EPS_FEAS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no consistent switching mode at {0}")]
    NoMode(String),
    #[error("mode {mode} leaves {free} auxiliary variables undetermined")]
    Underdetermined { mode: usize, free: usize },
    #[error("resolved step violates the transition predicate at {0}")]
    Inconsistent(String),
    #[error("state has {got} components, model expects {want}")]
    Shape { got: usize, want: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Predicate(#[from] PredicateError),
}

/// One resolved transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    /// Index of the mode used; the first boolean auxiliary is the most
    /// significant bit.
    pub mode: usize,
    pub mode_bits: Vec<bool>,
    pub consistent_modes: usize,
    pub aux: Vec<f64>,
    pub next: Vec<f64>,
}

/// Mode-enumeration solver for one deterministic DTLHS.
#[derive(Debug, Clone)]
pub struct ModeSolver {
    h: Dtlhs,
    sys: IndexedSystem,
    nx: usize,
    nu: usize,
    bools: Vec<usize>,
    unknowns: Vec<usize>,
}

fn fmt_state(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", parts.join(", "))
}

impl ModeSolver {
    pub fn new(h: Dtlhs) -> Result<ModeSolver, SimError> {
        let sys = h.indexed()?;
        let nx = h.state.len();
        let nu = h.inputs.len();
        let ny = h.aux.len();
        let bools = (nx + nu..nx + nu + ny).filter(|&j| sys.decls[j].kind == VarKind::Boolean).collect();
        let unknowns = (nx + nu..sys.len()).filter(|&j| sys.decls[j].kind != VarKind::Boolean).collect();
        Ok(ModeSolver { h, sys, nx, nu, bools, unknowns })
    }

    pub fn model(&self) -> &Dtlhs {
        &self.h
    }

    pub fn num_modes(&self) -> usize {
        1 << self.bools.len()
    }

    /// Solves one mode; `None` when the mode is inconsistent.
    fn try_mode(&self, values: &mut [f64], mode: usize) -> Result<Option<()>, SimError> {
        let nb = self.bools.len();
        for (k, &j) in self.bools.iter().enumerate() {
            values[j] = f64::from(((mode >> (nb - 1 - k)) & 1) as u8);
        }
        let active: Vec<&crate::predicate::IndexedRow> = self
            .sys
            .plain
            .iter()
            .chain(
                self.sys
                    .guarded
                    .iter()
                    .filter(|g| values[g.guard] == g.polarity.active_value())
                    .map(|g| &g.body),
            )
            .collect();

        // Equalities appear as a row and its exact negation.
        let mut seen: BTreeMap<(Vec<(usize, u64)>, u64), (f64, bool, bool)> = BTreeMap::new();
        for r in &active {
            let Some(&(_, lead)) = r.terms.first() else { continue };
            let s = lead.abs();
            let sign = lead.signum();
            let key: Vec<(usize, u64)> = r.terms.iter().map(|&(j, a)| (j, (sign * a / s + 0.0).to_bits())).collect();
            let rhs = sign * r.rhs / s + 0.0;
            let e = seen.entry((key, rhs.to_bits())).or_insert((rhs, false, false));
            if sign > 0.0 {
                e.1 = true;
            } else {
                e.2 = true;
            }
        }
        let col: BTreeMap<usize, usize> = self.unknowns.iter().enumerate().map(|(k, &j)| (j, k)).collect();
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for ((key, _), (rhs, le, ge)) in &seen {
            if !(le & ge) {
                continue;
            }
            let mut b = *rhs;
            let mut terms = Vec::new();
            for &(j, bits) in key {
                let a = f64::from_bits(bits);
                match col.get(&j) {
                    Some(&k) => terms.push((k, a)),
                    None => b -= a * values[j],
                }
            }
            if !terms.is_empty() {
                rows.push((terms, b));
            }
        }
        let k = self.unknowns.len();
        let mut m = DMatrix::<f64>::zeros(rows.len(), k);
        let mut rhs = DVector::<f64>::zeros(rows.len());
        for (i, (terms, b)) in rows.iter().enumerate() {
            let scale = terms.iter().fold(0.0f64, |s, &(_, a)| s.max(a.abs()));
            for &(c, a) in terms {
                m[(i, c)] += a / scale;
            }
            rhs[i] = *b / scale;
        }
        let svd = m.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let cut = 1e-12 * smax.max(1.0);
        let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
        let mut y = svd.solve(&rhs, cut).map_err(|e| SimError::NoMode(e.to_string()))?;
        // one step of iterative refinement
        let dy = svd.solve(&(&rhs - &m * &y), cut).map_err(|e| SimError::NoMode(e.to_string()))?;
        y += dy;
        // Contradictory equalities (e.g. a shorted supply) rule the mode out.
        let resid = &m * &y - &rhs;
        for (i, r) in resid.iter().enumerate() {
            let mag: f64 = (0..k).map(|c| (m[(i, c)] * y[c]).abs()).sum();
            if r.abs() > EPS_FEAS * (1.0 + rhs[i].abs() + mag) {
                return Ok(None);
            }
        }
        if rank < k {
            return Err(SimError::Underdetermined { mode, free: k - rank });
        }
        for (c, &j) in self.unknowns.iter().enumerate() {
            values[j] = y[c];
        }
        for r in &active {
            let act: f64 = r.terms.iter().map(|&(j, a)| a * values[j]).sum();
            let scale: f64 = 1.0 + r.rhs.abs() + r.terms.iter().map(|&(j, a)| (a * values[j]).abs()).sum::<f64>();
            if act - r.rhs > EPS_FEAS * scale {
                return Ok(None);
            }
        }
        Ok(Some(()))
    }

    /// Resolves `(y, x')` for state `x` and action `u`.
    pub fn resolve(&self, x: &[f64], u: &[bool]) -> Result<Resolved, SimError> {
        if x.len() != self.nx || u.len() != self.nu {
            return Err(SimError::Shape { got: x.len() + u.len(), want: self.nx + self.nu });
        }
        let mut best: Option<Vec<f64>> = None;
        let mut mode = 0;
        let mut consistent = 0;
        for m in 0..self.num_modes() {
            let mut values = vec![0.0; self.sys.len()];
            values[..self.nx].copy_from_slice(x);
            for (k, &b) in u.iter().enumerate() {
                values[self.nx + k] = f64::from(u8::from(b));
            }
            if self.try_mode(&mut values, m)?.is_some() {
                consistent += 1;
                if best.is_none() {
                    best = Some(values);
                    mode = m;
                }
            }
        }
        let Some(values) = best else {
            return Err(SimError::NoMode(fmt_state(x)));
        };
        if consistent > 1 {
            log::warn!("{consistent} consistent modes at {}, using mode {mode}", fmt_state(x));
        }
        let ny = self.h.aux.len();
        let base = self.nx + self.nu;
        let nb = self.bools.len();
        let res = Resolved {
            mode,
            mode_bits: (0..nb).map(|k| (mode >> (nb - 1 - k)) & 1 == 1).collect(),
            consistent_modes: consistent,
            aux: values[base..base + ny].to_vec(),
            next: values[base + ny..].to_vec(),
        };
        let v = self.valuation(x, u, &res);
        if !evaluate_with_tol(&self.h.transition, &v, 1e-6)? {
            return Err(SimError::Inconsistent(fmt_state(x)));
        }
        Ok(res)
    }

    pub fn valuation(&self, x: &[f64], u: &[bool], r: &Resolved) -> Valuation {
        let mut v = Valuation::new();
        for (d, &val) in self.h.state.iter().zip(x) {
            v.set(d.name.clone(), val);
        }
        for (d, &b) in self.h.inputs.iter().zip(u) {
            v.set(d.name.clone(), f64::from(u8::from(b)));
        }
        for (d, &val) in self.h.aux.iter().zip(&r.aux) {
            v.set(d.name.clone(), val);
        }
        for (d, &val) in self.h.next.iter().zip(&r.next) {
            v.set(d.name.clone(), val);
        }
        v
    }
}

/// Parameter values in force during one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Draw {
    pub r: f64,
    pub supplies: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Disturbance {
    Nominal,
    PerTrial,
    PerStep,
}

/// The concrete system being simulated.
#[derive(Debug, Clone)]
pub enum Plant {
    /// Buck converter with `inputs` switches (`None` = single-input model).
    Buck { params: BuckParams, inputs: Option<usize> },
    /// Any deterministic DTLHS, without disturbances.
    Fixed(Dtlhs),
}

impl Plant {
    /// Plant for a built-in model name; robust variants map to the nominal
    /// form, whose parameters get drawn.
    pub fn for_builtin(name: &str, params: &BuckParams) -> Result<Plant, ModelError> {
        let (base, n) = match name.split_once(':') {
            Some((b, n)) => (b, Some(n.parse::<usize>().map_err(|_| ModelError::Param(format!("bad input count in {name:?}")))?)),
            None => (name, None),
        };
        match (base, n) {
            ("buck" | "buck-robust", None) => Ok(Plant::Buck { params: params.clone(), inputs: None }),
            ("multibuck" | "multibuck-robust", Some(n)) => Ok(Plant::Buck { params: params.clone(), inputs: Some(n) }),
            _ => Ok(Plant::Fixed(crate::models::builtin(name, params)?)),
        }
    }

    pub fn nominal_draw(&self) -> Result<Draw, ModelError> {
        match self {
            Plant::Buck { params, inputs: None } => Ok(Draw { r: params.r, supplies: vec![params.vin] }),
            Plant::Buck { params, inputs: Some(n) } => Ok(Draw { r: params.r, supplies: params.supplies(*n)? }),
            Plant::Fixed(_) => Ok(Draw { r: f64::NAN, supplies: Vec::new() }),
        }
    }

    /// Uniform draw over `[R(1-rho_R), R(1+rho_R)]` and `[V(1-rho_V), V(1+rho_V)]`
    /// for every supply.
    pub fn random_draw(&self, rng: &mut ChaCha8Rng) -> Result<Draw, ModelError> {
        let nominal = self.nominal_draw()?;
        match self {
            Plant::Buck { params, .. } => {
                let (lo, hi) = params.load_range();
                let r = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                let rho = params.rho_v;
                let supplies = nominal
                    .supplies
                    .iter()
                    .map(|&v| if rho > 0.0 { rng.gen_range(v * (1.0 - rho)..=v * (1.0 + rho)) } else { v })
                    .collect();
                Ok(Draw { r, supplies })
            }
            Plant::Fixed(_) => Ok(nominal),
        }
    }

    /// Deterministic model with the given parameter values.
    pub fn instantiate(&self, d: &Draw) -> Result<ModeSolver, SimError> {
        let h = match self {
            Plant::Buck { params, inputs: None } => {
                buck::single_buck(&BuckParams { r: d.r, vin: d.supplies[0], ..params.clone() })?
            }
            Plant::Buck { params, inputs: Some(n) } => {
                buck::multi_buck(&BuckParams { r: d.r, supplies: Some(d.supplies.clone()), ..params.clone() }, *n)?
            }
            Plant::Fixed(h) => h.clone(),
        };
        ModeSolver::new(h)
    }
}

/// Anything that can play the controller in the loop.
pub trait ControlLaw {
    fn controllable(&self, cell: &Cell) -> bool;
    fn action(&self, cell: &Cell) -> Option<QuantAction>;
}

/// Table lookup in a synthesized controller.
pub struct TableLaw<'a> {
    pub k: &'a Controller,
    pub schema: &'a QuantSchema,
}

impl ControlLaw for TableLaw<'_> {
    fn controllable(&self, cell: &Cell) -> bool {
        self.k.is_controllable(self.schema.linear_index(cell))
    }

    fn action(&self, cell: &Cell) -> Option<QuantAction> {
        self.k.chosen(self.schema.linear_index(cell)).map(|a| self.k.actions[a].clone())
    }
}

/// Generated decision trees, as the embedded code would run them.
pub struct TreeLaw<'a> {
    pub law: &'a DecisionTree,
    pub region: &'a DecisionTree,
}

impl ControlLaw for TreeLaw<'_> {
    fn controllable(&self, cell: &Cell) -> bool {
        self.region.interpret(cell).is_some()
    }

    fn action(&self, cell: &Cell) -> Option<QuantAction> {
        self.law.interpret(cell).cloned()
    }
}

/// Baseline: switch on while the output is below a reference.
pub struct Threshold {
    pub state_index: usize,
    pub reference: f64,
    pub schema: QuantSchema,
    pub inputs: usize,
}

impl ControlLaw for Threshold {
    fn controllable(&self, _cell: &Cell) -> bool {
        true
    }

    fn action(&self, cell: &Cell) -> Option<QuantAction> {
        let mid = self.schema.interval(self.state_index, cell.0[self.state_index]).midpoint();
        Some(vec![mid < self.reference; self.inputs])
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub steps: usize,
    pub initial: Vec<f64>,
    pub disturbance: Disturbance,
    pub seed: u64,
    /// Stream id, so trials of one Monte-Carlo run draw independent values.
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub state: Vec<f64>,
    pub cell: Option<String>,
    pub action: Option<String>,
    pub mode_bits: Option<String>,
    pub r: f64,
    pub v: Vec<f64>,
    pub in_goal: bool,
    pub fault: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimTrace {
    pub rows: Vec<TraceRow>,
    pub fault: bool,
    pub safety_violation: bool,
    /// First step at which the state satisfies the goal predicate.
    pub goal_step: Option<usize>,
    /// Steps at which the state satisfies the goal predicate.
    pub goal_steps: usize,
}

fn in_region(p: &Predicate, names: &[&str], x: &[f64]) -> Result<bool, SimError> {
    let v: Valuation = names.iter().zip(x).map(|(n, &val)| (n.to_string(), val)).collect();
    Ok(evaluate_with_tol(p, &v, 0.0)?)
}

/// Closed loop: quantize, check the region, pick the action, apply it.
pub fn run(plant: &Plant, law: &dyn ControlLaw, schema: &QuantSchema, goal: &Predicate, cfg: &SimConfig) -> Result<SimTrace, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream);
    let mut draw = match cfg.disturbance {
        Disturbance::Nominal => plant.nominal_draw()?,
        _ => plant.random_draw(&mut rng)?,
    };
    let mut solver = plant.instantiate(&draw)?;
    let names: Vec<String> = solver.model().state.iter().map(|d| d.name.clone()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    if cfg.initial.len() != names.len() {
        return Err(SimError::Shape { got: cfg.initial.len(), want: names.len() });
    }
    let mut trace = SimTrace::default();
    let mut x = cfg.initial.clone();
    for step in 0..=cfg.steps {
        if step > 0 && cfg.disturbance == Disturbance::PerStep {
            draw = plant.random_draw(&mut rng)?;
            solver = plant.instantiate(&draw)?;
        }
        let in_goal = in_region(goal, &names, &x)?;
        if in_goal {
            trace.goal_steps += 1;
            trace.goal_step.get_or_insert(step);
        }
        let mut row = TraceRow {
            step,
            state: x.clone(),
            cell: None,
            action: None,
            mode_bits: None,
            r: draw.r,
            v: draw.supplies.clone(),
            in_goal,
            fault: false,
        };
        let cell = match schema.quantize(&x) {
            Ok(c) => c,
            Err(_) => {
                trace.safety_violation = true;
                trace.rows.push(row);
                break;
            }
        };
        row.cell = Some(cell.to_string());
        if step == cfg.steps {
            trace.rows.push(row);
            break;
        }
        let action = if law.controllable(&cell) { law.action(&cell) } else { None };
        let Some(action) = action else {
            row.fault = true;
            trace.fault = true;
            trace.rows.push(row);
            break;
        };
        let res = solver.resolve(&x, &action)?;
        row.action = Some(action_bits(&action));
        row.mode_bits = Some(action_bits(&res.mode_bits));
        trace.rows.push(row);
        x = res.next;
    }
    Ok(trace)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub safety_violations: usize,
    pub faults: usize,
    pub reached_goal: usize,
    pub goal_reach_rate: f64,
    pub max_steps_to_goal: Option<usize>,
    /// Trials whose goal step exceeded the supplied bound.
    pub late: usize,
}

/// Uniform point in the half-open box of a uniformly drawn cell of `cells`
/// (linear indices).
pub fn sample_in_cells(cells: &[usize], schema: &QuantSchema, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    if cells.is_empty() {
        return None;
    }
    let c = schema.from_linear(cells[rng.gen_range(0..cells.len())]);
    let bx = schema.query_box(&c);
    Some(bx.iter().map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..hi) } else { lo }).collect())
}

/// Linear indices of the controllable cells of `k`.
pub fn controllable_cells(k: &Controller) -> Vec<usize> {
    k.enabled.keys().map(|&c| c as usize).collect()
}

pub struct MonteCarloConfig {
    pub trials: usize,
    pub steps: usize,
    pub disturbance: Disturbance,
    pub seed: u64,
    pub jobs: usize,
    /// Goal must be reached within this many steps.
    pub goal_bound: Option<usize>,
}

/// Independent closed-loop trials from random points of `start_cells`. Trial
/// `i` uses its own random streams, so results do not depend on the job count.
pub fn monte_carlo(
    plant: &Plant,
    law: &(dyn ControlLaw + Sync),
    start_cells: &[usize],
    schema: &QuantSchema,
    goal: &Predicate,
    cfg: &MonteCarloConfig,
) -> Result<(MonteCarloSummary, Vec<SimTrace>), SimError> {
    let trial = |i: usize| -> Result<Option<SimTrace>, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2 * i as u64);
        let Some(x0) = sample_in_cells(start_cells, schema, &mut rng) else { return Ok(None) };
        let sc = SimConfig { steps: cfg.steps, initial: x0, disturbance: cfg.disturbance, seed: cfg.seed, stream: 2 * i as u64 + 1 };
        run(plant, law, schema, goal, &sc).map(Some)
    };
    let jobs = cfg.jobs.max(1).min(cfg.trials.max(1));
    let results: Vec<Result<Option<SimTrace>, SimError>> = if jobs == 1 {
        (0..cfg.trials).map(trial).collect()
    } else {
        let chunk = cfg.trials.div_ceil(jobs);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..jobs)
                .map(|w| {
                    let trial = &trial;
                    s.spawn(move || (w * chunk..((w + 1) * chunk).min(cfg.trials)).map(trial).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("trial worker panicked")).collect()
        })
    };
    let mut traces = Vec::with_capacity(cfg.trials);
    for r in results {
        if let Some(t) = r? {
            traces.push(t);
        }
    }
    let mut s = MonteCarloSummary { trials: traces.len(), ..Default::default() };
    for t in &traces {
        s.safety_violations += usize::from(t.safety_violation);
        s.faults += usize::from(t.fault);
        if let Some(g) = t.goal_step {
            s.reached_goal += 1;
            s.max_steps_to_goal = Some(s.max_steps_to_goal.map_or(g, |m| m.max(g)));
        }
        let late = match (cfg.goal_bound, t.goal_step) {
            (Some(b), Some(g)) => g > b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        s.late += usize::from(late);
    }
    s.goal_reach_rate = if s.trials > 0 { s.reached_goal as f64 / s.trials as f64 } else { 0.0 };
    Ok((s, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{build, BuildOptions, SuccessorMode, Variant};
    use crate::milp::MilpSolver;
    use crate::models::{buck::coefficients, toy};
    use crate::synthesis::{synthesize, RegionCells, RegionSpec};

    #[test]
    fn buck_origin_switch_on() {
        let p = BuckParams::default();
        let s = Plant::Buck { params: p.clone(), inputs: None }.instantiate(&Draw { r: 5.0, supplies: vec![15.0] }).unwrap();
        let r = s.resolve(&[0.0, 0.0], &[true]).unwrap();
        assert_eq!(r.mode_bits, vec![false]);
        assert_eq!(r.consistent_modes, 1);
        // independent solve: switch closed, diode off -> v_D = -Vin
        let a = coefficients(&p, 5.0).unwrap();
        assert!((r.next[0] - p.t * a.a13 * -15.0).abs() < 1e-9);
        assert!((r.next[0] - 0.075).abs() < 1e-9);
        assert!((r.next[1] - 7.353e-3).abs() < 1e-6);
    }

    #[test]
    fn buck_freewheel_and_off() {
        let p = BuckParams::default();
        let s = Plant::Buck { params: p, inputs: None }.instantiate(&Draw { r: 5.0, supplies: vec![15.0] }).unwrap();
        // positive current with the switch open flows through the diode
        let r = s.resolve(&[1.0, 5.0], &[false]).unwrap();
        assert_eq!(r.mode_bits, vec![true]);
        assert!(r.next[0] < 1.0);
        // zero current, switch open: only leakage flows and the state decays
        let r = s.resolve(&[0.0, 1.0], &[false]).unwrap();
        assert!(r.aux.iter().take(4).all(|v| v.abs() < 20.0));
        assert!(r.next[1] < 1.0);
    }

    #[test]
    fn multi_buck_modes() {
        let p = BuckParams::default();
        let plant = Plant::Buck { params: p, inputs: Some(2) };
        let s = plant.instantiate(&plant.nominal_draw().unwrap()).unwrap();
        assert_eq!(s.num_modes(), 4);
        for u in [[false, false], [true, false], [false, true], [true, true]] {
            let r = s.resolve(&[0.5, 3.0], &u).unwrap();
            assert!(r.consistent_modes >= 1);
        }
    }

    fn toy_controller() -> (Dtlhs, QuantSchema, Controller, Predicate) {
        let h = toy::shift();
        let s = QuantSchema::uniform(h.safety_box(), 2).unwrap();
        let solver = MilpSolver::default();
        let abs = build(&h, &s, Variant::Minimum, &solver, BuildOptions { mode: SuccessorMode::Exact, jobs: 1 }).unwrap().0;
        let mut goal = Predicate::new();
        goal.within("x", 2.0, 3.0);
        let spec = RegionSpec { goal: goal.clone(), initial: None };
        let regions = RegionCells::resolve(&h, &abs, &spec, &solver).unwrap();
        (h, s, synthesize(&abs, &regions), goal)
    }

    #[test]
    fn toy_closed_loop() {
        let (h, s, k, goal) = toy_controller();
        let plant = Plant::Fixed(h);
        let law = TableLaw { k: &k, schema: &s };
        for x0 in [0.0, 0.5, 0.99, 1.7, 3.2, 4.0] {
            let cfg = SimConfig { steps: 20, initial: vec![x0], disturbance: Disturbance::Nominal, seed: 1, stream: 0 };
            let t = run(&plant, &law, &s, &goal, &cfg).unwrap();
            assert!(!t.safety_violation && !t.fault, "{x0}");
            assert!(t.goal_step.unwrap() <= 2, "{x0}: {:?}", t.goal_step);
        }
    }

    #[test]
    fn fault_outside_region() {
        let (h, s, mut k, goal) = toy_controller();
        k.enabled.remove(&0);
        k.rank[0] = None;
        let law = TableLaw { k: &k, schema: &s };
        let cfg = SimConfig { steps: 5, initial: vec![0.2], disturbance: Disturbance::Nominal, seed: 1, stream: 0 };
        let t = run(&Plant::Fixed(h), &law, &s, &goal, &cfg).unwrap();
        assert!(t.fault);
        assert_eq!(t.rows.len(), 1);
    }

    #[test]
    fn zero_tolerance_draws_are_nominal() {
        let p = BuckParams { rho_r: 0.0, rho_v: 0.0, ..BuckParams::default() };
        let plant = Plant::Buck { params: p, inputs: None };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(plant.random_draw(&mut rng).unwrap(), plant.nominal_draw().unwrap());
        let s = QuantSchema::uniform(vec![(-4.0, 4.0), (-1.0, 7.0)], 3).unwrap();
        let law = Threshold { state_index: 1, reference: 5.0, schema: s.clone(), inputs: 1 };
        let goal = crate::synthesis::RegionSpec::voltage_goal(5.0, 0.5).goal;
        let mk = |d| SimConfig { steps: 50, initial: vec![0.0, 0.0], disturbance: d, seed: 9, stream: 0 };
        let a = run(&plant, &law, &s, &goal, &mk(Disturbance::Nominal)).unwrap();
        let b = run(&plant, &law, &s, &goal, &mk(Disturbance::PerStep)).unwrap();
        assert_eq!(a.rows.iter().map(|r| r.state.clone()).collect::<Vec<_>>(), b.rows.iter().map(|r| r.state.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn seeded_runs_repeat() {
        let plant = Plant::Buck { params: BuckParams::default(), inputs: None };
        let s = QuantSchema::uniform(vec![(-4.0, 4.0), (-1.0, 7.0)], 3).unwrap();
        let law = Threshold { state_index: 1, reference: 5.0, schema: s.clone(), inputs: 1 };
        let goal = crate::synthesis::RegionSpec::voltage_goal(5.0, 0.5).goal;
        let cfg = SimConfig { steps: 30, initial: vec![0.5, 2.0], disturbance: Disturbance::PerStep, seed: 4, stream: 2 };
        assert_eq!(run(&plant, &law, &s, &goal, &cfg).unwrap(), run(&plant, &law, &s, &goal, &cfg).unwrap());
    }
}
