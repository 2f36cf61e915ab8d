//! Most-permissive safety + reachability controller on a control abstraction.
//!
//! The fixpoint is nested: the outer loop shrinks a candidate set `Z`, the
//! inner one ranks cells backwards from the goal cells that can stay inside
//! `Z`. A goal cell only counts if it has an action whose successors all stay
//! in the controllable region, so the closed loop can be held near the goal
//! after reaching it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{region_cells, ControlAbstraction, Membership};
use crate::milp::MilpSolver;
use crate::models::{Dtlhs, ModelError};
use crate::predicate::Predicate;
use crate::quantization::{Cell, QuantAction};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("cell {0} is not controllable")]
    Uncontrollable(Cell),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Sol,
    NoSol,
    Unk,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Sol => "Sol",
            Outcome::NoSol => "NoSol",
            Outcome::Unk => "Unk",
        })
    }
}

pub const GOAL_TOO_FINE: &str = "goal finer than quantization";

#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub goal: Predicate,
    /// `None` stands for the whole safety rectangle.
    pub initial: Option<Predicate>,
}

impl RegionSpec {
    /// `|v_O - v_ref| <= eps`, everything else unconstrained.
    pub fn voltage_goal(v_ref: f64, eps: f64) -> RegionSpec {
        let mut goal = Predicate::new();
        goal.within("v_O", v_ref - eps, v_ref + eps);
        RegionSpec { goal, initial: None }
    }
}

/// Goal and initial cell sets resolved against a quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCells {
    pub goal: Vec<bool>,
    pub initial: Vec<bool>,
}

impl RegionCells {
    /// Goal cells lie entirely inside the goal predicate; initial cells meet
    /// the initial predicate. Both are restricted to admissible cells.
    pub fn resolve(
        h: &Dtlhs,
        abs: &ControlAbstraction,
        spec: &RegionSpec,
        solver: &MilpSolver,
    ) -> Result<RegionCells, ModelError> {
        let goal = region_cells(h, &abs.schema, solver, &spec.goal, Membership::Inside)?;
        let initial = match &spec.initial {
            Some(p) => region_cells(h, &abs.schema, solver, p, Membership::Meets)?,
            None => vec![true; abs.num_cells()],
        };
        let mask = |v: Vec<bool>| v.into_iter().zip(&abs.admissible).map(|(a, &b)| a && b).collect();
        Ok(RegionCells { goal: mask(goal), initial: mask(initial) })
    }
}

#[derive(Debug, Clone)]
pub struct Controller {
    pub actions: Vec<QuantAction>,
    /// Enabled action indices of every controllable cell, ascending.
    pub enabled: BTreeMap<u32, Vec<usize>>,
    /// Rank (worst-case abstract steps to the goal) of controllable cells.
    pub rank: Vec<Option<u32>>,
    pub goal: Vec<bool>,
    pub initial: Vec<bool>,
    pub outcome: Outcome,
    pub diagnostic: Option<String>,
}

impl Controller {
    pub fn is_controllable(&self, cell: usize) -> bool {
        self.rank[cell].is_some()
    }

    pub fn controllable_count(&self) -> usize {
        self.enabled.len()
    }

    pub fn max_rank(&self) -> u32 {
        self.rank.iter().flatten().copied().max().unwrap_or(0)
    }

    /// The action the generated code uses: the lexicographically least enabled one.
    pub fn chosen(&self, cell: usize) -> Option<usize> {
        self.enabled.get(&(cell as u32)).and_then(|a| a.first().copied())
    }

    pub fn steps_to_goal(&self, cell: usize, c: &Cell) -> Result<u32, SynthesisError> {
        self.rank.get(cell).copied().flatten().ok_or_else(|| SynthesisError::Uncontrollable(c.clone()))
    }

    /// Fraction of admissible cells that are controllable.
    pub fn region_fraction(&self, admissible: &[bool]) -> f64 {
        let n = admissible.iter().filter(|&&a| a).count();
        if n == 0 {
            0.0
        } else {
            self.controllable_count() as f64 / n as f64
        }
    }
}

struct Moves {
    /// `(action, successors)` per cell; actions with an unsafe exit or no
    /// successors are dropped up front.
    safe: Vec<Vec<(usize, Vec<u32>)>>,
}

impl Moves {
    fn new(abs: &ControlAbstraction) -> Moves {
        let safe = (0..abs.num_cells())
            .map(|c| {
                if !abs.admissible[c] {
                    return Vec::new();
                }
                (0..abs.actions.len())
                    .filter_map(|a| abs.successors(c, a).map(|(s, u)| (a, s, u)))
                    .filter(|(_, s, u)| !u && !s.is_empty())
                    .map(|(a, s, _)| (a, s))
                    .collect()
            })
            .collect();
        Moves { safe }
    }
}

/// Synthesizes on `abs` (normally the minimum variant).
pub fn synthesize(abs: &ControlAbstraction, regions: &RegionCells) -> Controller {
    let n = abs.num_cells();
    let moves = Moves::new(abs);
    let mut z: Vec<bool> = abs.admissible.clone();
    let mut rank: Vec<Option<u32>>;
    loop {
        rank = vec![None; n];
        for c in 0..n {
            if regions.goal[c] && z[c] && moves.safe[c].iter().any(|(_, s)| s.iter().all(|&d| z[d as usize])) {
                rank[c] = Some(0);
            }
        }
        let mut k = 0;
        loop {
            let fresh: Vec<usize> = (0..n)
                .filter(|&c| z[c] && rank[c].is_none())
                .filter(|&c| {
                    moves.safe[c].iter().any(|(_, s)| s.iter().all(|&d| rank[d as usize].is_some_and(|r| r <= k)))
                })
                .collect();
            if fresh.is_empty() {
                break;
            }
            k += 1;
            for c in fresh {
                rank[c] = Some(k);
            }
        }
        let w: Vec<bool> = rank.iter().map(Option::is_some).collect();
        if w == z {
            break;
        }
        z = w;
    }

    let mut enabled = BTreeMap::new();
    for c in 0..n {
        let Some(r) = rank[c] else { continue };
        let acts: Vec<usize> = moves.safe[c]
            .iter()
            .filter(|(_, s)| {
                if r == 0 {
                    s.iter().all(|&d| rank[d as usize].is_some())
                } else {
                    s.iter().all(|&d| rank[d as usize].is_some_and(|q| q < r))
                }
            })
            .map(|(a, _)| *a)
            .collect();
        debug_assert!(!acts.is_empty());
        enabled.insert(c as u32, acts);
    }

    let (outcome, diagnostic) = classify(abs, regions, &rank);
    Controller {
        actions: abs.actions.clone(),
        enabled,
        rank,
        goal: regions.goal.clone(),
        initial: regions.initial.clone(),
        outcome,
        diagnostic,
    }
}

/// Sol when every initial cell is controllable. NoSol only when the goal has
/// no cell, or when the abstraction is exact and fully resolved (so a missing
/// initial cell is genuinely uncontrollable at this quantization).
pub fn classify(abs: &ControlAbstraction, regions: &RegionCells, rank: &[Option<u32>]) -> (Outcome, Option<String>) {
    if !regions.goal.iter().any(|&g| g) {
        return (Outcome::NoSol, Some(GOAL_TOO_FINE.to_string()));
    }
    let missing = regions.initial.iter().zip(rank).filter(|(&i, r)| i && r.is_none()).count();
    if missing == 0 {
        return (Outcome::Sol, None);
    }
    let why = format!("{missing} initial cells outside the controllable region");
    if abs.mode == crate::abstraction::SuccessorMode::Exact && abs.unresolved == 0 {
        (Outcome::NoSol, Some(why))
    } else {
        (Outcome::Unk, Some(why))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{build, BuildOptions, SuccessorMode, Variant};
    use crate::models::toy;
    use crate::quantization::QuantSchema;

    fn toy_abs(mode: SuccessorMode) -> (Dtlhs, ControlAbstraction) {
        let h = toy::shift();
        let s = QuantSchema::uniform(h.safety_box(), 2).unwrap();
        let opts = BuildOptions { mode, jobs: 1 };
        let abs = build(&h, &s, Variant::Minimum, &MilpSolver::default(), opts).unwrap().0;
        (h, abs)
    }

    fn goal_cell2() -> RegionSpec {
        let mut goal = Predicate::new();
        goal.within("x", 2.0, 3.0);
        RegionSpec { goal, initial: None }
    }

    #[test]
    fn toy_controller() {
        let (h, abs) = toy_abs(SuccessorMode::Exact);
        let solver = MilpSolver::default();
        let regions = RegionCells::resolve(&h, &abs, &goal_cell2(), &solver).unwrap();
        assert_eq!(regions.goal, vec![false, false, true, false]);
        let k = synthesize(&abs, &regions);
        assert_eq!(k.controllable_count(), 4);
        assert_eq!(k.outcome, Outcome::Sol);
        assert_eq!(k.rank, vec![Some(2), Some(1), Some(0), Some(1)]);
        assert_eq!(k.chosen(0), Some(1));
        assert_eq!(k.chosen(1), Some(1));
        assert_eq!(k.chosen(3), Some(0));
        assert_eq!(k.enabled[&3], vec![0]);
        assert!(k.steps_to_goal(1, &Cell(vec![1])).is_ok());
        // the maximum variant keeps the loop at cell 3, which then never progresses
        let kmax = synthesize(&abs.with_variant(Variant::Maximum), &regions);
        assert!(!kmax.is_controllable(3));
        assert!(kmax.steps_to_goal(3, &Cell(vec![3])).is_err());
    }

    #[test]
    fn box_mode_is_coarser() {
        let (h, abs) = toy_abs(SuccessorMode::Box);
        let regions = RegionCells::resolve(&h, &abs, &goal_cell2(), &MilpSolver::default()).unwrap();
        let k = synthesize(&abs, &regions);
        assert_eq!(k.controllable_count(), 4);
        // [1, 2) under u = 1 is boxed to [2, 3], which also meets cell 3
        assert_eq!(k.rank[1], Some(2));
    }

    #[test]
    fn whole_rectangle_goal() {
        let (h, abs) = toy_abs(SuccessorMode::Box);
        let mut goal = Predicate::new();
        goal.within("x", 0.0, 4.0);
        let regions = RegionCells::resolve(&h, &abs, &RegionSpec { goal, initial: None }, &MilpSolver::default()).unwrap();
        let k = synthesize(&abs, &regions);
        assert_eq!(k.outcome, Outcome::Sol);
        assert!(k.rank.iter().all(|r| *r == Some(0)));
    }

    #[test]
    fn empty_goal_is_nosol() {
        let (h, abs) = toy_abs(SuccessorMode::Box);
        let mut goal = Predicate::new();
        goal.within("x", 2.2, 2.4);
        let regions = RegionCells::resolve(&h, &abs, &RegionSpec { goal, initial: None }, &MilpSolver::default()).unwrap();
        let k = synthesize(&abs, &regions);
        assert_eq!(k.outcome, Outcome::NoSol);
        assert_eq!(k.diagnostic.as_deref(), Some(GOAL_TOO_FINE));
    }

    #[test]
    fn unsafe_cell_gives_unk() {
        let (h, mut abs) = toy_abs(SuccessorMode::Box);
        for t in abs.transitions[0].iter_mut().flatten() {
            t.unsafe_exit = true;
        }
        let regions = RegionCells::resolve(&h, &abs, &goal_cell2(), &MilpSolver::default()).unwrap();
        let k = synthesize(&abs, &regions);
        assert!(!k.is_controllable(0));
        assert_eq!(k.outcome, Outcome::Unk);
    }

    #[test]
    fn restricted_initial_region() {
        let (h, mut abs) = toy_abs(SuccessorMode::Box);
        for t in abs.transitions[0].iter_mut().flatten() {
            t.unsafe_exit = true;
        }
        let mut init = Predicate::new();
        init.within("x", 2.5, 4.0);
        let spec = RegionSpec { initial: Some(init), ..goal_cell2() };
        let regions = RegionCells::resolve(&h, &abs, &spec, &MilpSolver::default()).unwrap();
        assert_eq!(regions.initial, vec![false, false, true, true]);
        assert_eq!(synthesize(&abs, &regions).outcome, Outcome::Sol);
    }

    #[test]
    fn rank_soundness() {
        let h = toy::planar_spec().build().unwrap();
        let s = QuantSchema::uniform(h.safety_box(), 3).unwrap();
        let solver = MilpSolver::default();
        let abs = build(&h, &s, Variant::Minimum, &solver, BuildOptions::default()).unwrap().0;
        let mut goal = Predicate::new();
        goal.within("x", 1.5, 3.0);
        goal.within("y", 1.5, 3.0);
        let regions = RegionCells::resolve(&h, &abs, &RegionSpec { goal, initial: None }, &solver).unwrap();
        let k = synthesize(&abs, &regions);
        assert!(k.controllable_count() > 0);
        for (&c, acts) in &k.enabled {
            let r = k.rank[c as usize].unwrap();
            assert!(!acts.is_empty());
            for &a in acts {
                let (succ, unsafe_exit) = abs.successors(c as usize, a).unwrap();
                assert!(!unsafe_exit && !succ.is_empty());
                for d in succ {
                    let q = k.rank[d as usize].expect("successor controllable");
                    assert!(r == 0 || q < r);
                }
            }
            assert!(r as usize <= abs.num_cells());
        }
    }
}
