//! DTLHS tuple `(X, U, Y, N)` and the built-in model builders.

pub mod buck;
pub mod toy;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::milp::{MilpProblem, MilpSolver, MilpStatus, Sense};
use crate::predicate::{bound_box, primed, to_conjunctive, IndexedSystem, LinearExpression, Predicate, PredicateError, VariableDecl};

pub use buck::{BuckParams, DynamicsCoefficients};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Predicate(#[from] PredicateError),
    #[error("variable {0} appears in more than one of X, U, Y")]
    Overlap(String),
    #[error("transition predicate mentions {0}, which is not in X, U, Y or X'")]
    Stray(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("state variable {0} must be real")]
    NonRealState(String),
}

/// Discrete time linear hybrid system.
///
/// `next` holds the declarations of the primed state variables. Their bounds
/// are not part of the plant: they only have to contain every successor the
/// MILP queries need to see, and by default they are the state ranges widened
/// by the full range width on each side.
#[derive(Debug, Clone)]
pub struct Dtlhs {
    pub name: String,
    pub state: Vec<VariableDecl>,
    pub inputs: Vec<VariableDecl>,
    pub aux: Vec<VariableDecl>,
    pub next: Vec<VariableDecl>,
    pub transition: Predicate,
}

pub fn widened(lo: f64, hi: f64) -> (f64, f64) {
    let w = hi - lo;
    (lo - w, hi + w)
}

impl Dtlhs {
    pub fn new(
        name: impl Into<String>,
        state: Vec<VariableDecl>,
        inputs: Vec<VariableDecl>,
        aux: Vec<VariableDecl>,
        next_bounds: Option<Vec<(f64, f64)>>,
        transition: Predicate,
    ) -> Result<Self, ModelError> {
        let next = match next_bounds {
            Some(b) => {
                if b.len() != state.len() {
                    return Err(ModelError::Param("one next-state range per state variable".into()));
                }
                state
                    .iter()
                    .zip(b)
                    .map(|(d, (lo, hi))| VariableDecl::real(primed(&d.name), lo, hi))
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => state
                .iter()
                .map(|d| {
                    let (lo, hi) = widened(d.lower, d.upper);
                    VariableDecl::real(primed(&d.name), lo, hi)
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        let h = Dtlhs { name: name.into(), state, inputs, aux, next, transition };
        h.validate()?;
        Ok(h)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for d in self.state.iter().chain(&self.inputs).chain(&self.aux).chain(&self.next) {
            d.validate()?;
            if !seen.insert(d.name.clone()) {
                return Err(ModelError::Overlap(d.name.clone()));
            }
        }
        for d in &self.state {
            if d.kind != crate::predicate::VarKind::Real {
                return Err(ModelError::NonRealState(d.name.clone()));
            }
        }
        for v in self.transition.variables() {
            if !seen.contains(&v) {
                return Err(ModelError::Stray(v));
            }
        }
        // Boundedness: every variable has finite declared bounds and the box is nonempty.
        bound_box(&self.transition, &self.all_decls())?;
        Ok(())
    }

    /// Replaces the primed-variable ranges by ones proven to contain every
    /// successor of every state in the safety box: each `x'` is minimized and
    /// maximized over the whole model, widening the search range whenever an
    /// optimum lands on it. The result never shrinks below the current ranges.
    pub fn with_sound_next_bounds(mut self) -> Result<Self, ModelError> {
        const ROUNDS: usize = 24;
        let solver = MilpSolver::default();
        let mut search: Vec<(f64, f64)> = self.next.iter().map(|d| (d.lower, d.upper)).collect();
        for _ in 0..ROUNDS {
            let mut next = self.next.clone();
            for (d, &(lo, hi)) in next.iter_mut().zip(&search) {
                *d = d.with_bounds(lo, hi);
            }
            let decls: Vec<VariableDecl> =
                self.state.iter().chain(&self.inputs).chain(&self.aux).chain(&next).cloned().collect();
            let conj = to_conjunctive(&self.transition, &decls)?;
            let mut found = Vec::with_capacity(next.len());
            let mut binding = vec![[false; 2]; next.len()];
            for (k, d) in next.iter().enumerate() {
                let mut ends = [d.lower, d.upper];
                for (slot, sense) in [(0, Sense::Minimize), (1, Sense::Maximize)] {
                    let prob = MilpProblem {
                        decls: decls.clone(),
                        constraints: conj.clone(),
                        objective: Some((LinearExpression::var(d.name.as_str()), sense)),
                        query_kind: 2,
                    };
                    match solver.solve(&prob) {
                        Ok(res) => match (res.status, res.value) {
                            (MilpStatus::Infeasible, _) => return Ok(self),
                            (MilpStatus::Optimal, Some(v)) => ends[slot] = v,
                            // Budget ran out: keep the search range, widening it once more.
                            _ => binding[k][slot] = true,
                        },
                        Err(e) => {
                            log::debug!("bounding {}: {e}", d.name);
                            binding[k][slot] = true;
                        }
                    }
                }
                let (lo, hi) = search[k];
                let tol = 1e-6 * (1.0 + lo.abs().max(hi.abs()));
                binding[k][0] |= ends[0] <= lo + tol;
                binding[k][1] |= ends[1] >= hi - tol;
                found.push((ends[0], ends[1]));
            }
            if binding.iter().all(|b| !b[0] && !b[1]) {
                for (d, (lo, hi)) in self.next.iter_mut().zip(found) {
                    let pad = 1e-6 * (1.0 + lo.abs().max(hi.abs()));
                    *d = d.with_bounds((lo - pad).min(d.lower), (hi + pad).max(d.upper));
                }
                self.validate()?;
                return Ok(self);
            }
            for ((lo, hi), b) in search.iter_mut().zip(&binding) {
                let w = *hi - *lo;
                if b[0] {
                    *lo -= w;
                }
                if b[1] {
                    *hi += w;
                }
            }
        }
        Err(ModelError::Param("successor ranges could not be bounded".into()))
    }

    /// Declarations in the canonical order X, U, Y, X'.
    pub fn all_decls(&self) -> Vec<VariableDecl> {
        self.state.iter().chain(&self.inputs).chain(&self.aux).chain(&self.next).cloned().collect()
    }

    pub fn state_names(&self) -> Vec<&str> {
        self.state.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|d| d.name.as_str()).collect()
    }

    /// Declared state ranges, which double as the safety rectangle.
    pub fn safety_box(&self) -> Vec<(f64, f64)> {
        self.state.iter().map(|d| (d.lower, d.upper)).collect()
    }

    pub fn indexed(&self) -> Result<IndexedSystem, ModelError> {
        Ok(IndexedSystem::new(&self.transition, &self.all_decls())?)
    }

    /// Positions of X, U and X' in [`Dtlhs::all_decls`] order.
    pub fn layout(&self) -> Layout {
        let nx = self.state.len();
        let nu = self.inputs.len();
        let ny = self.aux.len();
        Layout {
            state: (0..nx).collect(),
            inputs: (nx..nx + nu).collect(),
            next: (nx + nu + ny..nx + nu + ny + nx).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub state: Vec<usize>,
    pub inputs: Vec<usize>,
    pub next: Vec<usize>,
}

/// Builder lookup by CLI name: `buck`, `buck-robust`, `multibuck:n`,
/// `multibuck-robust:n`, `toy`; next-state ranges are made sound.
pub fn builtin(name: &str, params: &BuckParams) -> Result<Dtlhs, ModelError> {
    builtin_raw(name, params)?.with_sound_next_bounds()
}

fn builtin_raw(name: &str, params: &BuckParams) -> Result<Dtlhs, ModelError> {
    let (base, n) = match name.split_once(':') {
        Some((b, n)) => {
            let n: usize = n.parse().map_err(|_| ModelError::Param(format!("bad input count in {name:?}")))?;
            (b, Some(n))
        }
        None => (name, None),
    };
    match (base, n) {
        ("buck", None) => buck::single_buck(params),
        ("buck-robust", None) => buck::single_buck_robust(params),
        ("multibuck", Some(n)) => buck::multi_buck(params, n),
        ("multibuck-robust", Some(n)) => buck::multi_buck_robust(params, n),
        ("toy", None) => Ok(toy::shift()),
        _ => Err(ModelError::Param(format!("unknown model {name:?}"))),
    }
}

pub const BUILTIN_NAMES: &[&str] = &["buck", "buck-robust", "multibuck:<n>", "multibuck-robust:<n>", "toy"];
