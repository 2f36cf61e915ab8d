//! Small affine systems `x' = A x + B u + c` with boolean inputs, used for
//! oracle cross-checks and examples.

use super::{Dtlhs, ModelError};
use crate::predicate::{primed, LinearExpression, Predicate, VariableDecl};

#[derive(Debug, Clone, PartialEq)]
pub struct AffineSpec {
    pub name: String,
    /// `(name, lower, upper)` per state variable.
    pub states: Vec<(String, f64, f64)>,
    pub inputs: Vec<String>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

impl AffineSpec {
    pub fn image(&self, x: &[f64], u: &[bool]) -> Vec<f64> {
        (0..self.states.len())
            .map(|i| {
                let ax: f64 = self.a[i].iter().zip(x).map(|(a, x)| a * x).sum();
                let bu: f64 = self.b[i].iter().zip(u).map(|(b, &u)| if u { *b } else { 0.0 }).sum();
                ax + bu + self.c[i]
            })
            .collect()
    }

    pub fn build(&self) -> Result<Dtlhs, ModelError> {
        let nx = self.states.len();
        if self.a.len() != nx || self.b.len() != nx || self.c.len() != nx {
            return Err(ModelError::Param("A, B, c must have one row per state".into()));
        }
        if self.a.iter().any(|r| r.len() != nx) || self.b.iter().any(|r| r.len() != self.inputs.len()) {
            return Err(ModelError::Param("A is nx by nx and B is nx by nu".into()));
        }
        let state = self
            .states
            .iter()
            .map(|(n, lo, hi)| VariableDecl::real(n.as_str(), *lo, *hi))
            .collect::<Result<Vec<_>, _>>()?;
        let inputs: Vec<VariableDecl> = self.inputs.iter().map(|u| VariableDecl::boolean(u.as_str())).collect();
        let mut n = Predicate::new();
        for (i, (name, lo, hi)) in self.states.iter().enumerate() {
            let mut e = LinearExpression::var(primed(name));
            for (j, (xj, _, _)) in self.states.iter().enumerate() {
                e.add_term(xj.as_str(), -self.a[i][j]);
            }
            for (k, u) in self.inputs.iter().enumerate() {
                e.add_term(u.as_str(), -self.b[i][k]);
            }
            n.equals(e, self.c[i]);
            n.within(name, *lo, *hi);
        }
        Dtlhs::new(self.name.clone(), state, inputs, Vec::new(), None, n)?.with_sound_next_bounds()
    }
}

/// `x' = x + 2u - 1` on `[0, 4]`.
pub fn shift_spec() -> AffineSpec {
    AffineSpec {
        name: "toy".into(),
        states: vec![("x".into(), 0.0, 4.0)],
        inputs: vec!["u".into()],
        a: vec![vec![1.0]],
        b: vec![vec![2.0]],
        c: vec![-1.0],
    }
}

pub fn shift() -> Dtlhs {
    shift_spec().build().expect("static model")
}

/// `x' = x` on `[0, 4]`; every cell is an equilibrium.
pub fn identity_spec() -> AffineSpec {
    AffineSpec {
        name: "toy-identity".into(),
        states: vec![("x".into(), 0.0, 4.0)],
        inputs: vec!["u".into()],
        a: vec![vec![1.0]],
        b: vec![vec![0.0]],
        c: vec![0.0],
    }
}

/// Contracting map `x' = 0.5 x + 1.5 u + 0.25` on `[0, 4]`, with a fixed point
/// in each mode.
pub fn contraction_spec() -> AffineSpec {
    AffineSpec {
        name: "toy-contraction".into(),
        states: vec![("x".into(), 0.0, 4.0)],
        inputs: vec!["u".into()],
        a: vec![vec![0.5]],
        b: vec![vec![1.5]],
        c: vec![0.25],
    }
}

/// Coupled planar system with two inputs on `[0, 4] x [0, 4]`.
pub fn planar_spec() -> AffineSpec {
    AffineSpec {
        name: "toy-planar".into(),
        states: vec![("x".into(), 0.0, 4.0), ("y".into(), 0.0, 4.0)],
        inputs: vec!["u1".into(), "u2".into()],
        a: vec![vec![0.8, 0.15], vec![-0.1, 0.9]],
        b: vec![vec![0.9, 0.0], vec![0.3, 0.7]],
        c: vec![0.2, 0.1],
    }
}
