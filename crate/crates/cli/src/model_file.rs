//! JSON model files: variables with kind and bounds, constraints as
//! coefficient maps with an optional boolean guard.
//!
//! ```json
//! {
//!   "name": "shift",
//!   "state":  [{ "name": "x", "kind": "real", "lower": 0, "upper": 4 }],
//!   "inputs": [{ "name": "u", "kind": "boolean", "lower": 0, "upper": 1 }],
//!   "aux": [],
//!   "constraints": [
//!     { "terms": { "x'": 1, "x": -1, "u": -2 }, "op": "=", "rhs": -1 }
//!   ]
//! }
//! ```
//!
//! `op` is one of `<=`, `>=`, `=`. A constraint with `"guard": "q"` only
//! applies when `q = 1`; with `"negated": true` as well, when `q = 0`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qsynth_core::models::Dtlhs;
use qsynth_core::predicate::{Constraint, LinearExpression, Polarity, Predicate, VariableDecl};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub terms: BTreeMap<String, f64>,
    pub op: Op,
    pub rhs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub negated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub name: String,
    pub state: Vec<VariableDecl>,
    #[serde(default)]
    pub inputs: Vec<VariableDecl>,
    #[serde(default)]
    pub aux: Vec<VariableDecl>,
    /// Ranges of the primed state variables. When absent they are derived from
    /// the constraints so that every feasible step fits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_bounds: Option<Vec<(f64, f64)>>,
    pub constraints: Vec<ConstraintEntry>,
}

impl ConstraintEntry {
    fn lower(&self) -> Vec<Constraint> {
        let lhs = self.terms.iter().fold(LinearExpression::new(), |e, (n, &c)| e.term(n.as_str(), c));
        match self.op {
            Op::Le => vec![Constraint::le(lhs, self.rhs)],
            Op::Ge => vec![Constraint::ge(lhs, self.rhs)],
            Op::Eq => Constraint::eq(lhs, self.rhs).to_vec(),
        }
    }

    fn raise(c: &Constraint, guard: Option<(&str, Polarity)>) -> Self {
        ConstraintEntry {
            terms: c.lhs.terms().map(|(n, v)| (n.to_string(), v)).collect(),
            op: Op::Le,
            rhs: c.rhs,
            guard: guard.map(|(g, _)| g.to_string()),
            negated: matches!(guard, Some((_, Polarity::Negated))),
        }
    }
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<ModelFile, CliError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_dtlhs(&self) -> Result<Dtlhs, CliError> {
        let mut n = Predicate::new();
        for c in &self.constraints {
            for body in c.lower() {
                match &c.guard {
                    None => {
                        n.push(body);
                    }
                    Some(g) => {
                        let pol = if c.negated { Polarity::Negated } else { Polarity::Positive };
                        n.guard(g, pol, body);
                    }
                }
            }
        }
        let h = Dtlhs::new(
            self.name.clone(),
            self.state.clone(),
            self.inputs.clone(),
            self.aux.clone(),
            self.next_bounds.clone(),
            n,
        )?;
        Ok(if self.next_bounds.is_some() { h } else { h.with_sound_next_bounds()? })
    }

    /// Every constraint comes out as `<=`; equalities appear as their two halves.
    pub fn from_dtlhs(h: &Dtlhs) -> ModelFile {
        let mut constraints: Vec<ConstraintEntry> = h.transition.plain.iter().map(|c| ConstraintEntry::raise(c, None)).collect();
        constraints.extend(
            h.transition.guarded.iter().map(|g| ConstraintEntry::raise(&g.body, Some((g.guard.as_str(), g.polarity)))),
        );
        ModelFile {
            name: h.name.clone(),
            state: h.state.clone(),
            inputs: h.inputs.clone(),
            aux: h.aux.clone(),
            next_bounds: Some(h.next.iter().map(|d| (d.lower, d.upper)).collect()),
            constraints,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model file serializes")
    }
}

/// SHA-256 of the exported model file, hex encoded.
pub fn model_hash(h: &Dtlhs) -> String {
    let json = serde_json::to_string(&ModelFile::from_dtlhs(h)).expect("model file serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}
