//! Linear constraints, guarded constraints and bounded conjunctive predicates.
//!
//! A [`Predicate`] is a conjunction of plain constraints `L(X) <= b` and
//! guarded constraints `y -> (L(X) <= b)` where `y` is a boolean variable.
//! Every variable must be declared with finite bounds, which is what makes
//! the big-M rewriting in [`to_conjunctive`] possible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::milp::{Model, Row};

/// Default comparison tolerance used when evaluating constraints.
pub const EPS_CMP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredicateError {
    #[error("variable `{0}` has no assignment")]
    MissingAssignment(String),
    #[error("variable `{0}` is not declared")]
    Undeclared(String),
    #[error("variable `{0}` is declared more than once")]
    DuplicateDecl(String),
    #[error("variable `{name}` has invalid bounds [{lower}, {upper}]")]
    InvalidBounds { name: String, lower: f64, upper: f64 },
    #[error("variable `{0}` is unbounded; every variable needs finite bounds")]
    Unbounded(String),
    #[error("guard `{0}` is not a boolean variable")]
    NonBooleanGuard(String),
    #[error("empty interval for `{name}`: [{lower}, {upper}]")]
    EmptyInterval { name: String, lower: f64, upper: f64 },
    #[error("renaming `{from}` to `{to}` collides with an existing variable")]
    NameCollision { from: String, to: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Real,
    Integer,
    Boolean,
}

impl VarKind {
    pub fn is_integral(self) -> bool {
        !matches!(self, VarKind::Real)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

impl VariableDecl {
    pub fn new(
        name: impl Into<String>,
        kind: VarKind,
        lower: f64,
        upper: f64,
    ) -> Result<Self, PredicateError> {
        let decl = VariableDecl { name: name.into(), kind, lower, upper };
        decl.validate()?;
        Ok(decl)
    }

    pub fn real(name: impl Into<String>, lower: f64, upper: f64) -> Result<Self, PredicateError> {
        Self::new(name, VarKind::Real, lower, upper)
    }

    pub fn integer(name: impl Into<String>, lower: f64, upper: f64) -> Result<Self, PredicateError> {
        Self::new(name, VarKind::Integer, lower, upper)
    }

    pub fn boolean(name: impl Into<String>) -> Self {
        VariableDecl { name: name.into(), kind: VarKind::Boolean, lower: 0.0, upper: 1.0 }
    }

    pub fn validate(&self) -> Result<(), PredicateError> {
        if !self.lower.is_finite() || !self.upper.is_finite() {
            return Err(PredicateError::Unbounded(self.name.clone()));
        }
        let bad = self.lower > self.upper
            || (self.kind == VarKind::Boolean && (self.lower != 0.0 || self.upper != 1.0));
        if bad {
            return Err(PredicateError::InvalidBounds {
                name: self.name.clone(),
                lower: self.lower,
                upper: self.upper,
            });
        }
        Ok(())
    }

    pub fn with_bounds(&self, lower: f64, upper: f64) -> Self {
        VariableDecl { name: self.name.clone(), kind: self.kind, lower, upper }
    }
}

/// `sum(coef * var) + constant`. Zero coefficients are never stored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearExpression {
    terms: BTreeMap<String, f64>,
    constant: f64,
}

impl LinearExpression {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(name: impl Into<String>) -> Self {
        Self::new().term(name, 1.0)
    }

    pub fn constant(value: f64) -> Self {
        LinearExpression { terms: BTreeMap::new(), constant: value }
    }

    /// Adds `coef * name`, merging with an existing term.
    pub fn term(mut self, name: impl Into<String>, coef: f64) -> Self {
        self.add_term(name, coef);
        self
    }

    pub fn add_term(&mut self, name: impl Into<String>, coef: f64) {
        let name = name.into();
        let entry = self.terms.entry(name.clone()).or_insert(0.0);
        *entry += coef;
        if *entry == 0.0 {
            self.terms.remove(&name);
        }
    }

    pub fn plus_constant(mut self, value: f64) -> Self {
        self.constant += value;
        self
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, f64)> {
        self.terms.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn coefficient(&self, name: &str) -> f64 {
        self.terms.get(name).copied().unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.constant
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = LinearExpression::constant(self.constant * factor);
        for (name, coef) in &self.terms {
            out.add_term(name.clone(), coef * factor);
        }
        out
    }

    pub fn plus(&self, other: &LinearExpression) -> Self {
        let mut out = self.clone();
        for (name, coef) in &other.terms {
            out.add_term(name.clone(), *coef);
        }
        out.constant += other.constant;
        out
    }

    pub fn minus(&self, other: &LinearExpression) -> Self {
        self.plus(&other.scaled(-1.0))
    }

    pub fn eval(&self, v: &Valuation) -> Result<f64, PredicateError> {
        let mut acc = self.constant;
        for (name, coef) in &self.terms {
            acc += coef * v.get(name)?;
        }
        Ok(acc)
    }

    fn rename(&self, map: &BTreeMap<&str, String>) -> Self {
        let mut out = LinearExpression::constant(self.constant);
        for (name, coef) in &self.terms {
            let target = map.get(name.as_str()).cloned().unwrap_or_else(|| name.clone());
            out.add_term(target, *coef);
        }
        out
    }
}

impl fmt::Display for LinearExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, coef) in &self.terms {
            if first {
                write!(f, "{coef} {name}")?;
                first = false;
            } else if *coef < 0.0 {
                write!(f, " - {} {name}", -coef)?;
            } else {
                write!(f, " + {coef} {name}")?;
            }
        }
        if self.constant != 0.0 || first {
            write!(f, " + {}", self.constant)?;
        }
        Ok(())
    }
}

/// Canonical `lhs <= rhs`; the expression's constant is always folded into `rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub lhs: LinearExpression,
    pub rhs: f64,
}

impl Constraint {
    pub fn le(lhs: LinearExpression, rhs: f64) -> Self {
        let c = lhs.constant;
        let mut lhs = lhs;
        lhs.constant = 0.0;
        Constraint { lhs, rhs: rhs - c }
    }

    /// `lhs >= rhs`, stored as `-lhs <= -rhs`.
    pub fn ge(lhs: LinearExpression, rhs: f64) -> Self {
        Constraint::le(lhs.scaled(-1.0), -rhs)
    }

    /// `lhs = rhs`, desugared into the pair `lhs <= rhs` and `-lhs <= -rhs`.
    pub fn eq(lhs: LinearExpression, rhs: f64) -> [Constraint; 2] {
        [Constraint::le(lhs.clone(), rhs), Constraint::ge(lhs, rhs)]
    }

    pub fn holds(&self, v: &Valuation, eps: f64) -> Result<bool, PredicateError> {
        let mut acc = 0.0;
        let mut mag = self.rhs.abs();
        for (name, coef) in self.lhs.terms() {
            let t = coef * v.get(name)?;
            acc += t;
            mag += t.abs();
        }
        Ok(acc <= self.rhs + eps * (1.0 + mag))
    }

    /// Amount by which the constraint is violated (0 when satisfied).
    pub fn violation(&self, v: &Valuation) -> Result<f64, PredicateError> {
        Ok((self.lhs.eval(v)? - self.rhs).max(0.0))
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} <= {}", self.lhs, self.rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// `y -> C`, i.e. `(y = 0) or C`.
    Positive,
    /// `!y -> C`, i.e. `(y = 1) or C`.
    Negated,
}

impl Polarity {
    /// Guard value that activates the body.
    pub fn active_value(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negated => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardedConstraint {
    pub guard: String,
    pub polarity: Polarity,
    pub body: Constraint,
}

impl GuardedConstraint {
    pub fn holds(&self, v: &Valuation, eps: f64) -> Result<bool, PredicateError> {
        let g = v.get(&self.guard)?;
        if (g - self.polarity.active_value()).abs() > 0.5 {
            // Guard disabled: still require every body variable to be assigned.
            for (name, _) in self.body.lhs.terms() {
                v.get(name)?;
            }
            return Ok(true);
        }
        self.body.holds(v, eps)
    }
}

/// Conjunction of plain and guarded linear constraints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub plain: Vec<Constraint>,
    pub guarded: Vec<GuardedConstraint>,
}

impl Predicate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, c: Constraint) -> &mut Self {
        self.plain.push(c);
        self
    }

    pub fn le(&mut self, lhs: LinearExpression, rhs: f64) -> &mut Self {
        self.push(Constraint::le(lhs, rhs))
    }

    pub fn ge(&mut self, lhs: LinearExpression, rhs: f64) -> &mut Self {
        self.push(Constraint::ge(lhs, rhs))
    }

    pub fn equals(&mut self, lhs: LinearExpression, rhs: f64) -> &mut Self {
        self.plain.extend(Constraint::eq(lhs, rhs));
        self
    }

    /// `lo <= var <= hi`
    pub fn within(&mut self, var: &str, lo: f64, hi: f64) -> &mut Self {
        self.ge(LinearExpression::var(var), lo);
        self.le(LinearExpression::var(var), hi)
    }

    pub fn guard(&mut self, guard: &str, polarity: Polarity, body: Constraint) -> &mut Self {
        self.guarded.push(GuardedConstraint { guard: guard.to_string(), polarity, body });
        self
    }

    pub fn guard_le(&mut self, guard: &str, polarity: Polarity, lhs: LinearExpression, rhs: f64) -> &mut Self {
        self.guard(guard, polarity, Constraint::le(lhs, rhs))
    }

    pub fn guard_ge(&mut self, guard: &str, polarity: Polarity, lhs: LinearExpression, rhs: f64) -> &mut Self {
        self.guard(guard, polarity, Constraint::ge(lhs, rhs))
    }

    pub fn guard_eq(&mut self, guard: &str, polarity: Polarity, lhs: LinearExpression, rhs: f64) -> &mut Self {
        for c in Constraint::eq(lhs, rhs) {
            self.guard(guard, polarity, c);
        }
        self
    }

    pub fn extend(&mut self, other: &Predicate) -> &mut Self {
        self.plain.extend(other.plain.iter().cloned());
        self.guarded.extend(other.guarded.iter().cloned());
        self
    }

    pub fn is_conjunctive(&self) -> bool {
        self.guarded.is_empty()
    }

    pub fn len(&self) -> usize {
        self.plain.len() + self.guarded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every variable mentioned, guards included.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for c in &self.plain {
            out.extend(c.lhs.terms().map(|(n, _)| n.to_string()));
        }
        for g in &self.guarded {
            out.insert(g.guard.clone());
            out.extend(g.body.lhs.terms().map(|(n, _)| n.to_string()));
        }
        out
    }

    fn rename(&self, map: &BTreeMap<&str, String>) -> Predicate {
        let rename_c = |c: &Constraint| Constraint { lhs: c.lhs.rename(map), rhs: c.rhs };
        Predicate {
            plain: self.plain.iter().map(rename_c).collect(),
            guarded: self
                .guarded
                .iter()
                .map(|g| GuardedConstraint {
                    guard: map.get(g.guard.as_str()).cloned().unwrap_or_else(|| g.guard.clone()),
                    polarity: g.polarity,
                    body: rename_c(&g.body),
                })
                .collect(),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.plain {
            writeln!(f, "{c}")?;
        }
        for g in &self.guarded {
            let bang = if g.polarity == Polarity::Negated { "!" } else { "" };
            writeln!(f, "{bang}{} -> {}", g.guard, g.body)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Valuation {
    values: BTreeMap<String, f64>,
}

impl Valuation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.values.insert(name.into(), value);
        self
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Result<f64, PredicateError> {
        self.values.get(name).copied().ok_or_else(|| PredicateError::MissingAssignment(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks that each assigned variable lies in its declared domain.
    pub fn respects(&self, decls: &[VariableDecl], eps: f64) -> bool {
        decls.iter().all(|d| match self.values.get(&d.name) {
            None => true,
            Some(&x) => {
                x >= d.lower - eps
                    && x <= d.upper + eps
                    && (!d.kind.is_integral() || (x - x.round()).abs() <= eps)
            }
        })
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for Valuation {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        Valuation { values: iter.into_iter().map(|(k, v)| (k.into(), v)).collect() }
    }
}

pub fn evaluate(p: &Predicate, v: &Valuation) -> Result<bool, PredicateError> {
    evaluate_with_tol(p, v, EPS_CMP)
}

/// Like [`evaluate`], with a relative tolerance `eps` on each constraint.
pub fn evaluate_with_tol(p: &Predicate, v: &Valuation, eps: f64) -> Result<bool, PredicateError> {
    // Visit every constraint so a missing assignment is always reported.
    let mut ok = true;
    for c in &p.plain {
        ok &= c.holds(v, eps)?;
    }
    for g in &p.guarded {
        ok &= g.holds(v, eps)?;
    }
    Ok(ok)
}

fn decl_map(decls: &[VariableDecl]) -> Result<BTreeMap<&str, &VariableDecl>, PredicateError> {
    let mut map = BTreeMap::new();
    for d in decls {
        d.validate()?;
        if map.insert(d.name.as_str(), d).is_some() {
            return Err(PredicateError::DuplicateDecl(d.name.clone()));
        }
    }
    Ok(map)
}

/// Tightest per-variable interval implied by the declarations and by the
/// single-variable plain constraints of `p`.
pub fn bound_box(
    p: &Predicate,
    decls: &[VariableDecl],
) -> Result<BTreeMap<String, (f64, f64)>, PredicateError> {
    let map = decl_map(decls)?;
    for name in p.variables() {
        if !map.contains_key(name.as_str()) {
            return Err(PredicateError::Undeclared(name));
        }
    }
    let mut out: BTreeMap<String, (f64, f64)> =
        decls.iter().map(|d| (d.name.clone(), (d.lower, d.upper))).collect();
    for c in &p.plain {
        if c.lhs.len() != 1 {
            continue;
        }
        let (name, a) = c.lhs.terms().next().expect("one term");
        let bound = c.rhs / a;
        let entry = out.get_mut(name).expect("checked above");
        if a > 0.0 {
            entry.1 = entry.1.min(bound);
        } else {
            entry.0 = entry.0.max(bound);
        }
    }
    for (name, &(lo, hi)) in &out {
        if lo > hi + EPS_CMP * (1.0 + lo.abs().max(hi.abs())) {
            return Err(PredicateError::EmptyInterval { name: name.clone(), lower: lo, upper: hi });
        }
    }
    Ok(out)
}

/// Big-M for a guarded body `L <= b`: `max over the box of (L - b)`, clamped at 0.
pub fn big_m(terms: impl IntoIterator<Item = (f64, f64, f64)>, rhs: f64) -> f64 {
    let mut m = -rhs;
    for (a, lo, hi) in terms {
        m += (a * lo).max(a * hi);
    }
    m.max(0.0)
}

/// Rewrites every guarded constraint into a plain one with a per-constraint
/// big-M taken from [`bound_box`]:
/// `y -> L <= b` becomes `L + M y <= b + M`, `!y -> L <= b` becomes `L - M y <= b`.
pub fn to_conjunctive(p: &Predicate, decls: &[VariableDecl]) -> Result<Predicate, PredicateError> {
    let bx = match bound_box(p, decls) {
        // The plain constraints are contradictory and stay in the output, so
        // any M valid over the declared box keeps the result equivalent.
        Err(PredicateError::EmptyInterval { .. }) => decls.iter().map(|d| (d.name.clone(), (d.lower, d.upper))).collect(),
        other => other?,
    };
    let kinds: BTreeMap<&str, VarKind> = decls.iter().map(|d| (d.name.as_str(), d.kind)).collect();
    let mut out = Predicate { plain: p.plain.clone(), guarded: Vec::new() };
    for g in &p.guarded {
        if kinds.get(g.guard.as_str()) != Some(&VarKind::Boolean) {
            return Err(PredicateError::NonBooleanGuard(g.guard.clone()));
        }
        let m = big_m(
            g.body.lhs.terms().map(|(n, a)| {
                let (lo, hi) = bx[n];
                (a, lo, hi)
            }),
            g.body.rhs,
        );
        let (coef, rhs) = match g.polarity {
            Polarity::Positive => (m, g.body.rhs + m),
            Polarity::Negated => (-m, g.body.rhs),
        };
        let lhs = g.body.lhs.clone().term(g.guard.clone(), coef);
        out.plain.push(Constraint { lhs, rhs });
    }
    Ok(out)
}

pub fn primed(name: &str) -> String {
    format!("{name}'")
}

/// Renames each listed variable `x` to `x'`.
pub fn prime(p: &Predicate, vars: &[&str]) -> Result<Predicate, PredicateError> {
    let existing = p.variables();
    let mut map = BTreeMap::new();
    for &v in vars {
        let target = primed(v);
        if existing.contains(&target) {
            return Err(PredicateError::NameCollision { from: v.to_string(), to: target });
        }
        map.insert(v, target);
    }
    Ok(p.rename(&map))
}

/// Inverse of [`prime`]: renames `x'` back to `x` for each listed `x`.
pub fn unprime(p: &Predicate, vars: &[&str]) -> Result<Predicate, PredicateError> {
    let existing = p.variables();
    let primes: Vec<String> = vars.iter().map(|v| primed(v)).collect();
    let mut map = BTreeMap::new();
    for (v, pv) in vars.iter().zip(&primes) {
        if existing.contains(*v) {
            return Err(PredicateError::NameCollision { from: pv.clone(), to: v.to_string() });
        }
        map.insert(pv.as_str(), v.to_string());
    }
    Ok(p.rename(&map))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexedRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexedGuard {
    pub guard: usize,
    pub polarity: Polarity,
    pub body: IndexedRow,
}

/// Index-based form of a guarded predicate over a fixed variable list.
///
/// Used on hot paths where the same predicate is normalized against many
/// different bound boxes.
#[derive(Debug, Clone)]
pub struct IndexedSystem {
    pub decls: Vec<VariableDecl>,
    pub plain: Vec<IndexedRow>,
    pub guarded: Vec<IndexedGuard>,
    index: BTreeMap<String, usize>,
}

impl IndexedSystem {
    pub fn new(p: &Predicate, decls: &[VariableDecl]) -> Result<Self, PredicateError> {
        decl_map(decls)?;
        let index: BTreeMap<String, usize> =
            decls.iter().enumerate().map(|(i, d)| (d.name.clone(), i)).collect();
        let row = |c: &Constraint| -> Result<IndexedRow, PredicateError> {
            let terms = c
                .lhs
                .terms()
                .map(|(n, a)| {
                    index.get(n).map(|&i| (i, a)).ok_or_else(|| PredicateError::Undeclared(n.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(IndexedRow { terms, rhs: c.rhs })
        };
        let plain = p.plain.iter().map(row).collect::<Result<Vec<_>, _>>()?;
        let mut guarded = Vec::with_capacity(p.guarded.len());
        for g in &p.guarded {
            let gi = *index.get(&g.guard).ok_or_else(|| PredicateError::Undeclared(g.guard.clone()))?;
            if decls[gi].kind != VarKind::Boolean {
                return Err(PredicateError::NonBooleanGuard(g.guard.clone()));
            }
            guarded.push(IndexedGuard { guard: gi, polarity: g.polarity, body: row(&g.body)? });
        }
        Ok(IndexedSystem { decls: decls.to_vec(), plain, guarded, index })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.decls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decls.is_empty()
    }

    pub fn declared_bounds(&self) -> Vec<(f64, f64)> {
        self.decls.iter().map(|d| (d.lower, d.upper)).collect()
    }

    /// Normalizes against `bounds` (one interval per declared variable) and
    /// returns a MILP model with those bounds. Guards whose value is fixed by
    /// `bounds` are resolved directly instead of getting a big-M row.
    pub fn to_model(&self, bounds: &[(f64, f64)]) -> Model {
        let mut bx: Vec<(f64, f64)> = bounds.to_vec();
        for r in &self.plain {
            if let [(j, a)] = r.terms[..] {
                let b = r.rhs / a;
                if a > 0.0 {
                    bx[j].1 = bx[j].1.min(b);
                } else {
                    bx[j].0 = bx[j].0.max(b);
                }
            }
        }
        // Tighten the box with everything that holds unconditionally so the
        // big-M values below are as small as the box allows.
        let integral: Vec<bool> = self.decls.iter().map(|d| d.kind.is_integral()).collect();
        let mut sure: Vec<Row> = self.plain.iter().map(|r| Row::le(r.terms.clone(), r.rhs)).collect();
        for g in &self.guarded {
            let (glo, ghi) = bx[g.guard];
            if glo == ghi && glo == g.polarity.active_value() {
                sure.push(Row::le(g.body.terms.clone(), g.body.rhs));
            }
        }
        let (mut lo, mut hi): (Vec<f64>, Vec<f64>) = bx.iter().copied().unzip();
        if crate::milp::propagate(&sure, &integral, &mut lo, &mut hi, 1e-9) {
            for (j, b) in bx.iter_mut().enumerate() {
                *b = (lo[j], hi[j]);
            }
        }
        let mut model = Model::new(
            self.decls.iter().zip(&bx).map(|(d, &(lo, hi))| (lo, hi, d.kind.is_integral())).collect(),
        );
        for r in &self.plain {
            model.push_row(Row::le(r.terms.clone(), r.rhs));
        }
        for g in &self.guarded {
            let (glo, ghi) = bx[g.guard];
            let active = g.polarity.active_value();
            if glo == ghi {
                if glo == active {
                    model.push_row(Row::le(g.body.terms.clone(), g.body.rhs));
                }
                continue;
            }
            let m = big_m(g.body.terms.iter().map(|&(j, a)| (a, bx[j].0, bx[j].1)), g.body.rhs);
            if m == 0.0 {
                continue;
            }
            let mut terms = g.body.terms.clone();
            let rhs = match g.polarity {
                Polarity::Positive => {
                    terms.push((g.guard, m));
                    g.body.rhs + m
                }
                Polarity::Negated => {
                    terms.push((g.guard, -m));
                    g.body.rhs
                }
            };
            model.push_row(Row::le(terms, rhs));
        }
        model
    }
}
