//! Index-based MILP model plus the row merging and bound propagation done
//! before (and during) branch-and-bound.

use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Var {
    pub lower: f64,
    pub upper: f64,
    pub integral: bool,
}

/// `lower <= sum(terms) <= upper`; either side may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub terms: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

impl Row {
    pub fn le(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Row { terms, lower: f64::NEG_INFINITY, upper: rhs }
    }

    pub fn ge(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Row { terms, lower: rhs, upper: f64::INFINITY }
    }

    pub fn eq(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Row { terms, lower: rhs, upper: rhs }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Violation divided by the largest coefficient magnitude.
    pub fn scaled_violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        let scale = self.terms.iter().fold(0.0f64, |m, &(_, a)| m.max(a.abs())).max(1e-300);
        let v = (self.lower - act).max(act - self.upper).max(0.0);
        v / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
}

#[derive(Debug, Clone, Default)]
pub struct Model {
    pub vars: Vec<Var>,
    pub rows: Vec<Row>,
    pub objective: Option<Objective>,
}

impl Model {
    pub fn new(vars: Vec<(f64, f64, bool)>) -> Self {
        Model {
            vars: vars.into_iter().map(|(lower, upper, integral)| Var { lower, upper, integral }).collect(),
            rows: Vec::new(),
            objective: None,
        }
    }

    pub fn push_row(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.vars[j].lower = lower;
        self.vars[j].upper = upper;
    }

    pub fn fix(&mut self, j: usize, value: f64) {
        self.set_bounds(j, value, value);
    }

    pub fn set_objective(&mut self, terms: Vec<(usize, f64)>, sense: Sense) {
        self.objective = Some(Objective { terms, sense });
    }

    pub fn clear_objective(&mut self) {
        self.objective = None;
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.as_ref().map_or(0.0, |o| o.terms.iter().map(|&(j, a)| a * x[j]).sum())
    }
}

/// Collapses duplicate terms, drops zeros, and merges rows that differ only by
/// a positive or negative scale into a single ranged row. Returns `None` if an
/// empty row is violated.
pub(crate) fn merge_rows(rows: &[Row], tol: f64) -> Option<Vec<Row>> {
    let mut out: Vec<Row> = Vec::with_capacity(rows.len());
    let mut seen: HashMap<Vec<(usize, u64)>, usize> = HashMap::new();
    for r in rows {
        let mut terms = r.terms.clone();
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (j, a) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => merged.push((j, a)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        if merged.is_empty() {
            if r.lower > tol || r.upper < -tol {
                return None;
            }
            continue;
        }
        // Normalize so the first coefficient is +1.
        let lead = merged[0].1;
        let (mut lo, mut hi) = (r.lower / lead, r.upper / lead);
        if lead < 0.0 {
            std::mem::swap(&mut lo, &mut hi);
        }
        let key: Vec<(usize, u64)> = merged.iter().map(|&(j, a)| (j, (a / lead).to_bits())).collect();
        match seen.get(&key) {
            Some(&i) => {
                let row = &mut out[i];
                let s = row.terms[0].1;
                // stored row is scaled by s relative to the normalized form
                let (slo, shi) = if s > 0.0 { (lo * s, hi * s) } else { (hi * s, lo * s) };
                row.lower = row.lower.max(slo);
                row.upper = row.upper.min(shi);
            }
            None => {
                seen.insert(key, out.len());
                out.push(Row { terms: merged, lower: r.lower, upper: r.upper });
            }
        }
    }
    Some(out)
}

/// Activity-based bound tightening. Bounds are tightened in place; returns
/// false when some row or variable is proven empty.
pub(crate) fn propagate(rows: &[Row], integral: &[bool], lo: &mut [f64], hi: &mut [f64], tol: f64) -> bool {
    for j in 0..lo.len() {
        if !normalize_var(integral[j], &mut lo[j], &mut hi[j], tol) {
            return false;
        }
    }
    for _pass in 0..8 {
        let mut changed = false;
        for r in rows {
            let mut min_act = 0.0;
            let mut max_act = 0.0;
            let mut mag = 0.0;
            for &(j, a) in &r.terms {
                let (p, q) = (a * lo[j], a * hi[j]);
                min_act += p.min(q);
                max_act += p.max(q);
                mag += p.abs().max(q.abs());
            }
            let slack = tol * (1.0 + mag);
            if min_act > r.upper + slack || max_act < r.lower - slack {
                return false;
            }
            for &(j, a) in &r.terms {
                let (p, q) = (a * lo[j], a * hi[j]);
                let own_min = p.min(q);
                let own_max = p.max(q);
                let margin = slack / a.abs();
                if r.upper.is_finite() {
                    let bound = (r.upper - (min_act - own_min)) / a;
                    if a > 0.0 {
                        let nb = bound + margin;
                        if nb < hi[j] - 1e-9 * (1.0 + hi[j].abs()) {
                            hi[j] = nb;
                            changed = true;
                        }
                    } else {
                        let nb = bound - margin;
                        if nb > lo[j] + 1e-9 * (1.0 + lo[j].abs()) {
                            lo[j] = nb;
                            changed = true;
                        }
                    }
                }
                if r.lower.is_finite() {
                    let bound = (r.lower - (max_act - own_max)) / a;
                    if a > 0.0 {
                        let nb = bound - margin;
                        if nb > lo[j] + 1e-9 * (1.0 + lo[j].abs()) {
                            lo[j] = nb;
                            changed = true;
                        }
                    } else {
                        let nb = bound + margin;
                        if nb < hi[j] - 1e-9 * (1.0 + hi[j].abs()) {
                            hi[j] = nb;
                            changed = true;
                        }
                    }
                }
                if !normalize_var(integral[j], &mut lo[j], &mut hi[j], tol) {
                    return false;
                }
            }
        }
        if !changed {
            break;
        }
    }
    true
}

fn normalize_var(integral: bool, lo: &mut f64, hi: &mut f64, tol: f64) -> bool {
    if integral {
        *lo = (*lo - 1e-9).ceil();
        *hi = (*hi + 1e-9).floor();
        return *lo <= *hi;
    }
    if *lo > *hi {
        if *lo - *hi <= tol * (1.0 + lo.abs()) {
            let mid = 0.5 * (*lo + *hi);
            *lo = mid;
            *hi = mid;
        } else {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merges_opposite_rows_into_range() {
        let rows = vec![Row::le(vec![(0, 1.0), (1, 2.0)], 4.0), Row::le(vec![(0, -2.0), (1, -4.0)], -2.0)];
        let merged = merge_rows(&rows, 1e-9).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].lower, 1.0);
        assert_eq!(merged[0].upper, 4.0);
    }

    #[test]
    fn empty_row_violation_detected() {
        assert!(merge_rows(&[Row::le(vec![(0, 0.0)], -1.0)], 1e-9).is_none());
        assert_eq!(merge_rows(&[Row::le(vec![], 1.0)], 1e-9).unwrap().len(), 0);
    }

    #[test]
    fn propagation_tightens_and_detects_conflict() {
        // x + y <= 3, x in [0, 10], y in [2, 5] -> x <= 1
        let rows = vec![Row::le(vec![(0, 1.0), (1, 1.0)], 3.0)];
        let (mut lo, mut hi) = (vec![0.0, 2.0], vec![10.0, 5.0]);
        assert!(propagate(&rows, &[false, false], &mut lo, &mut hi, 1e-9));
        assert!((hi[0] - 1.0).abs() < 1e-6);

        let rows = vec![Row::ge(vec![(0, 1.0)], 1.0), Row::le(vec![(0, 1.0)], 0.0)];
        let (mut lo, mut hi) = (vec![0.0], vec![10.0]);
        assert!(!propagate(&rows, &[false], &mut lo, &mut hi, 1e-9));
    }

    #[test]
    fn integral_rounding() {
        let rows = vec![Row::le(vec![(0, 2.0)], 3.0)];
        let (mut lo, mut hi) = (vec![0.0], vec![5.0]);
        assert!(propagate(&rows, &[true], &mut lo, &mut hi, 1e-9));
        assert_eq!(hi[0], 1.0);
    }
}
