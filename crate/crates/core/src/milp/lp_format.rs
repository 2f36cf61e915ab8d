use std::fmt::Write;

use super::model::{Model, Sense};

fn sanitize(name: &str) -> String {
    let mut out: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.'".contains(c) { c } else { '_' })
        .collect();
    if out.chars().next().map_or(true, |c| c.is_ascii_digit() || c == '.') {
        out.insert(0, '_');
    }
    out
}

fn linear(out: &mut String, terms: &[(usize, f64)], names: &[String]) {
    if terms.is_empty() {
        out.push_str(" 0 ");
        out.push_str(&names.first().map(|s| sanitize(s)).unwrap_or_else(|| "x0".into()));
        return;
    }
    for (k, &(j, a)) in terms.iter().enumerate() {
        let sign = if a < 0.0 { '-' } else { '+' };
        if k == 0 && sign == '+' {
            let _ = write!(out, " {} {}", a.abs(), sanitize(&names[j]));
        } else {
            let _ = write!(out, " {} {} {}", sign, a.abs(), sanitize(&names[j]));
        }
    }
}

/// Renders `model` in the CPLEX LP text format for cross-checking with
/// external solvers. `names` gives one name per variable.
pub fn write_lp(model: &Model, names: &[String]) -> String {
    assert_eq!(names.len(), model.vars.len(), "one name per variable");
    let mut out = String::from("\\ exported by qsynth\n");
    match &model.objective {
        Some(o) => {
            out.push_str(if o.sense == Sense::Maximize { "Maximize\n obj:" } else { "Minimize\n obj:" });
            linear(&mut out, &o.terms, names);
        }
        None => {
            out.push_str("Minimize\n obj:");
            linear(&mut out, &[], names);
        }
    }
    out.push_str("\nSubject To\n");
    for (i, r) in model.rows.iter().enumerate() {
        let ranged = r.lower.is_finite() && r.upper.is_finite();
        if ranged && r.lower == r.upper {
            let _ = write!(out, " c{i}:");
            linear(&mut out, &r.terms, names);
            let _ = writeln!(out, " = {}", r.upper);
            continue;
        }
        if r.upper.is_finite() {
            let _ = write!(out, " c{i}{}:", if ranged { "u" } else { "" });
            linear(&mut out, &r.terms, names);
            let _ = writeln!(out, " <= {}", r.upper);
        }
        if r.lower.is_finite() {
            let _ = write!(out, " c{i}{}:", if ranged { "l" } else { "" });
            linear(&mut out, &r.terms, names);
            let _ = writeln!(out, " >= {}", r.lower);
        }
    }
    out.push_str("Bounds\n");
    for (v, n) in model.vars.iter().zip(names) {
        let _ = writeln!(out, " {} <= {} <= {}", v.lower, sanitize(n), v.upper);
    }
    let generals: Vec<String> = model.vars.iter().zip(names).filter(|(v, _)| v.integral).map(|(_, n)| sanitize(n)).collect();
    if !generals.is_empty() {
        out.push_str("Generals\n");
        for g in generals {
            let _ = writeln!(out, " {g}");
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::Row;

    #[test]
    fn export_sections() {
        let mut m = Model::new(vec![(0.0, 1.0, true), (0.0, 1.0, true)]);
        m.push_row(Row::le(vec![(0, 1.0), (1, 1.0)], 1.0));
        m.set_objective(vec![(0, 3.0), (1, 2.0)], Sense::Maximize);
        let text = write_lp(&m, &["a".into(), "b'".into()]);
        assert!(text.contains("Maximize\n obj: 3 a + 2 b'"));
        assert!(text.contains(" c0: 1 a + 1 b' <= 1"));
        assert!(text.contains("Generals\n a\n b'\n"));
        assert!(text.ends_with("End\n"));
    }
}
