//! Buck DC-DC converter models: single- and multi-input, nominal and robust.
//!
//! Variable names are ASCII: `i_L`, `v_O` (state), `u` or `u1..un` (switches),
//! `i_u`, `v_u`, `i_D`, `v_D`, `q` for the single-input switch/diode, and for
//! `n` inputs `vD1..`, `Iu1..`, `vu1..`, `q0..`. Robust variants add the sign
//! flags `z_iL`, `z_vO`, `z_vD` and the octant flags `z_ppp` .. `z_nnn`.

use serde::{Deserialize, Serialize};

use super::{Dtlhs, ModelError};
use crate::predicate::{LinearExpression, Polarity, Predicate, VariableDecl};

pub const I_L_RANGE: (f64, f64) = (-4.0, 4.0);
pub const V_O_RANGE: (f64, f64) = (-1.0, 7.0);
pub const CURRENT_BOUND: f64 = 1e3;
pub const VOLTAGE_BOUND: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuckParams {
    /// Sampling time (s).
    pub t: f64,
    pub l: f64,
    pub c: f64,
    /// Load (ohm).
    pub r: f64,
    pub r_l: f64,
    pub r_c: f64,
    /// Supply of the single-input converter.
    pub vin: f64,
    /// Supplies `V_1 < .. < V_n` of the multi-input converter; `None` means `V_i = 10 i`.
    pub supplies: Option<Vec<f64>>,
    pub r_on: f64,
    pub r_off: f64,
    pub rho_r: f64,
    pub rho_v: f64,
}

impl Default for BuckParams {
    fn default() -> Self {
        BuckParams {
            t: 1e-6,
            l: 2e-4,
            c: 5e-5,
            r: 5.0,
            r_l: 0.1,
            r_c: 0.1,
            vin: 15.0,
            supplies: None,
            r_on: 0.0,
            r_off: 1e4,
            rho_r: 0.25,
            rho_v: 0.25,
        }
    }
}

impl BuckParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive =
            [("T", self.t), ("L", self.l), ("C", self.c), ("R", self.r), ("r_L", self.r_l), ("r_C", self.r_c), ("Vin", self.vin), ("R_off", self.r_off)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::Param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.r_on >= 0.0) {
            return Err(ModelError::Param(format!("R_on must be >= 0, got {}", self.r_on)));
        }
        for (name, v) in [("rho_R", self.rho_r), ("rho_V", self.rho_v)] {
            if !(0.0..1.0).contains(&v) {
                return Err(ModelError::Param(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }

    pub fn supplies(&self, n: usize) -> Result<Vec<f64>, ModelError> {
        let v = match &self.supplies {
            Some(v) => {
                if v.len() != n {
                    return Err(ModelError::Param(format!("{} supplies given for {n} inputs", v.len())));
                }
                v.clone()
            }
            None => (1..=n).map(|i| 10.0 * i as f64).collect(),
        };
        if v.iter().any(|&x| !(x > 0.0)) || v.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::Param(format!("supplies must be positive and strictly increasing: {v:?}")));
        }
        Ok(v)
    }

    /// Load extremes `R(1 - rho_R)` and `R(1 + rho_R)`.
    pub fn load_range(&self) -> (f64, f64) {
        ((self.r * (1.0 - self.rho_r)).max(0.0), self.r * (1.0 + self.rho_r))
    }
}

/// Continuous-time rates of the inductor current and output voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsCoefficients {
    pub a11: f64,
    pub a12: f64,
    pub a13: f64,
    pub a21: f64,
    pub a22: f64,
    pub a23: f64,
}

pub fn coefficients(p: &BuckParams, r: f64) -> Result<DynamicsCoefficients, ModelError> {
    if !(r > 0.0) {
        return Err(ModelError::Param(format!("load must be positive, got {r}")));
    }
    let (l, c, rl, rc) = (p.l, p.c, p.r_l, p.r_c);
    Ok(DynamicsCoefficients {
        a11: -rl / l,
        a12: -1.0 / l,
        a13: -1.0 / l,
        a21: r / (rc + r) * (-rc * rl / l + 1.0 / c),
        a22: -1.0 / (rc + r) * (rc * r / l + 1.0 / c),
        a23: -1.0 / l * (rc * r / (rc + r)),
    })
}

fn var(name: &str) -> LinearExpression {
    LinearExpression::var(name)
}

/// `i_L' = (1 + T a11) i_L + T a12 v_O + T a13 v_D`
fn next_current(n: &mut Predicate, t: f64, a: &DynamicsCoefficients) {
    let rhs = var("i_L").scaled(1.0 + t * a.a11).term("v_O", t * a.a12).term("v_D", t * a.a13);
    n.equals(var("i_L'").minus(&rhs), 0.0);
}

/// `v_O' = T a21 i_L + (1 + T a22) v_O + T a23 v_D`
fn next_voltage(n: &mut Predicate, t: f64, a: &DynamicsCoefficients) {
    n.equals(var("v_O'").minus(&voltage_rhs(t, a.a21, a.a22, a.a23)), 0.0);
}

fn voltage_rhs(t: f64, a21: f64, a22: f64, a23: f64) -> LinearExpression {
    var("i_L").scaled(t * a21).term("v_O", 1.0 + t * a22).term("v_D", t * a23)
}

/// Switching element with on/off resistance: `g -> v = R_on i`, `!g -> v = R_off i`.
fn resistive_switch(n: &mut Predicate, guard: &str, v: &str, i: &str, p: &BuckParams) {
    n.guard_eq(guard, Polarity::Positive, var(v).term(i, -p.r_on), 0.0);
    n.guard_eq(guard, Polarity::Negated, var(v).term(i, -p.r_off), 0.0);
}

/// Diode: `q -> v = R_on i, i >= 0`, `!q -> v = R_off i, v <= 0`.
fn diode(n: &mut Predicate, guard: &str, v: &str, i: &str, p: &BuckParams) {
    resistive_switch(n, guard, v, i, p);
    n.guard_ge(guard, Polarity::Positive, var(i), 0.0);
    n.guard_le(guard, Polarity::Negated, var(v), 0.0);
}

fn real(name: &str, bound: f64) -> VariableDecl {
    VariableDecl::real(name, -bound, bound).expect("symmetric bound")
}

fn state_decls() -> Vec<VariableDecl> {
    vec![
        VariableDecl::real("i_L", I_L_RANGE.0, I_L_RANGE.1).expect("const"),
        VariableDecl::real("v_O", V_O_RANGE.0, V_O_RANGE.1).expect("const"),
    ]
}

/// Adds every declared real bound to `n` so that the safety envelope is part
/// of the transition relation itself.
fn add_bounds(n: &mut Predicate, decls: &[VariableDecl]) {
    for d in decls.iter().filter(|d| !d.kind.is_integral()) {
        n.within(&d.name, d.lower, d.upper);
    }
}

/// Which end of the load interval a robust envelope coefficient is evaluated
/// at: `Low` is `R(1 - rho_R)`, `High` is `R(1 + rho_R)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadCorner {
    Low,
    High,
}

/// One octant of `(i_L, v_O, v_D)` signs and the load corners used for
/// `(a21, a22, a23)` in the upper and lower `v_O'` bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OctantEnvelope {
    pub flag: &'static str,
    /// `true` = nonnegative, in `(i_L, v_O, v_D)` order.
    pub signs: [bool; 3],
    pub upper: [LoadCorner; 3],
    pub lower: [LoadCorner; 3],
}

use LoadCorner::{High as M, Low as m};

/// Envelope table. a21 and a22 grow with R and a23 shrinks, so the upper
/// bound takes R high for a nonnegative i_L / v_O and low for a nonpositive
/// one, and the reverse for v_D; the lower bound mirrors it.
///
/// | octant | upper (a21, a22, a23) | lower (a21, a22, a23) |
/// |--------|-----------------------|-----------------------|
/// | ppp    | M M m                 | m m M                 |
/// | ppn    | M M M                 | m m m                 |
/// | pnp    | M m m                 | m M M                 |
/// | pnn    | M m M                 | m M m                 |
/// | npp    | m M m                 | M m M                 |
/// | npn    | m M M                 | M m m                 |
/// | nnp    | m m m                 | M M M                 |
/// | nnn    | m m M                 | M M m                 |
pub const ENVELOPE_TABLE: [OctantEnvelope; 8] = [
    OctantEnvelope { flag: "z_ppp", signs: [true, true, true], upper: [M, M, m], lower: [m, m, M] },
    OctantEnvelope { flag: "z_ppn", signs: [true, true, false], upper: [M, M, M], lower: [m, m, m] },
    OctantEnvelope { flag: "z_pnp", signs: [true, false, true], upper: [M, m, m], lower: [m, M, M] },
    OctantEnvelope { flag: "z_pnn", signs: [true, false, false], upper: [M, m, M], lower: [m, M, m] },
    OctantEnvelope { flag: "z_npp", signs: [false, true, true], upper: [m, M, m], lower: [M, m, M] },
    OctantEnvelope { flag: "z_npn", signs: [false, true, false], upper: [m, M, M], lower: [M, m, m] },
    OctantEnvelope { flag: "z_nnp", signs: [false, false, true], upper: [m, m, m], lower: [M, M, M] },
    OctantEnvelope { flag: "z_nnn", signs: [false, false, false], upper: [m, m, M], lower: [M, M, m] },
];

pub const SIGN_FLAGS: [(&str, &str); 3] = [("z_iL", "i_L"), ("z_vO", "v_O"), ("z_vD", "v_D")];

/// Replaces the nominal `v_O'` equation by the octant-guarded envelope.
fn robust_voltage(n: &mut Predicate, aux: &mut Vec<VariableDecl>, p: &BuckParams) -> Result<(), ModelError> {
    let (r_lo, r_hi) = p.load_range();
    let lo = coefficients(p, r_lo)?;
    let hi = coefficients(p, r_hi)?;
    let pick = |corner: LoadCorner| if corner == LoadCorner::Low { lo } else { hi };

    for (flag, v) in SIGN_FLAGS {
        aux.push(VariableDecl::boolean(flag));
        n.guard_ge(flag, Polarity::Positive, var(v), 0.0);
        n.guard_le(flag, Polarity::Negated, var(v), 0.0);
    }
    for oct in &ENVELOPE_TABLE {
        aux.push(VariableDecl::boolean(oct.flag));
        // !z_abc -> the sign flags do not all agree with abc
        let mut mismatch = LinearExpression::new();
        let mut constant = 0.0;
        for ((flag, _), &positive) in SIGN_FLAGS.iter().zip(&oct.signs) {
            if positive {
                mismatch.add_term(*flag, -1.0);
                constant += 1.0;
            } else {
                mismatch.add_term(*flag, 1.0);
            }
        }
        n.guard_ge(oct.flag, Polarity::Negated, mismatch.clone(), 1.0 - constant);
        // z_abc -> the sign flags agree with abc
        for ((flag, _), &positive) in SIGN_FLAGS.iter().zip(&oct.signs) {
            if positive {
                n.le(var(oct.flag).term(*flag, -1.0), 0.0);
            } else {
                n.le(var(oct.flag).term(*flag, 1.0), 1.0);
            }
        }
        let [u1, u2, u3] = oct.upper.map(pick);
        let [l1, l2, l3] = oct.lower.map(pick);
        let t = p.t;
        n.guard_le(oct.flag, Polarity::Positive, var("v_O'").minus(&voltage_rhs(t, u1.a21, u2.a22, u3.a23)), 0.0);
        n.guard_ge(oct.flag, Polarity::Positive, var("v_O'").minus(&voltage_rhs(t, l1.a21, l2.a22, l3.a23)), 0.0);
    }
    Ok(())
}

fn supply_interval(n: &mut Predicate, lhs: LinearExpression, v: f64, rho: f64) {
    // v_D <= rest - V(1 - rho)  and  v_D >= rest - V(1 + rho), with lhs = v_D - rest
    n.le(lhs.clone(), -v * (1.0 - rho));
    n.ge(lhs, -v * (1.0 + rho));
}

fn single(p: &BuckParams, robust: bool) -> Result<Dtlhs, ModelError> {
    p.validate()?;
    let a = coefficients(p, p.r)?;
    let state = state_decls();
    let inputs = vec![VariableDecl::boolean("u")];
    let mut aux = vec![
        real("i_u", CURRENT_BOUND),
        real("v_u", VOLTAGE_BOUND),
        real("i_D", CURRENT_BOUND),
        real("v_D", VOLTAGE_BOUND),
        VariableDecl::boolean("q"),
    ];
    let mut n = Predicate::new();
    next_current(&mut n, p.t, &a);
    diode(&mut n, "q", "v_D", "i_D", p);
    resistive_switch(&mut n, "u", "v_u", "i_u", p);
    let kvl = var("v_D").term("v_u", -1.0);
    if robust {
        supply_interval(&mut n, kvl, p.vin, p.rho_v);
        robust_voltage(&mut n, &mut aux, p)?;
    } else {
        next_voltage(&mut n, p.t, &a);
        n.equals(kvl, -p.vin);
    }
    n.equals(var("i_D").term("i_L", -1.0).term("i_u", 1.0), 0.0);
    add_bounds(&mut n, &state);
    add_bounds(&mut n, &aux);
    let name = if robust { "buck-robust" } else { "buck" };
    Dtlhs::new(name, state, inputs, aux, None, n)
}

pub fn single_buck(p: &BuckParams) -> Result<Dtlhs, ModelError> {
    single(p, false)
}

pub fn single_buck_robust(p: &BuckParams) -> Result<Dtlhs, ModelError> {
    single(p, true)
}

pub fn multi_input_names(n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("u{j}")).collect()
}

fn multi(p: &BuckParams, count: usize, robust: bool) -> Result<Dtlhs, ModelError> {
    p.validate()?;
    if count == 0 {
        return Err(ModelError::Param("need at least one input".into()));
    }
    let supplies = p.supplies(count)?;
    let a = coefficients(p, p.r)?;
    let state = state_decls();
    let inputs: Vec<VariableDecl> = multi_input_names(count).iter().map(|u| VariableDecl::boolean(u.as_str())).collect();
    let mut aux = vec![real("v_D", VOLTAGE_BOUND)];
    for i in 1..count {
        aux.push(real(&format!("vD{i}"), VOLTAGE_BOUND));
    }
    aux.push(real("i_D", CURRENT_BOUND));
    for j in 1..=count {
        aux.push(real(&format!("Iu{j}"), CURRENT_BOUND));
    }
    for j in 1..=count {
        aux.push(real(&format!("vu{j}"), VOLTAGE_BOUND));
    }
    for i in 0..count {
        aux.push(VariableDecl::boolean(format!("q{i}")));
    }

    let mut n = Predicate::new();
    next_current(&mut n, p.t, &a);
    diode(&mut n, "q0", "v_D", "i_D", p);
    for i in 1..count {
        diode(&mut n, &format!("q{i}"), &format!("vD{i}"), &format!("Iu{i}"), p);
    }
    for j in 1..=count {
        resistive_switch(&mut n, &format!("u{j}"), &format!("vu{j}"), &format!("Iu{j}"), p);
    }
    let mut kcl = var("i_L").term("i_D", -1.0);
    for j in 1..=count {
        kcl.add_term(format!("Iu{j}"), -1.0);
    }
    n.equals(kcl, 0.0);
    for i in 1..count {
        let lhs = var("v_D").term(format!("vu{i}"), -1.0).term(format!("vD{i}"), -1.0);
        if robust {
            supply_interval(&mut n, lhs, supplies[i - 1], p.rho_v);
        } else {
            n.equals(lhs, -supplies[i - 1]);
        }
    }
    let last = var("v_D").term(format!("vu{count}"), -1.0);
    if robust {
        supply_interval(&mut n, last, supplies[count - 1], p.rho_v);
        robust_voltage(&mut n, &mut aux, p)?;
    } else {
        n.equals(last, -supplies[count - 1]);
        next_voltage(&mut n, p.t, &a);
    }
    add_bounds(&mut n, &state);
    add_bounds(&mut n, &aux);
    let name = if robust { format!("multibuck-robust:{count}") } else { format!("multibuck:{count}") };
    Dtlhs::new(name, state, inputs, aux, None, n)
}

pub fn multi_buck(p: &BuckParams, n: usize) -> Result<Dtlhs, ModelError> {
    multi(p, n, false)
}

pub fn multi_buck_robust(p: &BuckParams, n: usize) -> Result<Dtlhs, ModelError> {
    multi(p, n, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::{evaluate, evaluate_with_tol, Valuation};

    /// Independent derivation: v_O = rc R/(rc+R) i_L + R/(rc+R) v_C with
    /// C dv_C/dt = i_L - v_O/R and L di_L/dt = -r_L i_L - v_O - v_D.
    fn derived_rates(p: &BuckParams, r: f64, il: f64, vo: f64, vd: f64) -> (f64, f64) {
        let dil = (-p.r_l * il - vo - vd) / p.l;
        let dvc = (il - vo / r) / p.c;
        let dvo = p.r_c * r / (p.r_c + r) * dil + r / (p.r_c + r) * dvc;
        (dil, dvo)
    }

    #[test]
    fn default_coefficients() {
        let p = BuckParams::default();
        let a = coefficients(&p, 5.0).unwrap();
        assert!((a.a11 + 500.0).abs() < 1e-9);
        assert!((a.a12 + 5000.0).abs() < 1e-9 && (a.a13 + 5000.0).abs() < 1e-9);
        for (k, (il, vo, vd)) in [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)].into_iter().enumerate() {
            let (dil, dvo) = derived_rates(&p, 5.0, il, vo, vd);
            let (e1, e2) = [(a.a11, a.a21), (a.a12, a.a22), (a.a13, a.a23)][k];
            assert!((dil - e1).abs() < 1e-9 * e1.abs().max(1.0));
            assert!((dvo - e2).abs() < 1e-9 * e2.abs().max(1.0));
        }
        assert!((a.a21 - 19558.82).abs() < 0.01);
        assert!((a.a22 + 4411.76).abs() < 0.01);
        assert!((a.a23 + 490.196).abs() < 0.001);
        let zero_esr = BuckParams { r_c: 0.0, ..p.clone() };
        assert_eq!(coefficients(&zero_esr, 5.0).unwrap().a23, 0.0);
        assert!(coefficients(&p, 0.0).is_err());
    }

    #[test]
    fn monotone_in_load() {
        let p = BuckParams::default();
        let (lo, hi) = p.load_range();
        let mut prev = coefficients(&p, lo).unwrap();
        for k in 1..=200 {
            let r = lo + (hi - lo) * k as f64 / 200.0;
            let a = coefficients(&p, r).unwrap();
            assert!(a.a21 >= prev.a21 && a.a22 >= prev.a22 && a.a23 <= prev.a23);
            prev = a;
        }
    }

    #[test]
    fn envelope_table_follows_sign_rules() {
        for oct in &ENVELOPE_TABLE {
            let [pi, pv, pd] = oct.signs;
            let up = |pos: bool| if pos { M } else { m };
            let down = |pos: bool| if pos { m } else { M };
            assert_eq!(oct.upper, [up(pi), up(pv), down(pd)], "{}", oct.flag);
            assert_eq!(oct.lower, [down(pi), down(pv), up(pd)], "{}", oct.flag);
            let name: String = oct.signs.iter().map(|&s| if s { 'p' } else { 'n' }).collect();
            assert_eq!(oct.flag, format!("z_{name}"));
        }
    }

    fn diode_mode_point() -> Valuation {
        // u = 1, q = 0 at the origin: v_u = 0, v_D = -Vin, i_D = v_D / R_off.
        let p = BuckParams::default();
        let a = coefficients(&p, p.r).unwrap();
        let vd = -p.vin;
        let id = vd / p.r_off;
        Valuation::new()
            .with("i_L", 0.0)
            .with("v_O", 0.0)
            .with("u", 1.0)
            .with("q", 0.0)
            .with("v_u", 0.0)
            .with("v_D", vd)
            .with("i_D", id)
            .with("i_u", -id)
            .with("i_L'", p.t * a.a13 * vd)
            .with("v_O'", p.t * a.a23 * vd)
    }

    #[test]
    fn single_buck_example_valuation() {
        let h = single_buck(&BuckParams::default()).unwrap();
        let v = diode_mode_point();
        assert!((v.get("i_L'").unwrap() - 0.075).abs() < 1e-12);
        assert!((v.get("v_O'").unwrap() - 7.353e-3).abs() < 1e-6);
        assert!(evaluate(&h.transition, &v).unwrap());

        let mut bad = v.clone();
        bad.set("q", 1.0).set("i_D", -1.0);
        assert!(!evaluate(&h.transition, &bad).unwrap());
        let mut out = v.clone();
        out.set("i_L", 5.0);
        assert!(!evaluate(&h.transition, &out).unwrap());
    }

    #[test]
    fn robust_octant_flags() {
        let h = single_buck_robust(&BuckParams::default()).unwrap();
        // signs (i_L, v_O, v_D) = (+, +, -): only z_ppn can be set
        let base = Valuation::new().with("z_iL", 1.0).with("z_vO", 1.0).with("z_vD", 0.0);
        let octants: Vec<&str> = ENVELOPE_TABLE.iter().map(|o| o.flag).collect();
        for (k, flag) in octants.iter().enumerate() {
            let only_this: Predicate = {
                let mut p = Predicate::new();
                for g in h.transition.guarded.iter().filter(|g| octants.contains(&g.guard.as_str())) {
                    if !g.body.lhs.terms().any(|(n, _)| n == "v_O'") {
                        p.guarded.push(g.clone());
                    }
                }
                for c in h.transition.plain.iter() {
                    if c.lhs.terms().any(|(n, _)| octants.contains(&n)) {
                        p.plain.push(c.clone());
                    }
                }
                p
            };
            let mut v = base.clone();
            for (j, f) in octants.iter().enumerate() {
                v.set(*f, if j == k { 1.0 } else { 0.0 });
            }
            // setting exactly one flag: legal only for z_ppn
            assert_eq!(evaluate(&only_this, &v).unwrap(), *flag == "z_ppn", "{flag}");
        }
        let mut none = base.clone();
        for f in &octants {
            none.set(*f, 0.0);
        }
        let mut p = Predicate::new();
        p.guarded = h.transition.guarded.iter().filter(|g| octants.contains(&g.guard.as_str())).cloned().collect();
        p.guarded.retain(|g| !g.body.lhs.terms().any(|(n, _)| n == "v_O'"));
        assert!(!evaluate(&p, &none).unwrap(), "z_ppn is forced");
    }

    #[test]
    fn zero_tolerance_envelope_collapses() {
        let p = BuckParams { rho_r: 0.0, rho_v: 0.0, ..BuckParams::default() };
        let h = single_buck_robust(&p).unwrap();
        let mut v = diode_mode_point();
        // signs: i_L = 0 (+), v_O = 0 (+), v_D < 0 (-)
        for o in &ENVELOPE_TABLE {
            v.set(o.flag, if o.flag == "z_ppn" { 1.0 } else { 0.0 });
        }
        v.set("z_iL", 1.0).set("z_vO", 1.0).set("z_vD", 0.0);
        assert!(evaluate_with_tol(&h.transition, &v, 1e-9).unwrap());
        let exact = v.get("v_O'").unwrap();
        v.set("v_O'", exact + 1e-6);
        assert!(!evaluate_with_tol(&h.transition, &v, 1e-9).unwrap());
    }

    #[test]
    fn multi_rejects_bad_supplies() {
        let p = BuckParams { supplies: Some(vec![20.0, 10.0]), ..BuckParams::default() };
        assert!(multi_buck(&p, 2).is_err());
        assert!(multi_buck(&BuckParams::default(), 0).is_err());
        let h = multi_buck(&BuckParams::default(), 3).unwrap();
        assert_eq!(h.inputs.len(), 3);
    }
}
