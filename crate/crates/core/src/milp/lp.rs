//! Dense bounded-variable primal simplex.
//!
//! Solves `min c.x` subject to `row_lo <= A x <= row_hi`, `col_lo <= x <= col_hi`
//! with every column bound finite. Each row gets a logical (slack) variable
//! `s = A x`; the starting basis is all slacks. Phase 1 minimizes the sum of
//! bound violations of the basic variables with a piecewise cost recomputed
//! every iteration, phase 2 the real objective. The basis inverse is kept
//! explicitly and refactored from scratch periodically and before any
//! terminal verdict.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    /// Pivot cap hit (cycling or numerical stalling).
    IterationLimit,
}

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

/// Row-scaled dense constraint matrix shared by every node of a search.
#[derive(Debug, Clone)]
pub(crate) struct DenseLp {
    pub m: usize,
    pub n: usize,
    a: Vec<f64>,
    row_lo: Vec<f64>,
    row_hi: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LpTolerances {
    pub feas: f64,
    pub dual: f64,
    pub pivot: f64,
}

impl Default for LpTolerances {
    fn default() -> Self {
        LpTolerances { feas: 1e-7, dual: 1e-9, pivot: 1e-11 }
    }
}

const REFACTOR_EVERY: usize = 48;
const DEGENERATE_SWITCH: usize = 25;
const SMALL_PIVOT: f64 = 1e-6;

impl DenseLp {
    /// `rows` are (terms, lower, upper) with finite or infinite sides.
    pub fn new(n: usize, rows: &[(Vec<(usize, f64)>, f64, f64)]) -> Self {
        let m = rows.len();
        let mut a = vec![0.0; m * n];
        let mut row_lo = Vec::with_capacity(m);
        let mut row_hi = Vec::with_capacity(m);
        for (i, (terms, lo, hi)) in rows.iter().enumerate() {
            let scale = terms.iter().fold(0.0f64, |acc, &(_, v)| acc.max(v.abs()));
            let s = if scale > 0.0 { 1.0 / scale } else { 1.0 };
            for &(j, v) in terms {
                a[i * n + j] += v * s;
            }
            row_lo.push(lo * s);
            row_hi.push(hi * s);
        }
        DenseLp { m, n, a, row_lo, row_hi }
    }

    pub fn solve(
        &self,
        col_lo: &[f64],
        col_hi: &[f64],
        cost: &[f64],
        tol: LpTolerances,
    ) -> LpSolution {
        let mut s = Simplex::new(self, col_lo, col_hi, cost, tol);
        let status = s.run();
        let x: Vec<f64> = s.x[..self.n].to_vec();
        let objective = cost.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpSolution { status, x, objective }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Lower,
    Upper,
    Basic,
}

struct Simplex<'a> {
    lp: &'a DenseLp,
    tol: LpTolerances,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    status: Vec<Status>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    // scratch
    cb: Vec<f64>,
    y: Vec<f64>,
    alpha: Vec<f64>,
    rhs: Vec<f64>,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a DenseLp, col_lo: &[f64], col_hi: &[f64], cost: &[f64], tol: LpTolerances) -> Self {
        let (m, n) = (lp.m, lp.n);
        let mut lo = Vec::with_capacity(n + m);
        let mut hi = Vec::with_capacity(n + m);
        lo.extend_from_slice(col_lo);
        lo.extend_from_slice(&lp.row_lo);
        hi.extend_from_slice(col_hi);
        hi.extend_from_slice(&lp.row_hi);
        let mut c = cost.to_vec();
        c.resize(n + m, 0.0);
        let mut x = vec![0.0; n + m];
        let mut status = vec![Status::Basic; n + m];
        for j in 0..n {
            x[j] = col_lo[j];
            status[j] = Status::Lower;
        }
        let basis: Vec<usize> = (n..n + m).collect();
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = -1.0;
        }
        Simplex {
            lp,
            tol,
            lo,
            hi,
            cost: c,
            x,
            status,
            basis,
            binv,
            cb: vec![0.0; m],
            y: vec![0.0; m],
            alpha: vec![0.0; m],
            rhs: vec![0.0; m],
        }
    }

    fn compute_basics(&mut self) {
        let (m, n) = (self.lp.m, self.lp.n);
        for i in 0..m {
            let row = &self.lp.a[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                if self.status[j] != Status::Basic {
                    acc -= row[j] * self.x[j];
                }
            }
            if self.status[n + i] != Status::Basic {
                acc += self.x[n + i];
            }
            self.rhs[i] = acc;
        }
        for r in 0..m {
            let brow = &self.binv[r * m..(r + 1) * m];
            let v: f64 = brow.iter().zip(&self.rhs).map(|(b, v)| b * v).sum();
            self.x[self.basis[r]] = v;
        }
    }

    /// Rebuilds the basis inverse by Gauss-Jordan elimination. Returns false if
    /// the basis is numerically singular.
    fn refactor(&mut self) -> bool {
        let (m, n) = (self.lp.m, self.lp.n);
        if m == 0 {
            return true;
        }
        let mut b = vec![0.0; m * m];
        for (r, &j) in self.basis.iter().enumerate() {
            if j < n {
                for i in 0..m {
                    b[i * m + r] = self.lp.a[i * n + j];
                }
            } else {
                b[(j - n) * m + r] = -1.0;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let mut piv = col;
            let mut best = b[col * m + col].abs();
            for r in col + 1..m {
                let v = b[r * m + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-13 {
                return false;
            }
            if piv != col {
                for k in 0..m {
                    b.swap(col * m + k, piv * m + k);
                    inv.swap(col * m + k, piv * m + k);
                }
            }
            let p = b[col * m + col];
            for k in 0..m {
                b[col * m + k] /= p;
                inv[col * m + k] /= p;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = b[r * m + col];
                if f != 0.0 {
                    for k in 0..m {
                        b[r * m + k] -= f * b[col * m + k];
                        inv[r * m + k] -= f * inv[col * m + k];
                    }
                }
            }
        }
        self.binv = inv;
        true
    }

    /// Falls back to the all-slack basis, keeping structurals at a bound.
    fn reset_basis(&mut self) {
        let (m, n) = (self.lp.m, self.lp.n);
        for j in 0..n {
            if self.status[j] == Status::Basic {
                let to_upper = (self.hi[j] - self.x[j]).abs() < (self.x[j] - self.lo[j]).abs();
                self.status[j] = if to_upper { Status::Upper } else { Status::Lower };
                self.x[j] = if to_upper { self.hi[j] } else { self.lo[j] };
            }
        }
        for i in 0..m {
            self.status[n + i] = Status::Basic;
            self.basis[i] = n + i;
        }
        self.binv.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            self.binv[i * m + i] = -1.0;
        }
    }

    fn column_dot(&self, j: usize, y: &[f64]) -> f64 {
        let (m, n) = (self.lp.m, self.lp.n);
        if j < n {
            let mut acc = 0.0;
            for i in 0..m {
                acc += y[i] * self.lp.a[i * n + j];
            }
            acc
        } else {
            -y[j - n]
        }
    }

    fn ftran(&mut self, j: usize) {
        let (m, n) = (self.lp.m, self.lp.n);
        if j < n {
            for r in 0..m {
                let brow = &self.binv[r * m..(r + 1) * m];
                let mut acc = 0.0;
                for i in 0..m {
                    acc += brow[i] * self.lp.a[i * n + j];
                }
                self.alpha[r] = acc;
            }
        } else {
            let i = j - n;
            for r in 0..m {
                self.alpha[r] = -self.binv[r * m + i];
            }
        }
    }

    fn run(&mut self) -> LpStatus {
        let (m, n) = (self.lp.m, self.lp.n);
        let max_iter = 50 * (n + m) + 500;
        let mut since_refactor = 0usize;
        let mut fresh = true;
        let mut degenerate = 0usize;
        for _ in 0..max_iter {
            if since_refactor >= REFACTOR_EVERY {
                if !self.refactor() {
                    self.reset_basis();
                }
                since_refactor = 0;
                fresh = true;
            }
            self.compute_basics();

            let feas = self.tol.feas;
            let mut infeasible = false;
            for r in 0..m {
                let k = self.basis[r];
                let v = self.x[k];
                self.cb[r] = if v < self.lo[k] - feas {
                    infeasible = true;
                    -1.0
                } else if v > self.hi[k] + feas {
                    infeasible = true;
                    1.0
                } else {
                    0.0
                };
            }
            if !infeasible {
                for r in 0..m {
                    self.cb[r] = self.cost[self.basis[r]];
                }
            }
            for i in 0..m {
                let mut acc = 0.0;
                for r in 0..m {
                    let c = self.cb[r];
                    if c != 0.0 {
                        acc += c * self.binv[r * m + i];
                    }
                }
                self.y[i] = acc;
            }

            // Pricing.
            let bland = degenerate > DEGENERATE_SWITCH;
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..n + m {
                let st = self.status[j];
                if st == Status::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let cj = if infeasible { 0.0 } else { self.cost[j] };
                let d = cj - self.column_dot(j, &self.y);
                let eligible = match st {
                    Status::Lower => d < -self.tol.dual,
                    Status::Upper => d > self.tol.dual,
                    Status::Basic => false,
                };
                // A slack resting at an infinite bound cannot happen; guard anyway.
                if !eligible || !self.x[j].is_finite() {
                    continue;
                }
                match entering {
                    None => entering = Some((j, d)),
                    Some((_, best)) if !bland && d.abs() > best.abs() => entering = Some((j, d)),
                    _ => {}
                }
                if bland {
                    break;
                }
            }

            let Some((q, _)) = entering else {
                if !fresh {
                    if !self.refactor() {
                        self.reset_basis();
                    }
                    since_refactor = 0;
                    fresh = true;
                    continue;
                }
                return if infeasible { LpStatus::Infeasible } else { LpStatus::Optimal };
            };

            self.ftran(q);
            let dir = if self.status[q] == Status::Lower { 1.0 } else { -1.0 };

            // Harris two-pass ratio test.
            let mut t_max = f64::INFINITY;
            for r in 0..m {
                let delta = -dir * self.alpha[r];
                if delta.abs() <= self.tol.pivot {
                    continue;
                }
                if let Some(target) = self.target(r, delta) {
                    let relaxed = target + delta.signum() * feas;
                    let t = (relaxed - self.x[self.basis[r]]) / delta;
                    if t < t_max {
                        t_max = t;
                    }
                }
            }
            let mut leave: Option<(usize, f64, f64)> = None; // (row, theta, target)
            let mut best_piv = 0.0;
            for r in 0..m {
                let delta = -dir * self.alpha[r];
                if delta.abs() <= self.tol.pivot {
                    continue;
                }
                if let Some(target) = self.target(r, delta) {
                    let t = ((target - self.x[self.basis[r]]) / delta).max(0.0);
                    // Bland needs the textbook ratio test; the relaxed one can cycle.
                    if bland || t <= t_max {
                        let better = if bland {
                            match leave {
                                None => true,
                                Some((lr, lt, _)) => {
                                    t < lt || (t == lt && self.basis[r] < self.basis[lr])
                                }
                            }
                        } else {
                            delta.abs() > best_piv
                        };
                        if better {
                            best_piv = delta.abs();
                            leave = Some((r, t, target));
                        }
                    }
                }
            }

            let range = self.hi[q] - self.lo[q];
            let flip = match leave {
                None => true,
                Some((_, theta, _)) => range <= theta,
            };
            if flip {
                if !range.is_finite() {
                    // Unbounded ray; impossible with bounded columns unless numerics broke.
                    return LpStatus::IterationLimit;
                }
                let (new_status, new_x) = if dir > 0.0 {
                    (Status::Upper, self.hi[q])
                } else {
                    (Status::Lower, self.lo[q])
                };
                self.status[q] = new_status;
                self.x[q] = new_x;
                degenerate = 0;
                fresh = false;
                continue;
            }
            let (r, theta, target) = leave.expect("checked");
            if theta < 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.x[q] += dir * theta;
            let k = self.basis[r];
            // Leave at the value the step actually reaches (within the
            // feasibility tolerance of the bound); snapping would move every
            // basic by the gap divided by the pivot.
            let reached = self.x[k] - dir * self.alpha[r] * theta;
            self.x[k] = reached.clamp(target - feas, target + feas);
            self.status[k] = if target == self.lo[k] { Status::Lower } else { Status::Upper };
            self.status[q] = Status::Basic;
            self.basis[r] = q;

            let piv = self.alpha[r];
            // Small pivots are accepted when they block, but the updated
            // inverse is not trusted afterwards.
            if piv.abs() < SMALL_PIVOT {
                since_refactor = REFACTOR_EVERY;
            }
            for c in 0..m {
                self.binv[r * m + c] /= piv;
            }
            for i in 0..m {
                if i == r {
                    continue;
                }
                let f = self.alpha[i];
                if f != 0.0 {
                    for c in 0..m {
                        self.binv[i * m + c] -= f * self.binv[r * m + c];
                    }
                }
            }
            since_refactor += 1;
            fresh = false;
        }
        LpStatus::IterationLimit
    }

    /// Bound a basic variable runs into when moving at rate `delta`, if any.
    fn target(&self, r: usize, delta: f64) -> Option<f64> {
        let k = self.basis[r];
        let v = self.x[k];
        let (lo, hi) = (self.lo[k], self.hi[k]);
        let feas = self.tol.feas;
        let t = if delta > 0.0 {
            if v < lo - feas {
                lo
            } else if v > hi + feas {
                return None;
            } else {
                hi
            }
        } else if v > hi + feas {
            hi
        } else if v < lo - feas {
            return None;
        } else {
            lo
        };
        t.is_finite().then_some(t)
    }
}
