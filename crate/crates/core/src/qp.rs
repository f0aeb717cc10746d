//! Dense convex QP solver for the SQP subproblems.
//!
//! Minimises `1/2 s^T Q s + c^T s` subject to box bounds on `s` and at most
//! two general inequality rows `a_i^T s <= b_i`. A primal active-set method
//! fixes box-bound variables (eliminating them from the system) and treats
//! active general rows as equalities via a small Schur complement; the
//! Cholesky factor of the free block is updated incrementally as variables
//! are fixed and freed.
//!
//! The SQP solver always emits the two general rows as exact negations of one
//! another (both constraints bound the same linearised functional), so at
//! most one of them can be active unless the band collapses to a point; that
//! degenerate case is handled as a single equality row.

use crate::error::{Error, Result};
use crate::linalg::{dot, SquareMatrix, UpdatableCholesky};

/// `coef^T s <= rhs`.
#[derive(Debug, Clone)]
pub struct GeneralRow {
    pub coef: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct QpSubproblem<'a> {
    pub q: &'a SquareMatrix,
    /// Linear term (the gradient of the minimised objective at the iterate).
    pub grad: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub general: Vec<GeneralRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

/// Final working set, reusable as a warm start for the next, similar QP.
#[derive(Debug, Clone, Default)]
pub struct WorkingSet {
    pub fixed: Vec<Option<Side>>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub step: Vec<f64>,
    /// One multiplier per general row, `>= 0`.
    pub general_multipliers: Vec<f64>,
    /// Multipliers of the `s_j <= upper_j` rows.
    pub upper_multipliers: Vec<f64>,
    /// Multipliers of the `-s_j <= -lower_j` rows.
    pub lower_multipliers: Vec<f64>,
    /// The linearised constraints were mutually inconsistent or unreachable
    /// within the box and had to be relaxed minimally.
    pub relaxed: bool,
    pub iterations: usize,
    pub working_set: WorkingSet,
}

pub fn solve_qp(qp: &QpSubproblem) -> Result<QpSolution> {
    solve_qp_warm(qp, None)
}

pub fn solve_qp_warm(qp: &QpSubproblem, hint: Option<&WorkingSet>) -> Result<QpSolution> {
    Solver::new(qp, hint)?.run()
}

struct Solver<'a> {
    qp: &'a QpSubproblem<'a>,
    n: usize,
    /// Effective right-hand sides after the consistency relaxation.
    rhs: Vec<f64>,
    relaxed: bool,
    /// Rows participating in the active-set loop (row 1 is dropped when the
    /// antiparallel band collapses to a point).
    rows: Vec<usize>,
    /// Row 0 is an equality (collapsed band): its multiplier may take any sign.
    equality_row0: bool,

    side: Vec<Option<Side>>,
    free_list: Vec<usize>,
    free_pos: Vec<usize>,
    factor: UpdatableCholesky,
    active_rows: Vec<usize>,

    s: Vec<f64>,
    /// `Q s`, maintained incrementally.
    qs: Vec<f64>,
    /// `Q[:, fixed] * s[fixed]`, maintained incrementally.
    fixed_contrib: Vec<f64>,
}

const MULT_TOL: f64 = 1e-10;

impl<'a> Solver<'a> {
    fn new(qp: &'a QpSubproblem<'a>, hint: Option<&WorkingSet>) -> Result<Self> {
        let n = qp.grad.len();
        if qp.q.n() != n || qp.lower.len() != n || qp.upper.len() != n {
            return Err(Error::Domain("qp dimension mismatch".into()));
        }
        if qp.general.len() > 2 {
            return Err(Error::Domain("qp supports at most two general rows".into()));
        }
        for j in 0..n {
            if qp.lower[j] > qp.upper[j] {
                return Err(Error::Domain(format!(
                    "qp box empty at coordinate {j}: [{}, {}]",
                    qp.lower[j], qp.upper[j]
                )));
            }
        }

        let (rhs, relaxed, rows, equality_row0) = relax_rows(qp);

        let mut solver = Solver {
            qp,
            n,
            rhs,
            relaxed,
            rows,
            equality_row0,
            side: vec![None; n],
            free_list: Vec::new(),
            free_pos: vec![usize::MAX; n],
            factor: UpdatableCholesky::from_submatrix(qp.q, &[], n)?,
            active_rows: Vec::new(),
            s: vec![0.0; n],
            qs: vec![0.0; n],
            fixed_contrib: vec![0.0; n],
        };
        solver.initialise(hint)?;
        Ok(solver)
    }

    fn initialise(&mut self, hint: Option<&WorkingSet>) -> Result<()> {
        // Adopt the hinted box fixes when they leave the general rows
        // reachable; otherwise start with everything free.
        if let Some(h) = hint {
            if h.fixed.len() == self.n {
                for j in 0..self.n {
                    if let Some(side) = h.fixed[j] {
                        self.side[j] = Some(side);
                        self.s[j] = match side {
                            Side::Lower => self.qp.lower[j],
                            Side::Upper => self.qp.upper[j],
                        };
                    }
                }
                if !self.rows_reachable() {
                    for j in 0..self.n {
                        self.side[j] = None;
                        self.s[j] = 0.0;
                    }
                }
            }
        }
        for j in 0..self.n {
            if self.side[j].is_none() {
                let col: Vec<f64> = self.free_list.iter().map(|&i| self.qp.q.get(i, j)).collect();
                self.factor.append(&col, self.qp.q.get(j, j))?;
                self.free_pos[j] = self.free_list.len();
                self.free_list.push(j);
            }
        }
        for j in 0..self.n {
            if self.side[j].is_some() && self.s[j] != 0.0 {
                for i in 0..self.n {
                    self.fixed_contrib[i] += self.qp.q.get(i, j) * self.s[j];
                }
            }
        }
        self.refresh_qs();
        self.restore_feasibility()?;
        Ok(())
    }

    fn refresh_qs(&mut self) {
        self.qs = self.qp.q.matvec(&self.s);
    }

    /// Can the free coordinates still reach every general row's feasible side?
    fn rows_reachable(&self) -> bool {
        for &ri in &self.rows {
            let a = &self.qp.general[ri].coef;
            let mut lo = 0.0;
            let mut hi = 0.0;
            for j in 0..self.n {
                let (l, u) = if self.side[j].is_none() {
                    (a[j] * self.qp.lower[j], a[j] * self.qp.upper[j])
                } else {
                    (a[j] * self.s[j], a[j] * self.s[j])
                };
                lo += l.min(u);
                hi += l.max(u);
            }
            let bound = self.rhs[ri];
            if lo > bound + 1e-12 * (1.0 + bound.abs()) {
                return false;
            }
            if self.equality_row0 && ri == 0 && hi < bound - 1e-12 * (1.0 + bound.abs()) {
                return false;
            }
        }
        true
    }

    /// Move the free coordinates so every participating row holds at the
    /// current point (phase 1). Rows were pre-relaxed to be reachable.
    fn restore_feasibility(&mut self) -> Result<()> {
        for pass in 0..4 {
            let mut all_ok = true;
            for &ri in &self.rows.clone() {
                let a = &self.qp.general[ri].coef;
                let f = dot(a, &self.s);
                let bound = self.rhs[ri];
                let tol = 1e-12 * (1.0 + bound.abs());
                let needs_fix = if self.equality_row0 && ri == 0 {
                    (f - bound).abs() > tol
                } else {
                    f > bound + tol
                };
                if !needs_fix {
                    continue;
                }
                all_ok = false;
                // Scale the free coordinates toward the vertex that moves the
                // functional in the needed direction.
                let want_down = f > bound;
                let mut vertex = self.s.clone();
                for &j in &self.free_list {
                    vertex[j] = match (a[j] >= 0.0, want_down) {
                        (true, true) | (false, false) => self.qp.lower[j],
                        _ => self.qp.upper[j],
                    };
                }
                let fv = dot(a, &vertex);
                let denom = fv - f;
                if denom.abs() < 1e-300 {
                    return Err(Error::Domain("qp phase 1 cannot move the constraint".into()));
                }
                let theta = ((bound - f) / denom).clamp(0.0, 1.0);
                let free = self.free_list.clone();
                for &j in &free {
                    let target = self.s[j] + theta * (vertex[j] - self.s[j]);
                    self.s[j] = target.clamp(self.qp.lower[j], self.qp.upper[j]);
                }
                self.refresh_qs();
            }
            if all_ok {
                return Ok(());
            }
            if pass == 3 {
                return Err(Error::Domain("qp phase 1 failed to find a feasible start".into()));
            }
        }
        Ok(())
    }

    fn run(mut self) -> Result<QpSolution> {
        let cap = 60 + 20 * self.n;
        let scale = 1.0 + crate::linalg::norm_inf(&self.qp.grad);
        for iteration in 0..cap {
            let (target, nu) = self.subproblem()?;
            // Step size on the free coordinates.
            let mut max_move = 0.0f64;
            for (idx, &j) in self.free_list.iter().enumerate() {
                max_move = max_move.max((target[idx] - self.s[j]).abs());
            }

            if max_move <= 1e-13 * scale {
                // At the working-set optimum: check dual feasibility.
                match self.most_negative_multiplier(&nu) {
                    None => return Ok(self.finish(nu, iteration + 1)),
                    Some(Blocking::Row(pos)) => {
                        self.active_rows.remove(pos);
                    }
                    Some(Blocking::Box(j)) => {
                        self.release(j)?;
                    }
                }
                continue;
            }

            // Ratio test against the constraints outside the working set.
            let mut beta = 1.0f64;
            let mut hit: Option<Blocking> = None;
            for (idx, &j) in self.free_list.iter().enumerate() {
                let p = target[idx] - self.s[j];
                if p > 1e-300 {
                    let room = (self.qp.upper[j] - self.s[j]) / p;
                    if room < beta {
                        beta = room;
                        hit = Some(Blocking::Box(j));
                    }
                } else if p < -1e-300 {
                    let room = (self.qp.lower[j] - self.s[j]) / p;
                    if room < beta {
                        beta = room;
                        hit = Some(Blocking::Box(j));
                    }
                }
            }
            for &ri in &self.rows {
                if self.active_rows.contains(&ri) {
                    continue;
                }
                let a = &self.qp.general[ri].coef;
                let f = dot(a, &self.s);
                let mut df = 0.0;
                for (idx, &j) in self.free_list.iter().enumerate() {
                    df += a[j] * (target[idx] - self.s[j]);
                }
                if df > 1e-300 {
                    let room = (self.rhs[ri] - f) / df;
                    if room < beta {
                        beta = room.max(0.0);
                        hit = Some(Blocking::Row(ri));
                    }
                }
            }

            // Take the step and update Q s incrementally.
            let beta = beta.max(0.0);
            let free = self.free_list.clone();
            for (idx, &j) in free.iter().enumerate() {
                let delta = beta * (target[idx] - self.s[j]);
                if delta != 0.0 {
                    let new = (self.s[j] + delta).clamp(self.qp.lower[j], self.qp.upper[j]);
                    let actual = new - self.s[j];
                    self.s[j] = new;
                    for i in 0..self.n {
                        self.qs[i] += self.qp.q.get(i, j) * actual;
                    }
                }
            }

            match hit {
                None => {} // full step; the next pass runs the multiplier check
                Some(Blocking::Box(j)) => {
                    let side = if (self.s[j] - self.qp.upper[j]).abs()
                        <= (self.s[j] - self.qp.lower[j]).abs()
                    {
                        Side::Upper
                    } else {
                        Side::Lower
                    };
                    self.fix(j, side);
                }
                Some(Blocking::Row(ri)) => {
                    self.active_rows.push(ri);
                    self.active_rows.sort_unstable();
                }
            }
        }
        Err(Error::Domain(format!(
            "qp active set did not converge within {cap} iterations"
        )))
    }

    /// Solve the equality-constrained subproblem on the current working set.
    /// Returns the target values for the free coordinates and the general-row
    /// multipliers.
    fn subproblem(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let nf = self.free_list.len();
        let nu = vec![0.0; self.qp.general.len()];
        if nf == 0 {
            return Ok((Vec::new(), nu));
        }
        let rhs_unc: Vec<f64> = self
            .free_list
            .iter()
            .map(|&j| -(self.qp.grad[j] + self.fixed_contrib[j]))
            .collect();
        let x_unc = self.factor.solve(&rhs_unc);
        if self.active_rows.is_empty() {
            return Ok((x_unc, nu));
        }

        // Schur complement over the (at most two) active rows.
        let m = self.active_rows.len();
        let mut a_free: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut b_hat: Vec<f64> = Vec::with_capacity(m);
        for &ri in &self.active_rows {
            let a = &self.qp.general[ri].coef;
            a_free.push(self.free_list.iter().map(|&j| a[j]).collect());
            let mut fixed_dot = 0.0;
            for j in 0..self.n {
                if self.side[j].is_some() {
                    fixed_dot += a[j] * self.s[j];
                }
            }
            b_hat.push(self.rhs[ri] - fixed_dot);
        }
        let w: Vec<Vec<f64>> = a_free.iter().map(|a| self.factor.solve(a)).collect();
        let resid: Vec<f64> = (0..m).map(|i| dot(&a_free[i], &x_unc) - b_hat[i]).collect();
        let mut nu_active = vec![0.0; m];
        if m == 1 {
            let s00 = dot(&a_free[0], &w[0]);
            if s00.abs() < 1e-300 {
                return Err(Error::Domain("qp schur pivot vanished".into()));
            }
            nu_active[0] = resid[0] / s00;
        } else {
            let s00 = dot(&a_free[0], &w[0]);
            let s01 = dot(&a_free[0], &w[1]);
            let s11 = dot(&a_free[1], &w[1]);
            let det = s00 * s11 - s01 * s01;
            if det.abs() < 1e-14 * (1.0 + s00.abs()) * (1.0 + s11.abs()) {
                // Degenerate pair; drop the later row and retry.
                self.active_rows.pop();
                return self.subproblem();
            }
            nu_active[0] = (resid[0] * s11 - s01 * resid[1]) / det;
            nu_active[1] = (s00 * resid[1] - s01 * resid[0]) / det;
        }
        let mut x = x_unc;
        for i in 0..m {
            for idx in 0..nf {
                x[idx] -= nu_active[i] * w[i][idx];
            }
        }
        let mut nu = nu;
        for (i, &ri) in self.active_rows.iter().enumerate() {
            nu[ri] = nu_active[i];
        }
        Ok((x, nu))
    }

    /// The most negative working-set multiplier, if any fall below tolerance.
    fn most_negative_multiplier(&self, nu: &[f64]) -> Option<Blocking> {
        let mut worst = -MULT_TOL * (1.0 + crate::linalg::norm_inf(&self.qp.grad));
        let mut pick = None;
        for (pos, &ri) in self.active_rows.iter().enumerate() {
            if self.equality_row0 && ri == 0 {
                continue; // equality row: any sign is fine
            }
            if nu[ri] < worst {
                worst = nu[ri];
                pick = Some(Blocking::Row(pos));
            }
        }
        for j in 0..self.n {
            if let Some(side) = self.side[j] {
                let rho = -(self.qs[j] + self.qp.grad[j] + self.row_term(j, nu));
                let mult = match side {
                    Side::Upper => rho,
                    Side::Lower => -rho,
                };
                if mult < worst {
                    worst = mult;
                    pick = Some(Blocking::Box(j));
                }
            }
        }
        pick
    }

    #[inline]
    fn row_term(&self, j: usize, nu: &[f64]) -> f64 {
        let mut t = 0.0;
        for &ri in &self.active_rows {
            t += nu[ri] * self.qp.general[ri].coef[j];
        }
        t
    }

    fn fix(&mut self, j: usize, side: Side) {
        let bound = match side {
            Side::Lower => self.qp.lower[j],
            Side::Upper => self.qp.upper[j],
        };
        let snap = bound - self.s[j];
        if snap != 0.0 {
            self.s[j] = bound;
            for i in 0..self.n {
                self.qs[i] += self.qp.q.get(i, j) * snap;
            }
        }
        let pos = self.free_pos[j];
        debug_assert!(pos != usize::MAX);
        self.factor.remove(pos);
        self.free_list.remove(pos);
        for idx in pos..self.free_list.len() {
            self.free_pos[self.free_list[idx]] = idx;
        }
        self.free_pos[j] = usize::MAX;
        self.side[j] = Some(side);
        for i in 0..self.n {
            self.fixed_contrib[i] += self.qp.q.get(i, j) * self.s[j];
        }
    }

    fn release(&mut self, j: usize) -> Result<()> {
        for i in 0..self.n {
            self.fixed_contrib[i] -= self.qp.q.get(i, j) * self.s[j];
        }
        let col: Vec<f64> = self.free_list.iter().map(|&i| self.qp.q.get(i, j)).collect();
        self.factor.append(&col, self.qp.q.get(j, j))?;
        self.free_pos[j] = self.free_list.len();
        self.free_list.push(j);
        self.side[j] = None;
        Ok(())
    }

    fn finish(self, nu: Vec<f64>, iterations: usize) -> QpSolution {
        let n = self.n;
        let mut upper = vec![0.0; n];
        let mut lower = vec![0.0; n];
        for j in 0..n {
            if let Some(side) = self.side[j] {
                let rho = -(self.qs[j] + self.qp.grad[j] + self.row_term(j, &nu));
                match side {
                    Side::Upper => upper[j] = rho.max(0.0),
                    Side::Lower => lower[j] = (-rho).max(0.0),
                }
            }
        }
        let mut general = vec![0.0; self.qp.general.len()];
        for (ri, &v) in nu.iter().enumerate() {
            general[ri] = v;
        }
        if self.equality_row0 && self.qp.general.len() == 2 {
            // The collapsed band ran as one signed equality; split the
            // multiplier back over the antiparallel pair.
            let v = general[0];
            general[0] = v.max(0.0);
            general[1] = (-v).max(0.0);
        }
        QpSolution {
            step: self.s,
            general_multipliers: general,
            upper_multipliers: upper,
            lower_multipliers: lower,
            relaxed: self.relaxed,
            iterations,
            working_set: WorkingSet { fixed: self.side },
        }
    }
}

enum Blocking {
    Box(usize),
    Row(usize),
}

/// Clamp the general rows to what the box can reach; for an antiparallel
/// pair, also force the two-sided band to be non-empty. Returns the effective
/// right-hand sides, whether anything changed, the participating row indices,
/// and whether row 0 became an equality.
fn relax_rows(qp: &QpSubproblem) -> (Vec<f64>, bool, Vec<usize>, bool) {
    let n = qp.grad.len();
    let mut rhs: Vec<f64> = qp.general.iter().map(|r| r.rhs).collect();
    let mut relaxed = false;
    let mut rows: Vec<usize> = (0..qp.general.len()).collect();
    let mut equality_row0 = false;

    let achievable = |coef: &[f64]| -> (f64, f64) {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for j in 0..n {
            let a = coef[j] * qp.lower[j];
            let b = coef[j] * qp.upper[j];
            lo += a.min(b);
            hi += a.max(b);
        }
        (lo, hi)
    };

    let antiparallel = qp.general.len() == 2
        && qp.general[0]
            .coef
            .iter()
            .zip(&qp.general[1].coef)
            .all(|(x, y)| *x == -*y);

    if antiparallel {
        let (amin, amax) = achievable(&qp.general[0].coef);
        // Functional band: lo_f <= a^T s <= hi_f.
        let mut hi_f = rhs[0];
        let mut lo_f = -rhs[1];
        if lo_f > amax {
            lo_f = amax;
            relaxed = true;
        }
        if hi_f < amin {
            hi_f = amin;
            relaxed = true;
        }
        if lo_f > hi_f {
            let mid = 0.5 * (lo_f + hi_f);
            lo_f = mid;
            hi_f = mid;
            relaxed = true;
        }
        rhs[0] = hi_f;
        rhs[1] = -lo_f;
        if hi_f - lo_f <= 1e-14 * (1.0 + hi_f.abs()) {
            // Point band: run row 0 as an equality, drop row 1 from the loop.
            rows = vec![0];
            equality_row0 = true;
        }
    } else {
        for (i, row) in qp.general.iter().enumerate() {
            let (amin, _) = achievable(&row.coef);
            if amin > rhs[i] {
                rhs[i] = amin;
                relaxed = true;
            }
        }
    }
    (rhs, relaxed, rows, equality_row0)
}
