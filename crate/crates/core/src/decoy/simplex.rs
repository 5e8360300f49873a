//! Dense bounded-variable primal simplex.
//!
//! Solves  min c·x  s.t.  row_lo <= A x <= row_hi,  col_lo <= x <= col_hi
//! with finite column bounds. Each row gets a slack s = A x carrying the row
//! bounds, and a phase-1 artificial. The reported bound is not the primal
//! objective but a dual bound recomputed from the final row multipliers in the
//! original (unscaled) data, which is valid for any multipliers and therefore
//! does not depend on how accurately the pivots were carried out.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub row_lo: Vec<f64>,
    pub row_hi: Vec<f64>,
    pub col_lo: Vec<f64>,
    pub col_hi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    IterationLimit,
    /// The pivots stopped but the certified bound trails the primal objective
    /// by more than the gap tolerance; typical of near-singular bases.
    GapOpen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// c·x at the returned point.
    pub primal_objective: f64,
    /// Row multipliers in the original scaling.
    pub duals: Vec<f64>,
    /// A lower bound on the true optimum, valid regardless of round-off.
    pub certified_bound: f64,
    pub iterations: usize,
}

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-11;
/// Relative primal/certified gap accepted as optimal.
const GAP_TOL: f64 = 1e-4;

impl LinearProgram {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let m = self.n_rows();
        let bad = |msg: String| Err(Error::InvalidRequest(msg));
        if self.rows.iter().any(|r| r.len() != n) || self.col_lo.len() != n || self.col_hi.len() != n {
            return bad("LP dimensions disagree".into());
        }
        if self.row_lo.len() != m || self.row_hi.len() != m {
            return bad("LP row bounds have the wrong length".into());
        }
        for j in 0..n {
            if !(self.col_lo[j].is_finite() && self.col_hi[j].is_finite() && self.col_lo[j] <= self.col_hi[j]) {
                return bad(format!("column {j} needs finite ordered bounds"));
            }
        }
        for i in 0..m {
            if self.row_lo[i].is_nan() || self.row_hi[i].is_nan() || self.row_lo[i] > self.row_hi[i] {
                return Err(Error::Infeasible { rows: vec![i] });
            }
        }
        Ok(())
    }

    /// Lower bound on min c·x given row multipliers `duals`.
    pub fn dual_bound(&self, duals: &[f64]) -> f64 {
        let mut terms = Vec::with_capacity(self.n_rows() + self.n_vars());
        for (i, &l) in duals.iter().enumerate() {
            if l > 0.0 {
                terms.push(l * self.row_lo[i]);
            } else if l < 0.0 {
                terms.push(l * self.row_hi[i]);
            }
        }
        for j in 0..self.n_vars() {
            let mut d = self.objective[j];
            for (i, row) in self.rows.iter().enumerate() {
                d -= duals[i] * row[j];
            }
            terms.push(if d >= 0.0 { d * self.col_lo[j] } else { d * self.col_hi[j] });
        }
        if terms.iter().any(|t| t.is_infinite()) {
            return f64::NEG_INFINITY;
        }
        let sum: f64 = terms.iter().sum();
        let magnitude: f64 = terms.iter().map(|t| t.abs()).sum();
        // Covers rounding in the reduced costs and the summation.
        sum - 1e-14 * magnitude - f64::MIN_POSITIVE
    }
}

struct Tableau {
    m: usize,
    n_struct: usize,
    /// Columns: structural, then slacks, then artificials.
    t: Vec<Vec<f64>>,
    d: Vec<f64>,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    sigma: Vec<f64>,
    /// Scaled constraint matrix, kept for recomputing basic values.
    a: Vec<Vec<f64>>,
    iterations: usize,
}

impl Tableau {
    fn width(&self) -> usize {
        self.n_struct + 2 * self.m
    }

    /// Column j of [A | -I | diag(sigma)] at row i.
    fn original(&self, i: usize, j: usize) -> f64 {
        let (n, m) = (self.n_struct, self.m);
        if j < n {
            self.a[i][j]
        } else if j < n + m {
            if j - n == i {
                -1.0
            } else {
                0.0
            }
        } else if j - n - m == i {
            self.sigma[i]
        } else {
            0.0
        }
    }

    fn set_costs(&mut self, cost: &[f64]) {
        let w = self.width();
        for j in 0..w {
            let mut dj = cost[j];
            for i in 0..self.m {
                dj -= cost[self.basis[i]] * self.t[i][j];
            }
            self.d[j] = if self.is_basic[j] { 0.0 } else { dj };
        }
    }

    /// Basis matrix from the original columns, row-major.
    fn basis_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.basis.iter().map(|&b| self.original(i, b)).collect()).collect()
    }

    /// Recomputes basic values from the nonbasic ones, B x_B = -N x_N, with a
    /// fresh factorization so round-off from the pivots does not accumulate.
    fn refresh_basics(&mut self) {
        let m = self.m;
        let mut rhs = vec![0.0; m];
        for j in 0..self.width() {
            if self.is_basic[j] || self.x[j] == 0.0 {
                continue;
            }
            for (i, r) in rhs.iter_mut().enumerate() {
                *r -= self.original(i, j) * self.x[j];
            }
        }
        if let Some(xb) = solve_refined(&self.basis_matrix(), &rhs) {
            for (r, v) in xb.into_iter().enumerate() {
                let b = self.basis[r];
                self.x[b] = v;
            }
        }
    }

    /// Row multipliers of the current basis, B^T λ = c_B.
    fn basis_duals(&self, cost: &[f64]) -> Option<Vec<f64>> {
        let b = self.basis_matrix();
        let bt: Vec<Vec<f64>> = (0..self.m).map(|k| (0..self.m).map(|i| b[i][k]).collect()).collect();
        let cb: Vec<f64> = self.basis.iter().map(|&j| cost[j]).collect();
        solve_refined(&bt, &cb)
    }

    /// Rebuilds the tableau, cost row and basic values from B^-1 computed afresh.
    fn reinvert(&mut self, cost: &[f64]) -> bool {
        let m = self.m;
        let b = self.basis_matrix();
        let mut inv = vec![vec![0.0; m]; m];
        for k in 0..m {
            let mut e = vec![0.0; m];
            e[k] = 1.0;
            let Some(col) = solve_refined(&b, &e) else { return false };
            for i in 0..m {
                inv[i][k] = col[i];
            }
        }
        let w = self.width();
        for i in 0..m {
            for j in 0..w {
                self.t[i][j] = if self.is_basic[j] {
                    0.0
                } else {
                    (0..m).map(|k| inv[i][k] * self.original(k, j)).sum()
                };
            }
        }
        for (r, &bj) in self.basis.iter().enumerate() {
            self.t[r][bj] = 1.0;
        }
        self.set_costs(cost);
        self.refresh_basics();
        true
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width();
        let p = self.t[r][q];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i][q];
            if f != 0.0 {
                for j in 0..w {
                    self.t[i][j] -= f * pivot_row[j];
                }
                self.t[i][q] = 0.0;
            }
        }
        let f = self.d[q];
        if f != 0.0 {
            for j in 0..w {
                self.d[j] -= f * pivot_row[j];
            }
        }
        self.d[q] = 0.0;
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
    }

    /// Runs simplex iterations on the current cost row. Returns false on the iteration limit.
    fn optimize(&mut self, cost: &[f64], limit: usize) -> bool {
        let w = self.width();
        let mut degenerate_run = 0usize;
        let mut since_reinvert = 0usize;
        loop {
            if self.iterations >= limit {
                return false;
            }
            if since_reinvert >= 25 {
                self.reinvert(cost);
                since_reinvert = 0;
            }
            let bland = degenerate_run > 50;
            let mut entering = None;
            let mut best = 0.0;
            for j in 0..w {
                if self.is_basic[j] || self.lo[j] == self.hi[j] {
                    continue;
                }
                let dj = self.d[j];
                let at_lo = self.x[j] <= self.lo[j];
                let gain = if at_lo { -dj } else { dj };
                if gain > OPT_TOL {
                    if bland {
                        entering = Some((j, at_lo));
                        break;
                    }
                    if gain > best {
                        best = gain;
                        entering = Some((j, at_lo));
                    }
                }
            }
            let Some((q, up)) = entering else {
                // Confirm optimality on a clean tableau before stopping.
                if since_reinvert == 0 || !self.reinvert(cost) {
                    return true;
                }
                since_reinvert = 0;
                continue;
            };
            since_reinvert += 1;
            let dir = if up { 1.0 } else { -1.0 };

            let mut step = self.hi[q] - self.lo[q];
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let alpha = dir * self.t[i][q];
                let b = self.basis[i];
                let limit_i = if alpha > PIVOT_TOL {
                    (self.x[b] - self.lo[b]).max(0.0) / alpha
                } else if alpha < -PIVOT_TOL {
                    (self.hi[b] - self.x[b]).max(0.0) / -alpha
                } else {
                    continue;
                };
                let better = match leave {
                    _ if limit_i < step => true,
                    Some((r, _)) if limit_i == step => {
                        if bland {
                            self.basis[i] < self.basis[r]
                        } else {
                            self.t[i][q].abs() > self.t[r][q].abs()
                        }
                    }
                    _ => false,
                };
                if better {
                    step = limit_i;
                    leave = Some((i, alpha));
                }
            }
            if !step.is_finite() {
                // Cannot happen with finite column bounds; treat as converged.
                return true;
            }
            self.iterations += 1;
            degenerate_run = if step <= FEAS_TOL { degenerate_run + 1 } else { 0 };
            for i in 0..self.m {
                let b = self.basis[i];
                self.x[b] -= dir * step * self.t[i][q];
            }
            self.x[q] += dir * step;
            match leave {
                None => {
                    // Bound flip.
                    self.x[q] = if up { self.hi[q] } else { self.lo[q] };
                }
                Some((r, alpha)) => {
                    let b = self.basis[r];
                    self.x[b] = if alpha > 0.0 { self.lo[b] } else { self.hi[b] };
                    self.pivot(r, q);
                }
            }
        }
    }
}

/// Gaussian elimination with partial pivoting. None if singular.
fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &v)| row.iter().copied().chain([v]).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col] == 0.0 {
            return None;
        }
        m.swap(col, piv);
        for i in col + 1..n {
            let f = m[i][col] / m[col][col];
            if f != 0.0 {
                for k in col..=n {
                    m[i][k] -= f * m[col][k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// One step of iterative refinement on top of [`solve_dense`].
fn solve_refined(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let mut x = solve_dense(a, b)?;
    let r: Vec<f64> = a.iter().zip(b).map(|(row, &bi)| bi - row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>()).collect();
    if let Some(dx) = solve_dense(a, &r) {
        x.iter_mut().zip(dx).for_each(|(v, d)| *v += d);
    }
    Some(x)
}

/// Geometric-mean equilibration; returns (row scales, column scales).
fn equilibrate(a: &mut [Vec<f64>], passes: usize) -> (Vec<f64>, Vec<f64>) {
    let m = a.len();
    let n = if m == 0 { 0 } else { a[0].len() };
    let mut rs = vec![1.0; m];
    let mut cs = vec![1.0; n];
    let span = |it: &mut dyn Iterator<Item = f64>| {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for v in it {
            let v = v.abs();
            if v > 0.0 {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if hi > 0.0 {
            1.0 / (lo * hi).sqrt()
        } else {
            1.0
        }
    };
    for _ in 0..passes {
        for i in 0..m {
            let f = span(&mut a[i].iter().copied());
            a[i].iter_mut().for_each(|v| *v *= f);
            rs[i] *= f;
        }
        for j in 0..n {
            let f = span(&mut (0..m).map(|i| a[i][j]));
            for row in a.iter_mut() {
                row[j] *= f;
            }
            cs[j] *= f;
        }
    }
    (rs, cs)
}

/// Minimizes the program. Infeasibility reports the rows whose artificials
/// could not be driven to zero.
pub fn minimize(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.n_vars();
    let m = lp.n_rows();
    let mut a = lp.rows.clone();
    let (rs, cs) = equilibrate(&mut a, 4);

    // Scaled variables x~ = x / cs, slacks s~ = rs · (A x).
    let mut lo = Vec::with_capacity(n + 2 * m);
    let mut hi = Vec::with_capacity(n + 2 * m);
    for j in 0..n {
        lo.push(lp.col_lo[j] / cs[j]);
        hi.push(lp.col_hi[j] / cs[j]);
    }
    for i in 0..m {
        lo.push(lp.row_lo[i] * rs[i]);
        hi.push(lp.row_hi[i] * rs[i]);
    }
    for _ in 0..m {
        lo.push(0.0);
        hi.push(f64::INFINITY);
    }

    let w = n + 2 * m;
    let mut x = vec![0.0; w];
    for j in 0..n {
        x[j] = if lo[j].abs() <= hi[j].abs() { lo[j] } else { hi[j] };
    }
    let mut sigma = vec![1.0; m];
    for i in 0..m {
        let activity: f64 = (0..n).map(|j| a[i][j] * x[j]).sum();
        let (l, h) = (lo[n + i], hi[n + i]);
        let s = if l.is_finite() && (activity <= l || !h.is_finite()) {
            l
        } else if h.is_finite() && activity >= h {
            h
        } else if l.is_finite() && (activity - l).abs() <= (h - activity).abs() {
            l
        } else {
            h
        };
        x[n + i] = s;
        // A x - s + sigma t = 0.
        let residual = s - activity;
        sigma[i] = if residual >= 0.0 { 1.0 } else { -1.0 };
        x[n + m + i] = residual.abs();
    }

    let mut t = vec![vec![0.0; w]; m];
    for i in 0..m {
        for j in 0..n {
            t[i][j] = sigma[i] * a[i][j];
        }
        t[i][n + i] = -sigma[i];
        t[i][n + m + i] = 1.0;
    }
    let mut is_basic = vec![false; w];
    let basis: Vec<usize> = (0..m).map(|i| n + m + i).collect();
    for &b in &basis {
        is_basic[b] = true;
    }
    let mut tab = Tableau {
        m,
        n_struct: n,
        t,
        d: vec![0.0; w],
        x,
        lo,
        hi,
        basis,
        is_basic,
        sigma,
        a,
        iterations: 0,
    };
    let limit = 100 * (w + m) + 1000;

    let mut phase1 = vec![0.0; w];
    phase1[n + m..].iter_mut().for_each(|c| *c = 1.0);
    tab.set_costs(&phase1);
    let finished = tab.optimize(&phase1, limit);
    tab.refresh_basics();
    let infeasible: Vec<usize> = (0..m).filter(|&i| tab.x[n + m + i] > FEAS_TOL * (1.0 + tab.hi[n + i].abs().min(tab.lo[n + i].abs()))).collect();
    if finished && !infeasible.is_empty() {
        return Err(Error::Infeasible { rows: infeasible });
    }

    for i in 0..m {
        tab.lo[n + m + i] = 0.0;
        tab.hi[n + m + i] = 0.0;
        if !tab.is_basic[n + m + i] {
            tab.x[n + m + i] = 0.0;
        }
    }
    let mut phase2 = vec![0.0; w];
    for j in 0..n {
        phase2[j] = lp.objective[j] * cs[j];
    }
    tab.set_costs(&phase2);
    let optimal = finished && tab.optimize(&phase2, limit);
    tab.refresh_basics();

    let xs: Vec<f64> = (0..n).map(|j| (tab.x[j] * cs[j]).clamp(lp.col_lo[j], lp.col_hi[j])).collect();
    // Reduced cost of artificial i is -sigma_i λ~_i; the fresh solve is
    // preferred, mapped back through the row scale.
    let scaled = tab.basis_duals(&phase2).unwrap_or_else(|| (0..m).map(|i| -tab.sigma[i] * tab.d[n + m + i]).collect());
    let tableau_duals: Vec<f64> = (0..m).map(|i| -tab.sigma[i] * tab.d[n + m + i] * rs[i]).collect();
    let fresh: Vec<f64> = scaled.iter().zip(&rs).map(|(l, r)| l * r).collect();
    let (b1, b2) = (lp.dual_bound(&fresh), lp.dual_bound(&tableau_duals));
    let (duals, certified_bound) = if b1 >= b2 { (fresh, b1) } else { (tableau_duals, b2) };
    let primal_objective: f64 = xs.iter().zip(&lp.objective).map(|(x, c)| x * c).sum();
    let gap = primal_objective - certified_bound;
    let status = if !optimal {
        LpStatus::IterationLimit
    } else if gap > GAP_TOL * primal_objective.abs().max(certified_bound.abs()) + 1e-15 {
        LpStatus::GapOpen
    } else {
        LpStatus::Optimal
    };
    Ok(LpSolution {
        status,
        certified_bound,
        x: xs,
        primal_objective,
        duals,
        iterations: tab.iterations,
    })
}

/// Maximizes; the certified bound is then an upper bound on the true optimum.
pub fn maximize(lp: &LinearProgram) -> Result<LpSolution> {
    let mut neg = lp.clone();
    neg.objective.iter_mut().for_each(|c| *c = -*c);
    let mut s = minimize(&neg)?;
    s.primal_objective = -s.primal_objective;
    s.certified_bound = -s.certified_bound;
    s.duals.iter_mut().for_each(|d| *d = -*d);
    Ok(s)
}
