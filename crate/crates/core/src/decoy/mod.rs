//! Decoy-state linear programs: bound single-photon quantities from the nine
//! region-averaged observables of a basis.
//!
//! Each band pair (i, j) gives one row
//!
//!   Q_ij - tail_ij - k·err_ij  <=  Σ_{n,m<=N} <P_n>_i <P_m>_j Y_nm  <=  Q_ij + k·err_ij
//!
//! with Y_nm in [0, 1]. The tail term covers every pair with n or m above the
//! truncation and `err` is the integration error of Q_ij.

pub mod simplex;
pub mod synthetic;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::{Basis, Moments};
use crate::statistics::BasisStatistics;
use simplex::{LinearProgram, LpStatus};

const NEGLIGIBLE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Gain,
    ErrorGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyRow {
    pub band_a: u8,
    pub band_b: u8,
    /// Indexed n·(N+1) + m.
    pub coefficients: Vec<f64>,
    pub observed: f64,
    pub error: f64,
    pub tail: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyConstraintSet {
    pub basis: Basis,
    pub kind: RowKind,
    pub n_max: usize,
    pub rows: Vec<DecoyRow>,
}

/// Probability mass of all (n, m) pairs outside the truncated square.
pub fn joint_tail(a: &Moments, b: &Moments) -> f64 {
    a.tail + b.tail - a.tail * b.tail
}

impl DecoyConstraintSet {
    pub fn from_statistics(stats: &BasisStatistics, kind: RowKind, n_max: usize, sigma_multiplier: f64) -> Result<Self> {
        if !(sigma_multiplier >= 0.0 && sigma_multiplier.is_finite()) {
            return Err(Error::Domain { value: sigma_multiplier, domain: "sigma multiplier >= 0" });
        }
        let (obs, err) = match kind {
            RowKind::Gain => (&stats.gains, &stats.gain_errors),
            RowKind::ErrorGain => (&stats.error_gains, &stats.error_gain_errors),
        };
        let mut rows = Vec::with_capacity(9);
        for i in 0..3 {
            for j in 0..3 {
                let (ma, mb) = (&stats.moments_a[i], &stats.moments_b[j]);
                let truncated = |m: &Moments| -> Result<Moments> {
                    if m.p.len() < n_max + 1 {
                        return Err(Error::Truncation { n: n_max, n_max: m.p.len().saturating_sub(1) });
                    }
                    let extra: f64 = m.p[n_max + 1..].iter().sum();
                    Ok(Moments { p: m.p[..=n_max].to_vec(), tail: m.tail + extra })
                };
                let (ma, mb) = (truncated(ma)?, truncated(mb)?);
                let mut coefficients = Vec::with_capacity((n_max + 1) * (n_max + 1));
                for pn in &ma.p {
                    for pm in &mb.p {
                        coefficients.push(pn * pm);
                    }
                }
                let tail = joint_tail(&ma, &mb);
                let q = obs[i][j];
                let slack = sigma_multiplier * err[i][j];
                rows.push(DecoyRow {
                    band_a: i as u8 + 1,
                    band_b: j as u8 + 1,
                    coefficients,
                    observed: q,
                    error: err[i][j],
                    tail,
                    lower: q - tail - slack,
                    upper: q + slack,
                });
            }
        }
        Ok(Self { basis: stats.basis, kind, n_max, rows })
    }

    pub fn index(&self, n: usize, m: usize) -> usize {
        n * (self.n_max + 1) + m
    }

    /// The LP over this set. Coefficients below 1e-12 of a row's upper bound
    /// are moved into the row's lower bound (their term lies in [0, c]), which
    /// only enlarges the feasible set and keeps the bounds sound.
    fn program(&self, target: usize) -> LinearProgram {
        let k = (self.n_max + 1) * (self.n_max + 1);
        let mut objective = vec![0.0; k];
        objective[target] = 1.0;
        let mut rows = Vec::with_capacity(self.rows.len());
        let mut row_lo = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let cut = NEGLIGIBLE * r.upper.abs();
            let mut dropped = 0.0;
            let coefficients: Vec<f64> = r
                .coefficients
                .iter()
                .enumerate()
                .map(|(j, &c)| {
                    if j != target && c < cut {
                        dropped += c;
                        0.0
                    } else {
                        c
                    }
                })
                .collect();
            rows.push(coefficients);
            row_lo.push(r.lower - dropped);
        }
        LinearProgram {
            objective,
            rows,
            row_lo,
            row_hi: self.rows.iter().map(|r| r.upper).collect(),
            col_lo: vec![0.0; k],
            col_hi: vec![1.0; k],
        }
    }

    /// Certified lower bound on the (n, m) variable.
    pub fn lower_bound(&self, n: usize, m: usize) -> Result<LpBound> {
        let s = simplex::minimize(&self.program(self.index(n, m)))?;
        Ok(LpBound { value: s.certified_bound.clamp(0.0, 1.0), primal: s.primal_objective, status: s.status })
    }

    /// Certified upper bound on the (n, m) variable.
    pub fn upper_bound(&self, n: usize, m: usize) -> Result<LpBound> {
        let s = simplex::maximize(&self.program(self.index(n, m)))?;
        Ok(LpBound { value: s.certified_bound.clamp(0.0, 1.0), primal: s.primal_objective, status: s.status })
    }

    /// Band pairs of the given row indices, for error reports.
    pub fn describe_rows(&self, rows: &[usize]) -> Vec<(u8, u8)> {
        rows.iter().filter_map(|&i| self.rows.get(i)).map(|r| (r.band_a, r.band_b)).collect()
    }
}

impl fmt::Display for DecoyConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            RowKind::Gain => "Y",
            RowKind::ErrorGain => "eY",
        };
        writeln!(f, "# {:?} basis, {name}_nm, n,m <= {}", self.basis, self.n_max)?;
        for r in &self.rows {
            writeln!(
                f,
                "band ({}, {}): observed {:.6e} +- {:.2e}, tail {:.3e}",
                r.band_a, r.band_b, r.observed, r.error, r.tail
            )?;
            write!(f, "  {:.6e} <=", r.lower)?;
            let mut first = true;
            for n in 0..=self.n_max {
                for m in 0..=self.n_max {
                    let c = r.coefficients[self.index(n, m)];
                    if c > 0.0 {
                        write!(f, "{} {c:.4e}*{name}{n}{m}", if first { "" } else { " +" })?;
                        first = false;
                    }
                }
            }
            writeln!(f, " <= {:.6e}", r.upper)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpBound {
    /// Certified value, clamped to [0, 1].
    pub value: f64,
    /// Objective at the simplex point.
    pub primal: f64,
    #[serde(skip, default = "optimal")]
    pub status: LpStatus,
}

fn optimal() -> LpStatus {
    LpStatus::Optimal
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldBounds {
    pub y11_lower: f64,
    pub e11y11_upper: f64,
    pub e11_upper: f64,
}

/// Phase error bound from the two LP results. Capped at 1/2; a vanishing
/// yield bound makes the ratio meaningless and the cap is used.
pub fn e11_upper(y11_lower: f64, e11y11_upper: f64) -> f64 {
    if y11_lower > 0.0 {
        (e11y11_upper / y11_lower).min(0.5)
    } else {
        0.5
    }
}

fn with_rows(set: &DecoyConstraintSet, e: Error) -> Error {
    match e {
        Error::Infeasible { rows } => Error::InconsistentStatistics(format!(
            "{:?} basis {:?} rows infeasible at band pairs {:?}",
            set.basis,
            set.kind,
            set.describe_rows(&rows)
        )),
        other => other,
    }
}

pub fn solve_y11_lower(gains: &DecoyConstraintSet) -> Result<f64> {
    gains.lower_bound(1, 1).map(|b| b.value).map_err(|e| with_rows(gains, e))
}

pub fn solve_e11y11_upper(errors: &DecoyConstraintSet) -> Result<f64> {
    errors.upper_bound(1, 1).map(|b| b.value).map_err(|e| with_rows(errors, e))
}

/// Both LPs for one basis's statistics.
pub fn yield_bounds(stats: &BasisStatistics, n_max: usize, sigma_multiplier: f64) -> Result<YieldBounds> {
    stats.check()?;
    let gains = DecoyConstraintSet::from_statistics(stats, RowKind::Gain, n_max, sigma_multiplier)?;
    let errors = DecoyConstraintSet::from_statistics(stats, RowKind::ErrorGain, n_max, sigma_multiplier)?;
    let y11_lower = solve_y11_lower(&gains)?;
    let e11y11_upper = solve_e11y11_upper(&errors)?;
    Ok(YieldBounds { y11_lower, e11y11_upper, e11_upper: e11_upper(y11_lower, e11y11_upper) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::poisson_kernel;

    fn moments(mu: f64, n_max: usize) -> Moments {
        let p: Vec<f64> = (0..=n_max).map(|n| (-mu).exp() * poisson_kernel(n, mu, 0.0)).collect();
        let tail = 1.0 - p.iter().sum::<f64>();
        Moments { p, tail: tail.max(0.0) }
    }

    /// Point-intensity statistics from a known yield table.
    fn synthetic(y: impl Fn(usize, usize) -> f64, mus: [f64; 3], n_max: usize) -> BasisStatistics {
        let truth_n = 40;
        let mut gains = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = (moments(mus[i], truth_n), moments(mus[j], truth_n));
                let mut q = 0.0;
                for n in 0..=truth_n {
                    for m in 0..=truth_n {
                        q += a.p[n] * b.p[m] * y(n, m);
                    }
                }
                gains[i][j] = q;
            }
        }
        let ms: Vec<Moments> = mus.iter().map(|&mu| moments(mu, n_max)).collect();
        BasisStatistics {
            basis: Basis::Z,
            gains,
            error_gains: gains.map(|r| r.map(|q| 0.1 * q)),
            gain_errors: [[0.0; 3]; 3],
            error_gain_errors: [[0.0; 3]; 3],
            moments_a: ms.clone(),
            moments_b: ms,
            converged: true,
        }
    }

    #[test]
    fn bound_brackets_true_yield() {
        let y = |n: usize, m: usize| 1.0 - 0.7f64.powi(n as i32) * 0.6f64.powi(m as i32) * if n + m == 0 { 0.999 } else { 1.0 };
        let stats = synthetic(y, [0.01, 0.1, 0.5], 8);
        let b = yield_bounds(&stats, 8, 1.0).unwrap();
        let truth = y(1, 1);
        assert!(b.y11_lower <= truth + 1e-12, "{} > {truth}", b.y11_lower);
        assert!(b.y11_lower > 0.0);
        assert!(b.e11y11_upper >= 0.1 * truth - 1e-12);
        assert!(b.e11_upper <= 0.5);
    }

    #[test]
    fn constraint_dump_lists_rows() {
        let stats = synthetic(|_, _| 0.5, [0.01, 0.1, 0.5], 3);
        let set = DecoyConstraintSet::from_statistics(&stats, RowKind::Gain, 3, 1.0).unwrap();
        let text = set.to_string();
        assert_eq!(text.lines().filter(|l| l.starts_with("band")).count(), 9);
        assert!(text.contains("Y11"));
    }

    #[test]
    fn contradictory_rows_are_named() {
        let mut stats = synthetic(|_, _| 0.5, [0.01, 0.1, 0.5], 4);
        stats.gains[0][0] = 0.9;
        stats.gains[0][1] = 0.01;
        stats.error_gains[0][1] = 0.001;
        let err = yield_bounds(&stats, 4, 1.0).unwrap_err();
        assert!(matches!(err, Error::InconsistentStatistics(ref s) if s.contains("infeasible")), "{err}");
    }

    #[test]
    fn zero_yield_bound_caps_phase_error() {
        assert_eq!(e11_upper(0.0, 0.3), 0.5);
        assert_eq!(e11_upper(0.4, 0.1), 0.25);
        assert_eq!(e11_upper(0.1, 0.3), 0.5);
    }
}
