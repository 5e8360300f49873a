//! Relay outcome probabilities for exact photon-number inputs.
//!
//! With n photons from Alice and m from Bob in (phase-randomized) polarization
//! modes, the probability that a set T of detectors stays dark is
//!
//!   N_T = (1 - p_d)^|T| · Σ_k C(n,k) C(m,k) (g_T²/4)^k A_T^(n-k) B_T^(m-k)
//!
//! where A_T, B_T are the single-photon probabilities of missing T and g_T is
//! the two-photon interference amplitude seen by T. This is the Fock-basis
//! expansion of the phase-averaged coherent-state result, so Σ P_n P_m Y_nm
//! reproduces the coherent gain exactly. Two-click patterns follow by
//! inclusion-exclusion over the other two detectors.

use serde::{Deserialize, Serialize};

use crate::channel::{C_H, C_V, D_H, D_V};

/// Normalized polarization mode after the channel: fractions h + v = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polarization {
    pub h: f64,
    pub v: f64,
    pub phi: f64,
}

impl Polarization {
    /// From a Bloch polar angle and azimuth.
    pub fn from_bloch(theta_hv: f64, phi: f64) -> Self {
        let (s, c) = (0.5 * theta_hv).sin_cos();
        Self { h: c * c, v: s * s, phi }
    }
}

/// Y_nm tables for both Bell outcomes, indexed [n][m].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FockYields {
    pub psi_minus: Vec<Vec<f64>>,
    pub psi_plus: Vec<Vec<f64>>,
}

impl FockYields {
    pub fn gain(&self, n: usize, m: usize) -> f64 {
        self.psi_minus[n][m] + self.psi_plus[n][m]
    }
}

const PSI_MINUS_PATTERNS: [(usize, usize); 2] = [(C_H, D_V), (C_V, D_H)];
const PSI_PLUS_PATTERNS: [(usize, usize); 2] = [(C_H, C_V), (D_H, D_V)];

fn binomials(n: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..=n {
        c[i][0] = 1.0;
        for k in 1..=i {
            c[i][k] = c[i - 1][k - 1] + if k < i { c[i - 1][k] } else { 0.0 };
        }
    }
    c
}

fn powers(x: f64, n: usize) -> Vec<f64> {
    let mut p = vec![1.0; n + 1];
    for k in 1..=n {
        p[k] = p[k - 1] * x;
    }
    p
}

/// Yields for all photon pairs up to `n_max`, at arm transmittance `eta`.
pub fn fock_yields(a: &Polarization, b: &Polarization, eta: f64, dark_count_prob: f64, n_max: usize) -> FockYields {
    let binom = binomials(n_max);
    let keep = 1.0 - dark_count_prob;
    let cd = (a.phi - b.phi).cos();
    let amp_h = (a.h * b.h).sqrt();
    let amp_v = (a.v * b.v).sqrt();

    // light[T][n][m]: probability that no photon reaches the detector set T
    // (bit i = detector i). Dark counts are folded in afterwards so the
    // inclusion-exclusion below does not cancel the (1 - p_d) factors numerically.
    let mut light = vec![vec![vec![0.0; n_max + 1]; n_max + 1]; 16];
    for (t, table) in light.iter_mut().enumerate() {
        let has = |d: usize| ((t >> d) & 1) as f64;
        let count_h = has(C_H) + has(D_H);
        let count_v = has(C_V) + has(D_V);
        let miss_a = 1.0 - 0.5 * eta * (a.h * count_h + a.v * count_v);
        let miss_b = 1.0 - 0.5 * eta * (b.h * count_h + b.v * count_v);
        let xh = (has(D_H) - has(C_H)) * amp_h;
        let xv = (has(D_V) - has(C_V)) * amp_v;
        let g2 = eta * eta * (xh * xh + xv * xv + 2.0 * xh * xv * cd).max(0.0);
        let pa = powers(miss_a.max(0.0), n_max);
        let pb = powers(miss_b.max(0.0), n_max);
        let pg = powers(0.25 * g2, n_max);
        for n in 0..=n_max {
            for m in 0..=n_max {
                let mut s = 0.0;
                for k in 0..=n.min(m) {
                    s += binom[n][k] * binom[m][k] * pg[k] * pa[n - k] * pb[m - k];
                }
                table[n][m] = s;
            }
        }
    }

    // With keep = 1 - p_d, the pattern probability
    //   keep^2 L_r - keep^3 (L_rk + L_rl) + keep^4 L_all
    // regrouped by powers of p_d.
    let all = 0b1111usize;
    let pd = dark_count_prob;
    let pattern = |(k, l): (usize, usize), n: usize, m: usize| {
        let rest = all & !(1 << k) & !(1 << l);
        let (l0, l1, l2, l3) =
            (light[rest][n][m], light[rest | 1 << k][n][m], light[rest | 1 << l][n][m], light[all][n][m]);
        let both = l0 - l1 - l2 + l3;
        let one = (l1 - l3) + (l2 - l3);
        keep * keep * (both + pd * one + pd * pd * l3)
    };
    let mut psi_minus = vec![vec![0.0; n_max + 1]; n_max + 1];
    let mut psi_plus = vec![vec![0.0; n_max + 1]; n_max + 1];
    for n in 0..=n_max {
        for m in 0..=n_max {
            psi_minus[n][m] = PSI_MINUS_PATTERNS.iter().map(|&p| pattern(p, n, m)).sum::<f64>().max(0.0);
            psi_plus[n][m] = PSI_PLUS_PATTERNS.iter().map(|&p| pattern(p, n, m)).sum::<f64>().max(0.0);
        }
    }
    FockYields { psi_minus, psi_plus }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{phase_averaged_outcome, ArrivedState};
    use crate::cubature::PhaseGrid;

    const H: Polarization = Polarization { h: 1.0, v: 0.0, phi: 0.0 };
    const V: Polarization = Polarization { h: 0.0, v: 1.0, phi: 0.0 };

    #[test]
    fn vacuum_yield_is_dark_count_combinatorics() {
        let pd = 1e-6;
        let y = fock_yields(&H, &V, 0.3, pd, 2);
        let want = 4.0 * pd * pd * (1.0 - pd) * (1.0 - pd);
        assert!((y.gain(0, 0) - want).abs() < 1e-24);
        let y = fock_yields(&H, &V, 0.3, 0.0, 2);
        assert_eq!(y.gain(0, 0), 0.0);
        assert!(y.gain(1, 0).abs() < 1e-16);
    }

    #[test]
    fn single_photon_pairs() {
        let y = fock_yields(&H, &V, 1.0, 0.0, 1);
        assert!((y.gain(1, 1) - 1.0).abs() < 1e-15);
        assert!((y.psi_minus[1][1] - 0.5).abs() < 1e-15);
        // Hong-Ou-Mandel: identical photons never split.
        let y = fock_yields(&H, &H, 1.0, 0.0, 1);
        assert!(y.gain(1, 1).abs() < 1e-15);
        // Diagonal photons: psi- flags anticorrelation only.
        let plus = Polarization { h: 0.5, v: 0.5, phi: 0.0 };
        let minus = Polarization { h: 0.5, v: 0.5, phi: std::f64::consts::PI };
        let same = fock_yields(&plus, &plus, 1.0, 0.0, 1);
        let diff = fock_yields(&plus, &minus, 1.0, 0.0, 1);
        assert!(same.psi_minus[1][1].abs() < 1e-15 && (same.psi_plus[1][1] - 0.5).abs() < 1e-15);
        assert!(diff.psi_plus[1][1].abs() < 1e-15 && (diff.psi_minus[1][1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn poisson_mixture_reproduces_coherent_gain() {
        let a = Polarization::from_bloch(0.3, 0.2);
        let b = Polarization::from_bloch(2.5, 1.7);
        let (mu_a, mu_b, eta, pd) = (0.4, 0.25, 0.6, 1e-3);
        let n_max = 30;
        let y = fock_yields(&a, &b, eta, pd, n_max);
        let pois = |mu: f64| {
            let mut p = vec![(-mu).exp(); n_max + 1];
            for k in 1..=n_max {
                p[k] = p[k - 1] * mu / k as f64;
            }
            p
        };
        let (pa, pb) = (pois(mu_a), pois(mu_b));
        let (mut minus, mut plus) = (0.0, 0.0);
        for n in 0..=n_max {
            for m in 0..=n_max {
                minus += pa[n] * pb[m] * y.psi_minus[n][m];
                plus += pa[n] * pb[m] * y.psi_plus[n][m];
            }
        }
        let arrive = |p: &Polarization, mu: f64| ArrivedState { mu_h: eta * mu * p.h, mu_v: eta * mu * p.v, phi_hv: p.phi };
        let coherent = phase_averaged_outcome(&arrive(&a, mu_a), &arrive(&b, mu_b), pd, &PhaseGrid::new(32));
        assert!((minus - coherent.p_psi_minus).abs() < 1e-14, "{minus} vs {}", coherent.p_psi_minus);
        assert!((plus - coherent.p_psi_plus).abs() < 1e-14);
    }
}
