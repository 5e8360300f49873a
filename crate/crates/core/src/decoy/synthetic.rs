//! Forward-synthesized decoy instances: observables generated from a known
//! yield table, used to check that the LP bounds never cut off the truth.

use rand::Rng;

use crate::source::{Basis, Moments};
use crate::statistics::BasisStatistics;

/// Photon number up to which the truth is summed when synthesizing gains.
const TRUTH_N: usize = 40;

/// Exact Poisson weights for a point intensity.
pub fn poisson_moments(mu: f64, n_max: usize) -> Moments {
    let mut p = Vec::with_capacity(n_max + 1);
    let mut w = (-mu).exp();
    for n in 0..=n_max {
        if n > 0 {
            w *= mu / n as f64;
        }
        p.push(w);
    }
    let tail = (1.0 - p.iter().sum::<f64>()).max(0.0);
    Moments { p, tail }
}

/// A known yield table and the statistics it produces.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub intensities_a: [f64; 3],
    pub intensities_b: [f64; 3],
    /// Y_nm for n, m <= 40, indexed [n][m].
    pub yields: Vec<Vec<f64>>,
    /// e_nm·Y_nm on the same grid.
    pub error_yields: Vec<Vec<f64>>,
    pub stats: BasisStatistics,
}

impl SyntheticInstance {
    pub fn y11(&self) -> f64 {
        self.yields[1][1]
    }

    pub fn e11y11(&self) -> f64 {
        self.error_yields[1][1]
    }
}

/// Observables of point-intensity bands for the given truth tables.
pub fn synthesize(
    basis: Basis,
    intensities_a: [f64; 3],
    intensities_b: [f64; 3],
    yields: Vec<Vec<f64>>,
    error_yields: Vec<Vec<f64>>,
    n_max: usize,
) -> SyntheticInstance {
    let full_a: Vec<Moments> = intensities_a.iter().map(|&m| poisson_moments(m, TRUTH_N)).collect();
    let full_b: Vec<Moments> = intensities_b.iter().map(|&m| poisson_moments(m, TRUTH_N)).collect();
    let mut gains = [[0.0; 3]; 3];
    let mut error_gains = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for n in 0..=TRUTH_N {
                for m in 0..=TRUTH_N {
                    let w = full_a[i].p[n] * full_b[j].p[m];
                    gains[i][j] += w * yields[n][m];
                    error_gains[i][j] += w * error_yields[n][m];
                }
            }
        }
    }
    let stats = BasisStatistics {
        basis,
        gains,
        error_gains,
        gain_errors: [[0.0; 3]; 3],
        error_gain_errors: [[0.0; 3]; 3],
        moments_a: intensities_a.iter().map(|&m| poisson_moments(m, n_max)).collect(),
        moments_b: intensities_b.iter().map(|&m| poisson_moments(m, n_max)).collect(),
        converged: true,
    };
    SyntheticInstance { intensities_a, intensities_b, yields, error_yields, stats }
}

/// A random physical-looking instance: threshold-detector yields with random
/// per-party transmittances and dark counts, jittered entry by entry, with
/// random error rates (1/2 for the vacuum).
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, n_max: usize) -> SyntheticInstance {
    let mut bands = || {
        let weak = rng.gen_range(0.0..0.05);
        let mid = rng.gen_range(0.05..0.3);
        let signal = rng.gen_range(0.3..1.0);
        [weak, mid, signal]
    };
    let (mu_a, mu_b) = (bands(), bands());
    let eta_a: f64 = 10f64.powf(rng.gen_range(-3.0..-0.05));
    let eta_b: f64 = 10f64.powf(rng.gen_range(-3.0..-0.05));
    let y00: f64 = 10f64.powf(rng.gen_range(-8.0..-3.0));
    let mut yields = vec![vec![0.0; TRUTH_N + 1]; TRUTH_N + 1];
    let mut error_yields = vec![vec![0.0; TRUTH_N + 1]; TRUTH_N + 1];
    for n in 0..=TRUTH_N {
        for m in 0..=TRUTH_N {
            let pass_a = 1.0 - (1.0 - eta_a).powi(n as i32);
            let pass_b = 1.0 - (1.0 - eta_b).powi(m as i32);
            let ideal = y00 + (1.0 - y00) * 0.5 * pass_a * pass_b;
            let jitter = rng.gen_range(0.8..1.2);
            let y = (ideal * jitter).clamp(0.0, 1.0);
            let e = if n == 0 || m == 0 { 0.5 } else { rng.gen_range(0.0..0.5) };
            yields[n][m] = y;
            error_yields[n][m] = e * y;
        }
    }
    synthesize(Basis::Z, mu_a, mu_b, yields, error_yields, n_max)
}
