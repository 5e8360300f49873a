//! Numerical integration engine.
//!
//! Two strategies sit behind one entry point: globally adaptive subdivision for
//! low dimensions and randomized quasi-Monte Carlo (independently scrambled
//! Sobol' replicates) for four or more. Integrands may be vector-valued so that
//! related observables share evaluation points.
//!
//! Results are deterministic for a given seed: replicates are summed
//! sequentially and combined in a fixed order, so running them on a thread pool
//! does not change the output.

mod adaptive;
pub mod gauss;
pub mod sobol;

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use sobol::ScrambledSobol;

pub use gauss::GaussLegendre;

/// Reported QMC error is this many standard errors of the replicate mean.
pub const QMC_ERROR_SCALE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Adaptive for dimension <= 3, quasi-Monte Carlo above.
    #[default]
    Auto,
    Adaptive,
    QuasiMonteCarlo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegrationSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_evals: usize,
    pub strategy: Strategy,
    pub seed: u64,
    /// Independent scrambles used by the QMC strategy.
    pub replicates: usize,
    /// Points per replicate in the first QMC round (rounded up to a power of two).
    pub min_points: usize,
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-3,
            abs_tol: 1e-300,
            max_evals: 2_000_000,
            strategy: Strategy::Auto,
            seed: 0,
            replicates: 8,
            min_points: 1024,
        }
    }
}

impl IntegrationSettings {
    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(Error::InvalidRequest("tolerances must be positive".into()));
        }
        if dim == 0 || dim > 7.max(sobol::MAX_DIM) {
            return Err(Error::InvalidRequest(format!("dimension {dim} unsupported")));
        }
        if self.replicates < 2 {
            return Err(Error::InvalidRequest("QMC needs at least two replicates".into()));
        }
        Ok(())
    }
}

/// A scalar integral over a box.
pub struct IntegrationRequest<F> {
    pub bounds: Vec<(f64, f64)>,
    pub integrand: F,
    pub settings: IntegrationSettings,
}

impl<F> IntegrationRequest<F> {
    pub fn new(bounds: Vec<(f64, f64)>, integrand: F) -> Self {
        Self { bounds, integrand, settings: IntegrationSettings::default() }
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn rel_tol(mut self, tol: f64) -> Self {
        self.settings.rel_tol = tol;
        self
    }

    pub fn abs_tol(mut self, tol: f64) -> Self {
        self.settings.abs_tol = tol;
        self
    }

    pub fn max_evals(mut self, n: usize) -> Self {
        self.settings.max_evals = n;
        self
    }

    pub fn strategy(mut self, s: Strategy) -> Self {
        self.settings.strategy = s;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.settings.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationResult {
    pub value: f64,
    pub error_estimate: f64,
    pub evals_used: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorResult {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub evals_used: usize,
    pub converged: bool,
}

pub fn integrate<F>(req: &IntegrationRequest<F>) -> Result<IntegrationResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let f = |x: &[f64], out: &mut [f64]| out[0] = (req.integrand)(x);
    let r = integrate_vector(&req.bounds, 1, f, &req.settings)?;
    Ok(IntegrationResult {
        value: r.values[0],
        error_estimate: r.errors[0],
        evals_used: r.evals_used,
        converged: r.converged,
    })
}

/// Integrates a `components`-valued function over the box `bounds`.
///
/// The callback receives the point and a zeroed output slice. Budget
/// exhaustion is not an error: the best estimate comes back with
/// `converged = false`.
pub fn integrate_vector<F>(
    bounds: &[(f64, f64)],
    components: usize,
    f: F,
    settings: &IntegrationSettings,
) -> Result<VectorResult>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let dim = bounds.len();
    settings.validate(dim)?;
    if components == 0 {
        return Err(Error::InvalidRequest("integrand must have at least one component".into()));
    }
    if bounds.iter().any(|(a, b)| !(a.is_finite() && b.is_finite() && b >= a)) {
        return Err(Error::InvalidRequest(format!("bounds must be finite and ordered: {bounds:?}")));
    }
    let strategy = match settings.strategy {
        Strategy::Auto if dim <= 3 => Strategy::Adaptive,
        Strategy::Auto => Strategy::QuasiMonteCarlo,
        s => s,
    };
    match strategy {
        Strategy::Adaptive => adaptive::integrate(bounds, components, &f, settings),
        _ => quasi_monte_carlo(bounds, components, &f, settings),
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

struct Replicate {
    seq: ScrambledSobol,
    sums: Vec<Neumaier>,
}

fn quasi_monte_carlo<F>(
    bounds: &[(f64, f64)],
    comps: usize,
    f: &F,
    settings: &IntegrationSettings,
) -> Result<VectorResult>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let dim = bounds.len();
    let volume: f64 = bounds.iter().map(|(a, b)| b - a).product();
    let mut reps = (0..settings.replicates)
        .map(|r| {
            let seed = crate::seeding::mix(settings.seed, r as u64);
            Ok(Replicate { seq: ScrambledSobol::scrambled(dim, seed)?, sums: vec![Neumaier::default(); comps] })
        })
        .collect::<Result<Vec<_>>>()?;

    let r_count = settings.replicates;
    let mut n_done = 0usize;
    let mut n_target = settings.min_points.max(8).next_power_of_two();
    loop {
        let (lo, hi) = (n_done, n_target);
        reps.par_iter_mut().try_for_each(|rep| -> Result<()> {
            let mut u = vec![0.0; dim];
            let mut x = vec![0.0; dim];
            let mut out = vec![0.0; comps];
            for i in lo..hi {
                rep.seq.point(i as u32, &mut u);
                for k in 0..dim {
                    let (a, b) = bounds[k];
                    x[k] = a + (b - a) * u[k];
                }
                out.iter_mut().for_each(|v| *v = 0.0);
                f(&x, &mut out);
                for (s, v) in rep.sums.iter_mut().zip(&out) {
                    if !v.is_finite() {
                        return Err(Error::NonFiniteIntegrand { point: x.clone() });
                    }
                    s.add(*v);
                }
            }
            Ok(())
        })?;
        n_done = n_target;

        let mut values = vec![0.0; comps];
        let mut errors = vec![0.0; comps];
        for j in 0..comps {
            let est: Vec<f64> = reps.iter().map(|r| volume * r.sums[j].total() / n_done as f64).collect();
            let mean = est.iter().sum::<f64>() / r_count as f64;
            let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (r_count as f64 - 1.0);
            values[j] = mean;
            errors[j] = QMC_ERROR_SCALE * (var / r_count as f64).sqrt();
        }
        let evals_used = n_done * r_count;
        let converged = values
            .iter()
            .zip(&errors)
            .all(|(v, e)| *e <= (settings.rel_tol * v.abs()).max(settings.abs_tol));
        if converged || 2 * evals_used > settings.max_evals || n_done >= (1usize << 31) {
            return Ok(VectorResult { values, errors, evals_used, converged });
        }
        n_target = 2 * n_done;
    }
}

/// Average of a 2π-periodic function, (1/2π)∫₀^{2π} f.
///
/// Uses the trapezoid rule, which converges geometrically for smooth
/// periodic integrands, doubling the node count until two levels agree.
pub fn phase_average<F: Fn(f64) -> f64>(f: F) -> f64 {
    let mut n = 8usize;
    let mut sum: f64 = (0..n).map(|k| f(TAU * k as f64 / n as f64)).sum();
    let mut avg = sum / n as f64;
    let scale = |v: f64, s: f64| v.abs().max(s);
    let mut level_scale = (0..n).map(|k| f(TAU * k as f64 / n as f64).abs()).fold(0.0, f64::max);
    while n < 1 << 16 {
        // New nodes are the midpoints of the current grid.
        let mut extra = 0.0;
        for k in 0..n {
            let v = f(TAU * (k as f64 + 0.5) / n as f64);
            level_scale = level_scale.max(v.abs());
            extra += v;
        }
        sum += extra;
        n *= 2;
        let next = sum / n as f64;
        let done = (next - avg).abs() <= 1e-15 * scale(next, level_scale);
        avg = next;
        if done {
            break;
        }
    }
    avg
}

/// Fixed equispaced phase grid for fused kernels that average over φ_R.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    pub sin: Vec<f64>,
    pub cos: Vec<f64>,
}

impl PhaseGrid {
    pub fn new(nodes: usize) -> Self {
        let nodes = nodes.max(1);
        let (sin, cos) = (0..nodes)
            .map(|k| (TAU * k as f64 / nodes as f64).sin_cos())
            .unzip();
        Self { sin, cos }
    }

    pub fn len(&self) -> usize {
        self.sin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sin.is_empty()
    }

    pub fn average<F: FnMut(f64, f64) -> f64>(&self, mut f: F) -> f64 {
        let s: f64 = self.sin.iter().zip(&self.cos).map(|(&s, &c)| f(s, c)).sum();
        s / self.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn bessel_i0(x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= (x / 2.0) * (x / 2.0) / (k as f64 * k as f64);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum
    }

    #[test]
    fn line_integral_is_exact() {
        let r = integrate(&IntegrationRequest::new(vec![(0.0, 1.0)], |x: &[f64]| x[0]).rel_tol(1e-12)).unwrap();
        assert!((r.value - 0.5).abs() < 1e-10);
        assert!(r.converged);
    }

    #[test]
    fn separable_seven_dimensional_product() {
        let req = IntegrationRequest::new(vec![(0.0, TAU); 7], |x: &[f64]| {
            x.iter().map(|v| v.sin().powi(2)).product::<f64>()
        })
        .rel_tol(1e-3)
        .seed(11);
        let r = integrate(&req).unwrap();
        let exact = PI.powi(7);
        assert!(((r.value - exact) / exact).abs() < 1e-3, "{} vs {exact}", r.value);
        assert!(r.converged);
    }

    #[test]
    fn adaptive_handles_two_and_three_dimensions() {
        let req = IntegrationRequest::new(vec![(0.0, 1.0), (0.0, 2.0)], |x: &[f64]| (x[0] * x[1]).exp())
            .rel_tol(1e-10);
        let r = integrate(&req).unwrap();
        // ∫₀¹∫₀² e^{xy} dy dx = ∫₀¹ (e^{2x} - 1)/x dx = Ei(2) - ln 2 - γ
        let exact = 3.683_871_510_540_412;
        assert!((r.value - exact).abs() < 1e-9, "{}", r.value);

        let req3 = IntegrationRequest::new(vec![(0.0, 1.0); 3], |x: &[f64]| x[0] * x[1] * x[1] * x[2].powi(3))
            .rel_tol(1e-12);
        let r3 = integrate(&req3).unwrap();
        assert!((r3.value - 1.0 / 24.0).abs() < 1e-14);
    }

    #[test]
    fn genz_malik_is_exact_for_degree_seven() {
        let settings = IntegrationSettings { max_evals: 10, ..Default::default() };
        let r = integrate_vector(
            &[(-1.0, 2.0), (0.0, 1.0)],
            1,
            |x, o| o[0] = x[0].powi(6) * x[1] + x[0] * x[1].powi(5),
            &settings,
        )
        .unwrap();
        let exact = (2f64.powi(7) + 1.0) / 7.0 / 2.0 + (4.0 - 1.0) / 2.0 / 6.0;
        assert!((r.values[0] - exact).abs() < 1e-12, "{} vs {exact}", r.values[0]);
    }

    #[test]
    fn nan_integrand_reports_point() {
        let req = IntegrationRequest::new(vec![(0.0, 1.0)], |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { 1.0 });
        match integrate(&req) {
            Err(Error::NonFiniteIntegrand { point }) => assert!(point[0] > 0.5),
            other => panic!("unexpected {other:?}"),
        }
        let qmc = IntegrationRequest::new(vec![(0.0, 1.0); 5], |x: &[f64]| 1.0 / (x[0] - x[0]) * 0.0);
        assert!(matches!(integrate(&qmc), Err(Error::NonFiniteIntegrand { .. })));
    }

    #[test]
    fn exhausted_budget_is_flagged_not_fatal() {
        let req = IntegrationRequest::new(vec![(0.0, 1.0); 5], |x: &[f64]| (40.0 * x.iter().sum::<f64>()).sin())
            .rel_tol(1e-12)
            .max_evals(50_000);
        let r = integrate(&req).unwrap();
        assert!(!r.converged);
        assert!(r.evals_used <= 50_000);
    }

    #[test]
    fn deterministic_replay() {
        let mk = || {
            IntegrationRequest::new(vec![(0.0, 1.0); 6], |x: &[f64]| (x[0] + x[3] * x[5]).cos()).seed(99)
        };
        let a = integrate(&mk()).unwrap();
        let b = integrate(&mk()).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.error_estimate.to_bits(), b.error_estimate.to_bits());
    }

    #[test]
    fn phase_average_basics() {
        assert!((phase_average(|_| 2.5) - 2.5).abs() < 1e-15);
        assert!(phase_average(f64::sin).abs() < 1e-12);
        let a = 1.0;
        let got = phase_average(|p| (-a * (1.0 - p.sin())).exp());
        let want = (-a).exp() * bessel_i0(a);
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn phase_grid_matches_adaptive_average() {
        let g = PhaseGrid::new(16);
        let got = g.average(|s, c| (0.7 * s + 0.2 * c).exp());
        let want = phase_average(|p| (0.7 * p.sin() + 0.2 * p.cos()).exp());
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn linearity_within_error_bounds() {
        let f = |x: &[f64]| (x[0] * x[1] + x[2]).exp();
        let g = |x: &[f64]| x[3].powi(2) * (x[1] - x[0]).cos();
        let b = vec![(0.0, 1.0); 4];
        let s = IntegrationSettings { seed: 5, rel_tol: 1e-6, ..Default::default() };
        let run = |h: &(dyn Fn(&[f64]) -> f64 + Sync)| integrate_vector(&b, 1, |x, o| o[0] = h(x), &s).unwrap();
        let rf = run(&f);
        let rg = run(&g);
        let rc = run(&|x: &[f64]| 2.0 * f(x) - 3.0 * g(x));
        let combined = 2.0 * rf.values[0] - 3.0 * rg.values[0];
        let tol = rc.errors[0] + 2.0 * rf.errors[0] + 3.0 * rg.errors[0];
        assert!((rc.values[0] - combined).abs() <= tol.max(1e-12));
    }
}
