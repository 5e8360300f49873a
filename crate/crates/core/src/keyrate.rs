//! Asymptotic key rates: passive layouts, the small-ring refinement, the
//! active three-intensity baseline, and the layout optimizer.

use std::f64::consts::FRAC_PI_4;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::decoy::{yield_bounds, YieldBounds};
use crate::error::{Error, Result};
use crate::source::{Basis, BasisState, RegionId, RegionLayout, Sector};
use crate::statistics::{
    observe, pair_observables, ring_observables, BasisStatistics, ObservedStatistics, PairSpec, RingObservables,
    StatsCache, StatsSettings,
};

pub const DEFAULT_F_EC: f64 = 1.16;

/// h2(x) in bits.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain { value: x, domain: "[0, 1]" });
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

fn h2_clamped(x: f64) -> f64 {
    binary_entropy(x.clamp(0.0, 1.0)).unwrap_or(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateInputs {
    pub p_z_a: f64,
    pub p_z_b: f64,
    /// <P_1> over each party's key region.
    pub p1_a: f64,
    pub p1_b: f64,
    pub y11_lower: f64,
    pub e11_upper: f64,
    pub q_z: f64,
    pub qe_z: f64,
    pub f_ec: f64,
}

impl KeyRateInputs {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_z_a", self.p_z_a),
            ("p_z_b", self.p_z_b),
            ("p1_a", self.p1_a),
            ("p1_b", self.p1_b),
            ("y11_lower", self.y11_lower),
            ("e11_upper", self.e11_upper),
            ("q_z", self.q_z),
            ("qe_z", self.qe_z),
        ];
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidRequest(format!("{name} = {v} is not a probability")));
            }
        }
        if !(self.f_ec >= 1.0) {
            return Err(Error::Domain { value: self.f_ec, domain: "f_ec >= 1" });
        }
        Ok(())
    }

    /// Per-pulse privacy amplification term before sifting.
    pub fn privacy_term(&self) -> f64 {
        self.p1_a * self.p1_b * self.y11_lower * (1.0 - h2_clamped(self.e11_upper))
    }

    /// Error-correction leakage for a given gain and error gain.
    pub fn leakage(&self, q: f64, qe: f64) -> f64 {
        if q > 0.0 {
            self.f_ec * q * h2_clamped(qe / q)
        } else {
            0.0
        }
    }

    pub fn qber(&self) -> f64 {
        if self.q_z > 0.0 {
            self.qe_z / self.q_z
        } else {
            0.0
        }
    }
}

/// R = p_zA p_zB [p1A p1B Y11 (1 - h2(e11)) - f Q h2(E)], floored at 0.
pub fn key_rate(inputs: &KeyRateInputs) -> f64 {
    if !(inputs.q_z > 0.0) {
        return 0.0;
    }
    let r = inputs.p_z_a * inputs.p_z_b * (inputs.privacy_term() - inputs.leakage(inputs.q_z, inputs.qe_z));
    r.max(0.0)
}

/// Polar-angle rings of one party's key region. Weights are mass fractions of
/// the region and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingPartition {
    pub ring_edges: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RingPartition {
    pub fn new(ring_edges: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || ring_edges.len() != weights.len() + 1 {
            return Err(Error::InvalidPartition(format!(
                "{} edges for {} rings",
                ring_edges.len(),
                weights.len()
            )));
        }
        if ring_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidPartition("ring edges must increase strictly".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidPartition("ring weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPartition(format!("ring weights sum to {total}")));
        }
        Ok(Self { ring_edges, weights })
    }

    pub fn single(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo, hi], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Ring-averaged rate: each ring pair keeps the shared privacy term and pays
/// its own error-correction leakage; per-pair rates are floored at 0.
pub fn small_ring_rate(
    inputs: &KeyRateInputs,
    partition_a: &RingPartition,
    partition_b: &RingPartition,
    gains: &[Vec<f64>],
    error_gains: &[Vec<f64>],
) -> Result<f64> {
    if partition_a.is_empty() || partition_b.is_empty() {
        return Err(Error::InvalidPartition("at least one ring is required".into()));
    }
    let shape_ok = |m: &[Vec<f64>]| m.len() == partition_a.len() && m.iter().all(|r| r.len() == partition_b.len());
    if !shape_ok(gains) || !shape_ok(error_gains) {
        return Err(Error::InvalidPartition("per-ring observables do not match the partitions".into()));
    }
    let privacy = inputs.privacy_term();
    let sift = inputs.p_z_a * inputs.p_z_b;
    let mut total = 0.0;
    for (i, wa) in partition_a.weights.iter().enumerate() {
        for (j, wb) in partition_b.weights.iter().enumerate() {
            let r = sift * (privacy - inputs.leakage(gains[i][j], error_gains[i][j]));
            total += wa * wb * r.max(0.0);
        }
    }
    Ok(total)
}

pub fn small_ring_rate_from(inputs: &KeyRateInputs, rings: &RingObservables) -> Result<f64> {
    let p = RingPartition::new(rings.edges.clone(), rings.weights.clone())?;
    small_ring_rate(inputs, &p, &p, &rings.gains, &rings.error_gains)
}

/// Inputs, bounds and statistics behind one rate evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rate: f64,
    pub inputs: KeyRateInputs,
    pub bounds: YieldBounds,
    pub converged: bool,
}

/// Rate of a passive layout from already computed statistics.
pub fn passive_inputs(stats: &ObservedStatistics, settings: &StatsSettings, f_ec: f64) -> Result<(KeyRateInputs, YieldBounds)> {
    let z = yield_bounds(&stats.z, settings.n_max, 1.0)?;
    let x = yield_bounds(&stats.x, settings.n_max, 1.0)?;
    let p_z = stats.key_region_prob();
    let inputs = KeyRateInputs {
        p_z_a: p_z,
        p_z_b: p_z,
        p1_a: stats.z.moments_a[2].p[1],
        p1_b: stats.z.moments_b[2].p[1],
        y11_lower: z.y11_lower,
        e11_upper: x.e11_upper,
        q_z: stats.q_z().clamp(0.0, 1.0),
        qe_z: stats.qe_z().clamp(0.0, 1.0),
        f_ec,
    };
    inputs.validate()?;
    Ok((inputs, YieldBounds { y11_lower: z.y11_lower, e11y11_upper: x.e11y11_upper, e11_upper: x.e11_upper }))
}

pub fn passive_rate(
    layout: &RegionLayout,
    channel: &ChannelParams,
    settings: &StatsSettings,
    f_ec: f64,
    cache: Option<&StatsCache>,
) -> Result<RateReport> {
    let stats = observe(layout, channel, settings, cache)?;
    let (inputs, bounds) = passive_inputs(&stats, settings, f_ec)?;
    Ok(RateReport { rate: key_rate(&inputs), inputs, bounds, converged: stats.converged() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallRingReport {
    pub rate: f64,
    pub improved: f64,
    pub rings: usize,
    /// Improved rate with twice as many rings, when requested.
    pub doubled: Option<f64>,
    pub converged: bool,
}

pub fn passive_small_ring(
    layout: &RegionLayout,
    channel: &ChannelParams,
    settings: &StatsSettings,
    f_ec: f64,
    rings: usize,
    check_doubling: bool,
    cache: Option<&StatsCache>,
) -> Result<SmallRingReport> {
    let base = passive_rate(layout, channel, settings, f_ec, cache)?;
    let obs = ring_observables(layout, channel, settings, rings, cache)?;
    let improved = small_ring_rate_from(&base.inputs, &obs)?;
    let mut converged = base.converged && obs.converged;
    let doubled = if check_doubling {
        let fine = ring_observables(layout, channel, settings, 2 * rings, cache)?;
        converged &= fine.converged;
        Some(small_ring_rate_from(&base.inputs, &fine)?)
    } else {
        None
    };
    Ok(SmallRingReport { rate: base.rate, improved, rings, doubled, converged })
}

/// Basis statistics for point intensities and ideal BB84 states.
pub fn active_statistics(
    basis: Basis,
    intensities: [f64; 3],
    channel: &ChannelParams,
    settings: &StatsSettings,
) -> Result<BasisStatistics> {
    let sector = |mu: f64| match basis {
        Basis::Z => Sector::point(mu, 0.0, 0.0),
        Basis::X => Sector::point(mu / (2.0 * FRAC_PI_4.cos()), FRAC_PI_4, 0.0),
    };
    let mut s = BasisStatistics {
        basis,
        gains: [[0.0; 3]; 3],
        error_gains: [[0.0; 3]; 3],
        gain_errors: [[0.0; 3]; 3],
        error_gain_errors: [[0.0; 3]; 3],
        moments_a: intensities.iter().map(|&m| sector(m).moments(settings.n_max)).collect(),
        moments_b: Vec::new(),
        converged: true,
    };
    s.moments_b = s.moments_a.clone();
    for i in 0..3 {
        for j in 0..3 {
            let spec = PairSpec::basis_from_sectors(basis, sector(intensities[i]), sector(intensities[j]));
            let o = pair_observables(&spec, channel, settings, None)?;
            s.gains[i][j] = o.gain;
            s.error_gains[i][j] = o.error_gain;
            s.gain_errors[i][j] = o.gain_error;
            s.error_gain_errors[i][j] = o.error_gain_error;
            s.converged &= o.converged;
        }
    }
    s.check()?;
    Ok(s)
}

/// Active MDI rate with intensities (weak, middle, signal), signal used for the
/// key and basis choice taken in the efficient limit p_z -> 1.
pub fn active_baseline(
    channel: &ChannelParams,
    intensities: [f64; 3],
    settings: &StatsSettings,
    f_ec: f64,
) -> Result<RateReport> {
    for &mu in &intensities {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::Domain { value: mu, domain: "intensity in [0, 1]" });
        }
    }
    let zero = YieldBounds { y11_lower: 0.0, e11y11_upper: 0.0, e11_upper: 0.5 };
    let signal = intensities[2];
    if signal == 0.0 {
        let inputs =
            KeyRateInputs { p_z_a: 1.0, p_z_b: 1.0, p1_a: 0.0, p1_b: 0.0, y11_lower: 0.0, e11_upper: 0.5, q_z: 0.0, qe_z: 0.0, f_ec };
        return Ok(RateReport { rate: 0.0, inputs, bounds: zero, converged: true });
    }
    let z = active_statistics(Basis::Z, intensities, channel, settings)?;
    let x = active_statistics(Basis::X, intensities, channel, settings)?;
    let bz = yield_bounds(&z, settings.n_max, 1.0)?;
    let bx = yield_bounds(&x, settings.n_max, 1.0)?;
    let p1 = signal * (-signal).exp();
    let inputs = KeyRateInputs {
        p_z_a: 1.0,
        p_z_b: 1.0,
        p1_a: p1,
        p1_b: p1,
        y11_lower: bz.y11_lower,
        e11_upper: bx.e11_upper,
        q_z: z.gains[2][2].clamp(0.0, 1.0),
        qe_z: z.error_gains[2][2].clamp(0.0, 1.0),
        f_ec,
    };
    let bounds = YieldBounds { y11_lower: bz.y11_lower, e11y11_upper: bx.e11y11_upper, e11_upper: bx.e11_upper };
    Ok(RateReport { rate: key_rate(&inputs), inputs, bounds, converged: z.converged && x.converged })
}

/// Active baseline with the three intensities optimized in (0, 1]. The
/// search runs over signal s, middle = a·s and weak = b·a·s so every box
/// point keeps the intensities ordered.
pub fn optimize_active(
    channel: &ChannelParams,
    settings: &StatsSettings,
    f_ec: f64,
    sweeps: usize,
) -> Result<([f64; 3], RateReport)> {
    let to_mu = |p: [f64; 3]| [p[0] * p[1] * p[2], p[1] * p[2], p[2]];
    let eval = |p: [f64; 3]| active_baseline(channel, to_mu(p), settings, f_ec).map(|r| r.rate).unwrap_or(f64::NEG_INFINITY);
    let ranges = [(1e-3, 0.5), (0.02, 0.8), (0.05, 1.0)];
    let mut best = [0.05, 0.2, 0.5];
    let mut best_f = eval(best);
    for &s in &[0.2, 0.4, 0.6, 0.8, 1.0] {
        for &a in &[0.05, 0.15, 0.4] {
            let p = [best[0], a, s];
            let v = eval(p);
            if v > best_f {
                best = p;
                best_f = v;
            }
        }
    }
    for _ in 0..sweeps {
        for k in [2, 1, 0] {
            let (x, v, _) = golden_section_max(
                |t| {
                    let mut p = best;
                    p[k] = t;
                    eval(p)
                },
                ranges[k].0,
                ranges[k].1,
                1e-3,
                40,
            );
            if v > best_f {
                best[k] = x;
                best_f = v;
            }
        }
    }
    let mu = to_mu(best);
    Ok((mu, active_baseline(channel, mu, settings, f_ec)?))
}

/// Golden-section maximization of a unimodal function on [lo, hi].
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> (f64, f64, bool) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let (mut best_x, mut best_f) = if fc >= fd { (c, fc) } else { (d, fd) };
    let consider = |x: f64, v: f64, bx: &mut f64, bf: &mut f64| {
        if v > *bf {
            *bx = x;
            *bf = v;
        }
    };
    for (x, v) in [(lo, f(lo)), (hi, f(hi))] {
        consider(x, v, &mut best_x, &mut best_f);
    }
    let mut iter = 0;
    while (b - a) > tol * (1.0 + best_x.abs()) {
        if iter >= max_iter {
            return (best_x, best_f, false);
        }
        iter += 1;
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
            consider(c, fc, &mut best_x, &mut best_f);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
            consider(d, fd, &mut best_x, &mut best_f);
        }
    }
    (best_x, best_f, true)
}

/// Search box of the layout optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub delta_z: (f64, f64),
    /// Upper end of t3; the lower end is just above t2.
    pub t3_max: f64,
    /// Coarse grid points per axis.
    pub grid: usize,
    /// Coordinate sweeps of golden-section refinement.
    pub sweeps: usize,
    /// Relative bracket tolerance of each line search.
    pub tol: f64,
    pub max_evals: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self { delta_z: (0.001, 0.05), t3_max: 0.99, grid: 5, sweeps: 2, tol: 0.05, max_evals: 120 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedLayout {
    pub layout: RegionLayout,
    pub report: RateReport,
    pub evaluations: usize,
    /// False when the evaluation budget ran out.
    pub converged: bool,
}

/// Maximizes f over a box on (x, y) by a coarse grid followed by coordinate
/// golden-section sweeps. Returns ((x, y), value, evaluations, converged).
pub fn maximize_box<F: Fn(f64, f64) -> f64 + Sync>(
    f: F,
    x_range: (f64, f64),
    y_range: (f64, f64),
    space: &SearchSpace,
) -> ((f64, f64), f64, usize, bool) {
    let n = space.grid.max(2);
    let axis = |(lo, hi): (f64, f64), k: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
    let points: Vec<(f64, f64)> =
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (axis(x_range, i), axis(y_range, j))).collect();
    let values: Vec<f64> = points.par_iter().map(|&(x, y)| f(x, y)).collect();
    let mut evals = points.len();
    let (mut best, mut best_f) = (points[0], values[0]);
    for (p, v) in points.iter().zip(&values) {
        if *v > best_f {
            best = *p;
            best_f = *v;
        }
    }
    if best_f <= 0.0 {
        // Flat at zero: nothing to refine.
        return (best, best_f, evals, true);
    }
    let mut converged = true;
    let per_search = 12;
    let step = |(lo, hi): (f64, f64)| (hi - lo) / (n - 1) as f64;
    for _ in 0..space.sweeps {
        for dim in 0..2 {
            if evals + per_search + 2 > space.max_evals {
                return (best, best_f, evals, false);
            }
            let (range, centre) = if dim == 0 { (x_range, best.0) } else { (y_range, best.1) };
            let h = step(range);
            let (lo, hi) = ((centre - h).max(range.0), (centre + h).min(range.1));
            let mut count = 0;
            let (x, v, ok) = golden_section_max(
                |t| {
                    count += 1;
                    if dim == 0 {
                        f(t, best.1)
                    } else {
                        f(best.0, t)
                    }
                },
                lo,
                hi,
                space.tol * h / (1.0 + centre.abs()),
                per_search,
            );
            evals += count;
            converged &= ok || count >= per_search;
            if v > best_f {
                best_f = v;
                best = if dim == 0 { (x, best.1) } else { (best.0, x) };
            }
        }
    }
    (best, best_f, evals, converged)
}

/// Optimizes Δz and t3 with the rest of `base` fixed.
pub fn optimize_layout(
    base: &RegionLayout,
    channel: &ChannelParams,
    settings: &StatsSettings,
    f_ec: f64,
    space: &SearchSpace,
    cache: Option<&StatsCache>,
) -> Result<OptimizedLayout> {
    base.validate()?;
    let t3_lo = base.t2 + 1e-3 * (space.t3_max - base.t2);
    let with = |dz: f64, t3: f64| RegionLayout { delta_z: dz, t3, ..base.clone() };
    let objective = |dz: f64, t3: f64| match passive_rate(&with(dz, t3), channel, settings, f_ec, cache) {
        Ok(r) => r.rate,
        Err(_) => f64::NEG_INFINITY,
    };
    let ((dz, t3), _, evaluations, converged) = maximize_box(objective, space.delta_z, (t3_lo, space.t3_max), space);
    let layout = with(dz, t3);
    let report = passive_rate(&layout, channel, settings, f_ec, cache)?;
    Ok(OptimizedLayout { layout, report, evaluations, converged })
}

/// The Z key regions of both parties, for reporting.
pub fn key_regions() -> [RegionId; 2] {
    [RegionId::new(BasisState::H, 3), RegionId::new(BasisState::V, 3)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> KeyRateInputs {
        KeyRateInputs {
            p_z_a: 0.3,
            p_z_b: 0.3,
            p1_a: 0.3,
            p1_b: 0.3,
            y11_lower: 0.4,
            e11_upper: 0.05,
            q_z: 0.02,
            qe_z: 0.0004,
            f_ec: DEFAULT_F_EC,
        }
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.11).unwrap() - 0.499_915_958).abs() < 1e-8);
        assert!(binary_entropy(1.5).is_err());
    }

    #[test]
    fn rate_edge_cases() {
        let mut i = inputs();
        assert!(key_rate(&i) > 0.0);
        i.e11_upper = 0.5;
        assert_eq!(key_rate(&i), 0.0);
        let mut i = inputs();
        i.qe_z = 0.5 * i.q_z;
        i.y11_lower = 0.01;
        assert_eq!(key_rate(&i), 0.0);
        let mut i = inputs();
        i.q_z = 0.0;
        assert_eq!(key_rate(&i), 0.0);
    }

    #[test]
    fn single_ring_matches_key_rate() {
        let i = inputs();
        let p = RingPartition::single(0.0, 0.02).unwrap();
        let r = small_ring_rate(&i, &p, &p, &[vec![i.q_z]], &[vec![i.qe_z]]).unwrap();
        assert_eq!(r, key_rate(&i));
    }

    #[test]
    fn constant_ring_qber_changes_nothing() {
        let i = inputs();
        let w = vec![0.1, 0.2, 0.3, 0.4];
        let p = RingPartition::new(vec![0.0, 0.005, 0.01, 0.015, 0.02], w).unwrap();
        let q: Vec<Vec<f64>> = (0..4).map(|_| vec![i.q_z; 4]).collect();
        let qe: Vec<Vec<f64>> = (0..4).map(|_| vec![i.qe_z; 4]).collect();
        let r = small_ring_rate(&i, &p, &p, &q, &qe).unwrap();
        assert!((r - key_rate(&i)).abs() < 1e-15 * key_rate(&i).max(1e-300) * 10.0);
    }

    #[test]
    fn bad_partitions_rejected() {
        assert!(RingPartition::new(vec![0.0], vec![]).is_err());
        assert!(RingPartition::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(RingPartition::new(vec![0.0, 1.0], vec![0.5]).is_err());
    }

    #[test]
    fn golden_section_finds_peak_and_boundary() {
        let (x, _, ok) = golden_section_max(|x| -(x - 0.3).powi(2), 0.0, 1.0, 1e-6, 200);
        assert!(ok && (x - 0.3).abs() < 1e-5);
        let (x, _, _) = golden_section_max(|x| x, 0.0, 1.0, 1e-6, 200);
        assert_eq!(x, 1.0);
    }

    #[test]
    fn box_search_on_monotone_objective_hits_corner() {
        let space = SearchSpace::default();
        let ((x, y), _, _, _) = maximize_box(|x, y| 1.0 + x + 2.0 * y, (0.001, 0.05), (0.1, 0.99), &space);
        assert_eq!((x, y), (0.05, 0.99));
    }

    #[test]
    fn zero_intensity_baseline_is_zero() {
        let r = active_baseline(&ChannelParams::standard(0.0), [0.0, 0.0, 0.0], &StatsSettings::default(), DEFAULT_F_EC)
            .unwrap();
        assert_eq!(r.rate, 0.0);
    }
}
