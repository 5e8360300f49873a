//! Region-pair observables for the decoy analysis.
//!
//! Every expectation is an integral over both parties' (r, theta, phi) boxes
//! plus the relay phase. The relay phase is done inline on a fixed trapezoid
//! grid (spectrally accurate for this periodic integrand), so the cubature
//! engine sees a 6-d integrand over the unit cube. Region averages are
//! normalized by the exact box average of r e^{r s}, which keeps degenerate
//! (zero-width) regions meaningful.
//!
//! Basis-level statistics average the four state pairs of a basis. V regions
//! are mirror images of H regions (theta -> π/2 - theta) and Minus regions are
//! Plus regions shifted by π in phase, all with the same probability, so a
//! single point set serves all four pairs.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{phase_averaged_raw, ChannelParams, ErrorRule, Rotation3D};
use crate::cubature::{integrate_vector, IntegrationResult, IntegrationSettings, PhaseGrid, VectorResult};
use crate::error::{Error, Result};
use crate::photon::{fock_yields, Polarization};
use crate::seeding::key_from_floats;
use crate::source::{Basis, BasisState, Moments, Normalization, RegionId, RegionLayout, Sector};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSettings {
    pub integration: IntegrationSettings,
    /// Trapezoid nodes for the relay-phase average.
    pub phase_nodes: usize,
    pub n_max: usize,
    pub normalization: Normalization,
}

impl Default for StatsSettings {
    fn default() -> Self {
        Self {
            integration: IntegrationSettings::default(),
            phase_nodes: 16,
            n_max: crate::source::DEFAULT_N_MAX,
            normalization: Normalization::Square,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Transform {
    Same,
    /// theta -> π/2 - theta: H region to V region.
    Mirror,
    /// phi -> phi + π: Plus region to Minus region.
    Flip,
}

#[derive(Debug, Clone, Copy)]
struct Combo {
    a: Transform,
    b: Transform,
    rule: ErrorRule,
    weight: f64,
}

/// A set of state pairs sharing base sectors, integrated together.
#[derive(Debug, Clone)]
pub struct PairSpec {
    sector_a: Sector,
    sector_b: Sector,
    combos: Vec<Combo>,
    tag: u64,
}

impl PairSpec {
    /// A single region pair.
    pub fn single(a: RegionId, b: RegionId, layout: &RegionLayout) -> Result<Self> {
        let rule = ErrorRule::for_pair(a.basis_state, b.basis_state)?;
        Ok(Self {
            sector_a: layout.sector(a)?,
            sector_b: layout.sector(b)?,
            combos: vec![Combo { a: Transform::Same, b: Transform::Same, rule, weight: 1.0 }],
            tag: 1,
        })
    }

    /// All four state pairs of a basis for the given decoy bands.
    pub fn basis(basis: Basis, band_a: u8, band_b: u8, layout: &RegionLayout) -> Result<Self> {
        let base = basis.states()[0];
        let a = layout.sector(RegionId::new(base, band_a))?;
        let b = layout.sector(RegionId::new(base, band_b))?;
        Ok(Self::basis_from_sectors(basis, a, b))
    }

    /// Basis aggregate over explicit base sectors (H or Plus side).
    pub fn basis_from_sectors(basis: Basis, sector_a: Sector, sector_b: Sector) -> Self {
        let other = match basis {
            Basis::Z => Transform::Mirror,
            Basis::X => Transform::Flip,
        };
        let (same, diff) = match basis {
            Basis::Z => (ErrorRule::Everything, ErrorRule::Nothing),
            Basis::X => (ErrorRule::PsiMinus, ErrorRule::PsiPlus),
        };
        let s = Transform::Same;
        let combos = vec![
            Combo { a: s, b: s, rule: same, weight: 0.25 },
            Combo { a: s, b: other, rule: diff, weight: 0.25 },
            Combo { a: other, b: s, rule: diff, weight: 0.25 },
            Combo { a: other, b: other, rule: same, weight: 0.25 },
        ];
        Self { sector_a, sector_b, combos, tag: 2 + basis as u64 }
    }

    fn geometry_key(&self, seed: u64) -> u64 {
        let s = |x: &Sector| [x.r.0, x.r.1, x.theta.0, x.theta.1, x.phi.0, x.phi.1];
        let mut v = s(&self.sector_a).to_vec();
        v.extend(s(&self.sector_b));
        v.push(self.tag as f64);
        key_from_floats(seed, &v)
    }
}

/// One party's emission mapped through its channel.
#[derive(Debug, Clone, Copy)]
struct Arrival {
    r: f64,
    weight: f64,
    mu: f64,
    mu_h: f64,
    mu_v: f64,
    /// Fraction of the rotated state in H, V.
    h: f64,
    v: f64,
    /// Unit transverse Bloch direction (cos phi, sin phi).
    dir: (f64, f64),
}

fn lerp((a, b): (f64, f64), u: f64) -> f64 {
    a + (b - a) * u
}

struct Party {
    sector: Sector,
    rotation: [[f64; 3]; 3],
    eta: f64,
}

impl Party {
    fn new(sector: Sector, rot: &Rotation3D, eta: f64) -> Self {
        Self { sector, rotation: rot.matrix(), eta }
    }

    /// (r, theta) and phi at the unit-cube point, before any transform.
    fn coordinates(&self, u: &[f64]) -> (f64, f64, f64) {
        (lerp(self.sector.r, u[0]), lerp(self.sector.theta, u[1]), lerp(self.sector.phi, u[2]))
    }

    fn arrival(&self, r: f64, theta: f64, phi: f64, t: Transform) -> Arrival {
        let theta = if t == Transform::Mirror { FRAC_PI_2 - theta } else { theta };
        let phi = if t == Transform::Flip { phi + PI } else { phi };
        let (st, ct) = theta.sin_cos();
        let s = st + ct;
        let mu = r * s;
        let (h, v) = (ct / s, st / s);
        let rho = 2.0 * (h * v).sqrt();
        let (sp, cp) = phi.sin_cos();
        let bloch = [rho * cp, rho * sp, (ct - st) / s];
        let m = &self.rotation;
        let rot = |i: usize| m[i][0] * bloch[0] + m[i][1] * bloch[1] + m[i][2] * bloch[2];
        let (x, y, z) = (rot(0), rot(1), rot(2));
        let h2 = (0.5 * (1.0 + z)).clamp(0.0, 1.0);
        let v2 = (0.5 * (1.0 - z)).clamp(0.0, 1.0);
        let t = x.hypot(y);
        let dir = if t > 0.0 { (x / t, y / t) } else { (1.0, 0.0) };
        Arrival {
            r,
            weight: r * mu.exp(),
            mu,
            mu_h: self.eta * mu * h2,
            mu_v: self.eta * mu * v2,
            h: h2,
            v: v2,
            dir,
        }
    }
}

fn phase_offset(a: &Arrival, b: &Arrival) -> (f64, f64) {
    (a.dir.0 * b.dir.0 + a.dir.1 * b.dir.1, a.dir.1 * b.dir.0 - a.dir.0 * b.dir.1)
}

/// Gain and error-gain of a pair set with their integration errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairObservables {
    pub gain: f64,
    pub error_gain: f64,
    pub gain_error: f64,
    pub error_gain_error: f64,
    pub evals_used: usize,
    pub converged: bool,
}

impl PairObservables {
    fn from_vector(r: VectorResult, norm: f64) -> Self {
        Self {
            gain: r.values[0] / norm,
            error_gain: r.values[1] / norm,
            gain_error: r.errors[0] / norm,
            error_gain_error: r.errors[1] / norm,
            evals_used: r.evals_used,
            converged: r.converged,
        }
    }
}

fn channel_key(channel: &ChannelParams, settings: &StatsSettings) -> Vec<f64> {
    let mut v = vec![
        channel.distance_km,
        channel.loss_coeff_db_per_km,
        channel.detector_efficiency,
        channel.dark_count_prob,
        settings.phase_nodes as f64,
        settings.integration.rel_tol,
        settings.integration.abs_tol,
        settings.integration.max_evals as f64,
        settings.integration.replicates as f64,
        settings.integration.min_points as f64,
        settings.integration.strategy as u8 as f64,
    ];
    for rot in [&channel.misalignment_a, &channel.misalignment_b] {
        v.extend(rot.axis());
        v.push(rot.angle());
    }
    v
}

/// Memo of pair integrals across layouts and runs, keyed by geometry, channel and settings.
#[derive(Debug, Default)]
pub struct StatsCache {
    entries: Mutex<HashMap<u64, PairObservables>>,
}

impl StatsCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: u64) -> Option<PairObservables> {
        self.entries.lock().expect("cache lock").get(&key).copied()
    }

    fn put(&self, key: u64, v: PairObservables) {
        self.entries.lock().expect("cache lock").insert(key, v);
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: HashMap<String, PairObservables> = serde_json::from_str(&text)?;
        let mut entries = HashMap::with_capacity(raw.len());
        for (k, v) in raw {
            let key = u64::from_str_radix(&k, 16)
                .map_err(|e| Error::Cache(format!("bad key {k:?} in {}: {e}", path.display())))?;
            entries.insert(key, v);
        }
        Ok(Self { entries: Mutex::new(entries) })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map = self.entries.lock().expect("cache lock");
        let mut sorted: Vec<_> = map.iter().map(|(k, v)| (format!("{k:016x}"), *v)).collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let ordered: serde_json::Map<String, serde_json::Value> = sorted
            .into_iter()
            .map(|(k, v)| Ok((k, serde_json::to_value(v)?)))
            .collect::<std::result::Result<_, serde_json::Error>>()?;
        std::fs::write(path, serde_json::to_string_pretty(&ordered)?)?;
        Ok(())
    }
}

/// Integrates gain and error-gain for a pair set.
pub fn pair_observables(
    spec: &PairSpec,
    channel: &ChannelParams,
    settings: &StatsSettings,
    cache: Option<&StatsCache>,
) -> Result<PairObservables> {
    channel.validate()?;
    let geometry = spec.geometry_key(settings.integration.seed);
    let key = key_from_floats(geometry, &channel_key(channel, settings));
    if let Some(hit) = cache.and_then(|c| c.get(key)) {
        return Ok(hit);
    }
    let eta = channel.transmittance();
    let pa = Party::new(spec.sector_a, &channel.misalignment_a, eta);
    let pb = Party::new(spec.sector_b, &channel.misalignment_b, eta);
    let grid = PhaseGrid::new(settings.phase_nodes);
    let keep = 1.0 - channel.dark_count_prob;
    let norm = spec.sector_a.mean_weight() * spec.sector_b.mean_weight();
    let transforms = |which: fn(&Combo) -> Transform| {
        let mut t: Vec<Transform> = spec.combos.iter().map(which).collect();
        t.sort_by_key(|t| *t as u8);
        t.dedup();
        t
    };
    let ta = transforms(|c| c.a);
    let tb = transforms(|c| c.b);
    let integrand = |x: &[f64], out: &mut [f64]| {
        let (ra, tha, pha) = pa.coordinates(&x[0..3]);
        let (rb, thb, phb) = pb.coordinates(&x[3..6]);
        let arr_a: Vec<(Transform, Arrival)> = ta.iter().map(|&t| (t, pa.arrival(ra, tha, pha, t))).collect();
        let arr_b: Vec<(Transform, Arrival)> = tb.iter().map(|&t| (t, pb.arrival(rb, thb, phb, t))).collect();
        let find = |v: &[(Transform, Arrival)], t: Transform| v.iter().find(|(k, _)| *k == t).map(|p| p.1);
        for combo in &spec.combos {
            let (Some(a), Some(b)) = (find(&arr_a, combo.a), find(&arr_b, combo.b)) else { continue };
            let o = phase_averaged_raw([a.mu_h, a.mu_v], [b.mu_h, b.mu_v], phase_offset(&a, &b), keep, &grid);
            let w = combo.weight * a.weight * b.weight;
            out[0] += w * o.gain();
            out[1] += w * combo.rule.error(&o);
        }
    };
    let mut integration = settings.integration.clone();
    integration.seed = geometry;
    let bounds = [(0.0, 1.0); 6];
    let r = if spec.sector_a.is_point() && spec.sector_b.is_point() {
        // Constant integrand: one evaluation is exact.
        let mut out = [0.0; 2];
        integrand(&[0.5; 6], &mut out);
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteIntegrand { point: vec![0.5; 6] });
        }
        VectorResult { values: out.to_vec(), errors: vec![0.0; 2], evals_used: 1, converged: true }
    } else {
        integrate_vector(&bounds, 2, integrand, &integration)?
    };
    let obs = PairObservables::from_vector(r, norm);
    if let Some(c) = cache {
        c.put(key, obs);
    }
    Ok(obs)
}

/// <Q> for a single region pair.
pub fn expected_gain(
    pair: (RegionId, RegionId),
    layout: &RegionLayout,
    channel: &ChannelParams,
    settings: &StatsSettings,
) -> Result<IntegrationResult> {
    let o = pair_observables(&PairSpec::single(pair.0, pair.1, layout)?, channel, settings, None)?;
    Ok(IntegrationResult { value: o.gain, error_estimate: o.gain_error, evals_used: o.evals_used, converged: o.converged })
}

/// <QE> for a single region pair.
pub fn expected_error_gain(
    pair: (RegionId, RegionId),
    layout: &RegionLayout,
    channel: &ChannelParams,
    settings: &StatsSettings,
) -> Result<IntegrationResult> {
    let o = pair_observables(&PairSpec::single(pair.0, pair.1, layout)?, channel, settings, None)?;
    Ok(IntegrationResult {
        value: o.error_gain,
        error_estimate: o.error_gain_error,
        evals_used: o.evals_used,
        converged: o.converged,
    })
}

/// Basis-aggregated observables for all nine decoy-band pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisStatistics {
    pub basis: Basis,
    /// Indexed [band_a - 1][band_b - 1].
    pub gains: [[f64; 3]; 3],
    pub error_gains: [[f64; 3]; 3],
    pub gain_errors: [[f64; 3]; 3],
    pub error_gain_errors: [[f64; 3]; 3],
    /// <P_n> per band, Alice then Bob.
    pub moments_a: Vec<Moments>,
    pub moments_b: Vec<Moments>,
    pub converged: bool,
}

impl BasisStatistics {
    pub fn check(&self) -> Result<()> {
        for i in 0..3 {
            for j in 0..3 {
                let (q, qe) = (self.gains[i][j], self.error_gains[i][j]);
                let slack = self.gain_errors[i][j] + self.error_gain_errors[i][j];
                if !(q >= 0.0 && qe >= 0.0 && qe <= q + slack && q <= 1.0 + slack) {
                    return Err(Error::InconsistentStatistics(format!(
                        "{:?} bands ({}, {}): Q = {q:e}, QE = {qe:e}",
                        self.basis,
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn basis_statistics(
    basis: Basis,
    layout: &RegionLayout,
    channel: &ChannelParams,
    settings: &StatsSettings,
    cache: Option<&StatsCache>,
) -> Result<BasisStatistics> {
    layout.validate()?;
    let pairs: Vec<(u8, u8)> = (1..=3).flat_map(|i| (1..=3).map(move |j| (i, j))).collect();
    let results = pairs
        .par_iter()
        .map(|&(i, j)| pair_observables(&PairSpec::basis(basis, i, j, layout)?, channel, settings, cache))
        .collect::<Result<Vec<_>>>()?;
    let mut s = BasisStatistics {
        basis,
        gains: [[0.0; 3]; 3],
        error_gains: [[0.0; 3]; 3],
        gain_errors: [[0.0; 3]; 3],
        error_gain_errors: [[0.0; 3]; 3],
        moments_a: Vec::new(),
        moments_b: Vec::new(),
        converged: results.iter().all(|r| r.converged),
    };
    for (&(i, j), o) in pairs.iter().zip(&results) {
        let (i, j) = (i as usize - 1, j as usize - 1);
        s.gains[i][j] = o.gain;
        s.error_gains[i][j] = o.error_gain;
        s.gain_errors[i][j] = o.gain_error;
        s.error_gain_errors[i][j] = o.error_gain_error;
    }
    let base = basis.states()[0];
    for band in 1..=3 {
        let m = layout.sector(RegionId::new(base, band))?.moments(settings.n_max);
        s.moments_a.push(m.clone());
        s.moments_b.push(m);
    }
    s.check()?;
    Ok(s)
}

/// Everything the decoy analysis and key rate need for one layout and channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedStatistics {
    pub z: BasisStatistics,
    pub x: BasisStatistics,
    /// Emission probability of every region (same for both parties).
    pub region_probs: Vec<(RegionId, f64)>,
}

impl ObservedStatistics {
    pub fn basis(&self, basis: Basis) -> &BasisStatistics {
        match basis {
            Basis::Z => &self.z,
            Basis::X => &self.x,
        }
    }

    pub fn region_prob(&self, region: RegionId) -> f64 {
        self.region_probs.iter().find(|(r, _)| *r == region).map(|p| p.1).unwrap_or(0.0)
    }

    /// Mass of the key-generation region (Z, band 3).
    pub fn key_region_prob(&self) -> f64 {
        self.region_prob(RegionId::new(BasisState::H, 3)) + self.region_prob(RegionId::new(BasisState::V, 3))
    }

    pub fn q_z(&self) -> f64 {
        self.z.gains[2][2]
    }

    pub fn qe_z(&self) -> f64 {
        self.z.error_gains[2][2]
    }

    pub fn converged(&self) -> bool {
        self.z.converged && self.x.converged
    }
}

pub fn observe(
    layout: &RegionLayout,
    channel: &ChannelParams,
    settings: &StatsSettings,
    cache: Option<&StatsCache>,
) -> Result<ObservedStatistics> {
    let z = basis_statistics(Basis::Z, layout, channel, settings, cache)?;
    let x = basis_statistics(Basis::X, layout, channel, settings, cache)?;
    let region_probs = RegionId::all()
        .map(|r| Ok((r, layout.sector(r)?.probability(layout.mu_max, settings.normalization))))
        .collect::<Result<Vec<_>>>()?;
    Ok(ObservedStatistics { z, x, region_probs })
}

/// Z key-region observables split into polar-angle rings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingObservables {
    /// Ring edges in the intensity-plane angle of the H region.
    pub edges: Vec<f64>,
    /// Mass fraction of each ring within the key region.
    pub weights: Vec<f64>,
    /// Basis-aggregated gain per ring pair, [ring_a][ring_b].
    pub gains: Vec<Vec<f64>>,
    pub error_gains: Vec<Vec<f64>>,
    pub converged: bool,
}

pub fn ring_observables(
    layout: &RegionLayout,
    channel: &ChannelParams,
    settings: &StatsSettings,
    rings: usize,
    cache: Option<&StatsCache>,
) -> Result<RingObservables> {
    if rings == 0 {
        return Err(Error::InvalidPartition("at least one ring is required".into()));
    }
    let key = layout.sector(RegionId::new(BasisState::H, 3))?;
    let (lo, hi) = key.theta;
    let edges: Vec<f64> = (0..=rings)
        .map(|k| if k == rings { hi } else { lo + (hi - lo) * k as f64 / rings as f64 })
        .collect();
    let sectors: Vec<Sector> = edges.windows(2).map(|w| Sector { theta: (w[0], w[1]), ..key }).collect();
    let total = key.mass_integral();
    let weights: Vec<f64> = sectors.iter().map(|s| s.mass_integral() / total).collect();
    let pairs: Vec<(usize, usize)> = (0..rings).flat_map(|a| (0..rings).map(move |b| (a, b))).collect();
    let results = pairs
        .par_iter()
        .map(|&(a, b)| {
            let spec = PairSpec::basis_from_sectors(Basis::Z, sectors[a], sectors[b]);
            pair_observables(&spec, channel, settings, cache)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut gains = vec![vec![0.0; rings]; rings];
    let mut error_gains = vec![vec![0.0; rings]; rings];
    for (&(a, b), o) in pairs.iter().zip(&results) {
        gains[a][b] = o.gain;
        error_gains[a][b] = o.error_gain;
    }
    Ok(RingObservables { edges, weights, gains, error_gains, converged: results.iter().all(|r| r.converged) })
}

fn photon_factor(n: usize, mu: f64) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * mu / k as f64)
}

/// Directly integrated <P_n P_m Y_nm> (gain and error components) over a pair set.
pub fn photon_pair_term(
    n: usize,
    m: usize,
    spec: &PairSpec,
    channel: &ChannelParams,
    settings: &StatsSettings,
) -> Result<[IntegrationResult; 2]> {
    let eta = channel.transmittance();
    let pa = Party::new(spec.sector_a, &channel.misalignment_a, eta);
    let pb = Party::new(spec.sector_b, &channel.misalignment_b, eta);
    let pd = channel.dark_count_prob;
    let norm = spec.sector_a.mean_weight() * spec.sector_b.mean_weight();
    let integrand = |x: &[f64], out: &mut [f64]| {
        let (ra, tha, pha) = pa.coordinates(&x[0..3]);
        let (rb, thb, phb) = pb.coordinates(&x[3..6]);
        for combo in &spec.combos {
            let a = pa.arrival(ra, tha, pha, combo.a);
            let b = pb.arrival(rb, thb, phb, combo.b);
            let y = mixed_point_yield(&a, &b, eta, pd, n, m);
            // r e^{mu} times the Poisson term mu^n e^{-mu}/n!.
            let w = combo.weight * a.r * photon_factor(n, a.mu) * b.r * photon_factor(m, b.mu);
            out[0] += w * (y.0 + y.1);
            out[1] += w * combo.rule.error(&crate::channel::BsmOutcome { p_psi_minus: y.0, p_psi_plus: y.1 });
        }
    };
    let mut integration = settings.integration.clone();
    integration.seed = key_from_floats(spec.geometry_key(settings.integration.seed), &[n as f64, m as f64]);
    let r = integrate_vector(&[(0.0, 1.0); 6], 2, integrand, &integration)?;
    Ok([0, 1].map(|k| IntegrationResult {
        value: r.values[k] / norm,
        error_estimate: r.errors[k] / norm,
        evals_used: r.evals_used,
        converged: r.converged,
    }))
}

fn mixed_point_yield(a: &Arrival, b: &Arrival, eta: f64, pd: f64, n: usize, m: usize) -> (f64, f64) {
    let pol = |x: &Arrival| Polarization { h: x.h, v: x.v, phi: x.dir.1.atan2(x.dir.0) };
    let y = fock_yields(&pol(a), &pol(b), eta, pd, n.max(m));
    (y.psi_minus[n][m], y.psi_plus[n][m])
}

/// Y_mixed^{nm}: the n,m-photon yield averaged over the pair set's polarization
/// mixture with angular weights s_A^n s_B^m. Gain and error components.
pub fn decoupled_yield_oracle(
    n: usize,
    m: usize,
    spec: &PairSpec,
    channel: &ChannelParams,
    settings: &StatsSettings,
) -> Result<[IntegrationResult; 2]> {
    let eta = channel.transmittance();
    let pa = Party::new(spec.sector_a, &channel.misalignment_a, eta);
    let pb = Party::new(spec.sector_b, &channel.misalignment_b, eta);
    let pd = channel.dark_count_prob;
    let norm = spec.sector_a.mean_angular_power(n) * spec.sector_b.mean_angular_power(m);
    let integrand = |x: &[f64], out: &mut [f64]| {
        let tha = lerp(pa.sector.theta, x[0]);
        let pha = lerp(pa.sector.phi, x[1]);
        let thb = lerp(pb.sector.theta, x[2]);
        let phb = lerp(pb.sector.phi, x[3]);
        for combo in &spec.combos {
            // Unit radius: the yield does not depend on intensity.
            let a = pa.arrival(1.0, tha, pha, combo.a);
            let b = pb.arrival(1.0, thb, phb, combo.b);
            let sa = a.mu;
            let sb = b.mu;
            let y = mixed_point_yield(&a, &b, eta, pd, n, m);
            let w = combo.weight * sa.powi(n as i32) * sb.powi(m as i32);
            out[0] += w * (y.0 + y.1);
            out[1] += w * combo.rule.error(&crate::channel::BsmOutcome { p_psi_minus: y.0, p_psi_plus: y.1 });
        }
    };
    let mut integration = settings.integration.clone();
    integration.seed = key_from_floats(spec.geometry_key(settings.integration.seed), &[n as f64, m as f64, 4.0]);
    let r = integrate_vector(&[(0.0, 1.0); 4], 2, integrand, &integration)?;
    Ok([0, 1].map(|k| IntegrationResult {
        value: r.values[k] / norm,
        error_estimate: r.errors[k] / norm,
        evals_used: r.evals_used,
        converged: r.converged,
    }))
}
