//! Passive source model: emitted intensities and phases, Bloch coordinates,
//! post-selection geometry and region-averaged Poisson weights.
//!
//! Region geometry lives in polar coordinates of the intensity plane,
//! r = hypot(mu_h, mu_v) and theta = atan2(mu_v, mu_h). Every region is a box in
//! (r, theta, phi_hv), which is what makes the moments cheap: the Poisson factor
//! e^{-mu} cancels the exponential source density, leaving (r s)^n / n! with
//! s = cos(theta) + sin(theta).

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::fmt;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cubature::GaussLegendre;
use crate::error::{Error, Result};

/// Default Poisson truncation order for the decoy analysis.
pub const DEFAULT_N_MAX: usize = 8;

const MOMENT_ORDER: usize = 24;

fn moment_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(MOMENT_ORDER))
}

/// One emission of a passive source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSample {
    pub mu_h: f64,
    pub mu_v: f64,
    pub phi_hv: f64,
    pub phi_global: f64,
}

impl SourceSample {
    pub fn new(mu_h: f64, mu_v: f64, phi_hv: f64, phi_global: f64) -> Result<Self> {
        for mu in [mu_h, mu_v] {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::Domain { value: mu, domain: "intensity >= 0" });
            }
        }
        Ok(Self { mu_h, mu_v, phi_hv: wrap_phase(phi_hv), phi_global: wrap_phase(phi_global) })
    }

    /// Sample at intensity-plane polar coordinates.
    pub fn from_polar(r: f64, theta: f64, phi_hv: f64) -> Self {
        Self { mu_h: r * theta.cos(), mu_v: r * theta.sin(), phi_hv: wrap_phase(phi_hv), phi_global: 0.0 }
    }

    pub fn total(&self) -> f64 {
        self.mu_h + self.mu_v
    }

    pub fn radius(&self) -> f64 {
        self.mu_h.hypot(self.mu_v)
    }

    pub fn plane_angle(&self) -> f64 {
        self.mu_v.atan2(self.mu_h)
    }
}

pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Total intensity with the polarization as a Bloch-sphere direction (H at theta = 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochCoords {
    pub mu: f64,
    pub theta_hv: f64,
    pub phi_hv: f64,
}

pub fn bloch_coords(s: &SourceSample) -> Result<BlochCoords> {
    let mu = s.total();
    if mu <= 0.0 {
        return Err(Error::DegenerateInput);
    }
    // Same angle as 2·acos(sqrt(mu_h/mu)) but well conditioned near the poles.
    let theta_hv = 2.0 * s.mu_v.sqrt().atan2(s.mu_h.sqrt());
    Ok(BlochCoords { mu, theta_hv, phi_hv: s.phi_hv })
}

impl BlochCoords {
    /// Inverse of [`bloch_coords`].
    pub fn intensities(&self) -> (f64, f64) {
        let (s, c) = (0.5 * self.theta_hv).sin_cos();
        (self.mu * c * c, self.mu * s * s)
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta_hv.sin_cos();
        let (sp, cp) = self.phi_hv.sin_cos();
        [st * cp, st * sp, ct]
    }

    pub fn from_unit_vector(mu: f64, v: [f64; 3]) -> Self {
        let rho = v[0].hypot(v[1]);
        let theta_hv = rho.atan2(v[2]);
        let phi_hv = if rho == 0.0 { 0.0 } else { wrap_phase(v[1].atan2(v[0])) };
        Self { mu, theta_hv, phi_hv }
    }
}

/// Intensity-plane angle for a Bloch polar angle: tan(theta) = tan^2(theta_hv / 2).
pub fn plane_angle_from_bloch(theta_hv: f64) -> f64 {
    let (s, c) = (0.5 * theta_hv).sin_cos();
    (s * s).atan2(c * c)
}

pub fn bloch_angle_from_plane(theta: f64) -> f64 {
    2.0 * theta.sin().max(0.0).sqrt().atan2(theta.cos().max(0.0).sqrt())
}

/// Product arcsine density of the two intensities times the uniform phase density.
///
/// Returns `+inf` on the boundary of the square, where the density has an
/// integrable singularity; zero outside it.
pub fn base_density(s: &SourceSample, mu_max: f64) -> f64 {
    let arcsine = |x: f64| {
        if x <= 0.0 || x >= mu_max {
            if x == 0.0 || x == mu_max {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            1.0 / (PI * (x * (mu_max - x)).sqrt())
        }
    };
    arcsine(s.mu_h) * arcsine(s.mu_v) / TAU
}

/// How the reshaped density e^{mu_h + mu_v} is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Probability density on the full square [0, mu_max]^2.
    #[default]
    Square,
    /// Absolute emission probability after the rejection step, so region
    /// masses include the samples the reshaping discards.
    Acceptance,
}

impl Normalization {
    pub fn constant(self, mu_max: f64) -> f64 {
        match self {
            Self::Square => 1.0 / (mu_max.exp_m1() * mu_max.exp_m1()),
            Self::Acceptance => 1.0 / acceptance_supremum(mu_max),
        }
    }
}

/// x in (0, m) maximizing sqrt(x (m - x)) e^x; root of 2x^2 + (2 - 2m) x - m = 0.
fn acceptance_argmax(m: f64) -> f64 {
    let b = 2.0 - 2.0 * m;
    (-b + (b * b + 8.0 * m).sqrt()) / 4.0
}

/// Supremum of reshaped/base over the square with the reshaped density taken as e^{mu_h + mu_v}.
pub fn acceptance_supremum(mu_max: f64) -> f64 {
    let x = acceptance_argmax(mu_max);
    let g = (x * (mu_max - x)).sqrt() * x.exp();
    PI * PI * g * g
}

/// Reshaped density C·e^{mu_h + mu_v}/(2π) on the square, zero outside.
pub fn reshaped_density(s: &SourceSample, mu_max: f64, norm: Normalization) -> f64 {
    if s.mu_h < 0.0 || s.mu_v < 0.0 || s.mu_h > mu_max || s.mu_v > mu_max {
        return 0.0;
    }
    norm.constant(mu_max) * s.total().exp() / TAU
}

/// Probability of keeping a raw emission so that kept samples follow e^{mu_h + mu_v}.
pub fn acceptance_probability(s: &SourceSample, mu_max: f64) -> f64 {
    let (x, y) = (s.mu_h, s.mu_v);
    if !(x > 0.0 && x < mu_max && y > 0.0 && y < mu_max) {
        return 0.0;
    }
    let ratio = PI * PI * (x * (mu_max - x)).sqrt() * (y * (mu_max - y)).sqrt() * (x + y).exp();
    (ratio / acceptance_supremum(mu_max)).min(1.0)
}

/// Raw passive emission, using mu = mu_max·sin^2(πu/2) for the arcsine marginals.
pub fn sample_base<R: Rng + ?Sized>(rng: &mut R, mu_max: f64) -> SourceSample {
    let mut leg = || {
        let s = (FRAC_PI_2 * rng.gen::<f64>()).sin();
        mu_max * s * s
    };
    let (mu_h, mu_v) = (leg(), leg());
    SourceSample { mu_h, mu_v, phi_hv: TAU * rng.gen::<f64>(), phi_global: TAU * rng.gen::<f64>() }
}

/// Emission after the reshaping post-selection. The second value counts raw draws.
pub fn sample_reshaped<R: Rng + ?Sized>(rng: &mut R, mu_max: f64) -> (SourceSample, usize) {
    let mut draws = 0;
    loop {
        draws += 1;
        let s = sample_base(rng, mu_max);
        if rng.gen::<f64>() < acceptance_probability(&s, mu_max) {
            return (s, draws);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BasisState {
    H,
    V,
    Plus,
    Minus,
}

impl BasisState {
    pub const ALL: [BasisState; 4] = [Self::H, Self::V, Self::Plus, Self::Minus];

    pub fn basis(self) -> Basis {
        match self {
            Self::H | Self::V => Basis::Z,
            Self::Plus | Self::Minus => Basis::X,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub fn states(self) -> [BasisState; 2] {
        match self {
            Self::Z => [BasisState::H, BasisState::V],
            Self::X => [BasisState::Plus, BasisState::Minus],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionId {
    pub basis_state: BasisState,
    /// 1, 2 or 3, innermost first.
    pub decoy_band: u8,
}

impl RegionId {
    pub fn new(basis_state: BasisState, decoy_band: u8) -> Self {
        Self { basis_state, decoy_band }
    }

    pub fn all() -> impl Iterator<Item = RegionId> {
        BasisState::ALL.into_iter().flat_map(|s| (1..=3).map(move |b| RegionId::new(s, b)))
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}{}", self.basis_state, self.decoy_band)
    }
}

/// Which polar angle the Z and X half-widths are measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleConvention {
    /// theta = atan2(mu_v, mu_h); Z poles at 0 and π/2, X equator at π/4.
    #[default]
    IntensityPlane,
    /// Bloch polar angle theta_hv; Z poles at 0 and π, X equator at π/2.
    Bloch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionLayout {
    pub delta_z: f64,
    pub delta_xy: f64,
    pub delta_phi: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub mu_max: f64,
    pub convention: AngleConvention,
}

impl Default for RegionLayout {
    fn default() -> Self {
        Self {
            delta_z: 0.02,
            delta_xy: 0.005,
            delta_phi: 0.005,
            t1: 0.005,
            t2: 0.05,
            t3: 0.5,
            mu_max: 1.0,
            convention: AngleConvention::IntensityPlane,
        }
    }
}

/// Axis-aligned box in (r, theta, phi) describing one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub r: (f64, f64),
    pub theta: (f64, f64),
    pub phi: (f64, f64),
}

impl RegionLayout {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidLayout(m));
        if !(self.mu_max > 0.0 && self.mu_max.is_finite()) {
            return bad(format!("mu_max must be positive, got {}", self.mu_max));
        }
        if !(0.0 < self.t1 && self.t1 < self.t2 && self.t2 < self.t3 && self.t3 <= 1.0) {
            return bad(format!("need 0 < t1 < t2 < t3 <= 1, got {}, {}, {}", self.t1, self.t2, self.t3));
        }
        if !(self.delta_z > 0.0 && self.delta_xy > 0.0 && self.delta_phi > 0.0) {
            return bad("angular half-widths must be positive".into());
        }
        if self.delta_phi >= FRAC_PI_2 {
            return bad(format!("delta_phi {} makes + and - overlap", self.delta_phi));
        }
        let (_, h_hi) = self.theta_interval(BasisState::H);
        let (x_lo, x_hi) = self.theta_interval(BasisState::Plus);
        let (v_lo, _) = self.theta_interval(BasisState::V);
        if !(h_hi < x_lo && x_hi < v_lo) {
            return bad(format!(
                "delta_z {} and delta_xy {} overlap the Z and X regions",
                self.delta_z, self.delta_xy
            ));
        }
        Ok(())
    }

    /// Intensity-plane angle interval of a state's region.
    pub fn theta_interval(&self, state: BasisState) -> (f64, f64) {
        match self.convention {
            AngleConvention::IntensityPlane => match state {
                BasisState::H => (0.0, self.delta_z),
                BasisState::V => (FRAC_PI_2 - self.delta_z, FRAC_PI_2),
                _ => (FRAC_PI_4 - self.delta_xy, FRAC_PI_4 + self.delta_xy),
            },
            AngleConvention::Bloch => match state {
                BasisState::H => (0.0, plane_angle_from_bloch(self.delta_z)),
                BasisState::V => (plane_angle_from_bloch(PI - self.delta_z), FRAC_PI_2),
                _ => (
                    plane_angle_from_bloch(FRAC_PI_2 - self.delta_xy),
                    plane_angle_from_bloch(FRAC_PI_2 + self.delta_xy),
                ),
            },
        }
    }

    /// Relative-phase interval; may extend past [0, 2π) and is meant modulo 2π.
    pub fn phi_interval(&self, state: BasisState) -> (f64, f64) {
        match state {
            BasisState::H | BasisState::V => (0.0, TAU),
            BasisState::Plus => (-self.delta_phi, self.delta_phi),
            BasisState::Minus => (PI - self.delta_phi, PI + self.delta_phi),
        }
    }

    pub fn radial_interval(&self, band: u8) -> Result<(f64, f64)> {
        let m = self.mu_max;
        match band {
            1 => Ok((0.0, self.t1 * m)),
            2 => Ok((self.t1 * m, self.t2 * m)),
            3 => Ok((self.t2 * m, self.t3 * m)),
            b => Err(Error::InvalidLayout(format!("decoy band {b} does not exist"))),
        }
    }

    pub fn sector(&self, region: RegionId) -> Result<Sector> {
        Ok(Sector {
            r: self.radial_interval(region.decoy_band)?,
            theta: self.theta_interval(region.basis_state),
            phi: self.phi_interval(region.basis_state),
        })
    }

    /// Region containing the sample, if any.
    pub fn classify(&self, s: &SourceSample) -> Option<RegionId> {
        let r = s.radius();
        let m = self.mu_max;
        let band = if r < self.t1 * m {
            1
        } else if r < self.t2 * m {
            2
        } else if r <= self.t3 * m {
            3
        } else {
            return None;
        };
        let theta = s.plane_angle();
        let inside = |(lo, hi): (f64, f64)| theta >= lo && theta <= hi;
        let state = if inside(self.theta_interval(BasisState::H)) {
            BasisState::H
        } else if inside(self.theta_interval(BasisState::V)) {
            BasisState::V
        } else if inside(self.theta_interval(BasisState::Plus)) {
            let near = |target: f64| {
                let d = (s.phi_hv - target).rem_euclid(TAU);
                d.min(TAU - d) <= self.delta_phi
            };
            if near(0.0) {
                BasisState::Plus
            } else if near(PI) {
                BasisState::Minus
            } else {
                return None;
            }
        } else {
            return None;
        };
        Some(RegionId::new(state, band))
    }
}

/// Poisson weight with the e^{-mu} cancelled: (r s)^n / n!.
pub fn poisson_kernel(n: usize, r: f64, theta: f64) -> f64 {
    let mu = r * (theta.cos() + theta.sin());
    let mut w = 1.0;
    for k in 1..=n {
        w *= mu / k as f64;
    }
    w
}

/// sum_{k > n_max} mu^k / k!, summed from the first omitted term.
pub fn poisson_tail_series(mu: f64, n_max: usize) -> f64 {
    let mut term = 1.0;
    for k in 1..=n_max + 1 {
        term *= mu / k as f64;
    }
    let mut sum = 0.0;
    let mut k = n_max + 1;
    while term > 1e-18 * sum || sum == 0.0 {
        sum += term;
        k += 1;
        term *= mu / k as f64;
        if term == 0.0 {
            break;
        }
    }
    sum
}

/// Region-averaged Poisson weights <P_0..P_{n_max}> and the mass beyond n_max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub p: Vec<f64>,
    pub tail: f64,
}

impl Sector {
    /// Point region at intensity-plane coordinates (r, theta).
    pub fn point(r: f64, theta: f64, phi: f64) -> Self {
        Self { r: (r, r), theta: (theta, theta), phi: (phi, phi) }
    }

    pub fn is_point(&self) -> bool {
        self.r.0 == self.r.1 && self.theta.0 == self.theta.1 && self.phi.0 == self.phi.1
    }

    pub fn phi_fraction(&self) -> f64 {
        (self.phi.1 - self.phi.0) / TAU
    }

    /// Box average of f(r, theta)·r over the sector's (r, theta) rectangle.
    fn average<F: FnMut(f64, f64) -> f64>(&self, mut f: F) -> f64 {
        let gl = moment_rule();
        let mut acc = 0.0;
        for (r, wr) in gl.averaging(self.r.0, self.r.1) {
            for (t, wt) in gl.averaging(self.theta.0, self.theta.1) {
                acc += wr * wt * r * f(r, t);
            }
        }
        acc
    }

    /// Box average of r e^{r s} over the (r, theta) rectangle; the normalizer
    /// of region averages taken over the unit cube.
    pub fn mean_weight(&self) -> f64 {
        self.average(|r, t| (r * (t.cos() + t.sin())).exp())
    }

    /// Box average of s^n, s = cos(theta) + sin(theta).
    pub fn mean_angular_power(&self, n: usize) -> f64 {
        let gl = moment_rule();
        gl.averaging(self.theta.0, self.theta.1).map(|(t, w)| w * (t.cos() + t.sin()).powi(n as i32)).sum()
    }

    /// ∫∫ e^{r s} r dr dθ over the (r, theta) rectangle.
    pub fn mass_integral(&self) -> f64 {
        let area = (self.r.1 - self.r.0) * (self.theta.1 - self.theta.0);
        area * self.average(|r, t| (r * (t.cos() + t.sin())).exp())
    }

    /// Probability that one emission lands in this sector.
    pub fn probability(&self, mu_max: f64, norm: Normalization) -> f64 {
        norm.constant(mu_max) * self.phi_fraction() * self.mass_integral()
    }

    pub fn moments(&self, n_max: usize) -> Moments {
        let denom = self.mean_weight();
        let mut p = vec![0.0; n_max + 1];
        let gl = moment_rule();
        let mut tail = 0.0;
        for (r, wr) in gl.averaging(self.r.0, self.r.1) {
            for (t, wt) in gl.averaging(self.theta.0, self.theta.1) {
                let mu = r * (t.cos() + t.sin());
                let w = wr * wt * r;
                let mut term = 1.0;
                for (n, slot) in p.iter_mut().enumerate() {
                    if n > 0 {
                        term *= mu / n as f64;
                    }
                    *slot += w * term;
                }
                tail += w * poisson_tail_series(mu, n_max);
            }
        }
        if denom > 0.0 {
            p.iter_mut().for_each(|v| *v /= denom);
            tail /= denom;
        } else {
            // Vacuum point.
            p.iter_mut().enumerate().for_each(|(n, v)| *v = if n == 0 { 1.0 } else { 0.0 });
            tail = 0.0;
        }
        Moments { p, tail }
    }
}

/// <P_n> over a region under the reshaped density.
pub fn poisson_region_moment(n: usize, region: RegionId, layout: &RegionLayout, n_max: usize) -> Result<f64> {
    if n > n_max {
        return Err(Error::Truncation { n, n_max });
    }
    Ok(layout.sector(region)?.moments(n)[n])
}

impl std::ops::Index<usize> for Moments {
    type Output = f64;
    fn index(&self, n: usize) -> &f64 {
        &self.p[n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bloch_examples() {
        let b = bloch_coords(&SourceSample::new(0.5, 0.5, 0.0, 0.0).unwrap()).unwrap();
        assert!((b.theta_hv - FRAC_PI_2).abs() < 1e-15);
        let b = bloch_coords(&SourceSample::new(0.3, 0.0, 0.0, 0.0).unwrap()).unwrap();
        assert_eq!(b.theta_hv, 0.0);
        let b = bloch_coords(&SourceSample::new(0.25, 0.75, 0.0, 0.0).unwrap()).unwrap();
        assert!((b.theta_hv - 2.0 * PI / 3.0).abs() < 1e-15);
        assert!(matches!(
            bloch_coords(&SourceSample::new(0.0, 0.0, 1.0, 0.0).unwrap()),
            Err(Error::DegenerateInput)
        ));
    }

    #[test]
    fn angle_conventions_round_trip() {
        // The exact poles are excluded: near theta_hv = π the plane angle loses the digits.
        for k in 0..100 {
            let th = PI * k as f64 / 100.0;
            let back = bloch_angle_from_plane(plane_angle_from_bloch(th));
            assert!((back - th).abs() < 1e-12, "{th} -> {back}");
        }
        let s = SourceSample::new(0.2, 0.7, 0.0, 0.0).unwrap();
        let b = bloch_coords(&s).unwrap();
        assert!((plane_angle_from_bloch(b.theta_hv) - s.plane_angle()).abs() < 1e-15);
    }

    #[test]
    fn base_density_values() {
        let mid = SourceSample::new(0.5, 0.5, 0.0, 0.0).unwrap();
        assert!((base_density(&mid, 1.0) * TAU - 4.0 / (PI * PI)).abs() < 1e-14);
        let s = SourceSample::new(0.1, 0.5, 0.0, 0.0).unwrap();
        assert!((base_density(&s, 1.0) * TAU - 1.0 / (0.15 * PI * PI)).abs() < 1e-12);
        let edge = SourceSample::new(0.0, 0.5, 0.0, 0.0).unwrap();
        assert!(base_density(&edge, 1.0).is_infinite());
    }

    #[test]
    fn acceptance_is_a_probability_and_reaches_one() {
        let m = 1.0;
        let mut best: f64 = 0.0;
        for i in 1..400 {
            for j in 1..400 {
                let s = SourceSample::new(i as f64 / 400.0, j as f64 / 400.0, 0.0, 0.0).unwrap();
                let q = acceptance_probability(&s, m);
                assert!(q > 0.0 && q <= 1.0);
                best = best.max(q);
            }
        }
        assert!(best > 0.9999);
        let x = acceptance_argmax(m);
        assert!((x - 1.0 / 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn reshaped_ratio_is_exponential() {
        let a = SourceSample::new(0.2, 0.2, 0.0, 0.0).unwrap();
        let b = SourceSample::new(0.1, 0.1, 0.0, 0.0).unwrap();
        for norm in [Normalization::Square, Normalization::Acceptance] {
            let r = reshaped_density(&a, 1.0, norm) / reshaped_density(&b, 1.0, norm);
            assert!((r - 0.2f64.exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn classify_examples() {
        let layout = RegionLayout { delta_z: 0.05, ..Default::default() };
        let s = SourceSample::from_polar(0.5 * layout.t1, 0.0, 0.0);
        assert_eq!(layout.classify(&s), Some(RegionId::new(BasisState::H, 1)));
        let s = SourceSample::from_polar(0.3, FRAC_PI_4, PI);
        assert_eq!(layout.classify(&s), Some(RegionId::new(BasisState::Minus, 3)));
        // Halfway between the Z pole and the X equator.
        let s = SourceSample::from_polar(0.3, FRAC_PI_4 / 2.0, 0.0);
        assert_eq!(layout.classify(&s), None);
        let s = SourceSample::from_polar(0.3, FRAC_PI_4, -0.003);
        assert_eq!(layout.classify(&s), Some(RegionId::new(BasisState::Plus, 3)));
    }

    #[test]
    fn bloch_convention_maps_edges() {
        let layout = RegionLayout { convention: AngleConvention::Bloch, delta_z: 0.3, ..Default::default() };
        let b = BlochCoords { mu: 0.3, theta_hv: 0.29, phi_hv: 0.0 };
        let (h, v) = b.intensities();
        let s = SourceSample::new(h, v, 0.0, 0.0).unwrap();
        assert_eq!(layout.classify(&s).map(|r| r.basis_state), Some(BasisState::H));
        let b = BlochCoords { mu: 0.3, theta_hv: 0.31, ..b };
        let (h, v) = b.intensities();
        assert_eq!(layout.classify(&SourceSample::new(h, v, 0.0, 0.0).unwrap()), None);
    }

    #[test]
    fn layout_validation() {
        assert!(RegionLayout::default().validate().is_ok());
        assert!(RegionLayout { t2: 0.001, ..Default::default() }.validate().is_err());
        assert!(RegionLayout { delta_z: 0.9, ..Default::default() }.validate().is_err());
        assert!(RegionLayout { delta_phi: 2.0, ..Default::default() }.validate().is_err());
        assert!(RegionLayout { t3: 1.2, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn point_region_moments_are_poisson() {
        let m = Sector::point(0.2, 0.0, 0.0).moments(DEFAULT_N_MAX);
        assert!((m[0] - (-0.2f64).exp()).abs() < 1e-15);
        assert!((m[2] - 0.02 * (-0.2f64).exp()).abs() < 1e-15);
        let total: f64 = m.p.iter().sum::<f64>() + m.tail;
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn band_moments_sum_to_one() {
        let layout = RegionLayout::default();
        for region in RegionId::all() {
            let m = layout.sector(region).unwrap().moments(DEFAULT_N_MAX);
            let total: f64 = m.p.iter().sum::<f64>() + m.tail;
            assert!((total - 1.0).abs() < 1e-13, "{region}: {total}");
            assert!(m.tail >= 0.0 && m.tail < 1e-5);
        }
    }

    #[test]
    fn truncation_is_flagged() {
        let layout = RegionLayout::default();
        let r = RegionId::new(BasisState::H, 3);
        assert!(matches!(poisson_region_moment(9, r, &layout, 8), Err(Error::Truncation { .. })));
        assert!(poisson_region_moment(8, r, &layout, 8).is_ok());
    }

    #[test]
    fn band_moment_matches_monte_carlo() {
        // Sector theta in [0, 0.05], r in [0.3, 0.6] sampled from e^{r s} r by rejection.
        let sector = Sector { r: (0.3, 0.6), theta: (0.0, 0.05), phi: (0.0, TAU) };
        let exact = sector.moments(4)[1];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let bound = 0.6 * (0.6 * 2f64.sqrt()).exp();
        let (mut sum, mut n) = (0.0, 0usize);
        while n < 2_000_000 {
            let r = rng.gen_range(0.3..0.6);
            let t = rng.gen_range(0.0..0.05);
            let mu = r * (f64::cos(t) + f64::sin(t));
            if rng.gen::<f64>() * bound < r * mu.exp() {
                sum += mu * (-mu).exp();
                n += 1;
            }
        }
        let mc = sum / n as f64;
        assert!(((mc - exact) / exact).abs() < 1e-3, "{mc} vs {exact}");
    }

    #[test]
    fn band_probabilities_add_up() {
        let layout = RegionLayout { t3: 0.9, ..Default::default() };
        for state in BasisState::ALL {
            let bands: f64 = (1..=3)
                .map(|b| layout.sector(RegionId::new(state, b)).unwrap().probability(1.0, Normalization::Square))
                .sum();
            let whole = Sector { r: (0.0, 0.9), theta: layout.theta_interval(state), phi: layout.phi_interval(state) };
            let p = whole.probability(1.0, Normalization::Square);
            assert!(((bands - p) / p).abs() < 1e-6);
        }
    }

    #[test]
    fn sampler_matches_reshaped_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layout = RegionLayout { delta_z: 0.3, t3: 0.9, ..Default::default() };
        let region = RegionId::new(BasisState::H, 3);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| layout.classify(&sample_reshaped(&mut rng, 1.0).0) == Some(region))
            .count();
        let p = layout.sector(region).unwrap().probability(1.0, Normalization::Square);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 4.0 * se);
    }
}
