//! Fiber channel and relay measurement.
//!
//! Each arm rotates the polarization (fixed misalignment), attenuates, and the
//! two pulses meet on a beam splitter whose outputs c and d are each split by a
//! polarizing beam splitter onto threshold detectors. Bell-state outcomes are
//! the exactly-two-click patterns of the four detectors.

use serde::{Deserialize, Serialize};

use crate::cubature::PhaseGrid;
use crate::error::{Error, Result};
use crate::source::{bloch_coords, Basis, BasisState, BlochCoords, RegionId, SourceSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation3D {
    axis: [f64; 3],
    angle: f64,
}

impl Rotation3D {
    /// Normalizes `axis`; a zero axis is rejected.
    pub fn new(axis: [f64; 3], angle: f64) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !(n > 0.0 && n.is_finite() && angle.is_finite()) {
            return Err(Error::InvalidChannel(format!("bad rotation axis {axis:?} / angle {angle}")));
        }
        Ok(Self { axis: [axis[0] / n, axis[1] / n, axis[2] / n], angle })
    }

    pub fn identity() -> Self {
        Self { axis: [0.0, 0.0, 1.0], angle: 0.0 }
    }

    /// Rotation in the X-Z plane that flips a pole state with probability `error_prob`.
    pub fn misalignment(error_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&error_prob) {
            return Err(Error::InvalidChannel(format!("misalignment {error_prob} not in [0, 1]")));
        }
        Self::new([0.0, 1.0, 0.0], 2.0 * error_prob.sqrt().asin())
    }

    pub fn axis(&self) -> [f64; 3] {
        self.axis
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// Rodrigues: v cos(a) + (k × v) sin(a) + k (k·v)(1 - cos(a)).
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let k = self.axis;
        let (s, c) = self.angle.sin_cos();
        let kv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
        let cross = [k[1] * v[2] - k[2] * v[1], k[2] * v[0] - k[0] * v[2], k[0] * v[1] - k[1] * v[0]];
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = v[i] * c + cross[i] * s + k[i] * kv * (1.0 - c);
        }
        out
    }

    /// Equivalent rotation matrix, I + sin(a) K + (1 - cos(a)) K².
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let [x, y, z] = self.axis;
        let (s, c) = self.angle.sin_cos();
        let t = 1.0 - c;
        [
            [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
            [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
            [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
        ]
    }
}

pub fn rotate_state(coords: &BlochCoords, rot: &Rotation3D) -> BlochCoords {
    BlochCoords::from_unit_vector(coords.mu, rot.apply(coords.unit_vector()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Fiber length of each arm.
    pub distance_km: f64,
    pub loss_coeff_db_per_km: f64,
    pub detector_efficiency: f64,
    pub dark_count_prob: f64,
    pub misalignment_a: Rotation3D,
    pub misalignment_b: Rotation3D,
}

impl ChannelParams {
    /// 0.2 dB/km fiber, ideal detectors with 1e-6 dark counts, 0.5% misalignment per arm.
    pub fn standard(distance_km: f64) -> Self {
        let rot = Rotation3D::misalignment(0.005).expect("valid misalignment");
        Self {
            distance_km,
            loss_coeff_db_per_km: 0.2,
            detector_efficiency: 1.0,
            dark_count_prob: 1e-6,
            misalignment_a: rot,
            misalignment_b: rot,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidChannel(m));
        if !(self.distance_km >= 0.0 && self.distance_km.is_finite()) {
            return bad(format!("distance {} km", self.distance_km));
        }
        if !(self.loss_coeff_db_per_km >= 0.0 && self.loss_coeff_db_per_km.is_finite()) {
            return bad(format!("loss coefficient {}", self.loss_coeff_db_per_km));
        }
        if !(0.0..=1.0).contains(&self.detector_efficiency) {
            return bad(format!("detector efficiency {}", self.detector_efficiency));
        }
        if !(0.0..=1.0).contains(&self.dark_count_prob) {
            return bad(format!("dark count probability {}", self.dark_count_prob));
        }
        Ok(())
    }

    /// Overall transmittance of one arm including detector efficiency.
    pub fn transmittance(&self) -> f64 {
        let exponent = -self.loss_coeff_db_per_km * self.distance_km / 10.0;
        // Integer decades are evaluated by division so 10^-k comes out correctly rounded.
        let fiber = if exponent.fract() == 0.0 && exponent.abs() < 300.0 {
            1.0 / 10f64.powi(-exponent as i32)
        } else {
            10f64.powf(exponent)
        };
        fiber * self.detector_efficiency
    }
}

pub fn apply_loss(mu: f64, params: &ChannelParams) -> f64 {
    mu * params.transmittance()
}

/// Output intensities (c, d) of a balanced beam splitter.
///
/// The larger output is computed directly and the smaller as the exact
/// difference from the input total, so c + d == mu1 + mu2 in floating point.
pub fn interfere(mu1: f64, mu2: f64, phase_diff: f64) -> (f64, f64) {
    let total = mu1 + mu2;
    let cross = (mu1 * mu2).sqrt() * phase_diff.sin();
    let larger = (0.5 * total + cross.abs()).min(total);
    let smaller = total - larger;
    if cross >= 0.0 {
        (smaller, larger)
    } else {
        (larger, smaller)
    }
}

/// Polarization state after the channel, with intensities already attenuated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivedState {
    pub mu_h: f64,
    pub mu_v: f64,
    pub phi_hv: f64,
}

impl ArrivedState {
    pub fn vacuum() -> Self {
        Self { mu_h: 0.0, mu_v: 0.0, phi_hv: 0.0 }
    }
}

/// Rotates and attenuates one emission.
pub fn propagate(s: &SourceSample, rot: &Rotation3D, params: &ChannelParams) -> ArrivedState {
    let Ok(b) = bloch_coords(s) else {
        return ArrivedState::vacuum();
    };
    let rotated = rotate_state(&b, rot);
    let (h, v) = rotated.intensities();
    let eta = params.transmittance();
    ArrivedState { mu_h: h * eta, mu_v: v * eta, phi_hv: rotated.phi_hv }
}

pub const C_H: usize = 0;
pub const C_V: usize = 1;
pub const D_H: usize = 2;
pub const D_V: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorClicks {
    /// Indexed by [`C_H`], [`C_V`], [`D_H`], [`D_V`].
    pub p_click: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BsmOutcome {
    pub p_psi_minus: f64,
    pub p_psi_plus: f64,
}

impl BsmOutcome {
    pub fn gain(&self) -> f64 {
        self.p_psi_minus + self.p_psi_plus
    }
}

/// Mean photon numbers reaching the four detectors.
pub fn detector_intensities(a: &ArrivedState, b: &ArrivedState, phi_r: f64) -> [f64; 4] {
    let (c_h, d_h) = interfere(a.mu_h, b.mu_h, phi_r);
    let (c_v, d_v) = interfere(a.mu_v, b.mu_v, phi_r + a.phi_hv - b.phi_hv);
    [c_h, c_v, d_h, d_v]
}

pub fn detector_clicks(a: &ArrivedState, b: &ArrivedState, phi_r: f64, dark_count_prob: f64) -> DetectorClicks {
    let mu = detector_intensities(a, b, phi_r);
    let log_keep = (-dark_count_prob).ln_1p();
    DetectorClicks { p_click: mu.map(|m| -(log_keep - m).exp_m1()) }
}

fn outcome_from(p: [f64; 4], q: [f64; 4]) -> BsmOutcome {
    BsmOutcome {
        p_psi_minus: p[C_H] * p[D_V] * q[C_V] * q[D_H] + p[C_V] * p[D_H] * q[C_H] * q[D_V],
        p_psi_plus: p[C_H] * p[C_V] * q[D_H] * q[D_V] + p[D_H] * p[D_V] * q[C_H] * q[C_V],
    }
}

pub fn bsm_probabilities(a: &ArrivedState, b: &ArrivedState, phi_r: f64, params: &ChannelParams) -> BsmOutcome {
    let p = detector_clicks(a, b, phi_r, params.dark_count_prob).p_click;
    outcome_from(p, p.map(|v| 1.0 - v))
}

/// How a successful measurement on a state pair is scored as an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorRule {
    Everything,
    Nothing,
    PsiMinus,
    PsiPlus,
}

impl ErrorRule {
    pub fn for_pair(a: BasisState, b: BasisState) -> Result<Self> {
        if a.basis() != b.basis() {
            return Err(Error::BasisMismatch { a: format!("{a:?}"), b: format!("{b:?}") });
        }
        Ok(match (a.basis(), a == b) {
            (Basis::Z, true) => Self::Everything,
            (Basis::Z, false) => Self::Nothing,
            (Basis::X, true) => Self::PsiMinus,
            (Basis::X, false) => Self::PsiPlus,
        })
    }

    pub fn error(self, o: &BsmOutcome) -> f64 {
        match self {
            Self::Everything => o.gain(),
            Self::Nothing => 0.0,
            Self::PsiMinus => o.p_psi_minus,
            Self::PsiPlus => o.p_psi_plus,
        }
    }
}

/// Gain and error contributions of one sample pair at relay phase `phi_r`.
pub fn sample_gain_and_error(
    region_a: RegionId,
    region_b: RegionId,
    a: &ArrivedState,
    b: &ArrivedState,
    phi_r: f64,
    params: &ChannelParams,
) -> Result<(f64, f64)> {
    let rule = ErrorRule::for_pair(region_a.basis_state, region_b.basis_state)?;
    let o = bsm_probabilities(a, b, phi_r, params);
    Ok((o.gain(), rule.error(&o)))
}

/// Relay outcome averaged over the phase grid, evaluated with two exponentials
/// per node instead of four.
pub fn phase_averaged_outcome(a: &ArrivedState, b: &ArrivedState, dark_count_prob: f64, grid: &PhaseGrid) -> BsmOutcome {
    let (sd, cd) = (a.phi_hv - b.phi_hv).sin_cos();
    phase_averaged_raw([a.mu_h, a.mu_v], [b.mu_h, b.mu_v], (cd, sd), 1.0 - dark_count_prob, grid)
}

/// Same as [`phase_averaged_outcome`] with the V-leg phase offset given as
/// (cos, sin) and `keep` = 1 - p_d.
#[inline]
pub fn phase_averaged_raw(a: [f64; 2], b: [f64; 2], offset: (f64, f64), keep: f64, grid: &PhaseGrid) -> BsmOutcome {
    let k_h = keep * (-0.5 * (a[0] + b[0])).exp();
    let k_v = keep * (-0.5 * (a[1] + b[1])).exp();
    let g_h = (a[0] * b[0]).sqrt();
    let g_v = (a[1] * b[1]).sqrt();
    let (cd, sd) = offset;
    let mut minus = 0.0;
    let mut plus = 0.0;
    for (&s, &c) in grid.sin.iter().zip(&grid.cos) {
        let e_h = (g_h * s).exp();
        let e_v = (g_v * (s * cd + c * sd)).exp();
        // c = S/2 - g sin, d = S/2 + g sin, so the c detector sees e^{+g sin} in its no-click term.
        let q = [k_h * e_h, k_v * e_v, k_h / e_h, k_v / e_v];
        let p = q.map(|v| 1.0 - v);
        let o = outcome_from(p, q);
        minus += o.p_psi_minus;
        plus += o.p_psi_plus;
    }
    let n = grid.len() as f64;
    BsmOutcome { p_psi_minus: minus / n, p_psi_plus: plus / n }
}
