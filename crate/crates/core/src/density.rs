//! Two-party polarization density matrices used to relate region-averaged
//! ("mixed") yields to those of ideally encoded states.
//!
//! Basis order is |HH>, |HV>, |VH>, |VV> with Alice's qubit first. Alice's
//! phase is taken as zero and Bob carries the relative phase `phi`.

use num_complex::Complex64;

pub type Matrix4 = [[Complex64; 4]; 4];

fn qubit(theta: f64, phi: f64) -> [Complex64; 2] {
    let (s, c) = (0.5 * theta).sin_cos();
    [Complex64::new(c, 0.0), Complex64::from_polar(s, phi)]
}

/// State orthogonal to `qubit(theta, phi)`.
fn orthogonal(theta: f64, phi: f64) -> [Complex64; 2] {
    let (s, c) = (0.5 * theta).sin_cos();
    [-Complex64::from_polar(s, -phi), Complex64::new(c, 0.0)]
}

fn kron(a: &[Complex64; 2], b: &[Complex64; 2]) -> [Complex64; 4] {
    [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
}

fn add_projector(m: &mut Matrix4, v: &[Complex64; 4], weight: f64) {
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] += v[i] * v[j].conj() * weight;
        }
    }
}

pub fn zero() -> Matrix4 {
    [[Complex64::new(0.0, 0.0); 4]; 4]
}

pub fn identity() -> Matrix4 {
    let mut m = zero();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = Complex64::new(1.0, 0.0);
    }
    m
}

pub fn diagonal(d: [f64; 4]) -> Matrix4 {
    let mut m = zero();
    for i in 0..4 {
        m[i][i] = Complex64::new(d[i], 0.0);
    }
    m
}

pub fn max_abs_diff(a: &Matrix4, b: &Matrix4) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            worst = worst.max((a[i][j] - b[i][j]).norm());
        }
    }
    worst
}

/// Sum of the four projectors built from slightly polarized H', V' states of
/// each party, with V' orthogonal to H'. Equals the identity for any angles.
pub fn polarized_frame_sum(theta_a: f64, theta_b: f64, phi: f64) -> Matrix4 {
    let alice = [qubit(theta_a, 0.0), orthogonal(theta_a, 0.0)];
    let bob = [qubit(theta_b, phi), orthogonal(theta_b, phi)];
    let mut m = zero();
    for a in &alice {
        for b in &bob {
            add_projector(&mut m, &kron(a, b), 1.0);
        }
    }
    m
}

/// Equal mixture of the HH family: Alice at (theta_a, 0) or (theta_a, π), Bob
/// at (theta_b, phi) or (theta_b, phi + π). Normalized to unit trace.
pub fn hh_family(theta_a: f64, theta_b: f64, phi: f64) -> Matrix4 {
    let mut m = zero();
    for pa in [0.0, std::f64::consts::PI] {
        for pb in [phi, phi + std::f64::consts::PI] {
            add_projector(&mut m, &kron(&qubit(theta_a, pa), &qubit(theta_b, pb)), 0.25);
        }
    }
    m
}

/// Weights of |HH><HH|, |HH><HH| + |HV><HV|, |HH><HH| + |VH><VH| and I that
/// reproduce [`hh_family`]. All are non-negative when both angles are at most π/2.
pub fn hh_decomposition(theta_a: f64, theta_b: f64) -> [f64; 4] {
    let (sa, ca) = (0.5 * theta_a).sin_cos();
    let (sb, cb) = (0.5 * theta_b).sin_cos();
    let (ca2, sa2, cb2, sb2) = (ca * ca, sa * sa, cb * cb, sb * sb);
    [(ca2 - sa2) * (cb2 - sb2), (ca2 - sa2) * sb2, (cb2 - sb2) * sa2, sa2 * sb2]
}

pub fn hh_decomposition_matrix(w: [f64; 4]) -> Matrix4 {
    let terms = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 1.0, 0.0], [1.0, 1.0, 1.0, 1.0]];
    let mut d = [0.0; 4];
    for (weight, term) in w.iter().zip(&terms) {
        for i in 0..4 {
            d[i] += weight * term[i];
        }
    }
    diagonal(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polarized_frames_resolve_identity() {
        let m = polarized_frame_sum(0.3, 2.0, 1.1);
        assert!(max_abs_diff(&m, &identity()) < 1e-15);
    }

    #[test]
    fn hh_family_is_diagonal_and_decomposes() {
        let (ta, tb) = (0.4, 1.2);
        let m = hh_family(ta, tb, 0.7);
        let w = hh_decomposition(ta, tb);
        assert!(w.iter().all(|&x| x >= 0.0));
        assert!(max_abs_diff(&m, &hh_decomposition_matrix(w)) < 1e-15);
        let trace: f64 = (0..4).map(|i| m[i][i].re).sum();
        assert!((trace - 1.0).abs() < 1e-15);
    }
}
