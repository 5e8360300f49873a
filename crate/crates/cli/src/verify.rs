//! Quick property checks run by `--mode verify`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use pmdi::channel::{bsm_probabilities, interfere, ArrivedState, ChannelParams, Rotation3D};
use pmdi::decoy::{synthetic, yield_bounds};
use pmdi::density;
use pmdi::keyrate::{binary_entropy, key_rate, small_ring_rate, KeyRateInputs, RingPartition};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn frame_identity(rng: &mut ChaCha20Rng, samples: usize) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (ta, tb, phi) = (rng.gen_range(0.0..PI), rng.gen_range(0.0..PI), rng.gen_range(0.0..TAU));
        worst = worst.max(density::max_abs_diff(&density::polarized_frame_sum(ta, tb, phi), &density::identity()));
    }
    check("frame projectors sum to identity", worst <= 1e-12, format!("max deviation {worst:.2e}"))
}

fn hh_decomposition(rng: &mut ChaCha20Rng, samples: usize) -> Check {
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    for _ in 0..samples {
        let (ta, tb) = (rng.gen_range(0.0..=FRAC_PI_2), rng.gen_range(0.0..=FRAC_PI_2));
        let phi = rng.gen_range(0.0..TAU);
        let w = density::hh_decomposition(ta, tb);
        if w.iter().any(|&x| x < 0.0) {
            negative += 1;
        }
        let lhs = density::hh_family(ta, tb, phi);
        worst = worst.max(density::max_abs_diff(&lhs, &density::hh_decomposition_matrix(w)));
    }
    check(
        "HH family decomposition",
        worst <= 1e-12 && negative == 0,
        format!("max deviation {worst:.2e}, {negative} negative weights"),
    )
}

fn channel_properties(rng: &mut ChaCha20Rng, samples: usize) -> Check {
    let mut energy_ok = true;
    let mut worst_norm: f64 = 0.0;
    let mut worst_period: f64 = 0.0;
    let params = ChannelParams::standard(0.0);
    for _ in 0..samples {
        let (m1, m2, phase) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0), rng.gen_range(-10.0..10.0));
        let (c, d) = interfere(m1, m2, phase);
        energy_ok &= c + d == m1 + m2;
        let axis = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        if let Ok(rot) = Rotation3D::new(axis, rng.gen_range(-PI..PI)) {
            let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let w = rot.apply(v);
            let norm = |x: [f64; 3]| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            worst_norm = worst_norm.max((norm(w) - norm(v)).abs());
        }
        let a = ArrivedState { mu_h: m1, mu_v: m2, phi_hv: rng.gen_range(0.0..TAU) };
        let b = ArrivedState { mu_h: m2, mu_v: m1, phi_hv: rng.gen_range(0.0..TAU) };
        let (o1, o2) = (bsm_probabilities(&a, &b, phase, &params), bsm_probabilities(&a, &b, phase + TAU, &params));
        worst_period = worst_period.max((o1.p_psi_minus - o2.p_psi_minus).abs()).max((o1.p_psi_plus - o2.p_psi_plus).abs());
    }
    let loss = ChannelParams::standard(50.0).transmittance();
    check(
        "channel micro-properties",
        energy_ok && worst_norm <= 1e-12 && worst_period <= 1e-12 && loss == 0.1,
        format!(
            "energy exact {energy_ok}, norm drift {worst_norm:.2e}, period drift {worst_period:.2e}, loss(50 km) {loss}"
        ),
    )
}

fn dark_counts() -> Check {
    let pd = 1e-6;
    let params = ChannelParams { dark_count_prob: pd, ..ChannelParams::standard(0.0) };
    let o = bsm_probabilities(&ArrivedState::vacuum(), &ArrivedState::vacuum(), 0.3, &params);
    let expected = 2.0 * pd * pd * (1.0 - pd) * (1.0 - pd);
    let rel = (o.p_psi_minus - expected).abs() / expected;
    check("dark-count coincidences", rel < 1e-9, format!("psi- {:.6e}, expected {expected:.6e}", o.p_psi_minus))
}

fn lp_soundness(rng: &mut ChaCha20Rng, instances: usize) -> Check {
    let mut sound = 0;
    let mut failed = 0;
    for _ in 0..instances {
        let inst = synthetic::random_instance(rng, 8);
        match yield_bounds(&inst.stats, 8, 1.0) {
            Ok(b) if b.y11_lower <= inst.y11() && b.e11y11_upper >= inst.e11y11() => sound += 1,
            Ok(_) => {}
            Err(_) => failed += 1,
        }
    }
    check(
        "decoy bounds sound on synthetic instances",
        sound == instances,
        format!("{sound}/{instances} sound, {failed} solver errors"),
    )
}

fn rate_properties() -> Check {
    let h = binary_entropy(0.11).unwrap_or(f64::NAN);
    let entropy_ok = (h - 0.499_915_958_164_528_6).abs() < 1e-12 && binary_entropy(0.5).ok() == Some(1.0);
    let inputs = KeyRateInputs {
        p_z_a: 0.5,
        p_z_b: 0.5,
        p1_a: 0.3,
        p1_b: 0.3,
        y11_lower: 0.01,
        e11_upper: 0.02,
        q_z: 1e-3,
        qe_z: 2e-5,
        f_ec: 1.16,
    };
    let whole = key_rate(&inputs);
    let rings = RingPartition::new(vec![0.0, 0.5, 1.0], vec![0.5, 0.5]);
    let split = rings.and_then(|p| {
        let q = vec![vec![1e-3; 2]; 2];
        let qe = vec![vec![1e-6, 2e-5], vec![2e-5, 3.9e-5]];
        small_ring_rate(&inputs, &p, &p, &q, &qe)
    });
    let jensen_ok = matches!(split, Ok(r) if r >= whole);
    check(
        "entropy values and ring refinement",
        entropy_ok && jensen_ok && whole > 0.0,
        format!("h(0.11) = {h:.9}, R = {whole:.4e}, R_ring = {:.4e}", split.unwrap_or(f64::NAN)),
    )
}

/// All checks, randomized from `seed`.
pub fn run_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    vec![
        frame_identity(&mut rng, 10_000),
        hh_decomposition(&mut rng, 10_000),
        channel_properties(&mut rng, 10_000),
        dark_counts(),
        lp_soundness(&mut rng, 20),
        rate_properties(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_checks(3) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
