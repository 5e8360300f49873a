//! Invariants over randomized inputs.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use pmdi::channel::{bsm_probabilities, interfere, ArrivedState, ChannelParams, Rotation3D};
use pmdi::decoy::{synthetic, yield_bounds};
use pmdi::density;
use pmdi::keyrate::{binary_entropy, key_rate, KeyRateInputs};
use pmdi::source::{wrap_phase, RegionLayout, SourceSample};

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn arrived() -> impl Strategy<Value = ArrivedState> {
    (0.0..3.0f64, 0.0..3.0f64, 0.0..TAU).prop_map(|(mu_h, mu_v, phi_hv)| ArrivedState { mu_h, mu_v, phi_hv })
}

proptest! {
    #[test]
    fn beam_splitter_conserves_energy(m1 in 0.0..10.0f64, m2 in 0.0..10.0f64, phase in -20.0..20.0f64) {
        let (c, d) = interfere(m1, m2, phase);
        prop_assert_eq!(c + d, m1 + m2);
        prop_assert!(c >= 0.0 && d >= 0.0);
    }

    #[test]
    fn rotations_preserve_length(
        axis in prop::array::uniform3(-1.0..1.0f64),
        angle in -PI..PI,
        v in prop::array::uniform3(-2.0..2.0f64),
    ) {
        prop_assume!(norm(axis) > 1e-3);
        let rot = Rotation3D::new(axis, angle).unwrap();
        prop_assert!((norm(rot.apply(v)) - norm(v)).abs() <= 1e-12);
    }

    #[test]
    fn transmittance_falls_with_distance(d in 0.0..300.0f64, extra in 1e-6..50.0f64) {
        let (near, far) = (ChannelParams::standard(d), ChannelParams::standard(d + extra));
        prop_assert!(far.transmittance() < near.transmittance());
        prop_assert!(near.transmittance() <= 1.0 && far.transmittance() > 0.0);
    }

    #[test]
    fn entropy_is_symmetric_and_bounded(x in 0.0..=1.0f64) {
        let h = binary_entropy(x).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!((h - binary_entropy(1.0 - x).unwrap()).abs() <= 1e-12);
        prop_assert!(h <= binary_entropy(0.5).unwrap());
    }

    #[test]
    fn key_rate_is_non_negative_and_falls_with_errors(
        p_z in 0.0..=1.0f64,
        p1 in 0.0..0.5f64,
        y11 in 0.0..=1.0f64,
        e11 in 0.0..0.5f64,
        q_z in 1e-9..1.0f64,
        err in 0.0..0.5f64,
        more in 0.0..0.5f64,
    ) {
        let inputs = KeyRateInputs {
            p_z_a: p_z, p_z_b: p_z, p1_a: p1, p1_b: p1, y11_lower: y11, e11_upper: e11,
            q_z, qe_z: err * q_z, f_ec: 1.16,
        };
        let worse = KeyRateInputs { qe_z: (err + more).min(0.5) * q_z, ..inputs };
        let (r, r_worse) = (key_rate(&inputs), key_rate(&worse));
        prop_assert!(r >= 0.0 && r_worse >= 0.0);
        prop_assert!(r_worse <= r);
    }

    #[test]
    fn poisson_mass_is_complete(mu in 0.0..5.0f64, n_max in 1usize..12) {
        let m = synthetic::poisson_moments(mu, n_max);
        prop_assert_eq!(m.p.len(), n_max + 1);
        let total: f64 = m.p.iter().sum::<f64>() + m.tail;
        prop_assert!((total - 1.0).abs() <= 1e-12, "total {}", total);
        prop_assert!(m.tail >= 0.0);
    }

    #[test]
    fn classified_samples_lie_in_their_sector(
        r in 0.0..1.2f64,
        theta in 0.0..=FRAC_PI_2,
        phi in 0.0..TAU,
        delta_z in 0.001..0.3f64,
        delta_xy in 0.001..0.3f64,
        delta_phi in 0.001..1.0f64,
        t3 in 0.06..=1.0f64,
    ) {
        let layout = RegionLayout { delta_z, delta_xy, delta_phi, t3, ..RegionLayout::default() };
        prop_assume!(layout.validate().is_ok());
        let s = SourceSample::from_polar(r, theta, phi);
        if let Some(region) = layout.classify(&s) {
            let sec = layout.sector(region).unwrap();
            let (radius, angle) = (s.radius(), s.plane_angle());
            prop_assert!(radius >= sec.r.0 - 1e-12 && radius <= sec.r.1 + 1e-12, "{} r {}", region, radius);
            prop_assert!(angle >= sec.theta.0 - 1e-12 && angle <= sec.theta.1 + 1e-12, "{} theta {}", region, angle);
            let mid = 0.5 * (sec.phi.0 + sec.phi.1);
            let half = 0.5 * (sec.phi.1 - sec.phi.0);
            let d = (s.phi_hv - mid).rem_euclid(TAU);
            prop_assert!(d.min(TAU - d) <= half + 1e-12, "{} phi {}", region, s.phi_hv);
        } else {
            // Unclassified samples sit outside every sector.
            prop_assert!(r > t3 * layout.mu_max || !sector_contains_any(&layout, &s));
        }
    }

    #[test]
    fn bsm_probabilities_are_periodic_probabilities(a in arrived(), b in arrived(), phi_r in -10.0..10.0f64, pd in 0.0..1e-2f64) {
        let params = ChannelParams { dark_count_prob: pd, ..ChannelParams::standard(0.0) };
        let o = bsm_probabilities(&a, &b, phi_r, &params);
        for p in [o.p_psi_minus, o.p_psi_plus, o.gain()] {
            prop_assert!((0.0..=1.0).contains(&p));
        }
        let shifted = bsm_probabilities(&a, &b, phi_r + TAU, &params);
        prop_assert!((shifted.p_psi_minus - o.p_psi_minus).abs() <= 1e-12);
        prop_assert!((shifted.p_psi_plus - o.p_psi_plus).abs() <= 1e-12);
    }

    #[test]
    fn frame_projectors_resolve_identity(ta in 0.0..PI, tb in 0.0..PI, phi in 0.0..TAU) {
        let m = density::polarized_frame_sum(ta, tb, phi);
        prop_assert!(density::max_abs_diff(&m, &density::identity()) <= 1e-12);
    }

    #[test]
    fn hh_family_decomposes_with_non_negative_weights(ta in 0.0..=FRAC_PI_2, tb in 0.0..=FRAC_PI_2, phi in 0.0..TAU) {
        let w = density::hh_decomposition(ta, tb);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w[0] + 2.0 * w[1] + 2.0 * w[2] + 4.0 * w[3] - 1.0).abs() <= 1e-12);
        let m = density::hh_family(ta, tb, phi);
        prop_assert!(density::max_abs_diff(&m, &density::hh_decomposition_matrix(w)) <= 1e-12);
    }

    #[test]
    fn wrapped_phases_stay_in_one_period(phi in -1e3..1e3f64) {
        let w = wrap_phase(phi);
        prop_assert!((0.0..TAU).contains(&w));
        let d = (w - phi).rem_euclid(TAU);
        prop_assert!(d.min(TAU - d) <= 1e-9);
    }
}

fn sector_contains_any(layout: &RegionLayout, s: &SourceSample) -> bool {
    pmdi::source::RegionId::all().any(|region| {
        let sec = layout.sector(region).unwrap();
        let (radius, angle) = (s.radius(), s.plane_angle());
        let d = (s.phi_hv - 0.5 * (sec.phi.0 + sec.phi.1)).rem_euclid(TAU);
        radius >= sec.r.0
            && radius <= sec.r.1
            && angle >= sec.theta.0
            && angle <= sec.theta.1
            && d.min(TAU - d) <= 0.5 * (sec.phi.1 - sec.phi.0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decoy_bounds_never_overshoot_the_truth(seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let inst = synthetic::random_instance(&mut rng, 8);
        let b = yield_bounds(&inst.stats, 8, 1.0).unwrap();
        prop_assert!(b.y11_lower <= inst.y11() * (1.0 + 1e-9) + 1e-15, "Y11 {} > {}", b.y11_lower, inst.y11());
        prop_assert!(b.e11y11_upper >= inst.e11y11() * (1.0 - 1e-9) - 1e-15, "e11Y11 {} < {}", b.e11y11_upper, inst.e11y11());
    }
}
