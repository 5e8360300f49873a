//! Error-estimate calibration on integrands with closed-form integrals.

use std::f64::consts::TAU;

use num_complex::Complex64;
use pmdi::cubature::{integrate, IntegrationRequest};

struct Case {
    name: String,
    dim: usize,
    f: Box<dyn Fn(&[f64]) -> f64 + Sync>,
    exact: f64,
}

fn coefficients(dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|i| scale * (1.0 + 0.37 * i as f64) / dim as f64).collect()
}

fn oscillatory(dim: usize, k: f64, u: f64) -> Case {
    let a = coefficients(dim, 4.0 * k);
    let mut z = Complex64::from_polar(1.0, TAU * u);
    for &ai in &a {
        z *= (Complex64::from_polar(1.0, ai) - 1.0) / Complex64::new(0.0, ai);
    }
    let f = move |x: &[f64]| (TAU * u + a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>()).cos();
    Case { name: format!("oscillatory d={dim}"), dim, f: Box::new(f), exact: z.re }
}

fn product_peak(dim: usize, k: f64, w: f64) -> Case {
    let a = coefficients(dim, 6.0 * k);
    let exact = a.iter().map(|&ai| ai * ((ai * (1.0 - w)).atan() + (ai * w).atan())).product();
    let f = move |x: &[f64]| a.iter().zip(x).map(|(ai, xi)| 1.0 / (ai.powi(-2) + (xi - w).powi(2))).product();
    Case { name: format!("product peak d={dim}"), dim, f: Box::new(f), exact }
}

fn continuous(dim: usize, k: f64, w: f64) -> Case {
    let a = coefficients(dim, 3.0 * k);
    let exact = a.iter().map(|&ai| (2.0 - (-ai * w).exp() - (-ai * (1.0 - w)).exp()) / ai).product();
    let f = move |x: &[f64]| (-a.iter().zip(x).map(|(ai, xi)| ai * (xi - w).abs()).sum::<f64>()).exp();
    Case { name: format!("continuous d={dim}"), dim, f: Box::new(f), exact }
}

fn corner_peak(dim: usize, k: f64) -> Case {
    let a = coefficients(dim, 2.0 * k);
    // Inclusion-exclusion over the cube's vertices.
    let mut sum = 0.0;
    for mask in 0u32..(1 << dim) {
        let s: f64 = (0..dim).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).sum();
        let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / (1.0 + s);
    }
    let fact: f64 = (1..=dim).map(|k| k as f64).product();
    let exact = sum / (fact * a.iter().product::<f64>());
    let f = move |x: &[f64]| {
        let s: f64 = a.iter().zip(x).map(|(ai, xi)| ai * xi).sum();
        (1.0 + s).powi(-(dim as i32 + 1))
    };
    Case { name: format!("corner peak d={dim}"), dim, f: Box::new(f), exact }
}

fn family_set(k: f64, w: f64) -> Vec<Case> {
    let mut cases = Vec::new();
    for dim in [2, 3, 4, 6, 7] {
        cases.push(oscillatory(dim, k, w));
        cases.push(product_peak(dim, k, w));
        cases.push(continuous(dim, k, 1.0 - w));
        cases.push(corner_peak(dim, k));
    }
    cases
}

/// Names of the cases whose true error exceeds the reported estimate.
fn misses(cases: &[Case]) -> Vec<String> {
    let mut misses = Vec::new();
    for (k, c) in cases.iter().enumerate() {
        let req = IntegrationRequest::new(vec![(0.0, 1.0); c.dim], &c.f).rel_tol(1e-3).max_evals(2_000_000).seed(k as u64);
        let r = integrate(&req).unwrap();
        let err = (r.value - c.exact).abs();
        println!("{:<22} value {:.10e} exact {:.10e} err {:.2e} est {:.2e}", c.name, r.value, c.exact, err, r.error_estimate);
        if err > r.error_estimate {
            misses.push(c.name.clone());
        }
        assert!(err < 1e-2 * c.exact.abs(), "{}: {} vs {}", c.name, r.value, c.exact);
    }
    misses
}

#[test]
fn true_error_rarely_exceeds_estimate() {
    let cases = family_set(1.0, 0.4);
    assert_eq!(cases.len(), 20);
    let m = misses(&cases);
    assert!(m.len() <= 2, "estimate too small for {m:?}");
}

#[test]
fn calibration_holds_for_shifted_families() {
    for (k, w) in [(0.5, 0.13), (1.7, 0.71)] {
        let m = misses(&family_set(k, w));
        assert!(m.len() <= 2, "k = {k}, w = {w}: estimate too small for {m:?}");
    }
}

#[test]
fn replay_is_bitwise_identical() {
    let c = oscillatory(6, 1.0, 0.3);
    let req = IntegrationRequest::new(vec![(0.0, 1.0); 6], &c.f).rel_tol(1e-4).seed(99);
    let (a, b) = (integrate(&req).unwrap(), integrate(&req).unwrap());
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.error_estimate.to_bits(), b.error_estimate.to_bits());
}
