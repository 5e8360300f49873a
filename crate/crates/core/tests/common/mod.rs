//! Monte Carlo click simulator shared by the oracle tests. It works from
//! complex field amplitudes and sampled photon numbers, independently of the
//! closed-form click model in the library.

#![allow(dead_code)]

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use pmdi::channel::ArrivedState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    PsiMinus,
    PsiPlus,
    Other,
}

fn photons<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("positive mean").sample(rng) as u64
    }
}

/// Output amplitudes (c, d) of a symmetric beam splitter.
fn splitter(a: Complex64, b: Complex64) -> (Complex64, Complex64) {
    let i = Complex64::i();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ((a + i * b) * s, (i * a + b) * s)
}

/// Mean photon numbers at cH, cV, dH, dV.
pub fn detector_means(a: &ArrivedState, b: &ArrivedState, phi_r: f64) -> [f64; 4] {
    let ah = Complex64::new(a.mu_h.sqrt(), 0.0);
    let av = Complex64::from_polar(a.mu_v.sqrt(), -a.phi_hv);
    let bh = Complex64::from_polar(b.mu_h.sqrt(), phi_r);
    let bv = Complex64::from_polar(b.mu_v.sqrt(), phi_r - b.phi_hv);
    let (ch, dh) = splitter(ah, bh);
    let (cv, dv) = splitter(av, bv);
    [ch.norm_sqr(), cv.norm_sqr(), dh.norm_sqr(), dv.norm_sqr()]
}

/// One trial: sampled photon numbers plus independent dark counts.
pub fn trial<R: Rng + ?Sized>(rng: &mut R, a: &ArrivedState, b: &ArrivedState, phi_r: f64, pd: f64) -> Pattern {
    let means = detector_means(a, b, phi_r);
    let mut click = [false; 4];
    for (k, m) in means.iter().enumerate() {
        click[k] = photons(rng, *m) > 0 || rng.gen::<f64>() < pd;
    }
    match click {
        [true, false, false, true] | [false, true, true, false] => Pattern::PsiMinus,
        [true, true, false, false] | [false, false, true, true] => Pattern::PsiPlus,
        _ => Pattern::Other,
    }
}

/// Running weighted mean with a delta-method standard error of the ratio
/// sum(w x) / sum(w).
#[derive(Debug, Default, Clone)]
pub struct Ratio {
    sw: f64,
    swx: f64,
    sw2: f64,
    sw2x: f64,
    sw2x2: f64,
    n: usize,
}

impl Ratio {
    pub fn add(&mut self, w: f64, x: f64) {
        self.sw += w;
        self.swx += w * x;
        self.sw2 += w * w;
        self.sw2x += w * w * x;
        self.sw2x2 += w * w * x * x;
        self.n += 1;
    }

    pub fn mean(&self) -> f64 {
        self.swx / self.sw
    }

    pub fn std_error(&self) -> f64 {
        let m = self.mean();
        // sum w^2 (x - m)^2 / (sum w)^2
        let s = self.sw2x2 - 2.0 * m * self.sw2x + m * m * self.sw2;
        s.max(0.0).sqrt() / self.sw
    }
}
