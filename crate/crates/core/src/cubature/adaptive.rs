//! Globally adaptive subdivision: Gauss–Kronrod 7/15 in one dimension and the
//! Genz–Malik degree-7/5 embedded rule in two or more.

use std::collections::BinaryHeap;

use super::gauss::{WG7, WGK15, XGK15};
use super::{IntegrationSettings, VectorResult};
use crate::error::{Error, Result};

/// The degree-7/degree-5 difference underestimates the error of integrands
/// with kinks inside a region; this factor keeps the estimate conservative.
const SAFETY: f64 = 4.0;

#[derive(Debug, Clone)]
struct Region {
    center: Vec<f64>,
    half: Vec<f64>,
    values: Vec<f64>,
    errors: Vec<f64>,
    split_dim: usize,
}

impl Region {
    fn worst(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.worst().total_cmp(&other.worst()).is_eq()
    }
}
impl Eq for Region {}
impl PartialOrd for Region {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Region {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.worst().total_cmp(&other.worst())
    }
}

struct Evaluator<'a, F> {
    f: &'a F,
    comps: usize,
    point: Vec<f64>,
    out: Vec<f64>,
    evals: usize,
}

impl<F: Fn(&[f64], &mut [f64])> Evaluator<'_, F> {
    fn eval(&mut self) -> Result<&[f64]> {
        self.out.iter_mut().for_each(|v| *v = 0.0);
        (self.f)(&self.point, &mut self.out);
        self.evals += 1;
        if self.out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIntegrand { point: self.point.clone() });
        }
        Ok(&self.out)
    }

    fn rule(&mut self, center: &[f64], half: &[f64]) -> Result<Region> {
        if center.len() == 1 {
            self.kronrod(center[0], half[0])
        } else {
            self.genz_malik(center, half)
        }
    }

    fn kronrod(&mut self, c: f64, h: f64) -> Result<Region> {
        let comps = self.comps;
        let mut k = vec![0.0; comps];
        let mut g = vec![0.0; comps];
        self.point[0] = c;
        let f0 = self.eval()?.to_vec();
        for j in 0..comps {
            k[j] = WGK15[7] * f0[j];
            g[j] = WG7[3] * f0[j];
        }
        for i in 0..7 {
            self.point[0] = c + h * XGK15[i];
            let fp = self.eval()?.to_vec();
            self.point[0] = c - h * XGK15[i];
            let fm = self.eval()?.to_vec();
            for j in 0..comps {
                let s = fp[j] + fm[j];
                k[j] += WGK15[i] * s;
                if i % 2 == 1 {
                    g[j] += WG7[i / 2] * s;
                }
            }
        }
        let values: Vec<f64> = k.iter().map(|v| v * h).collect();
        let errors = k.iter().zip(&g).map(|(a, b)| ((a - b) * h).abs()).collect();
        Ok(Region { center: vec![c], half: vec![h], values, errors, split_dim: 0 })
    }

    fn genz_malik(&mut self, center: &[f64], half: &[f64]) -> Result<Region> {
        let d = center.len();
        let df = d as f64;
        let comps = self.comps;
        let l2 = (9.0f64 / 70.0).sqrt();
        let l4 = (9.0f64 / 10.0).sqrt();
        let l5 = (9.0f64 / 19.0).sqrt();
        let w1 = (12824.0 - 9120.0 * df + 400.0 * df * df) / 19683.0;
        let w2 = 980.0 / 6561.0;
        let w3 = (1820.0 - 400.0 * df) / 19683.0;
        let w4 = 200.0 / 19683.0;
        let w5 = 6859.0 / 19683.0 / (1u64 << d) as f64;
        let e1 = (729.0 - 950.0 * df + 50.0 * df * df) / 729.0;
        let e2 = 245.0 / 486.0;
        let e3 = (265.0 - 100.0 * df) / 1458.0;
        let e4 = 25.0 / 729.0;

        self.point.copy_from_slice(center);
        let f0 = self.eval()?.to_vec();
        let mut s2 = vec![0.0; comps];
        let mut s3 = vec![0.0; comps];
        let mut s4 = vec![0.0; comps];
        let mut s5 = vec![0.0; comps];
        let mut fourth = vec![0.0; d];
        let ratio = (l2 / l4).powi(2);
        for i in 0..d {
            // Accumulates the symmetric pair at +-step along axis i and returns the
            // second difference (summed over components) for the split heuristic.
            let pair = |step: f64, acc: &mut [f64], this: &mut Self| -> Result<f64> {
                this.point.copy_from_slice(center);
                this.point[i] = center[i] + step * half[i];
                let fp = this.eval()?.to_vec();
                this.point[i] = center[i] - step * half[i];
                let fm = this.eval()?.to_vec();
                let mut second = 0.0;
                for j in 0..comps {
                    acc[j] += fp[j] + fm[j];
                    second += fp[j] + fm[j] - 2.0 * f0[j];
                }
                Ok(second)
            };
            let d2 = pair(l2, &mut s2, self)?;
            let d4 = pair(l4, &mut s3, self)?;
            fourth[i] = (d2 - ratio * d4).abs();
        }
        for i in 0..d {
            for k in (i + 1)..d {
                for (si, sk) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    self.point.copy_from_slice(center);
                    self.point[i] += si * l4 * half[i];
                    self.point[k] += sk * l4 * half[k];
                    let f = self.eval()?;
                    for j in 0..comps {
                        s4[j] += f[j];
                    }
                }
            }
        }
        for corner in 0..(1u64 << d) {
            for i in 0..d {
                let sign = if (corner >> i) & 1 == 1 { 1.0 } else { -1.0 };
                self.point[i] = center[i] + sign * l5 * half[i];
            }
            let f = self.eval()?;
            for j in 0..comps {
                s5[j] += f[j];
            }
        }
        let volume: f64 = half.iter().map(|h| 2.0 * h).product();
        let mut values = vec![0.0; comps];
        let mut errors = vec![0.0; comps];
        for j in 0..comps {
            let i7 = w1 * f0[j] + w2 * s2[j] + w3 * s3[j] + w4 * s4[j] + w5 * s5[j];
            let i5 = e1 * f0[j] + e2 * s2[j] + e3 * s3[j] + e4 * s4[j];
            values[j] = volume * i7;
            errors[j] = SAFETY * (volume * (i7 - i5)).abs();
        }
        // Split along the axis with the largest fourth difference; ties go to the widest axis.
        let mut split_dim = 0;
        let mut best = -1.0;
        for i in 0..d {
            let key = fourth[i];
            let better = key > best * (1.0 + 1e-12)
                || ((key - best).abs() <= 1e-12 * best.abs().max(1e-300) && half[i] > half[split_dim]);
            if better {
                best = key;
                split_dim = i;
            }
        }
        Ok(Region { center: center.to_vec(), half: half.to_vec(), values, errors, split_dim })
    }
}

pub(super) fn integrate<F>(
    bounds: &[(f64, f64)],
    comps: usize,
    f: &F,
    settings: &IntegrationSettings,
) -> Result<VectorResult>
where
    F: Fn(&[f64], &mut [f64]),
{
    let d = bounds.len();
    let mut ev = Evaluator { f, comps, point: vec![0.0; d], out: vec![0.0; comps], evals: 0 };
    let center: Vec<f64> = bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let half: Vec<f64> = bounds.iter().map(|(a, b)| 0.5 * (b - a)).collect();
    let first = ev.rule(&center, &half)?;
    let per_region = ev.evals;
    let mut totals = first.values.clone();
    let mut total_err = first.errors.clone();
    let mut heap = BinaryHeap::new();
    heap.push(first);

    let done = |vals: &[f64], errs: &[f64]| {
        vals.iter()
            .zip(errs)
            .all(|(v, e)| *e <= (settings.rel_tol * v.abs()).max(settings.abs_tol))
    };
    let mut converged = done(&totals, &total_err);
    while !converged && ev.evals + 2 * per_region <= settings.max_evals {
        let Some(worst) = heap.pop() else { break };
        let k = worst.split_dim;
        let mut half = worst.half.clone();
        half[k] *= 0.5;
        let mut left = worst.center.clone();
        left[k] -= half[k];
        let mut right = worst.center.clone();
        right[k] += half[k];
        let a = ev.rule(&left, &half)?;
        let b = ev.rule(&right, &half)?;
        for j in 0..comps {
            totals[j] += a.values[j] + b.values[j] - worst.values[j];
            total_err[j] += a.errors[j] + b.errors[j] - worst.errors[j];
        }
        heap.push(a);
        heap.push(b);
        converged = done(&totals, &total_err.iter().map(|e| e.max(0.0)).collect::<Vec<_>>());
    }

    // Re-sum from scratch so running-total drift does not leak into the result.
    let mut values = vec![0.0; comps];
    let mut errors = vec![0.0; comps];
    let mut regions: Vec<Region> = heap.into_vec();
    regions.sort_by(|a, b| a.center.partial_cmp(&b.center).unwrap_or(std::cmp::Ordering::Equal));
    for r in &regions {
        for j in 0..comps {
            values[j] += r.values[j];
            errors[j] += r.errors[j];
        }
    }
    let converged = done(&values, &errors);
    Ok(VectorResult { values, errors, evals_used: ev.evals, converged })
}
