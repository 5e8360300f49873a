//! Sobol' points with Matoušek linear scrambling plus a random digital shift.
//!
//! Direction numbers are the first entries of the Joe–Kuo "new-joe-kuo-6.21201"
//! table. Scrambling is applied to the direction numbers once, so generating a
//! scrambled point costs the same as an unscrambled one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

const BITS: usize = 32;

/// (degree s, coefficient a, initial m_1..m_s) for dimensions 2, 3, ...
const JOE_KUO: [(u32, u32, &[u32]); 11] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
];

pub const MAX_DIM: usize = JOE_KUO.len() + 1;

#[derive(Debug, Clone)]
pub struct ScrambledSobol {
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
}

impl ScrambledSobol {
    /// Plain (unscrambled) Sobol' sequence.
    pub fn plain(dim: usize) -> Result<Self> {
        let directions = direction_numbers(dim)?;
        Ok(Self { directions, shift: vec![0; dim] })
    }

    /// Scrambled sequence; distinct seeds give independent randomizations.
    pub fn scrambled(dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut directions = direction_numbers(dim)?;
        let mut shift = Vec::with_capacity(dim);
        for dirs in directions.iter_mut() {
            // Row p of the lower-triangular scramble: unit diagonal at bit p and
            // random bits in the more significant positions.
            let mut rows = [0u32; BITS];
            for (p, row) in rows.iter_mut().enumerate() {
                let diag = 1u32 << (BITS - 1 - p);
                let above = if p == 0 { 0 } else { !((1u32 << (BITS - p)) - 1) };
                *row = diag | (rng.gen::<u32>() & above);
            }
            for v in dirs.iter_mut() {
                let mut out = 0u32;
                for (p, row) in rows.iter().enumerate() {
                    if (*v & row).count_ones() % 2 == 1 {
                        out |= 1u32 << (BITS - 1 - p);
                    }
                }
                *v = out;
            }
            shift.push(rng.gen());
        }
        Ok(Self { directions, shift })
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// Writes the `index`-th point (in natural order) into `out`, each coordinate in (0, 1).
    pub fn point(&self, index: u32, out: &mut [f64]) {
        for ((x, dirs), shift) in out.iter_mut().zip(&self.directions).zip(&self.shift) {
            let mut acc = *shift;
            let mut i = index;
            let mut k = 0;
            while i != 0 {
                if i & 1 == 1 {
                    acc ^= dirs[k];
                }
                i >>= 1;
                k += 1;
            }
            *x = (acc as f64 + 0.5) * (1.0 / 4_294_967_296.0);
        }
    }
}

fn direction_numbers(dim: usize) -> Result<Vec<[u32; BITS]>> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidRequest(format!(
            "Sobol dimension {dim} outside 1..={MAX_DIM}"
        )));
    }
    let mut all = Vec::with_capacity(dim);
    let mut first = [0u32; BITS];
    for (k, v) in first.iter_mut().enumerate() {
        *v = 1u32 << (BITS - 1 - k);
    }
    all.push(first);
    for &(s, a, m) in JOE_KUO.iter().take(dim - 1) {
        let s = s as usize;
        let mut v = [0u32; BITS];
        for i in 0..s.min(BITS) {
            v[i] = m[i] << (BITS - 1 - i);
        }
        for i in s..BITS {
            let mut x = v[i - s] ^ (v[i - s] >> s);
            for k in 1..s {
                if (a >> (s - 1 - k)) & 1 == 1 {
                    x ^= v[i - k];
                }
            }
            v[i] = x;
        }
        all.push(v);
    }
    Ok(all)
}
