//! Sobol low-discrepancy points with Joe–Kuo direction numbers and an
//! optional seeded random digital shift.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::rng_from;

const BITS: usize = 32;
const SHIFT_TAG: u64 = 0x50b0;

/// `(s, a, m_1..m_s)` for dimensions 2.. of the Joe–Kuo `new-joe-kuo-6.21201` table.
const DIRECTIONS: &[(u32, u32, &[u32])] = &[
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
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

/// Largest supported dimension.
pub const MAX_DIM: usize = DIRECTIONS.len() + 1;

/// Direction numbers for one dimension (0-based).
fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = DIRECTIONS[dim - 1];
    let s = s as usize;
    for k in 0..s.min(BITS) {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

/// Sobol generator over `[0, 1)^dim`. Index 0 (the origin) is skipped, so
/// the first point is `(0.5, …, 0.5)` when unshifted.
#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
}

impl Sobol {
    pub fn new(dim: usize, seed: Option<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("sobol dimension must be >= 1"));
        }
        if dim > MAX_DIM {
            return Err(Error::UnsupportedDimension { dim, max: MAX_DIM });
        }
        let shift = match seed {
            None => vec![0; dim],
            Some(s) => {
                let mut rng = rng_from(s, &[SHIFT_TAG]);
                (0..dim).map(|_| rng.random::<u32>()).collect()
            }
        };
        Ok(Self {
            directions: (0..dim).map(direction_numbers).collect(),
            shift,
        })
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// The `i`-th point (1-based sequence index; 0 is the origin).
    pub fn point(&self, index: u64) -> Vec<f64> {
        self.directions
            .iter()
            .zip(&self.shift)
            .map(|(v, &shift)| {
                let mut x = 0u32;
                let mut i = index;
                let mut k = 0;
                while i != 0 {
                    if i & 1 == 1 {
                        x ^= v[k];
                    }
                    i >>= 1;
                    k += 1;
                }
                f64::from(x ^ shift) / 4_294_967_296.0
            })
            .collect()
    }

    /// Points `1..=n`.
    pub fn take(&self, n: usize) -> Vec<Vec<f64>> {
        (1..=n as u64).map(|i| self.point(i)).collect()
    }
}

/// `n` points in `[0,1]^dim`; `seed = None` gives the unscrambled sequence.
pub fn sobol_points(dim: usize, n: usize, seed: Option<u64>) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::invalid("sobol point count must be >= 1"));
    }
    Ok(Sobol::new(dim, seed)?.take(n))
}
