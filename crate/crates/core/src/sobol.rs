//! Sobol low-discrepancy sequence in up to 52 dimensions.
//!
//! Direction numbers are the first 52 rows of the Joe & Kuo
//! `new-joe-kuo-6.21201` table. Points are generated in Gray-code order, so
//! the first point is the origin. A seeded variant applies a random digital
//! shift (XOR of every coordinate with a fixed random word), which keeps the
//! (t, m, s)-net structure of every dyadic block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_DIMENSION: usize = 52;

const BITS: usize = 32;

/// `(degree s, coefficient word a, initial direction integers m)` for
/// dimensions 2..=52; the first dimension is the van der Corput sequence.
const DIRECTION_TABLE: [(u32, u32, &[u32]); MAX_DIMENSION - 1] = [
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
    (7, 7, &[1, 1, 3, 13, 7, 35, 63]),
    (7, 8, &[1, 3, 5, 9, 1, 25, 53]),
    (7, 14, &[1, 3, 1, 13, 9, 35, 107]),
    (7, 19, &[1, 3, 1, 5, 27, 61, 31]),
    (7, 21, &[1, 1, 5, 11, 19, 41, 61]),
    (7, 28, &[1, 3, 5, 3, 3, 13, 69]),
    (7, 31, &[1, 1, 7, 13, 1, 19, 1]),
    (7, 32, &[1, 3, 7, 5, 13, 19, 59]),
    (7, 37, &[1, 1, 3, 9, 25, 29, 41]),
    (7, 41, &[1, 3, 5, 13, 23, 1, 55]),
    (7, 42, &[1, 3, 7, 3, 13, 59, 17]),
    (7, 50, &[1, 3, 1, 3, 5, 53, 69]),
    (7, 55, &[1, 1, 5, 5, 23, 33, 13]),
    (7, 56, &[1, 1, 7, 7, 1, 61, 123]),
    (7, 59, &[1, 1, 7, 9, 13, 61, 49]),
    (7, 62, &[1, 3, 3, 5, 3, 55, 33]),
    (8, 14, &[1, 3, 1, 15, 31, 13, 49, 245]),
    (8, 21, &[1, 3, 5, 15, 31, 59, 63, 97]),
    (8, 22, &[1, 3, 1, 11, 11, 11, 77, 249]),
    (8, 38, &[1, 3, 1, 11, 27, 43, 71, 9]),
    (8, 47, &[1, 1, 7, 15, 21, 11, 81, 45]),
    (8, 49, &[1, 3, 7, 3, 25, 31, 65, 79]),
    (8, 50, &[1, 3, 1, 1, 19, 11, 3, 205]),
    (8, 52, &[1, 1, 5, 9, 19, 21, 29, 157]),
    (8, 56, &[1, 3, 7, 11, 1, 33, 89, 185]),
    (8, 67, &[1, 3, 3, 3, 15, 9, 79, 71]),
    (8, 70, &[1, 3, 7, 11, 15, 39, 119, 27]),
    (8, 84, &[1, 1, 3, 1, 11, 31, 97, 225]),
    (8, 97, &[1, 1, 1, 3, 23, 43, 57, 177]),
    (8, 103, &[1, 3, 7, 7, 17, 17, 37, 71]),
    (8, 115, &[1, 3, 1, 5, 27, 63, 123, 213]),

];

#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    shift: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(Error::Config(format!(
                "Sobol dimension must be in 1..={MAX_DIMENSION}, got {dim}"
            )));
        }
        let mut directions = Vec::with_capacity(dim);
        let mut first = [0u32; BITS];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1u32 << (BITS - 1 - k);
        }
        directions.push(first);
        for &(s, a, m) in DIRECTION_TABLE.iter().take(dim - 1) {
            let s = s as usize;
            let mut v = [0u32; BITS];
            for k in 0..s.min(BITS) {
                v[k] = m[k] << (BITS - 1 - k);
            }
            for k in s..BITS {
                v[k] = v[k - s] ^ (v[k - s] >> s);
                for i in 1..s {
                    if (a >> (s - 1 - i)) & 1 == 1 {
                        v[k] ^= v[k - i];
                    }
                }
            }
            directions.push(v);
        }
        Ok(Self {
            directions,
            state: vec![0; dim],
            shift: vec![0; dim],
            index: 0,
        })
    }

    /// Sequence with a random digital shift drawn from `seed`.
    pub fn scrambled(dim: usize, seed: u64) -> Result<Self> {
        let mut seq = Self::new(dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        seq.shift = (0..dim).map(|_| rng.random::<u32>()).collect();
        Ok(seq)
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    fn advance(&mut self) {
        let bit = (!self.index).trailing_zeros() as usize;
        if bit >= BITS {
            // 2^32 points exhausted; restart the cycle.
            self.index = 0;
            self.state.iter_mut().for_each(|s| *s = 0);
            return;
        }
        for (s, v) in self.state.iter_mut().zip(&self.directions) {
            *s ^= v[bit];
        }
        self.index += 1;
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let point = self
            .state
            .iter()
            .zip(&self.shift)
            .map(|(s, x)| (s ^ x) as f64 / 4_294_967_296.0)
            .collect();
        self.advance();
        point
    }
}

impl Iterator for Sobol {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        Some(self.next_point())
    }
}

/// First `n` points of the `d`-dimensional sequence, digitally shifted when a
/// seed is given.
pub fn sobol(n: usize, d: usize, seed: Option<u64>) -> Result<Vec<Vec<f64>>> {
    let seq = match seed {
        Some(s) => Sobol::scrambled(d, s)?,
        None => Sobol::new(d)?,
    };
    Ok(seq.take(n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_origin() {
        for d in [1, 7, 52] {
            assert_eq!(sobol(1, d, None).unwrap()[0], vec![0.0; d]);
        }
    }

    #[test]
    fn second_point_is_one_half() {
        assert_eq!(sobol(2, 1, None).unwrap()[1], vec![0.5]);
    }

    #[test]
    fn matches_reference_points() {
        // Joe-Kuo table in Gray-code order, as produced by common reference
        // implementations.
        let expected = [
            [0.0, 0.0, 0.0, 0.0, 0.0],
            [0.5, 0.5, 0.5, 0.5, 0.5],
            [0.75, 0.25, 0.25, 0.25, 0.75],
            [0.25, 0.75, 0.75, 0.75, 0.25],
            [0.375, 0.375, 0.625, 0.875, 0.375],
            [0.875, 0.875, 0.125, 0.375, 0.875],
            [0.625, 0.125, 0.875, 0.625, 0.625],
            [0.125, 0.625, 0.375, 0.125, 0.125],
        ];
        let pts = sobol(8, 5, None).unwrap();
        for (p, e) in pts.iter().zip(expected) {
            assert_eq!(p.as_slice(), e.as_slice());
        }
        let pts = sobol(16, 52, None).unwrap();
        let cols = [10, 25, 40, 51];
        let expected = [
            (5, [0.375, 0.375, 0.375, 0.375]),
            (11, [0.9375, 0.3125, 0.3125, 0.6875]),
            (15, [0.0625, 0.6875, 0.6875, 0.3125]),
        ];
        for (row, e) in expected {
            let got: Vec<f64> = cols.iter().map(|c| pts[row][*c]).collect();
            assert_eq!(got.as_slice(), e.as_slice(), "row {row}");
        }
    }

    fn net_counts(points: &[Vec<f64>], cells: usize) -> Vec<usize> {
        let mut counts = vec![0; cells * cells];
        for p in points {
            let i = (p[0] * cells as f64) as usize;
            let j = (p[1] * cells as f64) as usize;
            counts[i * cells + j] += 1;
        }
        counts
    }

    #[test]
    fn two_dimensional_net_property() {
        for seed in [None, Some(11)] {
            let pts = sobol(256, 2, seed).unwrap();
            assert!(net_counts(&pts, 4).iter().all(|&c| c == 16));
            assert!(net_counts(&pts, 16).iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn points_lie_in_unit_cube() {
        let pts = sobol(1000, 52, Some(3)).unwrap();
        assert!(pts.iter().flatten().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn scramble_is_seeded() {
        assert_eq!(sobol(32, 4, Some(9)).unwrap(), sobol(32, 4, Some(9)).unwrap());
        assert_ne!(sobol(32, 4, Some(9)).unwrap(), sobol(32, 4, Some(10)).unwrap());
    }

    #[test]
    fn unsupported_dimension() {
        assert!(matches!(Sobol::new(53), Err(Error::Config(_))));
        assert!(Sobol::new(0).is_err());
    }

    #[test]
    fn iterator_skip_continues_sequence() {
        let all = sobol(15, 3, None).unwrap();
        let tail: Vec<Vec<f64>> = Sobol::new(3).unwrap().skip(10).take(5).collect();
        assert_eq!(&all[10..], tail.as_slice());
    }
}
