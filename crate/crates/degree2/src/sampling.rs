//! Seeded random generation of exact rational data: points, polynomials,
//! sections, matrices. Every generator is deterministic in the seed, and
//! all outputs are exact rationals (small numerators and denominators keep
//! intermediate arithmetic cheap).

use crate::graded::{Chart, Gen, GradedPoly};
use crate::linalg::Mat;
use crate::rat::{q, Q};
use num::BigInt;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Sampler {
        Sampler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// A rational with numerator in `[-bound, bound]` and denominator in
    /// `[1, den_bound]`.
    pub fn rational(&mut self, bound: i64, den_bound: i64) -> Q {
        let num = self.rng.gen_range(-bound..=bound);
        let den = self.rng.gen_range(1..=den_bound);
        Q::new(BigInt::from(num), BigInt::from(den))
    }

    /// A nonzero rational with the same bounds.
    pub fn nonzero_rational(&mut self, bound: i64, den_bound: i64) -> Q {
        loop {
            let r = self.rational(bound, den_bound);
            if !num::traits::Zero::is_zero(&r) {
                return r;
            }
        }
    }

    pub fn small_int(&mut self, bound: i64) -> i64 {
        self.rng.gen_range(-bound..=bound)
    }

    /// A point of the base with the listed coordinates pinned to zero.
    pub fn point_with_zeros(&mut self, n: usize, zeros: &[usize]) -> Vec<Q> {
        (0..n)
            .map(|i| if zeros.contains(&i) { Q::from_integer(BigInt::from(0)) } else { self.rational(3, 3) })
            .collect()
    }

    /// A random degree-0 polynomial: up to `terms` monomials of total
    /// degree at most `max_deg` in the base variables.
    pub fn poly_deg0(&mut self, chart: &Arc<Chart>, max_deg: u32, terms: usize) -> GradedPoly {
        let mut out = GradedPoly::zero(chart);
        for _ in 0..terms {
            let mut word = Vec::new();
            let deg = self.rng.gen_range(0..=max_deg);
            for _ in 0..deg {
                if chart.n_x() == 0 {
                    break;
                }
                word.push(Gen::X(self.rng.gen_range(0..chart.n_x())));
            }
            let coeff = self.rational(3, 2);
            out = &out + &GradedPoly::normalize(chart, &[(word, coeff)]);
        }
        out
    }

    /// A random homogeneous polynomial of the given degree: each of the
    /// `terms` summands combines an x-monomial of degree at most
    /// `max_x_deg` with generators of total degree exactly `degree`.
    pub fn homogeneous(
        &mut self,
        chart: &Arc<Chart>,
        degree: usize,
        max_x_deg: u32,
        terms: usize,
    ) -> GradedPoly {
        let mut out = GradedPoly::zero(chart);
        for _ in 0..terms {
            let mut word = Vec::new();
            if chart.n_x() > 0 {
                let deg = self.rng.gen_range(0..=max_x_deg);
                for _ in 0..deg {
                    word.push(Gen::X(self.rng.gen_range(0..chart.n_x())));
                }
            }
            // Split the target degree into 2s (p generators) and 1s (e
            // generators), at random.
            let mut remaining = degree;
            while remaining > 0 {
                if remaining >= 2 && chart.n_p() > 0 && self.rng.gen_bool(0.5) {
                    word.push(Gen::P(self.rng.gen_range(0..chart.n_p())));
                    remaining -= 2;
                } else if chart.n_e() > 0 {
                    word.push(Gen::E(self.rng.gen_range(0..chart.n_e())));
                    remaining -= 1;
                } else if chart.n_p() > 0 && remaining >= 2 {
                    word.push(Gen::P(self.rng.gen_range(0..chart.n_p())));
                    remaining -= 2;
                } else {
                    // Degree cannot be realized in this chart (e.g. odd
                    // degree with no odd generators); drop the term.
                    word.clear();
                    remaining = 0;
                }
            }
            if word.is_empty() && degree > 0 {
                continue;
            }
            let coeff = self.rational(3, 2);
            out = &out + &GradedPoly::normalize(chart, &[(word, coeff)]);
        }
        out
    }

    /// A random matrix with small rational entries.
    pub fn matrix(&mut self, rows: usize, cols: usize, bound: i64) -> Mat {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, q(self.small_int(bound)));
            }
        }
        m
    }

    /// A random invertible matrix, built as a product of unitriangular
    /// matrices and a signed permutation so the determinant never
    /// vanishes.
    pub fn invertible(&mut self, n: usize, bound: i64) -> Mat {
        let mut lower = Mat::identity(n);
        let mut upper = Mat::identity(n);
        for i in 0..n {
            for j in 0..n {
                if i > j {
                    lower.set(i, j, q(self.small_int(bound)));
                } else if i < j {
                    upper.set(i, j, q(self.small_int(bound)));
                }
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        let mut p = Mat::zeros(n, n);
        for (row, &col) in perm.iter().enumerate() {
            let sign = if self.rng.gen_bool(0.5) { 1 } else { -1 };
            p.set(row, col, q(sign));
        }
        lower.mul(&p).mul(&upper)
    }
}

/// Deterministic sample points on `{x^a = 0}`: the origin, each unit
/// point in the free coordinates, and `extra` seeded random points.
pub fn sample_points_on(n: usize, zeros: &[usize], seed: u64, extra: usize) -> Vec<Vec<Q>> {
    let mut pts = Vec::new();
    pts.push(vec![Q::from_integer(BigInt::from(0)); n]);
    for i in 0..n {
        if zeros.contains(&i) {
            continue;
        }
        let mut p = vec![Q::from_integer(BigInt::from(0)); n];
        p[i] = q(1);
        pts.push(p);
    }
    let mut sampler = Sampler::new(seed);
    for _ in 0..extra {
        pts.push(sampler.point_with_zeros(n, zeros));
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let mut a = Sampler::new(7);
        let mut b = Sampler::new(7);
        for _ in 0..10 {
            assert_eq!(a.rational(5, 3), b.rational(5, 3));
        }
        let mut c = Sampler::new(8);
        let run_a: Vec<Q> = (0..10).map(|_| a.rational(5, 3)).collect();
        let run_c: Vec<Q> = (0..10).map(|_| c.rational(5, 3)).collect();
        assert_ne!(run_a, run_c);
    }

    #[test]
    fn invertible_matrices_invert() {
        let mut s = Sampler::new(42);
        for n in 1..6 {
            let m = s.invertible(n, 2);
            assert!(m.inverse().is_some(), "matrix of size {n} not invertible");
        }
    }

    #[test]
    fn homogeneous_outputs_are_homogeneous() {
        let chart = crate::courant::standard_chart(3);
        let mut s = Sampler::new(5);
        for degree in 0..4 {
            for _ in 0..5 {
                let p = s.homogeneous(&chart, degree, 2, 3);
                assert!(p.is_homogeneous_of(degree), "degree {degree}: got {p}");
            }
        }
    }

    #[test]
    fn sample_points_respect_zeros() {
        let pts = sample_points_on(4, &[1], 99, 5);
        for p in &pts {
            assert_eq!(p.len(), 4);
            assert!(num::traits::Zero::is_zero(&p[1]));
        }
        // origin + 3 unit points + 5 random
        assert_eq!(pts.len(), 1 + 3 + 5);
    }
}
