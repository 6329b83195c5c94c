#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sethash::{PointSet, SetId};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_set(rng: &mut impl Rng, id: u64, n: usize, dim: usize, label: Option<u32>) -> PointSet {
    let values = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    PointSet::new(SetId(id), dim, values, label).unwrap()
}

/// Strategy for a point set with 1..=max_n points in `dim` dimensions.
pub fn point_set(dim: usize, max_n: usize) -> impl Strategy<Value = PointSet> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-3.0f64..3.0, n * dim)
            .prop_map(move |v| PointSet::new(SetId(0), dim, v, None).unwrap())
    })
}

/// Matrix exponential by scaling and squaring a truncated Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().column_sum().max();
    let mut s = 0;
    while norm / f64::from(1u32 << s) > 0.5 {
        s += 1;
    }
    let scaled = a / f64::from(1u32 << s);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Structural kernel straight from its definition, with no shared helpers.
pub fn structural_oracle(a: &PointSet, b: &PointSet, mu: Option<f64>, gamma: f64) -> f64 {
    fn dist(x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
    }
    fn weights(s: &PointSet, mu: Option<f64>) -> Vec<f64> {
        let n = s.len();
        let mu = mu.unwrap_or_else(|| {
            let mut d: Vec<f64> = (0..n)
                .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
                .map(|(p, q)| dist(s.point(p), s.point(q)))
                .collect();
            d.sort_by(|x, y| x.partial_cmp(y).unwrap());
            match d.len() {
                0 => 0.0,
                m if m % 2 == 1 => d[m / 2],
                m => (d[m / 2 - 1] + d[m / 2]) / 2.0,
            }
        });
        (0..n)
            .map(|p| 1.0 / (0..n).filter(|&q| dist(s.point(p), s.point(q)) <= mu).count() as f64)
            .collect()
    }
    let (wa, wb) = (weights(a, mu), weights(b, mu));
    let mut num = 0.0;
    for p in 0..a.len() {
        for q in 0..b.len() {
            num += wa[p] * wb[q] * (-gamma * dist(a.point(p), b.point(q)).powi(2)).exp();
        }
    }
    num / (wa.iter().sum::<f64>() * wb.iter().sum::<f64>())
}
