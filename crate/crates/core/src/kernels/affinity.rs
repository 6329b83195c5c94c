use std::cmp::Ordering;

use crate::data::PointSet;
use crate::error::{Error, Result};

/// Distance threshold for the quantized affinity graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    /// Median pairwise point distance within each set.
    Auto,
}

/// Binary affinity graph of one set: entry `(p, q)` is 1 iff `‖x_p − x_q‖ ≤ μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    entries: Vec<bool>,
    row_degrees: Vec<u32>,
}

impl AffinityMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, p: usize, q: usize) -> bool {
        self.entries[p * self.n + q]
    }

    pub fn row_degrees(&self) -> &[u32] {
        &self.row_degrees
    }

    /// Per-point weights `1 / degree`.
    pub fn weights(&self) -> Vec<f64> {
        self.row_degrees.iter().map(|&d| 1.0 / f64::from(d)).collect()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn pairwise_distances(set: &PointSet) -> Vec<f64> {
    let n = set.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for p in 0..n {
        for q in p + 1..n {
            out.push(sq_dist(set.point(p), set.point(q)).sqrt());
        }
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

pub fn build_affinity(set: &PointSet, mu: Threshold) -> Result<AffinityMatrix> {
    let n = set.len();
    let mut dists = pairwise_distances(set);
    let mu = match mu {
        Threshold::Fixed(m) if m > 0.0 && m.is_finite() => m,
        Threshold::Fixed(m) => {
            return Err(Error::invalid(format!("affinity threshold {m} must be positive")))
        }
        Threshold::Auto => median(&mut dists.clone()),
    };

    let mut entries = vec![false; n * n];
    let mut k = 0;
    for p in 0..n {
        entries[p * n + p] = true;
        for q in p + 1..n {
            let linked = dists[k].partial_cmp(&mu) != Some(Ordering::Greater);
            entries[p * n + q] = linked;
            entries[q * n + p] = linked;
            k += 1;
        }
    }
    dists.clear();
    let row_degrees = entries
        .chunks_exact(n)
        .map(|row| row.iter().filter(|&&e| e).count() as u32)
        .collect();
    Ok(AffinityMatrix {
        n,
        entries,
        row_degrees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SetId;

    fn set(rows: &[Vec<f64>]) -> PointSet {
        PointSet::from_rows(SetId(0), rows, None).unwrap()
    }

    #[test]
    fn singleton_is_one() {
        let a = build_affinity(&set(&[vec![3.0, 4.0]]), Threshold::Fixed(0.5)).unwrap();
        assert_eq!(a.len(), 1);
        assert!(a.get(0, 0));
        assert_eq!(a.row_degrees(), &[1]);
        let a = build_affinity(&set(&[vec![3.0, 4.0]]), Threshold::Auto).unwrap();
        assert_eq!(a.row_degrees(), &[1]);
    }

    #[test]
    fn threshold_exceeded_gives_identity() {
        let a = build_affinity(&set(&[vec![0.0], vec![3.0]]), Threshold::Fixed(2.0)).unwrap();
        assert!(a.get(0, 0) && a.get(1, 1));
        assert!(!a.get(0, 1) && !a.get(1, 0));
        assert_eq!(a.weights(), vec![1.0, 1.0]);
    }

    #[test]
    fn threshold_satisfied_gives_ones() {
        let a = build_affinity(&set(&[vec![0.0], vec![1.0]]), Threshold::Fixed(2.0)).unwrap();
        assert!((0..2).all(|p| (0..2).all(|q| a.get(p, q))));
        assert_eq!(a.weights(), vec![0.5, 0.5]);
    }

    #[test]
    fn distance_equal_to_mu_is_linked() {
        let a = build_affinity(&set(&[vec![0.0], vec![2.0]]), Threshold::Fixed(2.0)).unwrap();
        assert!(a.get(0, 1));
    }

    #[test]
    fn auto_uses_median_distance() {
        // distances 1, 3, 4 -> median 3
        let a = build_affinity(&set(&[vec![0.0], vec![1.0], vec![4.0]]), Threshold::Auto).unwrap();
        assert!(a.get(0, 1) && a.get(1, 2) && !a.get(0, 2));
        assert_eq!(a.row_degrees(), &[2, 3, 2]);
    }

    #[test]
    fn bad_threshold_rejected() {
        assert!(build_affinity(&set(&[vec![0.0]]), Threshold::Fixed(0.0)).is_err());
        assert!(build_affinity(&set(&[vec![0.0]]), Threshold::Fixed(f64::NAN)).is_err());
    }
}
