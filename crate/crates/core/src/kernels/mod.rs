//! Set-to-set kernels.
//!
//! Two kernels compare point sets:
//!
//! * the **structural** kernel averages a Gaussian base similarity over all
//!   cross-set point pairs, weighting each point by the inverse of its degree
//!   in the set's quantized affinity graph, so points inside dense cliques
//!   count less individually and each clique acts roughly as one concept;
//! * the **statistical** kernel is a Gaussian on the log-Euclidean distance
//!   between regularized set covariances.

mod affinity;
pub mod cache;
mod covariance;
mod pca;

use std::cmp::Ordering;

use rand::seq::index;
use rayon::prelude::*;

use crate::data::{PointSet, SetId};
use crate::error::{Error, Result};
use crate::rng::{self, Stage};

pub use affinity::{build_affinity, AffinityMatrix, Threshold};
pub use covariance::{
    covariance, log_euclidean_sq, log_spd, statistical_kernel, CovarianceDescriptor, EIGEN_FLOOR,
    RIDGE_FLOOR,
};
pub use pca::{double_center, kernel_pca_init};

use affinity::sq_dist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KernelId {
    Structural,
    Statistical,
}

impl KernelId {
    pub const ALL: [KernelId; 2] = [KernelId::Structural, KernelId::Statistical];

    pub fn code(self) -> u8 {
        match self {
            KernelId::Structural => 0,
            KernelId::Statistical => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(KernelId::Structural),
            1 => Some(KernelId::Statistical),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelId::Structural => "structural",
            KernelId::Statistical => "statistical",
        }
    }
}

/// Concrete kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub mu: Threshold,
    pub gamma_g: f64,
    pub gamma_s: f64,
    pub cov_ridge: f64,
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if let Threshold::Fixed(m) = self.mu {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::invalid(format!("mu = {m} must be positive")));
            }
        }
        for (name, v) in [("gamma_g", self.gamma_g), ("gamma_s", self.gamma_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.cov_ridge >= 0.0 && self.cov_ridge.is_finite()) {
            return Err(Error::invalid(format!(
                "cov_ridge = {} must be >= 0",
                self.cov_ridge
            )));
        }
        Ok(())
    }
}

/// Kernel settings where the bandwidths may be left to the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub mu: Threshold,
    /// `None`: `1 / (2 m²)` with `m` the mean pairwise point distance of a training subsample.
    pub gamma_g: Option<f64>,
    /// `None`: mean pairwise log-Euclidean distance between training sets.
    pub gamma_s: Option<f64>,
    pub cov_ridge: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            mu: Threshold::Auto,
            gamma_g: None,
            gamma_s: None,
            cov_ridge: 1e-3,
        }
    }
}

/// Points pooled for the γ_g heuristic.
const GAMMA_G_SAMPLE: usize = 1000;
/// Sets used for the γ_s heuristic.
const GAMMA_S_SAMPLE: usize = 300;

impl KernelConfig {
    /// Fills in data-driven bandwidths from training sets.
    pub fn resolve(&self, training: &[&PointSet], seed: u64) -> Result<KernelParams> {
        if training.is_empty() {
            return Err(Error::invalid("kernel bandwidths need at least one training set"));
        }
        let gamma_g = match self.gamma_g {
            Some(g) => g,
            None => {
                let m = mean_point_distance(training, seed);
                if m > 0.0 {
                    1.0 / (2.0 * m * m)
                } else {
                    1.0
                }
            }
        };
        let gamma_s = match self.gamma_s {
            Some(g) => g,
            None => {
                let mut rng = rng::stream(seed, Stage::KernelSubsample, 1);
                let picked: Vec<&PointSet> = if training.len() > GAMMA_S_SAMPLE {
                    let mut idx = index::sample(&mut rng, training.len(), GAMMA_S_SAMPLE).into_vec();
                    idx.sort_unstable();
                    idx.into_iter().map(|i| training[i]).collect()
                } else {
                    training.to_vec()
                };
                let covs = picked
                    .par_iter()
                    .map(|s| covariance(s, self.cov_ridge))
                    .collect::<Result<Vec<_>>>()?;
                let m = mean_pairwise(covs.len(), |i, j| log_euclidean_sq(&covs[i], &covs[j]).sqrt());
                if m > 0.0 {
                    m
                } else {
                    1.0
                }
            }
        };
        let params = KernelParams {
            mu: self.mu,
            gamma_g,
            gamma_s,
            cov_ridge: self.cov_ridge,
        };
        params.validate()?;
        Ok(params)
    }
}

fn mean_pairwise(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| f(i, j)).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    total / (n * (n - 1) / 2) as f64
}

fn mean_point_distance(training: &[&PointSet], seed: u64) -> f64 {
    let all: Vec<&[f64]> = training.iter().flat_map(|s| s.points()).collect();
    let points: Vec<&[f64]> = if all.len() > GAMMA_G_SAMPLE {
        let mut rng = rng::stream(seed, Stage::KernelSubsample, 0);
        let mut idx = index::sample(&mut rng, all.len(), GAMMA_G_SAMPLE).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| all[i]).collect()
    } else {
        all
    };
    mean_pairwise(points.len(), |i, j| sq_dist(points[i], points[j]).sqrt())
}

/// Total order on set contents, used to evaluate pairwise sums in a fixed
/// orientation so kernels are exactly symmetric in floating point.
fn content_cmp(a: &PointSet, b: &PointSet) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

fn structural_weighted(xi: &PointSet, wi: &[f64], xj: &PointSet, wj: &[f64], gamma_g: f64) -> f64 {
    let (a, wa, b, wb) = if content_cmp(xi, xj) == Ordering::Greater {
        (xj, wj, xi, wi)
    } else {
        (xi, wi, xj, wj)
    };
    let mut num = 0.0;
    for (p, w_p) in a.points().zip(wa) {
        let inner: f64 = b
            .points()
            .zip(wb)
            .map(|(q, w_q)| w_q * (-gamma_g * sq_dist(p, q)).exp())
            .sum();
        num += w_p * inner;
    }
    let den = wa.iter().sum::<f64>() * wb.iter().sum::<f64>();
    (num / den).min(1.0)
}

/// Degree-weighted Gaussian similarity between two sets.
pub fn structural_kernel(
    xi: &PointSet,
    xj: &PointSet,
    ai: &AffinityMatrix,
    aj: &AffinityMatrix,
    gamma_g: f64,
) -> Result<f64> {
    if xi.dim() != xj.dim() {
        return Err(Error::DimensionMismatch {
            expected: xi.dim(),
            found: xj.dim(),
        });
    }
    if ai.len() != xi.len() || aj.len() != xj.len() {
        return Err(Error::invalid("affinity matrix does not belong to its set"));
    }
    Ok(structural_weighted(xi, &ai.weights(), xj, &aj.weights(), gamma_g))
}

/// A set with its per-set kernel ingredients precomputed.
#[derive(Debug, Clone)]
pub struct PreparedSet<'a> {
    pub set: &'a PointSet,
    pub weights: Vec<f64>,
    pub covariance: CovarianceDescriptor,
}

impl<'a> PreparedSet<'a> {
    pub fn new(set: &'a PointSet, params: &KernelParams) -> Result<Self> {
        let weights = build_affinity(set, params.mu)?.weights();
        let covariance = covariance(set, params.cov_ridge)?;
        Ok(Self {
            set,
            weights,
            covariance,
        })
    }

    pub fn kernel(&self, other: &PreparedSet<'_>, kind: KernelId, params: &KernelParams) -> f64 {
        match kind {
            KernelId::Structural => structural_weighted(
                self.set,
                &self.weights,
                other.set,
                &other.weights,
                params.gamma_g,
            ),
            KernelId::Statistical => {
                statistical_kernel(&self.covariance, &other.covariance, params.gamma_s)
            }
        }
    }
}

pub fn prepare_all<'a>(sets: &[&'a PointSet], params: &KernelParams) -> Result<Vec<PreparedSet<'a>>> {
    sets.par_iter().map(|s| PreparedSet::new(s, params)).collect()
}

/// Pairwise kernel values between an ordered list of row sets and column sets.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    kind: KernelId,
    row_ids: Vec<SetId>,
    col_ids: Vec<SetId>,
    values: Vec<f64>,
}

impl KernelMatrix {
    pub fn from_parts(
        kind: KernelId,
        row_ids: Vec<SetId>,
        col_ids: Vec<SetId>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != row_ids.len() * col_ids.len() {
            return Err(Error::invalid(format!(
                "{} kernel values for a {}x{} matrix",
                values.len(),
                row_ids.len(),
                col_ids.len()
            )));
        }
        Ok(Self {
            kind,
            row_ids,
            col_ids,
            values,
        })
    }

    pub fn kind(&self) -> KernelId {
        self.kind
    }

    pub fn nrows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn ncols(&self) -> usize {
        self.col_ids.len()
    }

    pub fn row_ids(&self) -> &[SetId] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[SetId] {
        &self.col_ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ncols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.ncols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_square_over_same_sets(&self) -> bool {
        self.row_ids == self.col_ids
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.nrows(), self.ncols(), &self.values)
    }
}

/// Kernel matrix over prepared sets. When rows and columns are the same id
/// list only the upper triangle is evaluated and mirrored.
pub fn kernel_matrix_prepared(
    rows: &[PreparedSet<'_>],
    cols: &[PreparedSet<'_>],
    kind: KernelId,
    params: &KernelParams,
) -> Result<KernelMatrix> {
    let dim = rows.first().or(cols.first()).map_or(0, |p| p.set.dim());
    if let Some(bad) = rows.iter().chain(cols).find(|p| p.set.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.set.dim(),
        });
    }
    let row_ids: Vec<SetId> = rows.iter().map(|p| p.set.id()).collect();
    let col_ids: Vec<SetId> = cols.iter().map(|p| p.set.id()).collect();
    let symmetric = row_ids == col_ids;
    let nc = cols.len();

    let mut values: Vec<f64> = rows
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, a)| {
            let start = if symmetric { i } else { 0 };
            (0..nc).map(move |j| {
                if j < start {
                    f64::NAN
                } else {
                    a.kernel(&cols[j], kind, params)
                }
            })
        })
        .collect();
    if symmetric {
        for i in 0..nc {
            for j in 0..i {
                values[i * nc + j] = values[j * nc + i];
            }
        }
    }
    KernelMatrix::from_parts(kind, row_ids, col_ids, values)
}

/// Kernel matrix between two lists of sets.
pub fn kernel_matrix(
    rows: &[PointSet],
    cols: &[PointSet],
    kind: KernelId,
    params: &KernelParams,
) -> Result<KernelMatrix> {
    params.validate()?;
    let rows: Vec<&PointSet> = rows.iter().collect();
    let cols: Vec<&PointSet> = cols.iter().collect();
    let pr = prepare_all(&rows, params)?;
    let pc = prepare_all(&cols, params)?;
    kernel_matrix_prepared(&pr, &pc, kind, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn set(id: u64, rows: &[Vec<f64>]) -> PointSet {
        PointSet::from_rows(SetId(id), rows, None).unwrap()
    }

    fn params() -> KernelParams {
        KernelParams {
            mu: Threshold::Auto,
            gamma_g: 0.5,
            gamma_s: 1.0,
            cov_ridge: 1e-3,
        }
    }

    fn structural(a: &PointSet, b: &PointSet, gamma: f64) -> f64 {
        let aa = build_affinity(a, Threshold::Auto).unwrap();
        let ab = build_affinity(b, Threshold::Auto).unwrap();
        structural_kernel(a, b, &aa, &ab, gamma).unwrap()
    }

    #[test]
    fn structural_single_points() {
        let p = set(0, &[vec![1.0, 2.0]]);
        assert_eq!(structural(&p, &p, 3.0), 1.0);
        let q = set(1, &[vec![1.0, 3.0]]);
        assert_abs_diff_eq!(structural(&p, &q, 1.0), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(structural(&p, &q, 1e-12), 1.0, epsilon = 1e-11);
    }

    #[test]
    fn structural_matches_direct_formula() {
        // A = {0, 0.5, 5}, μ = 1: degrees [2, 2, 1]
        let a = set(0, &[vec![0.0], vec![0.5], vec![5.0]]);
        let b = set(1, &[vec![1.0], vec![4.0]]);
        let aa = build_affinity(&a, Threshold::Fixed(1.0)).unwrap();
        let ab = build_affinity(&b, Threshold::Fixed(1.0)).unwrap();
        let wa = [0.5, 0.5, 1.0];
        let wb = [1.0, 1.0];
        let g = 0.3;
        let mut num = 0.0;
        for (p, x) in [0.0f64, 0.5, 5.0].iter().enumerate() {
            for (q, y) in [1.0f64, 4.0].iter().enumerate() {
                num += wa[p] * wb[q] * (-g * (x - y) * (x - y)).exp();
            }
        }
        let expected = num / (2.0 * 2.0);
        let got = structural_kernel(&a, &b, &aa, &ab, g).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-15);
    }

    #[test]
    fn structural_dimension_mismatch() {
        let a = set(0, &[vec![0.0]]);
        let b = set(1, &[vec![0.0, 1.0]]);
        let aa = build_affinity(&a, Threshold::Auto).unwrap();
        let ab = build_affinity(&b, Threshold::Auto).unwrap();
        assert!(structural_kernel(&a, &b, &aa, &ab, 1.0).is_err());
    }

    #[test]
    fn square_statistical_matrix_has_unit_diagonal() {
        let sets = vec![
            set(0, &[vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]]),
            set(1, &[vec![0.0, 0.0], vec![3.0, 1.0]]),
            set(2, &[vec![1.0, 1.0], vec![1.5, 0.0], vec![0.0, 4.0], vec![2.0, 2.0]]),
        ];
        let k = kernel_matrix(&sets, &sets, KernelId::Statistical, &params()).unwrap();
        for i in 0..3 {
            assert_eq!(k.get(i, i), 1.0);
            for j in 0..3 {
                assert_eq!(k.get(i, j), k.get(j, i));
                assert!(k.get(i, j) > 0.0 && k.get(i, j) <= 1.0);
            }
        }
    }

    #[test]
    fn structural_matrix_entrywise() {
        let sets = vec![
            set(0, &[vec![0.0, 1.0], vec![1.0, 0.0]]),
            set(1, &[vec![0.0, 0.0], vec![3.0, 1.0], vec![1.0, 1.0]]),
        ];
        let k = kernel_matrix(&sets, &sets, KernelId::Structural, &params()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(k.get(i, j), structural(&sets[i], &sets[j], 0.5));
            }
        }
        let rect = kernel_matrix(&sets[..1], &sets, KernelId::Structural, &params()).unwrap();
        assert_eq!(rect.row(0), k.row(0));
    }

    #[test]
    fn resolve_fills_bandwidths() {
        let sets = [
            set(0, &[vec![0.0, 0.0], vec![2.0, 0.0]]),
            set(1, &[vec![0.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]]),
        ];
        let refs: Vec<&PointSet> = sets.iter().collect();
        let p = KernelConfig::default().resolve(&refs, 0).unwrap();
        assert!(p.gamma_g > 0.0 && p.gamma_s > 0.0);
        let fixed = KernelConfig {
            gamma_g: Some(2.0),
            gamma_s: Some(3.0),
            ..KernelConfig::default()
        }
        .resolve(&refs, 0)
        .unwrap();
        assert_eq!((fixed.gamma_g, fixed.gamma_s), (2.0, 3.0));
    }

    #[test]
    fn gamma_g_is_half_inverse_squared_mean_distance() {
        // five collinear points at 0..4: mean pairwise distance 2
        let s = set(0, &[vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let p = KernelConfig::default().resolve(&[&s], 0).unwrap();
        assert_abs_diff_eq!(p.gamma_g, 1.0 / 8.0, epsilon = 1e-15);
    }
}
