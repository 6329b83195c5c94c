//! Point sets, datasets and the q/r training split.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Stage};

/// Opaque set identifier. Ordering on ids is the global tie-break rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SetId(pub u64);

impl fmt::Display for SetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Class label. Valid labels are `1..=L`.
pub type Label = u32;

/// One set of `n >= 1` feature vectors of a common dimension.
///
/// Points are stored row-major in a flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    id: SetId,
    dim: usize,
    values: Vec<f64>,
    label: Option<Label>,
}

impl PointSet {
    pub fn new(id: SetId, dim: usize, values: Vec<f64>, label: Option<Label>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if values.is_empty() {
            return Err(Error::invalid(format!("set {id} has no points")));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "set {id}: {} values do not divide into points of dimension {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("set {id} has non-finite features")));
        }
        if label == Some(0) {
            return Err(Error::invalid(format!("set {id}: labels start at 1")));
        }
        Ok(Self {
            id,
            dim,
            values,
            label,
        })
    }

    pub fn from_rows(id: SetId, rows: &[Vec<f64>], label: Option<Label>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(id, dim, rows.concat(), label)
    }

    pub fn id(&self) -> SetId {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    /// Always false: a set holds at least one point.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn label(&self) -> Option<Label> {
        self.label
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for p in self.points() {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn with_id(mut self, id: SetId) -> Self {
        self.id = id;
        self
    }

    pub fn with_label(mut self, label: Option<Label>) -> Result<Self> {
        if label == Some(0) {
            return Err(Error::invalid(format!("set {}: labels start at 1", self.id)));
        }
        self.label = label;
        Ok(self)
    }
}

/// A collection of point sets with unique ids and a shared dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SetDataset {
    sets: Vec<PointSet>,
    dim: usize,
}

impl SetDataset {
    pub fn new(sets: Vec<PointSet>) -> Result<Self> {
        let dim = sets.first().map_or(0, PointSet::dim);
        let mut seen = HashSet::with_capacity(sets.len());
        for s in &sets {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.dim(),
                });
            }
            if !seen.insert(s.id()) {
                return Err(Error::DuplicateId(s.id()));
            }
        }
        Ok(Self { sets, dim })
    }

    /// Dimension of every point; 0 for an empty dataset.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn sets(&self) -> &[PointSet] {
        &self.sets
    }

    pub fn into_sets(self) -> Vec<PointSet> {
        self.sets
    }

    pub fn ids(&self) -> Vec<SetId> {
        self.sets.iter().map(PointSet::id).collect()
    }

    /// L, the largest label present (0 when unlabeled).
    pub fn label_count(&self) -> u32 {
        self.sets.iter().filter_map(PointSet::label).max().unwrap_or(0)
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.sets.iter().all(|s| s.label().is_some())
    }

    /// Labels of every set, failing on the first unlabeled one.
    pub fn require_labels(&self) -> Result<Vec<Label>> {
        self.sets
            .iter()
            .map(|s| s.label().ok_or(Error::Unlabeled(s.id())))
            .collect()
    }

    pub fn total_points(&self) -> usize {
        self.sets.iter().map(PointSet::len).sum()
    }
}

/// Disjoint query-side (q) and database-side (r) training partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSplit {
    pub q: SetDataset,
    pub r: SetDataset,
}

impl TrainSplit {
    pub fn new(q: SetDataset, r: SetDataset) -> Result<Self> {
        if q.is_empty() || r.is_empty() {
            return Err(Error::invalid("both sides of a training split must be nonempty"));
        }
        if q.dim() != r.dim() {
            return Err(Error::DimensionMismatch {
                expected: q.dim(),
                found: r.dim(),
            });
        }
        let q_ids: HashSet<SetId> = q.ids().into_iter().collect();
        if let Some(dup) = r.ids().into_iter().find(|id| q_ids.contains(id)) {
            return Err(Error::DuplicateId(dup));
        }
        Ok(Self { q, r })
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }
}

/// Sort key used for both sides of a split: label ascending (unlabeled last), then id.
fn side_order(s: &PointSet) -> (u64, SetId) {
    (s.label().map_or(u64::MAX, u64::from), s.id())
}

/// Partitions `data` into q and r sides.
///
/// With `stratified`, each label group is shuffled independently and split
/// by largest-remainder apportionment, so every label with at least two sets
/// lands on both sides. Both sides come back sorted by (label, id).
pub fn split_qr(data: &SetDataset, fraction: f64, seed: u64, stratified: bool) -> Result<TrainSplit> {
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "cannot split a dataset of {n} set(s) into two nonempty sides"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} is not in (0, 1)")));
    }

    let mut groups: BTreeMap<u64, Vec<&PointSet>> = BTreeMap::new();
    for s in data.sets() {
        let key = if stratified { side_order(s).0 } else { 0 };
        groups.entry(key).or_default().push(s);
    }
    let mut groups: Vec<Vec<&PointSet>> = groups.into_values().collect();
    for (g, members) in groups.iter_mut().enumerate() {
        members.sort_by_key(|s| s.id());
        members.shuffle(&mut rng::stream(seed, Stage::Split, g as u64));
    }

    let target = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let quotas = apportion(&sizes, fraction, target);

    let mut q = Vec::with_capacity(target);
    let mut r = Vec::with_capacity(n - target);
    for (members, quota) in groups.into_iter().zip(quotas) {
        for (k, s) in members.into_iter().enumerate() {
            if k < quota {
                q.push(s.clone());
            } else {
                r.push(s.clone());
            }
        }
    }
    q.sort_by_key(side_order);
    r.sort_by_key(side_order);
    TrainSplit::new(SetDataset::new(q)?, SetDataset::new(r)?)
}

/// Per-group q counts summing to `target` where the group sizes allow it.
fn apportion(sizes: &[usize], fraction: f64, target: usize) -> Vec<usize> {
    let ideal: Vec<f64> = sizes.iter().map(|&c| c as f64 * fraction).collect();
    let mut quota: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();

    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - quota[a] as f64;
        let rb = ideal[b] - quota[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(quota.iter().sum());
    for &g in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if quota[g] < sizes[g] {
            quota[g] += 1;
            missing -= 1;
        }
    }

    // groups of two or more keep a member on each side
    for (q, &c) in quota.iter_mut().zip(sizes) {
        if c >= 2 {
            *q = (*q).clamp(1, c - 1);
        }
    }

    // restore the total where some group still has slack
    loop {
        let total: usize = quota.iter().sum();
        if total == target {
            break;
        }
        let grow = total < target;
        let pick = (0..sizes.len())
            .filter(|&g| {
                let floor = usize::from(sizes[g] >= 2);
                let ceil = sizes[g] - usize::from(sizes[g] >= 2);
                if grow {
                    quota[g] < ceil
                } else {
                    quota[g] > floor
                }
            })
            .max_by(|&a, &b| {
                let da = quota[a] as f64 - ideal[a];
                let db = quota[b] as f64 - ideal[b];
                let (da, db) = if grow { (-da, -db) } else { (da, db) };
                da.total_cmp(&db).then(b.cmp(&a))
            });
        match pick {
            Some(g) if grow => quota[g] += 1,
            Some(g) => quota[g] -= 1,
            None => break,
        }
    }
    quota
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(id: u64, label: Option<Label>) -> PointSet {
        PointSet::new(SetId(id), 2, vec![id as f64, 1.0], label).unwrap()
    }

    fn dataset(labels: &[Option<Label>]) -> SetDataset {
        SetDataset::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, &l)| set(i as u64, l))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn point_set_validation() {
        assert!(PointSet::new(SetId(0), 2, vec![], None).is_err());
        assert!(PointSet::new(SetId(0), 2, vec![1.0, 2.0, 3.0], None).is_err());
        assert!(PointSet::new(SetId(0), 1, vec![f64::NAN], None).is_err());
        assert!(PointSet::new(SetId(0), 1, vec![1.0], Some(0)).is_err());
        let s = PointSet::from_rows(SetId(3), &[vec![0.0, 2.0], vec![2.0, 4.0]], Some(1)).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.mean(), vec![1.0, 3.0]);
    }

    #[test]
    fn dataset_rejects_duplicates_and_mixed_dims() {
        assert!(matches!(
            SetDataset::new(vec![set(1, None), set(1, None)]),
            Err(Error::DuplicateId(SetId(1)))
        ));
        let odd = PointSet::new(SetId(9), 3, vec![0.0; 3], None).unwrap();
        assert!(SetDataset::new(vec![set(1, None), odd]).is_err());
    }

    #[test]
    fn stratification_is_forced_on_two_per_label() {
        let data = dataset(&[Some(1), Some(1), Some(2), Some(2)]);
        let split = split_qr(&data, 0.5, 7, true).unwrap();
        let q_labels: Vec<_> = split.q.sets().iter().map(|s| s.label()).collect();
        let r_labels: Vec<_> = split.r.sets().iter().map(|s| s.label()).collect();
        assert_eq!(q_labels, vec![Some(1), Some(2)]);
        assert_eq!(r_labels, vec![Some(1), Some(2)]);
        assert_eq!(split, split_qr(&data, 0.5, 7, true).unwrap());
    }

    #[test]
    fn split_of_195_is_balanced() {
        let labels: Vec<_> = (0..195).map(|i| Some(1 + (i % 10) as Label)).collect();
        let data = dataset(&labels);
        let split = split_qr(&data, 0.5, 1, true).unwrap();
        let (q, r) = (split.q.len(), split.r.len());
        assert_eq!(q + r, 195);
        assert!(q.abs_diff(r) <= 1);
        for l in 1..=10 {
            assert!(split.q.sets().iter().any(|s| s.label() == Some(l)));
            assert!(split.r.sets().iter().any(|s| s.label() == Some(l)));
        }
    }

    #[test]
    fn degenerate_split_rejected() {
        let data = dataset(&[Some(1)]);
        assert!(split_qr(&data, 0.5, 0, true).is_err());
        let data = dataset(&[Some(1), Some(2)]);
        assert!(split_qr(&data, 1.0, 0, true).is_err());
        assert!(split_qr(&data, 0.5, 0, false).is_ok());
    }

    #[test]
    fn unstratified_split_hits_target() {
        let data = dataset(&[None; 10]);
        let split = split_qr(&data, 0.3, 5, false).unwrap();
        assert_eq!(split.q.len(), 3);
        assert_eq!(split.r.len(), 7);
    }
}
