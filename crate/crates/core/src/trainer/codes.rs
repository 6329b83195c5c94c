use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::code::HashCode;
use crate::data::Label;
use crate::error::{Error, Result};

/// Objective changes smaller than this do not count as a decrease.
pub const DESCENT_TOL: f64 = 1e-9;

/// Codes for one side: `R` bits for each of `N` sets, one column per set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    bits: usize,
    cols: Vec<HashCode>,
}

impl CodeMatrix {
    pub fn zeros(bits: usize, n: usize) -> Self {
        Self {
            bits,
            cols: vec![HashCode::zeros(bits); n],
        }
    }

    pub fn from_columns(bits: usize, cols: Vec<HashCode>) -> Result<Self> {
        if let Some(c) = cols.iter().find(|c| c.len() != bits) {
            return Err(Error::CodeLength {
                left: bits,
                right: c.len(),
            });
        }
        Ok(Self { bits, cols })
    }

    /// `f(bit, col)` gives each entry.
    pub fn from_fn(bits: usize, n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let cols = (0..n)
            .map(|c| HashCode::from_bits((0..bits).map(|b| f(b, c)).collect::<Vec<_>>()))
            .collect();
        Self { bits, cols }
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn get(&self, bit: usize, col: usize) -> bool {
        self.cols[col].get(bit)
    }

    pub fn set(&mut self, bit: usize, col: usize, value: bool) {
        self.cols[col].set(bit, value);
    }

    pub fn flip(&mut self, bit: usize, col: usize) {
        let v = self.get(bit, col);
        self.set(bit, col, !v);
    }

    pub fn column(&self, col: usize) -> &HashCode {
        &self.cols[col]
    }

    pub fn columns(&self) -> &[HashCode] {
        &self.cols
    }

    pub fn into_columns(self) -> Vec<HashCode> {
        self.cols
    }

    pub fn row(&self, bit: usize) -> Vec<bool> {
        self.cols.iter().map(|c| c.get(bit)).collect()
    }

    pub fn row_ones(&self, bit: usize) -> usize {
        self.cols.iter().filter(|c| c.get(bit)).count()
    }

    pub fn col_ones(&self, col: usize) -> usize {
        self.cols[col].count_ones() as usize
    }

    /// Number of entries that differ.
    pub fn diff_count(&self, other: &CodeMatrix) -> Result<usize> {
        if self.bits != other.bits || self.len() != other.len() {
            return Err(Error::invalid("code matrices have different shapes"));
        }
        Ok(self
            .cols
            .iter()
            .zip(&other.cols)
            .map(|(a, b)| crate::code::hamming_words(a.words(), b.words()) as usize)
            .sum())
    }
}

/// Dense class indices for a label list.
#[derive(Debug, Clone)]
struct Classes {
    of: Vec<usize>,
    sizes: Vec<usize>,
}

impl Classes {
    fn new(labels: &[Label]) -> Self {
        let mut distinct: Vec<Label> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        Self::with_universe(labels, &distinct)
    }

    fn with_universe(labels: &[Label], universe: &[Label]) -> Self {
        let of: Vec<usize> = labels
            .iter()
            .map(|l| universe.binary_search(l).expect("label in universe"))
            .collect();
        let mut sizes = vec![0; universe.len()];
        for &c in &of {
            sizes[c] += 1;
        }
        Self { of, sizes }
    }
}

fn check_labels(h: &CodeMatrix, labels: &[Label]) -> Result<()> {
    if h.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} code columns but {} labels",
            h.len(),
            labels.len()
        )));
    }
    if labels.contains(&0) {
        return Err(Error::invalid("every column needs a label"));
    }
    Ok(())
}

/// Same-label and different-label unordered pair counts within one side.
pub fn pair_counts(labels: &[Label]) -> (u64, u64) {
    let n = labels.len() as u64;
    let same: u64 = Classes::new(labels)
        .sizes
        .iter()
        .map(|&s| (s as u64) * (s as u64).saturating_sub(1) / 2)
        .sum();
    (same, n * n.saturating_sub(1) / 2 - same)
}

/// Same-label and different-label pair counts across two sides.
pub fn cross_pair_counts(lq: &[Label], lr: &[Label]) -> (u64, u64) {
    let same = lq
        .iter()
        .map(|a| lr.iter().filter(|b| *b == a).count() as u64)
        .sum::<u64>();
    (same, (lq.len() * lr.len()) as u64 - same)
}

/// `|same| / |different|`, or 1 when there are no different-label pairs.
pub fn balance_ratio((same, diff): (u64, u64)) -> f64 {
    if diff == 0 {
        1.0
    } else {
        same as f64 / diff as f64
    }
}

/// Per-bit counts of ones, split by class.
#[derive(Debug, Clone)]
struct BitCounts {
    classes: Classes,
    /// `ones[bit][class]`
    ones: Vec<Vec<usize>>,
    total: Vec<usize>,
}

impl BitCounts {
    fn new(h: &CodeMatrix, classes: Classes) -> Self {
        let mut ones = vec![vec![0; classes.sizes.len()]; h.bits()];
        let mut total = vec![0; h.bits()];
        for (col, &c) in classes.of.iter().enumerate() {
            for (b, row) in ones.iter_mut().enumerate() {
                if h.get(b, col) {
                    row[c] += 1;
                    total[b] += 1;
                }
            }
        }
        Self {
            classes,
            ones,
            total,
        }
    }

    fn n(&self) -> usize {
        self.classes.of.len()
    }

    /// Columns other than `exclude` whose `bit` equals `value`: (same class as `class`, all).
    fn agreeing(&self, bit: usize, class: usize, value: bool, exclude: bool) -> (i64, i64) {
        let same_ones = self.ones[bit][class] as i64;
        let all_ones = self.total[bit] as i64;
        let (mut same, mut all) = if value {
            (same_ones, all_ones)
        } else {
            (
                self.classes.sizes[class] as i64 - same_ones,
                self.n() as i64 - all_ones,
            )
        };
        if exclude {
            same -= 1;
            all -= 1;
        }
        (same, all)
    }

    fn class_size(&self, class: usize, exclude: bool) -> i64 {
        self.classes.sizes[class] as i64 - exclude as i64
    }

    fn apply_flip(&mut self, bit: usize, col: usize, old: bool) {
        let c = self.classes.of[col];
        if old {
            self.ones[bit][c] -= 1;
            self.total[bit] -= 1;
        } else {
            self.ones[bit][c] += 1;
            self.total[bit] += 1;
        }
    }

    /// Change in `Σ_same d − ν Σ_diff d` against this matrix's columns when a
    /// column of class `class` flips `bit` away from `value`.
    fn flip_delta(&self, bit: usize, class: usize, value: bool, nu: f64, exclude: bool) -> f64 {
        let (agree_same, agree_all) = self.agreeing(bit, class, value, exclude);
        let n_same = self.class_size(class, exclude);
        let n_all = self.n() as i64 - exclude as i64;
        let disagree_same = n_same - agree_same;
        let agree_diff = agree_all - agree_same;
        let disagree_diff = (n_all - n_same) - agree_diff;
        (agree_same - disagree_same) as f64 - nu * (agree_diff - disagree_diff) as f64
    }
}

/// `Σ_{same-label pairs} d − ν₃ Σ_{different-label pairs} d` within one side.
pub fn objective_ds(h: &CodeMatrix, labels: &[Label], nu3: f64) -> Result<f64> {
    check_labels(h, labels)?;
    let counts = BitCounts::new(h, Classes::new(labels));
    let n = counts.n() as u64;
    let mut intra = 0u64;
    let mut total = 0u64;
    for (row, &ones) in counts.ones.iter().zip(&counts.total) {
        total += ones as u64 * (n - ones as u64);
        intra += row
            .iter()
            .zip(&counts.classes.sizes)
            .map(|(&o, &s)| (o * (s - o)) as u64)
            .sum::<u64>();
    }
    Ok(intra as f64 - nu3 * (total - intra) as f64)
}

/// `Σ_{same-label q×r pairs} d − ν₄ Σ_{different-label q×r pairs} d`.
pub fn objective_dc(
    hq: &CodeMatrix,
    hr: &CodeMatrix,
    lq: &[Label],
    lr: &[Label],
    nu4: f64,
) -> Result<f64> {
    check_labels(hq, lq)?;
    check_labels(hr, lr)?;
    if hq.bits() != hr.bits() {
        return Err(Error::CodeLength {
            left: hq.bits(),
            right: hr.bits(),
        });
    }
    let universe = label_universe(lq, lr);
    let cq = BitCounts::new(hq, Classes::with_universe(lq, &universe));
    let cr = BitCounts::new(hr, Classes::with_universe(lr, &universe));
    let (nq, nr) = (cq.n() as u64, cr.n() as u64);
    let mut intra = 0u64;
    let mut total = 0u64;
    for b in 0..hq.bits() {
        let (oq, or) = (cq.total[b] as u64, cr.total[b] as u64);
        total += oq * (nr - or) + (nq - oq) * or;
        for c in 0..universe.len() {
            let (a, sa) = (cq.ones[b][c] as u64, cq.classes.sizes[c] as u64);
            let (x, sx) = (cr.ones[b][c] as u64, cr.classes.sizes[c] as u64);
            intra += a * (sx - x) + (sa - a) * x;
        }
    }
    Ok(intra as f64 - nu4 * (total - intra) as f64)
}

fn label_universe(lq: &[Label], lr: &[Label]) -> Vec<Label> {
    let mut u: Vec<Label> = lq.iter().chain(lr).copied().collect();
    u.sort_unstable();
    u.dedup();
    u
}

/// Allowed number of ones in a row or column of `size` entries.
pub fn balance_band(size: usize, tol: f64) -> (usize, usize) {
    let lo = ((0.5 - tol) * size as f64).floor().max(0.0) as usize;
    let hi = (((0.5 + tol) * size as f64).ceil() as usize).min(size);
    (lo, hi)
}

/// A flip may leave a count in the band, or move an out-of-band count toward it.
fn balance_ok(before: usize, after: usize, (lo, hi): (usize, usize)) -> bool {
    if (lo..=hi).contains(&after) {
        return true;
    }
    let gap = |x: usize| if x < lo { lo - x } else { x.saturating_sub(hi) };
    gap(after) < gap(before)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig {
    pub balance_tol: f64,
    pub max_sweeps: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            balance_tol: 0.1,
            max_sweeps: 20,
        }
    }
}

/// An accepted flip: which side (0 = q, 1 = r), bit, column, and the
/// objective change it caused.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flip {
    pub side: usize,
    pub bit: usize,
    pub col: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescentTrace {
    pub start: f64,
    pub end: f64,
    pub flips: Vec<Flip>,
    pub sweeps: usize,
}

struct Side<'a> {
    h: &'a mut CodeMatrix,
    counts: BitCounts,
    row_band: (usize, usize),
    col_band: (usize, usize),
}

impl<'a> Side<'a> {
    fn new(h: &'a mut CodeMatrix, classes: Classes, tol: f64) -> Self {
        let counts = BitCounts::new(h, classes);
        let row_band = balance_band(h.len(), tol);
        let col_band = balance_band(h.bits(), tol);
        Self {
            h,
            counts,
            row_band,
            col_band,
        }
    }

    fn balanced_after_flip(&self, bit: usize, col: usize) -> bool {
        let v = self.h.get(bit, col);
        let row = self.counts.total[bit];
        let col_ones = self.h.col_ones(col);
        let step = |x: usize| if v { x - 1 } else { x + 1 };
        balance_ok(row, step(row), self.row_band) && balance_ok(col_ones, step(col_ones), self.col_band)
    }

    fn flip(&mut self, bit: usize, col: usize) {
        let old = self.h.get(bit, col);
        self.h.flip(bit, col);
        self.counts.apply_flip(bit, col, old);
    }
}

/// Weighted within-side and cross-side terms of a descent objective.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Weights {
    alpha: f64,
    beta: f64,
    nu_s: [f64; 2],
    nu_c: f64,
}

fn run_descent(
    sides: &mut [Side<'_>],
    w: Weights,
    cfg: &DescentConfig,
    rng: &mut ChaCha8Rng,
    objective: impl Fn(&[Side<'_>]) -> f64,
) -> DescentTrace {
    let mut coords: Vec<(usize, usize, usize)> = sides
        .iter()
        .enumerate()
        .flat_map(|(s, side)| {
            let (bits, n) = (side.h.bits(), side.h.len());
            (0..bits).flat_map(move |b| (0..n).map(move |c| (s, b, c)))
        })
        .collect();
    let mut trace = DescentTrace {
        start: objective(sides),
        ..Default::default()
    };
    for _ in 0..cfg.max_sweeps {
        trace.sweeps += 1;
        coords.shuffle(rng);
        let mut flipped = false;
        for &(s, b, c) in &coords {
            if !sides[s].balanced_after_flip(b, c) {
                continue;
            }
            let v = sides[s].h.get(b, c);
            let class = sides[s].counts.classes.of[c];
            let mut delta = w.alpha * sides[s].counts.flip_delta(b, class, v, w.nu_s[s], true);
            if sides.len() == 2 {
                let other = &sides[1 - s].counts;
                delta += w.beta * other.flip_delta(b, class, v, w.nu_c, false);
            }
            if delta < -DESCENT_TOL {
                sides[s].flip(b, c);
                trace.flips.push(Flip {
                    side: s,
                    bit: b,
                    col: c,
                    delta,
                });
                flipped = true;
            }
        }
        if !flipped {
            break;
        }
    }
    trace.end = objective(sides);
    trace
}

/// Greedy bit-flip descent on `D_s` under bit-wise and sample-wise balance.
///
/// Coordinates are visited in a freshly shuffled order each sweep; a flip is
/// taken when it lowers the objective and keeps (or moves toward) balance.
pub fn optimize_codes_ds(
    h: &mut CodeMatrix,
    labels: &[Label],
    nu3: f64,
    cfg: &DescentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<DescentTrace> {
    check_labels(h, labels)?;
    let mut sides = [Side::new(h, Classes::new(labels), cfg.balance_tol)];
    let w = Weights {
        alpha: 1.0,
        beta: 0.0,
        nu_s: [nu3, nu3],
        nu_c: 0.0,
    };
    let trace = run_descent(&mut sides, w, cfg, rng, |s| {
        objective_ds(s[0].h, labels, nu3).expect("labels checked")
    });
    Ok(trace)
}

/// Coefficients of the joint objective `α(D_s(H_q) + D_s(H_r)) + β D_c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointWeights {
    pub alpha: f64,
    pub beta: f64,
    pub nu3_q: f64,
    pub nu3_r: f64,
    pub nu4: f64,
}

pub fn joint_objective(
    hq: &CodeMatrix,
    hr: &CodeMatrix,
    lq: &[Label],
    lr: &[Label],
    w: &JointWeights,
) -> Result<f64> {
    Ok(w.alpha * (objective_ds(hq, lq, w.nu3_q)? + objective_ds(hr, lr, w.nu3_r)?)
        + w.beta * objective_dc(hq, hr, lq, lr, w.nu4)?)
}

/// Bit-flip descent on the joint objective over both sides at once.
pub fn refine_joint(
    hq: &mut CodeMatrix,
    hr: &mut CodeMatrix,
    lq: &[Label],
    lr: &[Label],
    w: &JointWeights,
    cfg: &DescentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<DescentTrace> {
    check_labels(hq, lq)?;
    check_labels(hr, lr)?;
    if hq.bits() != hr.bits() {
        return Err(Error::CodeLength {
            left: hq.bits(),
            right: hr.bits(),
        });
    }
    let universe = label_universe(lq, lr);
    let mut sides = [
        Side::new(hq, Classes::with_universe(lq, &universe), cfg.balance_tol),
        Side::new(hr, Classes::with_universe(lr, &universe), cfg.balance_tol),
    ];
    let weights = Weights {
        alpha: w.alpha,
        beta: w.beta,
        nu_s: [w.nu3_q, w.nu3_r],
        nu_c: w.nu4,
    };
    let trace = run_descent(&mut sides, weights, cfg, rng, |s| {
        joint_objective(s[0].h, s[1].h, lq, lr, w).expect("labels checked")
    });
    Ok(trace)
}
