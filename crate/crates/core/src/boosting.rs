//! Boosted dyadic hypercuts.
//!
//! A hypercut compares a target set's kernel similarity to a positive anchor
//! with its similarity to a negative anchor,
//! `f(x) = sign(K_m(a, x) − K_m(b, x) + ε)`. AdaBoost picks one hypercut per
//! round from the pool of (kernel, positive anchor, negative anchor) triples
//! and combines them into a strong split `F(x) = sign(Σ λᵗ fᵗ(x))`.

use rand::seq::index;
use rayon::prelude::*;

use crate::code::Sign;
use crate::error::{Error, Result};
use crate::kernels::{KernelId, KernelMatrix};
use crate::rng::{self, Stage};

/// Smallest and largest weighted error used when computing λ.
pub const DELTA_MIN: f64 = 1e-6;
pub const DELTA_MAX: f64 = 0.5 - 1e-6;
/// Score improvements below this are treated as ties.
pub const TIE_TOL: f64 = 1e-12;

/// Kernel values between anchor sets and target sets.
pub trait KernelSource: Sync {
    /// `K_m(anchor, target)`, or `None` when that value is not available.
    fn value(&self, kernel: KernelId, anchor: usize, target: usize) -> Option<f64>;
}

/// Structural and statistical kernel matrices over the same anchors (rows)
/// and targets (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair {
    pub structural: KernelMatrix,
    pub statistical: KernelMatrix,
}

impl KernelPair {
    pub fn new(structural: KernelMatrix, statistical: KernelMatrix) -> Result<Self> {
        if structural.kind() != KernelId::Structural || statistical.kind() != KernelId::Statistical {
            return Err(Error::invalid("kernel pair given matrices of the wrong kind"));
        }
        if structural.row_ids() != statistical.row_ids() || structural.col_ids() != statistical.col_ids()
        {
            return Err(Error::invalid("kernel pair matrices cover different sets"));
        }
        Ok(Self {
            structural,
            statistical,
        })
    }

    pub fn get(&self, kind: KernelId) -> &KernelMatrix {
        match kind {
            KernelId::Structural => &self.structural,
            KernelId::Statistical => &self.statistical,
        }
    }

    pub fn targets(&self) -> usize {
        self.structural.ncols()
    }
}

impl KernelSource for KernelPair {
    fn value(&self, kernel: KernelId, anchor: usize, target: usize) -> Option<f64> {
        let m = self.get(kernel);
        (anchor < m.nrows() && target < m.ncols()).then(|| m.get(anchor, target))
    }
}

/// `sign(ka − kb + ε)` with `sign(0) = +1`.
pub fn hypercut(ka: f64, kb: f64, epsilon: f64) -> Sign {
    Sign::of(ka - kb + epsilon)
}

/// Pool entry: a hypercut before its threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Candidate {
    pub kernel: KernelId,
    pub anchor_a: usize,
    pub anchor_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakLearner {
    pub kernel: KernelId,
    /// Positive anchor, an index into the anchor list of the kernel source.
    pub anchor_a: usize,
    /// Negative anchor.
    pub anchor_b: usize,
    pub epsilon: f64,
}

impl WeakLearner {
    pub fn candidate(&self) -> Candidate {
        Candidate {
            kernel: self.kernel,
            anchor_a: self.anchor_a,
            anchor_b: self.anchor_b,
        }
    }

    pub fn eval(&self, src: &impl KernelSource, target: usize) -> Result<Sign> {
        let ka = src
            .value(self.kernel, self.anchor_a, target)
            .ok_or_else(|| missing(self.anchor_a))?;
        let kb = src
            .value(self.kernel, self.anchor_b, target)
            .ok_or_else(|| missing(self.anchor_b))?;
        Ok(hypercut(ka, kb, self.epsilon))
    }
}

fn missing(anchor: usize) -> Error {
    Error::invalid(format!("kernel value for anchor #{anchor} is not available"))
}

/// One hash bit: a weighted vote of hypercuts, or a fixed output when the
/// training labels had a single class.
#[derive(Debug, Clone, PartialEq)]
pub enum StrongSplit {
    Boosted {
        learners: Vec<WeakLearner>,
        weights: Vec<f64>,
    },
    Constant(Sign),
}

impl StrongSplit {
    pub fn boosted(learners: Vec<WeakLearner>, weights: Vec<f64>) -> Result<Self> {
        if learners.is_empty() || learners.len() != weights.len() {
            return Err(Error::invalid("a strong split needs one weight per learner and T >= 1"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("strong split weights must be finite"));
        }
        if learners.iter().any(|l| l.anchor_a == l.anchor_b) {
            return Err(Error::invalid("hypercut anchors must differ"));
        }
        Ok(StrongSplit::Boosted { learners, weights })
    }

    pub fn learners(&self) -> &[WeakLearner] {
        match self {
            StrongSplit::Boosted { learners, .. } => learners,
            StrongSplit::Constant(_) => &[],
        }
    }

    pub fn weights(&self) -> &[f64] {
        match self {
            StrongSplit::Boosted { weights, .. } => weights,
            StrongSplit::Constant(_) => &[],
        }
    }

    /// `Σ λᵗ fᵗ(x)`; ±1 for a constant split.
    pub fn margin(&self, src: &impl KernelSource, target: usize) -> Result<f64> {
        match self {
            StrongSplit::Constant(s) => Ok(s.value()),
            StrongSplit::Boosted { learners, weights } => {
                let mut total = 0.0;
                for (l, w) in learners.iter().zip(weights) {
                    total += w * l.eval(src, target)?.value();
                }
                Ok(total)
            }
        }
    }

    pub fn eval(&self, src: &impl KernelSource, target: usize) -> Result<Sign> {
        self.margin(src, target).map(Sign::of)
    }

    /// Anchor indices referenced by the learners.
    pub fn anchors(&self) -> impl Iterator<Item = usize> + '_ {
        self.learners()
            .iter()
            .flat_map(|l| [l.anchor_a, l.anchor_b])
    }

    pub(crate) fn map_anchors(&self, f: impl Fn(usize) -> usize) -> Self {
        match self {
            StrongSplit::Constant(s) => StrongSplit::Constant(*s),
            StrongSplit::Boosted { learners, weights } => StrongSplit::Boosted {
                learners: learners
                    .iter()
                    .map(|l| WeakLearner {
                        anchor_a: f(l.anchor_a),
                        anchor_b: f(l.anchor_b),
                        ..*l
                    })
                    .collect(),
                weights: weights.clone(),
            },
        }
    }
}

/// `½ ln((1 − δ)/δ)` on δ clamped to `[DELTA_MIN, DELTA_MAX]`.
pub fn learner_weight(delta: f64) -> f64 {
    let d = delta.clamp(DELTA_MIN, DELTA_MAX);
    0.5 * ((1.0 - d) / d).ln()
}

/// All (kernel, positive anchor, negative anchor) triples, or a seeded
/// uniform subsample of `cap` of them, in lexicographic order.
pub fn enumerate_pool(
    labels: &[Sign],
    kernels: &[KernelId],
    cap: Option<usize>,
    seed: u64,
) -> Result<Vec<Candidate>> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Sign::Pos).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Sign::Neg).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid(
            "hypercut pool needs at least one positive and one negative sample",
        ));
    }
    if kernels.is_empty() {
        return Err(Error::invalid("hypercut pool needs at least one kernel"));
    }
    if cap == Some(0) {
        return Err(Error::invalid("pool cap must be positive"));
    }
    let mut kernels = kernels.to_vec();
    kernels.sort();
    kernels.dedup();
    let per_kernel = pos.len() * neg.len();
    let total = kernels.len() * per_kernel;
    let decode = |idx: usize| Candidate {
        kernel: kernels[idx / per_kernel],
        anchor_a: pos[(idx % per_kernel) / neg.len()],
        anchor_b: neg[idx % neg.len()],
    };
    match cap {
        Some(c) if c < total => {
            let mut rng = rng::stream(seed, Stage::Pool, 0);
            let mut picked = index::sample(&mut rng, total, c).into_vec();
            picked.sort_unstable();
            Ok(picked.into_iter().map(decode).collect())
        }
        _ => Ok((0..total).map(decode).collect()),
    }
}

/// A candidate's score differences `s_i = K(a, x_i) − K(b, x_i)` with their
/// ascending order, reusable across boosting rounds.
#[derive(Debug, Clone)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    scores: Vec<f64>,
    /// Samples in ascending score order, each with the ε that puts it and
    /// everything before it on the −1 side (NaN when the next score ties).
    steps: Vec<(u32, f64)>,
    sentinel: f64,
}

impl ScoredCandidate {
    pub fn new(candidate: Candidate, src: &impl KernelSource, n: usize) -> Result<Self> {
        let scores = (0..n)
            .map(|t| {
                let ka = src
                    .value(candidate.kernel, candidate.anchor_a, t)
                    .ok_or_else(|| missing(candidate.anchor_a))?;
                let kb = src
                    .value(candidate.kernel, candidate.anchor_b, t)
                    .ok_or_else(|| missing(candidate.anchor_b))?;
                Ok(ka - kb)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by(|&a, &b| scores[a as usize].total_cmp(&scores[b as usize]).then(a.cmp(&b)));
        let sentinel = scores.iter().fold(0.0f64, |m, s| m.max(s.abs())) + 1.0;
        let steps = (0..n)
            .map(|k| {
                let i = order[k];
                let eps = match order.get(k + 1) {
                    None => -sentinel,
                    Some(&next) => {
                        let (lo, hi) = (scores[i as usize], scores[next as usize]);
                        if lo < hi {
                            -split_point(lo, hi)
                        } else {
                            f64::NAN
                        }
                    }
                };
                (i, eps)
            })
            .collect();
        Ok(Self {
            candidate,
            scores,
            steps,
            sentinel,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Every threshold ε the search considers, in the order it considers them:
    /// the `+sentinel` (all +1), midpoints between consecutive distinct sorted
    /// scores from low to high, then `−sentinel` (all −1).
    pub fn epsilons(&self) -> Vec<f64> {
        std::iter::once(self.sentinel)
            .chain(self.steps.iter().map(|s| s.1).filter(|e| !e.is_nan()))
            .collect()
    }

    /// Best (score, ε) given per-sample signed weights (+w for positive
    /// labels, −w for negative) and the weight of all negatives.
    fn best_threshold(&self, signed: &[f64], neg_weight: f64, l1: f64) -> (f64, f64) {
        let score_of = |err: f64| {
            if l1 == 0.0 {
                err
            } else {
                err + l1 * learner_weight(err).abs()
            }
        };
        // all predicted +1: every negative is an error
        let mut err = neg_weight;
        let mut best = (score_of(err), self.sentinel);
        for &(i, eps) in &self.steps {
            // sample i moves to the −1 side
            err += signed[i as usize];
            if eps.is_nan() {
                continue;
            }
            let s = score_of(err);
            if s < best.0 - TIE_TOL {
                best = (s, eps);
            }
        }
        best
    }
}

/// A threshold strictly above `lo` and at most `hi`.
fn split_point(lo: f64, hi: f64) -> f64 {
    let m = 0.5 * (lo + hi);
    if m > lo {
        m
    } else {
        hi
    }
}

pub fn score_pool(pool: &[Candidate], src: &impl KernelSource, n: usize) -> Result<Vec<ScoredCandidate>> {
    pool.par_iter()
        .map(|&c| ScoredCandidate::new(c, src, n))
        .collect()
}

/// Weighted 0/1 error of a learner, summed in sample order.
pub fn weighted_error(learner: &WeakLearner, src: &impl KernelSource, labels: &[Sign], weights: &[f64]) -> Result<f64> {
    let mut err = 0.0;
    for (t, (l, w)) in labels.iter().zip(weights).enumerate() {
        if learner.eval(src, t)? != *l {
            err += w;
        }
    }
    Ok(err)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub learner: WeakLearner,
    /// Weighted 0/1 error δ.
    pub delta: f64,
    /// δ plus the optional L1 penalty on λ; equal to δ when that penalty is off.
    pub score: f64,
}

fn select_scored(
    scored: &[ScoredCandidate],
    labels: &[Sign],
    weights: &[f64],
    src: &impl KernelSource,
    l1: f64,
) -> Result<Selection> {
    let signed: Vec<f64> = labels
        .iter()
        .zip(weights)
        .map(|(l, w)| l.value() * w)
        .collect();
    let neg_weight: f64 = labels
        .iter()
        .zip(weights)
        .filter(|(l, _)| **l == Sign::Neg)
        .map(|(_, w)| w)
        .sum();
    let per: Vec<(f64, f64)> = scored
        .par_iter()
        .map(|c| c.best_threshold(&signed, neg_weight, l1))
        .collect();
    let mut best: Option<(usize, f64, f64)> = None;
    for (k, &(s, eps)) in per.iter().enumerate() {
        if best.is_none_or(|(_, bs, _)| s < bs - TIE_TOL) {
            best = Some((k, s, eps));
        }
    }
    let (k, score, epsilon) = best.ok_or_else(|| Error::invalid("empty hypercut pool"))?;
    let c = scored[k].candidate;
    let learner = WeakLearner {
        kernel: c.kernel,
        anchor_a: c.anchor_a,
        anchor_b: c.anchor_b,
        epsilon,
    };
    let delta = weighted_error(&learner, src, labels, weights)?;
    Ok(Selection {
        learner,
        delta,
        score,
    })
}

/// Picks the pool member and threshold with the smallest weighted error
/// (plus `l1 · |λ|` when `l1 > 0`). Ties go to the earliest candidate in
/// (kernel, anchor a, anchor b) order and, within a candidate, to the
/// largest ε.
pub fn select_weak(
    pool: &[Candidate],
    labels: &[Sign],
    weights: &[f64],
    src: &impl KernelSource,
    l1: f64,
) -> Result<Selection> {
    if weights.len() != labels.len() {
        return Err(Error::invalid("one weight per sample is required"));
    }
    let mut pool = pool.to_vec();
    pool.sort();
    let scored = score_pool(&pool, src, labels.len())?;
    select_scored(&scored, labels, weights, src, l1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostConfig {
    /// Boosting rounds T.
    pub rounds: usize,
    pub pool_cap: Option<usize>,
    pub seed: u64,
    /// Coefficient of the optional L1 penalty on learner weights; 0 disables it.
    pub l1: f64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            rounds: 15,
            pool_cap: Some(20_000),
            seed: 0,
            l1: 0.0,
        }
    }
}

/// Sample distribution and per-round errors of one boosting run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoostState {
    pub sample_weights: Vec<f64>,
    pub round_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub learner: WeakLearner,
    pub delta: f64,
    pub lambda: f64,
    /// δ was outside `[DELTA_MIN, DELTA_MAX]` and λ used the clamped value.
    pub clamped: bool,
    /// Mean `exp(−lᵢ F(xᵢ))` of the strong split after this round.
    pub exp_loss: f64,
    /// Weighted error of this round's learner under the updated weights.
    pub error_after_update: f64,
    /// Unweighted training error of the strong split after this round.
    pub training_error: f64,
    pub weights_after: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostOutcome {
    pub split: StrongSplit,
    pub state: BoostState,
    pub rounds: Vec<RoundRecord>,
    /// Set when a round had δ ≥ `DELTA_MAX` and boosting stopped.
    pub stopped_early: bool,
}

/// AdaBoost over the hypercut pool.
///
/// Stops after `rounds` rounds, when the best learner has δ ≥ `DELTA_MAX`
/// (keeping at least one learner), or when a learner separates the samples
/// exactly, since the weights would not change after that.
pub fn boost(labels: &[Sign], src: &impl KernelSource, cfg: &BoostConfig) -> Result<BoostOutcome> {
    if cfg.rounds == 0 {
        return Err(Error::invalid("boosting needs at least one round"));
    }
    let n = labels.len();
    let pool = enumerate_pool(labels, &KernelId::ALL, cfg.pool_cap, cfg.seed)?;
    let scored = score_pool(&pool, src, n)?;

    let mut weights = vec![1.0 / n as f64; n];
    let mut margins = vec![0.0; n];
    let mut learners = Vec::new();
    let mut lambdas = Vec::new();
    let mut rounds = Vec::new();
    let mut state = BoostState::default();
    let mut stopped_early = false;

    for _ in 0..cfg.rounds {
        let sel = select_scored(&scored, labels, &weights, src, cfg.l1)?;
        let delta = sel.delta;
        let no_signal = delta >= DELTA_MAX;
        if no_signal && !learners.is_empty() {
            stopped_early = true;
            break;
        }
        let lambda = learner_weight(delta);
        let clamped = !(DELTA_MIN..=DELTA_MAX).contains(&delta);
        let preds: Vec<Sign> = (0..n)
            .map(|t| sel.learner.eval(src, t))
            .collect::<Result<_>>()?;

        for ((w, l), f) in weights.iter_mut().zip(labels).zip(&preds) {
            *w *= (-lambda * l.value() * f.value()).exp();
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);

        let error_after_update = labels
            .iter()
            .zip(&preds)
            .zip(&weights)
            .filter(|((l, f), _)| l != f)
            .map(|(_, w)| w)
            .sum();
        for (m, f) in margins.iter_mut().zip(&preds) {
            *m += lambda * f.value();
        }
        let exp_loss = margins
            .iter()
            .zip(labels)
            .map(|(m, l)| (-l.value() * m).exp())
            .sum::<f64>()
            / n as f64;
        let wrong = margins
            .iter()
            .zip(labels)
            .filter(|(m, l)| Sign::of(**m) != **l)
            .count();

        learners.push(sel.learner);
        lambdas.push(lambda);
        state.round_errors.push(delta);
        rounds.push(RoundRecord {
            learner: sel.learner,
            delta,
            lambda,
            clamped,
            exp_loss,
            error_after_update,
            training_error: wrong as f64 / n as f64,
            weights_after: weights.clone(),
        });
        if no_signal {
            stopped_early = true;
            break;
        }
        if delta < DELTA_MIN {
            break;
        }
    }
    state.sample_weights = weights;
    Ok(BoostOutcome {
        split: StrongSplit::boosted(learners, lambdas)?,
        state,
        rounds,
        stopped_early,
    })
}
