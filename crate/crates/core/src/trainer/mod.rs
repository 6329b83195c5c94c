//! Alternating code optimization and cross-trained boosting.
//!
//! Codes for the q and r parts start from the signs of kernel PCA
//! projections. Each outer iteration then improves the codes of each side
//! against labels, trains q-side splits on r-side codes (and the reverse),
//! re-encodes, refines both sides jointly, cross-trains again and re-encodes.
//! Training stops once an iteration changes fewer than `conv_tol` of all code
//! bits, or after `max_outer` iterations.

mod codes;
mod model;

use rayon::prelude::*;

pub use codes::{
    balance_band, balance_ratio, cross_pair_counts, joint_objective, objective_dc, objective_ds,
    optimize_codes_ds, pair_counts, refine_joint, CodeMatrix, DescentConfig, DescentTrace, Flip,
    JointWeights, DESCENT_TOL,
};
pub use model::{HashModel, Side, SideEncoder, VERSION as MODEL_VERSION};

use crate::boosting::{boost, BoostConfig, BoostOutcome, KernelPair, StrongSplit};
use crate::code::Sign;
use crate::data::{Label, PointSet, TrainSplit};
use crate::error::{Error, Result};
use crate::kernels::cache::KernelCache;
use crate::kernels::{
    kernel_matrix_prepared, kernel_pca_init, prepare_all, KernelConfig, KernelId, KernelMatrix,
    KernelParams, PreparedSet,
};
use crate::rng::{self, Stage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerConfig {
    /// Code length R.
    pub bits: usize,
    /// Boosting rounds T per split.
    pub rounds: usize,
    /// Weight of the within-side term.
    pub alpha: f64,
    /// Weight of the cross-side term.
    pub beta: f64,
    /// L1 penalty on learner weights during selection; 0 disables it.
    pub nu1: f64,
    /// Relative weight of the database-side penalty.
    pub nu2: f64,
    /// Different-label weight within a side; `None` uses the pair-count ratio.
    pub nu3: Option<f64>,
    /// Different-label weight across sides; `None` uses the pair-count ratio.
    pub nu4: Option<f64>,
    pub max_outer: usize,
    /// Fraction of changed code bits below which training has converged.
    pub conv_tol: f64,
    pub balance_tol: f64,
    pub max_sweeps: usize,
    pub pool_cap: Option<usize>,
    pub seed: u64,
    pub kernel: KernelConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            bits: 24,
            rounds: 15,
            alpha: 1.0,
            beta: 1.0,
            nu1: 0.0,
            nu2: 1.0,
            nu3: None,
            nu4: None,
            max_outer: 10,
            conv_tol: 0.001,
            balance_tol: 0.1,
            max_sweeps: 20,
            pool_cap: Some(20_000),
            seed: 0,
            kernel: KernelConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.bits == 0 || self.rounds == 0 || self.max_outer == 0 {
            return fail("bits, rounds and max_outer must be at least 1".into());
        }
        if !(self.conv_tol > 0.0 && self.conv_tol < 1.0) {
            return fail(format!("conv_tol = {} must lie in (0, 1)", self.conv_tol));
        }
        if !(0.0..0.5).contains(&self.balance_tol) {
            return fail(format!("balance_tol = {} must lie in [0, 0.5)", self.balance_tol));
        }
        for (name, v) in [
            ("alpha", Some(self.alpha)),
            ("beta", Some(self.beta)),
            ("nu1", Some(self.nu1)),
            ("nu2", Some(self.nu2)),
            ("nu3", self.nu3),
            ("nu4", self.nu4),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return fail(format!("{name} = {v} must be a finite non-negative number"));
                }
            }
        }
        if self.pool_cap == Some(0) {
            return fail("pool_cap must be positive".into());
        }
        if !(self.kernel.cov_ridge >= 0.0 && self.kernel.cov_ridge.is_finite()) {
            return fail(format!("cov_ridge = {} must be >= 0", self.kernel.cov_ridge));
        }
        Ok(())
    }

    fn descent(&self) -> DescentConfig {
        DescentConfig {
            balance_tol: self.balance_tol,
            max_sweeps: self.max_sweeps,
        }
    }
}

/// For each set of one side, the index of its partner on the other side.
///
/// The k-th set with label c pairs with the (k mod m)-th of the m sets with
/// label c on the other side. A label missing from the other side falls back
/// to position `i mod len`.
pub fn pair_indices(from: &[Label], to: &[Label]) -> Vec<usize> {
    let mut seen: std::collections::HashMap<Label, usize> = Default::default();
    from.iter()
        .enumerate()
        .map(|(i, l)| {
            let group: Vec<usize> = (0..to.len()).filter(|&j| to[j] == *l).collect();
            let k = seen.entry(*l).or_insert(0);
            let j = if group.is_empty() {
                i % to.len()
            } else {
                group[*k % group.len()]
            };
            *k += 1;
            j
        })
        .collect()
}

/// Boosting result for one bit of one side; `None` when the pseudo-labels
/// had one class and the split is constant.
pub type BitOutcome = Option<BoostOutcome>;

#[derive(Debug, Clone)]
pub struct CrossTrained {
    pub splits_q: Vec<StrongSplit>,
    pub splits_r: Vec<StrongSplit>,
    pub outcomes_q: Vec<BitOutcome>,
    pub outcomes_r: Vec<BitOutcome>,
}

fn train_bit(labels: &[Sign], k: &KernelPair, cfg: &BoostConfig) -> Result<(StrongSplit, BitOutcome)> {
    if let Some(first) = labels.first() {
        if labels.iter().all(|l| l == first) {
            return Ok((StrongSplit::Constant(*first), None));
        }
    }
    let out = boost(labels, k, cfg)?;
    Ok((out.split.clone(), Some(out)))
}

fn boost_config(cfg: &TrainerConfig, side: u64, bit: usize) -> BoostConfig {
    BoostConfig {
        rounds: cfg.rounds,
        pool_cap: cfg.pool_cap,
        seed: rng::stream_seed(cfg.seed, Stage::Pool, (side << 32) | bit as u64),
        l1: if side == 0 { cfg.nu1 } else { cfg.nu1 * cfg.nu2 },
    }
}

/// Trains q-side splits with the partner's r-side bits as labels, and r-side
/// splits with the partner's q-side bits.
pub fn cross_train(
    hq: &CodeMatrix,
    hr: &CodeMatrix,
    kq: &KernelPair,
    kr: &KernelPair,
    pair_q: &[usize],
    pair_r: &[usize],
    cfg: &TrainerConfig,
) -> Result<CrossTrained> {
    if hq.bits() != hr.bits() {
        return Err(Error::CodeLength {
            left: hq.bits(),
            right: hr.bits(),
        });
    }
    if pair_q.len() != hq.len() || pair_r.len() != hr.len() || kq.targets() != hq.len() || kr.targets() != hr.len() {
        return Err(Error::invalid("codes, pairings and kernels disagree in size"));
    }
    let bits = hq.bits();
    let jobs: Vec<(u64, usize)> = (0..2).flat_map(|s| (0..bits).map(move |b| (s, b))).collect();
    let results = jobs
        .par_iter()
        .map(|&(side, b)| {
            let (partner, pairing, k) = if side == 0 { (hr, pair_q, kq) } else { (hq, pair_r, kr) };
            let labels: Vec<Sign> = pairing.iter().map(|&j| Sign::from_bit(partner.get(b, j))).collect();
            train_bit(&labels, k, &boost_config(cfg, side, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let (q, r) = results.split_at(bits);
    let unzip = |v: &[(StrongSplit, BitOutcome)]| -> (Vec<StrongSplit>, Vec<BitOutcome>) {
        v.iter().cloned().unzip()
    };
    let (splits_q, outcomes_q) = unzip(q);
    let (splits_r, outcomes_r) = unzip(r);
    Ok(CrossTrained {
        splits_q,
        splits_r,
        outcomes_q,
        outcomes_r,
    })
}

/// Codes of a side's own training sets under its splits.
pub fn encode_side(splits: &[StrongSplit], k: &KernelPair) -> Result<CodeMatrix> {
    let n = k.targets();
    let cols = (0..n)
        .into_par_iter()
        .map(|t| {
            let mut code = crate::code::HashCode::zeros(splits.len());
            for (b, s) in splits.iter().enumerate() {
                code.set(b, s.eval(k, t)?.bit());
            }
            Ok(code)
        })
        .collect::<Result<Vec<_>>>()?;
    CodeMatrix::from_columns(splits.len(), cols)
}

/// Signs of the top-`bits` kernel PCA projections, one column per set.
pub fn init_codes(statistical: &KernelMatrix, bits: usize) -> Result<CodeMatrix> {
    let proj = kernel_pca_init(statistical, bits)?;
    Ok(CodeMatrix::from_fn(bits, statistical.nrows(), |b, c| {
        Sign::of(proj[(c, b)]).bit()
    }))
}

#[derive(Debug, Clone)]
pub struct IterationStats {
    pub descent_q: DescentTrace,
    pub descent_r: DescentTrace,
    pub joint: DescentTrace,
    /// Joint objective of the codes at the end of the iteration.
    pub objective: f64,
    /// Fraction of code bits that differ from the previous iteration.
    pub changed_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: KernelParams,
    pub weights: JointWeights,
    pub init_q: CodeMatrix,
    pub init_r: CodeMatrix,
    pub codes_q: CodeMatrix,
    pub codes_r: CodeMatrix,
    pub iterations: Vec<IterationStats>,
    pub converged: bool,
    /// Boosting results of the last cross-training step.
    pub last: CrossTrained,
}

fn side_kernels(
    sets: &[PreparedSet<'_>],
    params: &KernelParams,
    cache: Option<&KernelCache>,
) -> Result<KernelPair> {
    let get = |kind| match cache {
        Some(c) => c.get_or_compute(sets, sets, kind, params),
        None => kernel_matrix_prepared(sets, sets, kind, params),
    };
    KernelPair::new(get(KernelId::Structural)?, get(KernelId::Statistical)?)
}

pub fn train(split: &TrainSplit, cfg: &TrainerConfig) -> Result<HashModel> {
    train_with(split, cfg, None).map(|(m, _)| m)
}

/// Runs training and also returns the per-iteration record.
pub fn train_with(
    split: &TrainSplit,
    cfg: &TrainerConfig,
    cache: Option<&KernelCache>,
) -> Result<(HashModel, TrainReport)> {
    cfg.validate()?;
    let lq = split.q.require_labels()?;
    let lr = split.r.require_labels()?;
    let sets_q: Vec<&PointSet> = split.q.sets().iter().collect();
    let sets_r: Vec<&PointSet> = split.r.sets().iter().collect();
    if cfg.bits > sets_q.len().min(sets_r.len()) {
        return Err(Error::invalid(format!(
            "{} bits need at least as many training sets per side (q has {}, r has {})",
            cfg.bits,
            sets_q.len(),
            sets_r.len()
        )));
    }

    let all: Vec<&PointSet> = sets_q.iter().chain(&sets_r).copied().collect();
    let params = cfg.kernel.resolve(&all, cfg.seed)?;
    let kq = side_kernels(&prepare_all(&sets_q, &params)?, &params, cache)?;
    let kr = side_kernels(&prepare_all(&sets_r, &params)?, &params, cache)?;

    let weights = JointWeights {
        alpha: cfg.alpha,
        beta: cfg.beta,
        nu3_q: cfg.nu3.unwrap_or_else(|| balance_ratio(pair_counts(&lq))),
        nu3_r: cfg.nu3.unwrap_or_else(|| balance_ratio(pair_counts(&lr))),
        nu4: cfg.nu4.unwrap_or_else(|| balance_ratio(cross_pair_counts(&lq, &lr))),
    };
    let pair_q = pair_indices(&lq, &lr);
    let pair_r = pair_indices(&lr, &lq);
    let descent = cfg.descent();

    let init_q = init_codes(&kq.statistical, cfg.bits)?;
    let init_r = init_codes(&kr.statistical, cfg.bits)?;
    let (mut hq, mut hr) = (init_q.clone(), init_r.clone());
    let total_bits = (hq.len() + hr.len()) * cfg.bits;
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut last = None;

    for _ in 0..cfg.max_outer {
        let (prev_q, prev_r) = (hq.clone(), hr.clone());
        let descent_q = optimize_codes_ds(
            &mut hq,
            &lq,
            weights.nu3_q,
            &descent,
            &mut rng::stream(cfg.seed, Stage::Sweep, 0),
        )?;
        let descent_r = optimize_codes_ds(
            &mut hr,
            &lr,
            weights.nu3_r,
            &descent,
            &mut rng::stream(cfg.seed, Stage::Sweep, 1),
        )?;
        let trained = cross_train(&hq, &hr, &kq, &kr, &pair_q, &pair_r, cfg)?;
        hq = encode_side(&trained.splits_q, &kq)?;
        hr = encode_side(&trained.splits_r, &kr)?;

        let joint = refine_joint(
            &mut hq,
            &mut hr,
            &lq,
            &lr,
            &weights,
            &descent,
            &mut rng::stream(cfg.seed, Stage::Refine, 0),
        )?;
        let trained = cross_train(&hq, &hr, &kq, &kr, &pair_q, &pair_r, cfg)?;
        hq = encode_side(&trained.splits_q, &kq)?;
        hr = encode_side(&trained.splits_r, &kr)?;

        let changed = hq.diff_count(&prev_q)? + hr.diff_count(&prev_r)?;
        let changed_fraction = changed as f64 / total_bits as f64;
        iterations.push(IterationStats {
            descent_q,
            descent_r,
            joint,
            objective: joint_objective(&hq, &hr, &lq, &lr, &weights)?,
            changed_fraction,
        });
        last = Some(trained);
        if changed_fraction < cfg.conv_tol {
            converged = true;
            break;
        }
    }

    let last = last.expect("max_outer >= 1");
    let model = HashModel::new(
        *cfg,
        params,
        split.dim(),
        (&sets_q, last.splits_q.clone()),
        (&sets_r, last.splits_r.clone()),
    )?;
    let report = TrainReport {
        params,
        weights,
        init_q,
        init_r,
        codes_q: hq,
        codes_r: hr,
        iterations,
        converged,
        last,
    };
    Ok((model, report))
}
