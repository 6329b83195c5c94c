//! Trained hash model and its binary format.
//!
//! Layout (little-endian), version 1:
//!
//! ```text
//! magic "SHHM" | u32 version
//! config snapshot (see `write_config`)
//! kernel params: u8 mu tag, f64 mu, f64 gamma_g, f64 gamma_s, f64 cov_ridge
//! u32 dim | u32 bits
//! per side (query, then database):
//!   u64 anchor count, then per anchor: u64 id, u32 label (0 = none), u32 n, n·dim f64
//!   bits × split: u8 tag (0 constant, 1 boosted)
//!     constant: u8 bit
//!     boosted:  u32 T, then T × (u8 kernel, u64 anchor a id, u64 anchor b id, f64 ε, f64 λ)
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;

use super::TrainerConfig;
use crate::boosting::{KernelSource, StrongSplit, WeakLearner};
use crate::code::{HashCode, Sign};
use crate::codec::{self, Decoder, Encoder};
use crate::data::{PointSet, SetId};
use crate::error::{Error, Result};
use crate::kernels::{KernelConfig, KernelId, KernelParams, PreparedSet, Threshold};

const MAGIC: &[u8; 4] = b"SHHM";
pub const VERSION: u32 = 1;
const KIND: &str = "model";

/// Which set of splits encodes a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Query-side splits (trained on the q part).
    Query,
    /// Database-side splits (trained on the r part).
    Database,
}

impl Side {
    fn index(self) -> usize {
        match self {
            Side::Query => 0,
            Side::Database => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SideModel {
    anchors: Vec<PointSet>,
    splits: Vec<StrongSplit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    config: TrainerConfig,
    params: KernelParams,
    dim: usize,
    sides: [SideModel; 2],
}

impl HashModel {
    /// Builds a model from splits whose anchor indices point into
    /// `anchors_q` / `anchors_r`; unreferenced anchors are dropped.
    pub fn new(
        config: TrainerConfig,
        params: KernelParams,
        dim: usize,
        (anchors_q, splits_q): (&[&PointSet], Vec<StrongSplit>),
        (anchors_r, splits_r): (&[&PointSet], Vec<StrongSplit>),
    ) -> Result<Self> {
        if splits_q.len() != splits_r.len() || splits_q.is_empty() {
            return Err(Error::invalid("both sides need the same positive number of splits"));
        }
        let side = |anchors: &[&PointSet], splits: Vec<StrongSplit>| -> Result<SideModel> {
            let mut used: Vec<usize> = splits.iter().flat_map(|s| s.anchors()).collect();
            used.sort_unstable();
            used.dedup();
            if let Some(&bad) = used.iter().find(|&&a| a >= anchors.len()) {
                return Err(Error::invalid(format!("split references anchor #{bad} out of range")));
            }
            if let Some(a) = used.iter().find(|&&a| anchors[a].dim() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: anchors[*a].dim(),
                });
            }
            let remap: HashMap<usize, usize> = used.iter().enumerate().map(|(new, &old)| (old, new)).collect();
            Ok(SideModel {
                anchors: used.iter().map(|&a| anchors[a].clone()).collect(),
                splits: splits.iter().map(|s| s.map_anchors(|a| remap[&a])).collect(),
            })
        };
        Ok(Self {
            config,
            params,
            dim,
            sides: [side(anchors_q, splits_q)?, side(anchors_r, splits_r)?],
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn kernel_params(&self) -> &KernelParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.sides[0].splits.len()
    }

    pub fn splits(&self, side: Side) -> &[StrongSplit] {
        &self.sides[side.index()].splits
    }

    pub fn anchors(&self, side: Side) -> &[PointSet] {
        &self.sides[side.index()].anchors
    }

    pub fn encoder(&self, side: Side) -> Result<SideEncoder<'_>> {
        SideEncoder::new(self, side)
    }

    pub fn encode(&self, side: Side, target: &PointSet) -> Result<HashCode> {
        self.encoder(side)?.encode(target)
    }

    pub fn encode_all(&self, side: Side, targets: &[PointSet]) -> Result<Vec<HashCode>> {
        self.encoder(side)?.encode_all(targets)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        codec::write_header(&mut w, MAGIC, VERSION)?;
        let mut e = Encoder::new(w);
        write_config(&mut e, &self.config)?;
        write_threshold(&mut e, self.params.mu)?;
        e.f64(self.params.gamma_g)?;
        e.f64(self.params.gamma_s)?;
        e.f64(self.params.cov_ridge)?;
        e.u32(self.dim as u32)?;
        e.u32(self.bits() as u32)?;
        for side in &self.sides {
            e.len(side.anchors.len())?;
            for a in &side.anchors {
                e.u64(a.id().0)?;
                e.u32(a.label().unwrap_or(0))?;
                e.u32(a.len() as u32)?;
                for &v in a.values() {
                    e.f64(v)?;
                }
            }
            for split in &side.splits {
                match split {
                    StrongSplit::Constant(s) => {
                        e.u8(0)?;
                        e.u8(s.bit() as u8)?;
                    }
                    StrongSplit::Boosted { learners, weights } => {
                        e.u8(1)?;
                        e.u32(learners.len() as u32)?;
                        for (l, lambda) in learners.iter().zip(weights) {
                            e.u8(l.kernel.code())?;
                            e.u64(side.anchors[l.anchor_a].id().0)?;
                            e.u64(side.anchors[l.anchor_b].id().0)?;
                            e.f64(l.epsilon)?;
                            e.f64(*lambda)?;
                        }
                    }
                }
            }
        }
        e.into_inner().flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        codec::read_header(&mut r, KIND, MAGIC, VERSION)?;
        let mut d = Decoder::new(r, KIND);
        let config = read_config(&mut d)?;
        let params = KernelParams {
            mu: read_threshold(&mut d)?,
            gamma_g: d.f64()?,
            gamma_s: d.f64()?,
            cov_ridge: d.f64()?,
        };
        params
            .validate()
            .map_err(|e| Error::format(KIND, e.to_string()))?;
        let dim = d.u32()? as usize;
        let bits = d.u32()? as usize;
        if dim == 0 || bits == 0 {
            return Err(Error::format(KIND, "zero dimension or code length"));
        }
        let mut read_side = || -> Result<SideModel> {
            let count = d.len("anchor")?;
            let mut anchors = Vec::with_capacity(count.min(1 << 16));
            let mut index = HashMap::new();
            for i in 0..count {
                let id = SetId(d.u64()?);
                let label = d.u32()?;
                let n = d.u32()? as usize;
                let values = d.f64s(n * dim)?;
                let set = PointSet::new(id, dim, values, (label != 0).then_some(label))
                    .map_err(|e| Error::format(KIND, e.to_string()))?;
                if index.insert(id, i).is_some() {
                    return Err(Error::DuplicateId(id));
                }
                anchors.push(set);
            }
            let mut splits = Vec::with_capacity(bits);
            for _ in 0..bits {
                let split = match d.u8()? {
                    0 => StrongSplit::Constant(Sign::from_bit(d.u8()? != 0)),
                    1 => {
                        let t = d.u32()? as usize;
                        let mut learners = Vec::with_capacity(t.min(1 << 16));
                        let mut weights = Vec::with_capacity(t.min(1 << 16));
                        for _ in 0..t {
                            let kernel = KernelId::from_code(d.u8()?)
                                .ok_or_else(|| Error::format(KIND, "unknown kernel id"))?;
                            let lookup = |id: u64| {
                                index.get(&SetId(id)).copied().ok_or(Error::MissingAnchor(SetId(id)))
                            };
                            let anchor_a = lookup(d.u64()?)?;
                            let anchor_b = lookup(d.u64()?)?;
                            learners.push(WeakLearner {
                                kernel,
                                anchor_a,
                                anchor_b,
                                epsilon: d.f64()?,
                            });
                            weights.push(d.f64()?);
                        }
                        StrongSplit::boosted(learners, weights)
                            .map_err(|e| Error::format(KIND, e.to_string()))?
                    }
                    tag => return Err(Error::format(KIND, format!("unknown split tag {tag}"))),
                };
                splits.push(split);
            }
            Ok(SideModel { anchors, splits })
        };
        let q = read_side()?;
        let r = read_side()?;
        d.finish()?;
        Ok(Self {
            config,
            params,
            dim,
            sides: [q, r],
        })
    }
}

/// Kernel values between one target and the anchors of a side.
struct AnchorValues(Vec<[Option<f64>; 2]>);

impl KernelSource for AnchorValues {
    fn value(&self, kernel: KernelId, anchor: usize, _target: usize) -> Option<f64> {
        self.0.get(anchor).and_then(|v| v[kernel.code() as usize])
    }
}

/// Encodes sets with one side's splits, reusing the per-anchor kernel
/// ingredients across targets.
pub struct SideEncoder<'m> {
    model: &'m HashModel,
    side: Side,
    anchors: Vec<PreparedSet<'m>>,
    /// Which kernels each anchor is used with.
    needed: Vec<[bool; 2]>,
}

impl<'m> SideEncoder<'m> {
    fn new(model: &'m HashModel, side: Side) -> Result<Self> {
        let sm = &model.sides[side.index()];
        let mut needed = vec![[false; 2]; sm.anchors.len()];
        for split in &sm.splits {
            for l in split.learners() {
                needed[l.anchor_a][l.kernel.code() as usize] = true;
                needed[l.anchor_b][l.kernel.code() as usize] = true;
            }
        }
        let anchors = sm
            .anchors
            .par_iter()
            .map(|a| PreparedSet::new(a, &model.params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            side,
            anchors,
            needed,
        })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn encode(&self, target: &PointSet) -> Result<HashCode> {
        if target.dim() != self.model.dim {
            return Err(Error::DimensionMismatch {
                expected: self.model.dim,
                found: target.dim(),
            });
        }
        let params = &self.model.params;
        let t = PreparedSet::new(target, params)?;
        let values = AnchorValues(
            self.anchors
                .iter()
                .zip(&self.needed)
                .map(|(a, need)| {
                    let mut v = [None; 2];
                    for kind in KernelId::ALL {
                        if need[kind.code() as usize] {
                            v[kind.code() as usize] = Some(a.kernel(&t, kind, params));
                        }
                    }
                    v
                })
                .collect(),
        );
        let splits = &self.model.sides[self.side.index()].splits;
        let mut code = HashCode::zeros(splits.len());
        for (b, split) in splits.iter().enumerate() {
            code.set(b, split.eval(&values, 0)?.bit());
        }
        Ok(code)
    }

    pub fn encode_all(&self, targets: &[PointSet]) -> Result<Vec<HashCode>> {
        targets.par_iter().map(|t| self.encode(t)).collect()
    }
}

fn write_threshold<W: Write>(e: &mut Encoder<W>, mu: Threshold) -> Result<()> {
    match mu {
        Threshold::Auto => {
            e.u8(0)?;
            e.f64(0.0)
        }
        Threshold::Fixed(m) => {
            e.u8(1)?;
            e.f64(m)
        }
    }
}

fn read_threshold<R: Read>(d: &mut Decoder<R>) -> Result<Threshold> {
    let tag = d.u8()?;
    let v = d.f64()?;
    match tag {
        0 => Ok(Threshold::Auto),
        1 => Ok(Threshold::Fixed(v)),
        _ => Err(Error::format(d.kind(), "unknown threshold tag")),
    }
}

fn write_opt<W: Write>(e: &mut Encoder<W>, v: Option<f64>) -> Result<()> {
    e.u8(v.is_some() as u8)?;
    e.f64(v.unwrap_or(0.0))
}

fn read_opt<R: Read>(d: &mut Decoder<R>) -> Result<Option<f64>> {
    let present = d.u8()?;
    let v = d.f64()?;
    Ok((present != 0).then_some(v))
}

fn write_config<W: Write>(e: &mut Encoder<W>, c: &TrainerConfig) -> Result<()> {
    e.u32(c.bits as u32)?;
    e.u32(c.rounds as u32)?;
    for v in [c.alpha, c.beta, c.nu1, c.nu2] {
        e.f64(v)?;
    }
    write_opt(e, c.nu3)?;
    write_opt(e, c.nu4)?;
    e.u32(c.max_outer as u32)?;
    e.f64(c.conv_tol)?;
    e.f64(c.balance_tol)?;
    e.u32(c.max_sweeps as u32)?;
    e.u64(c.pool_cap.map_or(0, |p| p as u64))?;
    e.u64(c.seed)?;
    write_threshold(e, c.kernel.mu)?;
    write_opt(e, c.kernel.gamma_g)?;
    write_opt(e, c.kernel.gamma_s)?;
    e.f64(c.kernel.cov_ridge)
}

fn read_config<R: Read>(d: &mut Decoder<R>) -> Result<TrainerConfig> {
    let bits = d.u32()? as usize;
    let rounds = d.u32()? as usize;
    let (alpha, beta, nu1, nu2) = (d.f64()?, d.f64()?, d.f64()?, d.f64()?);
    let nu3 = read_opt(d)?;
    let nu4 = read_opt(d)?;
    let max_outer = d.u32()? as usize;
    let conv_tol = d.f64()?;
    let balance_tol = d.f64()?;
    let max_sweeps = d.u32()? as usize;
    let pool_cap = match d.u64()? {
        0 => None,
        p => Some(p as usize),
    };
    let seed = d.u64()?;
    let kernel = KernelConfig {
        mu: read_threshold(d)?,
        gamma_g: read_opt(d)?,
        gamma_s: read_opt(d)?,
        cov_ridge: d.f64()?,
    };
    Ok(TrainerConfig {
        bits,
        rounds,
        alpha,
        beta,
        nu1,
        nu2,
        nu3,
        nu4,
        max_outer,
        conv_tol,
        balance_tol,
        max_sweeps,
        pool_cap,
        seed,
        kernel,
    })
}
