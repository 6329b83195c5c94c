//! Synthetic labeled set data.
//!
//! Each class `k` has a center `c_k ~ N(0, center_scale² I)` and a shape
//! matrix `B_k = Q_k diag(s)` with a random rotation `Q_k` and a decaying
//! spectrum `s_i ∝ decay^i`. A set of class `k` draws one jitter offset
//! `j ~ N(0, set_jitter² I)` and then its points as
//! `x = c_k + spread · (j + B_k z)` with `z ~ N(0, I)`.
//!
//! Classes therefore differ both in location and in covariance shape, while
//! the per-set jitter blurs set means.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{PointSet, SetDataset, SetId};
use crate::error::{Error, Result};
use crate::rng::{self, Stage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub sets_per_class: usize,
    pub points_per_set: usize,
    pub dim: usize,
    /// Overall scale of within-class variation; 0 collapses every point onto its class center.
    pub cluster_spread: f64,
    pub set_jitter: f64,
    pub center_scale: f64,
    /// Ratio between consecutive shape spectrum values, in (0, 1].
    pub decay: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            sets_per_class: 16,
            points_per_set: 20,
            dim: 32,
            cluster_spread: 1.0,
            set_jitter: 1.0,
            center_scale: 1.0,
            decay: 0.85,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.sets_per_class == 0 || self.points_per_set == 0 {
            return Err(Error::invalid("class, set and point counts must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if self.classes > u32::MAX as usize {
            return Err(Error::invalid("too many classes"));
        }
        for (name, v) in [
            ("cluster_spread", self.cluster_spread),
            ("set_jitter", self.set_jitter),
            ("center_scale", self.center_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be >= 0")));
            }
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid(format!("decay = {} must lie in (0, 1]", self.decay)));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

struct ClassModel {
    center: Vec<f64>,
    /// `dim × dim`
    shape: DMatrix<f64>,
}

fn class_model(cfg: &SynthConfig, k: usize) -> ClassModel {
    let d = cfg.dim;
    let mut rng = rng::stream(cfg.seed, Stage::Synth, k as u64);
    let center = gaussian(&mut rng, d).into_iter().map(|v| v * cfg.center_scale).collect();
    let q = DMatrix::from_vec(d, d, gaussian(&mut rng, d * d)).qr().q();
    let spectrum: Vec<f64> = (0..d).map(|i| cfg.decay.powi(i as i32)).collect();
    let rms = (spectrum.iter().map(|s| s * s).sum::<f64>() / d as f64).sqrt();
    let shape = DMatrix::from_fn(d, d, |i, j| q[(i, j)] * spectrum[j] / rms);
    ClassModel { center, shape }
}

/// Labels are `1..=classes`; ids run class by class from 0.
pub fn generate(cfg: &SynthConfig) -> Result<SetDataset> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut sets = Vec::with_capacity(cfg.classes * cfg.sets_per_class);
    for k in 0..cfg.classes {
        let model = class_model(cfg, k);
        for s in 0..cfg.sets_per_class {
            let id = (k * cfg.sets_per_class + s) as u64;
            let mut rng = rng::stream(cfg.seed, Stage::Synth, (1 << 40) | id);
            let jitter: Vec<f64> = gaussian(&mut rng, d).into_iter().map(|v| v * cfg.set_jitter).collect();
            let mut values = Vec::with_capacity(cfg.points_per_set * d);
            for _ in 0..cfg.points_per_set {
                let z = nalgebra::DVector::from_vec(gaussian(&mut rng, d));
                let offset = &model.shape * z;
                values.extend((0..d).map(|i| model.center[i] + cfg.cluster_spread * (jitter[i] + offset[i])));
            }
            sets.push(PointSet::new(SetId(id), d, values, Some(k as u32 + 1))?);
        }
    }
    SetDataset::new(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let cfg = SynthConfig {
            classes: 10,
            sets_per_class: 6,
            points_per_set: 20,
            dim: 32,
            ..Default::default()
        };
        let d = generate(&cfg).unwrap();
        assert_eq!(d.len(), 60);
        assert_eq!(d.total_points(), 1200);
        assert_eq!(d.label_count(), 10);
        assert_eq!(generate(&cfg).unwrap().sets(), d.sets());
    }

    #[test]
    fn zero_spread_collapses_to_center() {
        let cfg = SynthConfig {
            classes: 2,
            sets_per_class: 2,
            points_per_set: 3,
            dim: 4,
            cluster_spread: 0.0,
            ..Default::default()
        };
        let d = generate(&cfg).unwrap();
        assert_eq!(d.sets()[0].values(), d.sets()[1].values());
        assert_eq!(d.sets()[0].point(0), d.sets()[0].point(2));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(generate(&SynthConfig { dim: 0, ..Default::default() }).is_err());
        assert!(generate(&SynthConfig { classes: 0, ..Default::default() }).is_err());
        assert!(generate(&SynthConfig { decay: 0.0, ..Default::default() }).is_err());
    }
}
