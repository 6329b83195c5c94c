//! Learned binary hashing for sets of vectors.
//!
//! Sets are compared with two kernels (a degree-weighted structural kernel
//! and a log-Euclidean covariance kernel). Hash bits are boosted
//! combinations of kernel hypercuts, trained alternately with binary codes
//! that pull same-label sets together and push different labels apart.
//! Retrieval is exact Hamming ranking over packed codes.

pub mod boosting;
pub mod code;
mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod index;
pub mod io;
pub mod kernels;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use code::{hamming_distance, HashCode, Sign};
pub use data::{split_qr, Label, PointSet, SetDataset, SetId, TrainSplit};
pub use error::{Error, Result};
pub use index::{CodeIndex, RankedResult};
pub use trainer::{train, HashModel, Side, TrainerConfig};
