//! Over-realized dictionary learning: sparse coding, dictionary learning,
//! usage-based distillation, recovery metrics and reproducible experiment
//! sweeps on synthetic sparse data.

pub mod coding;
pub mod distill;
pub mod error;
pub mod experiments;
pub mod io;
pub mod learning;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;

pub use coding::{CodingResult, CodingStatus, LossSpec};
pub use distill::DistillResult;
pub use error::{Error, Result};
pub use learning::{TrainConfig, TrainReport, TrainStatus};
pub use model::{CoeffDist, Dictionary, GenerativeModel, SampleSet, SparseCode};
