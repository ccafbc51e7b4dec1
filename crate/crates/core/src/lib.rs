//! Exemplar-centered high-order parametric embedding (en-HOPE).
//!
//! A shallow high-order map sends inputs to a low-dimensional space where
//! each point is pulled toward the exemplars of its own class and pushed
//! away from the rest. Classifying a new point then costs one embedding
//! plus a kNN search over the `z` embedded exemplars.
//!
//! Typical flow: [`data::load_idx`] or [`data::load_csv`], then
//! [`data::normalize`] and [`data::stratified_split`], then
//! [`exemplars::build_exemplars`], [`embedding::init_high_order`] and
//! [`optimizer::train`], then [`knn::classify_with_model`].

pub mod data;
pub mod embedding;
pub mod error;
pub mod exemplars;
pub mod knn;
pub mod model_file;
pub mod objective;
pub mod optimizer;
pub mod synthetic;

pub use data::{Dataset, LabelColumn, NormMode, NormStats, Split};
pub use embedding::{Embedding, EmbeddingModel, HighOrderDims, HighOrderParams};
pub use error::{Error, Result};
pub use exemplars::{ExemplarConfig, ExemplarMode, ExemplarSet};
pub use knn::{BenchmarkConfig, BenchmarkReport, Classification};
pub use model_file::{ModelFile, TrainingMeta};
pub use objective::{ExemplarLossState, Kernel, Normalization, PairwiseLossConfig};
pub use optimizer::{CgConfig, EpochRecord, LineSearchConfig, LossMode, TrainReport, Trained};
