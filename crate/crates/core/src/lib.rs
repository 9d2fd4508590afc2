//! Unsupervised graph-level anomaly detection with a cross-view transformer.
//!
//! Graphs are encoded twice, once from node attributes and once from
//! random-walk structural encodings. A transformer whose attention borrows
//! one projection from the opposite view refines both embeddings, and
//! node-level and graph-level contrastive losses between the views serve as
//! both the training objective and the anomaly score.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments
)]

pub mod checkpoint;
pub mod config;
pub mod cvt;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod objective;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;
pub mod views;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use experiment::{run_ablation_suite, run_experiment, RunResult};
pub use graph::{parse_tu_dataset, Dataset, Graph, GraphBatch, LabelRule};
pub use model::{Cvtgad, ModelConfig};
pub use tensor::{Tape, Tensor, Var};
