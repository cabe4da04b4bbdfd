//! Cell-type-contextual protein network embeddings.
//!
//! This crate builds cell-type-specific protein interaction subnetworks from a
//! global interaction network plus per-cluster expression summaries, learns
//! multi-scale embeddings of proteins, cell types, and tissues with
//! hierarchical graph attention (node-level, semantic-level, and pooling
//! attention trained against a link-prediction plus center-loss objective),
//! and evaluates the embeddings on context-specific label prediction.
//!
//! Module map:
//! - [`matrix`] / [`tape`]: dense 2-D `f64` storage and the reverse-mode
//!   autodiff engine every layer is built on.
//! - [`graph`]: the multi-scale network data model (global graph, per-cell-type
//!   subnetworks, meta graph, contextual node index).
//! - [`contextualize`]: differential-expression scoring and connected
//!   subnetwork extraction.
//! - [`model`]: attention layers, pooling, and the full forward pass.
//! - [`train`]: losses, Adam, and the training loop.
//! - [`eval`]: KNN label prediction, Micro-F1, Recall@20, cluster purity,
//!   2-D projection.
//! - [`synth`]: seeded generator of planted multi-scale networks.
//! - [`io`]: file formats, bundles, and run manifests shared with the CLI.

pub mod contextualize;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod matrix;
pub mod model;
pub mod synth;
pub mod tape;
pub mod train;

pub use graph::{CellTypeSubnetwork, GlobalPpi, MetaGraph, MetaPath, MultiScaleNetwork};
pub use matrix::Matrix;
pub use model::{AblationMode, EmbedKey, EmbeddingTable, ModelDims, ModelParams};
pub use tape::{Tape, TensorError, Var};
pub use train::{TrainConfig, TrainHistory};
