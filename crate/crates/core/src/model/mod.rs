//! Multi-scale embedding model.
//!
//! The pipeline per layer: (a) up-pool member proteins into their cell type,
//! (b) node- and semantic-level attention over the meta graph for cell-type
//! and tissue nodes, (c) node-level attention inside each protein subnetwork,
//! (d) down-pool the cell-type embedding back onto its members. Layer 0
//! projects learnable feature rows to the hidden width, runs the first
//! protein attention pass, and derives cell-type/tissue embeddings by
//! weighted and plain averaging.

mod attention;
mod forward;
mod params;

pub use attention::{
    down_pool, init_celltype, init_tissue, node_attention, semantic_attention, up_pool,
    NodeAttention, PathVars, SemanticAttention, SemanticVars, UpPool, ATTENTION_SLOPE,
};
pub use forward::{
    forward, forward_traced, read_out, register_params, run_forward, ForwardOptions,
    ForwardPass, ForwardPlan, ForwardTrace, LayerVars, MetaVars, ParamVars,
};
pub use params::{
    LayerParams, MetaPathsParams, ModelDims, ModelParams, Param, PathParams, SemanticParams,
};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::graph::ValidationReport;
use crate::tape::TensorError;

/// Ablation switches mirrored by the CLI `--ablation` flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Full pipeline.
    Full,
    /// Global graph only: one node per protein, no meta graph, no pooling,
    /// no centers.
    Global,
    /// Down-pooling disabled (meta-graph structure not imposed back).
    NoMg,
    /// Center loss disabled (effective lambda forced to zero).
    NoProto,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] =
        [AblationMode::Full, AblationMode::Global, AblationMode::NoMg, AblationMode::NoProto];

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::Global => "global",
            AblationMode::NoMg => "no_mg",
            AblationMode::NoProto => "no_proto",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(AblationMode::Full),
            "global" => Ok(AblationMode::Global),
            "no_mg" => Ok(AblationMode::NoMg),
            "no_proto" => Ok(AblationMode::NoProto),
            other => Err(format!("unknown ablation mode '{other}'")),
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("parameters were initialized for {params} mode, forward requested {requested}")]
    ModeShapeMismatch { params: &'static str, requested: AblationMode },
    #[error("forward over {requested} layers but parameters hold {available}")]
    LayersExceedParams { requested: usize, available: usize },
    #[error("network failed validation:\n{0}")]
    InvalidNetwork(ValidationReport),
    #[error("cell type '{0}' has no subnetwork; cannot initialize its embedding")]
    MissingSubnetwork(String),
}

/// Key of one embedded node. Protein keys carry the cell-type context of
/// the replica, or no context in global mode.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmbedKey {
    Protein { gene: String, context: Option<String> },
    CellType(String),
    Tissue(String),
}

impl EmbedKey {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EmbedKey::Protein { .. } => "protein",
            EmbedKey::CellType(_) => "celltype",
            EmbedKey::Tissue(_) => "tissue",
        }
    }
}

/// Frozen embeddings keyed by node, tagged with the ablation mode that
/// produced them. Iteration order is the canonical node order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    mode: AblationMode,
    entries: Vec<(EmbedKey, Vec<f64>)>,
    lookup: HashMap<EmbedKey, usize>,
}

impl EmbeddingTable {
    pub fn new(mode: AblationMode, entries: Vec<(EmbedKey, Vec<f64>)>) -> Self {
        let lookup =
            entries.iter().enumerate().map(|(i, (k, _))| (k.clone(), i)).collect();
        EmbeddingTable { mode, entries, lookup }
    }

    pub fn mode(&self) -> AblationMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Embedding width; zero for an empty table.
    pub fn dim(&self) -> usize {
        self.entries.first().map_or(0, |(_, v)| v.len())
    }

    pub fn get(&self, key: &EmbedKey) -> Option<&[f64]> {
        self.lookup.get(key).map(|&i| self.entries[i].1.as_slice())
    }

    /// Row index of a key in canonical order (used as a deterministic
    /// tie-break id in evaluation).
    pub fn position(&self, key: &EmbedKey) -> Option<usize> {
        self.lookup.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EmbedKey, &[f64])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }
}
