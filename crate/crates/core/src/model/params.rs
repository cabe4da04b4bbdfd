//! Learnable parameters and their initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::MultiScaleNetwork;
use crate::matrix::Matrix;
use crate::model::AblationMode;

/// Model dimensions. Hidden size must be divisible by the head count; the
/// defaults give the 2048-dim feature rows and 128 = 8 x 16 hidden layout
/// used at full scale, while tests shrink everything.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { feature_dim: 2048, hidden_dim: 128, heads: 8 }
    }
}

impl ModelDims {
    pub fn head_dim(&self) -> usize {
        debug_assert_eq!(self.hidden_dim % self.heads, 0, "hidden size not divisible by heads");
        self.hidden_dim / self.heads
    }
}

/// A named learnable matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

/// Per-metapath node-attention parameters: one transform and one attention
/// vector per head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    /// K matrices of hidden_dim x head_dim.
    pub transforms: Vec<Param>,
    /// K attention vectors of 1 x (2 * head_dim).
    pub attn: Vec<Param>,
}

/// Semantic-attention parameters shared by the meta-path fusions of a layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticParams {
    /// hidden_dim x hidden_dim.
    pub w: Param,
    /// 1 x hidden_dim bias row.
    pub b: Param,
    /// hidden_dim x 1 scoring vector.
    pub q: Param,
}

/// Attention parameters of the meta-graph portion of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaPathsParams {
    pub cci: PathParams,
    pub ct: PathParams,
    pub tt: PathParams,
    pub sem: SemanticParams,
}

/// One propagation layer: a protein-protein pass always, plus the meta-graph
/// passes except in global mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub pp: PathParams,
    pub meta: Option<MetaPathsParams>,
}

/// All learnable state of one model instance.
///
/// The feature table holds one row per embedded protein node: per contextual
/// replica in the full modes, per global protein in global mode. Cell-type
/// and tissue embeddings are derived by pooling and carry no feature rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// True when shaped for [`AblationMode::Global`] (one node per protein,
    /// no meta graph, no pooling, no centers).
    pub global_shape: bool,
    /// n_protein_nodes x feature_dim.
    pub features: Param,
    /// feature_dim x hidden_dim linear projection applied before layer 0.
    pub proj: Param,
    /// Layer-0 protein-protein attention.
    pub layer0_pp: PathParams,
    pub layers: Vec<LayerParams>,
    /// One pooling attention vector (1 x 2*hidden_dim) per cell type.
    pub pool: Vec<Param>,
    /// Cell-type centers (n_celltypes x hidden_dim) for the center loss.
    pub centers: Option<Param>,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| (2.0 * rng.random::<f64>() - 1.0) * bound)
}

fn path_params(
    rng: &mut ChaCha8Rng,
    dims: &ModelDims,
    prefix: &str,
) -> PathParams {
    let dh = dims.head_dim();
    let mut transforms = Vec::with_capacity(dims.heads);
    let mut attn = Vec::with_capacity(dims.heads);
    for h in 0..dims.heads {
        transforms.push(Param {
            name: format!("{prefix}.head{h}.transform"),
            value: xavier(rng, dims.hidden_dim, dh),
        });
        attn.push(Param {
            name: format!("{prefix}.head{h}.attn"),
            value: xavier(rng, 1, 2 * dh),
        });
    }
    PathParams { transforms, attn }
}

fn semantic_params(rng: &mut ChaCha8Rng, dims: &ModelDims, prefix: &str) -> SemanticParams {
    SemanticParams {
        w: Param {
            name: format!("{prefix}.w"),
            value: xavier(rng, dims.hidden_dim, dims.hidden_dim),
        },
        b: Param { name: format!("{prefix}.b"), value: xavier(rng, 1, dims.hidden_dim) },
        q: Param { name: format!("{prefix}.q"), value: xavier(rng, dims.hidden_dim, 1) },
    }
}

impl ModelParams {
    /// Seeded Xavier/Glorot initialization (centers start at zero). The
    /// parameter set is shaped for the given mode: global keeps only the
    /// protein-protein stack over the global graph.
    pub fn init(
        net: &MultiScaleNetwork,
        mode: AblationMode,
        dims: ModelDims,
        layers: usize,
        seed: u64,
    ) -> Self {
        assert_eq!(dims.hidden_dim % dims.heads, 0, "hidden size not divisible by heads");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let global_shape = mode == AblationMode::Global;

        let n_protein_rows = if global_shape {
            net.global.len()
        } else {
            net.subnets.iter().map(|s| s.members.len()).sum()
        };
        let features = Param {
            name: "features".to_string(),
            value: xavier(&mut rng, n_protein_rows, dims.feature_dim),
        };
        let proj = Param {
            name: "proj".to_string(),
            value: xavier(&mut rng, dims.feature_dim, dims.hidden_dim),
        };
        let layer0_pp = path_params(&mut rng, &dims, "layer0.pp");

        let mut layer_params = Vec::with_capacity(layers);
        for l in 1..=layers {
            let pp = path_params(&mut rng, &dims, &format!("layer{l}.pp"));
            let meta = (!global_shape).then(|| MetaPathsParams {
                cci: path_params(&mut rng, &dims, &format!("layer{l}.cci")),
                ct: path_params(&mut rng, &dims, &format!("layer{l}.ct")),
                tt: path_params(&mut rng, &dims, &format!("layer{l}.tt")),
                sem: semantic_params(&mut rng, &dims, &format!("layer{l}.sem")),
            });
            layer_params.push(LayerParams { pp, meta });
        }

        let pool = if global_shape {
            Vec::new()
        } else {
            net.meta
                .celltypes
                .iter()
                .map(|ct| Param {
                    name: format!("pool.{ct}"),
                    value: xavier(&mut rng, 1, 2 * dims.hidden_dim),
                })
                .collect()
        };
        let centers = (!global_shape).then(|| Param {
            name: "centers".to_string(),
            value: Matrix::zeros(net.meta.celltypes.len(), dims.hidden_dim),
        });

        ModelParams {
            dims,
            global_shape,
            features,
            proj,
            layer0_pp,
            layers: layer_params,
            pool,
            centers,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Visits every parameter in the canonical order used by the optimizer
    /// and the gradient checks.
    pub fn for_each(&self, mut f: impl FnMut(&Param)) {
        f(&self.features);
        f(&self.proj);
        for p in self.layer0_pp.transforms.iter().chain(&self.layer0_pp.attn) {
            f(p);
        }
        for layer in &self.layers {
            for p in layer.pp.transforms.iter().chain(&layer.pp.attn) {
                f(p);
            }
            if let Some(meta) = &layer.meta {
                for path in [&meta.cci, &meta.ct, &meta.tt] {
                    for p in path.transforms.iter().chain(&path.attn) {
                        f(p);
                    }
                }
                f(&meta.sem.w);
                f(&meta.sem.b);
                f(&meta.sem.q);
            }
        }
        for p in &self.pool {
            f(p);
        }
        if let Some(c) = &self.centers {
            f(c);
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut Param)) {
        f(&mut self.features);
        f(&mut self.proj);
        for p in self.layer0_pp.transforms.iter_mut().chain(&mut self.layer0_pp.attn) {
            f(p);
        }
        for layer in &mut self.layers {
            for p in layer.pp.transforms.iter_mut().chain(&mut layer.pp.attn) {
                f(p);
            }
            if let Some(meta) = &mut layer.meta {
                for path in [&mut meta.cci, &mut meta.ct, &mut meta.tt] {
                    for p in path.transforms.iter_mut().chain(&mut path.attn) {
                        f(p);
                    }
                }
                f(&mut meta.sem.w);
                f(&mut meta.sem.b);
                f(&mut meta.sem.q);
            }
        }
        for p in &mut self.pool {
            f(p);
        }
        if let Some(c) = &mut self.centers {
            f(c);
        }
    }

    /// Parameter names in canonical order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each(|p| out.push(p.name.clone()));
        out
    }

    /// Parameter values in canonical order.
    pub fn values(&self) -> Vec<Matrix> {
        let mut out = Vec::new();
        self.for_each(|p| out.push(p.value.clone()));
        out
    }

    /// Overwrites every parameter from `values` (canonical order).
    pub fn set_values(&mut self, values: &[Matrix]) {
        let mut i = 0;
        self.for_each_mut(|p| {
            p.value = values[i].clone();
            i += 1;
        });
        assert_eq!(i, values.len(), "value count mismatch");
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_| n += 1);
        n
    }

    /// Index of the centers parameter in canonical order, when present.
    pub fn centers_position(&self) -> Option<usize> {
        self.centers.as_ref()?;
        Some(self.param_count() - 1)
    }
}
