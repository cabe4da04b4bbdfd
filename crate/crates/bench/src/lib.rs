//! Shared fixtures for the pipeline benchmarks.

use ctxppi_core::contextualize::build_network;
use ctxppi_core::graph::MultiScaleNetwork;
use ctxppi_core::model::ModelDims;
use ctxppi_core::synth::{generate, SynthSpec};

/// Default-scale planted instance (6 cell types, 40 proteins each).
pub fn default_network() -> MultiScaleNetwork {
    let spec = SynthSpec::default();
    let out = generate(&spec).expect("default spec generates");
    build_network(
        out.global,
        &out.expression,
        out.meta,
        spec.markers_per_celltype(),
        50,
    )
    .expect("default instance builds")
    .net
}

/// Model dimensions used by the benchmarks: large enough to be
/// representative, small enough to keep iterations quick.
pub fn bench_dims() -> ModelDims {
    ModelDims { feature_dim: 64, hidden_dim: 32, heads: 4 }
}
