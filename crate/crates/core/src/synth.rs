//! Seeded generator of planted multi-scale networks.
//!
//! Builds a tissue tree, attaches cell types, plants one protein module per
//! cell type (dense inside, sparse across), boosts marker expression in the
//! owning cell type, and assigns disease labels to marker subsets. The result
//! round-trips through the on-disk formats and feeds the acceptance checks
//! with known ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contextualize::ExpressionSummary;
use crate::eval::{LabelSet, LabelTriple};
use crate::graph::{GlobalPpi, MetaGraph};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("{field} must be at least 1")]
    ZeroCount { field: &'static str },
    #[error("intra-module edge probability ({p_in}) must exceed the cross probability ({p_out})")]
    EdgeProbabilities { p_in: f64, p_out: f64 },
    #[error("expression boost must be positive, got {0}")]
    NonPositiveBoost(f64),
    #[error("probability {field} = {value} outside [0, 1]")]
    BadProbability { field: &'static str, value: f64 },
    #[error("diseases requested but the marker fraction yields no markers")]
    NoMarkersForDiseases,
}

/// Parameters of the planted generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Number of tissue nodes, arranged as a tree in breadth-first order.
    pub tissues: usize,
    /// Children per tissue when building the tree.
    pub tissue_branching: usize,
    pub celltypes_per_tissue: usize,
    /// Module size P: proteins planted per cell type.
    pub proteins_per_celltype: usize,
    /// Fraction of each module designated as expression markers.
    pub marker_fraction: f64,
    /// Edge probability inside a module.
    pub intra_edge_prob: f64,
    /// Edge probability across modules.
    pub cross_edge_prob: f64,
    /// Baseline mean expression of every gene.
    pub expression_base: f64,
    /// Additive boost b a marker receives in its own cell type.
    pub expression_boost: f64,
    pub diseases: usize,
    /// Cell types each disease manifests in.
    pub celltypes_per_disease: usize,
    /// Marker genes drawn per (disease, cell type) pair.
    pub genes_per_disease: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            tissues: 3,
            tissue_branching: 2,
            celltypes_per_tissue: 2,
            proteins_per_celltype: 40,
            marker_fraction: 0.5,
            intra_edge_prob: 0.3,
            cross_edge_prob: 0.02,
            expression_base: 1.0,
            expression_boost: 4.0,
            diseases: 3,
            celltypes_per_disease: 2,
            genes_per_disease: 10,
            seed: 7,
        }
    }
}

impl SynthSpec {
    fn check(&self) -> Result<(), SpecError> {
        for (field, value) in [
            ("tissues", self.tissues),
            ("tissue_branching", self.tissue_branching),
            ("celltypes_per_tissue", self.celltypes_per_tissue),
            ("proteins_per_celltype", self.proteins_per_celltype),
        ] {
            if value == 0 {
                return Err(SpecError::ZeroCount { field });
            }
        }
        for (field, value) in [
            ("marker_fraction", self.marker_fraction),
            ("intra_edge_prob", self.intra_edge_prob),
            ("cross_edge_prob", self.cross_edge_prob),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SpecError::BadProbability { field, value });
            }
        }
        if self.intra_edge_prob <= self.cross_edge_prob {
            return Err(SpecError::EdgeProbabilities {
                p_in: self.intra_edge_prob,
                p_out: self.cross_edge_prob,
            });
        }
        if self.expression_boost <= 0.0 {
            return Err(SpecError::NonPositiveBoost(self.expression_boost));
        }
        let markers =
            (self.proteins_per_celltype as f64 * self.marker_fraction).round() as usize;
        if self.diseases > 0 && markers == 0 {
            return Err(SpecError::NoMarkersForDiseases);
        }
        Ok(())
    }

    /// Markers planted per cell type under this spec.
    pub fn markers_per_celltype(&self) -> usize {
        ((self.proteins_per_celltype as f64 * self.marker_fraction).round() as usize)
            .min(self.proteins_per_celltype)
    }
}

/// Generator output: inputs for the pipeline plus the planted truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub global: GlobalPpi,
    pub expression: ExpressionSummary,
    pub meta: MetaGraph,
    pub labels: LabelSet,
    pub truth: GroundTruth,
}

/// Planted assignment: which cell type's module each gene belongs to, and
/// which module genes are markers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// (gene symbol, owning cell type id) per generated gene.
    pub gene_module: Vec<(String, String)>,
    /// Marker gene symbols per cell type, aligned with meta cell types.
    pub markers: Vec<Vec<String>>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SpecError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Tissue tree in breadth-first order: node i attaches to its parent
    // (i - 1) / branching.
    let tissues: Vec<String> = (0..spec.tissues).map(|t| format!("tissue{t}")).collect();
    let parent_edges: Vec<(usize, usize)> = (1..spec.tissues)
        .map(|t| (t, (t - 1) / spec.tissue_branching))
        .collect();

    // Cell types per tissue; cci edges between siblings of the same tissue.
    let n_ct = spec.tissues * spec.celltypes_per_tissue;
    let celltypes: Vec<String> = (0..n_ct).map(|c| format!("ct{c}")).collect();
    let mut membership_edges = Vec::new();
    let mut cci_edges = Vec::new();
    for t in 0..spec.tissues {
        let block: Vec<usize> = (0..spec.celltypes_per_tissue)
            .map(|i| t * spec.celltypes_per_tissue + i)
            .collect();
        for &c in &block {
            membership_edges.push((c, t));
        }
        for i in 0..block.len() {
            for j in i + 1..block.len() {
                cci_edges.push((block[i], block[j]));
            }
        }
    }
    let meta = MetaGraph::new(celltypes.clone(), tissues, cci_edges, membership_edges, parent_edges);

    // One disjoint protein module per cell type.
    let p = spec.proteins_per_celltype;
    let n_genes = n_ct * p;
    let width = (n_genes.max(10) as f64).log10().ceil() as usize;
    let genes: Vec<String> = (0..n_genes).map(|g| format!("G{g:0width$}")).collect();
    let module_of = |gene: usize| gene / p;

    let mut edges: Vec<(usize, usize)> = Vec::new();
    for a in 0..n_genes {
        for b in a + 1..n_genes {
            let prob = if module_of(a) == module_of(b) {
                spec.intra_edge_prob
            } else {
                spec.cross_edge_prob
            };
            if rng.random::<f64>() < prob {
                edges.push((a, b));
            }
        }
    }
    let mut global = GlobalPpi::new(genes.clone(), edges);

    // Bridge components so the global graph is connected: one random edge
    // from each extra component to the first.
    let all: Vec<usize> = (0..n_genes).collect();
    loop {
        let components = global.induced_components(&all);
        if components.len() <= 1 {
            break;
        }
        let mut edges: Vec<(usize, usize)> = global.edges().to_vec();
        for comp in &components[1..] {
            let a = components[0][rng.random_range(0..components[0].len())];
            let b = comp[rng.random_range(0..comp.len())];
            edges.push((a, b));
        }
        global = GlobalPpi::new(genes.clone(), edges);
    }

    // Expression: markers get base + boost in their own cell type.
    let n_markers = spec.markers_per_celltype();
    let mut markers: Vec<Vec<String>> = Vec::with_capacity(n_ct);
    let mut marker_flags = vec![false; n_genes];
    for c in 0..n_ct {
        let mut module: Vec<usize> = (c * p..(c + 1) * p).collect();
        module.shuffle(&mut rng);
        let mut chosen: Vec<usize> = module[..n_markers].to_vec();
        chosen.sort_unstable();
        for &g in &chosen {
            marker_flags[g] = true;
        }
        markers.push(chosen.iter().map(|&g| genes[g].clone()).collect());
    }
    let mean_expr: Vec<Vec<f64>> = (0..n_ct)
        .map(|c| {
            (0..n_genes)
                .map(|g| {
                    let boosted = marker_flags[g] && module_of(g) == c;
                    spec.expression_base + if boosted { spec.expression_boost } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let expression = ExpressionSummary {
        genes: genes.clone(),
        celltypes: celltypes.clone(),
        mean_expr,
    };

    // Disease labels over random marker subsets of random cell types.
    let mut triples = Vec::new();
    for d in 0..spec.diseases {
        let disease = format!("disease{d}");
        let mut cts: Vec<usize> = (0..n_ct).collect();
        cts.shuffle(&mut rng);
        cts.truncate(spec.celltypes_per_disease.min(n_ct));
        cts.sort_unstable();
        for c in cts {
            let mut pool = markers[c].clone();
            pool.shuffle(&mut rng);
            pool.truncate(spec.genes_per_disease.min(pool.len()));
            for gene in pool {
                triples.push(LabelTriple {
                    gene,
                    celltype: celltypes[c].clone(),
                    disease: disease.clone(),
                });
            }
        }
    }
    let labels = LabelSet::new(triples);

    let gene_module = (0..n_genes)
        .map(|g| (genes[g].clone(), celltypes[module_of(g)].clone()))
        .collect();
    Ok(SynthOutput {
        global,
        expression,
        meta,
        labels,
        truth: GroundTruth { gene_module, markers },
    })
}
