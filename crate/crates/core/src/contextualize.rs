//! Cell-type-specific subnetwork construction.
//!
//! Starting from a cluster-by-gene expression summary and the global protein
//! graph, each cell type gets a ranking of genes by differential expression;
//! the top-k ranked genes seed a subnetwork that grows along the ranking
//! until the induced subgraph is connected.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::graph::{CellTypeSubnetwork, GlobalPpi, MetaGraph, MultiScaleNetwork};

/// Shift added before weight normalization; also the weight floor assigned
/// to proteins pulled in by the connectivity fallback.
pub const WEIGHT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ContextError {
    #[error("cell type '{0}' not present in the expression summary")]
    UnknownCelltype(String),
    #[error("differential expression needs at least two cell types, found {0}")]
    NoContrast(usize),
    #[error("k = {k} exceeds the {available} ranked genes available")]
    KTooLarge { k: usize, available: usize },
    #[error("k must be at least 1")]
    KZero,
}

/// Mean expression per (cell type, gene); the summary a clustering pipeline
/// would hand over. Entries must be nonnegative, identifiers unique.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionSummary {
    pub genes: Vec<String>,
    pub celltypes: Vec<String>,
    /// Row per cell type, column per gene.
    pub mean_expr: Vec<Vec<f64>>,
}

impl ExpressionSummary {
    pub fn gene_index(&self, gene: &str) -> Option<usize> {
        self.genes.iter().position(|g| g == gene)
    }

    pub fn celltype_index(&self, celltype: &str) -> Option<usize> {
        self.celltypes.iter().position(|c| c == celltype)
    }
}

/// Genes of one cell type ordered by differential-expression score,
/// descending, ties broken by ascending gene symbol. Covers exactly the
/// genes present in both the expression summary and the global graph.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedGenes {
    pub celltype_id: String,
    /// (global protein index, score), sorted per the ordering contract.
    pub entries: Vec<(usize, f64)>,
}

/// Pseudocounted log2 fold-change of a cell type against the mean of all
/// other cell types: `log2((mean_c + 1) / (mean_rest + 1))`.
pub fn de_scores(
    expr: &ExpressionSummary,
    global: &GlobalPpi,
    celltype: &str,
) -> Result<RankedGenes, ContextError> {
    let c = expr
        .celltype_index(celltype)
        .ok_or_else(|| ContextError::UnknownCelltype(celltype.to_string()))?;
    let n_ct = expr.celltypes.len();
    if n_ct < 2 {
        return Err(ContextError::NoContrast(n_ct));
    }

    let mut entries: Vec<(usize, f64)> = Vec::new();
    for (g, gene) in expr.genes.iter().enumerate() {
        let Some(protein) = global.index_of(gene) else { continue };
        let own = expr.mean_expr[c][g];
        let rest: f64 = (0..n_ct)
            .filter(|&i| i != c)
            .map(|i| expr.mean_expr[i][g])
            .sum::<f64>()
            / (n_ct - 1) as f64;
        let score = ((own + 1.0) / (rest + 1.0)).log2();
        entries.push((protein, score));
    }
    entries.sort_by(|(pa, sa), (pb, sb)| {
        sb.partial_cmp(sa)
            .expect("finite scores")
            .then_with(|| global.symbol(*pa).cmp(global.symbol(*pb)))
    });
    Ok(RankedGenes { celltype_id: celltype.to_string(), entries })
}

/// Shifted min normalization to a strictly positive convex combination:
/// `w_i = (s_i - min_j s_j + eps) / sum_j (s_j - min_j s_j + eps)`.
pub fn normalize_weights(scores: &[f64]) -> Vec<f64> {
    assert!(!scores.is_empty(), "normalize_weights on empty member list");
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = scores.iter().map(|s| s - min + WEIGHT_EPSILON).collect();
    let total: f64 = shifted.iter().sum();
    shifted.into_iter().map(|s| s / total).collect()
}

/// Grows a connected subnetwork from the top-k ranked genes.
///
/// Members start as the top-k ranked genes; further ranked genes are
/// appended one at a time, re-checking connectivity of the induced subgraph
/// after each, stopping at the first connected state. If the ranking is
/// exhausted or `n_max` additions fail to connect the members, remaining
/// components are bridged through shortest paths in the global graph
/// (bridging proteins enter at the weight floor) and the result carries the
/// fallback flag.
pub fn extract_subnetwork(
    global: &GlobalPpi,
    ranked: &RankedGenes,
    k: usize,
    n_max: usize,
) -> Result<CellTypeSubnetwork, ContextError> {
    if k == 0 {
        return Err(ContextError::KZero);
    }
    if k > ranked.entries.len() {
        return Err(ContextError::KTooLarge { k, available: ranked.entries.len() });
    }

    let mut members: Vec<usize> = ranked.entries[..k].iter().map(|&(p, _)| p).collect();
    let mut scores: Vec<f64> = ranked.entries[..k].iter().map(|&(_, s)| s).collect();
    let mut cursor = k;
    let mut added = 0usize;
    while !global.is_connected_induced(&members) && cursor < ranked.entries.len() && added < n_max
    {
        let (p, s) = ranked.entries[cursor];
        members.push(p);
        scores.push(s);
        cursor += 1;
        added += 1;
    }

    let mut fallback = false;
    if !global.is_connected_induced(&members) {
        fallback = true;
        bridge_components(global, &mut members, &mut scores);
    }

    let de_weight = normalize_weights(&scores);
    let edges = global.induced_edges(&members);
    Ok(CellTypeSubnetwork {
        celltype_id: ranked.celltype_id.clone(),
        members,
        edges,
        de_weight,
        fallback,
    })
}

/// Connects remaining components via shortest paths through the global
/// graph. Bridging proteins are appended with a score equal to the current
/// minimum so their normalized weight lands on the epsilon floor. If the
/// global graph itself cannot connect them the loop stops and the result
/// stays disconnected (the fallback flag already marks it as suspect).
fn bridge_components(global: &GlobalPpi, members: &mut Vec<usize>, scores: &mut Vec<f64>) {
    loop {
        let components = global.induced_components(members);
        if components.len() <= 1 {
            return;
        }
        let rest: BTreeSet<usize> =
            components[1..].iter().flatten().copied().collect();
        match global.shortest_path_between(&components[0], &rest) {
            Some(path) => {
                let floor = scores.iter().copied().fold(f64::INFINITY, f64::min);
                for p in path {
                    if !members.contains(&p) {
                        members.push(p);
                        scores.push(floor);
                    }
                }
            }
            None => return,
        }
    }
}

/// Result of running the contextualization pipeline over every cell type.
pub struct BuildOutcome {
    pub net: MultiScaleNetwork,
    /// Cell types whose extraction needed the bridging fallback.
    pub fallback_celltypes: Vec<String>,
}

/// Runs differential-expression scoring and subnetwork extraction for every
/// cell type of the meta graph, then assembles the multi-scale network.
/// Validation of the assembled network is left to the caller.
pub fn build_network(
    global: GlobalPpi,
    expr: &ExpressionSummary,
    meta: MetaGraph,
    k: usize,
    n_max: usize,
) -> Result<BuildOutcome, ContextError> {
    let mut subnets = Vec::with_capacity(meta.celltypes.len());
    let mut fallback_celltypes = Vec::new();
    for celltype in &meta.celltypes {
        let ranked = de_scores(expr, &global, celltype)?;
        let subnet = extract_subnetwork(&global, &ranked, k, n_max)?;
        if subnet.fallback {
            fallback_celltypes.push(celltype.clone());
        }
        subnets.push(subnet);
    }
    let net = MultiScaleNetwork::assemble(global, subnets, meta);
    Ok(BuildOutcome { net, fallback_celltypes })
}
