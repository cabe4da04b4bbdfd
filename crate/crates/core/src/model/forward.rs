//! Forward-pass orchestration.

use crate::graph::MultiScaleNetwork;
use crate::matrix::Matrix;
use crate::model::attention::{
    down_pool, init_celltype, init_tissue, node_attention, semantic_attention, up_pool, PathVars,
    SemanticVars,
};
use crate::model::params::{ModelParams, PathParams};
use crate::model::{AblationMode, EmbedKey, EmbeddingTable, ModelError};
use crate::tape::{Mask, Tape, Var};

/// Precomputed per-(network, mode) structures the forward pass iterates
/// over: neighborhood masks with self-loops, member orderings, the tissue
/// initialization order, and the canonical embedding keys.
#[derive(Clone, Debug)]
pub struct ForwardPlan {
    global_shape: bool,
    /// Canonical embedding key per output row.
    pub keys: Vec<EmbedKey>,
    /// Protein rows come first in the output; this many of them.
    pub n_protein_rows: usize,
    /// Owning cell-type index per protein row (full modes only).
    pub protein_celltype: Vec<usize>,
    // Full-mode structures, aligned with the subnet list order.
    subnet_celltype: Vec<usize>,
    subnet_feature_rows: Vec<(usize, usize)>, // (offset, len) into the feature table
    subnet_masks: Vec<Mask>,
    subnet_weights: Vec<Vec<f64>>,
    /// Subnet position per cell-type index.
    celltype_subnet: Vec<usize>,
    n_celltypes: usize,
    n_tissues: usize,
    cci_mask: Mask,
    ct_mask: Mask,
    tt_mask: Mask,
    /// Tissues in children-before-parent order, with per-tissue neighbor
    /// sources: member cell types and child tissues.
    tissue_order: Vec<(usize, Vec<usize>, Vec<usize>)>,
    // Global-mode structure.
    global_mask: Mask,
}

impl ForwardPlan {
    pub fn new(net: &MultiScaleNetwork, mode: AblationMode) -> Result<Self, ModelError> {
        if mode == AblationMode::Global {
            let n = net.global.len();
            let mask = Mask::from_fn(n, n, |i, j| i == j || net.global.has_edge(i, j));
            let keys = net
                .global
                .proteins()
                .iter()
                .map(|g| EmbedKey::Protein { gene: g.clone(), context: None })
                .collect();
            return Ok(ForwardPlan {
                global_shape: true,
                keys,
                n_protein_rows: n,
                protein_celltype: Vec::new(),
                subnet_celltype: Vec::new(),
                subnet_feature_rows: Vec::new(),
                subnet_masks: Vec::new(),
                subnet_weights: Vec::new(),
                celltype_subnet: Vec::new(),
                n_celltypes: 0,
                n_tissues: 0,
                cci_mask: Mask::all_true(0, 0),
                ct_mask: Mask::all_true(0, 0),
                tt_mask: Mask::all_true(0, 0),
                tissue_order: Vec::new(),
                global_mask: mask,
            });
        }

        let n_ct = net.meta.celltypes.len();
        let n_t = net.meta.tissues.len();
        if n_ct == 0 || n_t == 0 {
            return Err(ModelError::MissingSubnetwork("<empty meta graph>".to_string()));
        }
        let mut celltype_subnet = vec![usize::MAX; n_ct];
        let mut subnet_celltype = Vec::with_capacity(net.subnets.len());
        let mut subnet_feature_rows = Vec::with_capacity(net.subnets.len());
        let mut subnet_masks = Vec::with_capacity(net.subnets.len());
        let mut subnet_weights = Vec::with_capacity(net.subnets.len());
        let mut keys = Vec::new();
        let mut protein_celltype = Vec::new();
        let mut offset = 0usize;

        for (pos, subnet) in net.subnets.iter().enumerate() {
            let c = net
                .meta
                .celltype_index(&subnet.celltype_id)
                .ok_or_else(|| ModelError::MissingSubnetwork(subnet.celltype_id.clone()))?;
            celltype_subnet[c] = pos;
            subnet_celltype.push(c);
            let m = subnet.members.len();
            subnet_feature_rows.push((offset, m));
            offset += m;
            let position_of = |p: usize| subnet.members.iter().position(|&q| q == p);
            let mut grid = vec![false; m * m];
            for i in 0..m {
                grid[i * m + i] = true;
            }
            for &(a, b) in &subnet.edges {
                if let (Some(i), Some(j)) = (position_of(a), position_of(b)) {
                    grid[i * m + j] = true;
                    grid[j * m + i] = true;
                }
            }
            subnet_masks.push(Mask::new(m, m, grid));
            subnet_weights.push(subnet.de_weight.clone());
            for &p in &subnet.members {
                keys.push(EmbedKey::Protein {
                    gene: net.global.symbol(p).to_string(),
                    context: Some(subnet.celltype_id.clone()),
                });
                protein_celltype.push(c);
            }
        }
        for (c, slot) in celltype_subnet.iter().enumerate() {
            if *slot == usize::MAX {
                return Err(ModelError::MissingSubnetwork(net.meta.celltypes[c].clone()));
            }
        }
        let n_protein_rows = offset;
        for ct in &net.meta.celltypes {
            keys.push(EmbedKey::CellType(ct.clone()));
        }
        for t in &net.meta.tissues {
            keys.push(EmbedKey::Tissue(t.clone()));
        }

        let cci_mask = Mask::from_fn(n_ct, n_ct, |i, j| {
            i == j || net.meta.cci_edges.contains(&ordered(i, j))
        });
        let ct_mask = Mask::from_fn(n_ct + n_t, n_ct + n_t, |i, j| {
            if i == j {
                true
            } else if i < n_ct && j >= n_ct {
                net.meta.membership_edges.contains(&(i, j - n_ct))
            } else if j < n_ct && i >= n_ct {
                net.meta.membership_edges.contains(&(j, i - n_ct))
            } else {
                false
            }
        });
        let tt_mask = Mask::from_fn(n_t, n_t, |i, j| {
            i == j
                || net.meta.parent_edges.contains(&(i, j))
                || net.meta.parent_edges.contains(&(j, i))
        });

        // Children-before-parent traversal of the tissue forest.
        let mut tissue_order = Vec::with_capacity(n_t);
        let mut visited = vec![false; n_t];
        let roots: Vec<usize> = (0..n_t)
            .filter(|&t| !net.meta.parent_edges.iter().any(|&(child, _)| child == t))
            .collect();
        fn visit(
            t: usize,
            net: &MultiScaleNetwork,
            visited: &mut [bool],
            order: &mut Vec<(usize, Vec<usize>, Vec<usize>)>,
        ) {
            if visited[t] {
                return;
            }
            visited[t] = true;
            let children = net.meta.children_of_tissue(t);
            for &child in &children {
                visit(child, net, visited, order);
            }
            order.push((t, net.meta.celltypes_of_tissue(t), children));
        }
        for root in roots {
            visit(root, net, &mut visited, &mut tissue_order);
        }
        // Cyclic leftovers (invalid networks) still get an order so forward
        // can fail with a clear neighbor error rather than hang.
        for (t, seen) in visited.iter().enumerate() {
            if !seen {
                tissue_order.push((t, net.meta.celltypes_of_tissue(t), Vec::new()));
            }
        }

        Ok(ForwardPlan {
            global_shape: false,
            keys,
            n_protein_rows,
            protein_celltype,
            subnet_celltype,
            subnet_feature_rows,
            subnet_masks,
            subnet_weights,
            celltype_subnet,
            n_celltypes: n_ct,
            n_tissues: n_t,
            cci_mask,
            ct_mask,
            tt_mask,
            tissue_order,
            global_mask: Mask::all_true(0, 0),
        })
    }

    pub fn is_global(&self) -> bool {
        self.global_shape
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Parameter handles registered on a tape, in the canonical order of
/// [`ModelParams::for_each`].
pub struct ParamVars<'t> {
    pub features: Var<'t>,
    pub proj: Var<'t>,
    pub layer0_pp: PathVars<'t>,
    pub layers: Vec<LayerVars<'t>>,
    pub pool: Vec<Var<'t>>,
    pub centers: Option<Var<'t>>,
    /// Every registered parameter in canonical order.
    pub all: Vec<Var<'t>>,
}

pub struct LayerVars<'t> {
    pub pp: PathVars<'t>,
    pub meta: Option<MetaVars<'t>>,
}

pub struct MetaVars<'t> {
    pub cci: PathVars<'t>,
    pub ct: PathVars<'t>,
    pub tt: PathVars<'t>,
    pub sem: SemanticVars<'t>,
}

fn register_path<'t>(tape: &'t Tape, path: &PathParams, all: &mut Vec<Var<'t>>) -> PathVars<'t> {
    let transforms: Vec<Var<'t>> =
        path.transforms.iter().map(|p| tape.param(p.value.clone(), p.name.clone())).collect();
    let attn: Vec<Var<'t>> =
        path.attn.iter().map(|p| tape.param(p.value.clone(), p.name.clone())).collect();
    all.extend(transforms.iter().copied());
    all.extend(attn.iter().copied());
    PathVars { transforms, attn }
}

/// Registers all parameters as gradient-carrying leaves on `tape`.
pub fn register_params<'t>(tape: &'t Tape, params: &ModelParams) -> ParamVars<'t> {
    let mut all = Vec::new();
    let features = tape.param(params.features.value.clone(), params.features.name.clone());
    all.push(features);
    let proj = tape.param(params.proj.value.clone(), params.proj.name.clone());
    all.push(proj);
    let layer0_pp = register_path(tape, &params.layer0_pp, &mut all);
    let layers = params
        .layers
        .iter()
        .map(|layer| LayerVars {
            pp: register_path(tape, &layer.pp, &mut all),
            meta: layer.meta.as_ref().map(|meta| {
                let cci = register_path(tape, &meta.cci, &mut all);
                let ct = register_path(tape, &meta.ct, &mut all);
                let tt = register_path(tape, &meta.tt, &mut all);
                let w = tape.param(meta.sem.w.value.clone(), meta.sem.w.name.clone());
                let b = tape.param(meta.sem.b.value.clone(), meta.sem.b.name.clone());
                let q = tape.param(meta.sem.q.value.clone(), meta.sem.q.name.clone());
                all.push(w);
                all.push(b);
                all.push(q);
                MetaVars { cci, ct, tt, sem: SemanticVars { w, b, q } }
            }),
        })
        .collect();
    let pool: Vec<Var<'t>> =
        params.pool.iter().map(|p| tape.param(p.value.clone(), p.name.clone())).collect();
    all.extend(pool.iter().copied());
    let centers = params
        .centers
        .as_ref()
        .map(|c| tape.param(c.value.clone(), c.name.clone()));
    if let Some(c) = centers {
        all.push(c);
    }
    ParamVars { features, proj, layer0_pp, layers, pool, centers, all }
}

/// Knobs for a forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Capture attention coefficient values into the trace.
    pub collect_trace: bool,
    /// Replace down-pooling with the identity even outside `no_mg` mode
    /// (ablation-contract experiments).
    pub force_identity_down_pool: bool,
}

/// Captured attention coefficients: every row of every captured matrix is a
/// probability vector over its neighborhood.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    /// (label, coefficients) for node-level heads, semantic fusions, and
    /// pooling weights.
    pub attention_rows: Vec<(String, Matrix)>,
    /// (cell type name-ish label, member weights) per layer, exposing which
    /// proteins drive each cell-type update.
    pub pool_weights: Vec<(String, Vec<f64>)>,
}

/// Live output of a forward pass on a tape.
pub struct ForwardPass<'t> {
    /// All embeddings stacked, rows in canonical key order.
    pub h_all: Var<'t>,
    pub trace: ForwardTrace,
}

/// Runs the forward pipeline on `tape`, consuming `layers` of the
/// registered parameter stack.
pub fn run_forward<'t>(
    tape: &'t Tape,
    plan: &ForwardPlan,
    pvars: &ParamVars<'t>,
    mode: AblationMode,
    layers: usize,
    opts: &ForwardOptions,
) -> Result<ForwardPass<'t>, ModelError> {
    assert!(layers >= 1, "forward needs at least one layer");
    if (mode == AblationMode::Global) != plan.is_global() {
        return Err(ModelError::ModeShapeMismatch {
            params: if plan.is_global() { "global" } else { "contextual" },
            requested: mode,
        });
    }
    if layers > pvars.layers.len() {
        return Err(ModelError::LayersExceedParams {
            requested: layers,
            available: pvars.layers.len(),
        });
    }
    let mut trace = ForwardTrace::default();
    let grab = |trace: &mut ForwardTrace, label: String, var: Var<'t>, on: bool| {
        if on {
            trace.attention_rows.push((label, var.value()));
        }
    };

    if plan.is_global() {
        let projected = pvars.features.matmul(pvars.proj)?;
        let attn = node_attention(tape, projected, &plan.global_mask, &pvars.layer0_pp)?;
        for (k, w) in attn.head_weights.iter().enumerate() {
            grab(&mut trace, format!("layer0.pp.head{k}"), *w, opts.collect_trace);
        }
        let mut h = attn.z;
        for (l, layer) in pvars.layers.iter().take(layers).enumerate() {
            let attn = node_attention(tape, h, &plan.global_mask, &layer.pp)?;
            for (k, w) in attn.head_weights.iter().enumerate() {
                grab(&mut trace, format!("layer{}.pp.head{k}", l + 1), *w, opts.collect_trace);
            }
            h = attn.z;
        }
        return Ok(ForwardPass { h_all: h, trace });
    }

    let n_ct = plan.n_celltypes;
    let n_t = plan.n_tissues;
    let apply_down =
        mode != AblationMode::NoMg && !opts.force_identity_down_pool;

    // Layer 0: project features, attend within each subnetwork.
    let mut subnet_h: Vec<Var<'t>> = Vec::with_capacity(plan.subnet_celltype.len());
    for (pos, &(offset, len)) in plan.subnet_feature_rows.iter().enumerate() {
        let rows: Vec<usize> = (offset..offset + len).collect();
        let feats = pvars.features.gather_rows(&rows)?;
        let h0 = feats.matmul(pvars.proj)?;
        let attn = node_attention(tape, h0, &plan.subnet_masks[pos], &pvars.layer0_pp)?;
        for (k, w) in attn.head_weights.iter().enumerate() {
            grab(
                &mut trace,
                format!("layer0.pp.subnet{}.head{k}", plan.subnet_celltype[pos]),
                *w,
                opts.collect_trace,
            );
        }
        subnet_h.push(attn.z);
    }

    // Layer 0: derived cell-type and tissue embeddings.
    let mut celltype_rows: Vec<Var<'t>> = Vec::with_capacity(n_ct);
    for c in 0..n_ct {
        let pos = plan.celltype_subnet[c];
        celltype_rows.push(init_celltype(subnet_h[pos], &plan.subnet_weights[pos])?);
    }
    let mut celltype_h = Var::concat_rows(&celltype_rows)?;

    let mut tissue_rows: Vec<Option<Var<'t>>> = vec![None; n_t];
    for (t, member_cts, children) in &plan.tissue_order {
        let mut neighbors: Vec<Var<'t>> = Vec::new();
        for &c in member_cts {
            neighbors.push(celltype_rows[c]);
        }
        for &child in children {
            neighbors.push(tissue_rows[child].expect("children precede parents"));
        }
        tissue_rows[*t] = Some(init_tissue(&neighbors)?);
    }
    let tissue_rows: Vec<Var<'t>> =
        tissue_rows.into_iter().map(|r| r.expect("every tissue initialized")).collect();
    let mut tissue_h = Var::concat_rows(&tissue_rows)?;

    // Propagation layers.
    for (l, layer) in pvars.layers.iter().take(layers).enumerate() {
        let lnum = l + 1;
        let meta = layer.meta.as_ref().expect("contextual params carry meta attention");

        // (a) Up-pool members into cell types.
        let mut pooled_rows = Vec::with_capacity(n_ct);
        let mut gammas = Vec::with_capacity(n_ct);
        for c in 0..n_ct {
            let pos = plan.celltype_subnet[c];
            let h_c = celltype_h.gather_rows(&[c])?;
            let up = up_pool(tape, h_c, subnet_h[pos], pvars.pool[c])?;
            grab(
                &mut trace,
                format!("layer{lnum}.pool.ct{c}"),
                up.member_weights,
                opts.collect_trace,
            );
            if opts.collect_trace {
                trace
                    .pool_weights
                    .push((format!("layer{lnum}.ct{c}"), up.member_weights.value().data().to_vec()));
            }
            pooled_rows.push(up.h_celltype);
            gammas.push(up.member_weights);
        }
        let celltype_pooled = Var::concat_rows(&pooled_rows)?;

        // (b) Meta-graph attention for cell types and tissues.
        let cci = node_attention(tape, celltype_pooled, &plan.cci_mask, &meta.cci)?;
        let combined = Var::concat_rows(&[celltype_pooled, tissue_h])?;
        let ct = node_attention(tape, combined, &plan.ct_mask, &meta.ct)?;
        let tt = node_attention(tape, tissue_h, &plan.tt_mask, &meta.tt)?;
        for (label, attn) in
            [("cci", &cci), ("ct", &ct), ("tt", &tt)]
        {
            for (k, w) in attn.head_weights.iter().enumerate() {
                grab(&mut trace, format!("layer{lnum}.{label}.head{k}"), *w, opts.collect_trace);
            }
        }
        let ct_rows: Vec<usize> = (0..n_ct).collect();
        let t_rows: Vec<usize> = (n_ct..n_ct + n_t).collect();
        let fused_ct =
            semantic_attention(&[cci.z, ct.z.gather_rows(&ct_rows)?], &meta.sem)?;
        grab(
            &mut trace,
            format!("layer{lnum}.sem.celltypes"),
            fused_ct.path_weights,
            opts.collect_trace,
        );
        let fused_t =
            semantic_attention(&[ct.z.gather_rows(&t_rows)?, tt.z], &meta.sem)?;
        grab(
            &mut trace,
            format!("layer{lnum}.sem.tissues"),
            fused_t.path_weights,
            opts.collect_trace,
        );
        celltype_h = fused_ct.h;
        tissue_h = fused_t.h;

        // (c) Protein attention within each subnetwork.
        let mut new_subnet_h = Vec::with_capacity(subnet_h.len());
        for (pos, h_prev) in subnet_h.iter().enumerate() {
            let attn = node_attention(tape, *h_prev, &plan.subnet_masks[pos], &layer.pp)?;
            for (k, w) in attn.head_weights.iter().enumerate() {
                grab(
                    &mut trace,
                    format!("layer{lnum}.pp.subnet{}.head{k}", plan.subnet_celltype[pos]),
                    *w,
                    opts.collect_trace,
                );
            }
            new_subnet_h.push(attn.z);
        }

        // (d) Down-pool cell-type embeddings back onto members.
        if apply_down {
            for (c, gamma) in gammas.iter().enumerate() {
                let pos = plan.celltype_subnet[c];
                let h_c = celltype_h.gather_rows(&[c])?;
                new_subnet_h[pos] = down_pool(new_subnet_h[pos], h_c, *gamma)?;
            }
        }
        subnet_h = new_subnet_h;
    }

    let mut parts = subnet_h;
    parts.push(celltype_h);
    parts.push(tissue_h);
    Ok(ForwardPass { h_all: Var::concat_rows(&parts)?, trace })
}

/// One-shot forward pass producing a frozen embedding table. Validates the
/// network first.
pub fn forward(
    net: &MultiScaleNetwork,
    params: &ModelParams,
    mode: AblationMode,
    layers: usize,
) -> Result<EmbeddingTable, ModelError> {
    forward_traced(net, params, mode, layers, &ForwardOptions::default()).map(|(t, _)| t)
}

/// [`forward`] with attention-coefficient capture and forward options.
pub fn forward_traced(
    net: &MultiScaleNetwork,
    params: &ModelParams,
    mode: AblationMode,
    layers: usize,
    opts: &ForwardOptions,
) -> Result<(EmbeddingTable, ForwardTrace), ModelError> {
    let report = net.validate();
    if !report.is_empty() {
        return Err(ModelError::InvalidNetwork(report));
    }
    let plan = ForwardPlan::new(net, mode)?;
    let tape = Tape::new();
    let pvars = register_params(&tape, params);
    let pass = run_forward(&tape, &plan, &pvars, mode, layers, opts)?;
    let table = read_out(&plan, mode, &pass);
    Ok((table, pass.trace))
}

/// Copies the stacked embedding rows into a frozen table keyed by the
/// plan's canonical keys.
pub fn read_out(plan: &ForwardPlan, mode: AblationMode, pass: &ForwardPass<'_>) -> EmbeddingTable {
    pass.h_all.with_value(|h| {
        assert_eq!(h.rows(), plan.keys.len(), "one key per embedding row");
        let entries = plan
            .keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), h.row(i).to_vec()))
            .collect();
        EmbeddingTable::new(mode, entries)
    })
}
