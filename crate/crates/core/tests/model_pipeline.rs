//! End-to-end checks of the forward pass and training loop on small
//! planted instances.

use ctxppi_core::contextualize::build_network;
use ctxppi_core::graph::MultiScaleNetwork;
use ctxppi_core::model::{
    forward, forward_traced, AblationMode, ForwardOptions, ModelDims, ModelParams,
};
use ctxppi_core::synth::{generate, SynthSpec};
use ctxppi_core::train::{train, TrainConfig, TrainError};

fn tiny_spec() -> SynthSpec {
    SynthSpec {
        tissues: 2,
        tissue_branching: 1,
        celltypes_per_tissue: 1,
        proteins_per_celltype: 4,
        marker_fraction: 0.5,
        intra_edge_prob: 0.9,
        cross_edge_prob: 0.05,
        diseases: 1,
        celltypes_per_disease: 1,
        genes_per_disease: 2,
        seed: 13,
        ..SynthSpec::default()
    }
}

fn tiny_net(seed: u64) -> MultiScaleNetwork {
    let spec = SynthSpec { seed, ..tiny_spec() };
    let out = generate(&spec).unwrap();
    let built = build_network(
        out.global,
        &out.expression,
        out.meta,
        spec.markers_per_celltype(),
        20,
    )
    .unwrap();
    let report = built.net.validate();
    assert!(report.is_empty(), "tiny net should validate:\n{report}");
    built.net
}

fn tiny_dims() -> ModelDims {
    ModelDims { feature_dim: 6, hidden_dim: 8, heads: 2 }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        layers: 2,
        epochs: 5,
        seed: 3,
        dims: tiny_dims(),
        k_top: 2,
        n_max: 20,
        ..TrainConfig::default()
    }
}

#[test]
fn forward_produces_hidden_dim_embeddings_in_every_mode() {
    let net = tiny_net(13);
    let dims = tiny_dims();
    for mode in AblationMode::ALL {
        let params = ModelParams::init(&net, mode, dims, 2, 5);
        let table = forward(&net, &params, mode, 2).unwrap();
        assert!(!table.is_empty());
        for (_, v) in table.iter() {
            assert_eq!(v.len(), dims.hidden_dim, "mode {mode}");
            assert!(v.iter().all(|x| x.is_finite()));
        }
        let expected_nodes = if mode == AblationMode::Global {
            net.global.len()
        } else {
            net.index().len()
        };
        assert_eq!(table.len(), expected_nodes, "mode {mode}");
    }
}

#[test]
fn full_scale_dims_give_128_dim_embeddings() {
    // Full-scale layout: 2048 feature rows, 128 = 8 x 16 hidden.
    let net = tiny_net(13);
    let dims = ModelDims::default();
    assert_eq!((dims.feature_dim, dims.hidden_dim, dims.heads), (2048, 128, 8));
    for mode in [AblationMode::Full, AblationMode::Global] {
        let params = ModelParams::init(&net, mode, dims, 2, 1);
        let table = forward(&net, &params, mode, 2).unwrap();
        for (key, v) in table.iter() {
            assert_eq!(v.len(), 128, "{key:?} in {mode}");
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let net = tiny_net(13);
    let params = ModelParams::init(&net, AblationMode::Full, tiny_dims(), 2, 5);
    let a = forward(&net, &params, AblationMode::Full, 2).unwrap();
    let b = forward(&net, &params, AblationMode::Full, 2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn no_mg_matches_identity_down_pool_bit_for_bit() {
    let net = tiny_net(13);
    let params = ModelParams::init(&net, AblationMode::Full, tiny_dims(), 2, 5);
    let forced = forward_traced(
        &net,
        &params,
        AblationMode::Full,
        2,
        &ForwardOptions { force_identity_down_pool: true, ..Default::default() },
    )
    .unwrap()
    .0;
    let no_mg = forward(&net, &params, AblationMode::NoMg, 2).unwrap();
    for ((k1, v1), (k2, v2)) in forced.iter().zip(no_mg.iter()) {
        assert_eq!(k1, k2);
        assert_eq!(v1, v2, "{k1:?} differs");
    }
}

#[test]
fn attention_rows_are_stochastic_vectors() {
    let net = tiny_net(21);
    let params = ModelParams::init(&net, AblationMode::Full, tiny_dims(), 2, 5);
    let (_, trace) = forward_traced(
        &net,
        &params,
        AblationMode::Full,
        2,
        &ForwardOptions { collect_trace: true, ..Default::default() },
    )
    .unwrap();
    assert!(!trace.attention_rows.is_empty());
    for (label, m) in &trace.attention_rows {
        for i in 0..m.rows() {
            let row = m.row(i);
            assert!(row.iter().all(|&w| w >= 0.0), "{label} row {i} negative");
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9, "{label} row {i} sums to {sum}");
        }
    }
}

#[test]
fn training_decreases_loss_and_is_deterministic() {
    let net = tiny_net(13);
    let cfg = TrainConfig { epochs: 40, ..tiny_config() };
    let out1 = train(&net, &cfg).unwrap();
    let out2 = train(&net, &cfg).unwrap();
    assert_eq!(out1.history, out2.history, "same seed, same history");
    assert_eq!(out1.embeddings, out2.embeddings, "same seed, same embeddings");
    let first = out1.history.epochs.first().unwrap().total_loss;
    let last = out1.history.epochs.last().unwrap().total_loss;
    assert!(last < first, "loss should decrease: {first} -> {last}");
    assert!(out1.history.epochs.iter().all(|e| {
        e.link_loss >= 0.0 && e.center_loss >= 0.0 && e.total_loss.is_finite()
    }));
}

#[test]
fn zero_epochs_returns_initialization() {
    let net = tiny_net(13);
    let cfg = TrainConfig { epochs: 0, ..tiny_config() };
    let out = train(&net, &cfg).unwrap();
    assert!(out.history.epochs.is_empty());
    let params = ModelParams::init(&net, cfg.ablation, cfg.dims, cfg.layers, cfg.seed);
    assert_eq!(out.params, params);
    let table = forward(&net, &params, cfg.ablation, cfg.layers).unwrap();
    assert_eq!(out.embeddings, table);
}

#[test]
fn no_proto_zeroes_center_gradients_and_total_equals_link() {
    let net = tiny_net(13);
    let cfg = TrainConfig { ablation: AblationMode::NoProto, epochs: 10, ..tiny_config() };
    let out = train(&net, &cfg).unwrap();
    for e in &out.history.epochs {
        assert_eq!(e.total_loss, e.link_loss);
    }
    // Centers never move from their zero initialization.
    let centers = out.params.centers.as_ref().unwrap();
    assert!(centers.value.data().iter().all(|&v| v == 0.0));
}

#[test]
fn poisoned_parameters_abort_with_diagnostic() {
    let net = tiny_net(13);
    let cfg = TrainConfig { epochs: 3, ..tiny_config() };
    let mut params = ModelParams::init(&net, cfg.ablation, cfg.dims, cfg.layers, cfg.seed);
    params.proj.value.set(0, 0, f64::NAN);
    let err = ctxppi_core::train::train_with_params(&net, &cfg, params).unwrap_err();
    match err {
        TrainError::NonFinite { epoch, tensor } => {
            assert_eq!(epoch, 1);
            assert!(tensor.contains("proj"), "diagnostic should name proj, got {tensor}");
        }
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn single_node_subnetwork_composes_singleton_cases() {
    // One protein, one cell type, one tissue, L = 1, no_mg: the forward pass
    // reduces to a chain of singleton operations, recomposed here from the
    // public building blocks.
    use ctxppi_core::graph::{CellTypeSubnetwork, GlobalPpi, MetaGraph};
    use ctxppi_core::model::{
        init_celltype, init_tissue, node_attention, register_params, up_pool, EmbedKey,
    };
    use ctxppi_core::tape::{Mask, Tape};

    let global = GlobalPpi::new(vec!["p".into()], vec![]);
    let meta = MetaGraph::new(
        vec!["ct".into()],
        vec!["t".into()],
        vec![],
        vec![(0, 0)],
        vec![],
    );
    let subnets = vec![CellTypeSubnetwork {
        celltype_id: "ct".into(),
        members: vec![0],
        edges: vec![],
        de_weight: vec![1.0],
        fallback: false,
    }];
    let net = MultiScaleNetwork::assemble(global, subnets, meta);
    assert!(net.validate().is_empty());

    let dims = ModelDims { feature_dim: 4, hidden_dim: 4, heads: 2 };
    let params = ModelParams::init(&net, AblationMode::NoMg, dims, 1, 3);
    let table = forward(&net, &params, AblationMode::NoMg, 1).unwrap();

    let tape = Tape::new();
    let pvars = register_params(&tape, &params);
    let one = Mask::all_true(1, 1);
    // Layer 0: project, self-attend, derive cell type and tissue rows.
    let h0 = pvars.features.matmul(pvars.proj).unwrap();
    let h0 = node_attention(&tape, h0, &one, &pvars.layer0_pp).unwrap().z;
    let ct0 = init_celltype(h0, &[1.0]).unwrap();
    let t0 = init_tissue(&[ct0]).unwrap();
    // Layer 1: pool, meta attention over singleton sets, protein attention;
    // down-pooling skipped under no_mg.
    let meta_vars = pvars.layers[0].meta.as_ref().unwrap();
    let pooled = up_pool(&tape, ct0, h0, pvars.pool[0]).unwrap();
    assert_eq!(pooled.member_weights.value().scalar(), 1.0);
    let z_cci = node_attention(&tape, pooled.h_celltype, &one, &meta_vars.cci).unwrap().z;
    let combined = ctxppi_core::tape::Var::concat_rows(&[pooled.h_celltype, t0]).unwrap();
    let ct_mask = Mask::from_fn(2, 2, |_, _| true); // membership edge + self loops
    let z_ct = node_attention(&tape, combined, &ct_mask, &meta_vars.ct).unwrap().z;
    let z_tt = node_attention(&tape, t0, &one, &meta_vars.tt).unwrap().z;
    let fused_ct = ctxppi_core::model::semantic_attention(
        &[z_cci, z_ct.gather_rows(&[0]).unwrap()],
        &meta_vars.sem,
    )
    .unwrap();
    let fused_t = ctxppi_core::model::semantic_attention(
        &[z_ct.gather_rows(&[1]).unwrap(), z_tt],
        &meta_vars.sem,
    )
    .unwrap();
    let h1 = node_attention(&tape, h0, &one, &pvars.layers[0].pp).unwrap().z;

    let expect = |key: EmbedKey, var: ctxppi_core::tape::Var| {
        let got = table.get(&key).unwrap();
        let want = var.value();
        for (a, b) in got.iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-14, "{key:?}: {a} vs {b}");
        }
    };
    expect(EmbedKey::Protein { gene: "p".into(), context: Some("ct".into()) }, h1);
    expect(EmbedKey::CellType("ct".into()), fused_ct.h);
    expect(EmbedKey::Tissue("t".into()), fused_t.h);
}

#[test]
fn centers_train_in_their_own_learning_rate_group() {
    // Adam's first step per coordinate is close to the learning rate
    // wherever the gradient is nonzero, so one epoch separates the groups.
    let net = tiny_net(13);
    let cfg = TrainConfig {
        epochs: 1,
        center_weight: 0.5,
        lr_main: 0.001,
        lr_center: 0.01,
        ..tiny_config()
    };
    let init = ModelParams::init(&net, cfg.ablation, cfg.dims, cfg.layers, cfg.seed);
    let out = train(&net, &cfg).unwrap();
    let center_step = out
        .params
        .centers
        .as_ref()
        .unwrap()
        .value
        .data()
        .iter()
        .zip(init.centers.as_ref().unwrap().value.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let proj_step = out
        .params
        .proj
        .value
        .data()
        .iter()
        .zip(init.proj.value.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!((center_step - cfg.lr_center).abs() < cfg.lr_center * 0.2, "center step {center_step}");
    assert!((proj_step - cfg.lr_main).abs() < cfg.lr_main * 0.2, "main step {proj_step}");
}

#[test]
fn automorphic_nodes_get_identical_embeddings() {
    // Two cell types with mirrored two-protein subnetworks, one tissue, and
    // tied features/weights: swapping the subnetworks is an automorphism, so
    // corresponding nodes must receive identical embeddings.
    use ctxppi_core::graph::{CellTypeSubnetwork, GlobalPpi, MetaGraph};
    let global = GlobalPpi::new(
        vec!["a0".into(), "a1".into(), "b0".into(), "b1".into()],
        vec![(0, 1), (2, 3)],
    );
    let meta = MetaGraph::new(
        vec!["ctA".into(), "ctB".into()],
        vec!["t".into()],
        vec![(0, 1)],
        vec![(0, 0), (1, 0)],
        vec![],
    );
    let subnets = vec![
        CellTypeSubnetwork {
            celltype_id: "ctA".into(),
            members: vec![0, 1],
            edges: vec![(0, 1)],
            de_weight: vec![0.75, 0.25],
            fallback: false,
        },
        CellTypeSubnetwork {
            celltype_id: "ctB".into(),
            members: vec![2, 3],
            edges: vec![(2, 3)],
            de_weight: vec![0.75, 0.25],
            fallback: false,
        },
    ];
    let net = MultiScaleNetwork::assemble(global, subnets, meta);
    assert!(net.validate().is_empty());

    let dims = ModelDims { feature_dim: 4, hidden_dim: 4, heads: 2 };
    let mut params = ModelParams::init(&net, AblationMode::Full, dims, 2, 9);
    // Tie the per-cell-type pooling vectors and the feature rows of the
    // corresponding protein replicas.
    let pool0 = params.pool[0].value.clone();
    params.pool[1].value = pool0;
    for i in 0..2 {
        let row: Vec<f64> = params.features.value.row(i).to_vec();
        for (j, v) in row.iter().enumerate() {
            params.features.value.set(2 + i, j, *v);
        }
    }
    let table = forward(&net, &params, AblationMode::Full, 2).unwrap();
    use ctxppi_core::model::EmbedKey;
    for (ga, gb) in [("a0", "b0"), ("a1", "b1")] {
        let ea = table
            .get(&EmbedKey::Protein { gene: ga.into(), context: Some("ctA".into()) })
            .unwrap();
        let eb = table
            .get(&EmbedKey::Protein { gene: gb.into(), context: Some("ctB".into()) })
            .unwrap();
        assert_eq!(ea, eb, "replicas {ga}/{gb} should match");
    }
    let ca = table.get(&EmbedKey::CellType("ctA".into())).unwrap();
    let cb = table.get(&EmbedKey::CellType("ctB".into())).unwrap();
    assert_eq!(ca, cb);
}
