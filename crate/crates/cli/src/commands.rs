//! Command implementations.

use std::collections::BTreeMap;
use std::path::Path;

use ctxppi_core::contextualize::build_network;
use ctxppi_core::eval::{evaluate, EvalOptions};
use ctxppi_core::io::{
    self, BundleProvenance, IoError, NetworkBundle, ParseIssue, RunManifest,
};
use ctxppi_core::model::AblationMode;
use ctxppi_core::synth::{generate, SynthSpec};
use ctxppi_core::train::{train, TrainConfig, TrainError};

use crate::{BuildArgs, CliError, EvalArgs, ProjectArgs, SynthArgs, TrainArgs};

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn digest_of(path: &Path) -> Result<String, CliError> {
    Ok(io::sha256_hex(&io::read_bytes(path)?))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Parses a generator spec file of `key = value` lines onto the defaults.
fn parse_synth_spec(text: &str, base: SynthSpec) -> Result<SynthSpec, ParseIssue> {
    let mut spec = base;
    for (line_no, raw) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let Some((key, value)) = raw.split_once('=') else {
            return Err(ParseIssue {
                line: line_no,
                message: format!("expected 'key = value', got '{raw}'"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| ParseIssue {
            line: line_no,
            message: format!("{key}: '{value}' is not {what}"),
        };
        macro_rules! num {
            ($what:expr) => {
                value.parse().map_err(|_| bad($what))?
            };
        }
        match key {
            "tissues" => spec.tissues = num!("a count"),
            "tissue_branching" => spec.tissue_branching = num!("a count"),
            "celltypes_per_tissue" => spec.celltypes_per_tissue = num!("a count"),
            "proteins_per_celltype" => spec.proteins_per_celltype = num!("a count"),
            "marker_fraction" => spec.marker_fraction = num!("a decimal"),
            "intra_edge_prob" => spec.intra_edge_prob = num!("a decimal"),
            "cross_edge_prob" => spec.cross_edge_prob = num!("a decimal"),
            "expression_base" => spec.expression_base = num!("a decimal"),
            "expression_boost" => spec.expression_boost = num!("a decimal"),
            "diseases" => spec.diseases = num!("a count"),
            "celltypes_per_disease" => spec.celltypes_per_disease = num!("a count"),
            "genes_per_disease" => spec.genes_per_disease = num!("a count"),
            "seed" => spec.seed = num!("an unsigned integer"),
            other => {
                return Err(ParseIssue {
                    line: line_no,
                    message: format!("unknown generator key '{other}'"),
                })
            }
        }
    }
    Ok(spec)
}

pub fn run_synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = io::read_to_string(path)?;
            parse_synth_spec(&text, SynthSpec::default())
                .map_err(|i| CliError::Input(format!("{}:{}: {}", path.display(), i.line, i.message)))?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let out = generate(&spec).map_err(input_err)?;
    ensure_dir(&args.out_dir)?;

    let files: [(&str, String); 5] = [
        ("ppi-edges.tsv", io::serialize_ppi_edges(&out.global)),
        ("expression.tsv", io::serialize_expression(&out.expression)),
        ("metagraph.txt", io::serialize_metagraph(&out.meta)),
        ("labels.tsv", io::serialize_labels(&out.labels)),
        ("ground-truth.tsv", {
            let mut text = String::from("# gene\tcelltype\n");
            for (gene, celltype) in &out.truth.gene_module {
                text.push_str(&format!("{gene}\t{celltype}\n"));
            }
            text
        }),
    ];
    for (name, contents) in &files {
        io::write_atomic(&args.out_dir.join(name), contents.as_bytes())?;
    }
    println!(
        "generated {} proteins, {} edges, {} cell types, {} tissues, {} label triples -> {}",
        out.global.len(),
        out.global.edges().len(),
        out.meta.celltypes.len(),
        out.meta.tissues.len(),
        out.labels.triples().len(),
        args.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// build
// ---------------------------------------------------------------------------

pub fn run_build(args: &BuildArgs) -> Result<(), CliError> {
    let global = io::load_ppi_edges(&args.ppi)?;
    let expression = io::load_expression(&args.expression)?;
    let meta = io::load_metagraph(&args.metagraph)?;

    let outcome =
        build_network(global, &expression, meta, args.k, args.n_max).map_err(input_err)?;
    let report = outcome.net.validate();
    if !report.is_empty() {
        return Err(CliError::Input(format!("network validation failed:\n{report}")));
    }

    let mut input_digests = BTreeMap::new();
    for (name, path) in
        [("ppi", &args.ppi), ("expression", &args.expression), ("metagraph", &args.metagraph)]
    {
        input_digests.insert(name.to_string(), digest_of(path)?);
    }
    let warnings: Vec<String> = outcome
        .fallback_celltypes
        .iter()
        .map(|ct| format!("subnetwork '{ct}' needed shortest-path bridging to connect"))
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }

    println!(
        "global graph: {} proteins, {} edges",
        outcome.net.global.len(),
        outcome.net.global.edges().len()
    );
    for subnet in &outcome.net.subnets {
        println!(
            "subnetwork {}: {} proteins, {} edges{}",
            subnet.celltype_id,
            subnet.members.len(),
            subnet.edges.len(),
            if subnet.fallback { " (bridged)" } else { "" }
        );
    }
    println!(
        "meta graph: {} cell types, {} tissues; contextual nodes: {}",
        outcome.net.meta.celltypes.len(),
        outcome.net.meta.tissues.len(),
        outcome.net.index().len()
    );

    let bundle = NetworkBundle {
        network: outcome.net,
        provenance: BundleProvenance {
            input_digests,
            k_top: args.k,
            n_max: args.n_max,
            warnings,
        },
    };
    io::save_json(&args.out, &bundle)?;
    println!("bundle written to {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn run_train(args: &TrainArgs) -> Result<(), CliError> {
    let bundle: NetworkBundle = io::load_json(&args.bundle)?;
    let mut cfg = match &args.config {
        Some(path) => io::load_config(path, TrainConfig::default())?,
        None => TrainConfig::default(),
    };
    if let Some(ablation) = &args.ablation {
        cfg.ablation = ablation.parse::<AblationMode>().map_err(CliError::Input)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }

    let output = train(&bundle.network, &cfg)?;
    ensure_dir(&args.out_dir)?;
    let params_path = args.out_dir.join("params.json");
    let embeddings_path = args.out_dir.join("embeddings.tsv");
    let history_path = args.out_dir.join("history.tsv");
    let manifest_path = args.out_dir.join("manifest.json");
    io::save_json(&params_path, &output.params)?;
    io::write_atomic(&embeddings_path, io::serialize_embeddings(&output.embeddings).as_bytes())?;
    io::write_atomic(&history_path, io::serialize_history(&output.history).as_bytes())?;

    let mut input_digests = BTreeMap::new();
    input_digests.insert("bundle".to_string(), digest_of(&args.bundle)?);
    if let Some(config) = &args.config {
        input_digests.insert("config".to_string(), digest_of(config)?);
    }
    let mut metric_summary = BTreeMap::new();
    if let Some(last) = output.history.epochs.last() {
        metric_summary.insert("final_link_loss".to_string(), last.link_loss);
        metric_summary.insert("final_center_loss".to_string(), last.center_loss);
        metric_summary.insert("final_total_loss".to_string(), last.total_loss);
    }
    let manifest = RunManifest {
        command: "train".to_string(),
        effective_center_weight: cfg.effective_center_weight(),
        config: cfg,
        input_digests,
        outputs: [&params_path, &embeddings_path, &history_path]
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        metric_summary,
        warnings: bundle.provenance.warnings.clone(),
    };
    io::save_json(&manifest_path, &manifest)?;
    println!(
        "trained {} epochs ({}); embeddings for {} nodes -> {}",
        output.history.epochs.len(),
        manifest.config.ablation,
        output.embeddings.len(),
        args.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn parse_ks(text: &str) -> Result<Vec<usize>, CliError> {
    let ks: Result<Vec<usize>, _> = text.split(',').map(|p| p.trim().parse::<usize>()).collect();
    let ks = ks.map_err(|_| CliError::Input(format!("--ks: '{text}' is not a comma-separated list of counts")))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::Input("--ks needs at least one nonzero count".to_string()));
    }
    Ok(ks)
}

pub fn run_eval(args: &EvalArgs) -> Result<(), CliError> {
    let table = io::load_embeddings(&args.embeddings)?;
    let labels = io::load_labels(&args.labels)?;
    let ks = parse_ks(&args.ks)?;
    let opts = EvalOptions {
        recall_k: args.recall_k.unwrap_or(ks[0]),
        ks,
        runs: args.runs.max(1),
        seed: args.seed,
        train_fraction: 0.8,
    };
    let report = evaluate(&table, &labels, &opts).map_err(input_err)?;

    ensure_dir(&args.out_dir)?;
    let f1_path = args.out_dir.join("micro_f1.tsv");
    let recall_path = args.out_dir.join("recall.tsv");
    io::write_atomic(&f1_path, io::serialize_micro_f1(&report).as_bytes())?;
    io::write_atomic(&recall_path, io::serialize_recall(&report).as_bytes())?;

    if report.skipped_queries > 0 {
        log::warn!("skipped {} unresolvable (gene, cell type) queries", report.skipped_queries);
    }
    for row in &report.micro_f1 {
        println!("micro-F1 @ k={}: {:.4}", row.k, row.mean);
    }
    println!(
        "reports ({} run{}) -> {}",
        report.runs,
        if report.runs == 1 { "" } else { "s" },
        args.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// project
// ---------------------------------------------------------------------------

pub fn run_project(args: &ProjectArgs) -> Result<(), CliError> {
    let table = io::load_embeddings(&args.embeddings)?;
    let embeddings: Vec<Vec<f64>> = table.iter().map(|(_, v)| v.to_vec()).collect();
    let projection = ctxppi_core::eval::project_2d(&embeddings).map_err(input_err)?;
    if projection.rank_deficient {
        log::warn!("fewer than two directions carry variance; trailing coordinates are zero");
    }
    io::write_atomic(
        &args.out,
        io::serialize_coordinates(&table, &projection.coordinates).as_bytes(),
    )?;
    println!("{} coordinates -> {}", projection.coordinates.len(), args.out.display());
    Ok(())
}
