//! File formats and persistence.
//!
//! Textual formats are line-oriented, tab-separated, and treat `#` lines as
//! comments:
//!
//! - protein edges: two symbol columns per line, undirected, deduplicated
//!   on load; the parser indexes symbols in ascending order.
//! - expression: a header row of cell-type ids, then one row per gene of
//!   `gene<TAB>mean...` with nonnegative decimal means.
//! - meta graph: `node <id> <celltype|tissue>` and
//!   `edge <src> <dst> <cci|membership|parent>` records (membership edges
//!   run cell type to tissue, parent edges child to parent).
//! - labels: `gene<TAB>celltype<TAB>disease` triples.
//! - embeddings / coordinates: a `# mode: <ablation>` header, then
//!   `id<TAB>kind<TAB>context<TAB>values...` rows with nine-significant-digit
//!   decimals for cross-run diffability.
//! - config: `key = value` lines mirroring the training configuration;
//!   unknown keys are errors.
//!
//! Bundles and manifests are JSON. All writes go through a temp file in the
//! target directory followed by a rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contextualize::ExpressionSummary;
use crate::eval::{LabelSet, LabelTriple};
use crate::graph::{GlobalPpi, MetaGraph, MultiScaleNetwork};
use crate::model::{AblationMode, EmbedKey, EmbeddingTable};
use crate::train::{TrainConfig, TrainHistory};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}: {source}")]
    Json {
        file: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Line-level parse failure, independent of the file it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseIssue {
    pub line: usize,
    pub message: String,
}

impl ParseIssue {
    fn new(line: usize, message: impl Into<String>) -> Self {
        ParseIssue { line, message: message.into() }
    }

    fn at_file(self, path: &Path) -> IoError {
        IoError::Parse {
            file: path.display().to_string(),
            line: self.line,
            message: self.message,
        }
    }
}

/// Content lines with 1-based numbers; blanks and '#' comments skipped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Nine-significant-digit decimal rendering used by embeddings,
/// coordinates, and history files.
pub fn fmt_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

// ---------------------------------------------------------------------------
// Protein edge list
// ---------------------------------------------------------------------------

pub fn parse_ppi_edges(text: &str) -> Result<GlobalPpi, ParseIssue> {
    let mut symbols: Vec<String> = Vec::new();
    let mut raw_edges: Vec<(String, String)> = Vec::new();
    for (line_no, line) in content_lines(text) {
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(ParseIssue::new(
                line_no,
                format!("expected two tab-separated symbols, got '{line}'"),
            ));
        };
        if a.is_empty() || b.is_empty() {
            return Err(ParseIssue::new(line_no, "empty protein symbol"));
        }
        symbols.push(a.to_string());
        symbols.push(b.to_string());
        if a == b {
            continue; // self-loop edges dropped on load; the symbol stays
        }
        raw_edges.push((a.to_string(), b.to_string()));
    }
    symbols.sort();
    symbols.dedup();
    let index: BTreeMap<&str, usize> =
        symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let edges = raw_edges
        .into_iter()
        .map(|(a, b)| (index[a.as_str()], index[b.as_str()]))
        .collect();
    Ok(GlobalPpi::new(symbols, edges))
}

pub fn serialize_ppi_edges(global: &GlobalPpi) -> String {
    let mut out = String::new();
    let mut edges: Vec<(&str, &str)> = global
        .edges()
        .iter()
        .map(|&(a, b)| {
            let (sa, sb) = (global.symbol(a), global.symbol(b));
            if sa < sb {
                (sa, sb)
            } else {
                (sb, sa)
            }
        })
        .collect();
    edges.sort();
    for (a, b) in edges {
        out.push_str(a);
        out.push('\t');
        out.push_str(b);
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Expression summary
// ---------------------------------------------------------------------------

pub fn parse_expression(text: &str) -> Result<ExpressionSummary, ParseIssue> {
    let mut lines = content_lines(text);
    let Some((header_no, header)) = lines.next() else {
        return Err(ParseIssue::new(1, "empty expression file"));
    };
    let celltypes: Vec<String> = header.split('\t').map(str::to_string).collect();
    if celltypes.iter().any(String::is_empty) {
        return Err(ParseIssue::new(header_no, "empty cell type id in header"));
    }
    {
        let mut seen = celltypes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != celltypes.len() {
            return Err(ParseIssue::new(header_no, "duplicate cell type ids in header"));
        }
    }
    let mut genes = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in lines {
        let mut parts = line.split('\t');
        let gene = parts.next().expect("split yields at least one part");
        if gene.is_empty() {
            return Err(ParseIssue::new(line_no, "empty gene symbol"));
        }
        let values: Vec<&str> = parts.collect();
        if values.len() != celltypes.len() {
            return Err(ParseIssue::new(
                line_no,
                format!("expected {} values for gene '{gene}', got {}", celltypes.len(), values.len()),
            ));
        }
        let mut row = Vec::with_capacity(values.len());
        for v in values {
            let parsed: f64 = v.parse().map_err(|_| {
                ParseIssue::new(line_no, format!("'{v}' is not a decimal number"))
            })?;
            if !parsed.is_finite() || parsed < 0.0 {
                return Err(ParseIssue::new(
                    line_no,
                    format!("mean expression must be finite and nonnegative, got {v}"),
                ));
            }
            row.push(parsed);
        }
        if genes.contains(&gene.to_string()) {
            return Err(ParseIssue::new(line_no, format!("duplicate gene '{gene}'")));
        }
        genes.push(gene.to_string());
        columns.push(row);
    }
    // Stored row-per-celltype; the file is row-per-gene.
    let mean_expr = (0..celltypes.len())
        .map(|c| columns.iter().map(|row| row[c]).collect())
        .collect();
    Ok(ExpressionSummary { genes, celltypes, mean_expr })
}

pub fn serialize_expression(expr: &ExpressionSummary) -> String {
    let mut out = expr.celltypes.join("\t");
    out.push('\n');
    for (g, gene) in expr.genes.iter().enumerate() {
        out.push_str(gene);
        for c in 0..expr.celltypes.len() {
            out.push('\t');
            out.push_str(&expr.mean_expr[c][g].to_string());
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Meta graph
// ---------------------------------------------------------------------------

pub fn parse_metagraph(text: &str) -> Result<MetaGraph, ParseIssue> {
    let mut celltypes: Vec<String> = Vec::new();
    let mut tissues: Vec<String> = Vec::new();
    let mut edges: Vec<(usize, String, String, String)> = Vec::new();
    for (line_no, line) in content_lines(text) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["node", id, "celltype"] => celltypes.push(id.to_string()),
            ["node", id, "tissue"] => tissues.push(id.to_string()),
            ["node", _, kind] => {
                return Err(ParseIssue::new(
                    line_no,
                    format!("unknown node kind '{kind}' (expected celltype or tissue)"),
                ))
            }
            ["edge", src, dst, kind] => {
                edges.push((line_no, src.to_string(), dst.to_string(), kind.to_string()))
            }
            _ => {
                return Err(ParseIssue::new(
                    line_no,
                    format!("expected 'node <id> <kind>' or 'edge <src> <dst> <kind>', got '{line}'"),
                ))
            }
        }
    }
    for (name, list) in [("celltype", &celltypes), ("tissue", &tissues)] {
        let mut sorted = list.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != list.len() {
            return Err(ParseIssue::new(0, format!("duplicate {name} node id")));
        }
    }
    let ct_index = |id: &str| celltypes.iter().position(|c| c == id);
    let t_index = |id: &str| tissues.iter().position(|t| t == id);
    let mut cci = Vec::new();
    let mut membership = Vec::new();
    let mut parent = Vec::new();
    for (line_no, src, dst, kind) in edges {
        match kind.as_str() {
            "cci" => match (ct_index(&src), ct_index(&dst)) {
                (Some(a), Some(b)) => cci.push((a, b)),
                _ => {
                    return Err(ParseIssue::new(
                        line_no,
                        format!("cci edge references unknown cell type ('{src}', '{dst}')"),
                    ))
                }
            },
            "membership" => match (ct_index(&src), t_index(&dst)) {
                (Some(c), Some(t)) => membership.push((c, t)),
                _ => {
                    return Err(ParseIssue::new(
                        line_no,
                        format!("membership edge must run celltype to tissue ('{src}', '{dst}')"),
                    ))
                }
            },
            "parent" => match (t_index(&src), t_index(&dst)) {
                (Some(a), Some(b)) => parent.push((a, b)),
                _ => {
                    return Err(ParseIssue::new(
                        line_no,
                        format!("parent edge references unknown tissue ('{src}', '{dst}')"),
                    ))
                }
            },
            other => {
                return Err(ParseIssue::new(line_no, format!("unknown edge kind '{other}'")))
            }
        }
    }
    Ok(MetaGraph::new(celltypes, tissues, cci, membership, parent))
}

pub fn serialize_metagraph(meta: &MetaGraph) -> String {
    let mut out = String::new();
    for ct in &meta.celltypes {
        out.push_str(&format!("node {ct} celltype\n"));
    }
    for t in &meta.tissues {
        out.push_str(&format!("node {t} tissue\n"));
    }
    for &(a, b) in &meta.cci_edges {
        out.push_str(&format!("edge {} {} cci\n", meta.celltypes[a], meta.celltypes[b]));
    }
    for &(c, t) in &meta.membership_edges {
        out.push_str(&format!("edge {} {} membership\n", meta.celltypes[c], meta.tissues[t]));
    }
    for &(child, parent) in &meta.parent_edges {
        out.push_str(&format!("edge {} {} parent\n", meta.tissues[child], meta.tissues[parent]));
    }
    out
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

pub fn parse_labels(text: &str) -> Result<LabelSet, ParseIssue> {
    let mut triples = Vec::new();
    for (line_no, line) in content_lines(text) {
        let parts: Vec<&str> = line.split('\t').collect();
        let [gene, celltype, disease] = parts.as_slice() else {
            return Err(ParseIssue::new(
                line_no,
                format!("expected gene<TAB>celltype<TAB>disease, got '{line}'"),
            ));
        };
        if gene.is_empty() || celltype.is_empty() || disease.is_empty() {
            return Err(ParseIssue::new(line_no, "empty field in label triple"));
        }
        triples.push(LabelTriple {
            gene: gene.to_string(),
            celltype: celltype.to_string(),
            disease: disease.to_string(),
        });
    }
    Ok(LabelSet::new(triples))
}

pub fn serialize_labels(labels: &LabelSet) -> String {
    let mut out = String::new();
    for t in labels.triples() {
        out.push_str(&format!("{}\t{}\t{}\n", t.gene, t.celltype, t.disease));
    }
    out
}

// ---------------------------------------------------------------------------
// Embeddings and coordinates
// ---------------------------------------------------------------------------

fn key_columns(key: &EmbedKey) -> (String, &'static str, String) {
    match key {
        EmbedKey::Protein { gene, context } => (
            gene.clone(),
            "protein",
            context.clone().unwrap_or_else(|| "-".to_string()),
        ),
        EmbedKey::CellType(id) => (id.clone(), "celltype", "-".to_string()),
        EmbedKey::Tissue(id) => (id.clone(), "tissue", "-".to_string()),
    }
}

fn key_from_columns(
    line_no: usize,
    id: &str,
    kind: &str,
    context: &str,
) -> Result<EmbedKey, ParseIssue> {
    match kind {
        "protein" => Ok(EmbedKey::Protein {
            gene: id.to_string(),
            context: (context != "-").then(|| context.to_string()),
        }),
        "celltype" => Ok(EmbedKey::CellType(id.to_string())),
        "tissue" => Ok(EmbedKey::Tissue(id.to_string())),
        other => Err(ParseIssue::new(line_no, format!("unknown node kind '{other}'"))),
    }
}

pub fn serialize_embeddings(table: &EmbeddingTable) -> String {
    let mut out = format!("# mode: {}\n", table.mode());
    for (key, values) in table.iter() {
        let (id, kind, context) = key_columns(key);
        out.push_str(&id);
        out.push('\t');
        out.push_str(kind);
        out.push('\t');
        out.push_str(&context);
        for v in values {
            out.push('\t');
            out.push_str(&fmt_sig9(*v));
        }
        out.push('\n');
    }
    out
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable, ParseIssue> {
    let mode = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("# mode:").map(|m| m.trim().to_string()))
        .ok_or_else(|| ParseIssue::new(1, "missing '# mode:' header"))?;
    let mode: AblationMode =
        mode.parse().map_err(|e: String| ParseIssue::new(1, e))?;
    let mut entries = Vec::new();
    let mut dim: Option<usize> = None;
    for (line_no, line) in content_lines(text) {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() < 4 {
            return Err(ParseIssue::new(
                line_no,
                "expected id, kind, context, and at least one value",
            ));
        }
        let key = key_from_columns(line_no, parts[0], parts[1], parts[2])?;
        let values: Vec<f64> = parts[3..]
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| ParseIssue::new(line_no, format!("'{v}' is not a decimal number")))
            })
            .collect::<Result<_, _>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(ParseIssue::new(
                    line_no,
                    format!("embedding width {} differs from {d}", values.len()),
                ))
            }
            _ => {}
        }
        entries.push((key, values));
    }
    Ok(EmbeddingTable::new(mode, entries))
}

/// 2-D coordinates export: same key columns, then x and y.
pub fn serialize_coordinates(
    table: &EmbeddingTable,
    coordinates: &[(f64, f64)],
) -> String {
    assert_eq!(table.len(), coordinates.len());
    let mut out = format!("# mode: {}\n", table.mode());
    for ((key, _), (x, y)) in table.iter().zip(coordinates) {
        let (id, kind, context) = key_columns(key);
        out.push_str(&format!("{id}\t{kind}\t{context}\t{}\t{}\n", fmt_sig9(*x), fmt_sig9(*y)));
    }
    out
}

// ---------------------------------------------------------------------------
// Training history
// ---------------------------------------------------------------------------

pub fn serialize_history(history: &TrainHistory) -> String {
    let mut out = String::from("# epoch\tlink_loss\tcenter_loss\ttotal_loss\tgrad_norm\n");
    for (i, e) in history.epochs.iter().enumerate() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            i + 1,
            fmt_sig9(e.link_loss),
            fmt_sig9(e.center_loss),
            fmt_sig9(e.total_loss),
            fmt_sig9(e.grad_norm),
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Metric reports
// ---------------------------------------------------------------------------

/// Micro-F1 table: method, k, mean, and (with at least two runs) stderr.
pub fn serialize_micro_f1(report: &crate::eval::MetricReport) -> String {
    let with_stderr = report.runs >= 2;
    let mut out = if with_stderr {
        String::from("# method\tk\tmean\tstderr\n")
    } else {
        String::from("# method\tk\tmean\n")
    };
    for row in &report.micro_f1 {
        out.push_str(&format!("{}\t{}\t{}", report.method, row.k, fmt_sig9(row.mean)));
        if with_stderr {
            out.push('\t');
            out.push_str(&fmt_sig9(row.stderr.unwrap_or(0.0)));
        }
        out.push('\n');
    }
    out
}

/// Per-label Recall@20 table: method, disease, cell type, n_total, mean,
/// and (with at least two runs) stderr.
pub fn serialize_recall(report: &crate::eval::MetricReport) -> String {
    let with_stderr = report.runs >= 2;
    let mut out = if with_stderr {
        String::from("# method\tdisease\tcelltype\tn_total\tmean\tstderr\n")
    } else {
        String::from("# method\tdisease\tcelltype\tn_total\tmean\n")
    };
    for row in &report.recall {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}",
            report.method,
            row.disease,
            row.celltype,
            row.n_total,
            fmt_sig9(row.mean)
        ));
        if with_stderr {
            out.push('\t');
            out.push_str(&fmt_sig9(row.stderr.unwrap_or(0.0)));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

/// Applies `key = value` lines onto a base configuration. Unknown keys are
/// errors (typo protection).
pub fn parse_config(text: &str, base: TrainConfig) -> Result<TrainConfig, ParseIssue> {
    let mut cfg = base;
    for (line_no, line) in content_lines(text) {
        let Some((key, value)) = line.split_once('=') else {
            return Err(ParseIssue::new(line_no, format!("expected 'key = value', got '{line}'")));
        };
        let key = key.trim();
        let value = value.trim();
        let bad =
            |what: &str| ParseIssue::new(line_no, format!("{key}: '{value}' is not {what}"));
        macro_rules! num {
            ($what:expr) => {
                value.parse().map_err(|_| bad($what))?
            };
        }
        match key {
            "layers" => cfg.layers = num!("a count"),
            "epochs" => cfg.epochs = num!("a count"),
            "seed" => cfg.seed = num!("an unsigned integer"),
            "center_weight" => cfg.center_weight = num!("a decimal"),
            "lr_main" => cfg.lr_main = num!("a decimal"),
            "lr_center" => cfg.lr_center = num!("a decimal"),
            "negatives_per_positive" => cfg.negatives_per_positive = num!("a count"),
            "ablation" => {
                cfg.ablation = value.parse().map_err(|e: String| ParseIssue::new(line_no, e))?
            }
            "k_top" => cfg.k_top = num!("a count"),
            "n_max" => cfg.n_max = num!("a count"),
            "adam_beta1" => cfg.adam_beta1 = num!("a decimal"),
            "adam_beta2" => cfg.adam_beta2 = num!("a decimal"),
            "adam_eps" => cfg.adam_eps = num!("a decimal"),
            "link_loss_meta_edges" => cfg.link_loss_meta_edges = num!("a boolean"),
            "feature_dim" => cfg.dims.feature_dim = num!("a count"),
            "hidden_dim" => cfg.dims.hidden_dim = num!("a count"),
            "heads" => cfg.dims.heads = num!("a count"),
            other => {
                return Err(ParseIssue::new(line_no, format!("unknown configuration key '{other}'")))
            }
        }
    }
    Ok(cfg)
}

pub fn serialize_config(cfg: &TrainConfig) -> String {
    format!(
        "layers = {}\nepochs = {}\nseed = {}\ncenter_weight = {}\nlr_main = {}\n\
         lr_center = {}\nnegatives_per_positive = {}\nablation = {}\nk_top = {}\n\
         n_max = {}\nadam_beta1 = {}\nadam_beta2 = {}\nadam_eps = {}\n\
         link_loss_meta_edges = {}\nfeature_dim = {}\nhidden_dim = {}\nheads = {}\n",
        cfg.layers,
        cfg.epochs,
        cfg.seed,
        cfg.center_weight,
        cfg.lr_main,
        cfg.lr_center,
        cfg.negatives_per_positive,
        cfg.ablation,
        cfg.k_top,
        cfg.n_max,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
        cfg.link_loss_meta_edges,
        cfg.dims.feature_dim,
        cfg.dims.hidden_dim,
        cfg.dims.heads,
    )
}

// ---------------------------------------------------------------------------
// Bundle, manifest, parameters
// ---------------------------------------------------------------------------

/// Serialized multi-scale network plus provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkBundle {
    pub network: MultiScaleNetwork,
    pub provenance: BundleProvenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleProvenance {
    /// Input file name -> sha256 of its bytes.
    pub input_digests: BTreeMap<String, String>,
    pub k_top: usize,
    pub n_max: usize,
    /// Cell types whose extraction needed the bridging fallback, and any
    /// other advisories.
    pub warnings: Vec<String>,
}

/// Reproducibility record of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: TrainConfig,
    pub effective_center_weight: f64,
    pub input_digests: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub metric_summary: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

// ---------------------------------------------------------------------------
// Filesystem plumbing
// ---------------------------------------------------------------------------

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.display().to_string(), source }
}

/// Atomic write: temp file in the destination directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(contents).map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

pub fn load_ppi_edges(path: &Path) -> Result<GlobalPpi, IoError> {
    parse_ppi_edges(&read_to_string(path)?).map_err(|i| i.at_file(path))
}

pub fn load_expression(path: &Path) -> Result<ExpressionSummary, IoError> {
    parse_expression(&read_to_string(path)?).map_err(|i| i.at_file(path))
}

pub fn load_metagraph(path: &Path) -> Result<MetaGraph, IoError> {
    parse_metagraph(&read_to_string(path)?).map_err(|i| i.at_file(path))
}

pub fn load_labels(path: &Path) -> Result<LabelSet, IoError> {
    parse_labels(&read_to_string(path)?).map_err(|i| i.at_file(path))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, IoError> {
    parse_embeddings(&read_to_string(path)?).map_err(|i| i.at_file(path))
}

pub fn load_config(path: &Path, base: TrainConfig) -> Result<TrainConfig, IoError> {
    parse_config(&read_to_string(path)?, base).map_err(|i| i.at_file(path))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let json = serde_json::to_vec_pretty(value)
        .map_err(|e| IoError::Json { file: path.display().to_string(), source: e })?;
    write_atomic(path, &json)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    serde_json::from_slice(&read_bytes(path)?)
        .map_err(|e| IoError::Json { file: path.display().to_string(), source: e })
}
