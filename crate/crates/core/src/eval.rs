//! Downstream evaluation of embeddings.
//!
//! Disease-gene association triples are split by gene into train/test; a KNN
//! over L2-normalized embeddings scores diseases per query, and predictions
//! are summarized as Micro-F1 (at several neighbor counts) and per-label
//! Recall@20. Cluster purity against a planted assignment and a 2-D principal
//! component projection quantify embedding-space structure on synthetic data.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("clustering needs at least as many points ({points}) as classes ({classes})")]
    TooFewPoints { points: usize, classes: usize },
    #[error("projection needs at least two embeddings, got {0}")]
    TooFewEmbeddings(usize),
    #[error("no label triples could be resolved to embedded nodes")]
    NoResolvableLabels,
}

/// Number of top-ranked genes considered by [`recall_at_20`].
pub const RECALL_CAP: usize = 20;

// ---------------------------------------------------------------------------
// Labels and splits
// ---------------------------------------------------------------------------

/// One (gene, cell type, disease) association.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelTriple {
    pub gene: String,
    pub celltype: String,
    pub disease: String,
}

/// Deduplicated association triples. Splits are made per gene so that all of
/// a gene's triples land on the same side.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelSet {
    triples: Vec<LabelTriple>,
}

impl LabelSet {
    pub fn new(mut triples: Vec<LabelTriple>) -> Self {
        triples.sort();
        triples.dedup();
        LabelSet { triples }
    }

    pub fn triples(&self) -> &[LabelTriple] {
        &self.triples
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Distinct genes, ascending.
    pub fn genes(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.triples.iter().map(|t| t.gene.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Distinct diseases, ascending. This is the label universe predictions
    /// range over.
    pub fn diseases(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.triples.iter().map(|t| t.disease.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Seeded shuffle of the gene universe into train/test by gene.
    pub fn split_by_gene(&self, train_fraction: f64, seed: u64) -> GeneSplit {
        let mut genes = self.genes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        genes.shuffle(&mut rng);
        let n_train = ((genes.len() as f64) * train_fraction).round() as usize;
        let n_train = n_train.min(genes.len());
        let train: BTreeSet<String> = genes[..n_train].iter().cloned().collect();
        let test: BTreeSet<String> = genes[n_train..].iter().cloned().collect();
        GeneSplit { train, test }
    }

    /// Diseases of one (gene, cell type) pair.
    pub fn diseases_of(&self, gene: &str, celltype: &str) -> BTreeSet<String> {
        self.triples
            .iter()
            .filter(|t| t.gene == gene && t.celltype == celltype)
            .map(|t| t.disease.clone())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneSplit {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

// ---------------------------------------------------------------------------
// KNN scoring
// ---------------------------------------------------------------------------

/// A labeled, embedded point. `id` breaks distance ties deterministically.
#[derive(Clone, Debug)]
pub struct KnnInstance {
    pub id: usize,
    pub embedding: Vec<f64>,
    pub labels: BTreeSet<String>,
}

/// Rescales to unit L2 norm; zero vectors stay zero.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-label neighbor vote fractions for one query.
///
/// Neighbors are the `k` nearest training points by Euclidean distance
/// (callers normalize embeddings first), ties broken by ascending instance
/// id. Each label in `label_universe` scores the fraction of neighbors
/// carrying it. `k` larger than the training set is clamped with a warning.
pub fn knn_scores(
    train: &[KnnInstance],
    query: &[f64],
    k: usize,
    label_universe: &[String],
) -> BTreeMap<String, f64> {
    assert!(k >= 1, "k must be at least 1");
    assert!(!train.is_empty(), "empty training set");
    let k = if k > train.len() {
        log::warn!("knn: k = {k} exceeds {} training points; clamping", train.len());
        train.len()
    } else {
        k
    };

    // Max-heap of the current k best (largest on top for eviction).
    let mut heap: Vec<(f64, usize, usize)> = Vec::with_capacity(k + 1); // (dist, id, idx)
    for (idx, inst) in train.iter().enumerate() {
        let d = squared_distance(&inst.embedding, query);
        heap.push((d, inst.id, idx));
        heap.sort_by(|a, b| {
            a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1))
        });
        heap.truncate(k);
    }

    // Integer vote counts divided once keep the score an exact vote
    // fraction.
    let mut votes: BTreeMap<&str, usize> =
        label_universe.iter().map(|l| (l.as_str(), 0)).collect();
    for &(_, _, idx) in &heap {
        for label in &train[idx].labels {
            if let Some(slot) = votes.get_mut(label.as_str()) {
                *slot += 1;
            }
        }
    }
    votes
        .into_iter()
        .map(|(label, count)| (label.to_string(), count as f64 / k as f64))
        .collect()
}

/// Majority decision rule: labels scoring above one half, with a
/// deterministic argmax fallback (score descending, label ascending) when
/// nothing clears the threshold.
pub fn predict_labels(scores: &BTreeMap<String, f64>) -> BTreeSet<String> {
    let mut predicted: BTreeSet<String> =
        scores.iter().filter(|(_, &s)| s > 0.5).map(|(l, _)| l.clone()).collect();
    if predicted.is_empty() && !scores.is_empty() {
        let best = scores
            .iter()
            .max_by(|(la, sa), (lb, sb)| {
                sa.partial_cmp(sb).expect("finite scores").then(lb.cmp(la))
            })
            .map(|(l, _)| l.clone())
            .expect("nonempty scores");
        predicted.insert(best);
    }
    predicted
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Micro-averaged F1 over all (query, label) decisions. `None` when there
/// are no positive labels anywhere in the truth.
pub fn micro_f1(predicted: &[BTreeSet<String>], truth: &[BTreeSet<String>]) -> Option<f64> {
    assert_eq!(predicted.len(), truth.len(), "aligned query sets");
    if truth.iter().all(BTreeSet::is_empty) {
        return None;
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (pred, tru) in predicted.iter().zip(truth) {
        tp += pred.intersection(tru).count();
        fp += pred.difference(tru).count();
        fn_ += tru.difference(pred).count();
    }
    Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Fraction of held-out true genes ranked in the top 20, denominator capped
/// at 20. `ranking` is (gene, tie-break id, score); `None` for empty truth.
pub fn recall_at_20(
    ranking: &[(String, usize, f64)],
    truth: &BTreeSet<String>,
) -> Option<f64> {
    if truth.is_empty() {
        return None;
    }
    let mut sorted = ranking.to_vec();
    sorted.sort_by(|a, b| {
        b.2.partial_cmp(&a.2).expect("finite scores").then(a.1.cmp(&b.1))
    });
    let hits = sorted
        .iter()
        .take(RECALL_CAP)
        .filter(|(gene, _, _)| truth.contains(gene))
        .count();
    Some(hits as f64 / RECALL_CAP.min(truth.len()) as f64)
}

// ---------------------------------------------------------------------------
// Evaluation harness over an embedding table
// ---------------------------------------------------------------------------

use crate::model::{AblationMode, EmbedKey, EmbeddingTable};

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Neighbor counts for the Micro-F1 table.
    pub ks: Vec<usize>,
    /// Independent runs (fresh split seed per run); standard errors need
    /// at least two.
    pub runs: usize,
    pub seed: u64,
    pub train_fraction: f64,
    /// Neighbor count used for the per-label recall rankings (the first
    /// Micro-F1 k by default).
    pub recall_k: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { ks: vec![1, 5, 10], runs: 1, seed: 7, train_fraction: 0.8, recall_k: 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroF1Row {
    pub k: usize,
    pub mean: f64,
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecallRow {
    pub disease: String,
    pub celltype: String,
    /// Genes carrying this (disease, cell type) association in the whole
    /// label set.
    pub n_total: usize,
    pub mean: f64,
    pub stderr: Option<f64>,
}

/// Mean and standard-error summaries over evaluation runs.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub method: AblationMode,
    pub runs: usize,
    pub micro_f1: Vec<MicroF1Row>,
    pub recall: Vec<RecallRow>,
    /// (gene, cell type) query pairs that could not be resolved to an
    /// embedded node and were skipped.
    pub skipped_queries: usize,
}

/// A resolved (gene, cell type) query instance.
struct Instance {
    gene: String,
    celltype: String,
    id: usize,
    embedding: Vec<f64>,
    diseases: BTreeSet<String>,
}

fn resolve_instances(
    table: &EmbeddingTable,
    labels: &LabelSet,
) -> (Vec<Instance>, usize) {
    let genes = labels.genes();
    let celltypes: BTreeSet<String> =
        labels.triples().iter().map(|t| t.celltype.clone()).collect();
    let mut instances = Vec::new();
    let mut skipped = 0usize;
    for gene in &genes {
        for celltype in &celltypes {
            let key = match table.mode() {
                AblationMode::Global => {
                    EmbedKey::Protein { gene: gene.clone(), context: None }
                }
                _ => EmbedKey::Protein { gene: gene.clone(), context: Some(celltype.clone()) },
            };
            match table.get(&key) {
                Some(v) => instances.push(Instance {
                    gene: gene.clone(),
                    celltype: celltype.clone(),
                    id: table.position(&key).expect("present key has a position"),
                    embedding: l2_normalize(v),
                    diseases: labels.diseases_of(gene, celltype),
                }),
                None => skipped += 1,
            }
        }
    }
    (instances, skipped)
}

fn mean_stderr(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = (values.len() >= 2).then(|| {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    Some((mean, stderr))
}

/// KNN evaluation of an embedding table against association triples:
/// Micro-F1 per neighbor count and Recall@20 per (disease, cell type),
/// averaged over seeded train/test splits by gene.
pub fn evaluate(
    table: &EmbeddingTable,
    labels: &LabelSet,
    opts: &EvalOptions,
) -> Result<MetricReport, EvalError> {
    let (instances, skipped_queries) = resolve_instances(table, labels);
    if instances.is_empty() {
        return Err(EvalError::NoResolvableLabels);
    }
    if skipped_queries > 0 {
        log::warn!("evaluation skipped {skipped_queries} unresolvable (gene, cell type) queries");
    }
    let disease_universe = labels.diseases();
    let label_pairs: BTreeSet<(String, String)> = labels
        .triples()
        .iter()
        .map(|t| (t.disease.clone(), t.celltype.clone()))
        .collect();

    let mut f1_values: BTreeMap<usize, Vec<f64>> =
        opts.ks.iter().map(|&k| (k, Vec::new())).collect();
    let mut recall_values: BTreeMap<(String, String), Vec<f64>> =
        label_pairs.iter().cloned().map(|p| (p, Vec::new())).collect();

    for run in 0..opts.runs {
        let split = labels.split_by_gene(opts.train_fraction, opts.seed + run as u64);
        let train: Vec<KnnInstance> = instances
            .iter()
            .filter(|i| split.train.contains(&i.gene))
            .map(|i| KnnInstance {
                id: i.id,
                embedding: i.embedding.clone(),
                labels: i.diseases.clone(),
            })
            .collect();
        let test: Vec<&Instance> =
            instances.iter().filter(|i| split.test.contains(&i.gene)).collect();
        if train.is_empty() || test.is_empty() {
            continue;
        }

        for &k in &opts.ks {
            let mut predicted = Vec::with_capacity(test.len());
            let mut truth = Vec::with_capacity(test.len());
            for inst in &test {
                let scores = knn_scores(&train, &inst.embedding, k, &disease_universe);
                predicted.push(predict_labels(&scores));
                truth.push(inst.diseases.clone());
            }
            if let Some(f1) = micro_f1(&predicted, &truth) {
                f1_values.get_mut(&k).expect("requested k").push(f1);
            }
        }

        // Per-label recall: rank this cell type's test genes by the label's
        // vote fraction at recall_k.
        let mut scores_by_instance: Vec<BTreeMap<String, f64>> = Vec::with_capacity(test.len());
        for inst in &test {
            scores_by_instance.push(knn_scores(
                &train,
                &inst.embedding,
                opts.recall_k,
                &disease_universe,
            ));
        }
        for (disease, celltype) in &label_pairs {
            let ranking: Vec<(String, usize, f64)> = test
                .iter()
                .zip(&scores_by_instance)
                .filter(|(inst, _)| inst.celltype == *celltype)
                .map(|(inst, scores)| (inst.gene.clone(), inst.id, scores[disease]))
                .collect();
            let truth: BTreeSet<String> = labels
                .triples()
                .iter()
                .filter(|t| {
                    t.disease == *disease
                        && t.celltype == *celltype
                        && split.test.contains(&t.gene)
                })
                .map(|t| t.gene.clone())
                .collect();
            // Only genes actually rankable (resolved test instances) count.
            let truth: BTreeSet<String> = truth
                .into_iter()
                .filter(|g| ranking.iter().any(|(gene, _, _)| gene == g))
                .collect();
            if let Some(r) = recall_at_20(&ranking, &truth) {
                recall_values
                    .get_mut(&(disease.clone(), celltype.clone()))
                    .expect("known pair")
                    .push(r);
            }
        }
    }

    let micro_f1_rows = opts
        .ks
        .iter()
        .filter_map(|&k| {
            mean_stderr(&f1_values[&k]).map(|(mean, stderr)| MicroF1Row { k, mean, stderr })
        })
        .collect();
    let recall_rows = label_pairs
        .iter()
        .filter_map(|(disease, celltype)| {
            let values = &recall_values[&(disease.clone(), celltype.clone())];
            mean_stderr(values).map(|(mean, stderr)| RecallRow {
                disease: disease.clone(),
                celltype: celltype.clone(),
                n_total: labels
                    .triples()
                    .iter()
                    .filter(|t| t.disease == *disease && t.celltype == *celltype)
                    .count(),
                mean,
                stderr,
            })
        })
        .collect();

    Ok(MetricReport {
        method: table.mode(),
        runs: opts.runs,
        micro_f1: micro_f1_rows,
        recall: recall_rows,
        skipped_queries,
    })
}

// ---------------------------------------------------------------------------
// Cluster purity
// ---------------------------------------------------------------------------

/// Purity of a seeded k-means clustering (k = number of planted classes,
/// 10 restarts) against the planted assignment: the sum over clusters of the
/// majority class count, divided by the number of points.
pub fn cluster_purity(
    embeddings: &[Vec<f64>],
    assignment: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    assert_eq!(embeddings.len(), assignment.len(), "one class per embedding");
    let k = n_classes;
    if embeddings.len() < k {
        return Err(EvalError::TooFewPoints { points: embeddings.len(), classes: k });
    }
    let clustering = kmeans(embeddings, k, seed, 10);
    let mut counts: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); k];
    for (point, &cluster) in clustering.iter().enumerate() {
        *counts[cluster].entry(assignment[point]).or_insert(0) += 1;
    }
    let majority_total: usize = counts
        .iter()
        .map(|c| c.values().copied().max().unwrap_or(0))
        .sum();
    Ok(majority_total as f64 / embeddings.len() as f64)
}

/// Lloyd's algorithm with seeded random-point initialization and restarts;
/// returns the assignment of the restart with the lowest inertia.
fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = points[0].len();
    let mut best: Option<(f64, Vec<usize>)> = None;

    for _ in 0..restarts {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.shuffle(&mut rng);
        let mut centers: Vec<Vec<f64>> = order[..k].iter().map(|&i| points[i].clone()).collect();
        let mut assign = vec![0usize; points.len()];

        for _ in 0..100 {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let nearest = (0..k)
                    .min_by(|&a, &b| {
                        squared_distance(p, &centers[a])
                            .partial_cmp(&squared_distance(p, &centers[b]))
                            .expect("finite distances")
                            .then(a.cmp(&b))
                    })
                    .expect("k >= 1");
                if assign[i] != nearest {
                    assign[i] = nearest;
                    changed = true;
                }
            }
            let mut sums = vec![vec![0.0; dim]; k];
            let mut sizes = vec![0usize; k];
            for (i, p) in points.iter().enumerate() {
                sizes[assign[i]] += 1;
                for (s, v) in sums[assign[i]].iter_mut().zip(p) {
                    *s += v;
                }
            }
            for c in 0..k {
                if sizes[c] > 0 {
                    for s in &mut sums[c] {
                        *s /= sizes[c] as f64;
                    }
                    centers[c] = sums[c].clone();
                }
            }
            if !changed {
                break;
            }
        }

        let inertia: f64 = points
            .iter()
            .enumerate()
            .map(|(i, p)| squared_distance(p, &centers[assign[i]]))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.expect("at least one restart").1
}

// ---------------------------------------------------------------------------
// 2-D projection
// ---------------------------------------------------------------------------

/// Top-2 principal component coordinates of mean-centered embeddings.
///
/// Components carry a deterministic sign convention (entry of largest
/// magnitude made positive). When fewer than two directions carry variance,
/// the second coordinate is zeroed and the flag in the result is set.
pub fn project_2d(embeddings: &[Vec<f64>]) -> Result<Projection2d, EvalError> {
    if embeddings.len() < 2 {
        return Err(EvalError::TooFewEmbeddings(embeddings.len()));
    }
    let n = embeddings.len();
    let dim = embeddings[0].len();

    let mut mean = vec![0.0; dim];
    for e in embeddings {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    // Covariance (unnormalized): C = X^T X.
    let mut cov = vec![vec![0.0; dim]; dim];
    for row in &centered {
        for i in 0..dim {
            if row[i] == 0.0 {
                continue;
            }
            for j in 0..dim {
                cov[i][j] += row[i] * row[j];
            }
        }
    }

    let total_variance: f64 = (0..dim).map(|i| cov[i][i]).sum();
    let tol = total_variance * 1e-12 + 1e-300;

    let (v1, l1) = power_iteration(&cov);
    let mut rank_deficient = false;
    let (v1, l1) = if l1 <= tol {
        rank_deficient = true;
        (vec![0.0; dim], 0.0)
    } else {
        (apply_sign_convention(v1), l1)
    };

    // Deflate and find the second component.
    let mut deflated = cov.clone();
    if l1 > 0.0 {
        for i in 0..dim {
            for j in 0..dim {
                deflated[i][j] -= l1 * v1[i] * v1[j];
            }
        }
    }
    let (v2, l2) = power_iteration(&deflated);
    let v2 = if l2 <= tol {
        rank_deficient = true;
        vec![0.0; dim]
    } else {
        apply_sign_convention(v2)
    };

    if rank_deficient {
        log::warn!("projection: fewer than two directions carry variance");
    }

    let coordinates = centered
        .iter()
        .map(|row| {
            let x: f64 = row.iter().zip(&v1).map(|(a, b)| a * b).sum();
            let y: f64 = row.iter().zip(&v2).map(|(a, b)| a * b).sum();
            (x, y)
        })
        .collect();
    Ok(Projection2d { coordinates, rank_deficient, components: [v1, v2] })
}

#[derive(Clone, Debug)]
pub struct Projection2d {
    pub coordinates: Vec<(f64, f64)>,
    /// Set when fewer than two directions carry variance; the second (or
    /// both) coordinates are zero in that case.
    pub rank_deficient: bool,
    pub components: [Vec<f64>; 2],
}

/// Dominant eigenpair of a symmetric PSD matrix; deterministic fixed start.
fn power_iteration(m: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let dim = m.len();
    let mut v: Vec<f64> = (0..dim)
        .map(|i| 1.0 + (i as f64 + 1.0) * 1e-3) // break symmetric starts
        .collect();
    normalize_in_place(&mut v);
    let mut eigenvalue = 0.0;
    for _ in 0..1000 {
        let mut next = vec![0.0; dim];
        for i in 0..dim {
            for j in 0..dim {
                next[i] += m[i][j] * v[j];
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (v, 0.0);
        }
        for x in &mut next {
            *x /= norm;
        }
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        // Eigenvalue via Rayleigh quotient (norm of Mv since v is unit).
        eigenvalue = norm;
        v = next;
        if delta < 1e-14 {
            break;
        }
    }
    (v, eigenvalue)
}

fn normalize_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

/// Flips the vector so its largest-magnitude entry is positive.
fn apply_sign_convention(mut v: Vec<f64>) -> Vec<f64> {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in &mut v {
            *x = -*x;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: usize, embedding: &[f64], labels: &[&str]) -> KnnInstance {
        KnnInstance {
            id,
            embedding: embedding.to_vec(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn knn_exact_match_scores_one() {
        let train = vec![inst(0, &[1.0, 0.0], &["d1"]), inst(1, &[0.0, 1.0], &["d2"])];
        let scores = knn_scores(&train, &[1.0, 0.0], 1, &labels(&["d1", "d2"]));
        assert_eq!(scores["d1"], 1.0);
        assert_eq!(scores["d2"], 0.0);
    }

    #[test]
    fn knn_disagreement_halves_scores_and_argmax_falls_back() {
        let train = vec![inst(0, &[1.0, 0.0], &["d1"]), inst(1, &[-1.0, 0.0], &["d2"])];
        let scores = knn_scores(&train, &[0.0, 1.0], 2, &labels(&["d1", "d2"]));
        assert_eq!(scores["d1"], 0.5);
        assert_eq!(scores["d2"], 0.5);
        let predicted = predict_labels(&scores);
        // Nothing clears 0.5; fallback picks the tied label that sorts first.
        assert_eq!(predicted.into_iter().collect::<Vec<_>>(), vec!["d1".to_string()]);
    }

    #[test]
    fn knn_matches_exhaustive_sort_on_toy_set() {
        let train = vec![
            inst(0, &[0.0, 0.0], &["a"]),
            inst(1, &[1.0, 0.0], &["b"]),
            inst(2, &[0.0, 1.0], &["a", "b"]),
            inst(3, &[2.0, 2.0], &["c"]),
            inst(4, &[0.5, 0.5], &["c"]),
            inst(5, &[3.0, 0.0], &["a"]),
        ];
        let query = [0.4, 0.4];
        let universe = labels(&["a", "b", "c"]);
        for k in 1..=6 {
            let scores = knn_scores(&train, &query, k, &universe);
            // Oracle: full sort by (distance, id), take k, count votes.
            let mut order: Vec<(f64, usize)> = train
                .iter()
                .map(|t| (squared_distance(&t.embedding, &query), t.id))
                .collect();
            order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            for label in &universe {
                let votes = order[..k]
                    .iter()
                    .filter(|(_, id)| train.iter().any(|t| t.id == *id && t.labels.contains(label)))
                    .count();
                assert_eq!(scores[label], votes as f64 / k as f64, "k={k} label={label}");
            }
        }
    }

    #[test]
    fn knn_clamps_oversized_k() {
        let train = vec![inst(0, &[0.0], &["d"])];
        let scores = knn_scores(&train, &[1.0], 5, &labels(&["d"]));
        assert_eq!(scores["d"], 1.0);
    }

    #[test]
    fn micro_f1_perfect_and_empty() {
        let truth = vec![BTreeSet::from(["d1".to_string()]), BTreeSet::from(["d2".to_string()])];
        assert_eq!(micro_f1(&truth, &truth), Some(1.0));
        let empty_pred = vec![BTreeSet::new(), BTreeSet::new()];
        assert_eq!(micro_f1(&empty_pred, &truth), Some(0.0));
        let empty_truth = vec![BTreeSet::new(), BTreeSet::new()];
        assert_eq!(micro_f1(&empty_pred, &empty_truth), None);
    }

    #[test]
    fn micro_f1_formula() {
        // TP=2, FP=1, FN=1 -> 4/6.
        let predicted = vec![
            BTreeSet::from(["a".to_string()]),
            BTreeSet::from(["b".to_string(), "c".to_string()]),
        ];
        let truth = vec![
            BTreeSet::from(["a".to_string()]),
            BTreeSet::from(["b".to_string(), "d".to_string()]),
        ];
        let f1 = micro_f1(&predicted, &truth).unwrap();
        assert!((f1 - 4.0 / 6.0).abs() < 1e-15);
    }

    fn ranking_of(genes: &[(&str, f64)]) -> Vec<(String, usize, f64)> {
        genes
            .iter()
            .enumerate()
            .map(|(i, (g, s))| (g.to_string(), i, *s))
            .collect()
    }

    #[test]
    fn recall_all_truths_on_top() {
        let ranking = ranking_of(&[("g1", 0.9), ("g2", 0.8), ("g3", 0.1)]);
        let truth = BTreeSet::from(["g1".to_string(), "g2".to_string()]);
        assert_eq!(recall_at_20(&ranking, &truth), Some(1.0));
    }

    #[test]
    fn recall_no_truths_in_top() {
        let mut genes: Vec<(String, usize, f64)> = (0..25)
            .map(|i| (format!("g{i:02}"), i, 1.0 - i as f64 * 0.01))
            .collect();
        genes.push(("target".to_string(), 99, 0.0));
        let truth = BTreeSet::from(["target".to_string()]);
        assert_eq!(recall_at_20(&genes, &truth), Some(0.0));
    }

    #[test]
    fn recall_min_capped_denominator() {
        // 40 truths, 10 in top 20 -> 10/20.
        let mut ranking = Vec::new();
        for i in 0..10 {
            ranking.push((format!("t{i:02}"), i, 1.0));
        }
        for i in 0..10 {
            ranking.push((format!("x{i:02}"), 100 + i, 0.9));
        }
        for i in 10..40 {
            ranking.push((format!("t{i:02}"), i, 0.1));
        }
        let truth: BTreeSet<String> = (0..40).map(|i| format!("t{i:02}")).collect();
        assert_eq!(recall_at_20(&ranking, &truth), Some(0.5));
    }

    #[test]
    fn recall_empty_truth_absent() {
        let ranking = ranking_of(&[("g", 1.0)]);
        assert_eq!(recall_at_20(&ranking, &BTreeSet::new()), None);
    }

    #[test]
    fn purity_perfectly_separated() {
        let mut points = Vec::new();
        let mut classes = Vec::new();
        for i in 0..6 {
            points.push(vec![10.0 * (i % 3) as f64, 0.01 * i as f64]);
            classes.push(i % 3);
        }
        let p = cluster_purity(&points, &classes, 3, 11).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn purity_matches_exhaustive_count_on_12_point_toy() {
        // Three tight planted clusters of 4 points each.
        let mut points = Vec::new();
        let mut classes = Vec::new();
        for c in 0..3 {
            for j in 0..4 {
                points.push(vec![5.0 * c as f64 + 0.01 * j as f64, 5.0 * c as f64]);
                classes.push(c);
            }
        }
        let p = cluster_purity(&points, &classes, 3, 3).unwrap();
        // Oracle: with well-separated clusters k-means recovers the planted
        // partition, so every cluster is pure.
        assert_eq!(p, 1.0);
    }

    #[test]
    fn purity_too_few_points_is_error() {
        let err = cluster_purity(&[vec![0.0]], &[0], 2, 1).unwrap_err();
        assert!(matches!(err, EvalError::TooFewPoints { .. }));
        assert!(cluster_purity(&[vec![0.0], vec![1.0]], &[0, 1], 2, 1).is_ok());
    }

    #[test]
    fn projection_collinear_points_zero_second_axis() {
        let points: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let proj = project_2d(&points).unwrap();
        assert!(proj.rank_deficient);
        for (_, y) in &proj.coordinates {
            assert!(y.abs() < 1e-9, "second coordinate {y}");
        }
    }

    #[test]
    fn projection_antipodal_pair() {
        let v = vec![3.0, 4.0];
        let proj = project_2d(&[v.clone(), v.iter().map(|x| -x).collect()]).unwrap();
        let (x0, _) = proj.coordinates[0];
        let (x1, _) = proj.coordinates[1];
        assert!((x0.abs() - 5.0).abs() < 1e-9);
        assert!((x0 + x1).abs() < 1e-12);
    }

    #[test]
    fn knn_invariant_under_orthogonal_transform() {
        // Rotation by an arbitrary angle preserves distances, hence scores.
        let theta = 0.7f64;
        let rot = |v: &[f64]| {
            vec![
                theta.cos() * v[0] - theta.sin() * v[1],
                theta.sin() * v[0] + theta.cos() * v[1],
            ]
        };
        let train = vec![
            inst(0, &[1.0, 0.2], &["a"]),
            inst(1, &[-0.5, 0.8], &["b"]),
            inst(2, &[0.3, -0.9], &["a"]),
        ];
        let rotated: Vec<KnnInstance> = train
            .iter()
            .map(|t| KnnInstance {
                id: t.id,
                embedding: rot(&t.embedding),
                labels: t.labels.clone(),
            })
            .collect();
        let query = [0.4, 0.3];
        let universe = labels(&["a", "b"]);
        let s1 = knn_scores(&train, &query, 2, &universe);
        let s2 = knn_scores(&rotated, &rot(&query), 2, &universe);
        for l in &universe {
            assert!((s1[l] - s2[l]).abs() < 1e-12);
        }
    }

    #[test]
    fn split_is_by_gene_and_seeded() {
        let triples = vec![
            LabelTriple { gene: "g1".into(), celltype: "c1".into(), disease: "d1".into() },
            LabelTriple { gene: "g1".into(), celltype: "c2".into(), disease: "d2".into() },
            LabelTriple { gene: "g2".into(), celltype: "c1".into(), disease: "d1".into() },
            LabelTriple { gene: "g3".into(), celltype: "c1".into(), disease: "d2".into() },
            LabelTriple { gene: "g4".into(), celltype: "c2".into(), disease: "d1".into() },
        ];
        let set = LabelSet::new(triples);
        let split = set.split_by_gene(0.75, 5);
        assert_eq!(split.train.len() + split.test.len(), 4);
        assert_eq!(set.split_by_gene(0.75, 5), split);
        assert!(split.train.is_disjoint(&split.test));
    }
}
