//! Objective and optimization loop.
//!
//! The objective couples a sampled-softmax link-prediction loss over the
//! network's edges with a center loss pulling each contextual protein
//! embedding toward its cell type's learnable center:
//! `L = L_link + lambda * L_center`. Optimization is full-batch Adam with
//! two parameter groups (the centers at their own learning rate) and is
//! deterministic under a fixed seed.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{MultiScaleNetwork, ValidationReport};
use crate::matrix::Matrix;
use crate::model::{
    register_params, run_forward, AblationMode, EmbeddingTable, ForwardOptions, ForwardPlan,
    ModelDims, ModelError, ModelParams,
};
use crate::tape::{Tape, TensorError, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("network failed validation:\n{0}")]
    InvalidNetwork(ValidationReport),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at epoch {epoch}; first non-finite tensor: {tensor}")]
    NonFinite { epoch: usize, tensor: String },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

/// All knobs of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layers: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the center loss (the objective's lambda).
    pub center_weight: f64,
    pub lr_main: f64,
    pub lr_center: f64,
    /// Corrupted targets sampled per positive edge.
    pub negatives_per_positive: usize,
    pub ablation: AblationMode,
    /// Top-k differentially expressed genes seeding each subnetwork.
    pub k_top: usize,
    /// Growth budget before subnetwork extraction falls back to bridging.
    pub n_max: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Include meta-graph edges (cci, membership, hierarchy) in the link
    /// loss alongside protein-protein edges.
    pub link_loss_meta_edges: bool,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layers: 2,
            epochs: 100,
            seed: 7,
            center_weight: 0.001,
            lr_main: 0.001,
            lr_center: 0.01,
            negatives_per_positive: 5,
            ablation: AblationMode::Full,
            k_top: 100,
            n_max: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            link_loss_meta_edges: true,
            dims: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.center_weight < 0.0 {
            return fail(format!("center weight must be nonnegative, got {}", self.center_weight));
        }
        if self.lr_main <= 0.0 || self.lr_center <= 0.0 {
            return fail("learning rates must be positive".into());
        }
        if self.negatives_per_positive == 0 {
            return fail("negatives per positive must be at least 1".into());
        }
        if self.k_top == 0 {
            return fail("k_top must be at least 1".into());
        }
        if !self.dims.hidden_dim.is_multiple_of(self.dims.heads) {
            return fail(format!(
                "hidden dim {} not divisible by {} heads",
                self.dims.hidden_dim, self.dims.heads
            ));
        }
        Ok(())
    }

    /// The lambda actually applied: ablations without a center loss force
    /// zero.
    pub fn effective_center_weight(&self) -> f64 {
        match self.ablation {
            AblationMode::NoProto | AblationMode::Global => 0.0,
            _ => self.center_weight,
        }
    }
}

/// Per-epoch loss and gradient summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub link_loss: f64,
    pub center_loss: f64,
    pub total_loss: f64,
    pub grad_norm: f64,
}

/// Loss trajectory of one run; every entry is finite (the loop aborts on
/// the first non-finite loss).
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

// ---------------------------------------------------------------------------
// Link-prediction loss and negative sampling
// ---------------------------------------------------------------------------

/// One positive edge with its frozen corrupted targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PositiveSample {
    pub source: usize,
    pub target: usize,
    pub negatives: Vec<usize>,
}

/// Positive edges of the network (as embedding-row pairs) plus, per
/// positive, the candidate pool its corruptions are drawn from: nodes of
/// the target's kind not adjacent to the source under the edge's meta-path.
pub struct LinkUniverse {
    positives: Vec<(usize, usize, usize)>, // (source, target, candidate list index)
    candidate_lists: Vec<Vec<usize>>,
}

impl LinkUniverse {
    /// Enumerates positives in a fixed canonical order: protein-protein
    /// edges subnet by subnet, then cci, membership, and hierarchy edges
    /// when `include_meta` is set (always off in global mode, which has no
    /// meta graph).
    pub fn new(net: &MultiScaleNetwork, mode: AblationMode, include_meta: bool) -> Self {
        let mut positives = Vec::new();
        let mut candidate_lists: Vec<Vec<usize>> = Vec::new();
        let intern = |list: Vec<usize>, lists: &mut Vec<Vec<usize>>| -> usize {
            match lists.iter().position(|l| *l == list) {
                Some(i) => i,
                None => {
                    lists.push(list);
                    lists.len() - 1
                }
            }
        };

        if mode == AblationMode::Global {
            let n = net.global.len();
            let all: BTreeSet<usize> = (0..n).collect();
            for &(a, b) in net.global.edges() {
                let mut excluded: BTreeSet<usize> =
                    net.global.neighbors_of(a).iter().copied().collect();
                excluded.insert(a);
                let pool: Vec<usize> = all.difference(&excluded).copied().collect();
                let idx = intern(pool, &mut candidate_lists);
                positives.push((a, b, idx));
            }
            return LinkUniverse { positives, candidate_lists };
        }

        let index = net.index();
        let protein_rows: BTreeSet<usize> = (0..index.len())
            .filter(|&id| {
                matches!(
                    index.node(id),
                    Some(crate::graph::ContextualNode::Protein { .. })
                )
            })
            .collect();

        // Protein-protein positives, per subnetwork.
        for subnet in &net.subnets {
            let Some(c) = net.meta.celltype_index(&subnet.celltype_id) else { continue };
            for &(a, b) in &subnet.edges {
                let (Some(u), Some(v)) = (index.protein_id(a, c), index.protein_id(b, c))
                else {
                    continue;
                };
                let (u, v) = if u < v { (u, v) } else { (v, u) };
                let mut excluded: BTreeSet<usize> = BTreeSet::from([u]);
                // Contextual adjacency of u within its subnetwork.
                let crate::graph::ContextualNode::Protein { protein, celltype } =
                    index.node(u).expect("valid id")
                else {
                    unreachable!()
                };
                for &(x, y) in &subnet.edges {
                    if x == protein {
                        excluded.extend(index.protein_id(y, celltype));
                    } else if y == protein {
                        excluded.extend(index.protein_id(x, celltype));
                    }
                }
                let pool: Vec<usize> = protein_rows.difference(&excluded).copied().collect();
                let idx = intern(pool, &mut candidate_lists);
                positives.push((u, v, idx));
            }
        }

        if include_meta {
            let ct_rows: BTreeSet<usize> =
                (0..net.meta.celltypes.len()).map(|c| index.celltype_id(c)).collect();
            let tissue_rows: BTreeSet<usize> =
                (0..net.meta.tissues.len()).map(|t| index.tissue_id(t)).collect();

            for &(a, b) in &net.meta.cci_edges {
                let (u, v) = (index.celltype_id(a.min(b)), index.celltype_id(a.max(b)));
                let mut excluded: BTreeSet<usize> = BTreeSet::from([u]);
                for n in net.meta.cci_neighbors(a.min(b)) {
                    excluded.insert(index.celltype_id(n));
                }
                let pool: Vec<usize> = ct_rows.difference(&excluded).copied().collect();
                let idx = intern(pool, &mut candidate_lists);
                positives.push((u, v, idx));
            }
            for &(c, t) in &net.meta.membership_edges {
                let u = index.celltype_id(c);
                let v = index.tissue_id(t);
                let excluded: BTreeSet<usize> = net
                    .meta
                    .tissues_of_celltype(c)
                    .into_iter()
                    .map(|t2| index.tissue_id(t2))
                    .collect();
                let pool: Vec<usize> = tissue_rows.difference(&excluded).copied().collect();
                let idx = intern(pool, &mut candidate_lists);
                positives.push((u, v, idx));
            }
            for &(a, b) in &net.meta.parent_edges {
                let (u, v) = (index.tissue_id(a.min(b)), index.tissue_id(a.max(b)));
                let mut excluded: BTreeSet<usize> = BTreeSet::from([u]);
                for n in net.meta.tissue_neighbors(a.min(b)) {
                    excluded.insert(index.tissue_id(n));
                }
                let pool: Vec<usize> = tissue_rows.difference(&excluded).copied().collect();
                let idx = intern(pool, &mut candidate_lists);
                positives.push((u, v, idx));
            }
        }

        LinkUniverse { positives, candidate_lists }
    }

    pub fn positive_count(&self) -> usize {
        self.positives.len()
    }

    /// Draws `q` corruptions per positive. Pools with at least `q + 1`
    /// candidates are sampled without replacement; smaller nonempty pools
    /// fall back to sampling with replacement; positives with empty pools
    /// are skipped.
    pub fn sample(&self, q: usize, rng: &mut ChaCha8Rng) -> Vec<PositiveSample> {
        let mut out = Vec::with_capacity(self.positives.len());
        for &(source, target, pool_idx) in &self.positives {
            let pool = &self.candidate_lists[pool_idx];
            if pool.is_empty() {
                continue;
            }
            let negatives: Vec<usize> = if pool.len() > q {
                rand::seq::index::sample(rng, pool.len(), q)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect()
            } else {
                (0..q).map(|_| pool[rng.random_range(0..pool.len())]).collect()
            };
            out.push(PositiveSample { source, target, negatives });
        }
        out
    }
}

/// Sampled-softmax link loss: the mean over positives of the cross-entropy
/// of the true target against its corruptions, with dot-product scores.
pub fn link_prediction_loss<'t>(
    tape: &'t Tape,
    h_all: Var<'t>,
    samples: &[PositiveSample],
) -> Result<Var<'t>, TensorError> {
    if samples.is_empty() {
        return Ok(tape.constant(Matrix::zeros(1, 1)));
    }
    let mut per_edge = Vec::with_capacity(samples.len());
    for sample in samples {
        let source = h_all.gather_rows(&[sample.source])?;
        let mut rows = Vec::with_capacity(1 + sample.negatives.len());
        rows.push(sample.target);
        rows.extend_from_slice(&sample.negatives);
        let targets = h_all.gather_rows(&rows)?;
        let scores = source.matmul(targets.transpose())?;
        per_edge.push(scores.log_sum_exp()?.sub(scores.slice_cols(0, 1)?)?);
    }
    Ok(Var::concat_cols(&per_edge)?.mean_all())
}

/// Center loss: half the summed squared distance of every contextual
/// protein embedding to its cell type's center.
pub fn center_loss<'t>(
    h_all: Var<'t>,
    protein_rows: usize,
    assignment: &[usize],
    centers: Var<'t>,
) -> Result<Var<'t>, TensorError> {
    debug_assert_eq!(assignment.len(), protein_rows);
    let rows: Vec<usize> = (0..protein_rows).collect();
    let x = h_all.gather_rows(&rows)?;
    let assigned = centers.gather_rows(assignment)?;
    let diff = x.sub(assigned)?;
    Ok(diff.mul_elem(diff)?.sum_all().scale(0.5))
}

/// `L = L_link + lambda * L_center`.
pub fn total_loss<'t>(
    link: Var<'t>,
    center: Option<Var<'t>>,
    lambda: f64,
) -> Result<Var<'t>, TensorError> {
    match center {
        Some(c) => link.add(c.scale(lambda)),
        None => Ok(link),
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam with per-parameter learning rates (how the two parameter groups are
/// realized: the centers entry carries its own rate).
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, values: &mut [Matrix], grads: &[Matrix], lrs: &[f64]) {
        assert_eq!(values.len(), grads.len());
        assert_eq!(values.len(), lrs.len());
        if self.m.is_empty() {
            self.m = values.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((value, grad), (m, v)), lr) in values
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .zip(lrs)
        {
            let data = value.data_mut();
            for (((x, g), m), v) in
                data.iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *x -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub embeddings: EmbeddingTable,
    pub history: TrainHistory,
}

/// Initializes parameters from the config seed and trains.
pub fn train(net: &MultiScaleNetwork, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let report = net.validate();
    if !report.is_empty() {
        return Err(TrainError::InvalidNetwork(report));
    }
    let params = ModelParams::init(net, cfg.ablation, cfg.dims, cfg.layers, cfg.seed);
    train_with_params(net, cfg, params)
}

/// Trains from the given parameter state (resume or poisoned-state tests).
pub fn train_with_params(
    net: &MultiScaleNetwork,
    cfg: &TrainConfig,
    mut params: ModelParams,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let plan = ForwardPlan::new(net, cfg.ablation)?;
    let universe = LinkUniverse::new(net, cfg.ablation, cfg.link_loss_meta_edges);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let lambda = cfg.effective_center_weight();

    let mut lrs = vec![cfg.lr_main; params.param_count()];
    if let Some(pos) = params.centers_position() {
        lrs[pos] = cfg.lr_center;
    }
    let mut adam = Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.epochs {
        let tape = Tape::new();
        let pvars = register_params(&tape, &params);
        let pass =
            run_forward(&tape, &plan, &pvars, cfg.ablation, cfg.layers, &ForwardOptions::default())?;
        let samples = universe.sample(cfg.negatives_per_positive, &mut rng);
        let link = link_prediction_loss(&tape, pass.h_all, &samples)?;
        let center = match pvars.centers {
            Some(centers) => Some(center_loss(
                pass.h_all,
                plan.n_protein_rows,
                &plan.protein_celltype,
                centers,
            )?),
            None => None,
        };
        let total = total_loss(link, center, lambda)?;

        let total_value = total.with_value(Matrix::scalar);
        if !total_value.is_finite() {
            let tensor = tape
                .first_non_finite()
                .unwrap_or_else(|| "total loss".to_string());
            return Err(TrainError::NonFinite { epoch, tensor });
        }
        tape.backward(total)?;

        let grads: Vec<Matrix> = pvars
            .all
            .iter()
            .map(|p| p.grad().expect("parameters receive gradients"))
            .collect();
        let grad_norm =
            grads.iter().map(|g| g.frobenius_norm().powi(2)).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            let tensor = tape
                .first_non_finite()
                .unwrap_or_else(|| "gradients".to_string());
            return Err(TrainError::NonFinite { epoch, tensor });
        }

        let mut values = params.values();
        adam.step(&mut values, &grads, &lrs);
        params.set_values(&values);

        history.epochs.push(EpochStats {
            link_loss: link.with_value(Matrix::scalar),
            center_loss: center.map_or(0.0, |c| c.with_value(Matrix::scalar)),
            total_loss: total_value,
            grad_norm,
        });
    }

    // Final embeddings from the trained parameters.
    let tape = Tape::new();
    let pvars = register_params(&tape, &params);
    let pass =
        run_forward(&tape, &plan, &pvars, cfg.ablation, cfg.layers, &ForwardOptions::default())?;
    let embeddings = crate::model::read_out(&plan, cfg.ablation, &pass);
    Ok(TrainOutput { params, embeddings, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn link_loss_indistinguishable_scores_is_ln2() {
        let tape = Tape::new();
        let h = tape.constant(Matrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]));
        let samples =
            vec![PositiveSample { source: 0, target: 1, negatives: vec![2] }];
        let loss = link_prediction_loss(&tape, h, &samples).unwrap();
        assert!((loss.value().scalar() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn link_loss_confident_scores_vanish() {
        let tape = Tape::new();
        let h = tape.constant(Matrix::from_rows(&[vec![10.0], vec![10.0], vec![0.0]]));
        let samples =
            vec![PositiveSample { source: 0, target: 1, negatives: vec![2] }];
        let loss = link_prediction_loss(&tape, h, &samples).unwrap();
        assert!(loss.value().scalar() < 1e-40);
        assert!(loss.value().scalar() >= 0.0);
    }

    #[test]
    fn link_loss_two_positive_hand_value() {
        // Scores (2; 0) and (1; 1): mean of ln(1 + e^-2) and ln 2.
        let tape = Tape::new();
        let h = tape.constant(Matrix::from_rows(&[
            vec![1.0, 0.0], // u1
            vec![2.0, 0.0], // v1: s = 2
            vec![0.0, 0.0], // neg1: s = 0
            vec![0.0, 1.0], // u2
            vec![0.0, 1.0], // v2: s = 1
            vec![0.0, 1.0], // neg2: s = 1
        ]));
        let samples = vec![
            PositiveSample { source: 0, target: 1, negatives: vec![2] },
            PositiveSample { source: 3, target: 4, negatives: vec![5] },
        ];
        let loss = link_prediction_loss(&tape, h, &samples).unwrap().value().scalar();
        let expected = (((-2.0f64).exp() + 1.0).ln() + 2.0f64.ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-12, "loss {loss} expected {expected}");
        assert!((expected - 0.4100).abs() < 1e-4);
    }

    #[test]
    fn center_loss_cases() {
        let tape = Tape::new();
        // Embeddings equal to centers: zero loss.
        let h = tape.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]));
        let centers = tape.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]));
        let zero = center_loss(h, 2, &[0, 1], centers).unwrap();
        assert_eq!(zero.value().scalar(), 0.0);
        // Single sample at distance 1 from the origin center: 0.5.
        let h1 = tape.constant(Matrix::from_rows(&[vec![1.0, 0.0]]));
        let c1 = tape.constant(Matrix::from_rows(&[vec![0.0, 0.0]]));
        assert_eq!(center_loss(h1, 1, &[0], c1).unwrap().value().scalar(), 0.5);
        // Squared distances 1 and 4: 2.5.
        let h2 = tape.constant(Matrix::from_rows(&[vec![1.0], vec![2.0]]));
        let c2 = tape.constant(Matrix::from_rows(&[vec![0.0]]));
        assert_eq!(center_loss(h2, 2, &[0, 0], c2).unwrap().value().scalar(), 2.5);
    }

    #[test]
    fn total_loss_arithmetic() {
        let tape = Tape::new();
        let link = tape.constant(Matrix::filled(1, 1, 1.0));
        let center = tape.constant(Matrix::filled(1, 1, 2.0));
        let total = total_loss(link, Some(center), 0.001).unwrap();
        assert!((total.value().scalar() - 1.002).abs() < 1e-15);
        let only_link = total_loss(link, Some(center), 0.0).unwrap();
        assert_eq!(only_link.value().scalar(), 1.0);
        let zero_link = tape.constant(Matrix::zeros(1, 1));
        let zero_center = tape.constant(Matrix::zeros(1, 1));
        assert_eq!(total_loss(zero_link, Some(zero_center), 1.0).unwrap().value().scalar(), 0.0);
    }

    #[test]
    fn adam_moves_toward_minimum() {
        // Minimize (x - 3)^2 with Adam; gradient 2(x - 3).
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut values = vec![Matrix::filled(1, 1, 0.0)];
        for _ in 0..2000 {
            let x = values[0].scalar();
            let grads = vec![Matrix::filled(1, 1, 2.0 * (x - 3.0))];
            adam.step(&mut values, &grads, &[0.05]);
        }
        assert!((values[0].scalar() - 3.0).abs() < 1e-3);
    }
}
