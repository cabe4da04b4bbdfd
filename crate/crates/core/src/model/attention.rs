//! Attention and pooling building blocks.
//!
//! Each function records onto the caller's tape and returns the tensors a
//! layer needs downstream. Attention coefficient rows (per-neighbor, per
//! meta-path, and pooling weights) are returned as live tensors so callers
//! can both reuse them (down-pooling) and inspect them.

use crate::matrix::Matrix;
use crate::tape::{Mask, Tape, TensorError, Var};

/// Negative-side slope of the LeakyReLU used in attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

type Result<T> = std::result::Result<T, TensorError>;

/// Handles to one meta-path's node-attention parameters on the tape.
#[derive(Clone)]
pub struct PathVars<'t> {
    pub transforms: Vec<Var<'t>>,
    pub attn: Vec<Var<'t>>,
}

/// Handles to a layer's semantic-attention parameters on the tape.
#[derive(Clone, Copy)]
pub struct SemanticVars<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
    pub q: Var<'t>,
}

/// Output of a node-attention pass.
pub struct NodeAttention<'t> {
    /// Per-node fused head output, n x hidden_dim.
    pub z: Var<'t>,
    /// Per-head attention coefficient matrices (n x n, rows summing to one
    /// over the mask).
    pub head_weights: Vec<Var<'t>>,
}

/// Multi-head node-level attention over one meta-path.
///
/// For each head: project the inputs, score every masked (i, j) pair with
/// `LeakyReLU(a . [P_i || P_j])`, normalize scores over each node's masked
/// neighborhood (the mask must include self-loops), aggregate the projected
/// neighbors by those weights, and apply an ELU. Heads are concatenated.
pub fn node_attention<'t>(
    tape: &'t Tape,
    h: Var<'t>,
    mask: &Mask,
    params: &PathVars<'t>,
) -> Result<NodeAttention<'t>> {
    let n = h.shape().0;
    if mask.shape() != (n, n) {
        return Err(TensorError::DimMismatch {
            op: "node_attention",
            detail: format!("{n} nodes with {:?} mask", mask.shape()),
        });
    }
    let ones_row = tape.constant(Matrix::filled(1, n, 1.0));
    let mut heads = Vec::with_capacity(params.transforms.len());
    let mut head_weights = Vec::with_capacity(params.transforms.len());
    for (transform, attn) in params.transforms.iter().zip(&params.attn) {
        let head_dim = transform.shape().1;
        let projected = h.matmul(*transform)?;
        let a_src = attn.slice_cols(0, head_dim)?;
        let a_dst = attn.slice_cols(head_dim, head_dim)?;
        let src_score = projected.matmul(a_src.transpose())?; // n x 1
        let dst_score = projected.matmul(a_dst.transpose())?; // n x 1
        // logits[i][j] = src_score[i] + dst_score[j]
        let logits = src_score
            .matmul(ones_row)?
            .add(dst_score.matmul(ones_row)?.transpose())?;
        let weights = logits.leaky_relu(ATTENTION_SLOPE).masked_softmax(mask)?;
        heads.push(weights.matmul(projected)?.elu());
        head_weights.push(weights);
    }
    Ok(NodeAttention { z: Var::concat_cols(&heads)?, head_weights })
}

/// Output of a semantic-attention fusion.
pub struct SemanticAttention<'t> {
    /// Fused embedding, same shape as each input.
    pub h: Var<'t>,
    /// 1 x n_paths meta-path weights, summing to one.
    pub path_weights: Var<'t>,
}

/// Semantic-level attention over per-meta-path embeddings of one node set.
///
/// Each path is scored by the node-mean of `q . tanh(W z_i + b)`; a softmax
/// over path scores weights the per-path embeddings into the fused output.
pub fn semantic_attention<'t>(
    per_path: &[Var<'t>],
    params: &SemanticVars<'t>,
) -> Result<SemanticAttention<'t>> {
    assert!(!per_path.is_empty(), "semantic attention over zero meta-paths");
    let shape = per_path[0].shape();
    for z in per_path {
        if z.shape() != shape {
            return Err(TensorError::DimMismatch {
                op: "semantic_attention",
                detail: format!("{:?} vs {:?}", shape, z.shape()),
            });
        }
    }
    let mut scores = Vec::with_capacity(per_path.len());
    for z in per_path {
        let transformed = z.matmul(params.w)?.add_bias_row(params.b)?.tanh();
        scores.push(transformed.matmul(params.q)?.row_mean());
    }
    let stacked = Var::concat_cols(&scores)?;
    let path_weights = stacked.masked_softmax(&Mask::all_true(1, per_path.len()))?;

    let mut fused = per_path[0].scale_by(path_weights.slice_cols(0, 1)?)?;
    for (p, z) in per_path.iter().enumerate().skip(1) {
        fused = fused.add(z.scale_by(path_weights.slice_cols(p, 1)?)?)?;
    }
    Ok(SemanticAttention { h: fused, path_weights })
}

/// Layer-0 cell-type embedding: differential-expression-weighted average of
/// the member protein embeddings (a convex combination, weights sum to one).
pub fn init_celltype<'t>(members_h: Var<'t>, de_weights: &[f64]) -> Result<Var<'t>> {
    members_h.weighted_row_sum(de_weights)
}

/// Layer-0 tissue embedding: plain average of already-initialized meta
/// neighbors (member cell types and child tissues).
pub fn init_tissue<'t>(neighbors: &[Var<'t>]) -> Result<Var<'t>> {
    if neighbors.is_empty() {
        return Err(TensorError::DimMismatch {
            op: "init_tissue",
            detail: "tissue has no initialized neighbors".to_string(),
        });
    }
    Ok(Var::concat_rows(neighbors)?.row_mean())
}

/// Output of an up-pooling step.
pub struct UpPool<'t> {
    /// Updated 1 x hidden_dim cell-type embedding.
    pub h_celltype: Var<'t>,
    /// 1 x n_members pooling weights, summing to one; reused by
    /// [`down_pool`] and exposed as member importances.
    pub member_weights: Var<'t>,
}

/// Attention pooling from member proteins into their cell type:
/// `h_c <- h_c + ELU(sum_i gamma_i h_i)` with gamma a softmax over
/// `LeakyReLU(a . [h_c || h_i])`.
pub fn up_pool<'t>(
    tape: &'t Tape,
    h_celltype_prev: Var<'t>,
    members_h: Var<'t>,
    pool_attn: Var<'t>,
) -> Result<UpPool<'t>> {
    let dim = h_celltype_prev.shape().1;
    if pool_attn.shape() != (1, 2 * dim) {
        return Err(TensorError::DimMismatch {
            op: "up_pool",
            detail: format!("pool vector {:?} for hidden dim {dim}", pool_attn.shape()),
        });
    }
    let n = members_h.shape().0;
    let a_ct = pool_attn.slice_cols(0, dim)?;
    let a_member = pool_attn.slice_cols(dim, dim)?;
    let ct_score = h_celltype_prev.matmul(a_ct.transpose())?; // 1 x 1
    let member_scores = members_h.matmul(a_member.transpose())?; // n x 1
    let ones_row = tape.constant(Matrix::filled(1, n, 1.0));
    let logits = ct_score.matmul(ones_row)?.add(member_scores.transpose())?;
    let member_weights =
        logits.leaky_relu(ATTENTION_SLOPE).masked_softmax(&Mask::all_true(1, n))?;
    let pooled = member_weights.matmul(members_h)?.elu();
    Ok(UpPool { h_celltype: h_celltype_prev.add(pooled)?, member_weights })
}

/// Imposes the cell-type embedding back onto its members:
/// `h_i <- h_i + gamma_i * h_c`, reusing the up-pooling weights.
pub fn down_pool<'t>(
    members_h: Var<'t>,
    h_celltype: Var<'t>,
    member_weights: Var<'t>,
) -> Result<Var<'t>> {
    let n = members_h.shape().0;
    if member_weights.shape() != (1, n) {
        return Err(TensorError::DimMismatch {
            op: "down_pool",
            detail: format!("{:?} weights for {n} members", member_weights.shape()),
        });
    }
    members_h.add(member_weights.transpose().matmul(h_celltype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| 2.0 * rng.random::<f64>() - 1.0)
    }

    fn path_vars<'t>(
        tape: &'t Tape,
        rng: &mut ChaCha8Rng,
        dim: usize,
        heads: usize,
    ) -> PathVars<'t> {
        let dh = dim / heads;
        let transforms =
            (0..heads).map(|_| tape.param(rand_matrix(rng, dim, dh), "m")).collect();
        let attn = (0..heads).map(|_| tape.param(rand_matrix(rng, 1, 2 * dh), "a")).collect();
        PathVars { transforms, attn }
    }

    #[test]
    fn singleton_node_attention_is_elu_of_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tape = Tape::new();
        let h = tape.constant(rand_matrix(&mut rng, 1, 4));
        let params = path_vars(&tape, &mut rng, 4, 2);
        let out = node_attention(&tape, h, &Mask::all_true(1, 1), &params).unwrap();
        // alpha = [1]; z = ELU(M h) per head, concatenated.
        let expected = Var::concat_cols(&[
            h.matmul(params.transforms[0]).unwrap().elu(),
            h.matmul(params.transforms[1]).unwrap().elu(),
        ])
        .unwrap();
        let z = out.z.value();
        let e = expected.value();
        for (a, b) in z.data().iter().zip(e.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.head_weights[0].value().scalar(), 1.0);
    }

    #[test]
    fn identical_nodes_with_symmetric_edges_get_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tape = Tape::new();
        let row: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
        let h = tape.constant(Matrix::from_rows(&[row.clone(), row]));
        let params = path_vars(&tape, &mut rng, 4, 2);
        let out = node_attention(&tape, h, &Mask::all_true(2, 2), &params).unwrap();
        let z = out.z.value();
        assert_eq!(z.row(0), z.row(1));
    }

    #[test]
    fn three_node_attention_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 4;
        let heads = 2;
        let dh = dim / heads;
        let h_data = rand_matrix(&mut rng, 3, dim);
        let transforms: Vec<Matrix> = (0..heads).map(|_| rand_matrix(&mut rng, dim, dh)).collect();
        let attn: Vec<Matrix> = (0..heads).map(|_| rand_matrix(&mut rng, 1, 2 * dh)).collect();
        // Path graph 0 - 1 - 2 plus self loops.
        let adj = [[true, true, false], [true, true, true], [false, true, true]];
        let mask = Mask::from_fn(3, 3, |i, j| adj[i][j]);

        let tape = Tape::new();
        let h = tape.constant(h_data.clone());
        let params = PathVars {
            transforms: transforms.iter().map(|m| tape.param(m.clone(), "m")).collect(),
            attn: attn.iter().map(|a| tape.param(a.clone(), "a")).collect(),
        };
        let out = node_attention(&tape, h, &mask, &params).unwrap().z.value();

        // Straight-line re-computation with scalar loops.
        let leaky = |v: f64| if v >= 0.0 { v } else { ATTENTION_SLOPE * v };
        let elu = |v: f64| if v >= 0.0 { v } else { v.exp() - 1.0 };
        for i in 0..3 {
            let mut expected_row: Vec<f64> = Vec::new();
            for k in 0..heads {
                // p[r][c] = sum_t h[r][t] * M[t][c]
                let mut p = [[0.0; 8]; 3];
                for r in 0..3 {
                    for c in 0..dh {
                        for t in 0..dim {
                            p[r][c] += h_data.get(r, t) * transforms[k].get(t, c);
                        }
                    }
                }
                let mut logits = [0.0; 3];
                for j in 0..3 {
                    let mut s = 0.0;
                    for c in 0..dh {
                        s += attn[k].get(0, c) * p[i][c] + attn[k].get(0, dh + c) * p[j][c];
                    }
                    logits[j] = leaky(s);
                }
                let masked: Vec<usize> = (0..3).filter(|&j| adj[i][j]).collect();
                let max = masked.iter().map(|&j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = masked.iter().map(|&j| (logits[j] - max).exp()).sum();
                for c in 0..dh {
                    let mut agg = 0.0;
                    for &j in &masked {
                        agg += (logits[j] - max).exp() / denom * p[j][c];
                    }
                    expected_row.push(elu(agg));
                }
            }
            for (c, e) in expected_row.iter().enumerate() {
                assert!(
                    (out.get(i, c) - e).abs() < 1e-12,
                    "node {i} dim {c}: {} vs {e}",
                    out.get(i, c)
                );
            }
        }
    }

    fn semantic_vars<'t>(tape: &'t Tape, rng: &mut ChaCha8Rng, dim: usize) -> SemanticVars<'t> {
        SemanticVars {
            w: tape.param(rand_matrix(rng, dim, dim), "w"),
            b: tape.param(rand_matrix(rng, 1, dim), "b"),
            q: tape.param(rand_matrix(rng, dim, 1), "q"),
        }
    }

    #[test]
    fn semantic_single_path_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tape = Tape::new();
        let z = tape.constant(rand_matrix(&mut rng, 3, 4));
        let sem = semantic_vars(&tape, &mut rng, 4);
        let out = semantic_attention(&[z], &sem).unwrap();
        assert_eq!(out.path_weights.value().scalar(), 1.0);
        assert_eq!(out.h.value(), z.value());
    }

    #[test]
    fn semantic_identical_paths_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tape = Tape::new();
        let z = tape.constant(rand_matrix(&mut rng, 3, 4));
        let sem = semantic_vars(&tape, &mut rng, 4);
        let out = semantic_attention(&[z, z], &sem).unwrap();
        let beta = out.path_weights.value();
        assert!((beta.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((beta.get(0, 1) - 0.5).abs() < 1e-12);
        let fused = out.h.value();
        for (a, b) in fused.data().iter().zip(z.value().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn semantic_two_paths_match_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dim = 3;
        let z0 = rand_matrix(&mut rng, 2, dim);
        let z1 = rand_matrix(&mut rng, 2, dim);
        let w = rand_matrix(&mut rng, dim, dim);
        let b = rand_matrix(&mut rng, 1, dim);
        let q = rand_matrix(&mut rng, dim, 1);

        let tape = Tape::new();
        let sem = SemanticVars {
            w: tape.param(w.clone(), "w"),
            b: tape.param(b.clone(), "b"),
            q: tape.param(q.clone(), "q"),
        };
        let zs = [tape.constant(z0.clone()), tape.constant(z1.clone())];
        let out = semantic_attention(&zs, &sem).unwrap();

        // Oracle with scalar loops.
        let score = |z: &Matrix| {
            let mut total = 0.0;
            for i in 0..2 {
                for c in 0..dim {
                    let mut t = b.get(0, c);
                    for t2 in 0..dim {
                        t += z.get(i, t2) * w.get(t2, c);
                    }
                    total += t.tanh() * q.get(c, 0);
                }
            }
            total / 2.0
        };
        let (w0, w1) = (score(&z0), score(&z1));
        let max = w0.max(w1);
        let b0 = (w0 - max).exp() / ((w0 - max).exp() + (w1 - max).exp());
        let beta = out.path_weights.value();
        assert!((beta.get(0, 0) - b0).abs() < 1e-12);
        let fused = out.h.value();
        for i in 0..2 {
            for c in 0..dim {
                let expected = b0 * z0.get(i, c) + (1.0 - b0) * z1.get(i, c);
                assert!((fused.get(i, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_celltype_cases() {
        let tape = Tape::new();
        // Singleton with weight one.
        let single = tape.constant(Matrix::row_vector(&[1.0, -2.0]));
        assert_eq!(init_celltype(single, &[1.0]).unwrap().value(), single.value());
        // Cancellation: 0.5 v + 0.5 (-v) = 0.
        let pair = tape.constant(Matrix::from_rows(&[vec![3.0, -1.0], vec![-3.0, 1.0]]));
        assert_eq!(
            init_celltype(pair, &[0.5, 0.5]).unwrap().value().data(),
            &[0.0, 0.0]
        );
        // Weighted sum [0.25, 0.75] of zero and constant-4 rows.
        let rows = tape.constant(Matrix::from_rows(&[vec![0.0, 0.0], vec![4.0, 4.0]]));
        assert_eq!(
            init_celltype(rows, &[0.25, 0.75]).unwrap().value().data(),
            &[3.0, 3.0]
        );
    }

    #[test]
    fn init_tissue_cases() {
        let tape = Tape::new();
        let v = tape.constant(Matrix::row_vector(&[2.0, 4.0]));
        assert_eq!(init_tissue(&[v]).unwrap().value(), v.value());
        let neg = v.scale(-1.0);
        assert_eq!(init_tissue(&[v, neg]).unwrap().value().data(), &[0.0, 0.0]);
        let one = tape.constant(Matrix::row_vector(&[1.0]));
        let two = tape.constant(Matrix::row_vector(&[2.0]));
        let six = tape.constant(Matrix::row_vector(&[6.0]));
        assert_eq!(init_tissue(&[one, two, six]).unwrap().value().scalar(), 3.0);
        assert!(init_tissue(&[]).is_err());
    }

    #[test]
    fn up_pool_singleton_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tape = Tape::new();
        let h_c = tape.constant(rand_matrix(&mut rng, 1, 4));
        let member = tape.constant(rand_matrix(&mut rng, 1, 4));
        let pool = tape.param(rand_matrix(&mut rng, 1, 8), "pool");
        let out = up_pool(&tape, h_c, member, pool).unwrap();
        assert_eq!(out.member_weights.value().scalar(), 1.0);
        let expected = h_c.add(member.elu()).unwrap().value();
        let got = out.h_celltype.value();
        for (a, b) in got.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn up_pool_identical_members_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tape = Tape::new();
        let h_c = tape.constant(rand_matrix(&mut rng, 1, 4));
        let row: Vec<f64> = (0..4).map(|_| rng.random()).collect();
        let members = tape.constant(Matrix::from_rows(&[row.clone(), row]));
        let pool = tape.param(rand_matrix(&mut rng, 1, 8), "pool");
        let out = up_pool(&tape, h_c, members, pool).unwrap();
        let gamma = out.member_weights.value();
        assert!((gamma.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((gamma.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn up_pool_three_members_match_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 4;
        let h_c = rand_matrix(&mut rng, 1, dim);
        let members = rand_matrix(&mut rng, 3, dim);
        let pool = rand_matrix(&mut rng, 1, 2 * dim);

        let tape = Tape::new();
        let out = up_pool(
            &tape,
            tape.constant(h_c.clone()),
            tape.constant(members.clone()),
            tape.param(pool.clone(), "pool"),
        )
        .unwrap();

        let leaky = |v: f64| if v >= 0.0 { v } else { ATTENTION_SLOPE * v };
        let elu = |v: f64| if v >= 0.0 { v } else { v.exp() - 1.0 };
        let mut logits = [0.0; 3];
        for (i, logit) in logits.iter_mut().enumerate() {
            let mut s = 0.0;
            for c in 0..dim {
                s += pool.get(0, c) * h_c.get(0, c) + pool.get(0, dim + c) * members.get(i, c);
            }
            *logit = leaky(s);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let gamma_oracle: Vec<f64> = logits.iter().map(|l| (l - max).exp() / denom).collect();
        let gamma = out.member_weights.value();
        for i in 0..3 {
            assert!((gamma.get(0, i) - gamma_oracle[i]).abs() < 1e-12);
        }
        let got = out.h_celltype.value();
        for c in 0..dim {
            let agg: f64 = (0..3).map(|i| gamma_oracle[i] * members.get(i, c)).sum();
            let expected = h_c.get(0, c) + elu(agg);
            assert!((got.get(0, c) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn down_pool_cases() {
        let tape = Tape::new();
        let members = tape.constant(Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]));
        let h_c = tape.constant(Matrix::row_vector(&[10.0, 20.0]));
        // Zero weight leaves a member unchanged; weight one adds h_c.
        let weights = tape.constant(Matrix::row_vector(&[0.0, 1.0]));
        let out = down_pool(members, h_c, weights).unwrap().value();
        assert_eq!(out.row(0), &[1.0, 1.0]);
        assert_eq!(out.row(1), &[12.0, 22.0]);
        // Scalar products: gamma = [0.2, 0.3, 0.5] against constant 10s.
        let members3 = tape.constant(Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ]));
        let h_c10 = tape.constant(Matrix::row_vector(&[10.0, 10.0]));
        let gamma = tape.constant(Matrix::row_vector(&[0.2, 0.3, 0.5]));
        let out3 = down_pool(members3, h_c10, gamma).unwrap().value();
        assert_eq!(out3.row(0), &[2.0, 2.0]);
        assert_eq!(out3.row(1), &[3.0, 3.0]);
        assert_eq!(out3.row(2), &[5.0, 5.0]);
        // Length mismatch is a contract error.
        let bad = tape.constant(Matrix::row_vector(&[1.0]));
        assert!(matches!(
            down_pool(members3, h_c10, bad),
            Err(TensorError::DimMismatch { op: "down_pool", .. })
        ));
    }
}
