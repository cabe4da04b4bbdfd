//! Central finite-difference gradient checking.
//!
//! The checker treats the model as a black-box scalar function of a list of
//! parameter matrices and never touches the tape's backward rules, so it
//! serves as an independent oracle for them.

use crate::matrix::Matrix;

/// Result of comparing one parameter tensor's analytic gradient against
/// central finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    /// ||fd - analytic||_2 / max(||fd||_2, ||analytic||_2, floor)
    pub rel_error: f64,
    pub fd_norm: f64,
    pub analytic_norm: f64,
}

/// Central finite-difference gradient of `f` with respect to `params[index]`.
///
/// `f` is re-evaluated with each entry perturbed by +-eps; all other
/// parameters stay fixed.
pub fn finite_difference_grad(
    params: &[Matrix],
    index: usize,
    eps: f64,
    mut f: impl FnMut(&[Matrix]) -> f64,
) -> Matrix {
    let mut work: Vec<Matrix> = params.to_vec();
    let (rows, cols) = params[index].shape();
    let mut grad = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let orig = work[index].get(i, j);
            work[index].set(i, j, orig + eps);
            let plus = f(&work);
            work[index].set(i, j, orig - eps);
            let minus = f(&work);
            work[index].set(i, j, orig);
            grad.set(i, j, (plus - minus) / (2.0 * eps));
        }
    }
    grad
}

/// Norm floor for the relative-error denominator. Central differences with
/// eps = 1e-5 on a loss of order one carry roundoff of about
/// |f| * eps_machine / (2 eps) ~ 5e-12 per entry, so gradient tensors with
/// norms below ~1e-6 cannot support a 1e-4 relative comparison; they are
/// effectively compared absolutely at 1e-10.
pub const NORM_FLOOR: f64 = 1e-6;

/// Compares analytic gradients (one per parameter, aligned with `params`)
/// against central finite differences of `f`. Relative error is computed
/// per tensor on gradient norms, with the denominator floored at
/// [`NORM_FLOOR`] so near-zero gradients are held to an absolute standard
/// instead of a spurious relative one.
pub fn compare_gradients(
    names: &[&str],
    params: &[Matrix],
    analytic: &[Matrix],
    eps: f64,
    mut f: impl FnMut(&[Matrix]) -> f64,
) -> Vec<GradCheckEntry> {
    assert_eq!(params.len(), analytic.len(), "one analytic gradient per parameter");
    let mut out = Vec::with_capacity(params.len());
    for idx in 0..params.len() {
        let fd = finite_difference_grad(params, idx, eps, &mut f);
        assert_eq!(fd.shape(), analytic[idx].shape(), "gradient shape for {}", names[idx]);
        let mut diff = fd.clone();
        for (d, a) in diff.data_mut().iter_mut().zip(analytic[idx].data()) {
            *d -= a;
        }
        let fd_norm = fd.frobenius_norm();
        let an_norm = analytic[idx].frobenius_norm();
        let denom = fd_norm.max(an_norm).max(NORM_FLOOR);
        out.push(GradCheckEntry {
            name: names[idx].to_string(),
            rel_error: diff.frobenius_norm() / denom,
            fd_norm,
            analytic_norm: an_norm,
        });
    }
    out
}

/// Largest per-tensor relative error from [`compare_gradients`].
pub fn max_rel_error(entries: &[GradCheckEntry]) -> f64 {
    entries.iter().fold(0.0, |m, e| m.max(e.rel_error))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn quadratic_gradient_matches() {
        // f(x) = sum(x^2) has gradient 2x.
        let x = Matrix::row_vector(&[0.3, -0.7, 1.1]);
        let analytic = x.scaled(2.0);
        let entries = compare_gradients(&["x"], &[x], &[analytic], 1e-6, |p| {
            p[0].data().iter().map(|v| v * v).sum()
        });
        assert!(entries[0].rel_error < 1e-9, "rel error {}", entries[0].rel_error);
    }

    #[test]
    fn sum_of_matmul_gradient_matches_tape() {
        let mut seed = 42u64;
        let mut next = move || {
            // xorshift; test-local randomness without pulling in rng deps here
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed % 2000) as f64 / 1000.0 - 1.0
        };
        let a = Matrix::from_fn(3, 4, |_, _| next());
        let b = Matrix::from_fn(4, 2, |_, _| next());

        let tape = Tape::new();
        let av = tape.param(a.clone(), "a");
        let bv = tape.param(b.clone(), "b");
        let loss = av.matmul(bv).unwrap().sum_all();
        tape.backward(loss).unwrap();

        let entries = compare_gradients(
            &["a", "b"],
            &[a, b],
            &[av.grad().unwrap(), bv.grad().unwrap()],
            1e-6,
            |p| {
                let t = Tape::new();
                let x = t.constant(p[0].clone());
                let y = t.constant(p[1].clone());
                x.matmul(y).unwrap().sum_all().value().scalar()
            },
        );
        assert!(max_rel_error(&entries) < 1e-6, "entries: {entries:?}");
    }
}
