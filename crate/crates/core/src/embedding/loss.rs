use ndarray::{Array2, ArrayView2, Zip};

use super::EmbeddingError;
use crate::Scalar;

fn check(a: &ArrayView2<'_, impl Scalar>, p: (usize, usize), n: (usize, usize)) -> Result<(), EmbeddingError> {
    if a.dim() != p {
        return Err(EmbeddingError::ShapeMismatch {
            expected: a.dim(),
            actual: p,
        });
    }
    if a.dim() != n {
        return Err(EmbeddingError::ShapeMismatch {
            expected: a.dim(),
            actual: n,
        });
    }
    Ok(())
}

fn sq_dist<T: Scalar>(x: ndarray::ArrayView1<'_, T>, y: ndarray::ArrayView1<'_, T>) -> T {
    x.iter().zip(y).map(|(&u, &v)| (u - v) * (u - v)).sum()
}

/// `Σ_c [‖a_c − p_c‖² − ‖a_c − n_c‖² + α]_+` over the rows of C × D embeddings.
pub fn triplet_loss<T: Scalar>(
    a: ArrayView2<'_, T>,
    p: ArrayView2<'_, T>,
    n: ArrayView2<'_, T>,
    margin: T,
) -> Result<T, EmbeddingError> {
    check(&a, p.dim(), n.dim())?;
    Ok(a.outer_iter()
        .zip(p.outer_iter())
        .zip(n.outer_iter())
        .map(|((a, p), n)| (sq_dist(a, p) - sq_dist(a, n) + margin).max(T::zero()))
        .sum())
}

/// Per-row loss term before the hinge.
pub fn triplet_term<T: Scalar>(
    a: ndarray::ArrayView1<'_, T>,
    p: ndarray::ArrayView1<'_, T>,
    n: ndarray::ArrayView1<'_, T>,
    margin: T,
) -> T {
    sq_dist(a, p) - sq_dist(a, n) + margin
}

/// Loss and its gradients with respect to `a`, `p` and `n`.
///
/// Rows whose hinge is inactive (term ≤ 0) contribute zero gradient.
pub fn triplet_loss_grad<T: Scalar>(
    a: ArrayView2<'_, T>,
    p: ArrayView2<'_, T>,
    n: ArrayView2<'_, T>,
    margin: T,
) -> Result<(T, [Array2<T>; 3]), EmbeddingError> {
    check(&a, p.dim(), n.dim())?;
    let mut ga = Array2::zeros(a.dim());
    let mut gp = Array2::zeros(a.dim());
    let mut gn = Array2::zeros(a.dim());
    let two = T::lit(2.0);
    let mut loss = T::zero();
    for c in 0..a.nrows() {
        let term = triplet_term(a.row(c), p.row(c), n.row(c), margin);
        if term <= T::zero() {
            continue;
        }
        loss = loss + term;
        Zip::from(ga.row_mut(c))
            .and(gp.row_mut(c))
            .and(gn.row_mut(c))
            .and(a.row(c))
            .and(p.row(c))
            .and(n.row(c))
            .for_each(|ga, gp, gn, &a, &p, &n| {
                *ga = two * (n - p);
                *gp = two * (p - a);
                *gn = two * (a - n);
            });
    }
    Ok((loss, [ga, gp, gn]))
}
