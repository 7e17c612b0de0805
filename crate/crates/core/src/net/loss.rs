use super::scalar::Scalar;

/// Weighted multi-class cross-entropy over `rows` queries that all share the
/// same `target` class.
///
/// Returns `w · mean_q(−log softmax(y_q)[target])` and its gradient with
/// respect to the logits. The log-probabilities are computed with a
/// log-sum-exp so no literal `log(0)` occurs. With `w = 0` the loss and the
/// gradient are exactly zero.
pub fn weighted_cross_entropy<T: Scalar>(logits: &[T], u: usize, target: usize, weight: T) -> (T, Vec<T>) {
    assert!(target < u, "target {target} out of range for {u} classes");
    let rows = logits.len() / u;
    let mut grad = vec![T::zero(); logits.len()];
    if weight == T::zero() || rows == 0 {
        return (T::zero(), grad);
    }
    let scale = weight / T::of(rows as f64);
    let mut total = T::zero();
    for (row, g) in logits.chunks_exact(u).zip(grad.chunks_exact_mut(u)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total = total + (lse - row[target]);
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            let onehot = if j == target { T::one() } else { T::zero() };
            *gj = scale * (p - onehot);
        }
    }
    (total * scale, grad)
}
