use crate::autodiff::Tensor;

/// Asymmetric proximity weights for a document of `clauses` clauses:
/// `A[p][q] = (C − |p − q − 1| + ε) / (C + ε)`.
///
/// The peak of 1 sits on the subdiagonal `p = q + 1` (cause right before
/// its emotion); weights decay linearly with distance from it.
pub fn position_weights(clauses: usize, epsilon: f64) -> Tensor {
    assert!(clauses >= 1, "position weights need at least one clause");
    let c = clauses as f64;
    let mut data = Vec::with_capacity(clauses * clauses);
    for p in 0..clauses as i64 {
        for q in 0..clauses as i64 {
            let dist = (p - q - 1).unsigned_abs() as f64;
            data.push((c - dist + epsilon) / (c + epsilon));
        }
    }
    Tensor::new(vec![clauses, clauses], data).expect("square")
}
