use super::{Network, NnError, Tensor};

/// `(1/2M) Σ_i Σ_j (f_i^j − y_i^j)²` and its gradient `(f − y)/M` for `M` rows.
pub fn euclidean_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::ShapeMismatch {
            expected: pred.shape().to_vec(),
            actual: target.shape().to_vec(),
        });
    }
    let m = pred.rows().max(1) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(f, y)| {
            let diff = f - y;
            loss += diff * diff;
            diff / m
        })
        .collect();
    Ok((loss / (2.0 * m), Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Per-row Euclidean loss `½ Σ_j (f^j − y^j)²`.
pub fn row_losses(pred: &Tensor, target: &Tensor) -> Result<Vec<f64>, NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::ShapeMismatch {
            expected: pred.shape().to_vec(),
            actual: target.shape().to_vec(),
        });
    }
    Ok((0..pred.rows())
        .map(|i| {
            0.5 * pred
                .row(i)
                .iter()
                .zip(target.row(i))
                .map(|(f, y)| (f - y) * (f - y))
                .sum::<f64>()
        })
        .collect())
}

/// `C(θ) = loss + (d/2) Σ_l d_l Σ (w^l)²`
pub fn regularized_objective(net: &Network, loss: f64, weight_decay: f64) -> f64 {
    loss + 0.5 * weight_decay * net.weighted_square_norm()
}
