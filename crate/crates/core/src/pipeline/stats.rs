use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Population skewness `m₃ / m₂^{3/2}`.
pub fn skewness(values: &[f64]) -> Result<f64, PipelineError> {
    if values.len() < 3 {
        return Err(PipelineError::Input(format!(
            "skewness needs at least 3 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if m2 <= 0.0 {
        return Err(PipelineError::ZeroVariance);
    }
    Ok(m3 / m2.powf(1.5))
}

/// Per-indicator and variance-weighted coefficient of determination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Report {
    /// `None` where the target has zero variance.
    pub per_indicator: Vec<Option<f64>>,
    /// `Σ var(yⱼ)·R²ⱼ / Σ var(yⱼ)` over defined indicators.
    pub overall: Option<f64>,
    pub samples: usize,
}

impl R2Report {
    /// Defined scores only.
    pub fn defined(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_indicator.iter().flatten().copied()
    }
}

pub fn r2_score(pred: &[Vec<f64>], actual: &[Vec<f64>]) -> Result<R2Report, PipelineError> {
    if pred.len() != actual.len() {
        return Err(PipelineError::Input(format!(
            "{} predictions for {} targets",
            pred.len(),
            actual.len()
        )));
    }
    if actual.len() < 2 {
        return Err(PipelineError::Input("r2 needs at least 2 samples".into()));
    }
    let width = actual[0].len();
    if actual.iter().chain(pred).any(|r| r.len() != width) {
        return Err(PipelineError::Input("ragged prediction/target rows".into()));
    }
    let n = actual.len() as f64;
    let mut per_indicator = Vec::with_capacity(width);
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..width {
        let mean = actual.iter().map(|r| r[j]).sum::<f64>() / n;
        let ss_tot: f64 = actual.iter().map(|r| (r[j] - mean).powi(2)).sum();
        let ss_res: f64 = pred.iter().zip(actual).map(|(p, a)| (p[j] - a[j]).powi(2)).sum();
        if ss_tot <= 0.0 {
            per_indicator.push(None);
            continue;
        }
        let r2 = 1.0 - ss_res / ss_tot;
        per_indicator.push(Some(r2));
        let var = ss_tot / n;
        num += var * r2;
        den += var;
    }
    Ok(R2Report {
        per_indicator,
        overall: (den > 0.0).then(|| num / den),
        samples: actual.len(),
    })
}

/// Mean over rows of `½‖f − y‖²`, the per-sample Euclidean loss.
pub fn mean_euclidean_loss(pred: &[Vec<f64>], actual: &[Vec<f64>]) -> f64 {
    let total: f64 = row_euclidean_losses(pred, actual).iter().sum();
    total / pred.len().max(1) as f64
}

pub fn row_euclidean_losses(pred: &[Vec<f64>], actual: &[Vec<f64>]) -> Vec<f64> {
    pred.iter()
        .zip(actual)
        .map(|(p, a)| 0.5 * p.iter().zip(a).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .collect()
}
