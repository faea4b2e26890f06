use serde::{Deserialize, Serialize};

use super::{fit_regressor, mean_euclidean_loss, row_euclidean_losses, select, Predictor};
use super::{PipelineError, Split, TrainConfig};
use crate::census::{mahalanobis_filter, AssetVector, MahalanobisOptions};
use crate::nn::Network;

/// Direct regression with and without Mahalanobis rejection of training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierComparison {
    /// Test Euclidean loss over test rows the filter keeps.
    pub loss_with_rejection: f64,
    pub loss_without_rejection: f64,
    /// Mean per-row loss of the rejection-trained model over planted outlier rows.
    pub outlier_mean_loss: Option<f64>,
    pub clean_mean_loss: f64,
    pub rejected: usize,
    pub planted_rejected: usize,
    pub test_rows: usize,
}

pub fn compare_outlier_rejection(
    template: Network,
    inputs: &[Vec<f64>],
    assets: &[AssetVector],
    planted: &[bool],
    split: &Split,
    train: &TrainConfig,
    filter: &MahalanobisOptions,
) -> Result<OutlierComparison, PipelineError> {
    if inputs.len() != assets.len() || planted.len() != assets.len() {
        return Err(PipelineError::Input("inputs, assets and outlier flags differ in length".into()));
    }
    let report = mahalanobis_filter(assets, filter)?;
    let targets: Vec<Vec<f64>> = assets.iter().map(|a| a.0.to_vec()).collect();
    let kept_train: Vec<usize> = split.train.iter().copied().filter(|&i| !report.rejected[i]).collect();
    let kept_test: Vec<usize> = split.test.iter().copied().filter(|&i| !report.rejected[i]).collect();
    if kept_train.is_empty() || kept_test.is_empty() {
        return Err(PipelineError::Input("outlier filter left an empty split".into()));
    }

    let (with, _) = fit_regressor(
        template.clone(),
        &select(inputs, &kept_train),
        &select(&targets, &kept_train),
        train,
    )?;
    let (without, _) = fit_regressor(
        template,
        &select(inputs, &split.train),
        &select(&targets, &split.train),
        train,
    )?;
    let test_inputs = select(inputs, &kept_test);
    let test_targets = select(&targets, &kept_test);
    let loss_with_rejection = mean_euclidean_loss(&with.predict_all(&test_inputs)?, &test_targets);
    let loss_without_rejection =
        mean_euclidean_loss(&without.predict_all(&test_inputs)?, &test_targets);

    let rows = row_euclidean_losses(&with.predict_all(inputs)?, &targets);
    let mean_where = |want: bool| {
        let v: Vec<f64> = rows.iter().zip(planted).filter(|(_, &p)| p == want).map(|(l, _)| *l).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(OutlierComparison {
        loss_with_rejection,
        loss_without_rejection,
        outlier_mean_loss: mean_where(true),
        clean_mean_loss: mean_where(false).unwrap_or(0.0),
        rejected: report.rejected.iter().filter(|&&r| r).count(),
        planted_rejected: report.rejected.iter().zip(planted).filter(|(&r, &p)| r && p).count(),
        test_rows: kept_test.len(),
    })
}
