//! Training flows, evaluation metrics and the synthetic planted world.

mod data;
mod nightlight;
mod outliers;
mod stats;
mod synth;
mod train;
mod undersample;

pub use data::{image_input, read_pgm, PIXEL_CENTER, select, small_context, split, split_8_2, write_pgm, Split};
pub use nightlight::{context_input, train_nightlight, Context, NightlightConfig};
pub use outliers::{compare_outlier_rejection, OutlierComparison};
pub use stats::{mean_euclidean_loss, r2_score, row_euclidean_losses, skewness, R2Report};
pub use synth::{render_village, synth_generate, Relation, SynthConfig, Village, World};
pub use train::{
    fit_regressor, placebo_check, placebo_with_permutation, predict_village, run_split, train,
    Predictor, Regressor, SplitRun, TargetScaler, TileMode, TrainConfig, TrainOutcome,
};
pub use undersample::{undersample_skew, NightCell, MAX_INTENSITY};

use thiserror::Error;

use crate::census::CensusError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("zero variance")]
    ZeroVariance,
    #[error("skewness target {target} unreachable; best achieved {achieved}")]
    SkewUnreachable { target: f64, achieved: f64 },
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },
    #[error("non-finite gradient in layer {layer} at iteration {iteration}")]
    NonFiniteGradient { iteration: u64, layer: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Census(#[from] CensusError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
