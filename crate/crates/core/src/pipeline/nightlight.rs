use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::data::{image_input, small_context};
use super::{run_split, split_8_2, NightCell, PipelineError, SplitRun, TrainConfig};
use crate::nn::Network;
use crate::seed::derive_seed;

/// How much of the scene around the village the network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Context {
    /// The full image.
    Large,
    /// A centred crop of this side length, upscaled to the full extent.
    Small(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NightlightConfig {
    pub train: TrainConfig,
    pub context: Context,
    pub split_seed: u64,
}

impl NightlightConfig {
    /// A scalar target gets a fraction of the gradient signal of the 16 correlated
    /// asset indicators, so the desk learning rate is raised accordingly.
    pub fn desk(seed: u64) -> Self {
        let mut train = TrainConfig::desk(derive_seed(seed, "train"));
        train.sgd.learning_rate = 2e-3;
        Self {
            train,
            context: Context::Large,
            split_seed: derive_seed(seed, "split"),
        }
    }
}

pub fn context_input(image: &GrayImage, context: Context) -> Vec<f64> {
    match context {
        Context::Large => image_input(image),
        Context::Small(size) => image_input(&small_context(image, size)),
    }
}

/// Scalar regression of quantized night intensity from daytime imagery;
/// `images[i]` belongs to `cells[i]`. Evaluated on a held-out 20%.
pub fn train_nightlight(
    cells: &[NightCell],
    images: &[GrayImage],
    template: Network,
    config: &NightlightConfig,
) -> Result<SplitRun, PipelineError> {
    if cells.len() != images.len() {
        return Err(PipelineError::Input(format!(
            "{} cells but {} images",
            cells.len(),
            images.len()
        )));
    }
    if template.output_width() != 1 {
        return Err(PipelineError::Input("night-light network must have one output".into()));
    }
    let inputs: Vec<Vec<f64>> = images.iter().map(|i| context_input(i, config.context)).collect();
    let targets: Vec<Vec<f64>> = cells.iter().map(|c| vec![c.intensity as f64]).collect();
    let split = split_8_2(cells.len(), config.split_seed);
    run_split(template, &inputs, &targets, &split, &config.train)
}
