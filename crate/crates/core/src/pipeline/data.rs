use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::imageops::{self, FilterType};
use image::{GrayImage, ImageFormat};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::seed::rng_for;

/// Offset subtracted from raw pixel values before they enter a network.
pub const PIXEL_CENTER: f64 = 127.5;

/// Network input for a grayscale image: `[1, H, W]` row-major raw pixel values
/// minus [`PIXEL_CENTER`].
pub fn image_input(image: &GrayImage) -> Vec<f64> {
    image.as_raw().iter().map(|&p| p as f64 - PIXEL_CENTER).collect()
}

/// Centre crop of side `size`, upscaled back to the original extent.
pub fn small_context(image: &GrayImage, size: u32) -> GrayImage {
    let (w, h) = image.dimensions();
    let size = size.min(w).min(h);
    let crop = imageops::crop_imm(image, (w - size) / 2, (h - size) / 2, size, size).to_image();
    imageops::resize(&crop, w, h, FilterType::Nearest)
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<(), PipelineError> {
    let file = BufWriter::new(File::create(path)?);
    let encoder =
        PnmEncoder::new(file).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    image.write_with_encoder(encoder)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, PipelineError> {
    let reader = BufReader::new(File::open(path)?);
    Ok(image::load(reader, ImageFormat::Pnm)?.into_luma8())
}

/// Disjoint, exhaustive train/test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Seeded shuffle of `0..n`, then the first `train_fraction` (rounded) go to train.
pub fn split(n: usize, train_fraction: f64, seed: u64) -> Result<Split, PipelineError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(PipelineError::Input(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, "split"));
    let cut = (n as f64 * train_fraction).round() as usize;
    let test = order.split_off(cut);
    Ok(Split {
        train: order,
        test,
        seed,
    })
}

/// Shuffled 80/20 train/test split.
pub fn split_8_2(n: usize, seed: u64) -> Split {
    split(n, 0.8, seed).expect("0.8 is a valid fraction")
}

pub fn select<T: Clone>(items: &[T], indices: &[usize]) -> Vec<T> {
    indices.iter().map(|&i| items[i].clone()).collect()
}
