//! Post-hoc analyses over trained models and prediction fields: occlusion
//! heatmaps, gradient edge alerts, temporal replay and choropleth rasters.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{PipelineError, Predictor, PIXEL_CENTER};

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SpatialError + '_ {
    move |source| SpatialError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A raster of one indicator; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoGrid {
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub values: Vec<Option<f64>>,
}

impl GeoGrid {
    pub fn new(width: usize, height: usize, values: Vec<Option<f64>>) -> Result<Self, SpatialError> {
        if values.len() != width * height {
            return Err(SpatialError::Input(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SpatialError::Input("grid holds a non-finite value".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| Some(f(x, y)))
            .collect();
        Self {
            width,
            height,
            values,
        }
    }

    /// Scatter `(x, y, value)` cells onto an otherwise missing grid.
    pub fn from_cells(width: usize, height: usize, cells: &[(usize, usize, f64)]) -> Result<Self, SpatialError> {
        let mut values = vec![None; width * height];
        for &(x, y, v) in cells {
            if x >= width || y >= height {
                return Err(SpatialError::Input(format!("cell ({x}, {y}) outside {width}x{height}")));
            }
            values[y * width + x] = Some(v);
        }
        Self::new(width, height, values)
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.values[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v.map(&f)).collect(),
        }
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        self.values.iter().flatten().fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// One CSV row per grid row; missing cells are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for row in self.values.chunks(self.width) {
            w.write_record(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Min-max scaled grayscale rendering, one pixel per cell; missing cells are black.
pub fn grid_to_gray(grid: &GeoGrid) -> GrayImage {
    let (lo, hi) = grid.range().unwrap_or((0.0, 1.0));
    let span = if hi > lo { hi - lo } else { 1.0 };
    GrayImage::from_fn(grid.width as u32, grid.height as u32, |x, y| {
        let v = grid.get(x as usize, y as usize).map_or(0.0, |v| (v - lo) / span * 255.0);
        image::Luma([v.round().clamp(0.0, 255.0) as u8])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionOptions {
    pub occluder: u32,
    pub stride: u32,
    /// Raw pixel value painted over the occluded patch.
    pub fill: f64,
}

impl Default for OcclusionOptions {
    fn default() -> Self {
        Self {
            occluder: 16,
            stride: 8,
            fill: PIXEL_CENTER,
        }
    }
}

/// Mean raw pixel value across a set of images, the default occluder fill.
pub fn dataset_mean_pixel(images: &[GrayImage]) -> f64 {
    let (sum, n) = images.iter().fold((0.0, 0usize), |(s, n), img| {
        (s + img.pixels().map(|p| p.0[0] as f64).sum::<f64>(), n + img.len())
    });
    if n == 0 {
        PIXEL_CENTER
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionHeatmap {
    pub indicator: usize,
    pub occluder: u32,
    pub stride: u32,
    /// Prediction on the unoccluded image.
    pub baseline: f64,
    /// Raw predictions, one per placement; `x` is the column.
    pub values: GeoGrid,
}

impl OcclusionHeatmap {
    /// Change relative to the unoccluded prediction.
    pub fn deltas(&self) -> GeoGrid {
        self.values.map(|v| v - self.baseline)
    }
}

/// Patch origins along one axis: `⌈(extent − occluder)/stride⌉ + 1` of them, the last
/// one pulled back so the patch stays inside the image.
fn placements(extent: u32, occluder: u32, stride: u32) -> Vec<u32> {
    let span = extent - occluder;
    let count = span.div_ceil(stride) + 1;
    (0..count).map(|i| (i * stride).min(span)).collect()
}

pub fn occlusion_heatmap<P: Predictor + ?Sized>(
    model: &P,
    image: &GrayImage,
    indicator: usize,
    options: &OcclusionOptions,
) -> Result<OcclusionHeatmap, SpatialError> {
    let (w, h) = image.dimensions();
    let OcclusionOptions { occluder, stride, fill } = *options;
    if occluder == 0 || stride == 0 {
        return Err(SpatialError::Input("occluder and stride must be positive".into()));
    }
    if occluder > w || occluder > h {
        return Err(SpatialError::Input(format!(
            "occluder {occluder} larger than image {w}x{h}"
        )));
    }
    if indicator >= model.output_width() {
        return Err(SpatialError::Input(format!(
            "indicator {indicator} outside model output width {}",
            model.output_width()
        )));
    }
    let base: Vec<f64> = image.pixels().map(|p| p.0[0] as f64 - PIXEL_CENTER).collect();
    let baseline = model.predict_checked(&base)?[indicator];
    let xs = placements(w, occluder, stride);
    let ys = placements(h, occluder, stride);
    let fill = fill - PIXEL_CENTER;
    let mut values = Vec::with_capacity(xs.len() * ys.len());
    let mut input = base.clone();
    for &oy in &ys {
        for &ox in &xs {
            input.copy_from_slice(&base);
            for y in oy..oy + occluder {
                let row = (y * w) as usize;
                input[row + ox as usize..row + (ox + occluder) as usize].fill(fill);
            }
            values.push(Some(model.predict(&input)[indicator]));
        }
    }
    Ok(OcclusionHeatmap {
        indicator,
        occluder,
        stride,
        baseline,
        values: GeoGrid::new(xs.len(), ys.len(), values)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Threshold {
    Fixed(f64),
    /// Percentile (0–100) of the finite gradient magnitudes.
    Percentile(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Percentile(90.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMap {
    pub magnitude: GeoGrid,
    pub mask: Vec<bool>,
    pub threshold: f64,
}

impl EdgeMap {
    pub fn edge_cells(&self) -> Vec<(usize, usize)> {
        let w = self.magnitude.width;
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i % w, i / w))
            .collect()
    }
}

/// Finite difference along one axis at position `i`: central where both neighbours
/// exist, one-sided at borders or next to a missing cell, 0 when isolated.
fn difference(at: impl Fn(isize) -> Option<f64>, i: isize) -> f64 {
    let here = at(i).expect("difference taken at a present cell");
    match (at(i - 1), at(i + 1)) {
        (Some(a), Some(b)) => (b - a) / 2.0,
        (None, Some(b)) => b - here,
        (Some(a), None) => here - a,
        (None, None) => 0.0,
    }
}

/// Linear-interpolated percentile of a sorted slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

pub fn detect_edges(grid: &GeoGrid, policy: Threshold) -> Result<EdgeMap, SpatialError> {
    let (w, h) = (grid.width, grid.height);
    if w < 2 || h < 2 {
        return Err(SpatialError::Input(format!("grid {w}x{h} is smaller than 2x2")));
    }
    if grid.values.iter().all(Option::is_none) {
        return Err(SpatialError::Input("every grid cell is missing".into()));
    }
    let cell = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            None
        } else {
            grid.get(x as usize, y as usize)
        }
    };
    let mut magnitude = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            magnitude.push(cell(x, y).map(|_| {
                let gx = difference(|i| cell(i, y), x);
                let gy = difference(|j| cell(x, j), y);
                gx.hypot(gy)
            }));
        }
    }
    let threshold = match policy {
        Threshold::Fixed(t) => t,
        Threshold::Percentile(p) => {
            if !(0.0..=100.0).contains(&p) {
                return Err(SpatialError::Input(format!("percentile {p} outside [0, 100]")));
            }
            let mut sorted: Vec<f64> = magnitude.iter().flatten().copied().collect();
            sorted.sort_by(f64::total_cmp);
            percentile(&sorted, p)
        }
    };
    let mask = magnitude.iter().map(|m| m.is_some_and(|v| v > threshold)).collect();
    Ok(EdgeMap {
        magnitude: GeoGrid::new(w, h, magnitude)?,
        mask,
        threshold,
    })
}

/// One forward pass per image, in sequence order.
pub fn temporal_track<P: Predictor + ?Sized>(
    model: &P,
    images: &[GrayImage],
) -> Result<Vec<Vec<f64>>, SpatialError> {
    if images.len() < 2 {
        return Err(SpatialError::Input(format!("need at least 2 images, got {}", images.len())));
    }
    let dims = images[0].dimensions();
    if let Some(i) = images.iter().position(|img| img.dimensions() != dims) {
        return Err(SpatialError::Input(format!(
            "image {i} is {:?}, expected {dims:?}",
            images[i].dimensions()
        )));
    }
    images
        .iter()
        .map(|img| Ok(model.predict_checked(&crate::pipeline::image_input(img))?))
        .collect()
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tied ranks averaged; `None` if either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Equal-width colour classes over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
    pub lo: f64,
    pub hi: f64,
    pub missing: [u8; 3],
}

/// Sequential blue to yellow ramp.
pub const DEFAULT_COLORS: [[u8; 3]; 8] = [
    [68, 1, 84],
    [70, 50, 127],
    [54, 92, 141],
    [39, 127, 142],
    [31, 161, 135],
    [74, 194, 109],
    [159, 218, 58],
    [253, 231, 37],
];

pub const MISSING_COLOR: [u8; 3] = [255, 0, 255];

impl Palette {
    pub fn new(colors: Vec<[u8; 3]>, lo: f64, hi: f64) -> Result<Self, SpatialError> {
        if colors.is_empty() || !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(SpatialError::Input(format!(
                "palette needs colours and a finite range, got {} colours on [{lo}, {hi}]",
                colors.len()
            )));
        }
        Ok(Self {
            colors,
            lo,
            hi,
            missing: MISSING_COLOR,
        })
    }

    /// Default ramp stretched over the grid's value range.
    pub fn for_grid(grid: &GeoGrid) -> Self {
        let (lo, hi) = grid.range().unwrap_or((0.0, 1.0));
        Self {
            colors: DEFAULT_COLORS.to_vec(),
            lo,
            hi,
            missing: MISSING_COLOR,
        }
    }

    pub fn class(&self, v: f64) -> usize {
        let n = self.colors.len();
        if self.hi <= self.lo {
            return 0;
        }
        let t = (v - self.lo) / (self.hi - self.lo);
        ((t * n as f64).floor().max(0.0) as usize).min(n - 1)
    }

    pub fn color(&self, v: Option<f64>) -> [u8; 3] {
        v.map_or(self.missing, |v| self.colors[self.class(v)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub lo: f64,
    pub hi: f64,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Legend {
    pub classes: Vec<LegendEntry>,
    pub missing: [u8; 3],
    pub cell_pixels: u32,
}

impl Legend {
    pub fn of(palette: &Palette, cell_pixels: u32) -> Self {
        let n = palette.colors.len();
        let step = (palette.hi - palette.lo) / n as f64;
        Self {
            classes: palette
                .colors
                .iter()
                .enumerate()
                .map(|(i, &color)| LegendEntry {
                    lo: palette.lo + step * i as f64,
                    hi: palette.lo + step * (i + 1) as f64,
                    color,
                })
                .collect(),
            missing: palette.missing,
            cell_pixels,
        }
    }
}

pub fn choropleth_image(grid: &GeoGrid, palette: &Palette, cell_pixels: u32) -> RgbImage {
    let c = cell_pixels.max(1);
    RgbImage::from_fn(grid.width as u32 * c, grid.height as u32 * c, |x, y| {
        Rgb(palette.color(grid.get((x / c) as usize, (y / c) as usize)))
    })
}

/// Write the PNG raster and a JSON legend next to it (same stem, `.json`).
pub fn render_choropleth(
    grid: &GeoGrid,
    palette: &Palette,
    cell_pixels: u32,
    path: &Path,
) -> Result<PathBuf, SpatialError> {
    let img = choropleth_image(grid, palette, cell_pixels);
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    img.write_to(&mut out, image::ImageFormat::Png)?;
    out.flush().map_err(io_err(path))?;
    let legend_path = path.with_extension("json");
    let legend = serde_json::to_string_pretty(&Legend::of(palette, cell_pixels))?;
    std::fs::write(&legend_path, legend).map_err(io_err(&legend_path))?;
    Ok(legend_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_counts() {
        assert_eq!(placements(64, 16, 8), vec![0, 8, 16, 24, 32, 40, 48]);
        assert_eq!(placements(64, 16, 16), vec![0, 16, 32, 48]);
        assert_eq!(placements(20, 16, 3), vec![0, 3, 4]);
        assert_eq!(placements(16, 16, 8), vec![0]);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![2.5, 0.0, 2.5, 1.0]);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 25.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[0.0, 1.0]), None);
    }

    #[test]
    fn percentile_interpolates() {
        let s = [0.0, 10.0, 20.0, 30.0, 40.0];
        assert_eq!(percentile(&s, 50.0), 20.0);
        assert_eq!(percentile(&s, 90.0), 36.0);
        assert_eq!(percentile(&s, 100.0), 40.0);
    }
}
