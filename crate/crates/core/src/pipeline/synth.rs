use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use image::{GrayImage, Luma};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::{image_input, read_pgm, write_pgm};
use super::{NightCell, PipelineError};
use crate::census::{
    aggregate_assets, read_census_csv, referenced_columns, write_census_csv, AssetVector,
    CensusRow, CENSUS_COLUMNS,
};
use crate::seed::{derive_seed, rng_for};
use crate::transfer::IndicatorTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Linear,
    MonotoneNonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub villages: usize,
    pub extent: u32,
    pub relation: Relation,
    /// Census noise std as a multiple of each column's signal std.
    pub noise: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
    pub district_size: usize,
    /// District-level census enumeration bias, as a multiple of column signal std.
    pub census_bias: f64,
    /// Candidate settlement centres per village image.
    pub blobs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            villages: 2000,
            extent: 64,
            relation: Relation::MonotoneNonlinear,
            noise: 0.1,
            outlier_fraction: 0.0,
            seed: 0,
            district_size: 11,
            census_bias: 0.0,
            blobs: 6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Input(m.to_string()));
        if self.villages == 0 {
            return bad("village count must be positive");
        }
        if self.extent < 16 {
            return bad("image extent must be at least 16");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise level must be non-negative");
        }
        if !(0.0..0.5).contains(&self.outlier_fraction) {
            return bad("outlier fraction must lie in [0, 0.5)");
        }
        if !(self.census_bias >= 0.0 && self.census_bias.is_finite()) {
            return bad("census bias must be non-negative");
        }
        if self.district_size == 0 || self.blobs == 0 {
            return bad("district size and blob count must be positive");
        }
        Ok(())
    }

    pub fn outlier_count(&self) -> usize {
        (self.outlier_fraction * self.villages as f64).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Village {
    pub id: String,
    pub district: String,
    pub x: usize,
    pub y: usize,
    /// Latent development level in `[0, 1]`.
    pub development: f64,
    /// Fraction of image pixels that are built up.
    pub built_up: f64,
    pub image: GrayImage,
    pub census: CensusRow,
    pub night: u8,
    pub outlier: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: SynthConfig,
    pub width: usize,
    pub height: usize,
    pub villages: Vec<Village>,
    pub indicators: IndicatorTable,
}

/// Built-up coverage reached at development 1, roughly.
const FULL_COVERAGE: f64 = 0.35;
const NEGATIVE_COLUMNS: [usize; 14] = [49, 50, 51, 73, 75, 76, 78, 79, 80, 81, 86, 88, 89, 139];

/// Image of one village at a given development level. Background texture and
/// settlement centres depend only on `seed`, so raising `development` only adds
/// built-up pixels.
pub fn render_village(seed: u64, extent: u32, blobs: usize, development: f64) -> (GrayImage, f64) {
    let mut rng = rng_for(seed, "image");
    let e = extent as f64;
    let base = rng.random_range(40.0..120.0);
    let (fx, fy, phase) = (
        rng.random_range(0.05..0.3),
        rng.random_range(0.05..0.3),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let margin = e * 0.1;
    let centres: Vec<(f64, f64, f64)> = (0..blobs)
        .map(|_| {
            (
                rng.random_range(margin..e - margin),
                rng.random_range(margin..e - margin),
                rng.random_range(0.6..1.4),
            )
        })
        .collect();
    let reach = (FULL_COVERAGE * e * e / (blobs as f64 * std::f64::consts::PI * 1.05)).sqrt()
        * development.clamp(0.0, 1.0).sqrt();
    let texture = Normal::new(0.0, 8.0).unwrap();
    let roof = Normal::new(220.0, 10.0).unwrap();
    let mut built = 0usize;
    let mut img = GrayImage::new(extent, extent);
    for y in 0..extent {
        for x in 0..extent {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let ground = base
                + 15.0 * (fx * px + phase).sin() * (fy * py).cos()
                + texture.sample(&mut rng);
            let roof_value = roof.sample(&mut rng);
            let is_built = centres.iter().any(|&(cx, cy, s)| {
                ((px - cx).powi(2) + (py - cy).powi(2)).sqrt() < reach * s
            });
            let v = if is_built {
                built += 1;
                roof_value
            } else {
                ground
            };
            img.put_pixel(x, y, Luma([v.round().clamp(0.0, 255.0) as u8]));
        }
    }
    (img, built as f64 / (e * e))
}

fn shape(kind: usize, v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    match kind {
        0 => v * v,
        1 => v.sqrt(),
        2 => (1.0 - (-3.0 * v).exp()) / (1.0 - (-3.0f64).exp()),
        _ => 1.0 / (1.0 + (-10.0 * (v - 0.5)).exp()),
    }
}

struct ColumnModel {
    intercept: f64,
    slope: f64,
    kind: usize,
}

fn std_of(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn synth_generate(config: &SynthConfig) -> Result<World, PipelineError> {
    config.validate()?;
    let seed = config.seed;
    let n = config.villages;
    let width = (n as f64).sqrt().ceil() as usize;
    let height = n.div_ceil(width);
    let tau = std::f64::consts::TAU;

    // Spatial field + regional step + idiosyncratic term, rank-transformed so the
    // development marginal is uniform.
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            let smooth = 0.5
                * (1.0
                    + (tau * x as f64 / width as f64).sin() * (tau * y as f64 / height as f64).cos());
            let step = if x >= width / 2 { 1.0 } else { 0.0 };
            let idio: f64 = rng_for(seed, &format!("village.{i}.latent")).random();
            0.3 * smooth + 0.2 * step + 0.4 * idio
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));
    let mut development = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        development[i] = 0.05 + 0.9 * (rank as f64 + 0.5) / n as f64;
    }

    let mut villages = Vec::with_capacity(n);
    for (i, &development) in development.iter().enumerate() {
        let (x, y) = (i % width, i / width);
        let (image, built_up) = render_village(
            derive_seed(seed, &format!("village.{i}")),
            config.extent,
            config.blobs,
            development,
        );
        villages.push(Village {
            id: format!("v{i:05}"),
            district: format!("d{:03}", i / config.district_size),
            x,
            y,
            development,
            built_up,
            image,
            census: CensusRow::new(format!("v{i:05}")),
            night: 0,
            outlier: false,
        });
    }

    let normalized: Vec<f64> = villages.iter().map(|v| v.built_up / FULL_COVERAGE).collect();
    let columns = column_models(config);
    let mut signal_std = vec![0.0; CENSUS_COLUMNS + 1];
    for c in 1..=CENSUS_COLUMNS {
        let m = &columns[c];
        signal_std[c] = std_of(normalized.iter().map(|&v| m.slope * response(config, m, v)));
        if signal_std[c] == 0.0 {
            signal_std[c] = m.slope.abs() * 0.1;
        }
    }

    let mut district_bias: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    if config.census_bias > 0.0 {
        for v in &villages {
            district_bias.entry(v.district.clone()).or_insert_with(|| {
                let mut rng = rng_for(seed, &format!("census.bias.{}", v.district));
                (0..=CENSUS_COLUMNS)
                    .map(|c| {
                        let sd = config.census_bias * signal_std[c];
                        if c == 0 || sd == 0.0 {
                            0.0
                        } else {
                            Normal::new(0.0, sd).unwrap().sample(&mut rng)
                        }
                    })
                    .collect()
            });
        }
    }

    let mut outlier_ids: Vec<usize> = (0..n).collect();
    outlier_ids.shuffle(&mut rng_for(seed, "outliers"));
    outlier_ids.truncate(config.outlier_count());
    for &i in &outlier_ids {
        villages[i].outlier = true;
    }

    for (i, village) in villages.iter_mut().enumerate() {
        let mut rng = rng_for(seed, &format!("census.village.{i}"));
        let bias = district_bias.get(&village.district);
        for c in 1..=CENSUS_COLUMNS {
            let m = &columns[c];
            let mut value = m.intercept + m.slope * response(config, m, normalized[i]);
            let sd = config.noise * signal_std[c];
            if sd > 0.0 {
                value += Normal::new(0.0, sd).unwrap().sample(&mut rng);
            }
            if let Some(b) = bias {
                value += b[c];
            }
            if village.outlier {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                value += sign * 25.0 * signal_std[c];
            }
            village.census.columns.insert(c, value);
        }
    }

    // Night light: dark below the median built-up level; above it, brightness is the
    // built-up quantile within the lit half, plus noise sized so an exact regressor on
    // the image explains about 90% of the variance.
    let med = median(&normalized);
    let mut lit: Vec<f64> = normalized.iter().copied().filter(|&v| v > med).collect();
    lit.sort_by(f64::total_cmp);
    let glow: Vec<f64> = normalized
        .iter()
        .map(|&v| {
            if v > med {
                (lit.partition_point(|&x| x < v) + 1) as f64 / lit.len() as f64
            } else {
                0.0
            }
        })
        .collect();
    let glow_sd = std_of(glow.iter().copied());
    let mut rng = rng_for(seed, "night");
    let noise = Normal::new(0.0, (glow_sd / 3.0).max(1e-12)).unwrap();
    for (v, &g) in villages.iter_mut().zip(&glow) {
        let e = noise.sample(&mut rng);
        v.night = if g > 0.0 {
            (63.0 * (g + e)).round().clamp(1.0, 63.0) as u8
        } else {
            0
        };
    }

    let indicators = district_indicators(&villages, seed);
    Ok(World {
        config: config.clone(),
        width,
        height,
        villages,
        indicators,
    })
}

fn column_models(config: &SynthConfig) -> Vec<ColumnModel> {
    let mut rng = rng_for(config.seed, "census.columns");
    let referenced = referenced_columns();
    let mut out = vec![ColumnModel {
        intercept: 0.0,
        slope: 0.0,
        kind: 0,
    }];
    for c in 1..=CENSUS_COLUMNS {
        let intercept = rng.random_range(5.0..30.0);
        let magnitude = rng.random_range(15.0..45.0);
        let kind = rng.random_range(0..4);
        let random_sign = rng.random_bool(0.5);
        let negative = if referenced.contains(&c) {
            NEGATIVE_COLUMNS.contains(&c)
        } else {
            random_sign
        };
        out.push(ColumnModel {
            intercept,
            slope: if negative { -magnitude } else { magnitude },
            kind,
        });
    }
    out
}

fn response(config: &SynthConfig, m: &ColumnModel, v: f64) -> f64 {
    match config.relation {
        Relation::Linear => v,
        Relation::MonotoneNonlinear => shape(m.kind, v),
    }
}

/// Planted district outcomes: three monotone functions of mean development and one
/// pure-noise control.
fn district_indicators(villages: &[Village], seed: u64) -> IndicatorTable {
    let mut members: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for v in villages {
        members.entry(&v.district).or_default().push(v.development);
    }
    let names = vec![
        "institutional-births".to_string(),
        "improved-sanitation".to_string(),
        "clean-fuel".to_string(),
        "noise-control".to_string(),
    ];
    let means: Vec<f64> = members
        .values()
        .map(|z| z.iter().sum::<f64>() / z.len() as f64)
        .collect();
    let planted: [fn(f64) -> f64; 3] = [
        |z| 20.0 + 60.0 * z,
        |z| 100.0 * z * z,
        |z| 80.0 / (1.0 + (-10.0 * (z - 0.5)).exp()),
    ];
    let mut rng = rng_for(seed, "district.indicators");
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for f in planted {
        let signal: Vec<f64> = means.iter().map(|&z| f(z)).collect();
        let sd = (0.1 * std_of(signal.iter().copied())).max(1e-9);
        let noise = Normal::new(0.0, sd).unwrap();
        columns.push(signal.iter().map(|s| s + noise.sample(&mut rng)).collect());
    }
    let control = Normal::new(50.0, 10.0).unwrap();
    columns.push(means.iter().map(|_| control.sample(&mut rng)).collect());
    IndicatorTable {
        districts: members.keys().map(|k| k.to_string()).collect(),
        names,
        values: (0..means.len())
            .map(|d| columns.iter().map(|c| c[d]).collect())
            .collect(),
    }
}

impl World {
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.villages.iter().map(|v| image_input(&v.image)).collect()
    }

    pub fn assets(&self) -> Result<Vec<AssetVector>, PipelineError> {
        self.villages
            .iter()
            .map(|v| aggregate_assets(&v.census).map_err(Into::into))
            .collect()
    }

    pub fn asset_targets(&self) -> Result<Vec<Vec<f64>>, PipelineError> {
        Ok(self.assets()?.into_iter().map(|a| a.0.to_vec()).collect())
    }

    pub fn night_cells(&self) -> Vec<NightCell> {
        self.villages
            .iter()
            .map(|v| NightCell::new(&v.id, v.night, format!("images/{}.pgm", v.id)))
            .collect()
    }

    pub fn outliers(&self) -> Vec<bool> {
        self.villages.iter().map(|v| v.outlier).collect()
    }

    /// `(village id, district id)` pairs.
    pub fn district_map(&self) -> Vec<(String, String)> {
        self.villages
            .iter()
            .map(|v| (v.id.clone(), v.district.clone()))
            .collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.villages.iter().position(|v| v.id == id)
    }

    /// Images of village `index` as its development rises linearly to 1 over `steps` frames.
    pub fn growth_sequence(&self, index: usize, steps: usize) -> Vec<GrayImage> {
        let z0 = self.villages[index].development;
        (0..steps)
            .map(|t| {
                let z = z0 + (1.0 - z0) * t as f64 / (steps.max(2) - 1) as f64;
                render_village(
                    derive_seed(self.config.seed, &format!("village.{index}")),
                    self.config.extent,
                    self.config.blobs,
                    z,
                )
                .0
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir.join("images"))?;
        for v in &self.villages {
            write_pgm(&dir.join("images").join(format!("{}.pgm", v.id)), &v.image)?;
        }
        let rows: Vec<CensusRow> = self.villages.iter().map(|v| v.census.clone()).collect();
        write_census_csv(File::create(dir.join("census.csv"))?, &rows)?;

        let mut w = csv::Writer::from_path(dir.join("villages.csv"))?;
        w.write_record(["village_id", "district_id", "x", "y", "development", "built_up", "night", "outlier"])?;
        for v in &self.villages {
            w.write_record([
                v.id.clone(),
                v.district.clone(),
                v.x.to_string(),
                v.y.to_string(),
                v.development.to_string(),
                v.built_up.to_string(),
                v.night.to_string(),
                (v.outlier as u8).to_string(),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("night.csv"))?;
        w.write_record(["cell_id", "intensity", "image"])?;
        for c in self.night_cells() {
            w.write_record([c.cell_id, c.intensity.to_string(), c.image])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("districts.csv"))?;
        w.write_record(["village_id", "district_id"])?;
        for (v, d) in self.district_map() {
            w.write_record([v, d])?;
        }
        w.flush()?;

        self.indicators.write_csv(File::create(dir.join("indicators.csv"))?)?;
        let meta = serde_json::json!({
            "config": self.config,
            "width": self.width,
            "height": self.height,
        });
        fs::write(dir.join("world.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<World, PipelineError> {
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("world.json"))?)?;
        let config: SynthConfig = serde_json::from_value(meta["config"].clone())?;
        let dim = |k: &str| {
            meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| PipelineError::Input(format!("world.json lacks {k}")))
        };
        let (width, height) = (dim("width")?, dim("height")?);
        let census = read_census_csv(File::open(dir.join("census.csv"))?)?;
        let by_id: BTreeMap<String, CensusRow> =
            census.into_iter().map(|r| (r.village_id.clone(), r)).collect();
        let mut villages = Vec::new();
        let mut r = csv::Reader::from_path(dir.join("villages.csv"))?;
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("").to_string();
            let num = |i: usize| -> Result<f64, PipelineError> {
                field(i)
                    .parse()
                    .map_err(|_| PipelineError::Input(format!("villages.csv: bad number {:?}", field(i))))
            };
            let id = field(0);
            let census = by_id
                .get(&id)
                .cloned()
                .ok_or_else(|| PipelineError::Input(format!("village {id} missing from census.csv")))?;
            villages.push(Village {
                image: read_pgm(&dir.join("images").join(format!("{id}.pgm")))?,
                district: field(1),
                x: num(2)? as usize,
                y: num(3)? as usize,
                development: num(4)?,
                built_up: num(5)?,
                night: num(6)? as u8,
                outlier: field(7) == "1",
                census,
                id,
            });
        }
        let indicators = IndicatorTable::read_csv(File::open(dir.join("indicators.csv"))?)?;
        Ok(World {
            config,
            width,
            height,
            villages,
            indicators,
        })
    }
}
