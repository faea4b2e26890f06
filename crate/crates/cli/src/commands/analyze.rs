use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use satdev::census::indicator_index;
use satdev::pipeline::{write_pgm, Predictor};
use satdev::spatial::{
    dataset_mean_pixel, detect_edges, grid_to_gray, occlusion_heatmap, render_choropleth, spearman,
    temporal_track, GeoGrid, OcclusionOptions, Palette, Threshold,
};
use serde::{Serialize, Serializer};
use serde_json::json;

use super::{distinct, globals, output_names, read_model, read_world, write_rows};
use crate::config::{Manifest, Outputs, Resolver};
use crate::error::CliError;
use crate::Globals;

/// Occluder fill: the dataset mean pixel or a fixed raw value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Mean,
    Value(f64),
}

impl FromStr for Fill {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "mean" {
            return Ok(Fill::Mean);
        }
        match s.parse::<f64>() {
            Ok(v) if (0.0..=255.0).contains(&v) => Ok(Fill::Value(v)),
            _ => Err(format!("expected `mean` or a pixel value in [0, 255], got {s:?}")),
        }
    }
}

impl fmt::Display for Fill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fill::Mean => f.write_str("mean"),
            Fill::Value(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for Fill {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Fill::Mean => s.serialize_str("mean"),
            Fill::Value(v) => s.serialize_f64(*v),
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// World directory written by `synth`
    #[arg(long)]
    world: Option<PathBuf>,
    /// model.json written by `train`
    #[arg(long)]
    model: Option<PathBuf>,
    /// Indicator name or output index [default: electronics, or 0 for single-output models]
    #[arg(long)]
    indicator: Option<String>,
    /// Village for the heatmap and growth replay [default: median development]
    #[arg(long)]
    village: Option<String>,
    /// Occluder side length in pixels [default: 16]
    #[arg(long)]
    occluder: Option<u32>,
    /// Occluder stride in pixels [default: 8]
    #[arg(long)]
    stride: Option<u32>,
    /// Occluder fill: `mean` or a raw pixel value [default: mean]
    #[arg(long)]
    fill: Option<Fill>,
    /// Edge threshold as a percentile of gradient magnitudes [default: 90]
    #[arg(long)]
    edge_percentile: Option<f64>,
    /// Fixed edge threshold; overrides the percentile
    #[arg(long)]
    edge_threshold: Option<f64>,
    /// Frames in the growth replay [default: 8]
    #[arg(long)]
    steps: Option<usize>,
    /// Raster pixels per map cell [default: 8]
    #[arg(long)]
    cell_pixels: Option<u32>,
}

fn resolve_indicator(spec: Option<&str>, width: usize) -> Result<usize, CliError> {
    let index = match spec {
        None if width == 1 => 0,
        None => indicator_index("electronics").expect("known indicator"),
        Some(s) => match s.parse::<usize>() {
            Ok(i) => i,
            Err(_) if width == 1 => {
                return Err(CliError::new("input", format!("single-output model has no indicator {s:?}")))
            }
            Err(_) => indicator_index(s).ok_or_else(|| CliError::new("input", format!("unknown indicator {s:?}")))?,
        },
    };
    if index >= width {
        return Err(CliError::new("input", format!("indicator {index} outside model output width {width}")));
    }
    Ok(index)
}

pub fn run(a: Args, g: Globals, mut r: Resolver) -> Result<(), CliError> {
    let (_seed, out) = globals(g, &mut r)?;
    let world_dir: PathBuf = r.required("world", a.world)?;
    let model_path: PathBuf = r.required("model", a.model)?;
    let indicator: Option<String> = r.optional("indicator", a.indicator)?;
    let village: Option<String> = r.optional("village", a.village)?;
    let d = OcclusionOptions::default();
    let occluder = r.get("occluder", a.occluder, d.occluder)?;
    let stride = r.get("stride", a.stride, d.stride)?;
    let fill = r.get("fill", a.fill, Fill::Mean)?;
    let percentile = r.get("edge-percentile", a.edge_percentile, 90.0)?;
    let fixed = r.optional("edge-threshold", a.edge_threshold)?;
    let steps = r.get("steps", a.steps, 8usize)?;
    let cell_pixels = r.get("cell-pixels", a.cell_pixels, 8u32)?;
    let resolved = r.finish()?;
    distinct(&out, &world_dir)?;

    let world = read_world(&world_dir)?;
    let model = read_model(&model_path)?;
    let width = model.output_width();
    let idx = resolve_indicator(indicator.as_deref(), width)?;
    let names = output_names(width);
    let vi = match &village {
        Some(id) => world
            .index_of(id)
            .ok_or_else(|| CliError::new("input", format!("no village {id:?} in the world")))?,
        None => {
            let mut order: Vec<usize> = (0..world.villages.len()).collect();
            order.sort_by(|&i, &j| {
                world.villages[i]
                    .development
                    .total_cmp(&world.villages[j].development)
                    .then(i.cmp(&j))
            });
            order[order.len() / 2]
        }
    };
    let target = &world.villages[vi];

    let mut outputs = Outputs::create(&out)?;

    let images: Vec<_> = world.villages.iter().map(|v| v.image.clone()).collect();
    let options = OcclusionOptions {
        occluder,
        stride,
        fill: match fill {
            Fill::Mean => dataset_mean_pixel(&images),
            Fill::Value(v) => v,
        },
    };
    let heatmap = occlusion_heatmap(&model, &target.image, idx, &options)?;
    heatmap.values.write_csv(outputs.file("heatmap.csv")?)?;
    let deltas = heatmap.deltas();
    deltas.write_csv(outputs.file("heatmap_delta.csv")?)?;
    write_pgm(&outputs.path("heatmap.pgm"), &grid_to_gray(&deltas))?;

    let predictions = model.predict_all(&world.inputs())?;
    let cells: Vec<(usize, usize, f64)> =
        world.villages.iter().zip(&predictions).map(|(v, p)| (v.x, v.y, p[idx])).collect();
    let grid = GeoGrid::from_cells(world.width, world.height, &cells)?;
    grid.write_csv(outputs.file("prediction_grid.csv")?)?;

    let policy = fixed.map_or(Threshold::Percentile(percentile), Threshold::Fixed);
    let edges = detect_edges(&grid, policy)?;
    let mut rows = Vec::new();
    for y in 0..grid.height {
        for x in 0..grid.width {
            if let Some(m) = edges.magnitude.get(x, y) {
                let flag = edges.mask[y * grid.width + x] as u8;
                rows.push(vec![x.to_string(), y.to_string(), m.to_string(), flag.to_string()]);
            }
        }
    }
    write_rows(
        outputs.file("edges.csv")?,
        &["x".into(), "y".into(), "magnitude".into(), "edge".into()],
        &rows,
    )?;

    let frames = world.growth_sequence(vi, steps);
    let track = temporal_track(&model, &frames)?;
    let mut header = vec!["step".to_string()];
    header.extend(names.iter().cloned());
    let rows: Vec<Vec<String>> = track
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let mut row = vec![t.to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            row
        })
        .collect();
    write_rows(outputs.file("temporal.csv")?, &header, &rows)?;
    let ts: Vec<f64> = (0..track.len()).map(|t| t as f64).collect();
    let series: Vec<f64> = track.iter().map(|p| p[idx]).collect();

    let legend = render_choropleth(&grid, &Palette::for_grid(&grid), cell_pixels, &outputs.path("choropleth.png"))?;
    outputs.record(&legend.file_name().expect("legend file").to_string_lossy());
    if width == satdev::census::INDICATOR_COUNT {
        let assets = world.assets()?;
        let cells: Vec<(usize, usize, f64)> =
            world.villages.iter().zip(&assets).map(|(v, a)| (v.x, v.y, a.0[idx])).collect();
        let census = GeoGrid::from_cells(world.width, world.height, &cells)?;
        let legend = render_choropleth(
            &census,
            &Palette::for_grid(&census),
            cell_pixels,
            &outputs.path("census_choropleth.png"),
        )?;
        outputs.record(&legend.file_name().expect("legend file").to_string_lossy());
    }

    outputs.json(
        "analysis.json",
        &json!({
            "indicator": names[idx],
            "village": target.id,
            "occlusion": {
                "baseline": heatmap.baseline,
                "occluder": occluder,
                "stride": stride,
                "fill": options.fill,
                "placements": [deltas.width, deltas.height],
                "min_delta": deltas.range().map(|r| r.0),
                "max_delta": deltas.range().map(|r| r.1),
            },
            "edges": {
                "threshold": edges.threshold,
                "cells": edges.edge_cells().len(),
            },
            "temporal": {
                "steps": track.len(),
                "spearman": spearman(&ts, &series),
            },
        }),
    )?;
    outputs.finish(Manifest::new("analyze", resolved))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_parses_and_round_trips() {
        assert_eq!("mean".parse::<Fill>().unwrap(), Fill::Mean);
        assert_eq!("12.5".parse::<Fill>().unwrap(), Fill::Value(12.5));
        assert!("300".parse::<Fill>().is_err());
        assert!("avg".parse::<Fill>().is_err());
        assert_eq!(serde_json::to_value(Fill::Value(3.0)).unwrap(), json!(3.0));
        assert_eq!(Fill::Mean.to_string(), "mean");
    }

    #[test]
    fn indicator_by_name_or_index() {
        assert_eq!(resolve_indicator(Some("3"), 16).unwrap(), 3);
        assert_eq!(resolve_indicator(None, 1).unwrap(), 0);
        assert_eq!(resolve_indicator(Some("electronics"), 16).unwrap(), 0);
        assert_eq!(resolve_indicator(Some("16"), 16).unwrap_err().class, "input");
        assert_eq!(resolve_indicator(Some("nope"), 16).unwrap_err().class, "input");
    }
}
