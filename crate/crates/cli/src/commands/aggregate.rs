use std::fs::File;
use std::path::PathBuf;

use clap::ValueEnum;
use satdev::census::{
    aggregate_assets, correlation_matrix, indicator_names, mahalanobis_filter, pca_first_component,
    read_census_csv, write_assets_csv, write_correlation_csv, write_outlier_csv, AssetVector,
    MahalanobisOptions, Scatter,
};
use serde_json::json;

use super::{config_enum, distinct, globals, write_rows};
use crate::config::{Manifest, Outputs, Resolver};
use crate::error::CliError;
use crate::Globals;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScatterArg {
    Classical,
    Robust,
}
config_enum!(ScatterArg);

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Census CSV (village_id plus bracketed columns)
    #[arg(long)]
    census: Option<PathBuf>,
    /// Mahalanobis distance above which a village is rejected [default: 30]
    #[arg(long)]
    threshold: Option<f64>,
    /// Covariance ridge as a fraction of mean variance [default: 1e-6]
    #[arg(long)]
    ridge: Option<f64>,
    /// Location/scatter estimate behind the distances [default: robust]
    #[arg(long, value_enum)]
    scatter: Option<ScatterArg>,
}

pub fn run(a: Args, g: Globals, mut r: Resolver) -> Result<(), CliError> {
    let (_seed, out) = globals(g, &mut r)?;
    let census: PathBuf = r.required("census", a.census)?;
    let d = MahalanobisOptions::default();
    let options = MahalanobisOptions {
        threshold: r.get("threshold", a.threshold, d.threshold)?,
        ridge: r.get("ridge", a.ridge, d.ridge)?,
        scatter: match r.get("scatter", a.scatter, ScatterArg::Robust)? {
            ScatterArg::Classical => Scatter::Classical,
            ScatterArg::Robust => Scatter::Robust,
        },
    };
    let resolved = r.finish()?;
    if let Some(parent) = census.parent() {
        distinct(&out, parent)?;
    }

    let rows = read_census_csv(File::open(&census).map_err(|e| CliError::io(&census, e))?)?;
    let ids: Vec<String> = rows.iter().map(|r| r.village_id.clone()).collect();
    let assets: Vec<AssetVector> = rows.iter().map(aggregate_assets).collect::<Result<_, _>>()?;
    let report = mahalanobis_filter(&assets, &options)?;
    let correlation = correlation_matrix(&rows)?;
    let pca = pca_first_component(&assets)?;

    let mut outputs = Outputs::create(&out)?;
    let named: Vec<(String, AssetVector)> = ids.iter().cloned().zip(assets.iter().cloned()).collect();
    write_assets_csv(outputs.file("assets.csv")?, &named)?;
    write_outlier_csv(outputs.file("outliers.csv")?, &ids, &report)?;
    write_correlation_csv(outputs.file("correlation.csv")?, &correlation)?;
    let rejected = report.rejected.iter().filter(|&&x| x).count();
    outputs.json(
        "outliers.json",
        &json!({
            "rows": ids.len(),
            "rejected": rejected,
            "rejection_fraction": report.rejection_fraction,
            "threshold": report.threshold,
            "reference_rows": report.reference_rows.len(),
        }),
    )?;
    let loadings: serde_json::Map<String, serde_json::Value> = indicator_names()
        .iter()
        .zip(pca.direction)
        .map(|(n, v)| (n.to_string(), json!(v)))
        .collect();
    outputs.json(
        "pca.json",
        &json!({
            "loadings": loadings,
            "eigenvalue": pca.eigenvalue,
            "explained_variance_ratio": pca.explained_variance_ratio,
        }),
    )?;
    let scores: Vec<Vec<String>> = ids.iter().zip(&pca.scores).map(|(id, s)| vec![id.clone(), s.to_string()]).collect();
    write_rows(outputs.file("pca_scores.csv")?, &["village_id".into(), "score".into()], &scores)?;
    outputs.finish(Manifest::new("aggregate", resolved))
}
