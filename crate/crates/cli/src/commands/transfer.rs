use std::collections::BTreeMap;
use std::fs::File;
use std::path::PathBuf;

use clap::ValueEnum;
use satdev::pipeline::{image_input, Predictor};
use satdev::seed::derive_seed;
use satdev::transfer::{
    aggregate_district, attach_targets, indicator_sweep, village_vector, write_sweep_csv, FeatureSource,
    HeadConfig, IndicatorTable,
};

use super::{config_enum, distinct, globals, read_model, read_world, write_rows};
use crate::config::{Manifest, Outputs, Resolver};
use crate::error::CliError;
use crate::Globals;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Features {
    /// The model's predicted asset vector
    Output,
    /// Activations entering the model's last fully connected layer
    Penultimate,
}
config_enum!(Features);

#[derive(Debug, clap::Args)]
pub struct Args {
    /// World directory written by `synth`
    #[arg(long)]
    world: Option<PathBuf>,
    /// model.json written by `train`
    #[arg(long)]
    model: Option<PathBuf>,
    /// District indicator CSV [default: <world>/indicators.csv]
    #[arg(long)]
    indicators: Option<PathBuf>,
    /// Cross-validation folds [default: 5]
    #[arg(long)]
    k: Option<usize>,
    /// Head depth, 1 or 2 fully connected layers [default: 2]
    #[arg(long)]
    layers: Option<usize>,
    /// Village representation fed to the head [default: output]
    #[arg(long, value_enum)]
    features: Option<Features>,
    /// Head training epochs [default: 300]
    #[arg(long)]
    head_epochs: Option<usize>,
    /// Head learning rate [default: 0.01]
    #[arg(long)]
    head_learning_rate: Option<f64>,
}

pub fn run(a: Args, g: Globals, mut r: Resolver) -> Result<(), CliError> {
    let (seed, out) = globals(g, &mut r)?;
    let world_dir: PathBuf = r.required("world", a.world)?;
    let model_path: PathBuf = r.required("model", a.model)?;
    let indicators: PathBuf = r.get("indicators", a.indicators, world_dir.join("indicators.csv"))?;
    let k = r.get("k", a.k, 5usize)?;
    let layers = r.get("layers", a.layers, 2usize)?;
    let features = r.get("features", a.features, Features::Output)?;
    let base = derive_seed(seed, "transfer");
    let mut head = HeadConfig::desk(layers, derive_seed(base, "head"));
    head.epochs = r.get("head-epochs", a.head_epochs, head.epochs)?;
    head.sgd.learning_rate = r.get("head-learning-rate", a.head_learning_rate, head.sgd.learning_rate)?;
    let resolved = r.finish()?;
    distinct(&out, &world_dir)?;
    if k < 2 {
        return Err(CliError::usage("--k must be at least 2"));
    }

    let world = read_world(&world_dir)?;
    let model = read_model(&model_path)?;
    let extent = world.config.extent as usize;
    if model.input_len() != extent * extent {
        return Err(CliError::new(
            "input",
            format!("model expects {} inputs; world images have {}", model.input_len(), extent * extent),
        ));
    }
    let source = match features {
        Features::Output => FeatureSource::Output,
        Features::Penultimate => FeatureSource::Penultimate,
    };
    let vectors = world
        .villages
        .iter()
        .map(|v| Ok((v.id.clone(), village_vector(&model, &[image_input(&v.image)], source)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let mapping: BTreeMap<String, String> = world.district_map().into_iter().collect();
    let mut records = aggregate_district(&vectors, &mapping)?;
    let table = IndicatorTable::read_csv(File::open(&indicators).map_err(|e| CliError::io(&indicators, e))?)?;
    let (x, _) = attach_targets(&mut records, &table)?;
    let sweep = indicator_sweep(&x, &table, k, &head)?;

    let mut outputs = Outputs::create(&out)?;
    let width = records.first().map_or(0, |r| r.prediction.len());
    let mut header = vec!["district_id".to_string(), "villages".to_string()];
    header.extend((0..width).map(|j| format!("f{j}")));
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let mut row = vec![r.district.clone(), r.members.len().to_string()];
            row.extend(r.prediction.iter().map(|v| v.to_string()));
            row
        })
        .collect();
    write_rows(outputs.file("district_features.csv")?, &header, &rows)?;
    write_sweep_csv(outputs.file("sweep.csv")?, &sweep)?;
    let bins: Vec<Vec<String>> = sweep
        .histogram
        .counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            vec![
                sweep.histogram.edges[i].to_string(),
                sweep.histogram.edges[i + 1].to_string(),
                c.to_string(),
            ]
        })
        .collect();
    write_rows(outputs.file("histogram.csv")?, &["lo".into(), "hi".into(), "count".into()], &bins)?;
    outputs.json("sweep.json", &sweep)?;
    outputs.finish(Manifest::new("transfer", resolved))
}
