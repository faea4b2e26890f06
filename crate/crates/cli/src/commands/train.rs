use std::path::PathBuf;

use clap::ValueEnum;
use satdev::census::{mahalanobis_filter, MahalanobisOptions};
use satdev::nn::{init_network, Architecture, MicroNetOptions};
use satdev::pipeline::{
    context_input, fit_regressor, mean_euclidean_loss, r2_score, select, split_8_2, train_nightlight,
    undersample_skew, Context, NightlightConfig, Predictor, R2Report, Regressor, TrainConfig,
};
use satdev::seed::derive_seed;
use serde_json::json;

use super::{config_enum, distinct, globals, output_names, read_world, write_rows};
use crate::config::{Manifest, Outputs, Resolver};
use crate::error::CliError;
use crate::Globals;

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
pub enum Mode {
    /// Regress the 16 aggregated asset indicators
    Direct,
    /// Regress quantized night-light intensity
    Nightlight,
}
config_enum!(Mode);

#[derive(Debug, clap::Args)]
pub struct Args {
    /// World directory written by `synth`
    #[arg(long)]
    world: Option<PathBuf>,
    /// Training target [default: direct]
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Drop Mahalanobis outliers from training and evaluation (direct mode) [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    outlier_rejection: Option<bool>,
    /// Rejection threshold on the Mahalanobis distance [default: 30]
    #[arg(long)]
    threshold: Option<f64>,
    /// Training epochs [default: 24]
    #[arg(long)]
    epochs: Option<usize>,
    /// Base learning rate [default: 4e-4 direct, 2e-3 nightlight]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Night-light mode: crop to this centred side length instead of the full image
    #[arg(long)]
    context_size: Option<u32>,
    /// Night-light mode: under-sample until intensity skewness is at most this [default: 0.4]
    #[arg(long)]
    skew_target: Option<f64>,
}

struct Fitted {
    regressor: Regressor,
    curve: Vec<f64>,
    report: R2Report,
    test_loss: f64,
    train_ids: Vec<String>,
    test_ids: Vec<String>,
    split_seed: u64,
    images: Vec<String>,
    rejected: usize,
}

pub fn run(a: Args, g: Globals, mut r: Resolver) -> Result<(), CliError> {
    let (seed, out) = globals(g, &mut r)?;
    let world_dir: PathBuf = r.required("world", a.world)?;
    let mode = r.get("mode", a.mode, Mode::Direct)?;
    let rejection = r.get("outlier-rejection", a.outlier_rejection, false)?;
    let threshold = r.get("threshold", a.threshold, MahalanobisOptions::default().threshold)?;
    let epochs = r.optional("epochs", a.epochs)?;
    let learning_rate = r.optional("learning-rate", a.learning_rate)?;
    let context_size = r.optional("context-size", a.context_size)?;
    let skew_target = r.get("skew-target", a.skew_target, 0.4)?;
    let resolved = r.finish()?;
    distinct(&out, &world_dir)?;
    if mode == Mode::Direct && context_size.is_some() {
        return Err(CliError::usage("--context-size applies to nightlight mode only"));
    }
    if mode == Mode::Nightlight && rejection {
        return Err(CliError::usage("--outlier-rejection applies to direct mode only"));
    }

    let world = read_world(&world_dir)?;
    let base = derive_seed(seed, "train");
    let extent = world.config.extent as usize;
    let ids: Vec<String> = world.villages.iter().map(|v| v.id.clone()).collect();

    let fitted = match mode {
        Mode::Direct => {
            let mut config = TrainConfig::desk(derive_seed(base, "fit"));
            config.epochs = epochs.unwrap_or(config.epochs);
            config.sgd.learning_rate = learning_rate.unwrap_or(config.sgd.learning_rate);
            let inputs = world.inputs();
            let assets = world.assets()?;
            let targets: Vec<Vec<f64>> = assets.iter().map(|a| a.0.to_vec()).collect();
            let rejected = if rejection {
                let options = MahalanobisOptions {
                    threshold,
                    ..MahalanobisOptions::default()
                };
                mahalanobis_filter(&assets, &options)?.rejected
            } else {
                vec![false; assets.len()]
            };
            let split_seed = derive_seed(base, "split");
            let split = split_8_2(inputs.len(), split_seed);
            let train: Vec<usize> = split.train.iter().copied().filter(|&i| !rejected[i]).collect();
            let test: Vec<usize> = split.test.iter().copied().filter(|&i| !rejected[i]).collect();
            if train.is_empty() || test.is_empty() {
                return Err(CliError::new("input", "outlier rejection left an empty split"));
            }
            let net = init_network(
                Architecture::micro_net(extent, &MicroNetOptions::default()),
                derive_seed(base, "init"),
            )?;
            let (regressor, curve) =
                fit_regressor(net, &select(&inputs, &train), &select(&targets, &train), &config)?;
            let pred = regressor.predict_all(&select(&inputs, &test))?;
            let actual = select(&targets, &test);
            Fitted {
                report: r2_score(&pred, &actual)?,
                test_loss: mean_euclidean_loss(&pred, &actual),
                regressor,
                curve,
                train_ids: select(&ids, &train),
                test_ids: select(&ids, &test),
                split_seed,
                images: ids.iter().map(|id| format!("images/{id}.pgm")).collect(),
                rejected: rejected.iter().filter(|&&x| x).count(),
            }
        }
        Mode::Nightlight => {
            let mut config = NightlightConfig::desk(base);
            config.train.epochs = epochs.unwrap_or(config.train.epochs);
            config.train.sgd.learning_rate = learning_rate.unwrap_or(config.train.sgd.learning_rate);
            config.context = context_size.map_or(Context::Large, Context::Small);
            let cells = undersample_skew(&world.night_cells(), skew_target, derive_seed(base, "undersample"))?;
            let index: Vec<usize> = cells
                .iter()
                .map(|c| world.index_of(&c.cell_id).expect("night cells come from the world"))
                .collect();
            let images: Vec<_> = index.iter().map(|&i| world.villages[i].image.clone()).collect();
            let net = init_network(
                Architecture::micro_net(
                    extent,
                    &MicroNetOptions {
                        outputs: 1,
                        ..MicroNetOptions::default()
                    },
                ),
                derive_seed(base, "init"),
            )?;
            let run = train_nightlight(&cells, &images, net, &config)?;
            let inputs: Vec<Vec<f64>> = select(&images, &run.split.test)
                .iter()
                .map(|i| context_input(i, config.context))
                .collect();
            let actual: Vec<Vec<f64>> =
                run.split.test.iter().map(|&i| vec![cells[i].intensity as f64]).collect();
            let pred = run.regressor.predict_all(&inputs)?;
            let cell_ids: Vec<String> = cells.iter().map(|c| c.cell_id.clone()).collect();
            Fitted {
                test_loss: mean_euclidean_loss(&pred, &actual),
                train_ids: select(&cell_ids, &run.split.train),
                test_ids: select(&cell_ids, &run.split.test),
                split_seed: config.split_seed,
                images: cells.iter().map(|c| c.image.clone()).collect(),
                rejected: 0,
                regressor: run.regressor,
                curve: run.curve,
                report: run.report,
            }
        }
    };

    let mut outputs = Outputs::create(&out)?;
    outputs.text("model.json", &(fitted.regressor.to_json() + "\n"))?;
    let rows: Vec<Vec<String>> = fitted
        .curve
        .iter()
        .enumerate()
        .map(|(e, l)| vec![(e + 1).to_string(), l.to_string()])
        .collect();
    write_rows(outputs.file("loss.csv")?, &["epoch".into(), "loss".into()], &rows)?;
    let names = output_names(fitted.regressor.output_width());
    outputs.json(
        "r2.json",
        &json!({
            "mode": mode,
            "indicators": names,
            "report": fitted.report,
            "test_euclidean_loss": fitted.test_loss,
            "train_rows": fitted.train_ids.len(),
            "test_rows": fitted.test_ids.len(),
            "rejected_rows": fitted.rejected,
        }),
    )?;
    outputs.json(
        "dataset.json",
        &json!({
            "world": world_dir,
            "images": fitted.images,
            "targets": if mode == Mode::Direct { "census.csv" } else { "night.csv" },
            "split_seed": fitted.split_seed,
            "train": fitted.train_ids,
            "test": fitted.test_ids,
        }),
    )?;
    outputs.finish(Manifest::new("train", resolved))
}
