use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{r2_score, select, split_8_2, PipelineError, R2Report, Split};
use crate::nn::{augment, AugmentSpec, Mode, Network, NnError, SgdConfig, Tensor};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub augment: AugmentSpec,
    pub epochs: usize,
    /// When set, overrides `sgd.step_interval` with this many epochs' worth of iterations.
    pub decay_every_epochs: Option<u64>,
    /// Train on per-indicator z-scores computed from the training targets.
    pub standardize_targets: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults: the reference momentum, gamma, weight decay and batch size
    /// with a learning rate and epoch budget suited to standardized targets.
    pub fn desk(seed: u64) -> Self {
        Self {
            sgd: SgdConfig {
                learning_rate: 4e-4,
                ..SgdConfig::default()
            },
            augment: AugmentSpec::full(derive_seed(seed, "augment")),
            epochs: 24,
            decay_every_epochs: Some(8),
            standardize_targets: true,
            seed,
        }
    }

    fn effective_sgd(&self, samples: usize) -> SgdConfig {
        let mut sgd = self.sgd.clone();
        if let Some(e) = self.decay_every_epochs {
            let per_epoch = samples.div_ceil(sgd.batch_size.max(1)) as u64;
            sgd.step_interval = (e * per_epoch).max(1);
        }
        sgd
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    /// Mean data loss of each epoch's minibatches.
    pub curve: Vec<f64>,
    pub iterations: u64,
}

fn check_rows(net: &Network, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(), PipelineError> {
    if inputs.is_empty() {
        return Err(PipelineError::Input("empty training set".into()));
    }
    if inputs.len() != targets.len() {
        return Err(PipelineError::Input(format!(
            "{} inputs for {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let in_len: usize = net.input_shape().iter().product();
    if let Some(bad) = inputs.iter().position(|x| x.len() != in_len) {
        return Err(PipelineError::Input(format!(
            "input {bad} has length {}, network expects {in_len}",
            inputs[bad].len()
        )));
    }
    if let Some(bad) = targets.iter().position(|y| y.len() != net.output_width()) {
        return Err(PipelineError::Input(format!(
            "target {bad} has width {}, network outputs {}",
            targets[bad].len(),
            net.output_width()
        )));
    }
    Ok(())
}

/// Minibatch momentum SGD over `epochs` passes, reshuffled every epoch.
pub fn train(
    mut net: Network,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<TrainOutcome, PipelineError> {
    check_rows(&net, inputs, targets)?;
    let sgd = config.effective_sgd(inputs.len());
    sgd.validate()?;
    let shape = net.input_shape().to_vec();
    let augmenting = shape.len() >= 2 && !config.augment.is_identity();
    let out_w = net.output_width();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut iteration = 0u64;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng_for(config.seed, &format!("epoch.{epoch}")));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(sgd.batch_size).enumerate() {
            let mut data = Vec::with_capacity(chunk.len() * inputs[0].len());
            let mut ys = Vec::with_capacity(chunk.len() * out_w);
            for (k, &i) in chunk.iter().enumerate() {
                if augmenting {
                    let draw = (epoch * inputs.len() + b * sgd.batch_size + k) as u64;
                    let image = Tensor::new(shape.clone(), inputs[i].clone())?;
                    data.extend(augment(&image, &config.augment, draw)?.into_data());
                } else {
                    data.extend_from_slice(&inputs[i]);
                }
                ys.extend_from_slice(&targets[i]);
            }
            let mut batch_shape = vec![chunk.len()];
            batch_shape.extend(&shape);
            let batch = Tensor::new(batch_shape, data)?;
            let y = Tensor::new(vec![chunk.len(), out_w], ys)?;
            let mode = Mode::Train {
                seed: derive_seed(config.seed, &format!("iteration.{iteration}")),
            };
            let (loss, grads) = net.loss_and_gradients(&batch, &y, mode)?;
            if !loss.is_finite() {
                return Err(PipelineError::NonFiniteLoss { iteration });
            }
            net.sgd_step(&grads, &sgd, iteration).map_err(|e| match e {
                NnError::NonFinite { layer } => PipelineError::NonFiniteGradient { iteration, layer },
                other => other.into(),
            })?;
            total += loss * chunk.len() as f64;
            iteration += 1;
        }
        curve.push(total / inputs.len() as f64);
    }
    Ok(TrainOutcome {
        net,
        curve,
        iterations: iteration,
    })
}

/// Anything that maps one flat input to a prediction vector.
pub trait Predictor {
    fn input_len(&self) -> usize;
    fn output_width(&self) -> usize;
    fn predict(&self, input: &[f64]) -> Vec<f64>;

    fn predict_checked(&self, input: &[f64]) -> Result<Vec<f64>, PipelineError> {
        if input.len() != self.input_len() {
            return Err(PipelineError::Input(format!(
                "input length {} but model expects {}",
                input.len(),
                self.input_len()
            )));
        }
        Ok(self.predict(input))
    }

    fn predict_all(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PipelineError> {
        inputs.iter().map(|x| self.predict_checked(x)).collect()
    }
}

impl Predictor for Network {
    fn input_len(&self) -> usize {
        self.input_shape().iter().product()
    }

    fn output_width(&self) -> usize {
        Network::output_width(self)
    }

    fn predict(&self, input: &[f64]) -> Vec<f64> {
        self.predict_one(input)
    }
}

/// Per-column affine map to z-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetScaler {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Zero-variance columns get unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..width).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..width)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }
}

/// A network whose outputs live in scaled target space, with the map back.
#[derive(Debug, Clone)]
pub struct Regressor {
    pub net: Network,
    pub scaler: TargetScaler,
}

impl Predictor for Regressor {
    fn input_len(&self) -> usize {
        self.net.input_len()
    }

    fn output_width(&self) -> usize {
        self.net.output_width()
    }

    fn predict(&self, input: &[f64]) -> Vec<f64> {
        self.scaler.inverse(&self.net.predict_one(input))
    }
}

impl Regressor {
    pub fn to_json(&self) -> String {
        let net: serde_json::Value =
            serde_json::from_str(&self.net.to_json()).expect("network json is valid");
        serde_json::to_string_pretty(&serde_json::json!({
            "network": net,
            "scaler": self.scaler,
        }))
        .expect("regressor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let net = Network::from_json(&value["network"].to_string())?;
        let scaler: TargetScaler = serde_json::from_value(value["scaler"].clone())?;
        if scaler.mean.len() != net.output_width() || scaler.std.len() != net.output_width() {
            return Err(PipelineError::Input("scaler width differs from network output".into()));
        }
        Ok(Self { net, scaler })
    }
}

pub fn fit_regressor(
    template: Network,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<(Regressor, Vec<f64>), PipelineError> {
    // Without any epochs the model is the untrained network as-is.
    let scaler = if config.standardize_targets && config.epochs > 0 {
        TargetScaler::fit(targets)
    } else {
        TargetScaler::identity(template.output_width())
    };
    let scaled: Vec<Vec<f64>> = targets.iter().map(|t| scaler.transform(t)).collect();
    let outcome = train(template, inputs, &scaled, config)?;
    Ok((
        Regressor {
            net: outcome.net,
            scaler,
        },
        outcome.curve,
    ))
}

/// A trained regressor with its held-out evaluation.
#[derive(Debug, Clone)]
pub struct SplitRun {
    pub regressor: Regressor,
    pub curve: Vec<f64>,
    pub split: Split,
    pub report: R2Report,
}

/// Train on `split.train`, report R² on `split.test`.
pub fn run_split(
    template: Network,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    split: &Split,
    config: &TrainConfig,
) -> Result<SplitRun, PipelineError> {
    let (regressor, curve) = fit_regressor(
        template,
        &select(inputs, &split.train),
        &select(targets, &split.train),
        config,
    )?;
    let pred = regressor.predict_all(&select(inputs, &split.test))?;
    let report = r2_score(&pred, &select(targets, &split.test))?;
    Ok(SplitRun {
        regressor,
        curve,
        split: split.clone(),
        report,
    })
}

/// Train after re-pairing `targets[permutation[i]]` with `inputs[i]`.
pub fn placebo_with_permutation(
    template: Network,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    permutation: &[usize],
    split: &Split,
    config: &TrainConfig,
) -> Result<SplitRun, PipelineError> {
    let mut sorted = permutation.to_vec();
    sorted.sort_unstable();
    if sorted != (0..targets.len()).collect::<Vec<_>>() {
        return Err(PipelineError::Input("not a permutation of the targets".into()));
    }
    let shuffled = select(targets, permutation);
    run_split(template, inputs, &shuffled, split, config)
}

/// Label-shuffled control: randomly re-pair targets with images, train, evaluate held out.
pub fn placebo_check(
    template: Network,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &TrainConfig,
    seed: u64,
) -> Result<R2Report, PipelineError> {
    let mut permutation: Vec<usize> = (0..targets.len()).collect();
    permutation.shuffle(&mut rng_for(seed, "placebo"));
    let split = split_8_2(inputs.len(), derive_seed(seed, "split"));
    Ok(placebo_with_permutation(template, inputs, targets, &permutation, &split, config)?.report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TileMode {
    Single,
    TileAverage,
}

/// Village prediction from one tile, or the mean over several overlapping tiles.
pub fn predict_village<P: Predictor + ?Sized>(
    model: &P,
    tiles: &[Vec<f64>],
    mode: TileMode,
) -> Result<Vec<f64>, PipelineError> {
    match (mode, tiles.len()) {
        (TileMode::Single, 1) => model.predict_checked(&tiles[0]),
        (TileMode::TileAverage, n) if n >= 1 => {
            let mut acc = vec![0.0; model.output_width()];
            for t in tiles {
                for (a, v) in acc.iter_mut().zip(model.predict_checked(t)?) {
                    *a += v;
                }
            }
            Ok(acc.into_iter().map(|a| a / n as f64).collect())
        }
        (m, n) => Err(PipelineError::Input(format!("{n} tiles given for {m:?} mode"))),
    }
}
