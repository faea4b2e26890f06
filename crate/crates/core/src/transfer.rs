//! Penultimate-layer features, small regression heads on top of them, district
//! aggregation and k-fold cross-validation.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    init_network, Architecture, AugmentSpec, LayerSpec, Mode, Network, NnError, SgdConfig, Tensor,
};
use crate::pipeline::{
    predict_village, r2_score, select, train, PipelineError, Predictor, R2Report, Regressor,
    TargetScaler, TileMode, TrainConfig,
};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("network has no penultimate fully connected layer")]
    NoPenultimateLayer,
    #[error("invalid input: {0}")]
    Input(String),
    #[error("village {0} is not mapped to any district")]
    Unmapped(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// District × named indicator values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorTable {
    pub districts: Vec<String>,
    pub names: Vec<String>,
    /// `values[d][j]` is indicator `j` of district `d`.
    pub values: Vec<Vec<f64>>,
}

impl IndicatorTable {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["district_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (d, row) in self.districts.iter().zip(&self.values) {
            let mut rec = vec![d.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, PipelineError> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("district_id") {
            return Err(PipelineError::Input("indicator table must start with district_id".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let (mut districts, mut values) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            districts.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        PipelineError::Input(format!("district {}: incomplete indicator value {v:?}", &rec[0]))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != names.len() {
                return Err(PipelineError::Input(format!("district {}: wrong column count", &rec[0])));
            }
            values.push(row);
        }
        Ok(Self {
            districts,
            names,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub village_id: String,
    pub values: Vec<f64>,
}

/// Activations entering the final fully connected layer, averaged over tiles.
pub fn extract_features(net: &Network, tiles: &[Vec<f64>]) -> Result<Vec<f64>, TransferError> {
    let boundary = net
        .architecture()
        .penultimate_boundary()
        .ok_or(TransferError::NoPenultimateLayer)?;
    if tiles.is_empty() {
        return Err(TransferError::Input("no tiles".into()));
    }
    let mut shape = vec![tiles.len()];
    shape.extend(net.input_shape());
    let batch = Tensor::new(shape, tiles.concat())?;
    let acts = net.activations(&batch, boundary, Mode::Eval)?;
    let width = acts.row_width();
    let mut mean = vec![0.0; width];
    for i in 0..tiles.len() {
        for (m, v) in mean.iter_mut().zip(acts.row(i)) {
            *m += v;
        }
    }
    let n = tiles.len() as f64;
    Ok(mean.into_iter().map(|m| m / n).collect())
}

/// Representation of a village handed to a transfer head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    /// Activations entering the last fully connected layer.
    Penultimate,
    /// The 16-dim predicted asset vector.
    Output,
}

pub fn village_vector(
    model: &Regressor,
    tiles: &[Vec<f64>],
    source: FeatureSource,
) -> Result<Vec<f64>, TransferError> {
    match source {
        FeatureSource::Penultimate => extract_features(&model.net, tiles),
        FeatureSource::Output => {
            let mode = if tiles.len() == 1 { TileMode::Single } else { TileMode::TileAverage };
            Ok(predict_village(model, tiles, mode)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// 1: a single linear fully connected layer. 2: FC → ReLU → FC.
    pub layers: usize,
    pub hidden: usize,
    pub sgd: SgdConfig,
    pub epochs: usize,
    pub decay_every_epochs: Option<u64>,
    pub seed: u64,
}

impl HeadConfig {
    pub fn desk(layers: usize, seed: u64) -> Self {
        Self {
            layers,
            hidden: 32,
            sgd: SgdConfig {
                learning_rate: 0.01,
                ..SgdConfig::default()
            },
            epochs: 300,
            decay_every_epochs: Some(150),
            seed,
        }
    }

    fn architecture(&self, inputs: usize, outputs: usize) -> Result<Architecture, TransferError> {
        let layers = match self.layers {
            1 => vec![LayerSpec::dense(inputs, outputs)],
            2 => vec![
                LayerSpec::dense(inputs, self.hidden),
                LayerSpec::Relu,
                LayerSpec::dense(self.hidden, outputs),
            ],
            n => return Err(TransferError::Input(format!("head layer count {n} not in {{1, 2}}"))),
        };
        Ok(Architecture::new(vec![inputs], layers))
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            sgd: self.sgd.clone(),
            augment: AugmentSpec::none(),
            epochs: self.epochs,
            decay_every_epochs: self.decay_every_epochs,
            standardize_targets: true,
            seed: derive_seed(self.seed, "head.train"),
        }
    }
}

/// A trained head with its input and output standardization.
#[derive(Debug, Clone)]
pub struct Head {
    pub net: Network,
    pub features: TargetScaler,
    pub targets: TargetScaler,
    pub curve: Vec<f64>,
}

impl Predictor for Head {
    fn input_len(&self) -> usize {
        self.features.mean.len()
    }

    fn output_width(&self) -> usize {
        self.net.output_width()
    }

    fn predict(&self, input: &[f64]) -> Vec<f64> {
        self.targets.inverse(&self.net.predict_one(&self.features.transform(input)))
    }
}

fn check_table(features: &[Vec<f64>], targets: &[Vec<f64>], min: usize) -> Result<(), TransferError> {
    if features.len() != targets.len() {
        return Err(TransferError::Input(format!(
            "{} feature rows for {} target rows",
            features.len(),
            targets.len()
        )));
    }
    if features.len() < min {
        return Err(TransferError::Input(format!(
            "need at least {min} samples, got {}",
            features.len()
        )));
    }
    let fw = features[0].len();
    let tw = targets[0].len();
    if fw == 0 || tw == 0 || features.iter().any(|f| f.len() != fw) || targets.iter().any(|t| t.len() != tw) {
        return Err(TransferError::Input("ragged or empty feature/target rows".into()));
    }
    if features.iter().flatten().chain(targets.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(TransferError::Input("non-finite feature or target".into()));
    }
    Ok(())
}

pub fn fit_head(
    features: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &HeadConfig,
) -> Result<Head, TransferError> {
    check_table(features, targets, 10)?;
    fit_head_unchecked(features, targets, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub test: Vec<usize>,
    /// Undefined for folds with fewer than two samples.
    pub report: Option<R2Report>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub k: usize,
    pub folds: Vec<Fold>,
    /// Mean over folds of each fold's overall R².
    pub mean_overall: Option<f64>,
    /// Fold index and overall R² of the best fold.
    pub best_fold: Option<(usize, f64)>,
    /// R² of the out-of-fold predictions pooled over all folds.
    pub pooled: R2Report,
}

impl CrossValReport {
    /// Mean fold score, falling back to the pooled score when folds are too small.
    pub fn score(&self) -> Option<f64> {
        self.mean_overall.or(self.pooled.overall)
    }
}

/// Seeded round-robin assignment of a shuffled `0..n` into `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, "folds"));
    let mut folds = vec![Vec::new(); k];
    for (p, i) in order.into_iter().enumerate() {
        folds[p % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

pub fn crossval(
    features: &[Vec<f64>],
    targets: &[Vec<f64>],
    k: usize,
    config: &HeadConfig,
) -> Result<CrossValReport, TransferError> {
    if k < 2 {
        return Err(TransferError::Input(format!("k = {k} folds; need at least 2")));
    }
    if features.len() < k {
        return Err(TransferError::Input(format!(
            "{} samples cannot fill {k} folds",
            features.len()
        )));
    }
    check_table(features, targets, k)?;
    let assignment = fold_assignment(features.len(), k, derive_seed(config.seed, "crossval"));
    let mut pooled = vec![Vec::new(); features.len()];
    let mut folds = Vec::with_capacity(k);
    for (f, test) in assignment.into_iter().enumerate() {
        let train_idx: Vec<usize> = (0..features.len()).filter(|i| test.binary_search(i).is_err()).collect();
        let mut fold_config = config.clone();
        fold_config.seed = derive_seed(config.seed, &format!("fold.{f}"));
        let head = fit_head_unchecked(&select(features, &train_idx), &select(targets, &train_idx), &fold_config)?;
        let pred = head.predict_all(&select(features, &test))?;
        for (&i, p) in test.iter().zip(&pred) {
            pooled[i] = p.clone();
        }
        let report = if test.len() >= 2 {
            Some(r2_score(&pred, &select(targets, &test))?)
        } else {
            None
        };
        folds.push(Fold { test, report });
    }
    let scores: Vec<(usize, f64)> = folds
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.report.as_ref().and_then(|r| r.overall).map(|s| (i, s)))
        .collect();
    let mean_overall = (!scores.is_empty())
        .then(|| scores.iter().map(|s| s.1).sum::<f64>() / scores.len() as f64);
    let best_fold = scores.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1));
    Ok(CrossValReport {
        k,
        folds,
        mean_overall,
        best_fold,
        pooled: r2_score(&pooled, targets)?,
    })
}

// Folds of a valid table may hold fewer than ten rows (e.g. leave-one-out on ten samples).
fn fit_head_unchecked(
    features: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &HeadConfig,
) -> Result<Head, TransferError> {
    check_table(features, targets, 1)?;
    let arch = config.architecture(features[0].len(), targets[0].len())?;
    let net = init_network(arch, derive_seed(config.seed, "head.init"))?;
    let fs = TargetScaler::fit(features);
    let ts = TargetScaler::fit(targets);
    let x: Vec<Vec<f64>> = features.iter().map(|f| fs.transform(f)).collect();
    let y: Vec<Vec<f64>> = targets.iter().map(|t| ts.transform(t)).collect();
    let mut tc = config.train_config();
    tc.standardize_targets = false;
    let outcome = train(net, &x, &y, &tc)?;
    Ok(Head {
        net: outcome.net,
        features: fs,
        targets: ts,
        curve: outcome.curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictRecord {
    pub district: String,
    /// Member village ids, sorted.
    pub members: Vec<String>,
    /// Arithmetic mean of member vectors.
    pub prediction: Vec<f64>,
    /// Target indicators when attached from an indicator table.
    pub targets: Vec<f64>,
}

/// Average per-village vectors within each district. Records come back sorted by
/// district id; summation runs in village-id order so the result does not depend
/// on input order.
pub fn aggregate_district(
    predictions: &[(String, Vec<f64>)],
    mapping: &BTreeMap<String, String>,
) -> Result<Vec<DistrictRecord>, TransferError> {
    let mut groups: BTreeMap<&str, Vec<(&str, &Vec<f64>)>> = BTreeMap::new();
    for (village, values) in predictions {
        let district = mapping
            .get(village)
            .ok_or_else(|| TransferError::Unmapped(village.clone()))?;
        groups.entry(district).or_default().push((village, values));
    }
    let mut out = Vec::with_capacity(groups.len());
    for (district, mut members) in groups {
        members.sort_by(|a, b| a.0.cmp(b.0));
        let width = members[0].1.len();
        if members.iter().any(|m| m.1.len() != width) {
            return Err(TransferError::Input(format!("district {district}: ragged vectors")));
        }
        let mut sum = vec![0.0; width];
        for (_, v) in &members {
            for (s, x) in sum.iter_mut().zip(v.iter()) {
                *s += x;
            }
        }
        let n = members.len() as f64;
        out.push(DistrictRecord {
            district: district.to_string(),
            members: members.iter().map(|m| m.0.to_string()).collect(),
            prediction: sum.into_iter().map(|s| s / n).collect(),
            targets: Vec::new(),
        });
    }
    Ok(out)
}

/// Align district records with an indicator table; returns `(features, targets)`
/// in table order and fills each record's `targets`.
pub fn attach_targets(
    records: &mut [DistrictRecord],
    table: &IndicatorTable,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), TransferError> {
    let index: BTreeMap<String, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.district.clone(), i))
        .collect();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (d, row) in table.districts.iter().zip(&table.values) {
        let &i = index
            .get(d)
            .ok_or_else(|| TransferError::Input(format!("district {d} has no village predictions")))?;
        records[i].targets = row.clone();
        x.push(records[i].prediction.clone());
        y.push(row.clone());
    }
    Ok((x, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Fixed-width bins on `[lo, hi]`; values outside are clamped into the end bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Histogram {
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = ((v.clamp(lo, hi) - lo) / width).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorScore {
    pub name: String,
    pub mean_r2: Option<f64>,
    pub best_fold_r2: Option<f64>,
    pub pooled_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scores: Vec<IndicatorScore>,
    pub histogram: Histogram,
}

/// Cross-validate a head per indicator column and histogram the scores on `[-1, 1]`.
pub fn indicator_sweep(
    features: &[Vec<f64>],
    table: &IndicatorTable,
    k: usize,
    config: &HeadConfig,
) -> Result<SweepReport, TransferError> {
    if features.len() != table.values.len() {
        return Err(TransferError::Input(format!(
            "{} feature rows for {} districts",
            features.len(),
            table.values.len()
        )));
    }
    let mut scores = Vec::with_capacity(table.names.len());
    for (j, name) in table.names.iter().enumerate() {
        let y: Vec<Vec<f64>> = table.column(j).into_iter().map(|v| vec![v]).collect();
        let mut c = config.clone();
        c.seed = derive_seed(config.seed, &format!("indicator.{name}"));
        let r = crossval(features, &y, k, &c)?;
        scores.push(IndicatorScore {
            name: name.clone(),
            mean_r2: r.score(),
            best_fold_r2: r.best_fold.map(|b| b.1),
            pooled_r2: r.pooled.overall,
        });
    }
    let values: Vec<f64> = scores.iter().filter_map(|s| s.mean_r2).collect();
    Ok(SweepReport {
        histogram: histogram(&values, 20, -1.0, 1.0),
        scores,
    })
}

pub fn write_sweep_csv<W: Write>(writer: W, report: &SweepReport) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["indicator", "mean_r2", "best_fold_r2", "pooled_r2"])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in &report.scores {
        w.write_record([s.name.clone(), fmt(s.mean_r2), fmt(s.best_fold_r2), fmt(s.pooled_r2)])?;
    }
    w.flush()?;
    Ok(())
}
