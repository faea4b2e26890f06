use std::collections::BTreeMap;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use satdev::nn::{init_network, Architecture, LayerSpec, MicroNetOptions};
use satdev::pipeline::{
    fit_regressor, r2_score, select, split_8_2, synth_generate, Predictor, SynthConfig, TrainConfig,
};
use satdev::transfer::*;

fn uniform_rows(n: usize, width: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn linear_map(x: &[Vec<f64>], outputs: usize, seed: u64) -> Vec<Vec<f64>> {
    let w = uniform_rows(outputs, x[0].len(), seed);
    x.iter()
        .map(|xi| w.iter().map(|r| 3.0 + r.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>()).collect())
        .collect()
}

fn held_out_r2(x: &[Vec<f64>], y: &[Vec<f64>], cfg: &HeadConfig) -> f64 {
    let split = split_8_2(x.len(), 4);
    let head = fit_head(&select(x, &split.train), &select(y, &split.train), cfg).unwrap();
    let pred = head.predict_all(&select(x, &split.test)).unwrap();
    r2_score(&pred, &select(y, &split.test)).unwrap().overall.unwrap()
}

fn micro(extent: usize, seed: u64) -> satdev::nn::Network {
    init_network(Architecture::micro_net(extent, &MicroNetOptions::default()), seed).unwrap()
}

#[test]
fn identical_tiles_match_single_tile_features() {
    let net = micro(16, 1);
    let tile = uniform_rows(1, 256, 2).remove(0).into_iter().map(|v| 100.0 * v).collect::<Vec<_>>();
    let one = extract_features(&net, &[tile.clone()]).unwrap();
    let four = extract_features(&net, &vec![tile; 4]).unwrap();
    assert_eq!(one.len(), 128);
    for (a, b) in one.iter().zip(&four) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    assert!(one.iter().all(|&v| v >= 0.0));
}

#[test]
fn features_need_a_penultimate_layer() {
    let net = init_network(Architecture::new(vec![4], vec![LayerSpec::dense(4, 2)]), 1).unwrap();
    assert!(matches!(
        extract_features(&net, &[vec![0.0; 4]]),
        Err(TransferError::NoPenultimateLayer)
    ));
    assert!(extract_features(&micro(16, 1), &[]).is_err());
}

#[test]
fn trained_planted_net_separates_built_up_mass() {
    let world = synth_generate(&SynthConfig { villages: 200, extent: 32, seed: 3, ..Default::default() }).unwrap();
    let inputs = world.inputs();
    let targets = world.asset_targets().unwrap();
    let mut cfg = TrainConfig::desk(1);
    cfg.epochs = 3;
    let net = fit_regressor(micro(32, 2), &inputs, &targets, &cfg).unwrap().0.net;
    let (lo, hi) = world
        .villages
        .iter()
        .enumerate()
        .fold((0, 0), |(lo, hi), (i, v)| {
            let b = |j: usize| world.villages[j].built_up;
            (if v.built_up < b(lo) { i } else { lo }, if v.built_up > b(hi) { i } else { hi })
        });
    let a = extract_features(&net, &[inputs[lo].clone()]).unwrap();
    let b = extract_features(&net, &[inputs[hi].clone()]).unwrap();
    assert_ne!(a, b);
}

#[test]
fn output_source_is_the_prediction() {
    let reg = satdev::pipeline::Regressor {
        net: micro(16, 3),
        scaler: satdev::pipeline::TargetScaler::identity(16),
    };
    let tile = vec![5.0; 256];
    assert_eq!(village_vector(&reg, &[tile.clone()], FeatureSource::Output).unwrap(), reg.predict(&tile));
    assert_eq!(village_vector(&reg, &[tile.clone()], FeatureSource::Penultimate).unwrap().len(), 128);
}

#[test]
fn zero_targets_drive_head_output_to_zero() {
    let x = uniform_rows(60, 8, 1);
    let y = vec![vec![0.0; 3]; 60];
    let head = fit_head(&x, &y, &HeadConfig::desk(1, 1)).unwrap();
    let (first, last) = (head.curve[0], *head.curve.last().unwrap());
    assert!(last < 1e-3 * first, "{first} -> {last}");
    assert!(head.predict_all(&x).unwrap().iter().flatten().all(|v| v.abs() < 1e-2));
}

#[test]
fn linear_targets_are_recovered_by_a_linear_head() {
    let x = uniform_rows(200, 8, 2);
    let y = linear_map(&x, 4, 3);
    let r = held_out_r2(&x, &y, &HeadConfig::desk(1, 2));
    assert!(r >= 0.95, "{r}");
}

#[test]
fn two_layer_head_wins_on_monotone_nonlinear_targets() {
    let x = uniform_rows(300, 2, 4);
    let y: Vec<Vec<f64>> = x.iter().map(|r| vec![(2.0 * (r[0] + r[1])).exp()]).collect();
    let one = held_out_r2(&x, &y, &HeadConfig::desk(1, 5));
    let two = held_out_r2(&x, &y, &HeadConfig::desk(2, 5));
    assert!(two > one, "two {two} one {one}");
}

#[test]
fn head_needs_ten_samples_and_valid_layers() {
    let x = uniform_rows(9, 3, 1);
    let y = linear_map(&x, 1, 1);
    assert!(fit_head(&x, &y, &HeadConfig::desk(1, 1)).is_err());
    let x = uniform_rows(20, 3, 1);
    let y = linear_map(&x, 1, 1);
    assert!(fit_head(&x, &y, &HeadConfig::desk(3, 1)).is_err());
}

#[test]
fn leave_one_out_crossval() {
    let x = uniform_rows(10, 2, 1);
    let y = linear_map(&x, 1, 2);
    let r = crossval(&x, &y, 10, &HeadConfig::desk(1, 1)).unwrap();
    assert_eq!(r.folds.len(), 10);
    assert!(r.folds.iter().all(|f| f.test.len() == 1 && f.report.is_none()));
    assert!(r.mean_overall.is_none());
    assert!(r.score().is_some());
    assert!(crossval(&x, &y, 11, &HeadConfig::desk(1, 1)).is_err());
    assert!(crossval(&x, &y, 1, &HeadConfig::desk(1, 1)).is_err());
}

#[test]
fn planted_linear_district_targets_crossvalidate() {
    let x = uniform_rows(182, 16, 5);
    let mut y = linear_map(&x, 3, 6);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    y.iter_mut().flatten().for_each(|v| *v += noise.sample(&mut rng));
    let r = crossval(&x, &y, 5, &HeadConfig::desk(1, 3)).unwrap();
    assert_eq!(r.folds.len(), 5);
    assert!(r.mean_overall.unwrap() >= 0.8, "{:?}", r.mean_overall);
    let best = r.best_fold.unwrap();
    assert!(best.1 >= r.mean_overall.unwrap());
}

#[test]
fn aggregate_district_means() {
    let a = vec![1.0, 2.0];
    let b = vec![3.0, 6.0];
    let c = vec![-1.0, 0.5];
    let mapping: BTreeMap<String, String> = [("v1", "d1"), ("v2", "d1"), ("v3", "d2")]
        .iter()
        .map(|(v, d)| (v.to_string(), d.to_string()))
        .collect();
    let preds = vec![("v1".to_string(), a), ("v2".to_string(), b), ("v3".to_string(), c.clone())];
    let recs = aggregate_district(&preds, &mapping).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].prediction, vec![2.0, 4.0]);
    assert_eq!(recs[0].members, vec!["v1", "v2"]);
    assert_eq!(recs[1].prediction, c);
    let mut rev = preds.clone();
    rev.reverse();
    assert_eq!(aggregate_district(&rev, &mapping).unwrap(), recs);
    let mut extra = preds;
    extra.push(("v9".to_string(), vec![0.0, 0.0]));
    match aggregate_district(&extra, &mapping) {
        Err(TransferError::Unmapped(v)) => assert_eq!(v, "v9"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn attach_targets_follows_table_order() {
    let mapping: BTreeMap<String, String> =
        [("a", "d2"), ("b", "d1")].iter().map(|(v, d)| (v.to_string(), d.to_string())).collect();
    let mut recs =
        aggregate_district(&[("a".into(), vec![1.0]), ("b".into(), vec![2.0])], &mapping).unwrap();
    let table = IndicatorTable {
        districts: vec!["d2".into(), "d1".into()],
        names: vec!["x".into()],
        values: vec![vec![20.0], vec![10.0]],
    };
    let (x, y) = attach_targets(&mut recs, &table).unwrap();
    assert_eq!(x, vec![vec![1.0], vec![2.0]]);
    assert_eq!(y, vec![vec![20.0], vec![10.0]]);
    assert_eq!(recs[0].targets, vec![10.0]);
    let missing = IndicatorTable { districts: vec!["d7".into()], ..table };
    assert!(attach_targets(&mut recs, &missing).is_err());
}

#[test]
fn sweep_separates_planted_from_noise_indicators() {
    let x = uniform_rows(182, 6, 8);
    let planted = linear_map(&x, 3, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let table = IndicatorTable {
        districts: (0..182).map(|d| format!("d{d:03}")).collect(),
        names: vec!["a".into(), "b".into(), "c".into(), "noise".into()],
        values: planted
            .iter()
            .map(|p| {
                let mut row = p.clone();
                row.push(rng.random_range(0.0..1.0));
                row
            })
            .collect(),
    };
    let cfg = HeadConfig::desk(1, 2);
    let report = indicator_sweep(&x, &table, 5, &cfg).unwrap();
    for s in &report.scores[..3] {
        assert!(s.mean_r2.unwrap() >= 0.6, "{s:?}");
    }
    assert!(report.scores[3].mean_r2.unwrap() <= 0.1, "{:?}", report.scores[3]);
    assert_eq!(report.histogram.counts.iter().sum::<usize>(), 4);
    assert_eq!(indicator_sweep(&x, &table, 5, &cfg).unwrap(), report);
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &report).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
}

#[test]
fn indicator_table_csv_round_trip() {
    let table = IndicatorTable {
        districts: vec!["d000".into(), "d001".into()],
        names: vec!["p".into(), "q".into()],
        values: vec![vec![1.5, -2.0], vec![0.1, 1e-9]],
    };
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    assert_eq!(IndicatorTable::read_csv(buf.as_slice()).unwrap(), table);
    assert!(IndicatorTable::read_csv("district_id,p\nd0,\n".as_bytes()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn folds_are_a_deterministic_partition(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = fold_assignment(n, k, seed);
        prop_assert_eq!(&folds, &fold_assignment(n, k, seed));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(folds.iter().all(|f| f.len() == n / k || f.len() == n / k + 1));
    }

    #[test]
    fn district_mean_ignores_member_order(seed in any::<u64>()) {
        let rows = uniform_rows(12, 3, seed);
        let mapping: BTreeMap<String, String> =
            (0..12).map(|i| (format!("v{i}"), format!("d{}", i % 3))).collect();
        let mut preds: Vec<(String, Vec<f64>)> =
            rows.into_iter().enumerate().map(|(i, r)| (format!("v{i}"), r)).collect();
        let a = aggregate_district(&preds, &mapping).unwrap();
        preds.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a, aggregate_district(&preds, &mapping).unwrap());
    }
}
