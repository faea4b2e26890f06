use std::sync::OnceLock;

use approx::assert_abs_diff_eq;
use image::{GrayImage, Luma};
use proptest::prelude::*;
use satdev::nn::{init_network, Architecture, LayerSpec, MicroNetOptions};
use satdev::pipeline::{
    fit_regressor, synth_generate, Predictor, Regressor, SynthConfig, TrainConfig, World,
};
use satdev::spatial::*;

/// Dense layer whose output is the mean raw pixel value divided by 255.
fn mean_pixel_net(extent: u32) -> satdev::nn::Network {
    let n = (extent * extent) as usize;
    let mut net = init_network(Architecture::new(vec![n], vec![LayerSpec::dense(n, 1)]), 0).unwrap();
    let p = net.params_mut()[0].as_mut().unwrap();
    p.weight.data_mut().fill(1.0 / (255.0 * n as f64));
    p.bias.data_mut()[0] = 127.5 / 255.0;
    net
}

fn planted() -> &'static (World, Regressor) {
    static CELL: OnceLock<(World, Regressor)> = OnceLock::new();
    CELL.get_or_init(|| {
        let world = synth_generate(&SynthConfig { villages: 800, seed: 11, ..Default::default() }).unwrap();
        let net = init_network(Architecture::micro_net(64, &MicroNetOptions::default()), 5).unwrap();
        let (reg, _) = fit_regressor(net, &world.inputs(), &world.asset_targets().unwrap(), &TrainConfig::desk(2)).unwrap();
        (world, reg)
    })
}

/// Indicators whose census value rises with development in the planted world.
fn development_positive(world: &World) -> Vec<usize> {
    let targets = world.asset_targets().unwrap();
    let dev: Vec<f64> = world.villages.iter().map(|v| v.development).collect();
    (0..16)
        .filter(|&j| {
            let col: Vec<f64> = targets.iter().map(|t| t[j]).collect();
            spearman(&col, &dev).is_some_and(|r| r > 0.8)
        })
        .collect()
}

#[test]
fn mean_pixel_net_closed_form_under_black_occluder() {
    let white = GrayImage::from_pixel(64, 64, Luma([255]));
    let net = mean_pixel_net(64);
    let opts = OcclusionOptions { occluder: 16, stride: 8, fill: 0.0 };
    let heat = occlusion_heatmap(&net, &white, 0, &opts).unwrap();
    assert_eq!((heat.values.width, heat.values.height), (7, 7));
    assert_abs_diff_eq!(heat.baseline, 1.0, epsilon = 1e-12);
    for v in heat.values.values.iter() {
        assert_abs_diff_eq!(v.unwrap(), 1.0 - 256.0 / 4096.0, epsilon = 1e-10);
    }
}

#[test]
fn constant_image_gives_constant_heatmap() {
    let img = GrayImage::from_pixel(32, 32, Luma([90]));
    let net = init_network(Architecture::micro_net(32, &MicroNetOptions::default()), 3).unwrap();
    let opts = OcclusionOptions { occluder: 8, stride: 4, fill: 90.0 };
    let heat = occlusion_heatmap(&net, &img, 2, &opts).unwrap();
    assert!(heat.deltas().values.iter().all(|v| v.unwrap() == 0.0));
}

#[test]
fn occlusion_leaves_image_untouched_and_validates() {
    let img = GrayImage::from_fn(20, 20, |x, y| Luma([(x * 7 + y * 3) as u8]));
    let before = img.clone();
    let net = mean_pixel_net(20);
    let heat = occlusion_heatmap(&net, &img, 0, &OcclusionOptions { occluder: 16, stride: 3, fill: 0.0 }).unwrap();
    assert_eq!(img, before);
    assert_eq!((heat.values.width, heat.values.height), (3, 3));
    let too_big = OcclusionOptions { occluder: 21, stride: 1, fill: 0.0 };
    assert!(occlusion_heatmap(&net, &img, 0, &too_big).is_err());
    assert!(occlusion_heatmap(&net, &img, 1, &OcclusionOptions::default()).is_err());
}

#[test]
fn stride_equal_to_occluder_tiles_exactly() {
    let img = GrayImage::from_fn(32, 32, |x, y| Luma([((x / 16) * 100 + (y / 16) * 50) as u8]));
    let net = mean_pixel_net(32);
    let heat = occlusion_heatmap(&net, &img, 0, &OcclusionOptions { occluder: 16, stride: 16, fill: 0.0 }).unwrap();
    // Summed drops over a tiling remove the whole image once.
    let drop: f64 = heat.deltas().values.iter().map(|d| -d.unwrap()).sum();
    assert_abs_diff_eq!(drop, heat.baseline, epsilon = 1e-10);
}

#[test]
fn dataset_mean_pixel_is_the_pixel_mean() {
    let a = GrayImage::from_pixel(2, 2, Luma([10]));
    let b = GrayImage::from_pixel(2, 2, Luma([30]));
    assert_eq!(dataset_mean_pixel(&[a, b]), 20.0);
}

#[test]
fn occluding_habitation_dips_more_than_blank_ground() {
    let (world, reg) = planted();
    let positive = development_positive(world);
    assert!(!positive.is_empty());
    let images: Vec<GrayImage> = world.villages.iter().map(|v| v.image.clone()).collect();
    let opts = OcclusionOptions { fill: dataset_mean_pixel(&images), ..Default::default() };
    let mut wins = 0;
    let mut trials = 0;
    for v in world.villages.iter().filter(|v| (0.05..0.2).contains(&v.built_up)).take(10) {
        let roof = |ox: usize, oy: usize| {
            (oy..oy + 16)
                .flat_map(|y| (ox..ox + 16).map(move |x| (x, y)))
                .filter(|&(x, y)| v.image.get_pixel(x as u32, y as u32).0[0] >= 190)
                .count()
        };
        let heat = occlusion_heatmap(reg, &v.image, positive[0], &opts).unwrap();
        let deltas = heat.deltas();
        let mut built = (0, f64::NAN);
        let mut blank = None;
        for gy in 0..deltas.height {
            for gx in 0..deltas.width {
                let r = roof(gx * 8, gy * 8);
                let d = deltas.get(gx, gy).unwrap();
                if r > built.0 {
                    built = (r, d);
                }
                if r == 0 && blank.is_none() {
                    blank = Some(d);
                }
            }
        }
        if let Some(b) = blank {
            trials += 1;
            if built.1 < b {
                wins += 1;
            }
        }
    }
    assert!(trials >= 5 && wins * 10 >= trials * 8, "{wins}/{trials}");
}

#[test]
fn step_field_edges_sit_on_the_boundary() {
    let grid = GeoGrid::from_fn(10, 6, |x, _| if x < 5 { 10.0 } else { 90.0 });
    let edges = detect_edges(&grid, Threshold::Fixed(1.0)).unwrap();
    let cells = edges.edge_cells();
    assert_eq!(cells.len(), 12);
    assert!(cells.iter().all(|&(x, _)| x == 4 || x == 5));
    assert_eq!(edges.magnitude.get(4, 2), Some(40.0));
    assert_eq!(edges.magnitude.get(0, 2), Some(0.0));
}

#[test]
fn hand_computed_central_differences() {
    let v = [[1.0, 4.0, 9.0], [2.0, 3.0, 7.0], [0.0, 5.0, 6.0]];
    let grid = GeoGrid::from_fn(3, 3, |x, y| v[y][x]);
    let m = detect_edges(&grid, Threshold::Fixed(0.0)).unwrap().magnitude;
    // centre: gx = (7 - 2)/2, gy = (5 - 4)/2
    assert_eq!(m.get(1, 1), Some(2.5f64.hypot(0.5)));
    // corner (0,0): forward both ways, gx = 4 - 1, gy = 2 - 1
    assert_eq!(m.get(0, 0), Some(3.0f64.hypot(1.0)));
    // (2,1): backward in x = 7 - 3, central in y = (6 - 9)/2
    assert_eq!(m.get(2, 1), Some(4.0f64.hypot(-1.5)));
}

#[test]
fn constant_grid_and_ramp_have_no_edges() {
    let flat = GeoGrid::from_fn(8, 8, |_, _| 3.0);
    for t in [Threshold::Fixed(1e-9), Threshold::Percentile(90.0)] {
        assert!(detect_edges(&flat, t).unwrap().edge_cells().is_empty());
    }
    let ramp = GeoGrid::from_fn(8, 8, |x, y| 2.0 * x as f64 + y as f64);
    let e = detect_edges(&ramp, Threshold::Percentile(90.0)).unwrap();
    assert!(e.magnitude.values.iter().all(|m| m.unwrap() == 5f64.sqrt()));
    assert!(e.edge_cells().is_empty());
}

#[test]
fn missing_cells_are_excluded() {
    let mut grid = GeoGrid::from_fn(4, 4, |x, _| x as f64);
    grid.values[5] = None;
    let e = detect_edges(&grid, Threshold::Fixed(0.0)).unwrap();
    assert_eq!(e.magnitude.values[5], None);
    assert!(!e.mask[5]);
    // Left neighbour missing: forward difference 2 - 1... here (2,1) has (1,1) missing.
    assert_eq!(e.magnitude.get(2, 1), Some(1.0));
    let empty = GeoGrid::new(2, 2, vec![None; 4]).unwrap();
    assert!(detect_edges(&empty, Threshold::default()).is_err());
    assert!(detect_edges(&GeoGrid::from_fn(1, 5, |_, _| 0.0), Threshold::default()).is_err());
}

#[test]
fn temporal_track_rules() {
    let net = init_network(Architecture::micro_net(16, &MicroNetOptions::default()), 1).unwrap();
    let a = GrayImage::from_fn(16, 16, |x, y| Luma([(x * 9 + y) as u8]));
    let b = GrayImage::from_pixel(16, 16, Luma([200]));
    let same = temporal_track(&net, &vec![a.clone(); 3]).unwrap();
    assert_eq!(same.len(), 3);
    assert!(same.windows(2).all(|w| w[0] == w[1]));
    let ab = temporal_track(&net, &[a.clone(), b.clone()]).unwrap();
    let ba = temporal_track(&net, &[b, a.clone()]).unwrap();
    assert_eq!(ab[0], ba[1]);
    assert_eq!(ab[1], ba[0]);
    assert!(temporal_track(&net, &[a.clone()]).is_err());
    assert!(temporal_track(&net, &[a, GrayImage::new(8, 8)]).is_err());
}

#[test]
fn growth_sequence_trends_upward() {
    let (world, reg) = planted();
    let positive = development_positive(world);
    let start = world.villages.iter().position(|v| (0.2..0.4).contains(&v.development)).unwrap();
    let series = temporal_track(reg, &world.growth_sequence(start, 8)).unwrap();
    let time: Vec<f64> = (0..8).map(|t| t as f64).collect();
    for &j in &positive {
        let col: Vec<f64> = series.iter().map(|s| s[j]).collect();
        let rho = spearman(&col, &time).unwrap();
        assert!(rho >= 0.8, "indicator {j}: rho {rho}, series {col:?}");
    }
}

#[test]
fn two_by_two_choropleth_colours() {
    let grid = GeoGrid::new(2, 2, vec![Some(0.0), Some(1.0), Some(2.9), None]).unwrap();
    let palette = Palette::new(vec![[255, 0, 0], [0, 255, 0], [0, 0, 255]], 0.0, 3.0).unwrap();
    let img = choropleth_image(&grid, &palette, 1);
    let px: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
    assert_eq!(px, vec![[255, 0, 0], [0, 255, 0], [0, 0, 255], MISSING_COLOR]);
}

#[test]
fn choropleth_files_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let grid = GeoGrid::new(3, 2, vec![Some(1.0), Some(1.0), None, Some(1.0), Some(1.0), Some(1.0)]).unwrap();
    let palette = Palette::for_grid(&grid);
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    let la = render_choropleth(&grid, &palette, 4, &a).unwrap();
    let lb = render_choropleth(&grid, &palette, 4, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(la).unwrap(), std::fs::read(lb).unwrap());
    let img = image::open(&a).unwrap().to_rgb8();
    let mut colors: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
    colors.sort();
    colors.dedup();
    assert_eq!(colors.len(), 2);
    assert!(colors.contains(&MISSING_COLOR));
    let bad = dir.path().join("missing").join("x.png");
    assert!(matches!(render_choropleth(&grid, &palette, 1, &bad), Err(SpatialError::Io { .. })));
}

#[test]
fn predictor_sees_centred_pixels() {
    let net = mean_pixel_net(4);
    let img = GrayImage::from_pixel(4, 4, Luma([51]));
    assert_abs_diff_eq!(net.predict(&satdev::pipeline::image_input(&img))[0], 0.2, epsilon = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn edges_ignore_shift_and_sign(vals in proptest::collection::vec(-50.0f64..50.0, 30), shift in -100.0f64..100.0) {
        let grid = GeoGrid::from_fn(6, 5, |x, y| vals[y * 6 + x]);
        let base = detect_edges(&grid, Threshold::Percentile(90.0)).unwrap();
        let neg = detect_edges(&grid.map(|v| -v), Threshold::Percentile(90.0)).unwrap();
        prop_assert_eq!(&base.mask, &neg.mask);
        let shifted = detect_edges(&grid.map(|v| v + shift), Threshold::Fixed(base.threshold)).unwrap();
        for (a, b) in base.magnitude.values.iter().zip(&shifted.magnitude.values) {
            prop_assert!((a.unwrap() - b.unwrap()).abs() < 1e-9);
        }
    }
}
