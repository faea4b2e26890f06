use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use satdev::census::*;

fn zero_row() -> CensusRow {
    CensusRow::filled("v", 0.0)
}

fn random_rows(n: usize, seed: u64) -> Vec<CensusRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut r = CensusRow::new(format!("v{i}"));
            for c in 1..=CENSUS_COLUMNS {
                r.columns.insert(c, rng.random_range(0.0..100.0));
            }
            r
        })
        .collect()
}

fn normal_vectors(n: usize, seed: u64) -> Vec<AssetVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut v = [0.0; INDICATOR_COUNT];
            v.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
            AssetVector(v)
        })
        .collect()
}

// Independent distance oracle: plain mean/covariance and Gauss-Jordan inverse.
fn oracle_distances(all: &[AssetVector], reference: &[usize]) -> Vec<f64> {
    let p = INDICATOR_COUNT;
    let n = reference.len() as f64;
    let mut mean = vec![0.0; p];
    for &i in reference {
        for j in 0..p {
            mean[j] += all[i].0[j] / n;
        }
    }
    let mut cov = vec![vec![0.0; p]; p];
    for &i in reference {
        for a in 0..p {
            for b in 0..p {
                cov[a][b] += (all[i].0[a] - mean[a]) * (all[i].0[b] - mean[b]) / (n - 1.0);
            }
        }
    }
    let mut aug: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            let mut row = cov[i].clone();
            row.extend((0..p).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .unwrap();
        aug.swap(col, piv);
        let d = aug[col][col];
        aug[col].iter_mut().for_each(|v| *v /= d);
        for r in 0..p {
            if r != col {
                let f = aug[r][col];
                let pivot_row = aug[col].clone();
                aug[r].iter_mut().zip(pivot_row).for_each(|(v, pv)| *v -= f * pv);
            }
        }
    }
    all.iter()
        .map(|x| {
            let d: Vec<f64> = (0..p).map(|j| x.0[j] - mean[j]).collect();
            let mut q = 0.0;
            for a in 0..p {
                for b in 0..p {
                    q += d[a] * aug[a][p + b] * d[b];
                }
            }
            q.sqrt()
        })
        .collect()
}

fn no_ridge(scatter: Scatter) -> MahalanobisOptions {
    MahalanobisOptions {
        threshold: 30.0,
        ridge: 0.0,
        scatter,
    }
}

#[test]
fn zero_row_gives_zero_indicators() {
    assert_eq!(aggregate_assets(&zero_row()).unwrap(), AssetVector::zeros());
}

#[test]
fn electronics_divides_four_columns_by_three() {
    let mut row = zero_row();
    for c in 128..=131 {
        row.columns.insert(c, 30.0);
    }
    let v = aggregate_assets(&row).unwrap();
    assert_abs_diff_eq!(v.get("electronics").unwrap(), 40.0, epsilon = 1e-12);
    assert!(v.0[1..].iter().all(|&x| x == 0.0));
}

#[test]
fn water_treated_sums_three_columns() {
    let mut row = zero_row();
    row.columns.insert(72, 10.0);
    row.columns.insert(74, 20.0);
    row.columns.insert(77, 5.0);
    let v = aggregate_assets(&row).unwrap();
    assert_eq!(v.get("water-treated"), Some(35.0));
    assert_eq!(v.0.iter().filter(|&&x| x != 0.0).count(), 1);
}

#[test]
fn aggregates_are_not_clamped() {
    let mut row = zero_row();
    for c in 56..=59 {
        row.columns.insert(c, 60.0);
    }
    assert_eq!(aggregate_assets(&row).unwrap().get("household-size-under-5"), Some(240.0));
}

#[test]
fn correlation_needs_three_rows() {
    assert!(matches!(
        correlation_matrix(&random_rows(2, 1)),
        Err(CensusError::TooFewRows { needed: 3, got: 2 })
    ));
}

#[test]
fn correlation_identity_columns_and_constant_column() {
    let mut rows = random_rows(60, 2);
    rows.iter_mut().for_each(|r| {
        r.columns.insert(5, 42.0);
    });
    let m = correlation_matrix(&rows).unwrap();
    assert_eq!(m.values.len(), 140);
    for (col, name) in [
        (135, "transport-cycle"),
        (127, "banking-services"),
        (139, "no-assets"),
        (140, "permanent-house"),
    ] {
        assert_abs_diff_eq!(m.get(col, indicator_index(name).unwrap()), 1.0, epsilon = 1e-12);
    }
    assert!((0..INDICATOR_COUNT).all(|j| m.get(5, j) == 0.0));
    assert!(m.values.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn pca_needs_seventeen_vectors() {
    assert!(matches!(
        pca_first_component(&normal_vectors(16, 3)),
        Err(CensusError::TooFewRows { needed: 17, .. })
    ));
    assert!(pca_first_component(&normal_vectors(17, 3)).is_ok());
}

#[test]
fn pca_single_axis() {
    let vectors: Vec<AssetVector> = (0..40)
        .map(|i| {
            let mut v = [3.0; INDICATOR_COUNT];
            v[6] = i as f64 * 0.5 - 7.0;
            AssetVector(v)
        })
        .collect();
    let r = pca_first_component(&vectors).unwrap();
    for (j, d) in r.direction.iter().enumerate() {
        assert_abs_diff_eq!(*d, if j == 6 { 1.0 } else { 0.0 }, epsilon = 1e-10);
    }
    assert_abs_diff_eq!(r.explained_variance_ratio, 1.0, epsilon = 1e-10);
    assert_abs_diff_eq!(r.scores.iter().sum::<f64>(), 0.0, epsilon = 1e-9);
}

#[test]
fn pca_isotropic_plane_explains_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vectors: Vec<AssetVector> = (0..20_000)
        .map(|_| {
            let mut v = [0.0; INDICATOR_COUNT];
            v[2] = StandardNormal.sample(&mut rng);
            v[9] = StandardNormal.sample(&mut rng);
            AssetVector(v)
        })
        .collect();
    let r = pca_first_component(&vectors).unwrap();
    assert!((r.explained_variance_ratio - 0.5).abs() < 0.02, "{}", r.explained_variance_ratio);
}

#[test]
fn pca_degenerate_reports_rank() {
    let vectors = vec![AssetVector([1.0; INDICATOR_COUNT]); 30];
    assert!(matches!(
        pca_first_component(&vectors),
        Err(CensusError::Degenerate { rank: 0, dim: 16 })
    ));
}

// Power iteration on the plain sample covariance.
fn oracle_top_eigenvalue(vectors: &[AssetVector]) -> f64 {
    let all: Vec<usize> = (0..vectors.len()).collect();
    let p = INDICATOR_COUNT;
    let n = vectors.len() as f64;
    let mean: Vec<f64> = (0..p)
        .map(|j| all.iter().map(|&i| vectors[i].0[j]).sum::<f64>() / n)
        .collect();
    let mut cov = vec![vec![0.0; p]; p];
    for v in vectors {
        for a in 0..p {
            for b in 0..p {
                cov[a][b] += (v.0[a] - mean[a]) * (v.0[b] - mean[b]) / (n - 1.0);
            }
        }
    }
    let mut x = vec![1.0; p];
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let y: Vec<f64> = (0..p).map(|a| (0..p).map(|b| cov[a][b] * x[b]).sum()).collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        lambda = norm / x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = y.iter().map(|v| v / norm).collect();
    }
    lambda
}

#[test]
fn pca_score_variance_is_top_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vectors: Vec<AssetVector> = (0..200)
        .map(|_| {
            let t: f64 = StandardNormal.sample(&mut rng);
            let mut v = [0.0; INDICATOR_COUNT];
            for (j, x) in v.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *x = t * (j as f64 + 1.0) * 0.3 + e;
            }
            AssetVector(v)
        })
        .collect();
    let r = pca_first_component(&vectors).unwrap();
    let n = r.scores.len() as f64;
    let var = r.scores.iter().map(|s| s * s).sum::<f64>() / (n - 1.0);
    assert_abs_diff_eq!(var, r.eigenvalue, epsilon = 1e-8 * r.eigenvalue);
    assert_abs_diff_eq!(r.eigenvalue, oracle_top_eigenvalue(&vectors), epsilon = 1e-8 * r.eigenvalue);
    let pivot = r.direction.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
    assert!(pivot > 0.0);
}

#[test]
fn mean_vector_has_zero_distance() {
    let mut vectors = normal_vectors(100, 6);
    let n = vectors.len() as f64;
    let mut mean = [0.0; INDICATOR_COUNT];
    for v in &vectors {
        for j in 0..INDICATOR_COUNT {
            mean[j] += v.0[j] / n;
        }
    }
    vectors.push(AssetVector(mean));
    let r = mahalanobis_filter(&vectors, &no_ridge(Scatter::Classical)).unwrap();
    assert_abs_diff_eq!(*r.distances.last().unwrap(), 0.0, epsilon = 1e-9);
    assert!(!r.rejected.last().unwrap());
}

#[test]
fn standard_normal_rejects_nothing_at_thirty() {
    let vectors = normal_vectors(5000, 7);
    for scatter in [Scatter::Classical, Scatter::Robust] {
        let r = mahalanobis_filter(
            &vectors,
            &MahalanobisOptions {
                scatter,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.rejection_fraction, 0.0);
        // chi(16) has mean about 3.94; nothing near 30.
        let max = r.distances.iter().cloned().fold(0.0, f64::max);
        assert!(max < 10.0, "{max}");
    }
}

#[test]
fn planted_outliers_exactly_rejected() {
    let n = 2000;
    let mut vectors = normal_vectors(n, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let planted: Vec<usize> = (0..n).filter(|i| i % 20 == 3).collect();
    for &i in &planted {
        let j = rng.random_range(0..INDICATOR_COUNT);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        vectors[i].0[j] += sign * 100.0;
    }
    let r = mahalanobis_filter(&vectors, &MahalanobisOptions::default()).unwrap();
    let rejected: Vec<usize> = (0..n).filter(|&i| r.rejected[i]).collect();
    assert_eq!(rejected, planted);
    assert_abs_diff_eq!(r.rejection_fraction, 0.05, epsilon = 1e-12);

    let inliers: Vec<usize> = (0..n).filter(|i| i % 20 != 3).collect();
    assert_eq!(r.reference_rows, inliers);
    let ridge_free = mahalanobis_filter(&vectors, &no_ridge(Scatter::Robust)).unwrap();
    for (a, b) in ridge_free.distances.iter().zip(oracle_distances(&vectors, &inliers)) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-8 * b.max(1.0));
    }
}

#[test]
fn classical_distances_match_oracle() {
    let vectors = normal_vectors(300, 10);
    let r = mahalanobis_filter(&vectors, &no_ridge(Scatter::Classical)).unwrap();
    let all: Vec<usize> = (0..vectors.len()).collect();
    for (a, b) in r.distances.iter().zip(oracle_distances(&vectors, &all)) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
    }
}

#[test]
fn singular_covariance_fails_without_ridge() {
    let mut vectors = normal_vectors(100, 11);
    vectors.iter_mut().for_each(|v| v.0[4] = v.0[3]);
    assert!(matches!(
        mahalanobis_filter(&vectors, &no_ridge(Scatter::Classical)),
        Err(CensusError::Singular)
    ));
    assert!(mahalanobis_filter(
        &vectors,
        &MahalanobisOptions {
            scatter: Scatter::Classical,
            ..Default::default()
        }
    )
    .is_ok());
}

#[test]
fn filter_needs_seventeen_vectors() {
    assert!(matches!(
        mahalanobis_filter(&normal_vectors(16, 12), &MahalanobisOptions::default()),
        Err(CensusError::TooFewRows { .. })
    ));
}

#[test]
fn asset_csv_round_trip() {
    let rows: Vec<(String, AssetVector)> = normal_vectors(5, 13)
        .into_iter()
        .enumerate()
        .map(|(i, v)| (format!("id{i}"), v))
        .collect();
    let mut buf = Vec::new();
    write_assets_csv(&mut buf, &rows).unwrap();
    assert_eq!(read_assets_csv(buf.as_slice()).unwrap(), rows);
}

#[test]
fn missing_cell_in_csv_surfaces_as_missing_column() {
    let mut rows = random_rows(1, 14);
    rows[0].columns.remove(&103);
    let mut buf = Vec::new();
    write_census_csv(&mut buf, &rows).unwrap();
    let back = read_census_csv(buf.as_slice()).unwrap();
    assert!(matches!(
        aggregate_assets(&back[0]),
        Err(CensusError::MissingColumn { column: 103, .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn aggregation_is_linear(seed in any::<u64>(), c in -5.0f64..5.0) {
        let rows = random_rows(2, seed);
        let a = aggregate_assets(&rows[0]).unwrap();
        let b = aggregate_assets(&rows[1]).unwrap();
        let mut mix = CensusRow::new("m");
        for col in 1..=CENSUS_COLUMNS {
            mix.columns.insert(col, c * rows[0].columns[&col] + rows[1].columns[&col]);
        }
        let m = aggregate_assets(&mix).unwrap();
        for j in 0..INDICATOR_COUNT {
            prop_assert!((m.0[j] - (c * a.0[j] + b.0[j])).abs() < 1e-9);
        }
    }

    #[test]
    fn mahalanobis_is_affine_invariant(seed in any::<u64>()) {
        let vectors = normal_vectors(120, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
        let mut a = [[0.0; INDICATOR_COUNT]; INDICATOR_COUNT];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = rng.random_range(-0.5..0.5) + if i == j { 2.0 } else { 0.0 };
            }
        }
        let shift: Vec<f64> = (0..INDICATOR_COUNT).map(|_| rng.random_range(-50.0..50.0)).collect();
        let mapped: Vec<AssetVector> = vectors
            .iter()
            .map(|v| {
                let mut out = [0.0; INDICATOR_COUNT];
                for i in 0..INDICATOR_COUNT {
                    out[i] = shift[i] + (0..INDICATOR_COUNT).map(|j| a[i][j] * v.0[j]).sum::<f64>();
                }
                AssetVector(out)
            })
            .collect();
        for scatter in [Scatter::Classical, Scatter::Robust] {
            let d0 = mahalanobis_filter(&vectors, &no_ridge(scatter)).unwrap().distances;
            let d1 = mahalanobis_filter(&mapped, &no_ridge(scatter)).unwrap().distances;
            for (x, y) in d0.iter().zip(&d1) {
                prop_assert!((x - y).abs() < 1e-8, "{x} vs {y}");
            }
        }
    }
}
