//! Village census rows, the 16-indicator asset vector, correlation and PCA
//! diagnostics, and Mahalanobis outlier rejection.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

/// Number of raw amenity columns, indexed `[1]..=[140]`.
pub const CENSUS_COLUMNS: usize = 140;
pub const INDICATOR_COUNT: usize = 16;

#[derive(Debug, Error)]
pub enum CensusError {
    #[error("village {village}: missing column [{column}]")]
    MissingColumn { village: String, column: usize },
    #[error("village {village}: non-finite value in column [{column}]")]
    NonFinite { village: String, column: usize },
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("degenerate covariance (rank {rank} of {dim})")]
    Degenerate { rank: usize, dim: usize },
    #[error("covariance is numerically singular even after ridge regularization")]
    Singular,
    #[error("malformed census csv: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How each indicator is aggregated from bracketed census columns:
/// `(name, columns summed, divisor)`.
pub const TABLE: [(&str, &[usize], f64); INDICATOR_COUNT] = [
    // Four columns over three, reproduced as tabulated.
    ("electronics", &[128, 129, 130, 131], 3.0),
    ("water-treated", &[72, 74, 77], 1.0),
    ("water-untreated", &[73, 75], 1.0),
    ("water-natural", &[76, 78, 79, 80, 81], 1.0),
    ("light-electricity", &[85, 87], 1.0),
    ("light-oil", &[86, 88, 89], 1.0),
    ("has-phone", &[132, 133, 134], 1.0),
    ("transport-cycle", &[135], 1.0),
    ("transport-motorized", &[136, 137], 1.0),
    ("no-assets", &[139], 1.0),
    ("banking-services", &[127], 1.0),
    ("cook-fuel-processed", &[113, 114, 115], 1.0),
    ("bathroom-within", &[103, 104], 1.0),
    ("rooms-under-3", &[49, 50, 51], 1.0),
    ("household-size-under-5", &[56, 57, 58, 59], 1.0),
    ("permanent-house", &[140], 1.0),
];

pub fn indicator_names() -> [&'static str; INDICATOR_COUNT] {
    TABLE.map(|(name, _, _)| name)
}

pub fn indicator_index(name: &str) -> Option<usize> {
    TABLE.iter().position(|(n, _, _)| *n == name)
}

/// Every census column referenced by the aggregation table, ascending.
pub fn referenced_columns() -> Vec<usize> {
    let mut cols: Vec<usize> = TABLE.iter().flat_map(|(_, c, _)| c.iter().copied()).collect();
    cols.sort_unstable();
    cols.dedup();
    cols
}

/// One village's raw percentages keyed by bracketed column index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub village_id: String,
    pub columns: BTreeMap<usize, f64>,
}

impl CensusRow {
    pub fn new(village_id: impl Into<String>) -> Self {
        Self {
            village_id: village_id.into(),
            columns: BTreeMap::new(),
        }
    }

    /// Row with every column `[1]..=[140]` set to `value`.
    pub fn filled(village_id: impl Into<String>, value: f64) -> Self {
        Self {
            village_id: village_id.into(),
            columns: (1..=CENSUS_COLUMNS).map(|c| (c, value)).collect(),
        }
    }

    pub fn get(&self, column: usize) -> Result<f64, CensusError> {
        let v = *self
            .columns
            .get(&column)
            .ok_or_else(|| CensusError::MissingColumn {
                village: self.village_id.clone(),
                column,
            })?;
        if !v.is_finite() {
            return Err(CensusError::NonFinite {
                village: self.village_id.clone(),
                column,
            });
        }
        Ok(v)
    }
}

/// The 16 aggregated indicators in table order. Values are not clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssetVector(pub [f64; INDICATOR_COUNT]);

impl AssetVector {
    pub fn zeros() -> Self {
        Self([0.0; INDICATOR_COUNT])
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        values.try_into().ok().map(Self)
    }

    pub fn values(&self) -> &[f64; INDICATOR_COUNT] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        indicator_index(name).map(|i| self.0[i])
    }
}

pub fn aggregate_assets(row: &CensusRow) -> Result<AssetVector, CensusError> {
    let mut out = [0.0; INDICATOR_COUNT];
    for (slot, (_, cols, divisor)) in out.iter_mut().zip(TABLE.iter()) {
        let mut sum = 0.0;
        for &c in *cols {
            sum += row.get(c)?;
        }
        *slot = sum / divisor;
    }
    Ok(AssetVector(out))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Pearson correlation of each raw column against each indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    /// `values[c - 1][j]` correlates column `[c]` with indicator `j`.
    pub values: Vec<[f64; INDICATOR_COUNT]>,
}

impl CorrelationMatrix {
    pub fn get(&self, column: usize, indicator: usize) -> f64 {
        self.values[column - 1][indicator]
    }
}

/// 140×16 correlation diagnostic; constant columns correlate 0.
pub fn correlation_matrix(rows: &[CensusRow]) -> Result<CorrelationMatrix, CensusError> {
    if rows.len() < 3 {
        return Err(CensusError::TooFewRows {
            needed: 3,
            got: rows.len(),
        });
    }
    let assets = rows
        .iter()
        .map(aggregate_assets)
        .collect::<Result<Vec<_>, _>>()?;
    let indicators: Vec<Vec<f64>> = (0..INDICATOR_COUNT)
        .map(|j| assets.iter().map(|a| a.0[j]).collect())
        .collect();
    let mut values = Vec::with_capacity(CENSUS_COLUMNS);
    for c in 1..=CENSUS_COLUMNS {
        let col = rows
            .iter()
            .map(|r| r.get(c))
            .collect::<Result<Vec<_>, _>>()?;
        let mut line = [0.0; INDICATOR_COUNT];
        for (slot, ind) in line.iter_mut().zip(&indicators) {
            *slot = pearson(&col, ind);
        }
        values.push(line);
    }
    Ok(CorrelationMatrix { values })
}

fn as_matrix(vectors: &[AssetVector]) -> DMatrix<f64> {
    DMatrix::from_fn(vectors.len(), INDICATOR_COUNT, |i, j| vectors[i].0[j])
}

fn mean_and_covariance(data: &DMatrix<f64>, rows: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let p = data.ncols();
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(p);
    for &i in rows {
        mean += data.row(i).transpose();
    }
    mean /= n;
    let mut cov = DMatrix::zeros(p, p);
    for &i in rows {
        let d = data.row(i).transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov /= n - 1.0;
    (mean, cov)
}

/// Leading principal component of the sample covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// Unit-norm direction, sign fixed so the largest-magnitude loading is positive.
    pub direction: [f64; INDICATOR_COUNT],
    /// Centered projections onto `direction`, one per input vector.
    pub scores: Vec<f64>,
    pub eigenvalue: f64,
    pub explained_variance_ratio: f64,
}

pub fn pca_first_component(vectors: &[AssetVector]) -> Result<PcaResult, CensusError> {
    if vectors.len() <= INDICATOR_COUNT {
        return Err(CensusError::TooFewRows {
            needed: INDICATOR_COUNT + 1,
            got: vectors.len(),
        });
    }
    let data = as_matrix(vectors);
    let all: Vec<usize> = (0..vectors.len()).collect();
    let (mean, cov) = mean_and_covariance(&data, &all);
    let eig = SymmetricEigen::new(cov);
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let (top, &eigenvalue) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let tol = 1e-12 * total.max(f64::MIN_POSITIVE);
    if !(eigenvalue > tol) {
        let rank = eig.eigenvalues.iter().filter(|&&v| v > tol).count();
        return Err(CensusError::Degenerate {
            rank,
            dim: INDICATOR_COUNT,
        });
    }
    let mut direction = [0.0; INDICATOR_COUNT];
    for (j, d) in direction.iter_mut().enumerate() {
        *d = eig.eigenvectors[(j, top)];
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let pivot = direction
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap();
    let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
    direction.iter_mut().for_each(|d| *d *= sign / norm);
    let scores = vectors
        .iter()
        .map(|v| {
            v.0.iter()
                .zip(mean.iter())
                .zip(&direction)
                .map(|((x, m), d)| (x - m) * d)
                .sum()
        })
        .collect();
    Ok(PcaResult {
        direction,
        scores,
        eigenvalue,
        explained_variance_ratio: eigenvalue / total,
    })
}

/// Where the location and scatter for the distances come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scatter {
    /// Mean and covariance of every vector.
    Classical,
    /// Mean and covariance of the vectors retained by a reweighted minimum
    /// covariance determinant core; immune to masking by clustered outliers.
    Robust,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisOptions {
    pub threshold: f64,
    /// Ridge `ridge · trace(Σ)/p` added to the covariance diagonal; 0 disables it.
    pub ridge: f64,
    pub scatter: Scatter,
}

impl Default for MahalanobisOptions {
    fn default() -> Self {
        Self {
            threshold: 30.0,
            ridge: 1e-6,
            scatter: Scatter::Robust,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub distances: Vec<f64>,
    pub rejected: Vec<bool>,
    pub threshold: f64,
    pub rejection_fraction: f64,
    /// Indices whose mean/covariance define the distances.
    pub reference_rows: Vec<usize>,
}

impl OutlierReport {
    pub fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        self.rejected
            .iter()
            .enumerate()
            .filter(|(_, r)| !**r)
            .map(|(i, _)| i)
    }
}

/// Location and inverse scatter of a reference subset.
struct Metric {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
}

impl Metric {
    fn fit(data: &DMatrix<f64>, rows: &[usize], ridge: f64) -> Result<Self, CensusError> {
        let (mean, mut cov) = mean_and_covariance(data, rows);
        let p = cov.nrows();
        if ridge > 0.0 {
            let bump = ridge * cov.trace() / p as f64;
            for i in 0..p {
                cov[(i, i)] += bump;
            }
        }
        let chol = cov.clone().cholesky().ok_or(CensusError::Singular)?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        if !precision.iter().all(|v| v.is_finite()) || !log_det.is_finite() {
            return Err(CensusError::Singular);
        }
        Ok(Self {
            mean,
            precision,
            log_det,
        })
    }

    fn distance(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        (d.dot(&(&self.precision * &d))).max(0.0).sqrt()
    }

    fn distances(&self, data: &DMatrix<f64>) -> Vec<f64> {
        (0..data.nrows())
            .map(|i| self.distance(&data.row(i).transpose()))
            .collect()
    }
}

fn smallest(distances: &[f64], h: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let mut keep = order[..h].to_vec();
    keep.sort_unstable();
    keep
}

/// Deterministic concentration steps from the classical ordering, followed by
/// a consistency-corrected reweighting at `threshold`.
fn robust_core(
    data: &DMatrix<f64>,
    threshold: f64,
    ridge: f64,
) -> Result<Vec<usize>, CensusError> {
    let n = data.nrows();
    let p = data.ncols();
    let h = (n + p + 1) / 2;
    let all: Vec<usize> = (0..n).collect();
    let mut subset = smallest(&Metric::fit(data, &all, ridge)?.distances(data), h);
    let mut metric = Metric::fit(data, &subset, ridge)?;
    for _ in 0..100 {
        let next = smallest(&metric.distances(data), h);
        let next_metric = Metric::fit(data, &next, ridge)?;
        let converged = next == subset || next_metric.log_det >= metric.log_det - 1e-12;
        subset = next;
        metric = next_metric;
        if converged {
            break;
        }
    }
    // The h-subset scatter underestimates the population scatter; rescale so
    // the median squared distance matches the chi-square median.
    let chi = ChiSquared::new(p as f64).unwrap();
    let mut sq: Vec<f64> = metric.distances(data).iter().map(|d| d * d).collect();
    sq.sort_by(f64::total_cmp);
    let median = sq[n / 2];
    let factor = if median > 0.0 {
        median / chi.inverse_cdf(0.5)
    } else {
        1.0
    };
    let core: Vec<usize> = metric
        .distances(data)
        .iter()
        .enumerate()
        .filter(|(_, d)| (*d * *d) / factor <= threshold * threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(if core.len() > p { core } else { all })
}

/// Reject vectors whose Mahalanobis distance exceeds `options.threshold`.
pub fn mahalanobis_filter(
    vectors: &[AssetVector],
    options: &MahalanobisOptions,
) -> Result<OutlierReport, CensusError> {
    if vectors.len() <= INDICATOR_COUNT {
        return Err(CensusError::TooFewRows {
            needed: INDICATOR_COUNT + 1,
            got: vectors.len(),
        });
    }
    let data = as_matrix(vectors);
    let reference_rows = match options.scatter {
        Scatter::Classical => (0..vectors.len()).collect(),
        Scatter::Robust => robust_core(&data, options.threshold, options.ridge)?,
    };
    let metric = Metric::fit(&data, &reference_rows, options.ridge)?;
    let distances = metric.distances(&data);
    let rejected: Vec<bool> = distances.iter().map(|&d| d > options.threshold).collect();
    let rejection_fraction =
        rejected.iter().filter(|&&r| r).count() as f64 / vectors.len() as f64;
    Ok(OutlierReport {
        distances,
        rejected,
        threshold: options.threshold,
        rejection_fraction,
        reference_rows,
    })
}

// ---------------------------------------------------------------- CSV

fn parse_header(header: &str) -> Option<usize> {
    header
        .trim()
        .strip_prefix('[')?
        .strip_suffix(']')?
        .parse()
        .ok()
}

/// Read `village_id,[1],[2],…` rows; empty cells are treated as missing.
pub fn read_census_csv<R: Read>(reader: R) -> Result<Vec<CensusRow>, CensusError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h.trim() == "village_id")
        .ok_or_else(|| CensusError::Format("no village_id column".into()))?;
    let mut columns = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i == id_col {
            continue;
        }
        let c = parse_header(h)
            .ok_or_else(|| CensusError::Format(format!("unrecognized header {h:?}")))?;
        columns.push((i, c));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let mut row = CensusRow::new(&record[id_col]);
        for &(i, c) in &columns {
            let cell = record.get(i).unwrap_or("").trim();
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                CensusError::Format(format!("village {}: bad value {cell:?}", row.village_id))
            })?;
            row.columns.insert(c, v);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_census_csv<W: Write>(writer: W, rows: &[CensusRow]) -> Result<(), CensusError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["village_id".to_string()];
    header.extend((1..=CENSUS_COLUMNS).map(|c| format!("[{c}]")));
    wtr.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.village_id.clone()];
        rec.extend((1..=CENSUS_COLUMNS).map(|c| {
            row.columns
                .get(&c)
                .map(|v| v.to_string())
                .unwrap_or_default()
        }));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_assets_csv<W: Write>(
    writer: W,
    rows: &[(String, AssetVector)],
) -> Result<(), CensusError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["village_id"];
    header.extend(indicator_names());
    wtr.write_record(&header)?;
    for (id, v) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(v.0.iter().map(|x| x.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_assets_csv<R: Read>(reader: R) -> Result<Vec<(String, AssetVector)>, CensusError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names = indicator_names();
    if headers.len() != INDICATOR_COUNT + 1
        || headers.get(0) != Some("village_id")
        || headers.iter().skip(1).zip(names).any(|(h, n)| h != n)
    {
        return Err(CensusError::Format("asset csv header mismatch".into()));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let mut v = [0.0; INDICATOR_COUNT];
        for (j, slot) in v.iter_mut().enumerate() {
            *slot = record[j + 1]
                .trim()
                .parse()
                .map_err(|_| CensusError::Format(format!("bad value in row {}", &record[0])))?;
        }
        out.push((record[0].to_string(), AssetVector(v)));
    }
    Ok(out)
}

pub fn write_outlier_csv<W: Write>(
    writer: W,
    ids: &[String],
    report: &OutlierReport,
) -> Result<(), CensusError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["village_id", "distance", "rejected", "threshold"])?;
    for ((id, d), r) in ids.iter().zip(&report.distances).zip(&report.rejected) {
        wtr.write_record([
            id.as_str(),
            &d.to_string(),
            if *r { "1" } else { "0" },
            &report.threshold.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_correlation_csv<W: Write>(
    writer: W,
    matrix: &CorrelationMatrix,
) -> Result<(), CensusError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["column"];
    header.extend(indicator_names());
    wtr.write_record(&header)?;
    for (i, line) in matrix.values.iter().enumerate() {
        let mut rec = vec![format!("[{}]", i + 1)];
        rec.extend(line.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
