//! Stunting case-study engine: OLS under the m1–m4 specifications, repeated
//! sub-sampling significance tallies, kernel densities and power analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Error)]
pub enum EconError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("design is rank deficient: column {column} is linearly dependent on earlier columns")]
    RankDeficient { column: String },
    #[error("sample has zero variance (every value is {value}); density is a spike")]
    Degenerate { value: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Column-oriented records. Numeric columns use NaN for missing cells.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Frame {
    pub len: usize,
    /// Column order as read or inserted.
    pub names: Vec<String>,
    pub numeric: BTreeMap<String, Vec<f64>>,
    pub categorical: BTreeMap<String, Vec<String>>,
}

impl Frame {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            ..Self::default()
        }
    }

    pub fn insert_numeric(&mut self, name: &str, values: Vec<f64>) -> Result<(), EconError> {
        self.check_new(name, values.len())?;
        self.names.push(name.to_string());
        self.numeric.insert(name.to_string(), values);
        Ok(())
    }

    pub fn insert_categorical(&mut self, name: &str, values: Vec<String>) -> Result<(), EconError> {
        self.check_new(name, values.len())?;
        self.names.push(name.to_string());
        self.categorical.insert(name.to_string(), values);
        Ok(())
    }

    fn check_new(&self, name: &str, len: usize) -> Result<(), EconError> {
        if len != self.len {
            return Err(EconError::Input(format!("column {name} has {len} rows, frame has {}", self.len)));
        }
        if self.names.iter().any(|n| n == name) {
            return Err(EconError::Input(format!("duplicate column {name}")));
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<&[f64], EconError> {
        self.numeric
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| EconError::Input(format!("numeric column {name} not present")))
    }

    /// A column is numeric when every non-empty cell parses as a number.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, EconError> {
        let mut r = csv::Reader::from_reader(reader);
        let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut cells: Vec<Vec<String>> = vec![Vec::new(); names.len()];
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != names.len() {
                return Err(EconError::Input(format!("row {} has {} cells", cells[0].len() + 1, rec.len())));
            }
            for (c, v) in cells.iter_mut().zip(rec.iter()) {
                c.push(v.trim().to_string());
            }
        }
        let mut frame = Frame::new(cells.first().map_or(0, Vec::len));
        for (name, col) in names.iter().zip(cells) {
            let parsed: Option<Vec<f64>> = col
                .iter()
                .map(|v| if v.is_empty() { Some(f64::NAN) } else { v.parse().ok() })
                .collect();
            match parsed {
                Some(values) => frame.insert_numeric(name, values)?,
                None => frame.insert_categorical(name, col)?,
            }
        }
        Ok(frame)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EconError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for i in 0..self.len {
            let row = self.names.iter().map(|n| match self.numeric.get(n) {
                Some(col) if col[i].is_nan() => String::new(),
                Some(col) => col[i].to_string(),
                None => self.categorical[n][i].clone(),
            });
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    Ln,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub column: String,
    pub transform: Transform,
}

impl Term {
    pub fn raw(column: &str) -> Self {
        Self {
            column: column.to_string(),
            transform: Transform::Identity,
        }
    }

    pub fn ln(column: &str) -> Self {
        Self {
            column: column.to_string(),
            transform: Transform::Ln,
        }
    }

    pub fn label(&self) -> String {
        match self.transform {
            Transform::Identity => self.column.clone(),
            Transform::Ln => format!("ln({})", self.column),
        }
    }

    fn apply(&self, v: f64) -> Option<f64> {
        match self.transform {
            Transform::Identity => v.is_finite().then_some(v),
            Transform::Ln => (v.is_finite() && v > 0.0).then(|| v.ln()),
        }
    }
}

/// Dummy-coded categorical control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    pub column: String,
    pub base: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecModel {
    pub name: String,
    pub outcome: String,
    pub regressors: Vec<Term>,
    #[serde(default)]
    pub categoricals: Vec<Categorical>,
}

pub const OUTCOME: &str = "stunting";
pub const BASE_STATE: &str = "uttar-pradesh";
pub const STATES: [&str; 6] = [
    "uttar-pradesh",
    "bihar",
    "rajasthan",
    "madhya-pradesh",
    "west-bengal",
    "jharkhand",
];

fn m_terms(level: usize) -> Vec<Term> {
    let mut t = vec![Term::ln("opendefecation")];
    if level >= 2 {
        t.extend([
            Term::ln("mpce"),
            Term::raw("calories"),
            Term::raw("cereal-calories"),
            Term::raw("householdsizeunder5"),
        ]);
    }
    if level >= 3 {
        t.extend([Term::raw("literacy-rate"), Term::raw("women-lit")]);
    }
    if level >= 4 {
        t.extend(
            [
                "mom-folic",
                "women-sec-edu",
                "mom-full-ant-care",
                "caesarean-birth",
                "children-vita",
                "women-bmi-below-norm",
                "clean-fuel",
            ]
            .map(Term::raw),
        );
    }
    t
}

/// District-level specification `m1`..`m4`, each nesting the previous one.
pub fn m_spec(level: usize) -> Result<SpecModel, EconError> {
    if !(1..=4).contains(&level) {
        return Err(EconError::Input(format!("no specification m{level}")));
    }
    Ok(SpecModel {
        name: format!("m{level}"),
        outcome: OUTCOME.into(),
        regressors: m_terms(level),
        categoricals: Vec::new(),
    })
}

pub fn standard_specs() -> Vec<SpecModel> {
    (1..=4).map(|l| m_spec(l).expect("levels 1-4 exist")).collect()
}

/// Village-level model: m4 plus permanent houses, a pure-noise control and state
/// dummies against the base state.
pub fn village_spec() -> SpecModel {
    let mut regressors = m_terms(4);
    regressors.push(Term::raw("permanent-house"));
    regressors.push(Term::raw("noise-control"));
    SpecModel {
        name: "village".into(),
        outcome: OUTCOME.into(),
        regressors,
        categoricals: vec![Categorical {
            column: "state".into(),
            base: BASE_STATE.into(),
        }],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRow {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    /// Intercept first, then regressors, then dummies.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub names: Vec<String>,
    /// Frame row of each design row.
    pub rows: Vec<usize>,
    pub dropped: Vec<DroppedRow>,
}

pub const INTERCEPT: &str = "constant";

pub fn build_design(frame: &Frame, spec: &SpecModel) -> Result<Design, EconError> {
    let outcome = frame.column(&spec.outcome)?;
    let terms: Vec<&[f64]> = spec
        .regressors
        .iter()
        .map(|t| frame.column(&t.column))
        .collect::<Result<_, _>>()?;
    let mut levels = Vec::new();
    for c in &spec.categoricals {
        let col = frame
            .categorical
            .get(&c.column)
            .ok_or_else(|| EconError::Input(format!("categorical column {} not present", c.column)))?;
        let distinct: BTreeSet<&str> = col.iter().map(String::as_str).filter(|v| !v.is_empty()).collect();
        if !distinct.contains(c.base.as_str()) {
            return Err(EconError::Input(format!("base level {} absent from {}", c.base, c.column)));
        }
        let others: Vec<String> = distinct.into_iter().filter(|v| *v != c.base).map(str::to_string).collect();
        levels.push((col, others));
    }

    let mut names = vec![INTERCEPT.to_string()];
    names.extend(spec.regressors.iter().map(Term::label));
    for (c, (_, others)) in spec.categoricals.iter().zip(&levels) {
        names.extend(others.iter().map(|l| format!("{}={l}", c.column)));
    }

    let mut data = Vec::new();
    let (mut ys, mut rows, mut dropped) = (Vec::new(), Vec::new(), Vec::new());
    'rows: for i in 0..frame.len {
        if !outcome[i].is_finite() {
            dropped.push(DroppedRow { row: i, reason: format!("missing {}", spec.outcome) });
            continue;
        }
        let mut row = vec![1.0];
        for (t, col) in spec.regressors.iter().zip(&terms) {
            match t.apply(col[i]) {
                Some(v) => row.push(v),
                None => {
                    let reason = if col[i].is_finite() {
                        format!("{} = {} outside the log domain", t.column, col[i])
                    } else {
                        format!("missing {}", t.column)
                    };
                    dropped.push(DroppedRow { row: i, reason });
                    continue 'rows;
                }
            }
        }
        for (c, (col, others)) in spec.categoricals.iter().zip(&levels) {
            if col[i].is_empty() {
                dropped.push(DroppedRow { row: i, reason: format!("missing {}", c.column) });
                continue 'rows;
            }
            row.extend(others.iter().map(|l| if *l == col[i] { 1.0 } else { 0.0 }));
        }
        data.extend(row);
        ys.push(outcome[i]);
        rows.push(i);
    }
    if rows.is_empty() {
        return Err(EconError::Input(format!("specification {} leaves no usable rows", spec.name)));
    }
    Ok(Design {
        x: DMatrix::from_row_slice(rows.len(), names.len(), &data),
        y: DVector::from_vec(ys),
        names,
        rows,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Covariance {
    #[default]
    Classical,
    /// White's heteroskedasticity-consistent estimator with the n/(n−k) correction.
    Hc1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<Coefficient>,
    pub r2: f64,
    pub n: usize,
    pub df: usize,
    pub sigma2: f64,
    pub ssr: f64,
    /// Test that every non-intercept coefficient is zero.
    pub f_stat: Option<f64>,
    pub f_p: Option<f64>,
    pub covariance: Covariance,
}

impl OlsFit {
    pub fn get(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }
}

pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<OlsFit, EconError> {
    ols_fit_with(x, y, names, Covariance::Classical)
}

pub fn ols_fit_with(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
    covariance: Covariance,
) -> Result<OlsFit, EconError> {
    let (n, k) = x.shape();
    if names.len() != k || y.len() != n {
        return Err(EconError::Input(format!(
            "design {n}x{k} with {} names and {} outcomes",
            names.len(),
            y.len()
        )));
    }
    if n <= k {
        return Err(EconError::Input(format!("{n} observations for {k} coefficients")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(EconError::Input("design holds a non-finite value".into()));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..k {
        let norm = x.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= 1e-10 * norm {
            return Err(EconError::RankDeficient {
                column: names[j].clone(),
            });
        }
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let beta = r
        .solve_upper_triangular(&qty.rows(0, k).into_owned())
        .ok_or_else(|| EconError::RankDeficient { column: names[k - 1].clone() })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| EconError::RankDeficient { column: names[k - 1].clone() })?;
    let xtx_inv = &r_inv * r_inv.transpose();

    let resid = y - x * &beta;
    let ssr = resid.norm_squared();
    let df = n - k;
    let sigma2 = ssr / df as f64;
    let var: Vec<f64> = match covariance {
        Covariance::Classical => (0..k).map(|j| sigma2 * xtx_inv[(j, j)]).collect(),
        Covariance::Hc1 => {
            let mut meat = DMatrix::zeros(k, k);
            for i in 0..n {
                let xi = x.row(i).transpose();
                meat += (&xi * xi.transpose()) * resid[i].powi(2);
            }
            let v = &xtx_inv * meat * &xtx_inv * (n as f64 / df as f64);
            (0..k).map(|j| v[(j, j)]).collect()
        }
    };
    let tdist = StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom");
    let coefficients = (0..k)
        .map(|j| {
            let se = var[j].sqrt();
            let t = beta[j] / se;
            Coefficient {
                name: names[j].clone(),
                estimate: beta[j],
                se,
                t,
                p: if t.is_nan() { f64::NAN } else { 2.0 * tdist.sf(t.abs()) },
            }
        })
        .collect();

    let has_intercept = names.first().is_some_and(|n| n == INTERCEPT);
    let ybar = if has_intercept { y.mean() } else { 0.0 };
    let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { f64::NAN };
    let slopes = if has_intercept { k - 1 } else { k };
    let (f_stat, f_p) = if slopes > 0 && sst > 0.0 && ssr > 0.0 {
        let f = ((sst - ssr) / slopes as f64) / sigma2;
        let dist = FisherSnedecor::new(slopes as f64, df as f64).expect("positive degrees of freedom");
        (Some(f), Some(dist.sf(f)))
    } else {
        (None, None)
    };
    Ok(OlsFit {
        coefficients,
        r2,
        n,
        df,
        sigma2,
        ssr,
        f_stat,
        f_p,
        covariance,
    })
}

pub fn fit_spec(frame: &Frame, spec: &SpecModel, covariance: Covariance) -> Result<(OlsFit, Design), EconError> {
    let d = build_design(frame, spec)?;
    Ok((ols_fit_with(&d.x, &d.y, &d.names, covariance)?, d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecTable {
    pub specs: Vec<String>,
    pub fits: Vec<OlsFit>,
    pub dropped: Vec<Vec<DroppedRow>>,
}

pub fn run_specs(frame: &Frame, specs: &[SpecModel], covariance: Covariance) -> Result<SpecTable, EconError> {
    let mut table = SpecTable {
        specs: Vec::new(),
        fits: Vec::new(),
        dropped: Vec::new(),
    };
    for s in specs {
        let (fit, design) = fit_spec(frame, s, covariance)?;
        table.specs.push(s.name.clone());
        table.fits.push(fit);
        table.dropped.push(design.dropped);
    }
    Ok(table)
}

impl SpecTable {
    /// Fixed-width b/se layout: one estimate row and one parenthesized se row per
    /// variable, intercept last, then R-squared and N.
    pub fn render(&self) -> String {
        let mut vars: Vec<String> = Vec::new();
        for f in &self.fits {
            for c in &f.coefficients {
                if c.name != INTERCEPT && !vars.contains(&c.name) {
                    vars.push(c.name.clone());
                }
            }
        }
        vars.push(INTERCEPT.to_string());
        let label_w = vars.iter().map(String::len).max().unwrap_or(0).max(10) + 2;
        let col_w = 12;
        let mut out = String::new();
        let _ = write!(out, "{:label_w$}", "");
        for s in &self.specs {
            let _ = write!(out, "{s:>col_w$}");
        }
        out.push('\n');
        let _ = write!(out, "{:label_w$}", "");
        for _ in &self.specs {
            let _ = write!(out, "{:>col_w$}", "b/se");
        }
        out.push('\n');
        for v in &vars {
            let (mut est, mut se) = (format!("{v:label_w$}"), format!("{:label_w$}", ""));
            for f in &self.fits {
                match f.get(v) {
                    Some(c) => {
                        let _ = write!(est, "{:>col_w$.3}", c.estimate);
                        let _ = write!(se, "{:>col_w$}", format!("({:.3})", c.se));
                    }
                    None => {
                        let _ = write!(est, "{:col_w$}", "");
                        let _ = write!(se, "{:col_w$}", "");
                    }
                }
            }
            out.push_str(est.trim_end());
            out.push('\n');
            out.push_str(se.trim_end());
            out.push('\n');
        }
        let _ = write!(out, "{:label_w$}", "R-squared");
        for f in &self.fits {
            let _ = write!(out, "{:>col_w$.3}", f.r2);
        }
        out.push('\n');
        let _ = write!(out, "{:label_w$}", "N");
        for f in &self.fits {
            let _ = write!(out, "{:>col_w$}", f.n);
        }
        out.push('\n');
        out
    }
}

/// Planted coefficients for a synthetic outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub intercept: f64,
    /// Keyed by term label, e.g. `ln(opendefecation)`.
    pub coefficients: BTreeMap<String, f64>,
    /// Additive effect per non-base state.
    pub states: BTreeMap<String, f64>,
    pub noise_sd: f64,
}

/// Coefficients shaped after the published m4 column, with the women's secondary
/// education effect strengthened and the noise control at zero.
pub fn case_study_truth() -> Truth {
    let coefficients = [
        ("ln(opendefecation)", 1.374),
        ("ln(mpce)", -1.623),
        ("calories", 0.0),
        ("cereal-calories", 0.006),
        ("householdsizeunder5", -0.23),
        ("literacy-rate", -0.448),
        ("women-lit", -0.022),
        ("mom-folic", 0.047),
        ("women-sec-edu", -0.4),
        ("mom-full-ant-care", -0.021),
        ("caesarean-birth", -0.019),
        ("children-vita", -0.095),
        ("women-bmi-below-norm", 0.192),
        ("clean-fuel", -0.026),
        ("permanent-house", -0.05),
        ("noise-control", 0.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let states = [
        ("bihar", -1.5),
        ("rajasthan", -3.0),
        ("madhya-pradesh", -2.0),
        ("west-bengal", -6.0),
        ("jharkhand", -2.5),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    Truth {
        intercept: 74.6,
        coefficients,
        states,
        noise_sd: 8.0,
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draw one covariate given the record's latent development level `z` and an
/// idiosyncratic shock `e`. Percentages lie in (0, 100).
fn covariate(column: &str, z: f64, e: f64) -> f64 {
    let pct = |load: f64, centre: f64| 100.0 * logistic(centre + load * z + 0.8 * e);
    match column {
        "opendefecation" => pct(-0.9, 0.8),
        "mpce" => (7.0 + 0.3 * z + 0.2 * e).exp(),
        "calories" => 2000.0 + 150.0 * z + 150.0 * e,
        "cereal-calories" => 1300.0 - 80.0 * z + 100.0 * e,
        "householdsizeunder5" => pct(-0.4, -1.5),
        "literacy-rate" => pct(0.9, 0.4),
        "women-lit" => pct(0.9, -0.2),
        "women-sec-edu" => pct(0.8, -1.2),
        "noise-control" => 50.0 + 10.0 * e,
        "permanent-house" => pct(0.9, 0.0),
        _ => pct(0.5, 0.0),
    }
}

/// Records whose outcome follows `truth` exactly on the terms of `spec`, plus
/// Gaussian noise. State is drawn with Uttar Pradesh the most common level.
pub fn synth_records(spec: &SpecModel, truth: &Truth, n: usize, seed: u64) -> Result<Frame, EconError> {
    let mut rng = rng_for(seed, "econ.records");
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, truth.noise_sd)
        .map_err(|_| EconError::Input(format!("noise sd {} invalid", truth.noise_sd)))?;
    let z: Vec<f64> = (0..n).map(|_| std_normal.sample(&mut rng)).collect();
    let mut frame = Frame::new(n);
    let mut outcome = vec![truth.intercept; n];
    let mut columns: Vec<&str> = Vec::new();
    for t in &spec.regressors {
        if !columns.contains(&t.column.as_str()) {
            columns.push(&t.column);
        }
    }
    for col in columns {
        let values: Vec<f64> = z.iter().map(|&zi| covariate(col, zi, std_normal.sample(&mut rng))).collect();
        for t in spec.regressors.iter().filter(|t| t.column == col) {
            let beta = truth.coefficients.get(&t.label()).copied().unwrap_or(0.0);
            for (o, &v) in outcome.iter_mut().zip(&values) {
                *o += beta * t.apply(v).expect("generated covariates lie in every transform's domain");
            }
        }
        frame.insert_numeric(col, values)?;
    }
    if spec.categoricals.iter().any(|c| c.column == "state") {
        let weights = [0.4, 0.2, 0.12, 0.12, 0.1, 0.06];
        let states: Vec<String> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (s, w) in STATES.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return s.to_string();
                    }
                }
                STATES[STATES.len() - 1].to_string()
            })
            .collect();
        for (o, s) in outcome.iter_mut().zip(&states) {
            *o += truth.states.get(s).copied().unwrap_or(0.0);
        }
        frame.insert_categorical("state", states)?;
    }
    for o in outcome.iter_mut() {
        *o += noise.sample(&mut rng);
    }
    frame.insert_numeric(&spec.outcome, outcome)?;
    Ok(frame)
}

pub const SIGNIFICANCE_LEVELS: [f64; 3] = [0.01, 0.05, 0.10];

/// Significance counts at the 1/5/10% levels, split by coefficient sign.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub positive: [usize; 3],
    pub negative: [usize; 3],
}

impl Tally {
    pub fn total(&self, level: usize) -> usize {
        self.positive[level] + self.negative[level]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub name: String,
    pub tally: Tally,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub spec: String,
    pub runs: usize,
    pub sample_size: usize,
    pub completed: usize,
    pub variables: Vec<VariableSummary>,
    pub failures: Vec<RunFailure>,
}

impl MonteCarloReport {
    pub fn variable(&self, name: &str) -> Option<&VariableSummary> {
        self.variables.iter().find(|v| v.name == name)
    }
}

pub fn repeated_sampling(
    frame: &Frame,
    spec: &SpecModel,
    sample_size: usize,
    runs: usize,
    seed: u64,
) -> Result<MonteCarloReport, EconError> {
    let design = build_design(frame, spec)?;
    let usable = design.rows.len();
    if usable < sample_size {
        return Err(EconError::Input(format!(
            "{usable} usable records cannot supply samples of {sample_size}"
        )));
    }
    let mut variables: Vec<VariableSummary> = design
        .names
        .iter()
        .map(|n| VariableSummary {
            name: n.clone(),
            tally: Tally::default(),
            coefficients: Vec::new(),
        })
        .collect();
    let mut failures = Vec::new();
    let mut completed = 0;
    for run in 0..runs {
        let mut rng = rng_for(seed, &format!("run.{run}"));
        let mut idx = sample(&mut rng, usable, sample_size).into_vec();
        idx.sort_unstable();
        let x = design.x.select_rows(&idx);
        let y = design.y.select_rows(&idx);
        match ols_fit(&x, &y, &design.names) {
            Ok(fit) => {
                completed += 1;
                for (v, c) in variables.iter_mut().zip(&fit.coefficients) {
                    v.coefficients.push(c.estimate);
                    for (l, &alpha) in SIGNIFICANCE_LEVELS.iter().enumerate() {
                        if c.p < alpha {
                            if c.estimate > 0.0 {
                                v.tally.positive[l] += 1;
                            } else {
                                v.tally.negative[l] += 1;
                            }
                        }
                    }
                }
            }
            Err(e @ EconError::RankDeficient { .. }) => failures.push(RunFailure {
                run,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(MonteCarloReport {
        spec: spec.name.clone(),
        runs,
        sample_size,
        completed,
        variables,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Bandwidth {
    Silverman,
    Scott,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub bandwidth: f64,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

impl KdeCurve {
    /// Trapezoid integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| (x[1] - x[0]) * (d[0] + d[1]) / 2.0)
            .sum()
    }

    pub fn peak(&self) -> f64 {
        let i = (0..self.density.len())
            .max_by(|&a, &b| self.density[a].total_cmp(&self.density[b]))
            .unwrap_or(0);
        self.x[i]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "density"])?;
        for (x, d) in self.x.iter().zip(&self.density) {
            w.write_record([x.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const KDE_POINTS: usize = 512;

/// Gaussian kernel density on an evenly spaced grid reaching 4 bandwidths past the data.
pub fn kde(values: &[f64], policy: Bandwidth) -> Result<KdeCurve, EconError> {
    if values.len() < 2 {
        return Err(EconError::Input(format!("kde needs at least 2 values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EconError::Input("kde sample holds a non-finite value".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd == 0.0 {
        return Err(EconError::Degenerate { value: values[0] });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |p: f64| {
        let r = p * (n - 1.0);
        let (lo, hi) = (r.floor() as usize, r.ceil() as usize);
        sorted[lo] + (sorted[hi] - sorted[lo]) * (r - lo as f64)
    };
    let iqr = quantile(0.75) - quantile(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = match policy {
        Bandwidth::Silverman => 0.9 * spread * n.powf(-0.2),
        Bandwidth::Scott => 1.06 * sd * n.powf(-0.2),
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(EconError::Input(format!("bandwidth {h} must be positive"))),
    };
    let (lo, hi) = (sorted[0] - 4.0 * h, sorted[sorted.len() - 1] + 4.0 * h);
    let step = (hi - lo) / (KDE_POINTS - 1) as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..KDE_POINTS).map(|i| lo + step * i as f64).collect();
    let density = x
        .iter()
        .map(|&g| norm * values.iter().map(|v| (-0.5 * ((g - v) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    Ok(KdeCurve { bandwidth: h, x, density })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSpec {
    /// Cohen's f².
    pub effect_size: f64,
    pub alpha: f64,
    pub power: f64,
    pub predictors: usize,
}

impl PowerSpec {
    pub fn validate(&self) -> Result<(), EconError> {
        let bad = |m: String| Err(EconError::Input(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.power > self.alpha && self.power < 1.0) {
            return bad(format!("power {} outside (alpha, 1)", self.power));
        }
        if !(self.effect_size > 0.0 && self.effect_size.is_finite()) {
            return bad(format!("effect size {} must be positive", self.effect_size));
        }
        if self.predictors == 0 {
            return bad("at least one predictor required".into());
        }
        Ok(())
    }
}

/// CDF of the noncentral F distribution as a Poisson mixture of regularized
/// incomplete beta functions.
pub fn noncentral_f_cdf(x: f64, d1: f64, d2: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let y = d1 * x / (d1 * x + d2);
    let half = lambda / 2.0;
    if half == 0.0 {
        return beta_reg(d1 / 2.0, d2 / 2.0, y);
    }
    let weight = |j: u64| (-half + j as f64 * half.ln() - ln_factorial(j)).exp();
    let term = |j: u64| weight(j) * beta_reg(d1 / 2.0 + j as f64, d2 / 2.0, y);
    // Sum outward from the Poisson mode so large noncentralities stay accurate.
    let mode = half.floor() as u64;
    let mut total = term(mode);
    let mut j = mode + 1;
    while weight(j) > 1e-17 {
        total += term(j);
        j += 1;
    }
    let mut j = mode;
    while j > 0 && weight(j - 1) > 1e-17 {
        j -= 1;
        total += term(j);
    }
    total.clamp(0.0, 1.0)
}

fn ln_factorial(j: u64) -> f64 {
    statrs::function::gamma::ln_gamma(j as f64 + 1.0)
}

/// Power of the overall F test of `predictors` slopes with `n` observations.
pub fn regression_power(spec: &PowerSpec, n: usize) -> f64 {
    let d1 = spec.predictors as f64;
    if n <= spec.predictors + 1 {
        return 0.0;
    }
    let d2 = (n - spec.predictors - 1) as f64;
    let crit = FisherSnedecor::new(d1, d2)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - spec.alpha);
    1.0 - noncentral_f_cdf(crit, d1, d2, spec.effect_size * n as f64)
}

/// Smallest N whose noncentral-F power reaches the requested power.
pub fn power_sample_size(spec: &PowerSpec) -> Result<usize, EconError> {
    spec.validate()?;
    let mut lo = spec.predictors + 1;
    let mut hi = (spec.predictors + 2).max(8);
    while regression_power(spec, hi) < spec.power {
        lo = hi;
        hi *= 2;
        if hi > 1 << 40 {
            return Err(EconError::Input("required sample size is unbounded".into()));
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if regression_power(spec, mid) >= spec.power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Rejection rate of the overall F test over `reps` data sets drawn from the model
/// the power computation assumes: standard normal predictors, equal slopes giving
/// the requested f², unit-variance Gaussian errors.
pub fn simulate_power(spec: &PowerSpec, n: usize, reps: usize, seed: u64) -> Result<f64, EconError> {
    spec.validate()?;
    let k = spec.predictors;
    let beta = (spec.effect_size / k as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut names = vec![INTERCEPT.to_string()];
    names.extend((0..k).map(|j| format!("x{j}")));
    let mut rejections = 0;
    for r in 0..reps {
        let mut rng = rng_for(derive_seed(seed, "power"), &format!("rep.{r}"));
        let mut x = DMatrix::from_element(n, k + 1, 1.0);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut yi = normal.sample(&mut rng);
            for j in 1..=k {
                let v = normal.sample(&mut rng);
                x[(i, j)] = v;
                yi += beta * v;
            }
            y[i] = yi;
        }
        let fit = ols_fit(&x, &y, &names)?;
        if fit.f_p.is_some_and(|p| p < spec.alpha) {
            rejections += 1;
        }
    }
    Ok(rejections as f64 / reps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_f_matches_statrs() {
        let f = FisherSnedecor::new(3.0, 40.0).unwrap();
        for x in [0.1, 1.0, 2.5, 6.0] {
            assert!((noncentral_f_cdf(x, 3.0, 40.0, 0.0) - f.cdf(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn noncentrality_lowers_the_cdf() {
        let a = noncentral_f_cdf(2.0, 4.0, 60.0, 0.0);
        let b = noncentral_f_cdf(2.0, 4.0, 60.0, 10.0);
        let c = noncentral_f_cdf(2.0, 4.0, 60.0, 400.0);
        assert!(a > b && b > c && c >= 0.0);
    }

    #[test]
    fn spec_levels_nest() {
        let specs = standard_specs();
        for w in specs.windows(2) {
            assert!(w[0].regressors.iter().all(|t| w[1].regressors.contains(t)));
        }
        assert_eq!(specs[3].regressors.len(), 14);
        assert!(m_spec(5).is_err());
    }
}
