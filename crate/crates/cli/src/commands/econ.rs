use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use satdev::econ::{
    build_design, case_study_truth, kde, power_sample_size, regression_power, repeated_sampling, run_specs,
    simulate_power, standard_specs, synth_records, village_spec, Bandwidth, Covariance, EconError, Frame,
    PowerSpec, INTERCEPT,
};
use satdev::seed::derive_seed;
use serde::{Serialize, Serializer};
use serde_json::json;

use super::{globals, write_rows};
use crate::config::{Manifest, Outputs, Resolver};
use crate::error::CliError;
use crate::Globals;

/// `silverman`, `scott`, or a fixed positive bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthArg(pub Bandwidth);

impl FromStr for BandwidthArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "silverman" => Ok(Self(Bandwidth::Silverman)),
            "scott" => Ok(Self(Bandwidth::Scott)),
            _ => match s.parse::<f64>() {
                Ok(h) if h > 0.0 && h.is_finite() => Ok(Self(Bandwidth::Fixed(h))),
                _ => Err(format!("expected silverman, scott or a positive number, got {s:?}")),
            },
        }
    }
}

impl fmt::Display for BandwidthArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Bandwidth::Silverman => f.write_str("silverman"),
            Bandwidth::Scott => f.write_str("scott"),
            Bandwidth::Fixed(h) => write!(f, "{h}"),
        }
    }
}

impl Serialize for BandwidthArg {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Bandwidth::Fixed(h) => s.serialize_f64(h),
            _ => s.serialize_str(&self.to_string()),
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// District-level records for the nested specification table [default: synthesized]
    #[arg(long)]
    district_records: Option<PathBuf>,
    /// Village-level records for Monte Carlo sampling [default: synthesized]
    #[arg(long)]
    village_records: Option<PathBuf>,
    /// Synthesized district records [default: 640]
    #[arg(long)]
    districts: Option<usize>,
    /// Synthesized village records [default: 100000]
    #[arg(long)]
    villages: Option<usize>,
    /// Villages drawn per Monte Carlo run [default: 3500]
    #[arg(long)]
    sample_size: Option<usize>,
    /// Monte Carlo runs [default: 100]
    #[arg(long)]
    runs: Option<usize>,
    /// Heteroskedasticity-robust (HC1) standard errors in the table [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    hc1: Option<bool>,
    /// KDE bandwidth: silverman, scott or a number [default: silverman]
    #[arg(long)]
    bandwidth: Option<BandwidthArg>,
    /// Cohen's f² for the sample-size calculation [default: 0.02]
    #[arg(long)]
    effect_size: Option<f64>,
    /// Significance level for the power analysis [default: 0.05]
    #[arg(long)]
    alpha: Option<f64>,
    /// Target power [default: 0.95]
    #[arg(long)]
    power: Option<f64>,
    /// Simulated regressions checking the analytic power [default: 200]
    #[arg(long)]
    power_reps: Option<usize>,
}

fn read_frame(path: &Path) -> Result<Frame, CliError> {
    Ok(Frame::read_csv(File::open(path).map_err(|e| CliError::io(path, e))?)?)
}

pub fn run(a: Args, g: Globals, mut r: Resolver) -> Result<(), CliError> {
    let (seed, out) = globals(g, &mut r)?;
    let district_records: Option<PathBuf> = r.optional("district-records", a.district_records)?;
    let village_records: Option<PathBuf> = r.optional("village-records", a.village_records)?;
    let districts = r.get("districts", a.districts, 640usize)?;
    let villages = r.get("villages", a.villages, 100_000usize)?;
    let sample_size = r.get("sample-size", a.sample_size, 3500usize)?;
    let runs = r.get("runs", a.runs, 100usize)?;
    let hc1 = r.get("hc1", a.hc1, false)?;
    let bandwidth = r.get("bandwidth", a.bandwidth, BandwidthArg(Bandwidth::Silverman))?;
    let effect_size = r.get("effect-size", a.effect_size, 0.02)?;
    let alpha = r.get("alpha", a.alpha, 0.05)?;
    let power = r.get("power", a.power, 0.95)?;
    let power_reps = r.get("power-reps", a.power_reps, 200usize)?;
    let resolved = r.finish()?;
    if runs == 0 {
        return Err(CliError::usage("--runs must be positive"));
    }

    let base = derive_seed(seed, "econ");
    let truth = case_study_truth();
    let spec = village_spec();
    let table_frame = match &district_records {
        Some(p) => read_frame(p)?,
        None => synth_records(&spec, &truth, districts, derive_seed(base, "districts"))?,
    };
    let covariance = if hc1 { Covariance::Hc1 } else { Covariance::Classical };
    let table = run_specs(&table_frame, &standard_specs(), covariance)?;

    let village_frame = match &village_records {
        Some(p) => read_frame(p)?,
        None => synth_records(&spec, &truth, villages, derive_seed(base, "villages"))?,
    };
    let mc = repeated_sampling(&village_frame, &spec, sample_size, runs, derive_seed(base, "montecarlo"))?;

    let mut kde_rows = Vec::new();
    let mut spikes = Vec::new();
    for v in mc.variables.iter().filter(|v| v.name != INTERCEPT && v.coefficients.len() >= 2) {
        match kde(&v.coefficients, bandwidth.0) {
            Ok(curve) => {
                for (x, d) in curve.x.iter().zip(&curve.density) {
                    kde_rows.push(vec![v.name.clone(), curve.bandwidth.to_string(), x.to_string(), d.to_string()]);
                }
            }
            Err(EconError::Degenerate { value }) => spikes.push(json!({"variable": v.name, "value": value})),
            Err(e) => return Err(e.into()),
        }
    }

    let predictors = build_design(&village_frame, &spec)?.names.len() - 1;
    let power_spec = PowerSpec {
        effect_size,
        alpha,
        power,
        predictors,
    };
    let needed = power_sample_size(&power_spec)?;
    let simulated = simulate_power(&power_spec, needed, power_reps, derive_seed(base, "power"))?;

    let mut outputs = Outputs::create(&out)?;
    outputs.text("table.txt", &table.render())?;
    outputs.json("table.json", &table)?;
    outputs.json("montecarlo.json", &mc)?;
    write_rows(
        outputs.file("kde.csv")?,
        &["variable".into(), "bandwidth".into(), "x".into(), "density".into()],
        &kde_rows,
    )?;
    outputs.json(
        "power.json",
        &json!({
            "spec": power_spec,
            "required_sample_size": needed,
            "analytic_power": regression_power(&power_spec, needed),
            "simulated_power": simulated,
            "simulation_reps": power_reps,
            "power_at_monte_carlo_size": regression_power(&power_spec, sample_size),
            "degenerate_kde": spikes,
        }),
    )?;
    outputs.finish(Manifest::new("econ", resolved))
}
