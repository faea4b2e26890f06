use clap::ValueEnum;
use satdev::pipeline::{synth_generate, Relation, SynthConfig};
use satdev::seed::derive_seed;

use super::{config_enum, globals};
use crate::config::{Manifest, Outputs, Resolver};
use crate::error::CliError;
use crate::Globals;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RelationArg {
    Linear,
    MonotoneNonlinear,
}
config_enum!(RelationArg);

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Number of villages [default: 2000]
    #[arg(long)]
    villages: Option<usize>,
    /// Image side length in pixels [default: 64]
    #[arg(long)]
    extent: Option<u32>,
    /// Image-to-asset relation [default: monotone-nonlinear]
    #[arg(long, value_enum)]
    relation: Option<RelationArg>,
    /// Census noise as a multiple of signal std [default: 0.1]
    #[arg(long)]
    noise: Option<f64>,
    /// Fraction of villages with corrupted census rows [default: 0]
    #[arg(long)]
    outlier_fraction: Option<f64>,
    /// Villages per district [default: 11]
    #[arg(long)]
    district_size: Option<usize>,
    /// District-level enumeration bias as a multiple of signal std [default: 0]
    #[arg(long)]
    census_bias: Option<f64>,
    /// Candidate settlement centres per image [default: 6]
    #[arg(long)]
    blobs: Option<usize>,
}

pub fn run(a: Args, g: Globals, mut r: Resolver) -> Result<(), CliError> {
    let (seed, out) = globals(g, &mut r)?;
    let d = SynthConfig::default();
    let relation = r.get("relation", a.relation, RelationArg::MonotoneNonlinear)?;
    let config = SynthConfig {
        villages: r.get("villages", a.villages, d.villages)?,
        extent: r.get("extent", a.extent, d.extent)?,
        relation: match relation {
            RelationArg::Linear => Relation::Linear,
            RelationArg::MonotoneNonlinear => Relation::MonotoneNonlinear,
        },
        noise: r.get("noise", a.noise, d.noise)?,
        outlier_fraction: r.get("outlier-fraction", a.outlier_fraction, d.outlier_fraction)?,
        seed: derive_seed(seed, "synth"),
        district_size: r.get("district-size", a.district_size, d.district_size)?,
        census_bias: r.get("census-bias", a.census_bias, d.census_bias)?,
        blobs: r.get("blobs", a.blobs, d.blobs)?,
    };
    let resolved = r.finish()?;
    config.validate()?;

    let world = synth_generate(&config)?;
    let mut outputs = Outputs::create(&out)?;
    world.write(&out)?;
    for name in ["census.csv", "villages.csv", "night.csv", "districts.csv", "indicators.csv", "world.json"] {
        outputs.record(name);
    }
    for v in &world.villages {
        outputs.record(&format!("images/{}.pgm", v.id));
    }
    outputs.finish(Manifest::new("synth", resolved))
}
