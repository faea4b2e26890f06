pub mod aggregate;
pub mod analyze;
pub mod econ;
pub mod synth;
pub mod train;
pub mod transfer;

use std::path::{Path, PathBuf};

use satdev::pipeline::{Regressor, World};

use crate::config::Resolver;
use crate::error::CliError;
use crate::Globals;

/// `FromStr` and string serialization for a clap value enum, so the same
/// spelling works on the command line, in config files and in manifests.
macro_rules! config_enum {
    ($t:ty) => {
        impl std::str::FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                <$t as clap::ValueEnum>::from_str(s, false)
            }
        }

        impl serde::Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                let v = clap::ValueEnum::to_possible_value(self).expect("no skipped variants");
                s.serialize_str(v.get_name())
            }
        }
    };
}
pub(crate) use config_enum;

/// Resolve the seed and output directory shared by every subcommand.
pub fn globals(g: Globals, r: &mut Resolver) -> Result<(u64, PathBuf), CliError> {
    let seed = r.get("seed", g.seed, 0u64)?;
    let out = r.required("out", g.out)?;
    Ok((seed, out))
}

/// Inputs are never written to; refuse an output directory that is one of them.
pub fn distinct(out: &Path, input: &Path) -> Result<(), CliError> {
    let canon = |p: &Path| p.canonicalize().unwrap_or_else(|_| p.to_path_buf());
    if canon(out) == canon(input) {
        return Err(CliError::usage(format!(
            "--out {} would overwrite inputs in {}",
            out.display(),
            input.display()
        )));
    }
    Ok(())
}

pub fn read_world(dir: &Path) -> Result<World, CliError> {
    if !dir.join("world.json").is_file() {
        return Err(CliError::new("input", format!("{} is not a world directory", dir.display())));
    }
    Ok(World::read(dir)?)
}

pub fn read_model(path: &Path) -> Result<Regressor, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(Regressor::from_json(&text)?)
}

/// Two-column-plus CSV writer with `to_string` float formatting.
pub fn write_rows<W: std::io::Write>(writer: W, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| CliError::new("io", e.to_string()))?;
    Ok(())
}

pub fn output_names(width: usize) -> Vec<String> {
    if width == satdev::census::INDICATOR_COUNT {
        satdev::census::indicator_names().iter().map(|s| s.to_string()).collect()
    } else {
        (0..width).map(|j| format!("output{j}")).collect()
    }
}
