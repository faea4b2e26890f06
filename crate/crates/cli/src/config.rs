//! Parameter resolution (flag, then config file, then built-in default) and the
//! run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

/// Parse `key = value` lines. `#` starts a comment line; blank lines are skipped.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}: expected key = value", n + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(CliError::config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(CliError::config(format!("line {}: duplicate key {key}", n + 1)));
        }
    }
    Ok(out)
}

/// Flatten a previously written manifest back into config entries.
pub fn parse_manifest(text: &str, subcommand: &str) -> Result<BTreeMap<String, String>, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::config(format!("manifest: {e}")))?;
    let found = value["subcommand"].as_str().unwrap_or("");
    if found != subcommand {
        return Err(CliError::config(format!(
            "manifest was written by {found:?}, not {subcommand:?}"
        )));
    }
    let mut out = BTreeMap::new();
    if !value["seed"].is_null() {
        out.insert("seed".to_string(), value["seed"].to_string());
    }
    let entries = value["config"]
        .as_object()
        .ok_or_else(|| CliError::config("manifest lacks a config object"))?;
    for (k, v) in entries {
        let text = match v {
            Value::Null => continue,
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        out.insert(k.clone(), text);
    }
    Ok(out)
}

pub fn load(path: &Path, subcommand: &str) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        parse_manifest(&text, subcommand)
    } else {
        parse_flat(&text)
    }
}

pub struct Resolver {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, Value>,
}

impl Resolver {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Self {
            file,
            used: BTreeSet::new(),
            resolved: BTreeMap::new(),
        }
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(text) => Some(
                    text.parse::<T>()
                        .map_err(|e| CliError::config(format!("{key} = {text:?}: {e}")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &value {
            let json = serde_json::to_value(v).map_err(|e| CliError::config(format!("{key}: {e}")))?;
            self.resolved.insert(key.to_string(), json);
        }
        Ok(value)
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        match self.optional(key, flag)? {
            Some(v) => Ok(v),
            None => self.optional(key, Some(default)).map(|v| v.expect("default supplied")),
        }
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::usage(format!("--{key} is required (flag or config key)")))
    }

    /// Reject config keys no parameter consumed; returns the resolved parameters.
    pub fn finish(self) -> Result<BTreeMap<String, Value>, CliError> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            let names: Vec<&str> = unknown.iter().map(|s| s.as_str()).collect();
            return Err(CliError::config(format!("unknown config key(s): {}", names.join(", "))));
        }
        Ok(self.resolved)
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub seed: u64,
    pub config: BTreeMap<String, Value>,
    /// Paths relative to the output directory, sorted.
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(subcommand: &str, mut config: BTreeMap<String, Value>) -> Self {
        let seed = config.remove("seed").and_then(|v| v.as_u64()).unwrap_or(0);
        Self {
            tool: "satdev",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            seed,
            config,
            artifacts: Vec::new(),
        }
    }
}

/// Output directory bookkeeping: every file written goes through here so the
/// manifest can list it.
pub struct Outputs {
    pub dir: PathBuf,
    written: BTreeSet<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: BTreeSet::new(),
        })
    }

    /// Path for `name` inside the output directory, recorded as an artifact.
    pub fn path(&mut self, name: &str) -> PathBuf {
        self.written.insert(name.to_string());
        self.dir.join(name)
    }

    pub fn file(&mut self, name: &str) -> Result<std::fs::File, CliError> {
        let path = self.path(name);
        std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.text(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))
    }

    pub fn record(&mut self, name: &str) {
        self.written.insert(name.to_string());
    }

    pub fn finish(mut self, mut manifest: Manifest) -> Result<(), CliError> {
        self.written.remove("manifest.json");
        manifest.artifacts = self.written.iter().cloned().collect();
        self.json("manifest.json", &manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_format_skips_comments_and_trims() {
        let map = parse_flat("# header\n\nvillages = 300\n noise=0.2 \n").unwrap();
        assert_eq!(map["villages"], "300");
        assert_eq!(map["noise"], "0.2");
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn flat_format_rejects_garbage_and_duplicates() {
        assert_eq!(parse_flat("villages 300").unwrap_err().class, "config");
        assert_eq!(parse_flat("a = 1\na = 2").unwrap_err().class, "config");
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file = parse_flat("a = 5\nb = 6").unwrap();
        let mut r = Resolver::new(file);
        assert_eq!(r.get("a", Some(1u32), 0).unwrap(), 1);
        assert_eq!(r.get("b", None, 0u32).unwrap(), 6);
        assert_eq!(r.get("c", None, 7u32).unwrap(), 7);
        let resolved = r.finish().unwrap();
        assert_eq!(resolved["a"], 1);
        assert_eq!(resolved["c"], 7);
    }

    #[test]
    fn unknown_and_malformed_keys_are_config_errors() {
        let mut r = Resolver::new(parse_flat("a = 5\ntypo = 1").unwrap());
        r.get("a", None, 0u32).unwrap();
        assert_eq!(r.finish().unwrap_err().class, "config");
        let mut r = Resolver::new(parse_flat("a = five").unwrap());
        assert_eq!(r.get("a", None, 0u32).unwrap_err().class, "config");
    }

    #[test]
    fn manifest_round_trips_through_resolution() {
        let mut r = Resolver::new(BTreeMap::new());
        r.get("seed", Some(9u64), 0).unwrap();
        r.get("noise", Some(0.1f64), 0.0).unwrap();
        r.get("out", Some(PathBuf::from("o")), PathBuf::new()).unwrap();
        let manifest = Manifest::new("synth", r.finish().unwrap());
        let text = serde_json::to_string(&manifest).unwrap();
        let map = parse_manifest(&text, "synth").unwrap();
        assert_eq!(map["seed"], "9");
        assert_eq!(map["noise"], "0.1");
        assert_eq!(map["out"], "o");
        assert_eq!(parse_manifest(&text, "train").unwrap_err().class, "config");
    }
}
