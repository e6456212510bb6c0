//! Config resolution: a JSON config file (or a previous run's manifest) is the
//! base layer and command-line flags override it key by key.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub const TOOL_VERSION: &str = concat!("trimlab ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub master_seed: Option<u64>,
    pub config: Value,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
}

fn load_base(command: &str, path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Value::Object(mut obj) = value else {
        return Err(CliError::Usage("config must be a JSON object".into()));
    };
    if obj.contains_key("command") && obj.contains_key("config") {
        let m: RunManifest = serde_json::from_value(Value::Object(obj))
            .map_err(|e| CliError::Usage(format!("bad manifest: {e}")))?;
        if m.command != command {
            return Err(CliError::Usage(format!(
                "manifest is for `{}`, not `{command}`",
                m.command
            )));
        }
        let Value::Object(inner) = m.config else {
            return Err(CliError::Usage("manifest config must be an object".into()));
        };
        return Ok(inner);
    }
    obj.remove("$comment");
    Ok(obj)
}

/// Merges flags over the optional config file and deserialises the result.
pub fn resolve<C: DeserializeOwned, F: Serialize>(
    command: &str,
    config_path: Option<&Path>,
    flags: &F,
) -> Result<C, CliError> {
    let mut base = match config_path {
        Some(p) => load_base(command, p)?,
        None => Map::new(),
    };
    let Value::Object(overrides) = serde_json::to_value(flags).expect("flags serialise") else {
        unreachable!("flag structs serialise to objects");
    };
    for (k, v) in overrides {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("missing field `").and_then(|r| r.split_once('`')) {
            Some((field, _)) => CliError::Usage(format!(
                "missing required option --{} (or `{field}` in --config)",
                field.replace('_', "-")
            )),
            None => CliError::Usage(format!("invalid config: {msg}")),
        }
    })
}

pub fn parse_count(s: &str) -> Result<u64, String> {
    trimlab::norming::parse_count(s)
}

pub fn parse_counts(s: &str) -> Result<Vec<u64>, String> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(parse_count).collect()
}

pub fn parse_reals(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number `{t}`")))
        .collect()
}

/// `a..b` (inclusive) or a comma list.
pub fn parse_lags(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (parse_count(a)?, parse_count(b.trim_start_matches('='))?);
        if a == 0 || b < a {
            return Err(format!("bad lag range `{s}`"));
        }
        return Ok((a..=b).collect());
    }
    parse_counts(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_ranges() {
        assert_eq!(parse_lags("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_lags("2,5").unwrap(), vec![2, 5]);
        assert!(parse_lags("3..1").is_err());
        assert_eq!(parse_counts("1e3,1e4").unwrap(), vec![1000, 10_000]);
    }
}
