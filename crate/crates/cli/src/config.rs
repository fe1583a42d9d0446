//! Loading a run configuration: JSON file (or defaults), then `--set`
//! overrides, then the dedicated `--seed` / `--out` flags.

use std::path::{Path, PathBuf};

use afdet_core::RunConfig;
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default)]
pub struct ConfigSource {
    pub path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// `dotted.key=value`; the value is parsed as JSON and falls back to a
    /// plain string.
    pub overrides: Vec<String>,
}

pub fn load_config(src: &ConfigSource) -> Result<RunConfig> {
    let mut value = match &src.path {
        Some(p) => read_json(p)?,
        None => Value::Object(Map::new()),
    };
    for o in &src.overrides {
        apply_override(&mut value, o)?;
    }
    if let Some(seed) = src.seed {
        set_path(&mut value, "seed", Value::from(seed))?;
    }
    if let Some(out) = &src.out {
        set_path(&mut value, "output_dir", Value::from(out.to_string_lossy().into_owned()))?;
    }
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::from(raw));
    set_path(root, key.trim(), value)
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad config key `{key}`")));
    }
    for part in &parts[..parts.len() - 1] {
        let map = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("config key `{key}` crosses a non-object value")))?;
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("config key `{key}` crosses a non-object value")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// The config key listing appended to `--help`.
pub fn config_help() -> String {
    let keys = RunConfig::default_keys();
    let width = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (JSON file via --config, or --set KEY=VALUE) with defaults:\n");
    for (k, v) in keys {
        out.push_str(&format!("  {k:<width$}  {v}\n"));
    }
    out.push_str("\nEnvironment: AFDET_THREADS sets the worker count (default 1).\n");
    out.push_str("Exit codes: 0 success, 1 usage or config error, 2 runtime failure.");
    out
}
