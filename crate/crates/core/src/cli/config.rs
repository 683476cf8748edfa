//! Merging of command-line flags with a TOML config file.
//!
//! Top-level keys of the file apply to every command that knows them; a table
//! named after the command (`[train-t2p]`) applies to that command only and
//! must not contain unknown keys. Flags given on the command line win.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::UsageError;

fn as_object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

/// Returns `flags` with every unset field filled from `config` (if any).
pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>, section: &str) -> anyhow::Result<T> {
    let cli = as_object(serde_json::to_value(flags)?);
    let Some(path) = config else {
        return Ok(serde_json::from_value(Value::Object(cli))?);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {}", path.display(), e.message())))?;
    let mut merged = Map::new();
    for (k, v) in &table {
        if !v.is_table() && cli.contains_key(k) {
            merged.insert(k.clone(), serde_json::to_value(v)?);
        }
    }
    if let Some(section_table) = table.get(section) {
        let section_table = section_table
            .as_table()
            .ok_or_else(|| UsageError(format!("config key `{section}` must be a table")))?;
        for (k, v) in section_table {
            if !cli.contains_key(k) {
                return Err(UsageError(format!("config [{section}] has unknown key `{k}`")).into());
            }
            merged.insert(k.clone(), serde_json::to_value(v)?);
        }
    }
    for (k, v) in cli {
        if !v.is_null() || !merged.contains_key(&k) {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}
