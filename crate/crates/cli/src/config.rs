//! Layered configuration: built-in defaults, then an optional JSON file,
//! then command-line values (dotted `--set` keys and dedicated flags).

use std::fs;
use std::path::Path;

use impsup::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const PRECEDENCE: &str = "command-line flags and --set > --config file > built-in defaults";

/// Recursively overlay `top` onto `base`; objects merge key by key,
/// anything else replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key '{key}'")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override '{key}': '{part}' is not inside an object"
            ))
        })?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node.as_object_mut().ok_or_else(|| {
        Error::Config(format!("override '{key}' does not address an object field"))
    })?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parse `key=value`; the value is read as JSON when it parses, otherwise
/// as a plain string.
pub fn parse_override(raw: &str) -> Result<(String, Value)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{raw}' is not of the form key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Resolve a config of type `T`. `overrides` are applied in order, so later
/// entries win.
pub fn resolve<T>(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut value = serde_json::to_value(T::default())?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !parsed.is_object() {
            return Err(Error::Config(format!(
                "{} must hold a JSON object",
                path.display()
            )));
        }
        merge(&mut value, parsed);
    }
    for (k, v) in overrides {
        set_dotted(&mut value, k, v.clone())?;
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
}
