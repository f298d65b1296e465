//! JSON run configs with flag overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::CliError;

/// Loads the config file, or an empty object when none is given.
pub fn load(path: Option<&Path>) -> Result<Value, CliError> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("malformed config {}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::usage(format!("config {} must be a JSON object", path.display())));
    }
    Ok(value)
}

/// Sets `dotted.path` to `value`, creating intermediate objects.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::usage(format!("bad override path {path:?}")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::usage(format!("override {path:?} crosses a non-object")))?;
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::usage(format!("override {path:?} crosses a non-object")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `path=value`; the value is read as JSON, falling back to a string.
pub fn parse_override(arg: &str) -> Result<(String, Value), CliError> {
    let (path, raw) = arg
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override {arg:?} is not path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path.to_string(), value))
}

pub fn apply_overrides(root: &mut Value, overrides: &[String]) -> Result<(), CliError> {
    for arg in overrides {
        let (path, value) = parse_override(arg)?;
        set_path(root, &path, value)?;
    }
    Ok(())
}

pub fn typed<T: DeserializeOwned>(value: &Value) -> Result<T, CliError> {
    serde_json::from_value(value.clone()).map_err(|e| CliError::usage(format!("invalid config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn dotted_overrides() {
        let mut v = json!({"concept": {"delta": 2.0}, "trials": 5});
        apply_overrides(
            &mut v,
            &["concept.delta=3".into(), "trials=7".into(), "a.b.c=text".into()],
        )
        .unwrap();
        assert_eq!(v, json!({"concept": {"delta": 3}, "trials": 7, "a": {"b": {"c": "text"}}}));
        assert!(apply_overrides(&mut v, &["trials.x=1".into()]).is_err());
        assert!(apply_overrides(&mut v, &["novalue".into()]).is_err());
    }
}
