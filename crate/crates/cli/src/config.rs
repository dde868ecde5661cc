//! Layered configuration: defaults, then a JSON file, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Recursively overlays `top` onto `base`. Objects merge key by key; any
/// other value replaces what was there. `null` in `top` is ignored so that
/// absent flags never clobber lower layers.
pub fn merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (_, Value::Null) => {}
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        if !v.is_null() {
                            b.insert(k.clone(), v.clone());
                        }
                    }
                }
            }
        }
        (b, t) => *b = t.clone(),
    }
}

pub fn read_config_file(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !v.is_object() {
        return Err(CliError::Usage(format!(
            "config {} must hold a JSON object",
            path.display()
        )));
    }
    Ok(v)
}

/// Resolves `base < file < flags` into `T`, rejecting unknown keys in the
/// file by checking that they survive a round trip.
pub fn resolve<T: Serialize + DeserializeOwned>(
    base: &T,
    file: Option<&Value>,
    flags: Value,
) -> CliResult<T> {
    let mut v = serde_json::to_value(base).expect("config serializes");
    if let Some(f) = file {
        check_known(&v, f, "")?;
        merge(&mut v, f);
    }
    merge(&mut v, &flags);
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

fn check_known(shape: &Value, file: &Value, prefix: &str) -> CliResult<()> {
    if let (Value::Object(s), Value::Object(f)) = (shape, file) {
        for (k, v) in f {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match s.get(k) {
                None => return Err(CliError::Usage(format!("unknown config key '{path}'"))),
                Some(inner) if inner.is_object() => check_known(inner, v, &path)?,
                Some(_) => {}
            }
        }
    }
    Ok(())
}

/// Builds a flag layer, dropping absent (`None`) values.
pub fn flags(pairs: &[(&str, Value)]) -> Value {
    let mut root = Value::Object(Map::new());
    for (path, v) in pairs {
        if v.is_null() {
            continue;
        }
        let parts: Vec<&str> = path.split('.').collect();
        insert_path(&mut root, &parts, v.clone());
    }
    root
}

fn insert_path(at: &mut Value, parts: &[&str], v: Value) {
    let obj = at.as_object_mut().expect("flag paths nest objects");
    match parts {
        [] => {}
        [last] => {
            obj.insert(last.to_string(), v);
        }
        [head, rest @ ..] => {
            let next = obj
                .entry(head.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            insert_path(next, rest, v);
        }
    }
}

/// Prints the resolved configuration and seed to stderr.
pub fn announce<T: Serialize>(command: &str, config: &T, seed: u64) {
    eprintln!(
        "{command} config: {}",
        serde_json::to_string(config).expect("config serializes")
    );
    eprintln!("{command} seed: {seed}");
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Inner {
        a: u32,
        b: u32,
    }

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Outer {
        x: f64,
        inner: Inner,
    }

    fn base() -> Outer {
        Outer {
            x: 1.0,
            inner: Inner { a: 1, b: 1 },
        }
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = json!({"x": 2.0, "inner": {"a": 2}});
        let out: Outer = resolve(&base(), Some(&file), flags(&[("inner.a", json!(3)), ("x", Value::Null)])).unwrap();
        assert_eq!(out, Outer { x: 2.0, inner: Inner { a: 3, b: 1 } });
    }

    #[test]
    fn unknown_file_keys_are_usage_errors() {
        let file = json!({"inner": {"c": 2}});
        let err = resolve(&base(), Some(&file), json!({})).unwrap_err();
        assert!(matches!(err, CliError::Usage(ref m) if m.contains("inner.c")));
    }
}
