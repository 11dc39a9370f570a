//! Request-body parsing that reports every bad field at once.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Field name to message.
pub type FieldErrors = BTreeMap<String, String>;

/// Parses a JSON object body; an empty body is `{}`.
pub fn object(body: &[u8]) -> Result<Map<String, Value>, String> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(Map::new());
    }
    match serde_json::from_slice(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err("request body must be a JSON object".into()),
        Err(e) => Err(format!("malformed JSON: {e}")),
    }
}

/// Removes and decodes `key`; absent or null gives `None`.
pub fn take<T: DeserializeOwned>(obj: &mut Map<String, Value>, key: &str, errors: &mut FieldErrors) -> Option<T> {
    match obj.remove(key) {
        None | Some(Value::Null) => None,
        Some(v) => match serde_json::from_value(v) {
            Ok(t) => Some(t),
            Err(e) => {
                errors.insert(key.to_string(), e.to_string());
                None
            }
        },
    }
}

pub fn require<T: DeserializeOwned>(obj: &mut Map<String, Value>, key: &str, errors: &mut FieldErrors) -> Option<T> {
    if !obj.contains_key(key) {
        errors.insert(key.to_string(), "required".into());
        return None;
    }
    take(obj, key, errors)
}

/// Applies `patch` on top of `base`, field by field. Keys `base` lacks and
/// values that do not decode are reported under `prefix` + key.
pub fn overlay<T>(base: &T, patch: &Map<String, Value>, prefix: &str, errors: &mut FieldErrors) -> Option<T>
where
    T: Serialize + DeserializeOwned,
{
    let Ok(Value::Object(template)) = serde_json::to_value(base) else {
        unreachable!("parameter structs serialize to objects");
    };
    let mut merged = template.clone();
    let mut ok = true;
    for (k, v) in patch {
        let name = format!("{prefix}{k}");
        if !template.contains_key(k) {
            errors.insert(name, "unknown field".into());
            ok = false;
            continue;
        }
        let mut single = template.clone();
        single.insert(k.clone(), v.clone());
        match serde_json::from_value::<T>(Value::Object(single)) {
            Ok(_) => {
                merged.insert(k.clone(), v.clone());
            }
            Err(e) => {
                errors.insert(name, e.to_string());
                ok = false;
            }
        }
    }
    if !ok {
        return None;
    }
    match serde_json::from_value(Value::Object(merged)) {
        Ok(t) => Some(t),
        Err(e) => {
            errors.insert(prefix.trim_end_matches('.').to_string(), e.to_string());
            None
        }
    }
}
