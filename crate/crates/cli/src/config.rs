use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::commands::Failure;

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
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

/// `base` with the fields present in the JSON file at `path` replaced.
pub fn layered<T: Serialize + DeserializeOwned>(base: &T, path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(serde_json::from_value(serde_json::to_value(base).expect("config serializes")).expect("round trip"));
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let overlay: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !overlay.is_object() {
        return Err(Failure::Usage(format!("config {} must be a JSON object", path.display())));
    }
    let mut v = serde_json::to_value(base).expect("config serializes");
    merge(&mut v, overlay);
    serde_json::from_value(v).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
}
