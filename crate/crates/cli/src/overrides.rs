//! `--set key.path=value` overrides on serializable configs.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Applies each `dotted.key=value` to `config`. The value is read as JSON
/// when it parses, else as a plain string. Unknown keys are rejected.
pub fn apply<T: Serialize + DeserializeOwned>(config: &T, sets: &[String]) -> Result<T, String> {
    let mut root = serde_json::to_value(config).map_err(|e| e.to_string())?;
    for set in sets {
        let (key, raw) = set
            .split_once('=')
            .ok_or_else(|| format!("override `{set}` is not of the form key=value"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut root;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| format!("unknown config key `{key}`"))?;
        }
        *node = value;
    }
    serde_json::from_value(root).map_err(|e| format!("invalid override: {e}"))
}
