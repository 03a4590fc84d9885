//! Config files for the train/sweep commands: flat `key = value` lines
//! with optional `[section]` headers, or a JSON object. Both flatten to
//! one string map keyed by the bare option name; command-line flags
//! override anything found here.

use std::collections::BTreeMap;
use std::path::Path;

pub type FileValues = BTreeMap<String, String>;

/// Normalize `batch_size` / `train.batch-size` to the flag name
/// `batch-size`.
fn canonical(key: &str) -> String {
    let bare = key.rsplit('.').next().unwrap_or(key);
    bare.trim().replace('_', "-").to_lowercase()
}

fn insert(map: &mut FileValues, key: &str, value: String) -> Result<(), String> {
    let name = canonical(key);
    if name.is_empty() {
        return Err(format!("empty option name in {key:?}"));
    }
    if map.insert(name.clone(), value).is_some() {
        return Err(format!("option {name:?} is set more than once"));
    }
    Ok(())
}

fn flatten_json(map: &mut FileValues, prefix: &str, value: &serde_json::Value) -> Result<(), String> {
    use serde_json::Value;
    match value {
        Value::Object(fields) => {
            for (k, v) in fields {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_json(map, &key, v)?;
            }
            Ok(())
        }
        Value::Null => Ok(()),
        Value::Bool(b) => insert(map, prefix, b.to_string()),
        Value::Number(n) => insert(map, prefix, n.to_string()),
        Value::String(s) => insert(map, prefix, s.clone()),
        Value::Array(items) => {
            let mut parts = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    Value::Number(n) => parts.push(n.to_string()),
                    Value::String(s) => parts.push(s.clone()),
                    other => {
                        return Err(format!(
                            "array option {prefix:?} may hold numbers or strings, not {other}"
                        ))
                    }
                }
            }
            insert(map, prefix, parts.join(","))
        }
    }
}

pub fn parse_config_text(text: &str) -> Result<FileValues, String> {
    let mut map = FileValues::new();
    if text.trim_start().starts_with('{') {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| format!("invalid JSON config: {e}"))?;
        flatten_json(&mut map, "", &value)?;
        return Ok(map);
    }
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("line {}: expected key = value, got {line:?}", lineno + 1));
        };
        let key = if section.is_empty() {
            key.trim().to_string()
        } else {
            format!("{section}.{}", key.trim())
        };
        insert(&mut map, &key, value.trim().to_string())
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
    }
    Ok(map)
}

pub fn load_config_file(path: &Path) -> Result<FileValues, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
    parse_config_text(&text)
}

/// Flag-over-file resolution for one typed option.
pub struct Resolver {
    file: FileValues,
}

impl Resolver {
    pub fn new(file: FileValues) -> Self {
        Resolver { file }
    }

    pub fn empty() -> Self {
        Resolver {
            file: FileValues::new(),
        }
    }

    /// The flag value if given, else the parsed file value, else None.
    pub fn take<T: std::str::FromStr>(
        &self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>, String> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| format!("config option {key} has invalid value {raw:?}")),
            None => Ok(None),
        }
    }
}
