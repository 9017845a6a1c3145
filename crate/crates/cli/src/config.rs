//! Layered run configuration: command defaults, then an optional JSON file,
//! then `--set key=value` overrides, then the seed environment fallback.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SEED_ENV: &str = "BRIDGEST_SEED";

/// User-supplied layers merged into one JSON object.
pub fn user_layer(file: Option<&Path>, sets: &[String]) -> Result<Value> {
    let mut user = Value::Object(Map::new());
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
        if !v.is_object() {
            return Err(CliError::Config(format!("config {} must be a JSON object", path.display())).into());
        }
        merge(&mut user, v);
    }
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{s}`")))?;
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(CliError::Config(format!("bad config key `{key}`")).into());
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut user, key, value)?;
    }
    Ok(user)
}

pub fn get_path<'a>(v: &'a Value, key: &str) -> Option<&'a Value> {
    key.split('.').try_fold(v, |v, k| v.get(k))
}

fn set_path(v: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = v;
    let parts: Vec<&str> = key.split('.').collect();
    for k in &parts[..parts.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}` descends into a non-object")))?;
        cur = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("`{key}` descends into a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Objects merge key by key; anything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
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

/// Keys in `user` that the defaults do not have. Empty default objects are
/// open maps and accept any key.
fn unknown_keys(base: &Value, user: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(b), Value::Object(u)) = (base, user) else {
        return;
    };
    if b.is_empty() {
        return;
    }
    for (k, v) in u {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match b.get(k) {
            Some(bv) => unknown_keys(bv, v, &path, out),
            None => out.push(path),
        }
    }
}

/// Merges `user` over `defaults` and deserializes. With `seed_key`, an unset
/// seed falls back to the seed environment variable.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, mut user: Value, seed_key: Option<&str>) -> Result<T> {
    let mut base = serde_json::to_value(defaults)?;
    let mut unknown = Vec::new();
    unknown_keys(&base, &user, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(CliError::Config(format!("unknown config key(s): {}", unknown.join(", "))).into());
    }
    if let Some(key) = seed_key {
        if get_path(&user, key).is_none() {
            if let Ok(raw) = std::env::var(SEED_ENV) {
                let seed: u64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("{SEED_ENV}=`{raw}` is not an unsigned integer")))?;
                set_path(&mut user, key, Value::from(seed))?;
            }
        }
    }
    merge(&mut base, user);
    serde_json::from_value(base).map_err(|e| CliError::Config(format!("invalid config: {e}")).into())
}

/// Output directory of one run, keyed by a hash of its resolved config.
pub struct RunDir {
    pub run_id: String,
    pub path: PathBuf,
}

impl RunDir {
    /// Creates `out_dir/run_id` and writes the resolved config into it.
    pub fn create<T: Serialize>(out_dir: &Path, command: &str, run_id: Option<&str>, config: &T) -> Result<Self> {
        let json = serde_json::to_string_pretty(config)?;
        let run_id = match run_id {
            Some(id) => id.to_string(),
            None => {
                let digest = Sha256::digest(format!("{command}\n{json}").as_bytes());
                let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
                format!("{command}-{hex}")
            }
        };
        let path = out_dir.join(&run_id);
        std::fs::create_dir_all(&path).with_context(|| format!("creating run directory {}", path.display()))?;
        let dir = Self { run_id, path };
        dir.write("config.json", &(json + "\n"))?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.file(name);
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }
}
