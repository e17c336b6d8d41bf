//! Run configuration: one TOML document with `[physical]`, `[process]`,
//! `[geometry]`, `[env]` and `[ppo]` sections. Every field has a default, so
//! an empty file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvSettings};
use crate::error::ConfigError;
use crate::ppo::PpoConfig;
use crate::world::{GeometryParams, PhysicalParams, ProcessParams, WorldConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub physical: PhysicalParams,
    pub process: ProcessParams,
    pub geometry: GeometryParams,
    pub env: EnvSettings,
    pub ppo: PpoConfig,
}

/// Float keys that are valid but absent from a serialized default
/// configuration.
const OPTIONAL_KEYS: [&str; 1] = ["geometry.angular_gain"];

impl RunConfig {
    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            physical: self.physical.clone(),
            process: self.process.clone(),
            geometry: self.geometry.clone(),
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig { world: self.world_config(), env: self.env.clone() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env_config().validate()?;
        self.ppo.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Loads `path` (or the defaults when `None`), applies `overrides`, and
    /// validates the result.
    pub fn load_with_overrides(
        path: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(path) => std::fs::read_to_string(path)?
                .parse::<toml::Table>()
                .map_err(|e| ConfigError::Parse(e.to_string()))?,
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            set_key(&mut table, key, value)?;
        }
        let config = Self::from_table(table)?;
        config.validate()?;
        Ok(config)
    }

    fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            let message = e.to_string();
            match message.split("unknown field `").nth(1).and_then(|s| s.split('`').next()) {
                Some(field) => ConfigError::UnknownParameter(field.to_string()),
                None => ConfigError::Parse(message),
            }
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Returns a copy with `key` (dotted or bare, see [`resolve_key`]) set to
    /// `value`.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::Table::try_from(self).expect("configuration serializes to a table");
        set_key(&mut table, key, value)?;
        let config = Self::from_table(table)?;
        config.validate()?;
        Ok(config)
    }
}

fn known_keys() -> Vec<String> {
    let table = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
    let mut out = Vec::new();
    fn walk(prefix: &str, table: &toml::Table, out: &mut Vec<String>) {
        for (k, v) in table {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(t) => walk(&path, t, out),
                _ => out.push(path),
            }
        }
    }
    walk("", &table, &mut out);
    out.extend(OPTIONAL_KEYS.iter().map(|k| k.to_string()));
    out
}

/// Full dotted path for `key`. A bare key such as `transfer_speed` resolves
/// when exactly one section defines it.
pub fn resolve_key(key: &str) -> Result<String, ConfigError> {
    let keys = known_keys();
    if keys.iter().any(|k| k == key) {
        return Ok(key.to_string());
    }
    let suffix = format!(".{key}");
    let matches: Vec<&String> = keys.iter().filter(|k| k.ends_with(&suffix)).collect();
    match matches.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(ConfigError::UnknownParameter(key.to_string())),
        _ => Err(ConfigError::invalid(
            key,
            format!(
                "ambiguous, qualify it as one of {}",
                matches.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            ),
        )),
    }
}

/// Parses `value` as a TOML value, falling back to a plain string.
fn parse_value(value: &str) -> toml::Value {
    format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

fn set_key(table: &mut toml::Table, key: &str, value: &str) -> Result<(), ConfigError> {
    let path = resolve_key(key)?;
    let parts: Vec<&str> = path.split('.').collect();
    let (last, sections) = parts.split_last().expect("non-empty key");
    let mut current = table;
    for section in sections {
        current = current
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::invalid(path.clone(), "parent is not a section"))?;
    }
    let mut parsed = parse_value(value);
    // integers given for float fields
    if let toml::Value::Integer(i) = parsed {
        let float_field = OPTIONAL_KEYS.contains(&path.as_str())
            || matches!(default_value(&path), Some(toml::Value::Float(_)));
        if float_field {
            parsed = toml::Value::Float(i as f64);
        }
    }
    current.insert(last.to_string(), parsed);
    Ok(())
}

fn default_value(path: &str) -> Option<toml::Value> {
    let table = toml::Table::try_from(RunConfig::default()).ok()?;
    let mut value = toml::Value::Table(table);
    for part in path.split('.') {
        value = value.as_table()?.get(part)?.clone();
    }
    Some(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut config = RunConfig::default();
        config.geometry.angular_gain = Some(12.5);
        config.env.reward.time_penalty = -0.02;
        let text = config.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), config);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = RunConfig::from_toml_str("[physical]\nwarp_speed = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownParameter(ref f) if f == "warp_speed"), "{err}");
    }

    #[test]
    fn bare_and_dotted_overrides() {
        let base = RunConfig::default();
        let a = base.with_override("transfer_speed", "0.005").unwrap();
        assert_eq!(a.physical.transfer_speed, 0.005);
        let b = base.with_override("ppo.gamma", "0.5").unwrap();
        assert_eq!(b.ppo.gamma, 0.5);
        let c = base.with_override("process.glass_input_interval_s", "10").unwrap();
        assert_eq!(c.process.glass_input_interval_s, 10.0);
        let d = base.with_override("observation_mode", "reduced").unwrap();
        assert_eq!(d.env.observation_mode, crate::env::ObservationMode::Reduced);
        let e = base.with_override("angular_gain", "20").unwrap();
        assert_eq!(e.geometry.angular_gain, Some(20.0));
    }

    #[test]
    fn unknown_override_is_rejected() {
        assert!(matches!(
            RunConfig::default().with_override("nonsense", "1"),
            Err(ConfigError::UnknownParameter(_))
        ));
    }

    #[test]
    fn invalid_override_names_field() {
        let err = RunConfig::default().with_override("ppo.gamma", "1.5").unwrap_err();
        assert!(err.to_string().contains("ppo.gamma"));
    }
}
