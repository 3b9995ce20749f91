//! Plain `key = value` config files for the command-line tools.
//!
//! One assignment per line, `#` starts a comment. Range fields take two
//! whitespace-separated numbers. Unknown and duplicate keys are rejected so
//! typos fail loudly instead of silently using a default.

use crate::solver::ArchConfig;
use crate::synth::SynthConfig;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("duplicate config key `{0}`")]
    Duplicate(String),
    #[error("missing config key `{0}`")]
    Missing(String),
    #[error("unknown config key `{0}`")]
    Unknown(String),
    #[error("bad value for `{key}`: {reason}")]
    Bad { key: String, reason: String },
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Malformed {
                line: i + 1,
                text: raw.trim().to_string(),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Malformed {
                line: i + 1,
                text: raw.trim().to_string(),
            });
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(ConfigError::Duplicate(key));
        }
    }
    Ok(map)
}

struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Result<String, ConfigError> {
        self.map
            .remove(key)
            .ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    fn take_opt(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.map.into_keys().next() {
            Some(k) => Err(ConfigError::Unknown(k)),
            None => Ok(()),
        }
    }
}

fn bad(key: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Bad {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, e))
}

fn parse_pair<T: std::str::FromStr + PartialOrd>(
    key: &str,
    value: &str,
) -> Result<(T, T), ConfigError>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(bad(key, format!("expected two numbers, got `{value}`")));
    }
    let lo: T = parse_one(key, parts[0])?;
    let hi: T = parse_one(key, parts[1])?;
    if lo > hi {
        return Err(bad(key, "range low exceeds high"));
    }
    Ok((lo, hi))
}

/// Dataset recipe. All fields except `seed` are required; a seed given by the
/// caller (the `--seed` flag) overrides one in the file.
pub fn parse_synth_config(text: &str, seed: Option<u64>) -> Result<SynthConfig, ConfigError> {
    let mut f = Fields {
        map: parse_kv(text)?,
    };
    let n_nodes_range = parse_pair("n_nodes_range", &f.take("n_nodes_range")?)?;
    let edge_fraction_range = parse_pair("edge_fraction_range", &f.take("edge_fraction_range")?)?;
    let sigma_deg_range = parse_pair("sigma_deg_range", &f.take("sigma_deg_range")?)?;
    let outlier_fraction_range =
        parse_pair("outlier_fraction_range", &f.take("outlier_fraction_range")?)?;
    let planar_gt = parse_one("planar_gt", &f.take("planar_gt")?)?;
    let file_seed = match f.take_opt("seed") {
        Some(v) => Some(parse_one("seed", &v)?),
        None => None,
    };
    f.finish()?;
    Ok(SynthConfig {
        n_nodes_range,
        edge_fraction_range,
        sigma_deg_range,
        outlier_fraction_range,
        planar_gt,
        seed: seed.or(file_seed).unwrap_or(0),
    })
}

/// Architecture overrides. Every key is optional and falls back to the
/// published configuration.
pub fn parse_arch_config(text: &str) -> Result<ArchConfig, ConfigError> {
    let mut f = Fields {
        map: parse_kv(text)?,
    };
    let mut cfg = ArchConfig::default();
    if let Some(v) = f.take_opt("feat_dim") {
        cfg.feat_dim = parse_one("feat_dim", &v)?;
    }
    if let Some(v) = f.take_opt("hidden_dim") {
        cfg.hidden_dim = parse_one("hidden_dim", &v)?;
    }
    if let Some(v) = f.take_opt("n_cost_convs") {
        cfg.n_cost_convs = parse_one("n_cost_convs", &v)?;
    }
    if let Some(v) = f.take_opt("n_feat_convs") {
        cfg.n_feat_convs = parse_one("n_feat_convs", &v)?;
    }
    if let Some(v) = f.take_opt("t_g") {
        cfg.t_g = parse_one("t_g", &v)?;
    }
    if let Some(v) = f.take_opt("t_e") {
        cfg.t_e = parse_one("t_e", &v)?;
    }
    if let Some(v) = f.take_opt("t_n") {
        cfg.t_n = parse_one("t_n", &v)?;
    }
    if let Some(v) = f.take_opt("t_g_test") {
        cfg.t_g_test = parse_one("t_g_test", &v)?;
    }
    if let Some(v) = f.take_opt("mode") {
        cfg.mode = parse_one("mode", &v)?;
    }
    if let Some(v) = f.take_opt("cost_metric") {
        cfg.cost_metric = parse_one("cost_metric", &v)?;
    }
    f.finish()?;
    cfg.validate()
        .map_err(|e| bad("arch", e.to_string()))?;
    Ok(cfg)
}
