//! Flat `key = value` run configuration.
//!
//! Every command declares its keys with defaults. Values are resolved as
//! default, then config file, then command-line flag; the seed may also
//! come from the environment when neither file nor flag sets it. Unknown
//! keys are errors.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Value};

use crate::{Error, Result};

/// Environment variable consulted for `seed` when no file or flag sets it.
pub const SEED_ENV: &str = "OUFLOW_SEED";

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    /// `None` marks a required key.
    pub default: Option<&'static str>,
    pub doc: &'static str,
}

impl KeySpec {
    pub const fn new(key: &'static str, default: &'static str, doc: &'static str) -> Self {
        KeySpec {
            key,
            default: Some(default),
            doc,
        }
    }

    pub const fn required(key: &'static str, doc: &'static str) -> Self {
        KeySpec { key, default: None, doc }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    command: String,
    values: BTreeMap<String, (String, Source)>,
}

/// Parses `key = value` lines; `#` starts a comment, `-` in keys reads as `_`.
pub fn parse_flat(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        let key = normalize_key(k);
        if key.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|(k, _)| *k == key) {
            return Err(Error::Parse(format!("line {}: duplicate key {key}", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

impl RunConfig {
    pub fn resolve(
        command: &str,
        specs: &[KeySpec],
        file: &[(String, String)],
        flags: &[(String, String)],
        env_seed: Option<&str>,
    ) -> Result<Self> {
        let mut values = BTreeMap::new();
        for s in specs {
            if let Some(d) = s.default {
                values.insert(s.key.to_string(), (d.to_string(), Source::Default));
            }
        }
        let known = |k: &str| specs.iter().any(|s| s.key == k);
        for (layer, source) in [(file, Source::File), (flags, Source::Flag)] {
            for (k, v) in layer {
                let key = normalize_key(k);
                if !known(&key) {
                    return Err(Error::Parameter(format!("unknown key {key:?} for command {command}")));
                }
                values.insert(key, (v.clone(), source));
            }
        }
        if known("seed") {
            let from_default = matches!(values.get("seed"), Some((_, Source::Default)) | None);
            if let (true, Some(s)) = (from_default, env_seed) {
                values.insert("seed".into(), (s.trim().to_string(), Source::Env));
            }
        }
        for s in specs {
            if !values.contains_key(s.key) {
                return Err(Error::Parameter(format!("missing required key {:?} for command {command}", s.key)));
            }
        }
        Ok(RunConfig {
            command: command.to_string(),
            values,
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn get_str(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(|(v, _)| v.as_str())
            .ok_or_else(|| Error::Parameter(format!("no key {key:?} for command {}", self.command)))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get_str(key)?;
        raw.parse()
            .map_err(|_| Error::Parse(format!("{key} = {raw:?} is not a valid {}", std::any::type_name::<T>())))
    }

    pub fn source(&self, key: &str) -> Option<Source> {
        self.values.get(key).map(|(_, s)| *s)
    }

    /// Sidecar JSON: command, resolved values, their sources and `metadata`.
    pub fn sidecar(&self, metadata: Value) -> String {
        let config: BTreeMap<&str, &str> = self.values.iter().map(|(k, (v, _))| (k.as_str(), v.as_str())).collect();
        let sources: BTreeMap<&str, Source> = self.values.iter().map(|(k, (_, s))| (k.as_str(), *s)).collect();
        let doc = json!({
            "command": self.command,
            "config": config,
            "sources": sources,
            "metadata": metadata,
        });
        serde_json::to_string_pretty(&doc).expect("sidecar serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPECS: [KeySpec; 3] = [
        KeySpec::new("dt", "0.5", "step"),
        KeySpec::new("seed", "0", "seed"),
        KeySpec::required("out", "output"),
    ];

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn parses_flat_files() {
        let p = parse_flat("# comment\n dt = 0.25 \n\nout=a.csv # trailing\nt-max = 3\n").unwrap();
        assert_eq!(p, pairs(&[("dt", "0.25"), ("out", "a.csv"), ("t_max", "3")]));
        assert!(parse_flat("dt 0.25").is_err());
        assert!(parse_flat("dt = 1\ndt = 2").is_err());
        assert!(parse_flat(" = 2").is_err());
    }

    #[test]
    fn layering_and_sources() {
        let file = pairs(&[("dt", "0.25"), ("out", "f.csv")]);
        let flags = pairs(&[("out", "g.csv")]);
        let c = RunConfig::resolve("x", &SPECS, &file, &flags, None).unwrap();
        assert_eq!(c.get::<f64>("dt").unwrap(), 0.25);
        assert_eq!(c.get_str("out").unwrap(), "g.csv");
        assert_eq!(c.source("dt"), Some(Source::File));
        assert_eq!(c.source("out"), Some(Source::Flag));
        assert_eq!(c.source("seed"), Some(Source::Default));
    }

    #[test]
    fn environment_seed_only_replaces_the_default() {
        let out = pairs(&[("out", "a")]);
        let c = RunConfig::resolve("x", &SPECS, &[], &out, Some("17")).unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), 17);
        assert_eq!(c.source("seed"), Some(Source::Env));
        let flags = pairs(&[("out", "a"), ("seed", "3")]);
        let c = RunConfig::resolve("x", &SPECS, &[], &flags, Some("17")).unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), 3);
        let file = pairs(&[("seed", "5")]);
        let c = RunConfig::resolve("x", &SPECS, &file, &out, Some("17")).unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), 5);
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        let bad = pairs(&[("out", "a"), ("colour", "red")]);
        assert!(matches!(RunConfig::resolve("x", &SPECS, &bad, &[], None), Err(Error::Parameter(_))));
        assert!(matches!(RunConfig::resolve("x", &SPECS, &[], &[], None), Err(Error::Parameter(_))));
        let c = RunConfig::resolve("x", &SPECS, &[], &pairs(&[("out", "a"), ("dt", "abc")]), None).unwrap();
        assert!(matches!(c.get::<f64>("dt"), Err(Error::Parse(_))));
    }

    #[test]
    fn sidecar_is_stable() {
        let c = RunConfig::resolve("x", &SPECS, &[], &pairs(&[("out", "a")]), Some("9")).unwrap();
        let s = c.sidecar(json!({"n": 3}));
        assert_eq!(s, c.sidecar(json!({"n": 3})));
        let v: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["config"]["seed"], "9");
        assert_eq!(v["sources"]["seed"], "env");
        assert_eq!(v["metadata"]["n"], 3);
    }
}
