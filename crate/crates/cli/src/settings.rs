//! Resolution of option values: a command-line flag wins over the
//! `key=value` config file, which wins over the built-in default. Every
//! resolved value is recorded in the run manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};

use crate::manifest::RunManifest;
use crate::UsageError;

pub struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                homedetect::synth::parse_kv(&text).with_context(|| format!("in config {}", p.display()))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { file })
    }

    pub fn raw(&self) -> &BTreeMap<String, String> {
        &self.file
    }

    fn file_value<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!(UsageError(format!("config key `{key}`: {e}"))))
            })
            .transpose()
    }

    pub fn get<T>(&self, m: &mut RunManifest, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        m.set(key, &v);
        Ok(v)
    }

    pub fn require<T>(&self, m: &mut RunManifest, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self
                .file_value(key)?
                .ok_or_else(|| anyhow!(UsageError(format!("`--{}` is required (flag or config key `{key}`)", key.replace('_', "-")))))?,
        };
        m.set(key, &v);
        Ok(v)
    }

    /// A switch is on when given on the command line or set true in the file.
    pub fn switch(&self, m: &mut RunManifest, key: &str, flag: bool) -> Result<bool> {
        let v = flag || self.file_value::<bool>(key)?.unwrap_or(false);
        m.set(key, v);
        Ok(v)
    }
}
