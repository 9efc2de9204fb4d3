use std::path::Path;

use crate::CliError;

/// Per-subcommand defaults read from a TOML file.
///
/// Keys live under a table named after the subcommand (`[train-renderer]`);
/// `[global]` is consulted as a fallback. Flags always win.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    root: toml::Table,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        if !path.is_file() {
            return Err(CliError::Usage(format!("config file {} does not exist", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let root: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
        for (k, v) in &root {
            if !v.is_table() {
                return Err(format!("top-level key {k:?} must be a table"));
            }
        }
        Ok(Self { root })
    }

    fn lookup(&self, section: &str, key: &str) -> Option<&toml::Value> {
        let find = |s: &str| self.root.get(s).and_then(|t| t.get(key));
        find(section).or_else(|| find("global"))
    }

    fn bad(section: &str, key: &str, want: &str) -> CliError {
        CliError::Data(format!("config [{section}] {key}: expected {want}"))
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<Option<f64>, CliError> {
        match self.lookup(section, key) {
            None => Ok(None),
            Some(toml::Value::Float(x)) => Ok(Some(*x)),
            Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(Self::bad(section, key, "a number")),
        }
    }

    pub fn u64(&self, section: &str, key: &str) -> Result<Option<u64>, CliError> {
        match self.lookup(section, key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(Self::bad(section, key, "a non-negative integer")),
        }
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<Option<usize>, CliError> {
        Ok(self.u64(section, key)?.map(|v| v as usize))
    }

    pub fn bool(&self, section: &str, key: &str) -> Result<Option<bool>, CliError> {
        match self.lookup(section, key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(Self::bad(section, key, "a boolean")),
        }
    }

    pub fn str(&self, section: &str, key: &str) -> Result<Option<String>, CliError> {
        match self.lookup(section, key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(Self::bad(section, key, "a string")),
        }
    }
}
