//! `key = value` config files layered under command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Default)]
pub struct Settings {
    path: Option<PathBuf>,
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Settings::parse(&text, Some(path.to_path_buf()))
    }

    /// Blank lines and `#` comments are skipped; keys may use `-` or `_`.
    pub fn parse(text: &str, path: Option<PathBuf>) -> Result<Settings> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key = value", n + 1))?;
            let key = k.trim().replace('-', "_");
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!("config line {}: `{key}` set twice", n + 1);
            }
        }
        Ok(Settings { path, values })
    }

    /// `flag` if given, else the parsed config value, else `None`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        let raw = self.values.get(key);
        if flag.is_some() {
            return Ok(flag);
        }
        raw.map(|v| v.parse::<T>().map_err(|e| anyhow!("config `{key}` = `{v}`: {e}")))
            .transpose()
    }

    /// Fails on keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        if let Some(key) = self.values.keys().find(|k| !known.contains(&k.as_str())) {
            match &self.path {
                Some(p) => bail!("{}: unknown config key `{key}`", p.display()),
                None => bail!("unknown config key `{key}`"),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_and_unknown_keys_fail() {
        let s = Settings::parse("k = 3\n# note\nlambda-smooth=0.5 # inline\n", None).unwrap();
        assert_eq!(s.pick::<usize>(Some(4), "k").unwrap(), Some(4));
        assert_eq!(s.pick::<f64>(None, "lambda_smooth").unwrap(), Some(0.5));
        assert_eq!(s.pick::<f64>(None, "rays").unwrap(), None);
        let s = Settings::parse("bogus = 1", None).unwrap();
        assert!(s.check_keys(&["k"]).is_err());
        assert!(Settings::parse("k = 1", None).unwrap().check_keys(&["k"]).is_ok());
        assert!(Settings::parse("k 3", None).is_err());
        assert!(Settings::parse("k=1\nk=2", None).is_err());
        let s = Settings::parse("k = many", None).unwrap();
        assert!(s.pick::<usize>(None, "k").is_err());
    }
}
