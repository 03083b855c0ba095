//! Flat `key = value` run configuration files.
//!
//! Keys are the long flag names of a command (`epochs`, `data-train`, ...);
//! underscores are accepted in place of dashes. Blank lines and lines starting
//! with `#` are ignored. Entries are spliced into the argument list ahead of
//! the user's own flags, so an explicit flag always wins over the file and the
//! file wins over built-in defaults.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("config line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("config key `{key}` is not an option of `{command}`")]
    UnknownKey { key: String, command: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut entries: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let syntax = || ConfigError::Syntax {
            line: i + 1,
            text: raw.to_owned(),
        };
        let (key, value) = line.split_once('=').ok_or_else(syntax)?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || value.is_empty() || key.contains(char::is_whitespace) {
            return Err(syntax());
        }
        if entries.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::DuplicateKey { line: i + 1, key });
        }
        entries.push((key, value.to_owned()));
    }
    Ok(entries)
}

pub fn load_config(path: &Path) -> Result<Vec<(String, String)>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

/// Value of `--config` in a raw argument list, if any.
pub fn find_config_flag(args: &[OsString]) -> Option<OsString> {
    let mut iter = args.iter();
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return iter.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Inserts file entries as `--key=value` right after the subcommand at `sub_index`.
pub fn splice_entries(
    args: &[OsString],
    sub_index: usize,
    entries: &[(String, String)],
    known: &[String],
    command: &str,
) -> Result<Vec<OsString>, ConfigError> {
    for (key, _) in entries {
        if !known.contains(key) {
            return Err(ConfigError::UnknownKey {
                key: key.clone(),
                command: command.to_owned(),
            });
        }
    }
    let mut out: Vec<OsString> = args[..=sub_index].to_vec();
    out.extend(entries.iter().map(|(k, v)| OsString::from(format!("--{k}={v}"))));
    out.extend_from_slice(&args[sub_index + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_entries() {
        let text = "# comment\nepochs = 5\n\nlearning_rate=0.01\n";
        assert_eq!(
            parse_config(text).unwrap(),
            vec![("epochs".into(), "5".into()), ("learning-rate".into(), "0.01".into())]
        );
    }

    #[test]
    fn rejects_malformed_and_duplicate_lines() {
        assert!(matches!(
            parse_config("epochs 5"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("a = 1\na = 2"),
            Err(ConfigError::DuplicateKey { line: 2, .. })
        ));
        assert!(matches!(parse_config("a ="), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn splices_after_subcommand_and_rejects_unknown_keys() {
        let args: Vec<OsString> = ["hass", "train", "--epochs", "3"].iter().map(OsString::from).collect();
        let known = vec!["epochs".to_string(), "seed".to_string()];
        let out = splice_entries(&args, 1, &[("seed".into(), "4".into())], &known, "train").unwrap();
        assert_eq!(
            out,
            ["hass", "train", "--seed=4", "--epochs", "3"]
                .map(OsString::from)
                .to_vec()
        );
        assert!(matches!(
            splice_entries(&args, 1, &[("nope".into(), "1".into())], &known, "train"),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn finds_config_flag_in_both_spellings() {
        let a: Vec<OsString> = ["hass", "train", "--config", "x.cfg"].map(OsString::from).to_vec();
        assert_eq!(find_config_flag(&a), Some("x.cfg".into()));
        let b: Vec<OsString> = ["hass", "train", "--config=y.cfg"].map(OsString::from).to_vec();
        assert_eq!(find_config_flag(&b), Some("y.cfg".into()));
    }
}
