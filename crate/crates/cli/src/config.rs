//! Flat `section.key = value` configuration.
//!
//! Values come from an optional config file and are then overridden by
//! command-line flags. The merged map, together with the subcommand name,
//! is hashed to tag every output file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

/// Every key a config file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "source.preset",
    "source.mu",
    "source.g2_zero",
    "source.lifetime_ns",
    "source.rep_rate_hz",
    "link.alpha_db_per_km",
    "link.distance_km",
    "link.eta_setup",
    "link.p_dc",
    "optics.e_misalign",
    "optics.target_qber",
    "session.pulses",
    "session.disclose_fraction",
    "session.double_click",
    "session.records",
    "session.entropy_file",
    "reconcile.passes",
    "reconcile.k1",
    "reconcile.verify_bits",
    "reconcile.est_qber",
    "privacy.safety_margin",
    "privacy.leakage",
    "privacy.f_ec",
    "rates.dmax_km",
    "rates.step_km",
    "rates.f_ec",
    "rates.q",
    "rates.variants",
    "cascade.alice",
    "cascade.bob",
    "cascade.n",
    "cascade.qber",
    "g2.pulses",
    "g2.detection_eff",
    "g2.count_rate_cps",
    "g2.splitter_ratio",
    "g2.bin_width_ns",
    "g2.window_periods",
    "g2.tags_out",
    "g2.tags_in",
];

/// Configuration problems; all map to exit code 2.
#[derive(Debug)]
pub enum ConfigError {
    Missing(PathBuf),
    Unreadable(PathBuf, std::io::Error),
    Syntax {
        path: PathBuf,
        line: usize,
        text: String,
    },
    UnknownKey {
        key: String,
        origin: String,
    },
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Missing(p) => write!(f, "config file not found: {}", p.display()),
            ConfigError::Unreadable(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            ConfigError::Syntax { path, line, text } => {
                write!(
                    f,
                    "{}:{line}: expected `key = value`, got `{text}`",
                    path.display()
                )
            }
            ConfigError::UnknownKey { key, origin } => {
                write!(f, "unknown config key `{key}` in {origin}")
            }
            ConfigError::BadValue { key, value, reason } => {
                write!(f, "bad value `{value}` for `{key}`: {reason}")
            }
            ConfigError::Invalid(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.to_path_buf(),
                line: i + 1,
                text: raw.trim().to_string(),
            })?;
            let key = k.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    origin: origin.display().to_string(),
                });
            }
            values.insert(key.to_string(), v.trim().to_string());
        }
        Ok(Settings { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                ConfigError::Missing(path.to_path_buf())
            } else {
                ConfigError::Unreadable(path.to_path_buf(), e)
            }
        })?;
        Self::parse(&text, path)
    }

    /// Sets `key` when `value` is present; flags call this after the file
    /// has been loaded, so they win.
    pub fn set<T: ToString>(&mut self, key: &str, value: Option<T>) {
        debug_assert!(KNOWN_KEYS.contains(&key), "{key}");
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.to_string());
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Integer that may be written in float notation such as `1e6`.
    pub fn count_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse_count(v).ok_or_else(|| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                reason: "expected a non-negative integer".into(),
            }),
        }
    }

    /// Canonical `key=value` lines in key order.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// First 16 hex digits of SHA-256 over the command name and the
    /// canonical settings.
    pub fn hash(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(format!("command={command}\n"));
        h.update(self.canonical());
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn parse_count(v: &str) -> Option<u64> {
    if let Ok(n) = v.parse::<u64>() {
        return Some(n);
    }
    let f: f64 = v.parse().ok()?;
    (f >= 0.0 && f.fract() == 0.0 && f < 1.8e19).then_some(f as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let s = Settings::parse(
            "# link\nlink.alpha_db_per_km = 0.4  # air\n\n  session.pulses=1e6\n",
            Path::new("x.cfg"),
        )
        .unwrap();
        assert_eq!(s.get::<f64>("link.alpha_db_per_km").unwrap(), Some(0.4));
        assert_eq!(s.count_or("session.pulses", 0).unwrap(), 1_000_000);
        assert_eq!(s.count_or("g2.pulses", 7).unwrap(), 7);
    }

    #[test]
    fn rejects_unknown_keys_and_syntax() {
        assert!(matches!(
            Settings::parse("link.alpha = 1", Path::new("x")),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            Settings::parse("link.alpha_db_per_km 1", Path::new("x")),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn flags_override_file() {
        let mut s = Settings::parse("seed = 3\nsession.pulses = 10", Path::new("x")).unwrap();
        s.set("seed", Some(9u64));
        s.set::<u64>("session.pulses", None);
        assert_eq!(s.get::<u64>("seed").unwrap(), Some(9));
        assert_eq!(s.get::<u64>("session.pulses").unwrap(), Some(10));
    }

    #[test]
    fn bad_values_are_named() {
        let s = Settings::parse("link.p_dc = lots", Path::new("x")).unwrap();
        let err = s.get::<f64>("link.p_dc").unwrap_err().to_string();
        assert!(err.contains("link.p_dc") && err.contains("lots"), "{err}");
    }

    #[test]
    fn hash_is_order_independent_and_command_bound() {
        let a = Settings::parse("seed = 1\nlink.p_dc = 0.1", Path::new("x")).unwrap();
        let b = Settings::parse("link.p_dc = 0.1\nseed = 1", Path::new("x")).unwrap();
        assert_eq!(a.hash("session"), b.hash("session"));
        assert_ne!(a.hash("session"), a.hash("rates"));
        assert_eq!(a.hash("session").len(), 16);
    }

    #[test]
    fn count_parsing() {
        assert_eq!(parse_count("80e6"), Some(80_000_000));
        assert_eq!(parse_count("1.5"), None);
        assert_eq!(parse_count("-1"), None);
    }
}
