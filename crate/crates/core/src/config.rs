//! Tool-wide configuration shared by the command-line front end.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aml::{AmlError, Grammar, LevelTable, DEFAULT_SOURCES};
use crate::dsp::{MfccConfig, ReverbConfig, DEFAULT_SAMPLE_RATE};
use crate::model::{ModelConfig, ModelError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Aml(#[from] AmlError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub sources: Vec<String>,
    /// JSON level table; relative paths resolve against the config file.
    pub level_table: Option<PathBuf>,
    /// JSON grammar replacing the built-in one.
    pub grammar: Option<PathBuf>,
    pub model: ModelConfig,
    pub seed: u64,
    /// Augmentation segment length for triple synthesis.
    pub segment_s: f64,
    pub mfcc: MfccConfig,
    pub reverb: ReverbConfig,
}

impl Default for ToolConfig {
    fn default() -> Self {
        ToolConfig {
            sample_rate: DEFAULT_SAMPLE_RATE,
            fft_size: 2048,
            hop: 1024,
            sources: DEFAULT_SOURCES.iter().map(|s| s.to_string()).collect(),
            level_table: None,
            grammar: None,
            model: ModelConfig::default(),
            seed: 0,
            segment_s: 6.0,
            mfcc: MfccConfig::default(),
            reverb: ReverbConfig::default(),
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })
}

impl ToolConfig {
    /// Reads and validates a JSON config; relative paths inside it are made
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let mut cfg: ToolConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.level_table, &mut cfg.grammar].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.fft_size < 16 || self.fft_size % 2 != 0 {
            return bad(format!("fft_size {} must be even and ≥ 16", self.fft_size));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return bad(format!("hop {} must be in 1..={}", self.hop, self.fft_size));
        }
        if self.sources.is_empty() {
            return bad("no sources".into());
        }
        if !(self.segment_s > 0.0 && self.segment_s.is_finite()) {
            return bad(format!("segment_s {} must be positive", self.segment_s));
        }
        let m = &self.mfcc;
        if m.n_mels == 0 || m.n_mfcc == 0 || m.n_mfcc > m.n_mels || m.hop == 0 || m.fft_size < 2 {
            return bad(format!("inconsistent mfcc settings {m:?}"));
        }
        if self.reverb.comb_delays_ms.is_empty() {
            return bad("reverb needs at least one comb filter".into());
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn level_table(&self) -> Result<LevelTable, ConfigError> {
        match &self.level_table {
            Some(p) => Ok(LevelTable::from_json(&read(p)?)?),
            None => Ok(LevelTable::default()),
        }
    }

    pub fn grammar(&self) -> Result<Grammar, ConfigError> {
        match &self.grammar {
            Some(p) => Ok(Grammar::from_json(&read(p)?)?),
            None => Ok(Grammar::full(&self.sources)),
        }
    }

    /// SHA-256 over the canonical JSON of the settings and the contents of
    /// any referenced files, as lowercase hex.
    pub fn hash(&self) -> Result<String, ConfigError> {
        let mut h = Sha256::new();
        let mut canonical = self.clone();
        canonical.level_table = None;
        canonical.grammar = None;
        h.update(serde_json::to_vec(&canonical).expect("config serialises"));
        for (tag, p) in [("levels", &self.level_table), ("grammar", &self.grammar)] {
            if let Some(p) = p {
                h.update(tag.as_bytes());
                h.update(read(p)?.as_bytes());
            }
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_hash_is_stable() {
        let c = ToolConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hash().unwrap(), c.clone().hash().unwrap());
        assert_eq!(c.hash().unwrap().len(), 64);
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(c.hash().unwrap(), d.hash().unwrap());
    }

    #[test]
    fn load_resolves_relative_paths_and_rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let lt = serde_json::to_string(&LevelTable::default()).unwrap();
        std::fs::write(dir.path().join("levels.json"), lt).unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, r#"{"sample_rate": 8000, "level_table": "levels.json"}"#).unwrap();
        let c = ToolConfig::load(&p).unwrap();
        assert_eq!(c.sample_rate, 8000);
        assert_eq!(c.level_table().unwrap(), LevelTable::default());

        std::fs::write(&p, r#"{"hop": 0}"#).unwrap();
        assert!(matches!(ToolConfig::load(&p), Err(ConfigError::Invalid(_))));
        std::fs::write(&p, r#"{"bogus": 1}"#).unwrap();
        assert!(matches!(ToolConfig::load(&p), Err(ConfigError::Parse { .. })));
    }
}
