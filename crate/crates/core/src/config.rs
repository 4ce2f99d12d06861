//! Run configuration: built-in defaults, overlaid by a flat `key = value`
//! file, overlaid by command-line flags.
//!
//! ```text
//! # arranger.conf
//! alpha = 0.5
//! gamma = 0.7
//! index = corpus.index.json
//! rd = high
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::selection::{Level, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_DELTA, DEFAULT_GAMMA};
use crate::transition::TrainConfig;

/// Environment variable naming the config file.
pub const CONFIG_ENV: &str = "ARRANGER_CONFIG";
/// Config file read from the working directory when present.
pub const DEFAULT_CONFIG_FILE: &str = "arranger.conf";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    Syntax { path: String, line: usize, message: String },
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
    pub rd: Level,
    pub vn: Level,
    pub prune: Option<usize>,
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            delta: DEFAULT_DELTA,
            gamma: DEFAULT_GAMMA,
            rd: Level::Any,
            vn: Level::Any,
            prune: None,
            corpus: None,
            index: None,
            weights: None,
            train: TrainConfig::default(),
        }
    }
}

impl Config {
    /// Sets one key. Unknown keys are rejected so typos surface.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
        }
        match key {
            "alpha" => self.alpha = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "rd" => self.rd = value.parse()?,
            "vn" => self.vn = value.parse()?,
            "prune" => self.prune = Some(num(key, value)?).filter(|&k: &usize| k > 0),
            "corpus" => self.corpus = Some(value.into()),
            "index" => self.index = Some(value.into()),
            "weights" => self.weights = Some(value.into()),
            "k" => self.train.k = num(key, value)?,
            "seed" => self.train.seed = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "lr_start" => self.train.lr_start = num(key, value)?,
            "lr_end" => self.train.lr_end = num(key, value)?,
            "d_out" => self.train.d_out = num(key, value)?,
            "validation_fraction" => self.train.validation_fraction = num(key, value)?,
            "schedule" => {
                let keep = (self.train.k, self.train.seed, self.train.d_out);
                self.train = match value {
                    "desk" => TrainConfig::desk(),
                    "full" => TrainConfig::full(),
                    other => return Err(format!("schedule: expected desk or full, got {other:?}")),
                };
                (self.train.k, self.train.seed, self.train.d_out) = keep;
            }
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax { path: origin.to_string(), line: i + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected `key = value`".into()))?;
            self.set(key.trim(), value.trim()).map_err(syntax)?;
        }
        Ok(())
    }

    /// Defaults overlaid by the config file: `explicit` if given, else the
    /// file named by `ARRANGER_CONFIG`, else `arranger.conf` if it exists.
    pub fn load(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = Config::default();
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Some(PathBuf::from(p)),
                _ => Some(PathBuf::from(DEFAULT_CONFIG_FILE)).filter(|p| p.is_file()),
            },
        };
        if let Some(path) = path {
            let origin = path.display().to_string();
            let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Io { path: origin.clone(), message: e.to_string() })?;
            config.apply_text(&text, &origin)?;
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let finite = [self.alpha, self.beta, self.delta, self.gamma].iter().all(|v| v.is_finite());
        if !finite {
            return bad("alpha, beta, delta and gamma must be finite".into());
        }
        if self.alpha + self.beta <= 0.0 {
            return bad(format!("alpha + beta must be positive (alpha={}, beta={})", self.alpha, self.beta));
        }
        if self.delta + self.gamma <= 0.0 {
            return bad(format!("delta + gamma must be positive (delta={}, gamma={})", self.delta, self.gamma));
        }
        if self.train.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.train.k));
        }
        Ok(())
    }
}
