//! Flat `key=value` runtime configuration.
//!
//! One dotted-key namespace serves three surfaces: config files, `--set`
//! command-line overrides, and the `config.txt` snapshot a training run
//! writes (which therefore parses back bit-for-bit). [`key_table`] is the
//! single source of truth for keys, defaults, and help strings; the CLI
//! renders its option help from it and a test keeps it in sync with the
//! `Default` impls.

use std::path::Path;

use thiserror::Error;

use crate::synth::SyntheticConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: {msg}")]
    ParseError { source_name: String, line: usize, msg: String },
    #[error("unknown config key '{key}'")]
    UnknownKey { key: String },
    #[error("bad value for {key}: {msg}")]
    BadValue { key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every recognized key with its default (as a parseable string; empty
/// means "inherit") and a one-line description.
pub fn key_table() -> &'static [(&'static str, &'static str, &'static str)] {
    &[
        ("train.d", "768", "embedding width shared by both channels"),
        ("train.d_h", "", "hidden layer width; empty inherits train.d"),
        ("train.epochs", "600", "training epochs (per phase when two-stage)"),
        ("train.lr", "0.001", "Adam learning rate"),
        ("train.alpha", "0.5", "weight of the contrastive fusion term"),
        ("train.tau", "0.5", "contrastive temperature"),
        ("train.ratios", "0.7,0.1,0.2", "train,val,test fractions; must sum to 1"),
        ("train.folds", "5", "cross-validation folds"),
        ("train.seed", "42", "master seed for splits, init, and shuffles"),
        ("train.eps", "1e-12", "degree guard inside the propagation operator"),
        (
            "train.cre_two_stage",
            "false",
            "credibility ablation: fit autoencoder first, then classifier only",
        ),
        ("embed.kind", "hashed_ngram", "text channel: hashed_ngram or precomputed"),
        ("embed.d", "768", "text embedding dimension (= train.d)"),
        ("embed.ngram_min", "1", "smallest token n-gram"),
        ("embed.ngram_max", "2", "largest token n-gram"),
        ("embed.hash_seed", "0", "seed of the hashing embedder"),
        ("embed.lowercase", "true", "lowercase text before tokenizing"),
        ("synth.m", "2000", "synthetic users"),
        ("synth.t", "400", "synthetic news items"),
        ("synth.fraction_fake", "0.5", "fraction of fake items and of uncredible users"),
        ("synth.attr_dim", "8", "user attribute columns"),
        ("synth.credible_mean", "0.15", "raw attribute mean of the credible pool"),
        ("synth.uncredible_mean", "-0.15", "raw attribute mean of the uncredible pool"),
        ("synth.cov_scale", "0.1", "attribute standard deviation within each pool"),
        ("synth.vocab_overlap", "0.3", "fraction of the class vocabularies shared"),
        ("synth.vocab_size", "100", "words per class vocabulary"),
        ("synth.mean_users_per_edge", "45", "Poisson mean of edge sizes"),
        ("synth.p_align", "0.85", "probability an edge recruits from its aligned pool"),
        ("synth.text_len_min", "15", "minimum words per news text"),
        ("synth.text_len_max", "30", "maximum words per news text"),
        ("synth.mean_interarrival_seconds", "7200", "mean seconds between participants"),
        ("synth.coupling", "3", "strength of the per-item participant/word theme tie"),
        ("synth.seed", "42", "synthetic generator seed"),
    ]
}

/// All runtime knobs in one struct, with file/`--set` override plumbing.
#[derive(Clone, Debug, Default)]
pub struct AppConfig {
    pub train: TrainConfig,
    pub synth: SyntheticConfig,
}

impl AppConfig {
    /// Builds a config from defaults, an optional file, and `--set`
    /// overrides, applied in that order, then validates the result.
    pub fn load(file: Option<&Path>, sets: &[String]) -> Result<AppConfig, ConfigError> {
        let mut config = AppConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
            config.apply_text(&text, &path.display().to_string())?;
        }
        for spec in sets {
            config.apply_set(spec)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies a whole `key=value` document (`#` comments allowed).
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::ParseError {
                source_name: source_name.to_owned(),
                line: lineno + 1,
                msg: "expected key=value".into(),
            })?;
            self.apply(key.trim(), value.trim()).map_err(|e| ConfigError::ParseError {
                source_name: source_name.to_owned(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Applies one `key=value` override as passed to `--set`.
    pub fn apply_set(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (key, value) = spec.split_once('=').ok_or_else(|| ConfigError::BadValue {
            key: spec.to_owned(),
            msg: "expected key=value".into(),
        })?;
        self.apply(key.trim(), value.trim())
    }

    /// Sets a single key. `train.d` also moves the embedder dimension so
    /// the two stay coupled unless `embed.d` is overridden afterwards.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse::<T>().map_err(|e| ConfigError::BadValue {
                key: key.to_owned(),
                msg: format!("'{value}': {e}"),
            })
        }
        match key {
            "train.d" => {
                self.train.d = parse(key, value)?;
                self.train.embedder.dimension = self.train.d;
            }
            "train.d_h" => {
                self.train.d_h = if value.is_empty() { None } else { Some(parse(key, value)?) };
            }
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.lr" => self.train.lr = parse(key, value)?,
            "train.alpha" => self.train.alpha = parse(key, value)?,
            "train.tau" => self.train.tau = parse(key, value)?,
            "train.ratios" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 3 {
                    return Err(ConfigError::BadValue {
                        key: key.to_owned(),
                        msg: format!("'{value}': expected three comma-separated fractions"),
                    });
                }
                for (i, p) in parts.iter().enumerate() {
                    self.train.ratios[i] = parse(key, p.trim())?;
                }
            }
            "train.folds" => self.train.folds = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.eps" => self.train.eps = parse(key, value)?,
            "train.cre_two_stage" => self.train.cre_two_stage = parse(key, value)?,
            "embed.kind" => self.train.embedder.kind = parse(key, value)?,
            "embed.d" => self.train.embedder.dimension = parse(key, value)?,
            "embed.ngram_min" => self.train.embedder.ngram_min = parse(key, value)?,
            "embed.ngram_max" => self.train.embedder.ngram_max = parse(key, value)?,
            "embed.hash_seed" => self.train.embedder.hash_seed = parse(key, value)?,
            "embed.lowercase" => self.train.embedder.lowercase = parse(key, value)?,
            "synth.m" => self.synth.m = parse(key, value)?,
            "synth.t" => self.synth.t = parse(key, value)?,
            "synth.fraction_fake" => self.synth.fraction_fake = parse(key, value)?,
            "synth.attr_dim" => self.synth.attr_dim = parse(key, value)?,
            "synth.credible_mean" => self.synth.credible_mean = parse(key, value)?,
            "synth.uncredible_mean" => self.synth.uncredible_mean = parse(key, value)?,
            "synth.cov_scale" => self.synth.cov_scale = parse(key, value)?,
            "synth.vocab_overlap" => self.synth.vocab_overlap = parse(key, value)?,
            "synth.vocab_size" => self.synth.vocab_size = parse(key, value)?,
            "synth.mean_users_per_edge" => self.synth.mean_users_per_edge = parse(key, value)?,
            "synth.p_align" => self.synth.p_align = parse(key, value)?,
            "synth.text_len_min" => self.synth.text_len.0 = parse(key, value)?,
            "synth.text_len_max" => self.synth.text_len.1 = parse(key, value)?,
            "synth.coupling" => self.synth.coupling = parse(key, value)?,
            "synth.mean_interarrival_seconds" => {
                self.synth.mean_interarrival_seconds = parse(key, value)?
            }
            "synth.seed" => self.synth.seed = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey { key: other.to_owned() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.synth.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
