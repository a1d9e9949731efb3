//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::correlation::LookupStyle;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ValueProjection};
use crate::par::Execution;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Dataset directory used for training (its train split).
    pub train_data: Option<PathBuf>,
    /// Dataset directory evaluated after training (its held-out split).
    pub eval_data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Write `ckpt_{step}.tmac` every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Print a log line every this many steps.
    pub log_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig {
                steps: 200_000,
                ..TrainConfig::default()
            },
            train_data: None,
            eval_data: None,
            out_dir: None,
            checkpoint_every: 0,
            log_every: 1,
        }
    }
}

/// Keys understood by [`ModelConfig`], in echo order.
pub const MODEL_KEYS: &[&str] = &[
    "segments",
    "bins",
    "feature_dim",
    "downsample",
    "iterations",
    "mpa_layers",
    "radius",
    "levels",
    "gamma",
    "value_projection",
    "lookup_style",
    "context_dim",
    "hidden_dim",
    "motion_dim",
    "encoder_width",
];

const RUN_KEYS: &[&str] = &[
    "steps",
    "batch_size",
    "peak_lr",
    "weight_decay",
    "clip_norm",
    "seed",
    "execution",
    "train_data",
    "eval_data",
    "out_dir",
    "checkpoint_every",
    "log_every",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_value_projection(value: &str) -> Result<ValueProjection> {
    match value {
        "identity" => Ok(ValueProjection::Identity),
        "learned" => Ok(ValueProjection::Learned),
        _ => Err(Error::Config(format!("unknown value_projection {value:?}"))),
    }
}

fn parse_execution(value: &str) -> Result<Execution> {
    match value {
        "sequential" => Ok(Execution::Sequential),
        "parallel" => Ok(Execution::Parallel),
        _ => Err(Error::Config(format!("unknown execution {value:?}"))),
    }
}

fn execution_name(e: Execution) -> &'static str {
    match e {
        Execution::Sequential => "sequential",
        Execution::Parallel => "parallel",
    }
}

/// Sets one model key; returns `false` if the key is not a model key.
pub fn set_model_key(cfg: &mut ModelConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "segments" => cfg.segments = parse(key, value)?,
        "bins" => cfg.bins = parse(key, value)?,
        "feature_dim" => cfg.feature_dim = parse(key, value)?,
        "downsample" => cfg.downsample = parse(key, value)?,
        "iterations" => cfg.iterations = parse(key, value)?,
        "mpa_layers" => cfg.mpa_layers = parse(key, value)?,
        "radius" => cfg.radius = parse(key, value)?,
        "levels" => cfg.levels = parse(key, value)?,
        "gamma" => cfg.gamma = parse(key, value)?,
        "value_projection" => cfg.value_projection = parse_value_projection(value)?,
        "lookup_style" => cfg.lookup_style = LookupStyle::parse(value)?,
        "context_dim" => cfg.context_dim = parse(key, value)?,
        "hidden_dim" => cfg.hidden_dim = parse(key, value)?,
        "motion_dim" => cfg.motion_dim = parse(key, value)?,
        "encoder_width" => cfg.encoder_width = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn model_config_text(cfg: &ModelConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("segments", cfg.segments.to_string());
    kv("bins", cfg.bins.to_string());
    kv("feature_dim", cfg.feature_dim.to_string());
    kv("downsample", cfg.downsample.to_string());
    kv("iterations", cfg.iterations.to_string());
    kv("mpa_layers", cfg.mpa_layers.to_string());
    kv("radius", cfg.radius.to_string());
    kv("levels", cfg.levels.to_string());
    kv("gamma", format!("{:?}", cfg.gamma));
    kv("value_projection", cfg.value_projection.name().to_string());
    kv("lookup_style", cfg.lookup_style.name().to_string());
    kv("context_dim", cfg.context_dim.to_string());
    kv("hidden_dim", cfg.hidden_dim.to_string());
    kv("motion_dim", cfg.motion_dim.to_string());
    kv("encoder_width", cfg.encoder_width.to_string());
    s
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value", n + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Model configuration from a text block; missing keys keep their defaults.
pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for (k, v) in parse_lines(text)? {
        if !set_model_key(&mut cfg, &k, &v)? {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if set_model_key(&mut self.model, key, value)? {
            return Ok(());
        }
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "steps" => self.train.steps = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "peak_lr" => self.train.peak_lr = parse(key, value)?,
            "weight_decay" => self.train.weight_decay = parse(key, value)?,
            "clip_norm" => self.train.clip_norm = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "execution" => self.train.execution = parse_execution(value)?,
            "train_data" => self.train_data = path(value),
            "eval_data" => self.eval_data = path(value),
            "out_dir" => self.out_dir = path(value),
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (k, v) in parse_lines(text)? {
            if !seen.insert(k.clone()) {
                return Err(Error::Config(format!("duplicate key {k:?}")));
            }
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.train.peak_lr > 0.0) {
            return Err(Error::Config("peak_lr must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = model_config_text(&self.model);
        let t = &self.train;
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let _ = writeln!(s, "steps = {}", t.steps);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "peak_lr = {:?}", t.peak_lr);
        let _ = writeln!(s, "weight_decay = {:?}", t.weight_decay);
        let _ = writeln!(s, "clip_norm = {:?}", t.clip_norm);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "execution = {}", execution_name(t.execution));
        let _ = writeln!(s, "train_data = {}", p(&self.train_data));
        let _ = writeln!(s, "eval_data = {}", p(&self.eval_data));
        let _ = writeln!(s, "out_dir = {}", p(&self.out_dir));
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "log_every = {}", self.log_every);
        s
    }
}

/// Every key a run configuration accepts.
pub fn all_keys() -> impl Iterator<Item = &'static str> {
    MODEL_KEYS.iter().chain(RUN_KEYS).copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_reference_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.train.batch_size, 6);
        assert_eq!(c.train.peak_lr, 2e-4);
        assert_eq!(c.train.steps, 200_000);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("segments", "3").unwrap();
        c.set("lookup_style", "same").unwrap();
        c.set("value_projection", "learned").unwrap();
        c.set("gamma", "0.75").unwrap();
        c.set("out_dir", "/tmp/x").unwrap();
        c.set("execution", "sequential").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        let keys: Vec<_> = parse_lines(&c.to_text()).unwrap().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, all_keys().collect::<Vec<_>>());
    }

    #[test]
    fn unknown_duplicate_and_malformed_rejected() {
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("steps = 1\nsteps = 2").is_err());
        assert!(RunConfig::parse("steps 1").is_err());
        assert!(RunConfig::parse("steps = many").is_err());
        assert!(RunConfig::parse("lookup_style = circular").is_err());
    }

    #[test]
    fn comments_and_overrides() {
        let mut c = RunConfig::parse("# toy\nsteps = 10  # short\n\n").unwrap();
        assert_eq!(c.train.steps, 10);
        c.apply_override("steps=20").unwrap();
        assert_eq!(c.train.steps, 20);
        assert!(c.apply_override("steps").is_err());
    }
}
