//! Run configuration: a flat `key = value` UTF-8 text format.
//!
//! Lines are `key = value` pairs; `#` starts a comment (whole-line or
//! trailing) and blank lines are ignored. Every hyperparameter has a key,
//! defaulting to the reference training recipe, so an empty file is a valid
//! full-size run. Unknown or duplicate keys are errors that name the key.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use csfm::model::{BlockVariant, CsfmConfig};
use csfm::train::TrainConfig;
use csfm::{Error, Result};

/// Everything a training or sweep run needs, as read from a config file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // Architecture.
    pub scale: usize,
    pub channels: usize,
    pub modules: usize,
    pub blocks: usize,
    pub reduction: usize,
    pub expansion: usize,
    pub variant: BlockVariant,
    // Optimization.
    pub patch_size: usize,
    pub batch_size: usize,
    pub total_iters: u64,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub augment: bool,
    pub save_every: u64,
    // Plumbing.
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = CsfmConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            scale: model.scale,
            channels: model.channels,
            modules: model.modules,
            blocks: model.blocks,
            reduction: model.reduction,
            expansion: model.expansion,
            variant: model.variant,
            patch_size: train.patch_size,
            batch_size: train.batch_size,
            total_iters: train.total_iters,
            base_lr: train.base_lr,
            beta1: train.beta1,
            beta2: train.beta2,
            eps: train.eps,
            seed: train.seed,
            augment: train.augment,
            save_every: train.save_every,
            dataset_dir: PathBuf::from("data/train"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key}",
                    lineno + 1
                )));
            }
            seen.push(key.to_string());
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!(
                    "key {key}: cannot parse {value:?} as {}",
                    std::any::type_name::<T>()
                ))
            })
        }
        match key {
            "scale" => self.scale = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "modules" => self.modules = num(key, value)?,
            "blocks" => self.blocks = num(key, value)?,
            "reduction" => self.reduction = num(key, value)?,
            "expansion" => self.expansion = num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "patch_size" => self.patch_size = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "total_iters" => self.total_iters = num(key, value)?,
            "base_lr" => self.base_lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "augment" => self.augment = num(key, value)?,
            "save_every" => self.save_every = num(key, value)?,
            "dataset_dir" => self.dataset_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => {
                return Err(Error::Config(format!("unknown config key {other}")));
            }
        }
        Ok(())
    }

    /// Writes every key in a fixed order; `parse` of the result reproduces
    /// this config exactly.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scale = {}", self.scale);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "modules = {}", self.modules);
        let _ = writeln!(s, "blocks = {}", self.blocks);
        let _ = writeln!(s, "reduction = {}", self.reduction);
        let _ = writeln!(s, "expansion = {}", self.expansion);
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "patch_size = {}", self.patch_size);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "total_iters = {}", self.total_iters);
        let _ = writeln!(s, "base_lr = {}", self.base_lr);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "eps = {}", self.eps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "augment = {}", self.augment);
        let _ = writeln!(s, "save_every = {}", self.save_every);
        let _ = writeln!(s, "dataset_dir = {}", self.dataset_dir.display());
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        s
    }

    /// The architecture this config describes.
    pub fn model(&self) -> CsfmConfig {
        CsfmConfig {
            scale: self.scale,
            channels: self.channels,
            modules: self.modules,
            blocks: self.blocks,
            reduction: self.reduction,
            expansion: self.expansion,
            variant: self.variant,
        }
    }

    /// The optimization recipe this config describes.
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            patch_size: self.patch_size,
            batch_size: self.batch_size,
            total_iters: self.total_iters,
            base_lr: self.base_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            seed: self.seed,
            augment: self.augment,
            save_every: self.save_every,
        }
    }

    fn validate(&self) -> Result<()> {
        self.model().validate()?;
        if self.patch_size == 0 {
            return Err(Error::Config("patch_size must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!(
                "base_lr must be a positive number, got {}",
                self.base_lr
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "{name} must be in [0, 1), got {v}"
                )));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!(
                "eps must be a positive number, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}
