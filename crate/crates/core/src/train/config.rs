use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::Upsampler;
use crate::{Error, Result};

/// Where the foggy image's prior map enters the per-pixel adversarial term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorWeighting {
    /// Multiply the generated image before scoring it.
    Input,
    /// Multiply the discriminator's score map.
    Score,
    /// No weighting.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
    Constant,
}

/// Architecture of the clean-side discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscKind {
    Pixel,
    Patch,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($name:literal => $val:expr),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($val),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $val { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(PriorWeighting, "prior weighting", "input" => PriorWeighting::Input, "score" => PriorWeighting::Score, "none" => PriorWeighting::None);
keyword_enum!(Schedule, "schedule", "cosine" => Schedule::Cosine, "constant" => Schedule::Constant);
keyword_enum!(DiscKind, "discriminator kind", "pixel" => DiscKind::Pixel, "patch" => DiscKind::Patch);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Discriminator learning rate; defaults to `lr`.
    pub lr_disc: Option<f64>,
    pub batch_size: usize,
    pub epochs: u64,
    pub schedule: Schedule,
    pub resize_to: usize,
    pub crop_to: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub replay_buffer: usize,
    pub prior_weighting: PriorWeighting,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub adam_betas: (f64, f64),
    pub base_width: usize,
    pub res_blocks: usize,
    pub upsampler: Upsampler,
    pub long_range_residual: bool,
    pub coarse_to_fine: bool,
    pub per_stage_weights: bool,
    pub use_pgcyc: bool,
    pub disc_y: DiscKind,
    pub vgg_weights: Option<PathBuf>,
    pub vgg_width_div: usize,
    /// Stop early after this many iterations in total.
    pub max_iterations: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            lr_disc: None,
            batch_size: 1,
            epochs: 200,
            schedule: Schedule::Cosine,
            resize_to: 512,
            crop_to: 256,
            lambda1: 1.0,
            lambda2: 2.0,
            seed: 0,
            replay_buffer: 50,
            prior_weighting: PriorWeighting::Score,
            checkpoint_every: 5000,
            adam_betas: (0.5, 0.999),
            base_width: 64,
            res_blocks: 9,
            upsampler: Upsampler::Inception,
            long_range_residual: true,
            coarse_to_fine: true,
            per_stage_weights: false,
            use_pgcyc: true,
            disc_y: DiscKind::Pixel,
            vgg_weights: None,
            vgg_width_div: 1,
            max_iterations: None,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_optional<V: FromStr>(key: &str, value: &str) -> Result<Option<V>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl TrainConfig {
    /// Every key accepted by [`set`](Self::set).
    pub const KEYS: &'static [&'static str] = &[
        "lr",
        "lr_disc",
        "batch_size",
        "epochs",
        "schedule",
        "resize_to",
        "crop_to",
        "lambda1",
        "lambda2",
        "seed",
        "replay_buffer",
        "prior_weighting",
        "checkpoint_every",
        "adam_beta1",
        "adam_beta2",
        "base_width",
        "res_blocks",
        "upsampler",
        "long_range_residual",
        "coarse_to_fine",
        "per_stage_weights",
        "use_pgcyc",
        "disc_y",
        "vgg_weights",
        "vgg_width_div",
        "max_iterations",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "lr" => self.lr = parse(key, v)?,
            "lr_disc" => self.lr_disc = parse_optional(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "schedule" => self.schedule = v.parse()?,
            "resize_to" => self.resize_to = parse(key, v)?,
            "crop_to" => self.crop_to = parse(key, v)?,
            "lambda1" => self.lambda1 = parse(key, v)?,
            "lambda2" => self.lambda2 = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "replay_buffer" => self.replay_buffer = parse(key, v)?,
            "prior_weighting" => self.prior_weighting = v.parse()?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "adam_beta1" => self.adam_betas.0 = parse(key, v)?,
            "adam_beta2" => self.adam_betas.1 = parse(key, v)?,
            "base_width" => self.base_width = parse(key, v)?,
            "res_blocks" => self.res_blocks = parse(key, v)?,
            "upsampler" => self.upsampler = v.parse()?,
            "long_range_residual" => self.long_range_residual = parse(key, v)?,
            "coarse_to_fine" => self.coarse_to_fine = parse(key, v)?,
            "per_stage_weights" => self.per_stage_weights = parse(key, v)?,
            "use_pgcyc" => self.use_pgcyc = parse(key, v)?,
            "disc_y" => self.disc_y = v.parse()?,
            "vgg_weights" => self.vgg_weights = parse_optional(key, v)?,
            "vgg_width_div" => self.vgg_width_div = parse(key, v)?,
            "max_iterations" => self.max_iterations = parse_optional(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if let Some(l) = self.lr_disc {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("lr_disc must be non-negative, got {l}"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.crop_to == 0 || self.crop_to > self.resize_to {
            return bad(format!(
                "crop_to ({}) must be in 1..=resize_to ({})",
                self.crop_to, self.resize_to
            ));
        }
        let multiple = if self.coarse_to_fine { 16 } else { 4 };
        if !self.crop_to.is_multiple_of(multiple) {
            return bad(format!("crop_to ({}) must be a multiple of {multiple}", self.crop_to));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("adam betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if self.per_stage_weights && !self.coarse_to_fine {
            return bad("per_stage_weights needs coarse_to_fine".into());
        }
        Ok(())
    }

    pub fn disc_lr(&self) -> f64 {
        self.lr_disc.unwrap_or(self.lr)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `lr * (1 + cos(pi * epoch / epochs)) / 2` under the cosine schedule.
pub fn lr_at(config: &TrainConfig, epoch: u64) -> Result<f64> {
    if epoch > config.epochs {
        return Err(Error::invalid(format!("epoch {epoch} is past the last epoch {}", config.epochs)));
    }
    Ok(match config.schedule {
        Schedule::Constant => config.lr,
        Schedule::Cosine => {
            let phase = std::f64::consts::PI * epoch as f64 / config.epochs as f64;
            config.lr * (1.0 + phase.cos()) / 2.0
        }
    })
}
