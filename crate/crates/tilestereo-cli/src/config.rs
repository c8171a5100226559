//! Plain-text `key=value` run configuration with section prefixes
//! (`model.`, `train.`, `data.`, `aug.`). Command-line `--override k=v`
//! entries are applied after the file, last writer wins.

use std::path::{Path, PathBuf};

use tilestereo::data::AugmentOptions;
use tilestereo::error::{Error, Result};
use tilestereo::loss::LossConfig;
use tilestereo::model::ModelConfig;

/// Everything a run needs. Defaults describe the desk-scale synthetic setup;
/// see `RunConfig::apply` for the full key list.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Architecture preset: base, large, xlarge, middlebury, kitti, overfit,
    /// or gradcheck.
    pub preset: String,
    pub max_disparity: Option<usize>,
    pub clamp_slants: bool,

    /// `(until_step, lr)` pairs with strictly increasing boundaries; the
    /// learning rate of a step is the first pair whose boundary exceeds it.
    pub schedule: Vec<(u64, f64)>,
    pub batch: usize,
    pub seed: u64,
    /// Loss preset: sceneflow or general.
    pub loss: String,
    /// Random training crop `(h, w)`; 0 disables cropping.
    pub crop: (usize, usize),
    pub checkpoint_every: u64,
    pub val_every: u64,
    pub val_count: usize,
    pub out_dir: PathBuf,

    /// `synthetic` or `dir`.
    pub source: String,
    pub data_dir: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub rects: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub slope_max: f64,
    pub density: f64,
    /// Number of fixed samples cycled during training.
    pub pool: usize,
    pub base_seed: u64,

    pub aug: AugmentOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: "base".into(),
            max_disparity: None,
            clamp_slants: false,
            schedule: vec![(2000, 4e-4), (2500, 1e-4)],
            batch: 1,
            seed: 0,
            loss: "sceneflow".into(),
            crop: (0, 0),
            checkpoint_every: 500,
            val_every: 250,
            val_count: 4,
            out_dir: PathBuf::from("run"),
            source: "synthetic".into(),
            data_dir: None,
            width: 128,
            height: 64,
            channels: 3,
            rects: 3,
            d_min: 0.0,
            d_max: 24.0,
            slope_max: 0.3,
            density: 0.9,
            pool: 8,
            base_seed: 100,
            aug: AugmentOptions::none(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("cannot parse {key}={v}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse {key}={v} as a boolean"))),
    }
}

/// Parses `"2000:4e-4,2500:1e-4"` into schedule pairs.
fn parse_schedule(v: &str) -> Result<Vec<(u64, f64)>> {
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|pair| {
            let (step, lr) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("schedule entry {pair:?} wants step:lr")))?;
            Ok((parse("schedule step", step)?, parse("schedule lr", lr)?))
        })
        .collect()
}

/// Parses `"64x128"` into `(h, w)`.
fn parse_extents(v: &str) -> Result<(usize, usize)> {
    let (h, w) = v.split_once('x').ok_or_else(|| Error::Config(format!("extents {v:?} want HxW")))?;
    Ok((parse("crop height", h)?, parse("crop width", w)?))
}

impl RunConfig {
    /// Applies one `key=value` assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.preset" => self.preset = value.into(),
            "model.max_disparity" => self.max_disparity = Some(parse(key, value)?),
            "model.clamp_slants" => self.clamp_slants = parse_bool(key, value)?,
            "train.schedule" => self.schedule = parse_schedule(value)?,
            "train.batch" => self.batch = parse(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            "train.loss" => self.loss = value.into(),
            "train.crop" => self.crop = parse_extents(value)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "train.val_every" => self.val_every = parse(key, value)?,
            "train.val_count" => self.val_count = parse(key, value)?,
            "train.out_dir" => self.out_dir = PathBuf::from(value),
            "data.source" => self.source = value.into(),
            "data.dir" => self.data_dir = Some(PathBuf::from(value)),
            "data.width" => self.width = parse(key, value)?,
            "data.height" => self.height = parse(key, value)?,
            "data.channels" => self.channels = parse(key, value)?,
            "data.rects" => self.rects = parse(key, value)?,
            "data.d_min" => self.d_min = parse(key, value)?,
            "data.d_max" => self.d_max = parse(key, value)?,
            "data.slope_max" => self.slope_max = parse(key, value)?,
            "data.density" => self.density = parse(key, value)?,
            "data.pool" => self.pool = parse(key, value)?,
            "data.base_seed" => self.base_seed = parse(key, value)?,
            "aug.photometric" => self.aug.photometric = parse_bool(key, value)?,
            "aug.patch" => self.aug.patch_replace = parse_bool(key, value)?,
            "aug.yjitter" => self.aug.y_jitter = parse_bool(key, value)?,
            "aug.noise" => self.aug.noise = parse_bool(key, value)?,
            "aug.supervise_replaced" => self.aug.supervise_replaced = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Loads a config file: one `key=value` per line, `#` comments, blank
    /// lines ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let text = std::fs::read_to_string(path)?;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key=value", path.display(), no + 1)))?;
            cfg.apply(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Applies `--override k=v` pairs on top.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} wants key=value")))?;
            self.apply(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 0u64;
        for &(step, lr) in &self.schedule {
            if step <= prev {
                return Err(Error::Config("schedule boundaries must be strictly increasing".into()));
            }
            if lr <= 0.0 {
                return Err(Error::Config("learning rates must be positive".into()));
            }
            prev = step;
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.crop != (0, 0) && (self.crop.0 % 64 != 0 || self.crop.1 % 64 != 0) {
            return Err(Error::Config("crop extents must be divisible by 64".into()));
        }
        if self.source == "dir" && self.data_dir.is_none() {
            return Err(Error::Config("data.source=dir needs data.dir".into()));
        }
        if !matches!(self.source.as_str(), "synthetic" | "dir") {
            return Err(Error::Config(format!("unknown data source {:?}", self.source)));
        }
        self.loss_config()?;
        self.model_config()?;
        Ok(())
    }

    /// Resolves the architecture preset plus model overrides.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = match self.preset.as_str() {
            "base" => ModelConfig::base(),
            "large" => ModelConfig::large(),
            "xlarge" => ModelConfig::xlarge(),
            "middlebury" => ModelConfig::middlebury(),
            "kitti" => ModelConfig::kitti(),
            "overfit" => ModelConfig::overfit_reduced(),
            "gradcheck" => ModelConfig::gradcheck_small(),
            other => return Err(Error::Config(format!("unknown model preset {other:?}"))),
        };
        if let Some(d) = self.max_disparity {
            m.max_disparity = d;
        }
        m.clamp_slants = self.clamp_slants;
        Ok(m)
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        match self.loss.as_str() {
            "sceneflow" => Ok(LossConfig::sceneflow()),
            "general" => Ok(LossConfig::general()),
            other => Err(Error::Config(format!("unknown loss preset {other:?}"))),
        }
    }

    /// Total number of optimization steps (the last schedule boundary).
    pub fn total_steps(&self) -> u64 {
        self.schedule.last().map_or(0, |&(s, _)| s)
    }

    /// Learning rate in effect at `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        for &(until, lr) in &self.schedule {
            if step < until {
                return lr;
            }
        }
        self.schedule.last().map_or(0.0, |&(_, lr)| lr)
    }
}
