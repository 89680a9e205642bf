//! `key = value` run configuration: a preset fills defaults, file lines
//! override the preset, and explicit overrides (command-line flags) win.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::config::{ModelConfig, OptimizerConfig, Preset, Schedule};
use crate::error::{Error, Result};

pub const DEFAULT_BATCH: usize = 16;
pub const PRETRAIN_EPOCHS: usize = 50;
pub const PRETRAIN_LR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub seed: u64,
    /// Caps the number of optimizer updates in either phase.
    pub max_steps: Option<usize>,
    pub pretrain: PretrainSettings,
    pub dataset: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_preset(preset: Preset) -> Self {
        let optimizer = preset.optimizer();
        Self {
            preset,
            model: preset.model(),
            pretrain: PretrainSettings {
                epochs: PRETRAIN_EPOCHS,
                lr: PRETRAIN_LR,
                batch_size: DEFAULT_BATCH,
                schedule: optimizer.schedule,
            },
            optimizer,
            batch_size: DEFAULT_BATCH,
            seed: 0,
            max_steps: None,
            dataset: None,
        }
    }

    /// Parse `key = value` lines (`#` starts a comment), then apply
    /// `overrides` in order. A `preset` key, wherever it appears, is applied
    /// before any other key.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let preset = overrides
            .iter()
            .chain(&pairs)
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.parse())
            .transpose()?
            .unwrap_or(Preset::MovingMnist);
        let mut cfg = Self::from_preset(preset);
        for (k, v) in pairs.iter().chain(overrides) {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.pretrain.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.pretrain.lr > 0.0) {
            return Err(Error::Config("pretrain_lr must be positive".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
            }
        }
        let m = &mut self.model;
        match key {
            "preset" => {
                let p: Preset = value.parse()?;
                if p != self.preset {
                    let keep = (self.seed, self.dataset.clone(), self.max_steps);
                    *self = Self::from_preset(p);
                    (self.seed, self.dataset, self.max_steps) = keep;
                }
            }
            "height" => m.height = num(key, value)?,
            "width" => m.width = num(key, value)?,
            "channels" => m.channels = num(key, value)?,
            "t_in" => m.t_in = num(key, value)?,
            "t_out" => m.t_out = num(key, value)?,
            "enc_channels" => m.enc_channels = num(key, value)?,
            "hid_channels" => m.hid_channels = num(key, value)?,
            "enc_depth" => m.enc_depth = num(key, value)?,
            "trans_depth" => m.trans_depth = num(key, value)?,
            "heads" => m.heads = num(key, value)?,
            "r0" => m.input_mask_ratio = num(key, value)?,
            "r" => m.attn_mask_ratio = num(key, value)?,
            "epochs" => m.epochs = num(key, value)?,
            "use_pla" => m.use_pla = flag(key, value)?,
            "use_sm" => m.use_sm = flag(key, value)?,
            "block" => m.block = value.parse()?,
            "lr" => self.optimizer.lr = num(key, value)?,
            "schedule" => self.optimizer.schedule = value.parse()?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "max_steps" => {
                self.max_steps = match value {
                    "none" | "" => None,
                    v => Some(num(key, v)?),
                }
            }
            "pretrain_epochs" => self.pretrain.epochs = num(key, value)?,
            "pretrain_lr" => self.pretrain.lr = num(key, value)?,
            "pretrain_batch_size" => self.pretrain.batch_size = num(key, value)?,
            "pretrain_schedule" => self.pretrain.schedule = value.parse()?,
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical text form; [`RunConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k} = {v}").expect("string write");
        };
        kv("preset", &self.preset);
        kv("height", &m.height);
        kv("width", &m.width);
        kv("channels", &m.channels);
        kv("t_in", &m.t_in);
        kv("t_out", &m.t_out);
        kv("enc_channels", &m.enc_channels);
        kv("hid_channels", &m.hid_channels);
        kv("enc_depth", &m.enc_depth);
        kv("trans_depth", &m.trans_depth);
        kv("heads", &m.heads);
        kv("r0", &m.input_mask_ratio);
        kv("r", &m.attn_mask_ratio);
        kv("epochs", &m.epochs);
        kv("use_pla", &m.use_pla);
        kv("use_sm", &m.use_sm);
        kv("block", &m.block);
        kv("lr", &self.optimizer.lr);
        kv("schedule", &self.optimizer.schedule);
        kv("batch_size", &self.batch_size);
        kv("seed", &self.seed);
        kv(
            "max_steps",
            &self.max_steps.map_or_else(|| "none".to_string(), |v| v.to_string()),
        );
        kv("pretrain_epochs", &self.pretrain.epochs);
        kv("pretrain_lr", &self.pretrain.lr);
        kv("pretrain_batch_size", &self.pretrain.batch_size);
        kv("pretrain_schedule", &self.pretrain.schedule);
        if let Some(d) = &self.dataset {
            kv("dataset", &d.display());
        }
        s
    }
}
