use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, MelConfig};
use crate::model::ModelConfig;
use crate::optim::AdamConfig;
use crate::text::Scheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: usize,
    pub embedding_dim: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub dropout: f64,
    pub share_encoders: bool,
    pub scheme: Scheme,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub feature_kind: FeatureKind,
    pub loss_weight_tts: f64,
    pub loss_weight_d: f64,
    pub clip_norm: f64,
    pub weight_decay: f64,
    /// Write `checkpoint_<step>.lsck` every this many steps; `0` disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    /// Full-size run: M=256, 4+4 layers, batch 32, 4000 warm-up steps.
    pub fn paper() -> Self {
        Self {
            batch_size: 32,
            max_steps: 280_000,
            embedding_dim: 256,
            n_heads: 2,
            ffn_hidden: 1024,
            n_enc_layers: 4,
            n_dec_layers: 4,
            dropout: 0.1,
            share_encoders: false,
            scheme: Scheme::Ipa,
            base_lr: 256f64.powf(-0.5),
            warmup_steps: 4000,
            seed: 0,
            feature_kind: FeatureKind::Mel,
            loss_weight_tts: 1.0,
            loss_weight_d: 1.0,
            clip_norm: 0.0,
            weight_decay: 0.0,
            checkpoint_every: 10_000,
        }
    }

    /// Laptop-scale run: M=32, F=64, 2+2 layers, 2000 steps.
    pub fn desk() -> Self {
        Self {
            max_steps: 2000,
            embedding_dim: 32,
            ffn_hidden: 64,
            n_enc_layers: 2,
            n_dec_layers: 2,
            base_lr: 0.05,
            warmup_steps: 200,
            checkpoint_every: 500,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("max_steps", self.max_steps),
            ("embedding_dim", self.embedding_dim),
            ("warmup_steps", self.warmup_steps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.embedding_dim % 2 != 0 {
            return Err(Error::OddEmbeddingDim(self.embedding_dim));
        }
        if self.n_heads == 0 || self.embedding_dim % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "embedding_dim {} must be a positive multiple of n_heads {}",
                self.embedding_dim, self.n_heads
            )));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("base_lr {} must be positive", self.base_lr)));
        }
        if self.loss_weight_tts < 0.0 || self.loss_weight_d < 0.0 || self.clip_norm < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("loss weights, clip_norm and weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, phoneme_vocab: usize, style_vocab: usize, feature_dim: usize) -> ModelConfig {
        ModelConfig {
            scheme: self.scheme,
            embedding_dim: self.embedding_dim,
            n_heads: self.n_heads,
            ffn_hidden: self.ffn_hidden,
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            dropout: self.dropout,
            share_encoders: self.share_encoders,
            ..ModelConfig::paper(phoneme_vocab, style_vocab, feature_dim, self.feature_kind)
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            clip_norm: self.clip_norm,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Everything a pipeline invocation can be configured with, settable from
/// `key = value` text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub mel: MelConfig,
    pub train: TrainConfig,
    pub ae_latent_dim: usize,
    pub ae_steps: usize,
    pub ae_lr: f64,
    pub gl_iters: usize,
}

impl Settings {
    pub fn desk() -> Self {
        Self {
            mel: MelConfig::desk(),
            train: TrainConfig::desk(),
            ae_latent_dim: 32,
            ae_steps: 16000,
            ae_lr: 2e-3,
            gl_iters: 60,
        }
    }

    pub fn paper() -> Self {
        Self {
            mel: MelConfig::default(),
            train: TrainConfig::paper(),
            ..Self::desk()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
        }
        let t = &mut self.train;
        let m = &mut self.mel;
        match key {
            "batch_size" => t.batch_size = parse(key, value)?,
            "max_steps" | "steps" => t.max_steps = parse(key, value)?,
            "embedding_dim" => t.embedding_dim = parse(key, value)?,
            "n_heads" => t.n_heads = parse(key, value)?,
            "ffn_hidden" => t.ffn_hidden = parse(key, value)?,
            "n_enc_layers" => t.n_enc_layers = parse(key, value)?,
            "n_dec_layers" => t.n_dec_layers = parse(key, value)?,
            "dropout" => t.dropout = parse(key, value)?,
            "share_encoders" => t.share_encoders = parse(key, value)?,
            "scheme" => t.scheme = value.parse().map_err(Error::InvalidConfig)?,
            "base_lr" => t.base_lr = parse(key, value)?,
            "warmup_steps" => t.warmup_steps = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "feature_kind" => t.feature_kind = value.parse().map_err(Error::InvalidConfig)?,
            "loss_weight_tts" => t.loss_weight_tts = parse(key, value)?,
            "loss_weight_d" => t.loss_weight_d = parse(key, value)?,
            "clip_norm" => t.clip_norm = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "sample_rate" => m.sample_rate = parse(key, value)?,
            "n_fft" => m.n_fft = parse(key, value)?,
            "hop" => m.hop = parse(key, value)?,
            "win" => m.win = parse(key, value)?,
            "n_mels" => m.n_mels = parse(key, value)?,
            "fmin" => m.fmin = parse(key, value)?,
            "fmax" => m.fmax = parse(key, value)?,
            "log_floor" => m.log_floor = parse(key, value)?,
            "ae_latent_dim" => self.ae_latent_dim = parse(key, value)?,
            "ae_steps" => self.ae_steps = parse(key, value)?,
            "ae_lr" => self.ae_lr = parse(key, value)?,
            "gl_iters" => self.gl_iters = parse(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every entry of a parsed config file, in order.
    pub fn apply(&mut self, entries: &BTreeMap<String, String>) -> Result<()> {
        entries.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.train.validate()
    }
}

/// Parses `key = value` lines. `#` starts a comment, `[section]` headers are
/// ignored, and surrounding quotes on values are dropped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
        let v = v.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(v);
        out.insert(k.trim().to_string(), v.to_string());
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text)
}
