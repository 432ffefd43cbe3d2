//! Non-autoregressive acoustic model: token encoders, gated style fusion with
//! a duration predictor and length regulator, and an FFT-block decoder.

pub mod adapter;
pub mod decoder;
pub mod encoder;

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvGeom, Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::params::{ParamId, ParamStore};
use crate::text::{Scheme, TokenSequence};

pub use adapter::{
    duration_loss, durations_from_log, fuse, length_regulate, predict_durations, DurationPredictorParams,
    Durations, FrameEmbedding,
};
pub use decoder::{decode, total_loss, tts_loss, AcousticFeature, DecoderParams};
pub use encoder::{embed, encode, fft_block, positional_encode, EmbeddingSequence, EncoderParams, FftBlockParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub scheme: Scheme,
    pub phoneme_vocab: usize,
    pub style_vocab: usize,
    pub embedding_dim: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub ffn_kernels: [usize; 2],
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub dp_kernel: usize,
    pub feature_dim: usize,
    pub feature_kind: FeatureKind,
    pub dropout: f64,
    pub share_encoders: bool,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Full-size configuration (M=256, F=1024, 4+4 layers).
    pub fn paper(phoneme_vocab: usize, style_vocab: usize, feature_dim: usize, feature_kind: FeatureKind) -> Self {
        Self {
            scheme: Scheme::Ipa,
            phoneme_vocab,
            style_vocab,
            embedding_dim: 256,
            n_heads: 2,
            ffn_hidden: 1024,
            ffn_kernels: [9, 1],
            n_enc_layers: 4,
            n_dec_layers: 4,
            dp_kernel: 3,
            feature_dim,
            feature_kind,
            dropout: 0.1,
            share_encoders: false,
            layer_norm_eps: 1e-5,
        }
    }

    /// Laptop-scale configuration (M=32, F=64, 2+2 layers).
    pub fn desk(phoneme_vocab: usize, style_vocab: usize, feature_dim: usize, feature_kind: FeatureKind) -> Self {
        Self {
            embedding_dim: 32,
            ffn_hidden: 64,
            n_enc_layers: 2,
            n_dec_layers: 2,
            ..Self::paper(phoneme_vocab, style_vocab, feature_dim, feature_kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.embedding_dim;
        if m == 0 || self.n_heads == 0 || m % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "embedding_dim {m} must be a positive multiple of n_heads {}",
                self.n_heads
            )));
        }
        if m % 2 != 0 {
            return Err(Error::OddEmbeddingDim(m));
        }
        if self.ffn_kernels.iter().chain([&self.dp_kernel]).any(|k| k % 2 == 0) {
            return Err(Error::InvalidConfig("convolution kernels must be odd".into()));
        }
        if self.feature_dim == 0 || self.phoneme_vocab == 0 || self.style_vocab == 0 || self.ffn_hidden == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    /// Scalars in one FFT block, from the layer shapes.
    pub fn fft_block_param_count(&self) -> usize {
        let m = self.embedding_dim;
        let f = self.ffn_hidden;
        let [k1, k2] = self.ffn_kernels;
        let attention = 4 * (m * m + m);
        let conv = (k1 * m * f + f) + (k2 * f * m + m);
        let norms = 2 * 2 * m;
        attention + conv + norms
    }

    /// Closed-form parameter counts per component.
    pub fn parameter_breakdown(&self) -> ParameterBreakdown {
        let m = self.embedding_dim;
        let k = self.dp_kernel;
        let stacks = if self.share_encoders { 1 } else { 2 };
        ParameterBreakdown {
            embeddings: (self.phoneme_vocab + self.style_vocab) * m,
            encoders: stacks * self.n_enc_layers * self.fft_block_param_count(),
            duration_predictor: 2 * (k * m * m + m + 2 * m) + (m + 1),
            decoder: self.n_dec_layers * self.fft_block_param_count() + self.feature_dim * m + self.feature_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParameterBreakdown {
    pub embeddings: usize,
    pub encoders: usize,
    pub duration_predictor: usize,
    pub decoder: usize,
}

impl ParameterBreakdown {
    pub fn total(&self) -> usize {
        self.embeddings + self.encoders + self.duration_predictor + self.decoder
    }
}

/// Dropout state for a training forward pass.
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn apply(drop: &mut Option<Dropout>, g: &mut Graph, x: Var) -> Var {
        let Some(d) = drop.as_mut().filter(|d| d.rate > 0.0) else {
            return x;
        };
        let keep = 1.0 - d.rate;
        let dim = g.value(x).dim();
        let mask = Mat::from_shape_simple_fn(dim, || if d.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
        g.mul_const(x, Arc::new(mask))
    }
}

/// `W * unfold(x) + b` over columns.
pub(crate) fn conv1d(g: &mut Graph, x: Var, w: Var, b: Var, geom: ConvGeom) -> Var {
    let cols = g.im2col(x, geom);
    let y = g.matmul(w, cols);
    g.add_bias(y, b)
}

pub(crate) fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Var {
    let y = g.matmul(w, x);
    g.add_bias(y, b)
}

pub(crate) fn add_linear(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, out: usize, fan_in: usize) -> (ParamId, ParamId) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = store.add_uniform(format!("{name}.weight"), (out, fan_in), bound, rng);
    let b = store.add_zeros(format!("{name}.bias"), (out, 1));
    (w, b)
}

pub(crate) fn add_norm(store: &mut ParamStore, name: &str, dim: usize) -> (ParamId, ParamId) {
    let g = store.add_ones(format!("{name}.gain"), (dim, 1));
    let b = store.add_zeros(format!("{name}.bias"), (dim, 1));
    (g, b)
}

/// Complete acoustic model: configuration plus every named parameter.
#[derive(Debug, Clone)]
pub struct AcousticModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: EncoderParams,
    pub duration_predictor: DurationPredictorParams,
    pub decoder: DecoderParams,
}

/// Output of a training-mode forward pass over one (possibly padded) item.
pub struct TrainOutputs {
    pub prediction: Var,
    pub log_durations: Var,
}

/// Inference result for one utterance.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub feature: AcousticFeature,
    pub durations: Durations,
    pub log_durations: Vec<f64>,
}

impl AcousticModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let encoder = EncoderParams::init(&config, &mut params, &mut rng);
        let duration_predictor = DurationPredictorParams::init(&config, &mut params, &mut rng);
        let decoder = DecoderParams::init(&config, &mut params, &mut rng);
        Ok(Self {
            config,
            params,
            encoder,
            duration_predictor,
            decoder,
        })
    }

    /// Rebuilds the model around a stored parameter set, checking that every
    /// tensor exists with the expected shape.
    pub fn from_params(config: ModelConfig, stored: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.assign_from(&stored)?;
        Ok(model)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Training-mode forward over one item: encoders, fusion, duration
    /// predictor, teacher-forced length regulation and decoder.
    pub fn forward_train(
        &self,
        g: &mut Graph,
        tokens: &TokenSequence,
        durations: &Durations,
        dropout: &mut Option<Dropout>,
    ) -> Result<TrainOutputs> {
        let (hx, hs, mask) = self.encoder.forward(g, &self.params, &self.config, tokens, dropout)?;
        let h = adapter::fuse_graph(g, hx, hs);
        let log_durations = self
            .duration_predictor
            .forward(g, &self.params, &self.config, h, &mask, dropout);
        let frames = adapter::frame_index(durations, tokens.len())?;
        let hl = g.gather_cols(h, Arc::new(frames));
        let frame_mask = vec![true; g.value(hl).ncols()];
        let prediction = self
            .decoder
            .forward(g, &self.params, &self.config, hl, &frame_mask, dropout);
        Ok(TrainOutputs {
            prediction,
            log_durations,
        })
    }

    /// Inference: uses `durations` when given, otherwise the predicted ones.
    pub fn synthesize(&self, tokens: &TokenSequence, durations: Option<&Durations>) -> Result<Synthesis> {
        let mut g = Graph::new();
        let mut no_drop = None;
        let (hx, hs, mask) = self
            .encoder
            .forward(&mut g, &self.params, &self.config, tokens, &mut no_drop)?;
        let h = adapter::fuse_graph(&mut g, hx, hs);
        let logd = self
            .duration_predictor
            .forward(&mut g, &self.params, &self.config, h, &mask, &mut no_drop);
        let log_durations: Vec<f64> = g.value(logd).row(0).to_vec();
        let durations = match durations {
            Some(d) => d.clone(),
            None => durations_from_log(&log_durations, &mask),
        };
        let frames = adapter::frame_index(&durations, tokens.len())?;
        let hl = g.gather_cols(h, Arc::new(frames));
        let frame_mask = vec![true; g.value(hl).ncols()];
        let y = self
            .decoder
            .forward(&mut g, &self.params, &self.config, hl, &frame_mask, &mut no_drop);
        Ok(Synthesis {
            feature: AcousticFeature::new(g.value(y).clone(), self.config.feature_kind),
            durations,
            log_durations,
        })
    }

    /// Rows of the phoneme embedding table (vocabulary x M).
    pub fn phoneme_embeddings(&self) -> &Array2<f64> {
        self.params.value(self.encoder.phoneme_table)
    }
}
