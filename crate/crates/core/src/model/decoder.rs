use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::adapter::FrameEmbedding;
use super::encoder::{positional_table, FftBlockParams};
use super::{add_linear, linear, Dropout, ModelConfig};
use crate::autograd::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::params::{ParamId, ParamStore};

/// `N x T` acoustic feature sequence with its extraction metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticFeature {
    pub data: Mat,
    pub kind: FeatureKind,
    pub frame_rate: f64,
    pub sample_rate: u32,
    pub config_hash: u64,
}

impl AcousticFeature {
    pub fn new(data: Mat, kind: FeatureKind) -> Self {
        Self {
            data,
            kind,
            frame_rate: 0.0,
            sample_rate: 0,
            config_hash: 0,
        }
    }

    pub fn with_meta(mut self, frame_rate: f64, sample_rate: u32, config_hash: u64) -> Self {
        self.frame_rate = frame_rate;
        self.sample_rate = sample_rate;
        self.config_hash = config_hash;
        self
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }
}

/// Decoder FFT stack plus the output projection.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub blocks: Vec<FftBlockParams>,
    pub projection: (ParamId, ParamId),
}

impl DecoderParams {
    pub fn init(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let blocks = (0..cfg.n_dec_layers)
            .map(|i| FftBlockParams::init(cfg, store, rng, &format!("decoder.block.{i}")))
            .collect();
        let projection = add_linear(store, rng, "decoder.projection", cfg.feature_dim, cfg.embedding_dim);
        Self { blocks, projection }
    }

    pub(crate) fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        hl: Var,
        mask: &[bool],
        dropout: &mut Option<Dropout>,
    ) -> Var {
        let pe = positional_table(cfg.embedding_dim, mask.len(), mask).expect("validated embedding dim");
        let pe = g.constant(pe);
        let mut x = g.add(hl, pe);
        for block in &self.blocks {
            x = block.forward(g, store, x, mask, dropout);
        }
        let w = g.param(store, self.projection.0);
        let b = g.param(store, self.projection.1);
        let y = linear(g, x, w, b);
        g.mask_cols(y, mask)
    }
}

/// Positional encoding, decoder blocks and projection, one column per frame.
pub fn decode(
    hl: &FrameEmbedding,
    store: &ParamStore,
    cfg: &ModelConfig,
    params: &DecoderParams,
) -> Result<AcousticFeature> {
    if hl.data.nrows() != cfg.embedding_dim {
        return Err(Error::ShapeMismatch(format!(
            "decoder expects {} rows, got {}",
            cfg.embedding_dim,
            hl.data.nrows()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(hl.data.clone());
    let mask = vec![true; hl.len()];
    let y = params.forward(&mut g, store, cfg, x, &mask, &mut None);
    Ok(AcousticFeature::new(g.value(y).clone(), cfg.feature_kind))
}

/// Mean squared error over every element.
pub fn tts_loss(target: &AcousticFeature, predicted: &AcousticFeature) -> Result<f64> {
    if target.kind != predicted.kind {
        return Err(Error::KindMismatch {
            expected: target.kind.to_string(),
            got: predicted.kind.to_string(),
        });
    }
    if target.data.dim() != predicted.data.dim() {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs prediction {:?}",
            target.data.dim(),
            predicted.data.dim()
        )));
    }
    let n = target.data.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = target
        .data
        .iter()
        .zip(predicted.data.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n as f64)
}

/// Graph version of the squared-error sum over kept columns, with the number
/// of contributing elements.
pub(crate) fn tts_loss_graph(g: &mut Graph, prediction: Var, target: Arc<Mat>, cols: Vec<bool>) -> (Var, usize) {
    let n = cols.iter().filter(|&&c| c).count() * target.nrows();
    let loss = g.sq_err_sum(prediction, target, Arc::new(cols));
    (loss, n)
}

pub fn total_loss(loss_d: f64, loss_tts: f64) -> f64 {
    loss_d + loss_tts
}
