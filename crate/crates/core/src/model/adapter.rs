use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{add_linear, add_norm, conv1d, linear, Dropout, EmbeddingSequence, ModelConfig};
use crate::autograd::{sigmoid, ConvGeom, Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Frames per token. `total` is always the sum of `frames`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Durations {
    frames: Vec<usize>,
    total: usize,
}

impl Durations {
    pub fn new(frames: Vec<usize>) -> Self {
        let total = frames.iter().sum();
        Self { frames, total }
    }

    pub fn frames(&self) -> &[usize] {
        &self.frames
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Frame-resolution embeddings with the source token of every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbedding {
    pub data: Mat,
    pub frame_to_token: Vec<usize>,
}

impl FrameEmbedding {
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }
}

/// `tanh(a + b) * sigmoid(a + b)`, elementwise.
pub fn fuse(hx: &EmbeddingSequence, hs: &EmbeddingSequence) -> Result<EmbeddingSequence> {
    if hx.data.dim() != hs.data.dim() || hx.mask != hs.mask {
        return Err(Error::ShapeMismatch(format!(
            "fusing {:?} with {:?}",
            hx.data.dim(),
            hs.data.dim()
        )));
    }
    let data = (&hx.data + &hs.data).mapv(|h| h.tanh() * sigmoid(h));
    Ok(EmbeddingSequence {
        data,
        mask: hx.mask.clone(),
    })
}

pub(crate) fn fuse_graph(g: &mut Graph, hx: Var, hs: Var) -> Var {
    let h = g.add(hx, hs);
    let t = g.tanh(h);
    let s = g.sigmoid(h);
    g.mul(t, s)
}

#[derive(Debug, Clone)]
pub struct DurationPredictorParams {
    pub kernel: usize,
    pub eps: f64,
    pub conv: [(ParamId, ParamId); 2],
    pub norm: [(ParamId, ParamId); 2],
    pub output: (ParamId, ParamId),
}

impl DurationPredictorParams {
    pub fn init(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let m = cfg.embedding_dim;
        let k = cfg.dp_kernel;
        let conv0 = add_linear(store, rng, "duration_predictor.conv0", m, k * m);
        let norm0 = add_norm(store, "duration_predictor.norm0", m);
        let conv1 = add_linear(store, rng, "duration_predictor.conv1", m, k * m);
        let norm1 = add_norm(store, "duration_predictor.norm1", m);
        let output = add_linear(store, rng, "duration_predictor.output", 1, m);
        Self {
            kernel: k,
            eps: cfg.layer_norm_eps,
            conv: [conv0, conv1],
            norm: [norm0, norm1],
            output,
        }
    }

    /// Log-durations as a `1 x L` row; masked positions are 0.
    pub(crate) fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        h: Var,
        mask: &[bool],
        dropout: &mut Option<Dropout>,
    ) -> Var {
        let len = mask.len();
        let mut x = g.mask_cols(h, mask);
        for (conv, norm) in self.conv.iter().zip(&self.norm) {
            let w = g.param(store, conv.0);
            let b = g.param(store, conv.1);
            x = conv1d(g, x, w, b, ConvGeom::same(cfg.embedding_dim, self.kernel, len));
            x = g.relu(x);
            let ng = g.param(store, norm.0);
            let nb = g.param(store, norm.1);
            x = g.layer_norm(x, ng, nb, self.eps);
            x = Dropout::apply(dropout, g, x);
            x = g.mask_cols(x, mask);
        }
        let w = g.param(store, self.output.0);
        let b = g.param(store, self.output.1);
        let y = linear(g, x, w, b);
        g.mask_cols(y, mask)
    }
}

/// Runs the duration predictor on a fused sequence (inference mode).
pub fn predict_durations(
    h: &EmbeddingSequence,
    store: &ParamStore,
    cfg: &ModelConfig,
    params: &DurationPredictorParams,
) -> Result<Vec<f64>> {
    if h.dim() != cfg.embedding_dim || h.mask.len() != h.len() {
        return Err(Error::ShapeMismatch(format!(
            "duration predictor expects {} rows, got {}",
            cfg.embedding_dim,
            h.dim()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(h.data.clone());
    let y = params.forward(&mut g, store, cfg, x, &h.mask, &mut None);
    Ok(g.value(y).row(0).to_vec())
}

/// Mean absolute log-duration error over the tokens where `mask` is true.
pub fn duration_loss(gt: &Durations, predicted_log: &[f64], mask: &[bool]) -> Result<f64> {
    let target = log_targets(gt, mask)?;
    if predicted_log.len() != target.len() {
        return Err(Error::LengthMismatch {
            durations: target.len(),
            tokens: predicted_log.len(),
        });
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = (0..target.len())
        .filter(|&i| mask[i])
        .map(|i| (target[i] - predicted_log[i]).abs())
        .sum();
    Ok(sum / n as f64)
}

/// `ln(frames)` at unmasked positions; rejects zero ground-truth durations.
pub(crate) fn log_targets(gt: &Durations, mask: &[bool]) -> Result<Vec<f64>> {
    if gt.len() != mask.len() {
        return Err(Error::LengthMismatch {
            durations: gt.len(),
            tokens: mask.len(),
        });
    }
    gt.frames
        .iter()
        .zip(mask)
        .enumerate()
        .map(|(i, (&f, &m))| match (m, f) {
            (false, _) => Ok(0.0),
            (true, 0) => Err(Error::NonPositiveGroundTruthDuration(i)),
            (true, f) => Ok((f as f64).ln()),
        })
        .collect()
}

/// Graph version of [`duration_loss`]: returns the unnormalized sum and the
/// number of contributing tokens.
pub(crate) fn duration_loss_graph(g: &mut Graph, logd: Var, gt: &Durations, mask: &[bool]) -> Result<(Var, usize)> {
    let target = log_targets(gt, mask)?;
    let n = mask.iter().filter(|&&m| m).count();
    let loss = g.abs_err_sum(logd, Arc::new(target), Arc::new(mask.to_vec()));
    Ok((loss, n))
}

/// Source token of every output frame.
pub(crate) fn frame_index(d: &Durations, tokens: usize) -> Result<Vec<usize>> {
    if d.len() != tokens {
        return Err(Error::LengthMismatch {
            durations: d.len(),
            tokens,
        });
    }
    if d.total == 0 {
        return Err(Error::EmptyOutput);
    }
    Ok(d.frames
        .iter()
        .enumerate()
        .flat_map(|(i, &f)| std::iter::repeat(i).take(f))
        .collect())
}

/// Repeats column `i` of `h` `d.frames[i]` times.
pub fn length_regulate(h: &EmbeddingSequence, d: &Durations) -> Result<FrameEmbedding> {
    let idx = frame_index(d, h.len())?;
    let mut data = Mat::zeros((h.dim(), idx.len()));
    for (t, &i) in idx.iter().enumerate() {
        data.column_mut(t).assign(&h.data.column(i));
    }
    Ok(FrameEmbedding {
        data,
        frame_to_token: idx,
    })
}

/// Rounds `exp(log d)` half-to-even with a floor of one frame; masked
/// positions get zero frames.
pub fn durations_from_log(predicted_log: &[f64], mask: &[bool]) -> Durations {
    let frames = predicted_log
        .iter()
        .zip(mask)
        .map(|(&l, &m)| {
            if m {
                l.exp().round_ties_even().max(1.0) as usize
            } else {
                0
            }
        })
        .collect();
    Durations::new(frames)
}
