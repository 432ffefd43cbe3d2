use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::{add_linear, add_norm, conv1d, linear, Dropout, ModelConfig};
use crate::autograd::{ConvGeom, Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::text::TokenSequence;

/// `M x L` embeddings plus the token mask (true = real token).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub data: Mat,
    pub mask: Vec<bool>,
}

impl EmbeddingSequence {
    pub fn new(data: Mat, mask: Vec<bool>) -> Result<Self> {
        if data.ncols() != mask.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} columns but mask of length {}",
                data.ncols(),
                mask.len()
            )));
        }
        Ok(Self { data, mask })
    }

    /// Every column marked as a real token.
    pub fn unmasked(data: Mat) -> Self {
        let mask = vec![true; data.ncols()];
        Self { data, mask }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }
}

/// Parameter handles of one feed-forward transformer block.
#[derive(Debug, Clone)]
pub struct FftBlockParams {
    pub prefix: String,
    pub n_heads: usize,
    pub kernels: [usize; 2],
    pub eps: f64,
    pub query: (ParamId, ParamId),
    pub key: (ParamId, ParamId),
    pub value: (ParamId, ParamId),
    pub output: (ParamId, ParamId),
    pub norm1: (ParamId, ParamId),
    pub conv1: (ParamId, ParamId),
    pub conv2: (ParamId, ParamId),
    pub norm2: (ParamId, ParamId),
}

impl FftBlockParams {
    pub fn init(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str) -> Self {
        let m = cfg.embedding_dim;
        let f = cfg.ffn_hidden;
        let [k1, k2] = cfg.ffn_kernels;
        Self {
            prefix: prefix.to_string(),
            n_heads: cfg.n_heads,
            kernels: cfg.ffn_kernels,
            eps: cfg.layer_norm_eps,
            query: add_linear(store, rng, &format!("{prefix}.attn.query"), m, m),
            key: add_linear(store, rng, &format!("{prefix}.attn.key"), m, m),
            value: add_linear(store, rng, &format!("{prefix}.attn.value"), m, m),
            output: add_linear(store, rng, &format!("{prefix}.attn.output"), m, m),
            norm1: add_norm(store, &format!("{prefix}.norm1"), m),
            conv1: add_linear(store, rng, &format!("{prefix}.conv1"), f, k1 * m),
            conv2: add_linear(store, rng, &format!("{prefix}.conv2"), m, k2 * f),
            norm2: add_norm(store, &format!("{prefix}.norm2"), m),
        }
    }

    /// `LN2(h + Conv2(relu(Conv1(h))))` with `h = LN1(x + MHSA(x))`.
    /// Masked key positions are excluded from attention and masked columns
    /// are zeroed before every convolution and at the output.
    pub(crate) fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: &[bool], dropout: &mut Option<Dropout>) -> Var {
        let (m, len) = g.value(x).dim();
        let heads = self.n_heads;
        let dh = m / heads;

        let p = |g: &mut Graph, (w, b): (ParamId, ParamId)| (g.param(store, w), g.param(store, b));
        let (wq, bq) = p(g, self.query);
        let (wk, bk) = p(g, self.key);
        let (wv, bv) = p(g, self.value);
        let (wo, bo) = p(g, self.output);
        let q = linear(g, x, wq, bq);
        let k = linear(g, x, wk, bk);
        let v = linear(g, x, wv, bv);

        let key_bias = (!mask.iter().all(|&b| b)).then(|| {
            let mut bias = Mat::zeros((len, len));
            for (j, &keep) in mask.iter().enumerate() {
                if !keep {
                    bias.column_mut(j).fill(f64::NEG_INFINITY);
                }
            }
            g.constant(bias)
        });
        let scale = 1.0 / (dh as f64).sqrt();
        let mut contexts = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.row_slice(q, h * dh, (h + 1) * dh);
            let kh = g.row_slice(k, h * dh, (h + 1) * dh);
            let vh = g.row_slice(v, h * dh, (h + 1) * dh);
            // scores[i, j]: query i attending to key j
            let scores = g.matmul_t(qh, kh, true, false);
            let mut scores = g.scale(scores, scale);
            if let Some(bias) = key_bias {
                scores = g.add(scores, bias);
            }
            let probs = g.softmax_rows(scores);
            contexts.push(g.matmul_t(vh, probs, false, true));
        }
        let context = if heads == 1 { contexts[0] } else { g.concat_rows(&contexts) };
        let attn = linear(g, context, wo, bo);
        let attn = Dropout::apply(dropout, g, attn);
        let res = g.add(x, attn);
        let (n1g, n1b) = p(g, self.norm1);
        let h = g.layer_norm(res, n1g, n1b, self.eps);
        let h = g.mask_cols(h, mask);

        let f = store.value(self.conv1.1).nrows();
        let (c1w, c1b) = p(g, self.conv1);
        let (c2w, c2b) = p(g, self.conv2);
        let [k1, k2] = self.kernels;
        let c1 = conv1d(g, h, c1w, c1b, ConvGeom::same(m, k1, len));
        let c1 = g.relu(c1);
        let c1 = g.mask_cols(c1, mask);
        let c2 = conv1d(g, c1, c2w, c2b, ConvGeom::same(f, k2, len));
        let c2 = Dropout::apply(dropout, g, c2);
        let res = g.add(h, c2);
        let (n2g, n2b) = p(g, self.norm2);
        let out = g.layer_norm(res, n2g, n2b, self.eps);
        g.mask_cols(out, mask)
    }
}

/// Embedding tables plus the phoneme and style FFT stacks.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub phoneme_table: ParamId,
    pub style_table: ParamId,
    pub phoneme_blocks: Vec<FftBlockParams>,
    pub style_blocks: Vec<FftBlockParams>,
}

impl EncoderParams {
    pub fn init(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let m = cfg.embedding_dim;
        let bound = 1.0 / (m as f64).sqrt();
        let phoneme_table = store.add_uniform("embedding.phoneme", (cfg.phoneme_vocab, m), bound, rng);
        let style_table = store.add_uniform("embedding.style", (cfg.style_vocab, m), bound, rng);
        let phoneme_blocks: Vec<_> = (0..cfg.n_enc_layers)
            .map(|i| FftBlockParams::init(cfg, store, rng, &format!("encoder.phoneme.{i}")))
            .collect();
        let style_blocks = if cfg.share_encoders {
            phoneme_blocks.clone()
        } else {
            (0..cfg.n_enc_layers)
                .map(|i| FftBlockParams::init(cfg, store, rng, &format!("encoder.style.{i}")))
                .collect()
        };
        Self {
            phoneme_table,
            style_table,
            phoneme_blocks,
            style_blocks,
        }
    }

    /// Returns contextualized phoneme and style embeddings and the token mask.
    /// Token id 0 (pad) is masked.
    pub(crate) fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cfg: &ModelConfig,
        tokens: &TokenSequence,
        dropout: &mut Option<Dropout>,
    ) -> Result<(Var, Var, Vec<bool>)> {
        if tokens.phoneme_ids.len() != tokens.style_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} phoneme ids vs {} style ids",
                tokens.phoneme_ids.len(),
                tokens.style_ids.len()
            )));
        }
        let mask: Vec<bool> = tokens.phoneme_ids.iter().map(|&id| id != 0).collect();
        let pe = positional_table(cfg.embedding_dim, tokens.len(), &mask)?;
        let pe = g.constant(pe);
        let mut streams = Vec::with_capacity(2);
        for (ids, table, blocks, vocab) in [
            (&tokens.phoneme_ids, self.phoneme_table, &self.phoneme_blocks, cfg.phoneme_vocab),
            (&tokens.style_ids, self.style_table, &self.style_blocks, cfg.style_vocab),
        ] {
            let lookup = lookup_ids(ids, &mask, vocab)?;
            let t = g.param(store, table);
            let e = g.embed(t, Arc::new(lookup));
            let mut x = g.add(e, pe);
            for block in blocks {
                x = block.forward(g, store, x, &mask, dropout);
            }
            streams.push(x);
        }
        Ok((streams[0], streams[1], mask))
    }
}

fn lookup_ids(ids: &[usize], mask: &[bool], vocab: usize) -> Result<Vec<Option<usize>>> {
    ids.iter()
        .zip(mask)
        .map(|(&id, &keep)| {
            if id >= vocab {
                Err(Error::IdOutOfRange { id, size: vocab })
            } else {
                Ok(keep.then_some(id))
            }
        })
        .collect()
}

/// Sinusoidal table for the unmasked columns; masked columns are zero.
pub(crate) fn positional_table(dim: usize, len: usize, mask: &[bool]) -> Result<Mat> {
    if dim % 2 != 0 {
        return Err(Error::OddEmbeddingDim(dim));
    }
    let mut pe = Mat::zeros((dim, len));
    for t in 0..len {
        if !mask[t] {
            continue;
        }
        for i in 0..dim / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            pe[[2 * i, t]] = angle.sin();
            pe[[2 * i + 1, t]] = angle.cos();
        }
    }
    Ok(pe)
}

/// Looks up phoneme and style rows; pad ids (0) give zero, masked columns.
pub fn embed(tokens: &TokenSequence, phoneme_table: &Mat, style_table: &Mat) -> Result<(EmbeddingSequence, EmbeddingSequence)> {
    let mask: Vec<bool> = tokens.phoneme_ids.iter().map(|&id| id != 0).collect();
    let mut g = Graph::new();
    let mut out = Vec::with_capacity(2);
    for (ids, table) in [(&tokens.phoneme_ids, phoneme_table), (&tokens.style_ids, style_table)] {
        let lookup = lookup_ids(ids, &mask, table.nrows())?;
        let t = g.constant(table.clone());
        let e = g.embed(t, Arc::new(lookup));
        out.push(EmbeddingSequence {
            data: g.value(e).clone(),
            mask: mask.clone(),
        });
    }
    let styles = out.pop().expect("two streams");
    let phonemes = out.pop().expect("two streams");
    Ok((phonemes, styles))
}

/// Adds the sinusoidal position table to unmasked columns.
pub fn positional_encode(e: &EmbeddingSequence) -> Result<EmbeddingSequence> {
    let pe = positional_table(e.dim(), e.len(), &e.mask)?;
    Ok(EmbeddingSequence {
        data: &e.data + &pe,
        mask: e.mask.clone(),
    })
}

pub fn fft_block(e: &EmbeddingSequence, store: &ParamStore, block: &FftBlockParams) -> Result<EmbeddingSequence> {
    let m = e.dim();
    let expected = store.value(block.query.0).dim();
    if expected != (m, m) || m % block.n_heads != 0 || e.mask.len() != e.len() {
        return Err(Error::ShapeMismatch(format!(
            "block expects {}x{} projections, input has {m} rows",
            expected.0, expected.1
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(e.data.clone());
    let y = block.forward(&mut g, store, x, &e.mask, &mut None);
    Ok(EmbeddingSequence {
        data: g.value(y).clone(),
        mask: e.mask.clone(),
    })
}

/// Embedding, positional encoding and the FFT stacks for both streams.
pub fn encode(
    tokens: &TokenSequence,
    store: &ParamStore,
    cfg: &ModelConfig,
    params: &EncoderParams,
) -> Result<(EmbeddingSequence, EmbeddingSequence)> {
    let mut g = Graph::new();
    let (hx, hs, mask) = params.forward(&mut g, store, cfg, tokens, &mut None)?;
    Ok((
        EmbeddingSequence {
            data: g.value(hx).clone(),
            mask: mask.clone(),
        },
        EmbeddingSequence {
            data: g.value(hs).clone(),
            mask,
        },
    ))
}
