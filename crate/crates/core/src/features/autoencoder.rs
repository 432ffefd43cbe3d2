use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureKind;
use crate::autograd::{ConvGeom, Graph, Gradients, Mat, Var};
use crate::error::{Error, Result};
use crate::model::AcousticFeature;
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamId, ParamStore};

/// What the autoencoder reconstructs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AeDomain {
    /// Log-mel frames, `n_mels` input channels.
    Mel,
    /// Raw samples, one input channel.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub domain: AeDomain,
    pub in_channels: usize,
    /// Widths of the three hidden layers.
    pub hidden: [usize; 3],
    pub latent_dim: usize,
    pub strides: [usize; 4],
    /// Blend neighbouring frames across latent-block boundaries on decode.
    pub crossfade: bool,
}

impl AeConfig {
    /// Four conv layers over mel frames, R = 4.
    pub fn mel(n_mels: usize, latent_dim: usize) -> Self {
        Self {
            domain: AeDomain::Mel,
            in_channels: n_mels,
            hidden: [64, 64, 64],
            latent_dim,
            strides: [2, 2, 1, 1],
            crossfade: false,
        }
    }

    /// Four stride-4 conv layers over raw samples, R = 256.
    pub fn raw(latent_dim: usize) -> Self {
        Self {
            domain: AeDomain::Raw,
            in_channels: 1,
            hidden: [128, 256, 256],
            latent_dim,
            strides: [4, 4, 4, 4],
            crossfade: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.latent_dim == 0 || self.hidden.contains(&0) || self.strides.contains(&0) {
            return Err(Error::InvalidConfig("autoencoder sizes must be positive".into()));
        }
        Ok(())
    }

    /// Input frames per latent frame.
    pub fn ratio(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn kernel(stride: usize) -> usize {
        if stride == 1 {
            3
        } else {
            2 * stride
        }
    }

    fn widths(&self) -> [usize; 5] {
        [
            self.in_channels,
            self.hidden[0],
            self.hidden[1],
            self.hidden[2],
            self.latent_dim,
        ]
    }

    /// `sum(kernel * in * out + out)` over the encoder layers.
    pub fn encoder_param_count(&self) -> usize {
        let w = self.widths();
        (0..4).map(|i| Self::kernel(self.strides[i]) * w[i] * w[i + 1] + w[i + 1]).sum()
    }

    /// Same sum over the mirrored decoder layers.
    pub fn decoder_param_count(&self) -> usize {
        let w = self.widths();
        (0..4).map(|i| Self::kernel(self.strides[i]) * w[i + 1] * w[i] + w[i]).sum()
    }
}

/// Strided convolutional autoencoder with per-channel input standardization.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: AeConfig,
    pub params: ParamStore,
    pub encoder: Vec<(ParamId, ParamId)>,
    pub decoder: Vec<(ParamId, ParamId)>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

impl Autoencoder {
    pub fn new(config: AeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let w = config.widths();
        let mut encoder = Vec::new();
        for i in 0..4 {
            let k = AeConfig::kernel(config.strides[i]);
            let fan_in = k * w[i];
            let bound = (6.0 / fan_in as f64).sqrt() * if i == 3 { 0.5 } else { 1.0 };
            let wt = params.add_uniform(format!("ae.encoder.{i}.weight"), (w[i + 1], fan_in), bound, &mut rng);
            let b = params.add_zeros(format!("ae.encoder.{i}.bias"), (w[i + 1], 1));
            encoder.push((wt, b));
        }
        let mut decoder = Vec::new();
        // decoder layer j undoes encoder layer 3 - j
        for j in 0..4 {
            let i = 3 - j;
            let k = AeConfig::kernel(config.strides[i]);
            let (cin, cout) = (w[i + 1], w[i]);
            let wt = if config.strides[i] == 1 {
                params.add_uniform(format!("ae.decoder.{j}.weight"), (cout, k * cin), (6.0 / (k * cin) as f64).sqrt(), &mut rng)
            } else {
                // transposed conv: (kernel * out) x in, scattered by col2im
                let fan_in = cin * k / config.strides[i];
                params.add_uniform(format!("ae.decoder.{j}.weight"), (k * cout, cin), (6.0 / fan_in as f64).sqrt(), &mut rng)
            };
            let b = params.add_zeros(format!("ae.decoder.{j}.bias"), (cout, 1));
            decoder.push((wt, b));
        }
        Ok(Self {
            input_mean: vec![0.0; config.in_channels],
            input_std: vec![1.0; config.in_channels],
            config,
            params,
            encoder,
            decoder,
        })
    }

    /// Rebuilds a trained autoencoder from stored tensors and input statistics.
    pub fn from_parts(config: AeConfig, stored: &ParamStore, input_mean: Vec<f64>, input_std: Vec<f64>) -> Result<Self> {
        let mut ae = Self::new(config, 0)?;
        if input_mean.len() != ae.config.in_channels || input_std.len() != ae.config.in_channels {
            return Err(Error::Checkpoint(format!(
                "autoencoder statistics have {} / {} channels, expected {}",
                input_mean.len(),
                input_std.len(),
                ae.config.in_channels
            )));
        }
        ae.params.assign_from(stored)?;
        ae.input_mean = input_mean;
        ae.input_std = input_std;
        Ok(ae)
    }

    pub fn ratio(&self) -> usize {
        self.config.ratio()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder.iter().map(|&(w, b)| self.params.value(w).len() + self.params.value(b).len()).sum()
    }

    pub fn decoder_param_count(&self) -> usize {
        self.decoder.iter().map(|&(w, b)| self.params.value(w).len() + self.params.value(b).len()).sum()
    }

    fn normalize(&self, x: &Mat) -> Mat {
        let mut out = x.clone();
        for (c, mut row) in out.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| (v - self.input_mean[c]) / self.input_std[c]);
        }
        out
    }

    fn denormalize(&self, x: &Mat) -> Mat {
        let mut out = x.clone();
        for (c, mut row) in out.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v * self.input_std[c] + self.input_mean[c]);
        }
        out
    }

    /// Pads a normalized input to a multiple of R with zeros (the channel
    /// mean in input units).
    fn pad(&self, x: Mat) -> Mat {
        let r = self.ratio();
        let len = x.ncols();
        let padded = len.div_ceil(r).max(1) * r;
        if padded == len {
            return x;
        }
        let mut out = Mat::zeros((x.nrows(), padded));
        out.slice_mut(ndarray::s![.., ..len]).assign(&x);
        out
    }

    fn encode_graph(&self, g: &mut Graph, x: Var) -> Var {
        let w = self.config.widths();
        let mut h = x;
        for (i, &(wt, b)) in self.encoder.iter().enumerate() {
            let len = g.value(h).ncols();
            let s = self.config.strides[i];
            let k = AeConfig::kernel(s);
            let geom = if s == 1 {
                ConvGeom::same(w[i], k, len)
            } else {
                ConvGeom::strided(w[i], k, s, len)
            };
            let wv = g.param(&self.params, wt);
            let bv = g.param(&self.params, b);
            let cols = g.im2col(h, geom);
            let y = g.matmul(wv, cols);
            h = g.add_bias(y, bv);
            if i < 3 {
                h = g.relu(h);
            }
        }
        h
    }

    fn decode_graph(&self, g: &mut Graph, z: Var) -> Var {
        let w = self.config.widths();
        let mut h = z;
        for (j, &(wt, b)) in self.decoder.iter().enumerate() {
            let i = 3 - j;
            let s = self.config.strides[i];
            let k = AeConfig::kernel(s);
            let len = g.value(h).ncols();
            let wv = g.param(&self.params, wt);
            let bv = g.param(&self.params, b);
            let y = if s == 1 {
                let cols = g.im2col(h, ConvGeom::same(w[i + 1], k, len));
                g.matmul(wv, cols)
            } else {
                let cols = g.matmul(wv, h);
                g.col2im(cols, ConvGeom::strided(w[i], k, s, len * s))
            };
            h = g.add_bias(y, bv);
            if j < 3 {
                h = g.relu(h);
            }
        }
        h
    }

    /// Latent features for an input of shape `in_channels x len`.
    /// Returns the latent and the original length for trimming on decode.
    pub fn encode(&self, x: &Mat) -> Result<(AcousticFeature, usize)> {
        if x.nrows() != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "autoencoder expects {} channels, got {}",
                self.config.in_channels,
                x.nrows()
            )));
        }
        let len = x.ncols();
        let mut g = Graph::new();
        let xin = g.constant(self.pad(self.normalize(x)));
        let z = self.encode_graph(&mut g, xin);
        Ok((AcousticFeature::new(g.value(z).clone(), FeatureKind::Latent), len))
    }

    /// Reconstruction of `T_lat * R` input frames (in input units).
    pub fn decode(&self, z: &AcousticFeature) -> Result<Mat> {
        if z.kind != FeatureKind::Latent {
            return Err(Error::KindMismatch {
                expected: FeatureKind::Latent.to_string(),
                got: z.kind.to_string(),
            });
        }
        if z.data.nrows() != self.config.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "latent has {} channels, autoencoder expects {}",
                z.data.nrows(),
                self.config.latent_dim
            )));
        }
        let mut g = Graph::new();
        let zin = g.constant(z.data.clone());
        let y = self.decode_graph(&mut g, zin);
        let mut out = self.denormalize(g.value(y));
        if self.config.crossfade {
            crossfade_blocks(&mut out, self.ratio());
        }
        Ok(out)
    }

    /// Encode then decode, trimmed back to the input length.
    pub fn reconstruct(&self, x: &Mat) -> Result<Mat> {
        let (z, len) = self.encode(x)?;
        let y = self.decode(&z)?;
        Ok(y.slice(ndarray::s![.., ..len]).to_owned())
    }

    /// Sum of squared reconstruction errors in normalized units, plus the
    /// element count.
    fn loss_graph(&self, g: &mut Graph, x: &Mat) -> (Var, usize) {
        let target = self.pad(self.normalize(x));
        let n = target.len();
        let xin = g.constant(target.clone());
        let z = self.encode_graph(g, xin);
        let y = self.decode_graph(g, z);
        let cols = vec![true; target.ncols()];
        (g.sq_err_sum(y, Arc::new(target), Arc::new(cols)), n)
    }

    /// Mean squared reconstruction error in normalized units.
    pub fn loss(&self, x: &Mat) -> f64 {
        let mut g = Graph::new();
        let (l, n) = self.loss_graph(&mut g, x);
        g.scalar(l) / n as f64
    }

    fn set_statistics(&mut self, corpus: &[Mat]) {
        let c = self.config.in_channels;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0usize;
        for x in corpus {
            for (ch, row) in x.rows().into_iter().enumerate() {
                sum[ch] += row.sum();
                sq[ch] += row.iter().map(|v| v * v).sum::<f64>();
            }
            n += x.ncols();
        }
        let n = n.max(1) as f64;
        for ch in 0..c {
            let mean = sum[ch] / n;
            let var = (sq[ch] / n - mean * mean).max(0.0);
            self.input_mean[ch] = mean;
            self.input_std[ch] = var.sqrt().max(1e-3);
        }
    }
}

fn crossfade_blocks(y: &mut Mat, r: usize) {
    if r < 2 {
        return;
    }
    let len = y.ncols();
    let mut b = r;
    while b < len {
        let left = y.column(b - 1).to_owned();
        let right = y.column(b).to_owned();
        y.column_mut(b - 1).assign(&(&left * 0.75 + &right * 0.25));
        y.column_mut(b).assign(&(&left * 0.25 + &right * 0.75));
        b += r;
    }
}

/// Reconstruction SNR in dB with each channel's mean removed from the
/// signal power, so constant offsets (such as the log floor) do not count
/// as signal.
pub fn snr_db(reference: &Mat, reconstruction: &Mat) -> f64 {
    let (mut signal, mut error) = (0.0, 0.0);
    for (row, rec) in reference.rows().into_iter().zip(reconstruction.rows()) {
        let mean = row.mean().unwrap_or(0.0);
        for (&x, &y) in row.iter().zip(rec.iter()) {
            signal += (x - mean) * (x - mean);
            error += (x - y) * (x - y);
        }
    }
    10.0 * (signal / error).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Input frames per training crop; rounded up to a multiple of R.
    pub segment: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 2e-3,
            segment: 64,
            batch: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AeTrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

/// Fits an autoencoder to the corpus with Adam on random crops. Losses are
/// full-corpus mean squared errors in normalized units.
pub fn train_autoencoder(corpus: &[Mat], config: AeConfig, train: &AeTrainConfig) -> Result<(Autoencoder, AeTrainReport)> {
    if corpus.is_empty() || corpus.iter().all(|x| x.ncols() == 0) {
        return Err(Error::EmptyCorpus);
    }
    let mut ae = Autoencoder::new(config, train.seed)?;
    ae.set_statistics(corpus);
    let corpus_loss = |ae: &Autoencoder| corpus.iter().map(|x| ae.loss(x)).sum::<f64>() / corpus.len() as f64;
    let initial_loss = corpus_loss(&ae);
    let r = ae.ratio();
    let segment = train.segment.div_ceil(r).max(1) * r;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5eed_ae);
    let mut adam = Adam::new(AdamConfig::default(), &ae.params);
    let mut losses = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let mut grads = Gradients::default();
        let mut total = 0.0;
        let mut count = 0usize;
        for _ in 0..train.batch.max(1) {
            let x = &corpus[rng.gen_range(0..corpus.len())];
            let crop = if x.ncols() > segment {
                let start = rng.gen_range(0..=x.ncols() - segment);
                x.slice(ndarray::s![.., start..start + segment]).to_owned()
            } else {
                x.clone()
            };
            let mut g = Graph::new();
            let (l, n) = ae.loss_graph(&mut g, &crop);
            total += g.scalar(l);
            count += n;
            grads.accumulate(g.backward(l, ae.params.len()));
        }
        let loss = total / count as f64;
        if !loss.is_finite() {
            return Err(Error::NaNLoss(step + 1));
        }
        losses.push(loss);
        adam.step(&mut ae.params, &grads, train.lr, 1.0 / count as f64);
    }
    let final_loss = corpus_loss(&ae);
    Ok((
        ae,
        AeTrainReport {
            initial_loss,
            final_loss,
            losses,
        },
    ))
}
