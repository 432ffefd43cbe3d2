use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::nnls::Nnls;
use super::{FeatureKind, Waveform};
use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::model::AcousticFeature;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub win: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            n_fft: 1024,
            hop: 256,
            win: 1024,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    /// Desk-scale analysis: the default grid with a 512-sample window, which
    /// keeps short silences and pitch steps resolvable after resynthesis.
    pub fn desk() -> Self {
        Self {
            win: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.hop == 0 || self.hop > self.win || self.win > self.n_fft {
            return bad(format!(
                "need 0 < hop <= win <= n_fft (hop={}, win={}, n_fft={})",
                self.hop, self.win, self.n_fft
            ));
        }
        if self.n_mels == 0 || self.sample_rate == 0 {
            return bad("n_mels and sample_rate must be positive".into());
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return bad(format!("need 0 <= fmin < fmax <= sample_rate/2 (fmin={}, fmax={})", self.fmin, self.fmax));
        }
        if self.log_floor <= 0.0 {
            return bad(format!("log_floor {} must be positive", self.log_floor));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// FNV-1a over the canonical JSON form; tags cached features.
    pub fn hash(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serializes");
        text.bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
    }

    /// Waveform length that yields exactly `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        (frames.max(1) - 1) * self.hop + self.n_fft
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `n_mels x (n_fft/2 + 1)` triangular filters on HTK mel spacing, peak 1.
pub fn mel_filterbank(cfg: &MelConfig) -> Mat {
    let n_bins = cfg.n_bins();
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    Array2::from_shape_fn((cfg.n_mels, n_bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let up = (f - left) / (centre - left);
        let down = (right - f) / (right - centre);
        up.min(down).max(0.0)
    })
}

/// Periodic Hann of length `win`, zero-padded symmetrically to `n_fft`.
fn analysis_window(cfg: &MelConfig) -> Vec<f64> {
    let mut w = vec![0.0; cfg.n_fft];
    let off = (cfg.n_fft - cfg.win) / 2;
    for i in 0..cfg.win {
        w[off + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.win as f64).cos();
    }
    w
}

pub fn frame_count(len: usize, cfg: &MelConfig) -> Result<usize> {
    if len < cfg.n_fft {
        return Err(Error::InputTooShort { len, n_fft: cfg.n_fft });
    }
    Ok(1 + (len - cfg.n_fft) / cfg.hop)
}

struct Stft {
    cfg: MelConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    fn new(cfg: &MelConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            cfg: cfg.clone(),
            window: analysis_window(cfg),
            forward: planner.plan_fft_forward(cfg.n_fft),
            inverse: planner.plan_fft_inverse(cfg.n_fft),
        }
    }

    /// Complex spectra, `n_bins x T`. Frames start at `t * hop`; no centering.
    fn analyze(&self, x: &[f64]) -> Result<Array2<Complex64>> {
        let n = self.cfg.n_fft;
        let frames = frame_count(x.len(), &self.cfg)?;
        let mut out = Array2::zeros((self.cfg.n_bins(), frames));
        let mut buf = vec![Complex64::default(); n];
        for t in 0..frames {
            let start = t * self.cfg.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[start + i] * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            for (k, v) in buf.iter().take(self.cfg.n_bins()).enumerate() {
                out[[k, t]] = *v;
            }
        }
        Ok(out)
    }

    /// Least-squares inverse (weighted overlap-add divided by the summed
    /// squared window).
    fn synthesize(&self, spec: &Array2<Complex64>) -> Vec<f64> {
        let n = self.cfg.n_fft;
        let frames = spec.ncols();
        let len = self.cfg.samples_for_frames(frames);
        let mut acc = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::default(); n];
        for t in 0..frames {
            for k in 0..n {
                buf[k] = if k < self.cfg.n_bins() {
                    spec[[k, t]]
                } else {
                    spec[[n - k, t]].conj()
                };
            }
            // DC and Nyquist must be real for a real frame
            buf[0].im = 0.0;
            if n % 2 == 0 {
                buf[n / 2].im = 0.0;
            }
            self.inverse.process(&mut buf);
            let start = t * self.cfg.hop;
            for i in 0..n {
                let w = self.window[i];
                acc[start + i] += w * buf[i].re / n as f64;
                norm[start + i] += w * w;
            }
        }
        acc.iter()
            .zip(&norm)
            .map(|(&a, &z)| if z > 1e-10 { a / z } else { 0.0 })
            .collect()
    }
}

/// Magnitude spectrogram `|STFT(x)|`, `n_bins x T`.
pub fn stft_magnitude(x: &[f64], cfg: &MelConfig) -> Result<Mat> {
    Ok(Stft::new(cfg).analyze(x)?.mapv(|c| c.norm()))
}

/// Log-mel spectrogram, `n_mels x T`.
pub fn extract_mel(w: &Waveform, cfg: &MelConfig) -> Result<AcousticFeature> {
    cfg.validate()?;
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::InvalidConfig(format!(
            "waveform sample rate {} does not match configured {}",
            w.sample_rate, cfg.sample_rate
        )));
    }
    let mag = stft_magnitude(&w.samples, cfg)?;
    let mel = mel_filterbank(cfg).dot(&mag).mapv(|v| v.max(cfg.log_floor).ln());
    Ok(AcousticFeature::new(mel, FeatureKind::Mel).with_meta(cfg.frame_rate(), cfg.sample_rate, cfg.hash()))
}

/// Linear magnitudes from log-mel frames by per-frame non-negative least
/// squares against the filterbank.
pub fn mel_to_linear(mel: &Mat, cfg: &MelConfig) -> Mat {
    let fb = mel_filterbank(cfg);
    let solver = Nnls::new(&fb);
    let mut out = Mat::zeros((cfg.n_bins(), mel.ncols()));
    for (t, col) in mel.columns().into_iter().enumerate() {
        let energy: Vec<f64> = col.iter().map(|&v| v.exp()).collect();
        let x = solver.solve(&energy);
        out.column_mut(t).assign(&ndarray::ArrayView1::from(&x));
    }
    out
}

/// Griffin-Lim resynthesis from a log-mel feature, zero initial phase.
pub fn griffin_lim(f: &AcousticFeature, cfg: &MelConfig, iters: usize) -> Result<Waveform> {
    Ok(griffin_lim_traced(f, cfg, iters, None)?.0)
}

/// Griffin-Lim that also returns `|| |STFT(x_k)| - S ||` for every iterate
/// `k = 0..=iters`. `seed` selects a random initial phase instead of zero.
pub fn griffin_lim_traced(
    f: &AcousticFeature,
    cfg: &MelConfig,
    iters: usize,
    seed: Option<u64>,
) -> Result<(Waveform, Vec<f64>)> {
    if f.kind != FeatureKind::Mel {
        return Err(Error::KindMismatch {
            expected: FeatureKind::Mel.to_string(),
            got: f.kind.to_string(),
        });
    }
    if f.data.nrows() != cfg.n_mels {
        return Err(Error::ShapeMismatch(format!(
            "feature has {} bins, config expects {}",
            f.data.nrows(),
            cfg.n_mels
        )));
    }
    cfg.validate()?;
    let target = mel_to_linear(&f.data, cfg);
    let stft = Stft::new(cfg);
    let mut spec = match seed {
        None => target.mapv(|m| Complex64::new(m, 0.0)),
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            target.mapv(|m| Complex64::from_polar(m, rng.gen_range(0.0..2.0 * PI)))
        }
    };
    let mut x = stft.synthesize(&spec);
    let mut trace = Vec::with_capacity(iters + 1);
    for k in 0..=iters {
        let analysed = stft.analyze(&x)?;
        let err = analysed
            .iter()
            .zip(target.iter())
            .map(|(c, &m)| (c.norm() - m).powi(2))
            .sum::<f64>()
            .sqrt();
        trace.push(err);
        if k == iters {
            break;
        }
        spec = ndarray::Zip::from(&analysed).and(&target).map_collect(|c, &m| {
            let r = c.norm();
            if r > 1e-12 {
                c * (m / r)
            } else {
                Complex64::new(m, 0.0)
            }
        });
        x = stft.synthesize(&spec);
    }
    let peak = x.iter().fold(0.0f64, |p, v| p.max(v.abs()));
    if peak > 1.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
    Ok((Waveform::new(x, cfg.sample_rate), trace))
}
