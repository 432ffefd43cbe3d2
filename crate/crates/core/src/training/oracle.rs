//! DFT-peak oracle for toy audio: per-frame pitch, phoneme labels and
//! pitch slopes, computed directly from samples.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::toy::{contour_semitones, BASE_HZ};
use crate::features::{MelConfig, Waveform};
use crate::model::Durations;
use crate::text::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameLabel {
    Silence,
    Phoneme(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub sample_rate: u32,
    pub hop: usize,
    /// Sample index of frame 0's centre; frame `t` is centred `t*hop` later.
    pub origin: usize,
    /// Zero-padded DFT length for peak picking.
    pub dft_len: usize,
    /// Frames below this fraction of the loudest frame's RMS are silent.
    pub silence_ratio: f64,
    pub min_hz: f64,
    pub max_hz: f64,
}

impl Oracle {
    pub fn new(mel: &MelConfig) -> Self {
        Self {
            sample_rate: mel.sample_rate,
            hop: mel.hop,
            origin: mel.n_fft / 2,
            dft_len: 8192,
            silence_ratio: 0.25,
            min_hz: 100.0,
            max_hz: 4000.0,
        }
    }

    /// Oracle for audio trimmed to `T*hop` samples, where frame `t` covers
    /// `[t*hop, (t+1)*hop)`.
    pub fn trimmed(mel: &MelConfig) -> Self {
        Self {
            origin: mel.hop / 2,
            ..Self::new(mel)
        }
    }

    /// Peak frequency of every frame, `None` where the frame is silent. The
    /// window is a hop-long Hann centred on `t*hop + origin`.
    pub fn frame_pitch(&self, w: &Waveform, frames: usize) -> Vec<Option<f64>> {
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(self.dft_len);
        let win: Vec<f64> = (0..self.hop)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / self.hop as f64).cos())
            .collect();
        let mut rms = Vec::with_capacity(frames);
        let mut peaks = Vec::with_capacity(frames);
        let lo = (self.min_hz * self.dft_len as f64 / self.sample_rate as f64).floor() as usize;
        let hi = ((self.max_hz * self.dft_len as f64 / self.sample_rate as f64).ceil() as usize).min(self.dft_len / 2 - 1);
        let mut buf = vec![Complex64::default(); self.dft_len];
        for t in 0..frames {
            let start = (t * self.hop + self.origin) as isize - (self.hop / 2) as isize;
            buf.iter_mut().for_each(|b| *b = Complex64::default());
            let mut energy = 0.0;
            for (i, &wv) in win.iter().enumerate() {
                let idx = start + i as isize;
                let s = if idx >= 0 && (idx as usize) < w.samples.len() {
                    w.samples[idx as usize]
                } else {
                    0.0
                };
                energy += s * s;
                buf[i] = Complex64::new(s * wv, 0.0);
            }
            rms.push((energy / self.hop as f64).sqrt());
            fft.process(&mut buf);
            let mag: Vec<f64> = buf[..=hi + 1].iter().map(|c| c.norm()).collect();
            let k = (lo.max(1)..=hi)
                .max_by(|&a, &b| mag[a].total_cmp(&mag[b]))
                .expect("non-empty search band");
            // parabolic interpolation on log magnitude
            let (a, b, c) = (mag[k - 1].max(1e-300).ln(), mag[k].max(1e-300).ln(), mag[k + 1].max(1e-300).ln());
            let denom = a - 2.0 * b + c;
            let delta = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
            peaks.push((k as f64 + delta.clamp(-0.5, 0.5)) * self.sample_rate as f64 / self.dft_len as f64);
        }
        let loudest = rms.iter().cloned().fold(0.0, f64::max);
        peaks
            .into_iter()
            .zip(rms)
            .map(|(p, r)| (loudest > 0.0 && r >= self.silence_ratio * loudest).then_some(p))
            .collect()
    }

    /// Ground-truth label and style of every frame.
    pub fn reference(&self, tokens: &TokenSequence, durations: &Durations, separator_id: usize) -> Vec<(FrameLabel, usize, f64)> {
        let mut out = Vec::with_capacity(durations.total());
        for (i, &d) in durations.frames().iter().enumerate() {
            let p = tokens.phoneme_ids[i];
            let label = if p == 0 || p == separator_id {
                FrameLabel::Silence
            } else {
                FrameLabel::Phoneme(p)
            };
            for j in 0..d {
                out.push((label, tokens.style_ids[i], (j as f64 + 0.5) / d as f64));
            }
        }
        out
    }

    /// Labels each frame with the nearest candidate phoneme after removing the
    /// reference style contour, or silence.
    pub fn classify(
        &self,
        w: &Waveform,
        tokens: &TokenSequence,
        durations: &Durations,
        separator_id: usize,
        candidates: &[usize],
    ) -> Vec<FrameLabel> {
        let reference = self.reference(tokens, durations, separator_id);
        let pitch = self.frame_pitch(w, reference.len());
        pitch
            .iter()
            .zip(&reference)
            .map(|(p, &(_, style, u))| match p {
                None => FrameLabel::Silence,
                Some(hz) => {
                    let rank = 24.0 * (hz / BASE_HZ).log2() - 2.0 * contour_semitones(style, u);
                    let best = candidates
                        .iter()
                        .min_by(|&&a, &&b| {
                            let da = (rank - (a as f64 - 2.0)).abs();
                            let db = (rank - (b as f64 - 2.0)).abs();
                            da.total_cmp(&db)
                        })
                        .copied();
                    best.map_or(FrameLabel::Silence, FrameLabel::Phoneme)
                }
            })
            .collect()
    }

    /// Fraction of frames whose oracle label matches the reference.
    pub fn frame_accuracy(
        &self,
        w: &Waveform,
        tokens: &TokenSequence,
        durations: &Durations,
        separator_id: usize,
        candidates: &[usize],
    ) -> (usize, usize) {
        let reference = self.reference(tokens, durations, separator_id);
        let labels = self.classify(w, tokens, durations, separator_id, candidates);
        let hits = labels.iter().zip(&reference).filter(|(a, b)| **a == b.0).count();
        (hits, reference.len())
    }

    /// Least-squares slope, in semitones per frame, of the measured pitch over
    /// the frames of token `index`.
    pub fn token_slope(&self, w: &Waveform, durations: &Durations, index: usize) -> Option<f64> {
        let start: usize = durations.frames()[..index].iter().sum();
        let d = durations.frames()[index];
        let pitch = self.frame_pitch(w, start + d);
        let pts: Vec<(f64, f64)> = (start..start + d)
            .filter_map(|t| pitch[t].map(|hz| (t as f64, 12.0 * (hz / BASE_HZ).log2())))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}
