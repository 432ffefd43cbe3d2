//! End-to-end inference: tokens to acoustic features to waveform, plus the
//! stage-timing benchmark.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{griffin_lim, FeatureKind, Waveform};
use crate::model::{AcousticFeature, Durations, ParameterBreakdown};
use crate::text::{Language, TokenSequence, Tokenizer};
use crate::training::batch::downsample_durations;
use crate::training::checkpoint::Checkpoint;
use crate::training::toy::{toy_durations, ToyConfig, TOY_WORDS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageTimings {
    pub acoustic_ms: f64,
    /// Latent models only.
    pub ae_decoder_ms: Option<f64>,
    pub griffin_lim_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub tokens: TokenSequence,
    /// Per-token durations in model frames.
    pub durations: Durations,
    pub feature: AcousticFeature,
    /// Mel frames fed to the vocoder.
    pub frames: usize,
    /// `frames * hop` samples; frame `t` covers `[t*hop, (t+1)*hop)`.
    pub waveform: Waveform,
    pub timings: StageTimings,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

pub struct Synthesizer<'a> {
    pub checkpoint: &'a Checkpoint,
    pub tokenizer: &'a Tokenizer,
    pub gl_iters: usize,
}

impl<'a> Synthesizer<'a> {
    /// Checks that the checkpoint's model and vocoder fit together.
    pub fn new(checkpoint: &'a Checkpoint, tokenizer: &'a Tokenizer, gl_iters: usize) -> Result<Self> {
        let cfg = &checkpoint.model.config;
        let mel_dim = match (cfg.feature_kind, &checkpoint.autoencoder) {
            (FeatureKind::Mel, _) => cfg.feature_dim,
            (FeatureKind::Latent, Some(ae)) => {
                if ae.config.latent_dim != cfg.feature_dim {
                    return Err(Error::Checkpoint(format!(
                        "model predicts {} latent channels, autoencoder expects {}",
                        cfg.feature_dim, ae.config.latent_dim
                    )));
                }
                ae.config.in_channels
            }
            (FeatureKind::Latent, None) => {
                return Err(Error::Checkpoint("latent model checkpoint carries no autoencoder".into()));
            }
        };
        if mel_dim != checkpoint.mel.n_mels {
            return Err(Error::Checkpoint(format!(
                "vocoder input has {mel_dim} channels but the mel configuration has {}",
                checkpoint.mel.n_mels
            )));
        }
        if tokenizer.inventory(cfg.scheme).len() != cfg.phoneme_vocab || tokenizer.styles().len() != cfg.style_vocab {
            return Err(Error::Checkpoint("checkpoint vocabulary does not match the tokenizer".into()));
        }
        Ok(Self {
            checkpoint,
            tokenizer,
            gl_iters,
        })
    }

    /// Mel frames per model frame.
    pub fn frames_per_step(&self) -> usize {
        self.checkpoint.autoencoder.as_ref().map_or(1, |ae| ae.ratio())
    }

    pub fn tokenize(&self, text: &str, language: Language) -> Result<TokenSequence> {
        self.tokenizer.tokenize(text, language, self.checkpoint.model.config.scheme)
    }

    /// Synthesizes `tokens`. `mel_durations`, when given, are per-token mel
    /// frame counts (as in a manifest); otherwise durations are predicted.
    pub fn run(&self, tokens: &TokenSequence, mel_durations: Option<&[usize]>) -> Result<SynthOutput> {
        let given = match mel_durations {
            Some(d) => {
                if d.len() != tokens.len() {
                    return Err(Error::LengthMismatch {
                        durations: d.len(),
                        tokens: tokens.len(),
                    });
                }
                Some(Durations::new(downsample_durations(d, self.frames_per_step())))
            }
            None => None,
        };
        let t0 = Instant::now();
        let syn = self.checkpoint.model.synthesize(tokens, given.as_ref())?;
        let acoustic_ms = ms(t0);
        let (waveform, frames, ae_decoder_ms, griffin_lim_ms) = self.vocode(&syn.feature)?;
        Ok(SynthOutput {
            tokens: tokens.clone(),
            durations: syn.durations,
            feature: syn.feature,
            frames,
            waveform,
            timings: StageTimings {
                acoustic_ms,
                ae_decoder_ms,
                griffin_lim_ms,
            },
        })
    }

    /// Feature to waveform, returning the mel frame count and stage times.
    pub fn vocode(&self, feature: &AcousticFeature) -> Result<(Waveform, usize, Option<f64>, f64)> {
        let mel_cfg = &self.checkpoint.mel;
        let (mel, ae_ms) = match &self.checkpoint.autoencoder {
            Some(ae) if feature.kind == FeatureKind::Latent => {
                let t = Instant::now();
                let data = ae.decode(feature)?;
                (AcousticFeature::new(data, FeatureKind::Mel), Some(ms(t)))
            }
            _ => (feature.clone(), None),
        };
        let t = Instant::now();
        let full = griffin_lim(&mel, mel_cfg, self.gl_iters)?;
        let gl_ms = ms(t);
        let frames = mel.frames();
        let off = (mel_cfg.n_fft - mel_cfg.hop) / 2;
        let samples = full.samples[off..off + frames * mel_cfg.hop].to_vec();
        Ok((Waveform::new(samples, mel_cfg.sample_rate), frames, ae_ms, gl_ms))
    }
}

/// Median of a non-empty sample.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub text: String,
    pub frames: usize,
    pub audio_seconds: f64,
    pub repeat: usize,
    pub acoustic_ms: f64,
    pub ae_decoder_ms: Option<f64>,
    pub griffin_lim_ms: f64,
    pub breakdown: ParameterBreakdown,
    pub model_params: usize,
    pub ae_decoder_params: Option<usize>,
    pub ae_decoder_params_closed_form: Option<usize>,
}

impl BenchReport {
    /// Closed-form counts agree with the counted tensors.
    pub fn counts_match(&self) -> bool {
        self.breakdown.total() == self.model_params && self.ae_decoder_params == self.ae_decoder_params_closed_form
    }

    /// Fixed-column table: one row per inference stage, then the acoustic
    /// model's parameter breakdown.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let line = |out: &mut String, name: &str, ms: String, params: String| {
            out.push_str(&format!("{name:<24}{ms:>16}{params:>16}\n"));
        };
        line(&mut out, "Stage", "Inference (ms)".into(), "# Parameter".into());
        line(&mut out, "Acoustic model", format!("{:.2}", self.acoustic_ms), self.model_params.to_string());
        if let (Some(t), Some(p)) = (self.ae_decoder_ms, self.ae_decoder_params) {
            line(&mut out, "AE Decoder", format!("{t:.2}"), p.to_string());
        }
        line(&mut out, "Griffin-Lim", format!("{:.2}", self.griffin_lim_ms), "0".into());
        out.push('\n');
        let b = &self.breakdown;
        line(&mut out, "Component", "".into(), "# Parameter".into());
        for (name, n) in [
            ("Embeddings", b.embeddings),
            ("Encoders", b.encoders),
            ("Duration predictor", b.duration_predictor),
            ("Decoder", b.decoder),
            ("Total (closed form)", b.total()),
        ] {
            line(&mut out, name, "".into(), n.to_string());
        }
        out.push_str(&format!(
            "\n{} frames, {:.3} s audio, median of {} runs, counts {}\n",
            self.frames,
            self.audio_seconds,
            self.repeat,
            if self.counts_match() { "match" } else { "MISMATCH" }
        ));
        out
    }
}

/// Times synthesis of about `seconds` of audio `repeat` times. The text is
/// drawn from the toy vocabulary with fixed per-token durations so every
/// checkpoint is timed on the same workload.
pub fn bench(synth: &Synthesizer, seconds: f64, repeat: usize) -> Result<BenchReport> {
    if repeat == 0 || !(seconds > 0.0) {
        return Err(Error::InvalidConfig("bench needs seconds > 0 and repeat >= 1".into()));
    }
    let mel = &synth.checkpoint.mel;
    let target = (seconds * mel.frame_rate()).ceil() as usize;
    let toy = ToyConfig {
        mel: mel.clone(),
        ..ToyConfig::default()
    };
    let sep = synth.tokenizer.inventory(synth.checkpoint.model.config.scheme).separator_id();
    let mut words = Vec::new();
    let (tokens, durations) = loop {
        words.push(TOY_WORDS[words.len() % TOY_WORDS.len()]);
        let text = words.join(" ");
        let tokens = synth.tokenize(&text, Language::En)?;
        let d = toy_durations(&tokens, sep, &toy);
        if d.total() >= target {
            break (tokens, d);
        }
    };
    let (mut ac, mut ae, mut gl) = (Vec::new(), Vec::new(), Vec::new());
    let mut frames = 0;
    for _ in 0..repeat {
        let out = synth.run(&tokens, Some(durations.frames()))?;
        frames = out.frames;
        ac.push(out.timings.acoustic_ms);
        gl.push(out.timings.griffin_lim_ms);
        if let Some(t) = out.timings.ae_decoder_ms {
            ae.push(t);
        }
    }
    let model = &synth.checkpoint.model;
    let ae_model = synth.checkpoint.autoencoder.as_ref();
    Ok(BenchReport {
        text: words.join(" "),
        frames,
        audio_seconds: (frames * mel.hop) as f64 / mel.sample_rate as f64,
        repeat,
        acoustic_ms: median(&ac),
        ae_decoder_ms: (!ae.is_empty()).then(|| median(&ae)),
        griffin_lim_ms: median(&gl),
        breakdown: model.config.parameter_breakdown(),
        model_params: model.parameter_count(),
        ae_decoder_params: ae_model.map(|a| a.decoder_param_count()),
        ae_decoder_params_closed_form: ae_model.map(|a| a.config.decoder_param_count()),
    })
}
