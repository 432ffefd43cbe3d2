use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{write_manifest, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{write_wav, MelConfig, Waveform};
use crate::model::Durations;
use crate::text::{Language, TokenSequence, Tokenizer};

/// English words of the toy vocabulary (all in the bundled lexicon).
pub const TOY_WORDS: &[&str] = &["guy", "two", "zoo", "lie", "lose", "too", "tie", "shy"];
/// Toneless pinyin bases; each utterance picks tones for them.
pub const TOY_SYLLABLES: &[&str] = &["cuan", "wan", "ya", "qiang", "dang", "yue", "yang", "dai"];

pub const BASE_HZ: f64 = 220.0;

/// Rendering parameters for the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub mel: MelConfig,
    pub phoneme_frames: usize,
    pub separator_frames: usize,
    pub amplitude: f64,
    /// Raised-cosine ramp at the edges of every voiced segment, in samples.
    pub ramp: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::desk(),
            phoneme_frames: 8,
            separator_frames: 4,
            amplitude: 0.3,
            ramp: 32,
        }
    }
}

/// Frequency of phoneme id `id`: quarter-tone steps above 220 Hz by inventory
/// rank (ids 0 and 1 are pad and separator).
pub fn phoneme_hz(id: usize) -> f64 {
    BASE_HZ * 2f64.powf(id.saturating_sub(2) as f64 / 24.0)
}

/// Pitch offset in semitones at relative position `u` in a token.
pub fn contour_semitones(style_id: usize, u: f64) -> f64 {
    match style_id {
        // tone1 .. tone5
        2 => 0.0,
        3 => 4.0 * u,
        4 => -4.0 * (1.0 - (2.0 * u - 1.0).abs()),
        5 => -4.0 * u,
        6 => -2.0,
        _ => 0.0,
    }
}

pub fn stress_gain(style_id: usize) -> f64 {
    match style_id {
        7 => 0.6,
        9 => 1.3,
        _ => 1.0,
    }
}

/// Fixed frame counts: separators get `separator_frames`, phonemes
/// `phoneme_frames`, pads zero.
pub fn toy_durations(tokens: &TokenSequence, separator_id: usize, cfg: &ToyConfig) -> Durations {
    Durations::new(
        tokens
            .phoneme_ids
            .iter()
            .map(|&p| match p {
                0 => 0,
                p if p == separator_id => cfg.separator_frames,
                _ => cfg.phoneme_frames,
            })
            .collect(),
    )
}

/// Renders tokens as sine segments with continuous phase. A token covering
/// frames `[a, a + d)` owns samples `[a*hop + off, (a+d)*hop + off)` with
/// `off = (n_fft - hop) / 2`, so every analysis frame is centred on the token
/// it belongs to.
pub fn render(tokens: &TokenSequence, durations: &Durations, separator_id: usize, cfg: &ToyConfig) -> Waveform {
    let hop = cfg.mel.hop;
    let sr = cfg.mel.sample_rate as f64;
    let total = durations.total();
    let len = cfg.mel.samples_for_frames(total);
    let off = (cfg.mel.n_fft - hop) / 2;
    let mut samples = vec![0.0; len];
    let mut phase = 0.0f64;
    let mut frame = 0;
    for (i, &d) in durations.frames().iter().enumerate() {
        let (p, s) = (tokens.phoneme_ids[i], tokens.style_ids[i]);
        let start = frame * hop + off;
        let n = d * hop;
        frame += d;
        if p == 0 || p == separator_id || d == 0 {
            continue;
        }
        let gain = cfg.amplitude * stress_gain(s);
        let ramp = cfg.ramp.min(n / 2);
        for k in 0..n {
            let u = (k as f64 + 0.5) / n as f64;
            let hz = phoneme_hz(p) * 2f64.powf(contour_semitones(s, u) / 12.0);
            phase = (phase + 2.0 * PI * hz / sr) % (2.0 * PI);
            let edge = k.min(n - 1 - k);
            let env = if edge < ramp {
                0.5 - 0.5 * (PI * (edge as f64 + 0.5) / ramp as f64).cos()
            } else {
                1.0
            };
            samples[start + k] = gain * env * phase.sin();
        }
    }
    Waveform::new(samples, cfg.mel.sample_rate)
}

/// One synthetic utterance before it is written out.
#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub record: UtteranceRecord,
    pub tokens: TokenSequence,
    pub durations: Durations,
    pub audio: Waveform,
}

/// Draws utterance texts. Every third utterance is English; Mandarin ones
/// come in pairs that differ only in the tone of the first syllable (2 then 4).
pub fn toy_texts(n: usize, seed: u64) -> Vec<(Language, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut pending_twin: Option<String> = None;
    for i in 0..n {
        match i % 3 {
            0 => {
                let k = rng.gen_range(2..=3);
                let words: Vec<&str> = (0..k).map(|_| *TOY_WORDS.choose(&mut rng).expect("non-empty")).collect();
                out.push((Language::En, words.join(" ")));
            }
            1 => {
                let k = rng.gen_range(2..=3);
                let bases: Vec<&str> = (0..k).map(|_| *TOY_SYLLABLES.choose(&mut rng).expect("non-empty")).collect();
                let tail: Vec<String> = bases[1..].iter().map(|b| format!("{b}{}", rng.gen_range(1..=5))).collect();
                let text = |tone: u8| {
                    std::iter::once(format!("{}{tone}", bases[0]))
                        .chain(tail.iter().cloned())
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                pending_twin = Some(text(4));
                out.push((Language::Zh, text(2)));
            }
            _ => {
                let twin = pending_twin.take().expect("twin follows its pair");
                out.push((Language::Zh, twin));
            }
        }
    }
    out
}

/// Builds the corpus in memory: texts, IPA tokens, exact durations and audio.
pub fn build_toy_corpus(n: usize, seed: u64, tokenizer: &Tokenizer, cfg: &ToyConfig) -> Result<Vec<ToyUtterance>> {
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    let sep = tokenizer.inventory(crate::text::Scheme::Ipa).separator_id();
    toy_texts(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, (language, text))| {
            let tokens = tokenizer.tokenize_ipa(&text, language)?;
            let durations = toy_durations(&tokens, sep, cfg);
            let audio = render(&tokens, &durations, sep, cfg);
            let id = format!("toy_{i:04}");
            Ok(ToyUtterance {
                record: UtteranceRecord {
                    audio_path: format!("wavs/{id}.wav"),
                    id,
                    language,
                    text,
                    durations: Some(durations.frames().to_vec()),
                },
                tokens,
                durations,
                audio,
            })
        })
        .collect()
}

/// Writes `manifest.jsonl` and `wavs/*.wav` under `out_dir`.
pub fn generate_toy_corpus(
    n: usize,
    seed: u64,
    out_dir: &Path,
    tokenizer: &Tokenizer,
    cfg: &ToyConfig,
) -> Result<Vec<UtteranceRecord>> {
    let corpus = build_toy_corpus(n, seed, tokenizer, cfg)?;
    let wav_dir = out_dir.join("wavs");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut records = Vec::with_capacity(corpus.len());
    for utt in corpus {
        write_wav(out_dir.join(&utt.record.audio_path), &utt.audio)?;
        records.push(utt.record);
    }
    write_manifest(out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}

/// Phoneme ids that the toy vocabulary can produce.
pub fn toy_phoneme_ids(tokenizer: &Tokenizer) -> Vec<usize> {
    let sep = tokenizer.inventory(crate::text::Scheme::Ipa).separator_id();
    let mut ids: Vec<usize> = TOY_WORDS
        .iter()
        .map(|w| tokenizer.tokenize_ipa(w, Language::En))
        .chain(TOY_SYLLABLES.iter().map(|s| tokenizer.tokenize_ipa(&format!("{s}1"), Language::Zh)))
        .flat_map(|t| t.expect("toy vocabulary tokenizes").phoneme_ids)
        .filter(|&p| p != 0 && p != sep)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Style id of the tone in a style row, if any.
pub fn tone_of(style_id: usize) -> Option<u8> {
    (2..=6).contains(&style_id).then(|| (style_id - 1) as u8)
}
