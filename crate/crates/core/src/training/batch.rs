use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::UtteranceRecord;
use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::features::{extract_mel, read_feature, read_wav, write_feature, Autoencoder, FeatureKind, MelConfig};
use crate::model::{AcousticFeature, Durations};
use crate::text::{Scheme, StyleInventory, TokenSequence, Tokenizer};

/// Cached acoustic features keyed by record id.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    features: HashMap<String, AcousticFeature>,
    /// Analysis frames per feature frame. Manifest durations count analysis
    /// frames, so latent features (one frame per R mel frames) use R here.
    pub frames_per_step: usize,
}

impl FeatureStore {
    pub fn new(frames_per_step: usize) -> Self {
        Self {
            features: HashMap::new(),
            frames_per_step: frames_per_step.max(1),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, feature: AcousticFeature) {
        self.features.insert(id.into(), feature);
    }

    /// Loads `<dir>/<id>.lstf` for every record; absent files are skipped and
    /// surface as `MissingFeature` when batched.
    pub fn load_dir(dir: &Path, records: &[UtteranceRecord], frames_per_step: usize) -> Result<Self> {
        let mut store = Self::new(frames_per_step);
        for r in records {
            let path = feature_path(dir, &r.id);
            if path.exists() {
                store.insert(r.id.clone(), read_feature(&path)?);
            }
        }
        Ok(store)
    }

    pub fn get(&self, id: &str) -> Result<&AcousticFeature> {
        self.features.get(id).ok_or_else(|| Error::MissingFeature(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

pub fn feature_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}.lstf"))
}

pub const FEATURE_INFO_FILE: &str = "features.json";

/// Description of a feature cache directory, stored next to the features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetInfo {
    pub kind: FeatureKind,
    pub dim: usize,
    pub frames_per_step: usize,
    pub mel: MelConfig,
    pub count: usize,
}

impl FeatureSetInfo {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FEATURE_INFO_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(FEATURE_INFO_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidData {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// Log-mel features of every record's audio.
pub fn corpus_mels(records: &[UtteranceRecord], manifest_dir: &Path, mel: &MelConfig) -> Result<Vec<Mat>> {
    records
        .iter()
        .map(|r| {
            let w = read_wav(r.resolve_audio(manifest_dir))?;
            Ok(extract_mel(&w, mel)?.data)
        })
        .collect()
}

/// Extracts (and, with an autoencoder, encodes) every record's features into
/// `out_dir/<id>.lstf` and writes the directory description.
pub fn extract_features(
    records: &[UtteranceRecord],
    manifest_dir: &Path,
    mel: &MelConfig,
    autoencoder: Option<&Autoencoder>,
    out_dir: &Path,
) -> Result<FeatureSetInfo> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut dim = 0;
    for r in records {
        let w = read_wav(r.resolve_audio(manifest_dir))?;
        let m = extract_mel(&w, mel)?;
        let f = match autoencoder {
            Some(ae) => {
                let (z, _) = ae.encode(&m.data)?;
                z.with_meta(mel.frame_rate() / ae.ratio() as f64, mel.sample_rate, mel.hash())
            }
            None => m,
        };
        dim = f.dim();
        write_feature(feature_path(out_dir, &r.id), &f)?;
    }
    let info = FeatureSetInfo {
        kind: if autoencoder.is_some() { FeatureKind::Latent } else { FeatureKind::Mel },
        dim,
        frames_per_step: autoencoder.map_or(1, |ae| ae.ratio()),
        mel: mel.clone(),
        count: records.len(),
    };
    info.write(out_dir)?;
    Ok(info)
}

/// Converts analysis-frame durations to feature frames of `r` analysis
/// frames each, rounding token boundaries to the nearest feature frame.
pub fn downsample_durations(frames: &[usize], r: usize) -> Vec<usize> {
    if r <= 1 {
        return frames.to_vec();
    }
    let mut out = Vec::with_capacity(frames.len());
    let (mut cum, mut prev) = (0usize, 0usize);
    for &f in frames {
        cum += f;
        let boundary = (cum + r / 2) / r;
        out.push(boundary - prev);
        prev = boundary;
    }
    out
}

/// Padded training batch. Every per-item vector has the batch's maximum
/// length; masks mark the real positions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub tokens: Vec<TokenSequence>,
    pub token_masks: Vec<Vec<bool>>,
    pub durations: Vec<Durations>,
    pub features: Vec<Mat>,
    pub frame_masks: Vec<Vec<bool>>,
    pub kind: FeatureKind,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.tokens.first().map_or(0, TokenSequence::len)
    }

    pub fn max_frames(&self) -> usize {
        self.features.first().map_or(0, Mat::ncols)
    }

    /// Real frame count of item `i`.
    pub fn frames(&self, i: usize) -> usize {
        self.durations[i].total()
    }
}

pub fn make_batch(records: &[UtteranceRecord], tokenizer: &Tokenizer, scheme: Scheme, store: &FeatureStore) -> Result<Batch> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut items = Vec::with_capacity(records.len());
    for r in records {
        let tokens = tokenizer.tokenize(&r.text, r.language, scheme)?;
        let feature = store.get(&r.id)?;
        let raw = r.durations.as_ref().ok_or_else(|| Error::MissingDurations(r.id.clone()))?;
        if raw.len() != tokens.len() {
            return Err(Error::LengthMismatch {
                durations: raw.len(),
                tokens: tokens.len(),
            });
        }
        let d = downsample_durations(raw, store.frames_per_step);
        let sum: usize = d.iter().sum();
        if sum != feature.frames() {
            return Err(Error::DurationMismatch {
                id: r.id.clone(),
                sum,
                frames: feature.frames(),
            });
        }
        items.push((r, tokens, d, feature));
    }
    let kind = items[0].3.kind;
    let dim = items[0].3.dim();
    if let Some(bad) = items.iter().find(|it| it.3.kind != kind || it.3.dim() != dim) {
        return Err(Error::ShapeMismatch(format!(
            "record {:?} has a {} feature of dim {}, batch expects {kind} of dim {dim}",
            bad.0.id,
            bad.3.kind,
            bad.3.dim()
        )));
    }
    let max_len = items.iter().map(|it| it.1.len()).max().unwrap_or(0);
    let max_frames = items.iter().map(|it| it.3.frames()).max().unwrap_or(0);
    let mut batch = Batch {
        ids: Vec::new(),
        tokens: Vec::new(),
        token_masks: Vec::new(),
        durations: Vec::new(),
        features: Vec::new(),
        frame_masks: Vec::new(),
        kind,
    };
    for (r, mut tokens, mut d, feature) in items {
        let (len, frames) = (tokens.len(), feature.frames());
        tokens.phoneme_ids.resize(max_len, 0);
        tokens.style_ids.resize(max_len, StyleInventory::PAD);
        d.resize(max_len, 0);
        let mut padded = Mat::zeros((dim, max_frames));
        padded.slice_mut(ndarray::s![.., ..frames]).assign(&feature.data);
        batch.ids.push(r.id.clone());
        batch.tokens.push(tokens);
        batch.token_masks.push((0..max_len).map(|i| i < len).collect());
        batch.durations.push(Durations::new(d));
        batch.features.push(padded);
        batch.frame_masks.push((0..max_frames).map(|t| t < frames).collect());
    }
    Ok(batch)
}
