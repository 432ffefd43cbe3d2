//! Acoustic features: WAV I/O, log-mel extraction, Griffin-Lim resynthesis,
//! the binary feature cache and the convolutional autoencoder.

mod autoencoder;
mod cache;
mod mel;
mod nnls;
mod wav;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use autoencoder::{snr_db, train_autoencoder, AeConfig, AeDomain, AeTrainConfig, AeTrainReport, Autoencoder};
pub use cache::{decode_feature, encode_feature, read_feature, write_feature, CACHE_MAGIC, CACHE_VERSION};
pub use mel::{
    extract_mel, frame_count, griffin_lim, griffin_lim_traced, hz_to_mel, mel_filterbank, mel_to_hz, mel_to_linear,
    stft_magnitude, MelConfig,
};
pub use nnls::nnls;
pub use wav::{read_wav, write_wav, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mel,
    Latent,
}

impl FeatureKind {
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Mel => 0,
            FeatureKind::Latent => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Mel),
            1 => Some(FeatureKind::Latent),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Mel => "mel",
            FeatureKind::Latent => "latent",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mel" => Ok(FeatureKind::Mel),
            "latent" => Ok(FeatureKind::Latent),
            other => Err(format!("unknown feature kind {other:?} (expected mel or latent)")),
        }
    }
}
