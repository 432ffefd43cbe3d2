//! Text front end: normalization, lexicon and pinyin handling, and the two
//! tokenization schemes (plain alphabet, IPA phonemes with a parallel style row).

mod inventory;
mod lexicon;
mod normalize;
mod numbers;
mod pinyin;
mod tokenizer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use inventory::{LanguageTag, PhonemeEntry, PhonemeInventory, StyleEntry, StyleInventory, StyleKind};
pub use lexicon::{ArpabetPhone, Lexicon};
pub use normalize::normalize;
pub use numbers::number_to_words;
pub use pinyin::{parse_syllable, Syllable};
pub use tokenizer::{TokenSequence, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::En => "en",
            Language::Zh => "zh",
        })
    }
}

impl FromStr for Language {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "en" => Ok(Language::En),
            "zh" => Ok(Language::Zh),
            other => Err(format!("unknown language {other:?} (expected en or zh)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Alphabet,
    Ipa,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Alphabet => "alphabet",
            Scheme::Ipa => "ipa",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "alphabet" => Ok(Scheme::Alphabet),
            "ipa" => Ok(Scheme::Ipa),
            other => Err(format!("unknown scheme {other:?} (expected alphabet or ipa)")),
        }
    }
}
