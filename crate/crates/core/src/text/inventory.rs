use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::Scheme;
use crate::error::{Error, Result};

pub const PAD_SYMBOL: &str = "<pad>";
pub const SEPARATOR: &str = "|";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LanguageTag {
    Shared,
    EnglishOnly,
    ChineseOnly,
    Separator,
    Pad,
}

impl LanguageTag {
    pub fn as_str(self) -> &'static str {
        match self {
            LanguageTag::Shared => "shared",
            LanguageTag::EnglishOnly => "english-only",
            LanguageTag::ChineseOnly => "chinese-only",
            LanguageTag::Separator => "separator",
            LanguageTag::Pad => "pad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeEntry {
    pub symbol: String,
    pub tag: LanguageTag,
}

/// Ordered symbol table; ids are positions in `entries`.
#[derive(Debug, Clone)]
pub struct PhonemeInventory {
    scheme: Scheme,
    entries: Vec<PhonemeEntry>,
    index: HashMap<String, usize>,
}

impl PhonemeInventory {
    /// Parses an inventory file: one symbol per line in id order, pad first.
    ///
    /// `english` and `chinese` are the symbol sets producible from each
    /// language's mapping tables and decide the language tag of every entry.
    pub fn parse(
        text: &str,
        scheme: Scheme,
        english: &HashSet<String>,
        chinese: &HashSet<String>,
        origin: &str,
    ) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidData {
            path: origin.to_string(),
            reason,
        };
        let symbols: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if symbols.first() != Some(&PAD_SYMBOL) {
            return Err(invalid(format!("first line must be {PAD_SYMBOL}")));
        }
        let mut entries = Vec::with_capacity(symbols.len());
        let mut index = HashMap::with_capacity(symbols.len());
        for (id, &sym) in symbols.iter().enumerate() {
            let tag = if sym == PAD_SYMBOL {
                LanguageTag::Pad
            } else if sym == SEPARATOR {
                LanguageTag::Separator
            } else {
                match (english.contains(sym), chinese.contains(sym)) {
                    (true, true) => LanguageTag::Shared,
                    (true, false) => LanguageTag::EnglishOnly,
                    (false, true) => LanguageTag::ChineseOnly,
                    (false, false) if scheme == Scheme::Alphabet => LanguageTag::Shared,
                    (false, false) => {
                        return Err(invalid(format!("symbol {sym:?} is not produced by any mapping")))
                    }
                }
            };
            if index.insert(sym.to_string(), id).is_some() {
                return Err(invalid(format!("duplicate symbol {sym:?}")));
            }
            entries.push(PhonemeEntry {
                symbol: sym.to_string(),
                tag,
            });
        }
        if !index.contains_key(SEPARATOR) {
            return Err(invalid("missing separator symbol".into()));
        }
        Ok(Self {
            scheme,
            entries,
            index,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PhonemeEntry] {
        &self.entries
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.entries.get(id).map(|e| e.symbol.as_str())
    }

    pub fn pad_id(&self) -> usize {
        0
    }

    pub fn separator_id(&self) -> usize {
        self.index[SEPARATOR]
    }

    /// Number of speakable symbols (everything except pad and separator).
    pub fn phoneme_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| !matches!(e.tag, LanguageTag::Pad | LanguageTag::Separator))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleKind {
    Pad,
    None,
    Tone,
    Stress,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StyleEntry {
    pub marker: String,
    pub kind: StyleKind,
    pub display_digit: u8,
}

/// Fixed style vocabulary: pad, none, five tones, three stress levels.
#[derive(Debug, Clone)]
pub struct StyleInventory {
    entries: Vec<StyleEntry>,
}

impl Default for StyleInventory {
    fn default() -> Self {
        let mut entries = vec![
            StyleEntry {
                marker: PAD_SYMBOL.into(),
                kind: StyleKind::Pad,
                display_digit: 0,
            },
            StyleEntry {
                marker: "none".into(),
                kind: StyleKind::None,
                display_digit: 0,
            },
        ];
        for tone in 1..=5u8 {
            entries.push(StyleEntry {
                marker: format!("tone{tone}"),
                kind: StyleKind::Tone,
                display_digit: tone,
            });
        }
        for stress in 0..=2u8 {
            entries.push(StyleEntry {
                marker: format!("stress{stress}"),
                kind: StyleKind::Stress,
                display_digit: stress,
            });
        }
        Self { entries }
    }
}

impl StyleInventory {
    pub const PAD: usize = 0;
    pub const NONE: usize = 1;

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StyleEntry] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> Option<&StyleEntry> {
        self.entries.get(id)
    }

    pub fn id(&self, marker: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.marker == marker)
    }

    /// Tone 1..=5.
    pub fn tone(&self, tone: u8) -> usize {
        debug_assert!((1..=5).contains(&tone));
        1 + tone as usize
    }

    /// Stress 0..=2.
    pub fn stress(&self, stress: u8) -> usize {
        debug_assert!(stress <= 2);
        7 + stress as usize
    }
}
