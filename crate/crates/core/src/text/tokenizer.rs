use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use super::inventory::{PhonemeInventory, StyleInventory, SEPARATOR};
use super::lexicon::{parse_tsv, Lexicon};
use super::normalize::normalize;
use super::numbers::number_to_words;
use super::pinyin::parse_syllable;
use super::{Language, Scheme};
use crate::error::{Error, Result};

const CMUDICT: &str = include_str!("../../data/cmudict.txt");
const ARPABET_TSV: &str = include_str!("../../data/arpabet_to_ipa.tsv");
const INITIAL_TSV: &str = include_str!("../../data/pinyin_initial_to_ipa.tsv");
const FINAL_TSV: &str = include_str!("../../data/pinyin_final_to_ipa.tsv");
const IPA_INVENTORY: &str = include_str!("../../data/ipa_inventory.txt");
const ALPHABET_INVENTORY: &str = include_str!("../../data/alphabet_inventory.txt");

/// Parallel phoneme and style id rows of equal length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub scheme: Scheme,
    pub phoneme_ids: Vec<usize>,
    pub style_ids: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.phoneme_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phoneme_ids.is_empty()
    }

    /// Same phonemes with every style replaced by the none marker.
    pub fn without_styles(&self) -> Self {
        Self {
            scheme: self.scheme,
            phoneme_ids: self.phoneme_ids.clone(),
            style_ids: vec![StyleInventory::NONE; self.phoneme_ids.len()],
        }
    }
}

/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    lexicon: Arc<Lexicon>,
    ipa: PhonemeInventory,
    alphabet: PhonemeInventory,
    styles: StyleInventory,
    hanzi: Arc<HashMap<char, String>>,
}

fn builtin_lexicon() -> Arc<Lexicon> {
    static LEXICON: OnceLock<Arc<Lexicon>> = OnceLock::new();
    LEXICON
        .get_or_init(|| {
            Arc::new(
                Lexicon::from_sources(CMUDICT, ARPABET_TSV, INITIAL_TSV, FINAL_TSV)
                    .expect("bundled lexicon data is valid"),
            )
        })
        .clone()
}

impl Tokenizer {
    /// Tokenizer over the bundled lexicon, mapping tables and inventories.
    pub fn builtin() -> Self {
        Self::from_parts(builtin_lexicon(), IPA_INVENTORY, ALPHABET_INVENTORY, "bundled")
            .expect("bundled inventories are valid")
    }

    /// Loads `cmudict.txt`, the three mapping TSVs and both inventory files
    /// from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        };
        let lexicon = Lexicon::from_sources(
            &read("cmudict.txt")?,
            &read("arpabet_to_ipa.tsv")?,
            &read("pinyin_initial_to_ipa.tsv")?,
            &read("pinyin_final_to_ipa.tsv")?,
        )?;
        Self::from_parts(
            Arc::new(lexicon),
            &read("ipa_inventory.txt")?,
            &read("alphabet_inventory.txt")?,
            &dir.display().to_string(),
        )
    }

    fn from_parts(lexicon: Arc<Lexicon>, ipa_text: &str, alphabet_text: &str, origin: &str) -> Result<Self> {
        let english = lexicon.english_symbols();
        let chinese = lexicon.chinese_symbols();
        let ipa = PhonemeInventory::parse(ipa_text, Scheme::Ipa, &english, &chinese, origin)?;
        for sym in english.iter().chain(chinese.iter()) {
            if ipa.id(sym).is_none() {
                return Err(Error::InvalidData {
                    path: origin.to_string(),
                    reason: format!("mapped symbol {sym:?} missing from IPA inventory"),
                });
            }
        }
        let none = Default::default();
        let alphabet = PhonemeInventory::parse(alphabet_text, Scheme::Alphabet, &none, &none, origin)?;
        Ok(Self {
            lexicon,
            ipa,
            alphabet,
            styles: StyleInventory::default(),
            hanzi: Arc::new(HashMap::new()),
        })
    }

    /// Adds a character to pinyin table (`字<TAB>zi4` per line) so Mandarin
    /// input may contain hanzi.
    pub fn with_hanzi_map(mut self, tsv: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (k, v) in parse_tsv(tsv, "hanzi map")? {
            let mut chars = k.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => {
                    map.insert(c, v);
                }
                _ => {
                    return Err(Error::InvalidData {
                        path: "hanzi map".into(),
                        reason: format!("key {k:?} is not a single character"),
                    })
                }
            }
        }
        self.hanzi = Arc::new(map);
        Ok(self)
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn inventory(&self, scheme: Scheme) -> &PhonemeInventory {
        match scheme {
            Scheme::Alphabet => &self.alphabet,
            Scheme::Ipa => &self.ipa,
        }
    }

    pub fn styles(&self) -> &StyleInventory {
        &self.styles
    }

    pub fn tokenize(&self, text: &str, language: Language, scheme: Scheme) -> Result<TokenSequence> {
        match scheme {
            Scheme::Alphabet => self.tokenize_alphabet(text, language),
            Scheme::Ipa => self.tokenize_ipa(text, language),
        }
    }

    /// English words expanded from numerals; other words pass through.
    fn english_words(&self, text: &str) -> Result<Vec<String>> {
        let mut words = Vec::new();
        for w in normalize(text) {
            if w.chars().all(|c| c.is_ascii_digit()) {
                let expanded = w
                    .parse::<u64>()
                    .ok()
                    .and_then(number_to_words)
                    .ok_or_else(|| Error::UnknownCharacter {
                        word: w.clone(),
                        ch: w.chars().next().unwrap_or('0'),
                    })?;
                words.extend(expanded.into_iter().map(str::to_string));
            } else {
                words.push(w);
            }
        }
        if words.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(words)
    }

    /// Mandarin input as a list of toned pinyin syllables. Tone digits end a
    /// syllable, so `ni3hao3` is two syllables; hanzi go through the map.
    fn pinyin_syllables(&self, text: &str) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for w in normalize(text) {
            let mut cur = String::new();
            for c in w.chars() {
                if !c.is_ascii() && c != 'ü' {
                    let py = self.hanzi.get(&c).ok_or_else(|| Error::MalformedPinyin(w.clone()))?;
                    if !cur.is_empty() {
                        out.push(std::mem::take(&mut cur));
                    }
                    out.push(py.to_lowercase());
                    continue;
                }
                cur.push(c);
                if c.is_ascii_digit() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            if !cur.is_empty() {
                out.push(cur);
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(out)
    }

    pub fn tokenize_alphabet(&self, text: &str, language: Language) -> Result<TokenSequence> {
        let words = match language {
            Language::En => self.english_words(text)?,
            Language::Zh => self
                .pinyin_syllables(text)?
                .into_iter()
                .map(|s| {
                    s.trim_end_matches(|c: char| ('1'..='5').contains(&c))
                        .replace('ü', "v")
                })
                .collect(),
        };
        let sep = self.alphabet.separator_id();
        let mut phonemes = vec![sep];
        for word in &words {
            for ch in word.chars() {
                let id = ch
                    .is_ascii_lowercase()
                    .then(|| self.alphabet.id(ch.encode_utf8(&mut [0; 4])))
                    .flatten()
                    .ok_or_else(|| Error::UnknownCharacter {
                        word: word.clone(),
                        ch,
                    })?;
                phonemes.push(id);
            }
            phonemes.push(sep);
        }
        let styles = vec![StyleInventory::NONE; phonemes.len()];
        Ok(TokenSequence {
            scheme: Scheme::Alphabet,
            phoneme_ids: phonemes,
            style_ids: styles,
        })
    }

    fn ipa_id(&self, symbol: &str) -> Result<usize> {
        self.ipa.id(symbol).ok_or_else(|| Error::InvalidData {
            path: "ipa inventory".into(),
            reason: format!("symbol {symbol:?} not in inventory"),
        })
    }

    pub fn tokenize_ipa(&self, text: &str, language: Language) -> Result<TokenSequence> {
        let sep = self.ipa.separator_id();
        let mut phonemes = vec![sep];
        let mut styles = vec![StyleInventory::NONE];
        match language {
            Language::En => {
                for word in self.english_words(text)? {
                    let pron = self
                        .lexicon
                        .pronunciation(&word)
                        .ok_or_else(|| Error::OutOfVocabularyWord(word.clone()))?;
                    for phone in pron {
                        let sym = self
                            .lexicon
                            .arpabet_ipa(&phone.base)
                            .ok_or_else(|| Error::OutOfVocabularyWord(word.clone()))?;
                        phonemes.push(self.ipa_id(sym)?);
                        styles.push(match phone.stress {
                            Some(s) => self.styles.stress(s),
                            None => StyleInventory::NONE,
                        });
                    }
                    phonemes.push(sep);
                    styles.push(StyleInventory::NONE);
                }
            }
            Language::Zh => {
                for raw in self.pinyin_syllables(text)? {
                    let syl = parse_syllable(&raw)?;
                    if let Some(initial) = syl.initial {
                        let sym = self
                            .lexicon
                            .initial_ipa(initial)
                            .ok_or_else(|| Error::MalformedPinyin(raw.clone()))?;
                        phonemes.push(self.ipa_id(sym)?);
                        styles.push(StyleInventory::NONE);
                    }
                    let sym = self
                        .lexicon
                        .final_ipa(syl.fin)
                        .ok_or_else(|| Error::MalformedPinyin(raw.clone()))?;
                    phonemes.push(self.ipa_id(sym)?);
                    styles.push(self.styles.tone(syl.tone));
                    phonemes.push(sep);
                    styles.push(StyleInventory::NONE);
                }
            }
        }
        Ok(TokenSequence {
            scheme: Scheme::Ipa,
            phoneme_ids: phonemes,
            style_ids: styles,
        })
    }

    /// Space-separated symbol row and style-digit row.
    pub fn render(&self, seq: &TokenSequence) -> (String, String) {
        let inv = self.inventory(seq.scheme);
        let symbols: Vec<&str> = seq
            .phoneme_ids
            .iter()
            .map(|&id| inv.symbol(id).unwrap_or("?"))
            .collect();
        let digits: Vec<String> = seq
            .style_ids
            .iter()
            .map(|&id| self.styles.entry(id).map_or(0, |e| e.display_digit).to_string())
            .collect();
        (symbols.join(" "), digits.join(" "))
    }

    /// Symbols of a sequence, for display and JSON output.
    pub fn symbols(&self, seq: &TokenSequence) -> Vec<String> {
        let inv = self.inventory(seq.scheme);
        seq.phoneme_ids
            .iter()
            .map(|&id| inv.symbol(id).unwrap_or("?").to_string())
            .collect()
    }

    pub fn separator(&self) -> &'static str {
        SEPARATOR
    }
}
