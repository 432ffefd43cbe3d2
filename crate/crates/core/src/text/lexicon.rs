use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

/// One ARPABET phone, stress digit split off (vowels only carry one).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArpabetPhone {
    pub base: String,
    pub stress: Option<u8>,
}

impl ArpabetPhone {
    pub fn parse(raw: &str) -> Option<Self> {
        let (base, stress) = match raw.char_indices().last() {
            Some((i, c)) if c.is_ascii_digit() => (&raw[..i], Some(c as u8 - b'0')),
            _ => (raw, None),
        };
        if base.is_empty() || !base.chars().all(|c| c.is_ascii_uppercase()) {
            return None;
        }
        if matches!(stress, Some(s) if s > 2) {
            return None;
        }
        Some(Self {
            base: base.to_string(),
            stress,
        })
    }
}

/// Pronunciation lexicon plus the ARPABET and pinyin to IPA mapping tables.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    words: HashMap<String, Vec<ArpabetPhone>>,
    arpabet_to_ipa: HashMap<String, String>,
    initial_to_ipa: HashMap<String, String>,
    final_to_ipa: HashMap<String, String>,
}

pub(crate) fn parse_tsv(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if !k.trim().is_empty() && !v.trim().is_empty() => {
                pairs.push((k.trim().to_string(), v.trim().to_string()))
            }
            _ => {
                return Err(Error::InvalidData {
                    path: origin.to_string(),
                    reason: format!("line {}: expected KEY<TAB>VALUE", lineno + 1),
                })
            }
        }
    }
    Ok(pairs)
}

/// Lexicon keys use the same folding as text normalization.
fn fold_word(word: &str) -> String {
    word.chars()
        .filter(|&c| c != '\'')
        .flat_map(char::to_lowercase)
        .collect()
}

impl Lexicon {
    pub fn from_sources(
        cmudict: &str,
        arpabet_tsv: &str,
        initial_tsv: &str,
        final_tsv: &str,
    ) -> Result<Self> {
        let arpabet_to_ipa: HashMap<_, _> = parse_tsv(arpabet_tsv, "arpabet_to_ipa.tsv")?.into_iter().collect();
        let initial_to_ipa: HashMap<_, _> =
            parse_tsv(initial_tsv, "pinyin_initial_to_ipa.tsv")?.into_iter().collect();
        let final_to_ipa: HashMap<_, _> = parse_tsv(final_tsv, "pinyin_final_to_ipa.tsv")?.into_iter().collect();
        let mut lex = Self {
            words: HashMap::new(),
            arpabet_to_ipa,
            initial_to_ipa,
            final_to_ipa,
        };
        lex.extend_cmudict(cmudict, "cmudict")?;
        Ok(lex)
    }

    /// Adds entries in CMU-dict text format. Existing words keep their first
    /// pronunciation; `;;;` lines are comments.
    pub fn extend_cmudict(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with(";;;") || line.trim().is_empty() {
                continue;
            }
            let invalid = |reason: String| Error::InvalidData {
                path: origin.to_string(),
                reason: format!("line {}: {reason}", lineno + 1),
            };
            let (word, pron) = line
                .split_once("  ")
                .ok_or_else(|| invalid("expected WORD<two spaces>PHONES".into()))?;
            let word = word.trim();
            // Alternate pronunciations are written WORD(2).
            if word.ends_with(')') {
                continue;
            }
            let mut phones = Vec::new();
            for raw in pron.split_whitespace() {
                let phone = ArpabetPhone::parse(raw).ok_or_else(|| invalid(format!("bad phone {raw:?}")))?;
                if !self.arpabet_to_ipa.contains_key(&phone.base) {
                    return Err(invalid(format!("phone {} has no IPA mapping", phone.base)));
                }
                phones.push(phone);
            }
            if phones.is_empty() {
                return Err(invalid("empty pronunciation".into()));
            }
            self.words.entry(fold_word(word)).or_insert(phones);
        }
        Ok(())
    }

    pub fn load_cmudict_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.extend_cmudict(&text, &path.display().to_string())
    }

    pub fn pronunciation(&self, word: &str) -> Option<&[ArpabetPhone]> {
        self.words.get(word).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.keys().map(String::as_str)
    }

    pub fn arpabet_ipa(&self, base: &str) -> Option<&str> {
        self.arpabet_to_ipa.get(base).map(String::as_str)
    }

    pub fn initial_ipa(&self, initial: &str) -> Option<&str> {
        self.initial_to_ipa.get(initial).map(String::as_str)
    }

    pub fn final_ipa(&self, fin: &str) -> Option<&str> {
        self.final_to_ipa.get(fin).map(String::as_str)
    }

    pub fn english_symbols(&self) -> HashSet<String> {
        self.arpabet_to_ipa.values().cloned().collect()
    }

    pub fn chinese_symbols(&self) -> HashSet<String> {
        self.initial_to_ipa
            .values()
            .chain(self.final_to_ipa.values())
            .cloned()
            .collect()
    }

    pub fn pinyin_finals(&self) -> impl Iterator<Item = &str> {
        self.final_to_ipa.keys().map(String::as_str)
    }

    pub fn pinyin_initials(&self) -> impl Iterator<Item = &str> {
        self.initial_to_ipa.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ARPA: &str = "UH\tu\nG\tg\nD\td\nEY\tei\nAH\tə\n";

    fn tiny() -> Lexicon {
        Lexicon::from_sources(
            ";;; comment\nGOOD  G UH1 D\nDAY  D EY1\nDAY(2)  D AH0\nDON'T  D UH1\n",
            ARPA,
            "h\tx\n",
            "ao\tau\n",
        )
        .unwrap()
    }

    #[test]
    fn parses_cmu_lines_and_skips_alternates() {
        let lex = tiny();
        assert_eq!(lex.word_count(), 3);
        let day = lex.pronunciation("day").unwrap();
        assert_eq!(day[1], ArpabetPhone { base: "EY".into(), stress: Some(1) });
        assert!(lex.contains("dont"));
    }

    #[test]
    fn rejects_unmapped_phone() {
        let err = Lexicon::from_sources("CAT  K AE1 T\n", ARPA, "", "").unwrap_err();
        assert!(matches!(err, Error::InvalidData { .. }));
    }

    #[test]
    fn rejects_malformed_tsv() {
        assert!(parse_tsv("UH u\n", "x").is_err());
        assert!(parse_tsv("UH\tu\textra\n", "x").is_err());
    }

    #[test]
    fn phone_parse() {
        assert_eq!(ArpabetPhone::parse("AH0").unwrap().stress, Some(0));
        assert_eq!(ArpabetPhone::parse("T").unwrap().stress, None);
        assert!(ArpabetPhone::parse("AH7").is_none());
        assert!(ArpabetPhone::parse("ah1").is_none());
    }
}
