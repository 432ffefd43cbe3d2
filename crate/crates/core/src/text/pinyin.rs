use crate::error::{Error, Result};

/// Every final the parser can produce. `ii`/`iii` are the apical vowels after
/// z/c/s and zh/ch/sh/r; `v` stands for ü.
pub const FINALS: [&str; 38] = [
    "a", "o", "e", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong", "er", "i", "ii", "iii",
    "ia", "ie", "iao", "iu", "ian", "in", "iang", "ing", "iong", "u", "ua", "uo", "uai", "ui",
    "uan", "un", "uang", "ueng", "v", "ve", "van", "vn",
];

pub const INITIALS: [&str; 21] = [
    "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "zh", "ch", "sh", "r",
    "z", "c", "s",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Syllable {
    pub initial: Option<&'static str>,
    pub fin: &'static str,
    /// 1..=4 lexical tones, 5 neutral.
    pub tone: u8,
}

fn intern_final(s: &str) -> Option<&'static str> {
    FINALS.iter().copied().find(|f| *f == s)
}

fn y_final(rest: &str) -> Option<&'static str> {
    let f = match rest {
        "i" => "i",
        "in" => "in",
        "ing" => "ing",
        "a" => "ia",
        "e" => "ie",
        "ao" => "iao",
        "ou" => "iu",
        "an" => "ian",
        "ang" => "iang",
        "ong" => "iong",
        "u" => "v",
        "ue" => "ve",
        "uan" => "van",
        "un" => "vn",
        _ => return None,
    };
    Some(f)
}

fn w_final(rest: &str) -> Option<&'static str> {
    let f = match rest {
        "u" => "u",
        "a" => "ua",
        "o" => "uo",
        "ai" => "uai",
        "ei" => "ui",
        "an" => "uan",
        "en" => "un",
        "ang" => "uang",
        "eng" => "ueng",
        _ => return None,
    };
    Some(f)
}

/// Splits a toned pinyin syllable such as `hao3` into initial, final and tone.
/// A missing tone digit means the neutral tone (5).
pub fn parse_syllable(raw: &str) -> Result<Syllable> {
    let malformed = || Error::MalformedPinyin(raw.to_string());
    let lowered = raw.to_lowercase().replace("u:", "v").replace('ü', "v");
    let (letters, tone) = match lowered.chars().last() {
        Some(c @ '1'..='5') => (&lowered[..lowered.len() - 1], c as u8 - b'0'),
        Some(_) => (lowered.as_str(), 5),
        None => return Err(malformed()),
    };
    if letters.is_empty() || !letters.chars().all(|c| c.is_ascii_lowercase()) {
        return Err(malformed());
    }

    if let Some(rest) = letters.strip_prefix('y') {
        let fin = y_final(rest).ok_or_else(malformed)?;
        return Ok(Syllable {
            initial: None,
            fin,
            tone,
        });
    }
    if let Some(rest) = letters.strip_prefix('w') {
        let fin = w_final(rest).ok_or_else(malformed)?;
        return Ok(Syllable {
            initial: None,
            fin,
            tone,
        });
    }

    let initial = ["zh", "ch", "sh"]
        .into_iter()
        .find(|i| letters.starts_with(i))
        .or_else(|| INITIALS.iter().copied().find(|i| i.len() == 1 && letters.starts_with(i)));
    let rest = &letters[initial.map_or(0, str::len)..];
    let fin = match (initial, rest) {
        (_, "") => return Err(malformed()),
        (Some("j" | "q" | "x"), r) if r.starts_with('u') => intern_final(&format!("v{}", &r[1..])),
        (Some("z" | "c" | "s"), "i") => Some("ii"),
        (Some("zh" | "ch" | "sh" | "r"), "i") => Some("iii"),
        (_, r) => intern_final(r),
    }
    .ok_or_else(malformed)?;
    Ok(Syllable { initial, fin, tone })
}
