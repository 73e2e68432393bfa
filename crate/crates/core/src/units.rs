//! Linguistic unit counting (phonemes, syllables, words) for the duration
//! rule `seconds = units / rate`.
//!
//! English uses a pronouncing lexicon with a letter-class fallback and a
//! vowel-group syllable heuristic. Chinese counts Han characters for words
//! and syllables and looks phones up in a pinyin table. Any other language
//! goes through the English path.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::align::{is_han, Language};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Phoneme,
    Syllable,
    Word,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [
        Granularity::Phoneme,
        Granularity::Syllable,
        Granularity::Word,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Phoneme => "phoneme",
            Granularity::Syllable => "syllable",
            Granularity::Word => "word",
        }
    }
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phoneme" => Ok(Granularity::Phoneme),
            "syllable" => Ok(Granularity::Syllable),
            "word" => Ok(Granularity::Word),
            _ => Err(Error::InvalidInput(format!("unknown granularity {s:?}"))),
        }
    }
}

/// Word -> phoneme sequence. Keys are lowercase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    pub entries: HashMap<String, Vec<String>>,
    pub language: Option<Language>,
}

impl Lexicon {
    /// Parses `WORD  PH1 PH2 ...` lines. `;;;` comments and blank lines are
    /// skipped, `WORD(2)` variants fold onto `word`, and the first
    /// pronunciation of a word wins.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: HashMap<String, Vec<String>> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with(";;;") {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap_or_default();
            let phones: Vec<String> = fields.map(str::to_string).collect();
            if phones.is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("{word:?} has no phonemes"),
                });
            }
            let word = match word.find('(') {
                Some(p) if word.ends_with(')') && p > 0 => &word[..p],
                _ => word,
            };
            entries.entry(word.to_lowercase()).or_insert(phones);
        }
        Ok(Self {
            entries,
            language: Some(Language::En),
        })
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Lexicon::parse(&text)
}

/// Han character -> phone count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PinyinTable {
    pub phones: HashMap<char, usize>,
}

impl PinyinTable {
    pub const FALLBACK_PHONES: usize = 3;

    /// Parses two-column `character count` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut phones = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: &str| Error::Parse {
                line: idx + 1,
                message: message.to_string(),
            };
            let mut fields = line.split_whitespace();
            let (Some(ch), Some(count), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected `character count`"));
            };
            let mut chars = ch.chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(bad("first column must be one character"));
            };
            let n: usize = count.parse().map_err(|_| bad("count is not an integer"))?;
            if n == 0 {
                return Err(bad("count must be positive"));
            }
            phones.entry(c).or_insert(n);
        }
        Ok(Self { phones })
    }

    pub fn phones_for(&self, c: char) -> usize {
        self.phones
            .get(&c)
            .copied()
            .unwrap_or(Self::FALLBACK_PHONES)
    }
}

pub fn load_pinyin_table(path: impl AsRef<Path>) -> Result<PinyinTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PinyinTable::parse(&text)
}

/// Counts units with a particular lexicon and pinyin table.
#[derive(Debug, Clone, Default)]
pub struct UnitCounter {
    pub lexicon: Lexicon,
    pub pinyin: PinyinTable,
}

impl UnitCounter {
    pub fn new(lexicon: Lexicon, pinyin: PinyinTable) -> Self {
        Self { lexicon, pinyin }
    }

    /// Counter backed by the small lexicon and pinyin table bundled with the crate.
    pub fn builtin() -> &'static UnitCounter {
        static BUILTIN: OnceLock<UnitCounter> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            UnitCounter::new(
                Lexicon::parse(include_str!("../data/lexicon_en.txt"))
                    .expect("bundled lexicon parses"),
                PinyinTable::parse(include_str!("../data/pinyin_phones.txt"))
                    .expect("bundled pinyin table parses"),
            )
        })
    }

    pub fn count(&self, text: &str, lang: Language, g: Granularity) -> Result<usize> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::InvalidInput(
                "cannot count units in empty text".into(),
            ));
        }
        let lowered = text.to_lowercase();
        let mut total = 0;
        for token in lowered.split_whitespace() {
            total += match lang {
                Language::Zh => self.count_mixed(token, g),
                Language::En | Language::Other => self.count_word(token, g),
            };
        }
        if total == 0 {
            return Err(Error::InvalidInput(format!(
                "no countable units in {text:?}"
            )));
        }
        Ok(total)
    }

    /// Han characters count individually; embedded non-Han runs count as words.
    fn count_mixed(&self, token: &str, g: Granularity) -> usize {
        let mut total = 0;
        let mut run = String::new();
        for c in token.chars() {
            if is_han(c) {
                total += self.count_word(&run, g);
                run.clear();
                total += match g {
                    Granularity::Word | Granularity::Syllable => 1,
                    Granularity::Phoneme => self.pinyin.phones_for(c),
                };
            } else if c.is_alphanumeric() {
                run.push(c);
            } else {
                total += self.count_word(&run, g);
                run.clear();
            }
        }
        total + self.count_word(&run, g)
    }

    /// One whitespace token. Punctuation-only tokens count nothing.
    fn count_word(&self, token: &str, g: Granularity) -> usize {
        let word = token.trim_matches(|c: char| !c.is_alphanumeric());
        if word.is_empty() {
            return 0;
        }
        match g {
            Granularity::Word => 1,
            Granularity::Syllable => english_syllables(word),
            Granularity::Phoneme => match self.lexicon.get(word) {
                Some(phones) => phones.len(),
                None => fallback_phonemes(word),
            },
        }
    }
}

/// Units in `text` using the bundled lexicon and pinyin table.
pub fn count_units(text: &str, lang: Language, g: Granularity) -> Result<usize> {
    UnitCounter::builtin().count(text, lang, g)
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Maximal `aeiouy` groups, minus a silent final `e`, floored at one.
pub fn english_syllables(word: &str) -> usize {
    let letters: Vec<char> = word.chars().filter(|c| c.is_alphabetic()).collect();
    let mut groups = 0;
    let mut prev_vowel = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    let n = letters.len();
    let silent_e = n >= 2 && letters[n - 1] == 'e' && !is_vowel(letters[n - 2]);
    if silent_e && groups > 1 {
        groups -= 1;
    }
    groups.max(1)
}

/// One phoneme per consonant letter plus one per vowel group, at least one.
pub fn fallback_phonemes(word: &str) -> usize {
    let mut count = 0;
    let mut prev_vowel = false;
    for c in word.chars().filter(|c| c.is_alphabetic()) {
        let v = is_vowel(c);
        if !v || !prev_vowel {
            count += 1;
        }
        prev_vowel = v;
    }
    count.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(
            count_units("hello world", Language::En, Granularity::Word).unwrap(),
            2
        );
        assert_eq!(
            count_units("hello world", Language::En, Granularity::Syllable).unwrap(),
            3
        );
        assert_eq!(
            count_units("cat", Language::En, Granularity::Phoneme).unwrap(),
            3
        );
        assert_eq!(
            count_units("你好", Language::Zh, Granularity::Syllable).unwrap(),
            2
        );
        assert_eq!(
            count_units("你好", Language::Zh, Granularity::Word).unwrap(),
            2
        );
        assert_eq!(
            count_units("你好", Language::Zh, Granularity::Phoneme).unwrap(),
            4
        );
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(
            count_units("   ", Language::En, Granularity::Word),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn syllable_heuristic() {
        assert_eq!(english_syllables("hello"), 2);
        assert_eq!(english_syllables("world"), 1);
        assert_eq!(english_syllables("make"), 1);
        assert_eq!(english_syllables("the"), 1);
        assert_eq!(english_syllables("agree"), 2);
        assert_eq!(english_syllables("rhythm"), 1);
        assert_eq!(english_syllables("psst"), 1);
    }

    #[test]
    fn fallback_for_unknown_words() {
        // s, t, r, ea, m
        assert_eq!(
            count_units("stream", Language::En, Granularity::Phoneme).unwrap(),
            5
        );
        assert_eq!(fallback_phonemes("cat"), 3);
    }

    #[test]
    fn unknown_han_character_uses_fallback() {
        let counter = UnitCounter::new(Lexicon::default(), PinyinTable::default());
        assert_eq!(
            counter
                .count("你", Language::Zh, Granularity::Phoneme)
                .unwrap(),
            3
        );
    }

    #[test]
    fn lexicon_loading() {
        let lex = Lexicon::parse("CAT K AE T\nCAT K AA T\nDOG(2)  D AA G\n\n;;; note\n").unwrap();
        assert_eq!(lex.get("cat").unwrap(), ["K", "AE", "T"]);
        assert_eq!(lex.len(), 2);
        assert!(lex.get("dog").is_some());
        assert!(Lexicon::parse("").unwrap().is_empty());
        assert!(matches!(
            Lexicon::parse("A AH\nBROKEN\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn lexicon_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.txt");
        std::fs::write(&path, "CAT K AE T\n").unwrap();
        let lex = load_lexicon(&path).unwrap();
        let counter = UnitCounter::new(lex, PinyinTable::default());
        assert_eq!(
            counter
                .count("Cat cat", Language::En, Granularity::Phoneme)
                .unwrap(),
            6
        );
    }

    #[test]
    fn pinyin_table_parse_errors() {
        assert!(PinyinTable::parse("你 2\n").is_ok());
        assert!(matches!(
            PinyinTable::parse("你好 2"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            PinyinTable::parse("你 x"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn bundled_lexicon_respects_unit_ordering() {
        let counter = UnitCounter::builtin();
        for word in counter.lexicon.entries.keys() {
            let s = counter
                .count(word, Language::En, Granularity::Syllable)
                .unwrap();
            let p = counter
                .count(word, Language::En, Granularity::Phoneme)
                .unwrap();
            assert!(1 <= s && s <= p, "{word}: {s} syllables, {p} phonemes");
        }
    }

    proptest! {
        #[test]
        fn english_unit_ordering(words in prop::collection::vec("[a-zA-Z]{1,10}", 1..8)) {
            let text = words.join(" ");
            let w = count_units(&text, Language::En, Granularity::Word).unwrap();
            let s = count_units(&text, Language::En, Granularity::Syllable).unwrap();
            let p = count_units(&text, Language::En, Granularity::Phoneme).unwrap();
            prop_assert!(w <= s && s <= p, "{} -> {} {} {}", text, w, s, p);
        }

        #[test]
        fn case_and_padding_insensitive(words in prop::collection::vec("[a-z]{1,8}", 1..6), pad in "[ \t]{0,3}") {
            let text = words.join(" ");
            let noisy = format!("{pad}{}{pad}", text.to_uppercase());
            for g in Granularity::ALL {
                prop_assert_eq!(
                    count_units(&text, Language::En, g).unwrap(),
                    count_units(&noisy, Language::En, g).unwrap()
                );
            }
        }

        #[test]
        fn chinese_words_equal_syllables_equal_han(chars in prop::collection::vec(prop::char::range('\u{4E00}', '\u{9FFF}'), 1..20)) {
            let text: String = chars.iter().collect();
            let w = count_units(&text, Language::Zh, Granularity::Word).unwrap();
            let s = count_units(&text, Language::Zh, Granularity::Syllable).unwrap();
            prop_assert_eq!(w, chars.len());
            prop_assert_eq!(s, chars.len());
        }
    }
}
