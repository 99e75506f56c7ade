//! Word-class and number handling for LOC object names.
//!
//! The bundled noun list (`assets/nouns.txt`) holds about five thousand
//! frequent single-word noun lemmas derived from WordNet 3.0; see
//! `assets/WORDNET_LICENSE.txt`. Unknown words ending in `-ing`, `-ed` or
//! `-ly` are treated as non-nouns, any other unknown word as a noun.

use std::collections::HashSet;
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordClass {
    Noun,
    Other,
}

/// Decides whether a lowercase token is a noun.
pub trait WordClassOracle: Send + Sync {
    fn word_class(&self, word: &str) -> WordClass;

    /// Whether `word` is positively known as a noun (no permissive default).
    fn is_known_noun(&self, word: &str) -> bool;
}

const IRREGULAR: &[(&str, &str)] = &[
    ("person", "people"),
    ("child", "children"),
    ("man", "men"),
    ("woman", "women"),
    ("foot", "feet"),
    ("mouse", "mice"),
    ("goose", "geese"),
    ("leaf", "leaves"),
];

const BUNDLED_NOUNS: &str = include_str!("../assets/nouns.txt");

#[derive(Debug, Clone)]
pub struct Lexicon {
    nouns: HashSet<String>,
}

impl Lexicon {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let nouns = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_ascii_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        Self { nouns }
    }

    pub fn bundled() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(|| Lexicon::from_words(BUNDLED_NOUNS.lines()))
    }

    pub fn len(&self) -> usize {
        self.nouns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nouns.is_empty()
    }
}

impl WordClassOracle for Lexicon {
    fn word_class(&self, word: &str) -> WordClass {
        if self.nouns.contains(word) || irregular_singular(word).is_some() {
            return WordClass::Noun;
        }
        if word.is_empty()
            || !word.chars().any(|c| c.is_alphabetic())
            || ["ing", "ed", "ly"]
                .iter()
                .any(|suffix| word.ends_with(suffix))
        {
            WordClass::Other
        } else {
            WordClass::Noun
        }
    }

    fn is_known_noun(&self, word: &str) -> bool {
        self.nouns.contains(word)
    }
}

pub fn word_class(word: &str) -> WordClass {
    Lexicon::bundled().word_class(word)
}

fn irregular_singular(word: &str) -> Option<&'static str> {
    IRREGULAR
        .iter()
        .find(|(_, plural)| *plural == word)
        .map(|(singular, _)| *singular)
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// English plural: irregulars, `+es` after s/x/z/ch/sh, consonant+y to `ies`,
/// otherwise `+s`.
pub fn pluralize(word: &str) -> String {
    if let Some((_, plural)) = IRREGULAR.iter().find(|(singular, _)| *singular == word) {
        return plural.to_string();
    }
    if ["s", "x", "z", "ch", "sh"]
        .iter()
        .any(|s| word.ends_with(s))
    {
        return format!("{word}es");
    }
    if let Some(stem) = word.strip_suffix('y') {
        if stem.chars().last().is_some_and(|c| !is_vowel(c)) {
            return format!("{stem}ies");
        }
    }
    format!("{word}s")
}

/// A word is plural if it is an irregular plural, or it ends in `s` and some
/// singular candidate is a known noun whose plural is exactly `word`.
pub fn is_plural(word: &str, oracle: &dyn WordClassOracle) -> bool {
    if irregular_singular(word).is_some() {
        return true;
    }
    if !word.ends_with('s') {
        return false;
    }
    singular_candidates(word)
        .into_iter()
        .any(|stem| oracle.is_known_noun(&stem) && pluralize(&stem) == word)
}

fn singular_candidates(word: &str) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(stem) = word.strip_suffix("ies") {
        out.push(format!("{stem}y"));
    }
    if let Some(stem) = word.strip_suffix("es") {
        out.push(stem.to_string());
    }
    if let Some(stem) = word.strip_suffix('s') {
        out.push(stem.to_string());
    }
    out
}

/// Lowercase alphanumeric tokens of a question.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plurals() {
        assert_eq!(pluralize("person"), "people");
        assert_eq!(pluralize("box"), "boxes");
        assert_eq!(pluralize("bench"), "benches");
        assert_eq!(pluralize("puppy"), "puppies");
        assert_eq!(pluralize("toy"), "toys");
        assert_eq!(pluralize("dog"), "dogs");
        assert_eq!(pluralize("leaf"), "leaves");
        assert_eq!(pluralize("grass"), "grasses");
    }

    #[test]
    fn word_classes() {
        assert_eq!(word_class("standing"), WordClass::Other);
        assert_eq!(word_class("grass"), WordClass::Noun);
        assert_eq!(word_class("person"), WordClass::Noun);
        assert_eq!(word_class("building"), WordClass::Noun);
        assert_eq!(word_class("quickly"), WordClass::Other);
        assert_eq!(word_class("surfboard"), WordClass::Noun);
        assert!(Lexicon::bundled().len() > 4000);
    }

    #[test]
    fn plural_detection() {
        let lex = Lexicon::bundled();
        assert!(is_plural("people", lex));
        assert!(is_plural("dogs", lex));
        assert!(is_plural("boxes", lex));
        assert!(!is_plural("grass", lex));
        assert!(!is_plural("bus", lex));
        assert!(!is_plural("dog", lex));
    }

    #[test]
    fn tokenizes_questions() {
        assert_eq!(
            tokenize("Do both people have the same gender?"),
            vec!["do", "both", "people", "have", "the", "same", "gender"]
        );
    }
}
