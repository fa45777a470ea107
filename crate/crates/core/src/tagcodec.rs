//! BMES tagging: conversion between word lists and per-character tags.

use std::fmt;

use crate::error::{Error, Result};

/// Position of a character inside its word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Tag {
    B = 0,
    M = 1,
    E = 2,
    S = 3,
}

/// Size of the tag set.
pub const NUM_TAGS: usize = 4;

impl Tag {
    pub const ALL: [Tag; NUM_TAGS] = [Tag::B, Tag::M, Tag::E, Tag::S];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Self::ALL.get(i).copied()
    }

    /// Whether a sequence may begin with this tag.
    #[inline]
    pub fn can_start(self) -> bool {
        matches!(self, Tag::B | Tag::S)
    }

    /// Whether a sequence may end with this tag.
    #[inline]
    pub fn can_end(self) -> bool {
        matches!(self, Tag::E | Tag::S)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tag::B => "B",
            Tag::M => "M",
            Tag::E => "E",
            Tag::S => "S",
        };
        f.write_str(s)
    }
}

/// `true` exactly for B→M, B→E, M→M, M→E, E→B, E→S, S→B, S→S.
#[inline]
pub fn is_valid_transition(from: Tag, to: Tag) -> bool {
    let inside = matches!(from, Tag::B | Tag::M);
    let continues = matches!(to, Tag::M | Tag::E);
    inside == continues
}

/// Full-sequence BMES validity. The empty sequence is valid.
pub fn is_valid_sequence(tags: &[Tag]) -> bool {
    match (tags.first(), tags.last()) {
        (None, _) => true,
        (Some(first), Some(last)) => {
            first.can_start()
                && last.can_end()
                && tags.windows(2).all(|w| is_valid_transition(w[0], w[1]))
        }
        _ => unreachable!(),
    }
}

/// Tags for a segmentation: `S` for single characters, `B M* E` otherwise.
pub fn words_to_tags<W: AsRef<str>>(words: &[W]) -> Result<Vec<Tag>> {
    let mut tags = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let len = w.as_ref().chars().count();
        match len {
            0 => return Err(Error::invalid(format!("word {i} is empty"))),
            1 => tags.push(Tag::S),
            _ => {
                tags.push(Tag::B);
                tags.extend(std::iter::repeat_n(Tag::M, len - 2));
                tags.push(Tag::E);
            }
        }
    }
    Ok(tags)
}

/// Splits `chars` into words according to `tags`.
///
/// Never fails on a tag sequence of matching length: a boundary is placed
/// before every `B`/`S` and after every `E`/`S`, so malformed sequences still
/// yield a segmentation.
pub fn tags_to_words(chars: &[char], tags: &[Tag]) -> Result<Vec<String>> {
    if chars.len() != tags.len() {
        return Err(Error::invalid(format!(
            "{} characters but {} tags",
            chars.len(),
            tags.len()
        )));
    }
    let mut words = Vec::new();
    let mut cur = String::new();
    for (&c, &t) in chars.iter().zip(tags) {
        if matches!(t, Tag::B | Tag::S) && !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
        cur.push(c);
        if matches!(t, Tag::E | Tag::S) {
            words.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    Ok(words)
}

/// A sentence with one BMES tag per character.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSentence {
    pub chars: Vec<char>,
    pub tags: Vec<Tag>,
}

impl LabeledSentence {
    pub fn new(chars: Vec<char>, tags: Vec<Tag>) -> Result<Self> {
        if chars.len() != tags.len() {
            return Err(Error::invalid(format!(
                "{} characters but {} tags",
                chars.len(),
                tags.len()
            )));
        }
        if !is_valid_sequence(&tags) {
            return Err(Error::invalid("tag sequence is not valid BMES"));
        }
        Ok(Self { chars, tags })
    }

    pub fn from_words<W: AsRef<str>>(words: &[W]) -> Result<Self> {
        let tags = words_to_tags(words)?;
        let chars = words.iter().flat_map(|w| w.as_ref().chars()).collect();
        Ok(Self { chars, tags })
    }

    pub fn words(&self) -> Vec<String> {
        tags_to_words(&self.chars, &self.tags).expect("lengths checked on construction")
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Tag::*;

    #[test]
    fn pseudo_sentence_example() {
        let tags = words_to_tags(&["很火", "最近", "人工智能"]).unwrap();
        assert_eq!(tags, vec![B, E, B, E, B, M, M, E]);

        let chars: Vec<char> = "很火最近人工智能".chars().collect();
        let words = tags_to_words(&chars, &tags).unwrap();
        assert_eq!(words, vec!["很火", "最近", "人工智能"]);
    }

    #[test]
    fn single_and_mixed_words() {
        assert_eq!(words_to_tags(&["人"]).unwrap(), vec![S]);
        assert_eq!(
            words_to_tags(&["人工", "智", "能力强"]).unwrap(),
            vec![B, E, S, B, M, E]
        );
        assert_eq!(tags_to_words(&['人'], &[S]).unwrap(), vec!["人"]);
    }

    #[test]
    fn empty_word_is_rejected() {
        assert!(matches!(
            words_to_tags(&["人", ""]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn repair_of_invalid_sequence() {
        let chars: Vec<char> = "abc".chars().collect();
        assert_eq!(tags_to_words(&chars, &[S, M, E]).unwrap(), vec!["a", "bc"]);
        // dangling B/M at the end still yields a word
        assert_eq!(tags_to_words(&chars, &[S, B, M]).unwrap(), vec!["a", "bc"]);
        assert_eq!(tags_to_words(&chars, &[M, M, M]).unwrap(), vec!["abc"]);
        assert_eq!(tags_to_words(&chars, &[E, E, B]).unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn length_mismatch() {
        assert!(tags_to_words(&['a', 'b'], &[S]).is_err());
    }

    #[test]
    fn transition_table() {
        assert!(!is_valid_transition(S, M));
        assert!(!is_valid_transition(E, M));
        assert!(is_valid_transition(B, M));
        let count = Tag::ALL
            .iter()
            .flat_map(|&a| Tag::ALL.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| is_valid_transition(a, b))
            .count();
        assert_eq!(count, 8);
    }

    #[test]
    fn integer_encoding_is_stable() {
        assert_eq!([B.index(), M.index(), E.index(), S.index()], [0, 1, 2, 3]);
        for t in Tag::ALL {
            assert_eq!(Tag::from_index(t.index()), Some(t));
        }
        assert_eq!(Tag::from_index(4), None);
    }

    fn segmentation() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[a-e人工智能最近很火]{1,5}", 0..12)
    }

    proptest! {
        #[test]
        fn round_trip(words in segmentation()) {
            let tags = words_to_tags(&words).unwrap();
            prop_assert!(is_valid_sequence(&tags));
            let chars: Vec<char> = words.iter().flat_map(|w| w.chars()).collect();
            prop_assert_eq!(tags_to_words(&chars, &tags).unwrap(), words);
        }

        #[test]
        fn decoding_is_total(raw in prop::collection::vec(0usize..4, 0..20)) {
            let tags: Vec<Tag> = raw.iter().map(|&i| Tag::from_index(i).unwrap()).collect();
            let chars: Vec<char> = (0..tags.len()).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
            let words = tags_to_words(&chars, &tags).unwrap();
            let joined: String = words.concat();
            prop_assert_eq!(joined.chars().collect::<Vec<_>>(), chars);
            prop_assert!(words.iter().all(|w| !w.is_empty()));
        }
    }
}
