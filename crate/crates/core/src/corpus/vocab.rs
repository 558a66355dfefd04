use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::{Document, END_OF_TEXT};
use crate::error::{Error, Result};

pub type CharId = u32;

/// Names of the reserved entries, in id order, as written to disk.
pub const SPECIAL_NAMES: [&str; 4] = ["<bos>", "<eos>", "<unk>", "<eot>"];

/// Character inventory of the backbone: dense ids with four reserved
/// entries first (sequence start, end of segment, unknown, end of text).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, CharId>,
}

impl CharVocab {
    pub const BOS: CharId = 0;
    pub const EOS: CharId = 1;
    pub const UNK: CharId = 2;
    pub const EOT: CharId = 3;
    pub const NUM_SPECIAL: usize = 4;

    /// Builds the vocabulary from every character in `docs`, sorted by code
    /// point so the result does not depend on document order.
    pub fn from_documents(docs: &[Document]) -> Self {
        let set: BTreeSet<char> = docs
            .iter()
            .flat_map(|d| d.chars().iter().copied())
            .filter(|&c| c != END_OF_TEXT)
            .collect();
        Self::from_chars(set)
    }

    pub fn from_chars<I: IntoIterator<Item = char>>(chars: I) -> Self {
        let mut vocab = CharVocab {
            chars: Vec::new(),
            index: HashMap::new(),
        };
        for c in chars {
            if c == END_OF_TEXT || vocab.index.contains_key(&c) {
                continue;
            }
            vocab
                .index
                .insert(c, (Self::NUM_SPECIAL + vocab.chars.len()) as CharId);
            vocab.chars.push(c);
        }
        vocab
    }

    /// Total number of ids, specials included.
    pub fn len(&self) -> usize {
        Self::NUM_SPECIAL + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Size of the character head's output: every id except sequence start.
    pub fn num_classes(&self) -> usize {
        self.len() - 1
    }

    pub fn id(&self, c: char) -> CharId {
        if c == END_OF_TEXT {
            return Self::EOT;
        }
        self.index.get(&c).copied().unwrap_or(Self::UNK)
    }

    pub fn contains(&self, c: char) -> bool {
        c == END_OF_TEXT || self.index.contains_key(&c)
    }

    /// The character for a real or end-of-text id.
    pub fn char_of(&self, id: CharId) -> Option<char> {
        match id {
            Self::EOT => Some(END_OF_TEXT),
            i if (i as usize) >= Self::NUM_SPECIAL => self.chars.get(i as usize - Self::NUM_SPECIAL).copied(),
            _ => None,
        }
    }

    pub fn encode(&self, chars: &[char]) -> Vec<CharId> {
        chars.iter().map(|&c| self.id(c)).collect()
    }

    /// Ids of the ordinary characters.
    pub fn char_ids(&self) -> impl Iterator<Item = CharId> + '_ {
        (Self::NUM_SPECIAL..self.len()).map(|i| i as CharId)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for name in SPECIAL_NAMES {
            out.push_str(name);
            out.push('\n');
        }
        for &c in &self.chars {
            out.push(c);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.split('\n').collect();
        let lines = match lines.last() {
            Some(&"") => &lines[..lines.len() - 1],
            _ => &lines[..],
        };
        if lines.len() < Self::NUM_SPECIAL || lines[..Self::NUM_SPECIAL] != SPECIAL_NAMES {
            return Err(Error::Format {
                what: "character vocabulary",
                detail: "missing special entries".into(),
            });
        }
        let mut chars = Vec::new();
        for (i, line) in lines[Self::NUM_SPECIAL..].iter().enumerate() {
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => {
                    return Err(Error::Format {
                        what: "character vocabulary",
                        detail: format!("line {} is not a single character", i + Self::NUM_SPECIAL + 1),
                    })
                }
            }
        }
        let vocab = Self::from_chars(chars.iter().copied());
        if vocab.chars.len() != chars.len() {
            return Err(Error::Format {
                what: "character vocabulary",
                detail: "duplicate character".into(),
            });
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first_and_are_distinct() {
        let v = CharVocab::from_documents(&[Document::new("ba a")]);
        assert_eq!(v.len(), 4 + 3);
        assert_eq!(v.id(' '), 4);
        assert_eq!(v.id('a'), 5);
        assert_eq!(v.id('z'), CharVocab::UNK);
        assert_eq!(v.id(END_OF_TEXT), CharVocab::EOT);
        assert_eq!(v.char_of(5), Some('a'));
        assert_eq!(v.char_of(CharVocab::EOS), None);
    }

    #[test]
    fn text_format_roundtrips() {
        let v = CharVocab::from_documents(&[Document::new("x\ty z<")]);
        let back = CharVocab::parse(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(CharVocab::parse("a\nb\n").is_err());
    }
}
