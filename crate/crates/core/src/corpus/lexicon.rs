use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::{is_boundary_char, Document};
use crate::error::{Error, Result};

/// The fixed subword inventory scored by the lexicon head.
///
/// Ids follow rank order: more frequent n-grams first, ties broken by
/// shorter length and then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordLexicon {
    entries: Vec<String>,
    index: HashMap<Box<[char]>, u32>,
    max_len: usize,
}

impl SubwordLexicon {
    /// Counts every within-word n-gram of length `1..=max_len` and keeps the
    /// `size` highest ranked, with every single character of the corpus
    /// guaranteed a slot.
    pub fn build(corpus: &[Document], size: usize, max_len: usize) -> Result<Self> {
        if max_len == 0 || size == 0 {
            return Err(Error::Config("lexicon size and max_len must be positive".into()));
        }
        let mut counts: HashMap<&[char], u64> = HashMap::new();
        for doc in corpus {
            let chars = doc.chars();
            for (start, end) in doc.words() {
                for i in start..end {
                    for len in 1..=max_len.min(end - i) {
                        *counts.entry(&chars[i..i + len]).or_default() += 1;
                    }
                }
            }
        }
        let distinct = counts.keys().filter(|k| k.len() == 1).count();
        if distinct == 0 {
            return Err(Error::EmptyCorpus);
        }
        if size < distinct {
            return Err(Error::LexiconTooSmall { size, distinct });
        }

        let mut ranked: Vec<(&[char], u64)> = counts.into_iter().collect();
        ranked.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then(a.len().cmp(&b.len())).then(a.cmp(b)));

        let multi_slots = size - distinct;
        let mut taken_multi = 0;
        let mut entries = Vec::with_capacity(size);
        for (gram, _) in ranked {
            if gram.len() == 1 {
                entries.push(gram.iter().collect::<String>());
            } else if taken_multi < multi_slots {
                taken_multi += 1;
                entries.push(gram.iter().collect::<String>());
            }
        }
        Self::from_entries(entries, max_len)
    }

    pub fn from_entries(entries: Vec<String>, max_len: usize) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            let chars: Box<[char]> = e.chars().collect();
            if chars.is_empty() || chars.len() > max_len {
                return Err(Error::Format {
                    what: "lexicon",
                    detail: format!("entry {e:?} has length outside 1..={max_len}"),
                });
            }
            if chars.iter().any(|&c| is_boundary_char(c)) {
                return Err(Error::Format {
                    what: "lexicon",
                    detail: format!("entry {e:?} contains a word boundary"),
                });
            }
            if index.insert(chars, i as u32).is_some() {
                return Err(Error::Format {
                    what: "lexicon",
                    detail: format!("duplicate entry {e:?}"),
                });
            }
        }
        Ok(SubwordLexicon {
            entries,
            index,
            max_len,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn id(&self, segment: &[char]) -> Option<u32> {
        self.index.get(segment).copied()
    }

    pub fn entry(&self, id: u32) -> &str {
        &self.entries[id as usize]
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(e);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, max_len: usize) -> Result<Self> {
        let entries = text.lines().map(str::to_owned).collect();
        Self::from_entries(entries, max_len)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, max_len: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, max_len)
    }
}
