//! Text ingestion: documents with word extents, the character vocabulary,
//! the subword lexicon and word-aligned training chunks.

mod document;
mod lexicon;
mod vocab;

use std::fs;
use std::path::Path;

pub use document::{is_boundary_char, Document, END_OF_TEXT};
pub use lexicon::SubwordLexicon;
pub use vocab::{CharId, CharVocab, SPECIAL_NAMES};

use crate::error::{Error, Result};

/// Result of reading a corpus file.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub documents: Vec<Document>,
    pub vocab: CharVocab,
    /// Lines skipped because they held only whitespace.
    pub skipped_blank: usize,
    /// Characters that the supplied vocabulary maps to the unknown id.
    pub unknown_chars: usize,
}

/// Parses corpus text, one document per line.
pub fn parse_corpus(text: &str, vocab: Option<&CharVocab>) -> Result<LoadedCorpus> {
    let mut documents = Vec::new();
    let mut skipped_blank = 0;
    for line in text.lines() {
        if line.trim().is_empty() {
            if !line.is_empty() {
                skipped_blank += 1;
            }
            continue;
        }
        let cleaned: String = line.chars().filter(|&c| c != END_OF_TEXT).collect();
        documents.push(Document::new(&cleaned));
    }
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if skipped_blank > 0 {
        log::warn!("skipped {skipped_blank} whitespace-only lines");
    }
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => CharVocab::from_documents(&documents),
    };
    let unknown_chars = documents
        .iter()
        .flat_map(|d| d.chars().iter())
        .filter(|&&c| !vocab.contains(c))
        .count();
    Ok(LoadedCorpus {
        documents,
        vocab,
        skipped_blank,
        unknown_chars,
    })
}

/// Reads a UTF-8 corpus file. Without a vocabulary one is built from the
/// corpus; with one, unseen characters map to the unknown id.
pub fn load_corpus(path: &Path, vocab: Option<&CharVocab>) -> Result<LoadedCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, vocab)
}

/// Splits documents into chunks of at most `max_seq_len` characters without
/// splitting any word. Whitespace at a chunk boundary is dropped.
pub fn batchify(corpus: &[Document], max_seq_len: usize) -> Result<Vec<Document>> {
    if max_seq_len < 2 {
        return Err(Error::Config("max_seq_len must be at least 2".into()));
    }
    let mut chunks = Vec::new();
    for doc in corpus {
        let chars = doc.chars();
        // units: maximal words and single boundary characters
        let mut units: Vec<(usize, usize)> = Vec::new();
        let mut words = doc.words().into_iter().peekable();
        let mut k = 0;
        while k < chars.len() {
            match words.peek() {
                Some(&(s, e)) if s == k => {
                    units.push((s, e));
                    words.next();
                    k = e;
                }
                _ => {
                    units.push((k, k + 1));
                    k += 1;
                }
            }
        }

        let mut current: Vec<char> = Vec::new();
        let mut breaks: Vec<usize> = Vec::new();
        let flush = |current: &mut Vec<char>, breaks: &mut Vec<usize>, chunks: &mut Vec<Document>| {
            while current.last().is_some_and(|&c| is_boundary_char(c)) {
                current.pop();
            }
            if !current.is_empty() {
                chunks.push(Document::from_chars(std::mem::take(current), breaks));
            }
            current.clear();
            breaks.clear();
        };
        for (s, e) in units {
            let unit = &chars[s..e];
            let boundary = unit.len() == 1 && is_boundary_char(unit[0]);
            if !boundary && unit.len() > max_seq_len {
                return Err(Error::WordTooLong {
                    word: unit.iter().collect(),
                    len: unit.len(),
                    limit: max_seq_len,
                });
            }
            if current.len() + unit.len() > max_seq_len {
                flush(&mut current, &mut breaks, &mut chunks);
            }
            if boundary && current.is_empty() && !chunks.is_empty() && s > 0 {
                continue;
            }
            if !boundary && !current.is_empty() && !is_boundary_char(*current.last().unwrap()) {
                // two adjacent words separated by a forced break
                breaks.push(current.len());
            }
            current.extend_from_slice(unit);
        }
        flush(&mut current, &mut breaks, &mut chunks);
    }
    Ok(chunks)
}
