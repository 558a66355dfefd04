use crate::corpus::{batchify, is_boundary_char, Document};
use crate::error::{Error, Result};
use crate::lattice::{viterbi, SegmentScorer};
use crate::scalar::Scalar;

/// Subword sequences of a word occurrence.
pub type WordSegmentation = Vec<String>;

/// Word-level segmentations of a corpus, one list of words per document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedCorpus {
    pub source: String,
    pub documents: Vec<Vec<WordSegmentation>>,
}

impl SegmentedCorpus {
    pub fn new(source: impl Into<String>, documents: Vec<Vec<WordSegmentation>>) -> Result<Self> {
        for word in documents.iter().flatten() {
            if word.is_empty() || word.iter().any(|s| s.is_empty() || s.chars().any(is_boundary_char)) {
                return Err(Error::Invalid(format!("bad word segmentation {word:?}")));
            }
        }
        Ok(SegmentedCorpus {
            source: source.into(),
            documents,
        })
    }

    /// Reads pipe format: one document per line, whitespace between words
    /// and `|` between subwords.
    pub fn from_pipe_text(source: impl Into<String>, text: &str) -> Result<Self> {
        let documents = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                line.split_whitespace()
                    .map(|w| w.split('|').map(str::to_owned).collect())
                    .collect()
            })
            .collect();
        SegmentedCorpus::new(source, documents).map_err(|e| Error::Format {
            what: "segmented corpus",
            detail: e.to_string(),
        })
    }

    pub fn to_pipe_text(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            let words: Vec<String> = doc.iter().map(|w| w.join("|")).collect();
            out.push_str(&words.join(" "));
            out.push('\n');
        }
        out
    }

    /// Every word occurrence in corpus order.
    pub fn words(&self) -> impl Iterator<Item = &WordSegmentation> {
        self.documents.iter().flatten()
    }

    pub fn num_words(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }
}

/// Word segmentations of one document from its best lattice path, with
/// whitespace segments dropped.
fn segment_words<T: Scalar, S: SegmentScorer<T> + ?Sized>(scorer: &S, doc: &Document) -> Result<Vec<WordSegmentation>> {
    let (path, _) = viterbi(scorer, doc)?;
    let mut words = Vec::new();
    let mut spans = path.spans.iter().peekable();
    for (ws, we) in doc.words() {
        let mut word = Vec::new();
        while let Some(&&(s, e)) = spans.peek() {
            if s >= we {
                break;
            }
            spans.next();
            if s >= ws {
                word.push(doc.slice_text(s, e));
            }
        }
        words.push(word);
    }
    Ok(words)
}

/// Segments `docs` with the most probable segmentation under `scorer`.
/// Documents longer than the scorer's context are split between words.
pub fn segment_corpus<T: Scalar, S: SegmentScorer<T> + ?Sized>(
    scorer: &S,
    docs: &[Document],
    source: impl Into<String>,
) -> Result<SegmentedCorpus> {
    let limit = scorer.max_document_len();
    let mut out = Vec::with_capacity(docs.len());
    for doc in docs {
        let mut words = Vec::new();
        if doc.len() <= limit {
            words = segment_words(scorer, doc)?;
        } else {
            for chunk in batchify(std::slice::from_ref(doc), limit)? {
                words.extend(segment_words(scorer, &chunk)?);
            }
        }
        out.push(words);
    }
    SegmentedCorpus::new(source, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ConstantScorer;

    #[test]
    fn pipe_round_trip() {
        let text = "ndi|ya|bulela molo\naba|hlobo rona\n";
        let seg = SegmentedCorpus::from_pipe_text("x", text).unwrap();
        assert_eq!(seg.num_words(), 4);
        assert_eq!(seg.documents[0][0], vec!["ndi", "ya", "bulela"]);
        assert_eq!(seg.to_pipe_text(), text);
    }

    #[test]
    fn rejects_empty_subwords() {
        assert!(SegmentedCorpus::from_pipe_text("x", "a||b").is_err());
        assert!(SegmentedCorpus::new("x", vec![vec![vec!["a b".into()]]]).is_err());
    }

    #[test]
    fn single_character_scorer_splits_everything() {
        let scorer = ConstantScorer {
            prob: 0.5,
            max_len: 1,
        };
        let docs = vec![Document::new("ab  c"), Document::new("de")];
        let seg = segment_corpus::<f64, _>(&scorer, &docs, "l1").unwrap();
        assert_eq!(seg.to_pipe_text(), "a|b c\nd|e\n");
    }

    struct Short(ConstantScorer);

    impl SegmentScorer<f64> for Short {
        fn max_segment_len(&self) -> usize {
            3
        }

        fn max_document_len(&self) -> usize {
            8
        }

        fn score_table(&self, doc: &Document) -> Result<crate::lattice::SegmentScores<f64>> {
            assert!(doc.len() <= 8);
            self.0.score_table(doc)
        }

        fn span_log_prob(&self, doc: &Document, start: usize, end: usize) -> Result<f64> {
            self.0.span_log_prob(doc, start, end)
        }
    }

    #[test]
    fn long_documents_are_chunked() {
        let scorer = Short(ConstantScorer { prob: 0.1, max_len: 3 });
        let docs = vec![Document::new("abc de fgh ij")];
        let seg = segment_corpus(&scorer, &docs, "x").unwrap();
        assert_eq!(seg.to_pipe_text(), "abc de fgh ij\n");
    }
}
