//! The segmentation lattice: forward scores, conditional likelihood, Viterbi
//! decoding and an exhaustive enumeration oracle.
//!
//! A document of `n` characters has one lattice node per prefix length
//! `0..=n` and one edge per admissible segment: a span of at most `L`
//! characters that does not cross a word boundary. All arithmetic is in log
//! space; impossible edges carry the [`LOG_ZERO`](crate::scalar::LOG_ZERO)
//! sentinel.

use std::collections::HashMap;
use std::fmt;

use ndarray::Array2;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::scalar::{is_log_zero, log_sum_exp, log_zero, Scalar};

/// Longest document [`enumerate_oracle`] accepts.
pub const MAX_ENUMERATION_LEN: usize = 14;

/// Edge scores of one document: cell `(end, len - 1)` holds the
/// log-probability of the segment covering `end + 1 - len ..= end`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentScores<T> {
    table: Array2<T>,
}

impl<T: Scalar> SegmentScores<T> {
    pub fn from_table(table: Array2<T>) -> Self {
        SegmentScores { table }
    }

    /// Fills every admissible span of `doc` with `score(start, end)`
    /// (half-open); everything else is the sentinel.
    pub fn build<F>(doc: &Document, max_len: usize, mut score: F) -> Self
    where
        F: FnMut(usize, usize) -> T,
    {
        let n = doc.len();
        let mut table = Array2::from_elem((n, max_len), log_zero());
        for end in 1..=n {
            for len in 1..=max_len.min(end) {
                let start = end - len;
                if doc.span_within_word(start, end) {
                    table[[end - 1, len - 1]] = score(start, end);
                }
            }
        }
        SegmentScores { table }
    }

    /// Number of characters.
    pub fn len(&self) -> usize {
        self.table.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.table.nrows() == 0
    }

    pub fn max_len(&self) -> usize {
        self.table.ncols()
    }

    pub fn table(&self) -> &Array2<T> {
        &self.table
    }

    /// Score of the half-open span `start..end`, `None` if inadmissible.
    pub fn get(&self, start: usize, end: usize) -> Option<T> {
        let len = end.checked_sub(start)?;
        if len == 0 || len > self.max_len() || end > self.len() {
            return None;
        }
        let v = self.table[[end - 1, len - 1]];
        (!is_log_zero(v)).then_some(v)
    }
}

/// Forward scores `log α_0 ..= log α_n` with `log α_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice<T> {
    pub log_alpha: Vec<T>,
}

impl<T: Scalar> Lattice<T> {
    pub fn log_marginal(&self) -> T {
        *self.log_alpha.last().expect("lattice has at least one node")
    }
}

/// A partition of `0..n` into half-open spans.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Segmentation {
    pub spans: Vec<(usize, usize)>,
}

impl Segmentation {
    pub fn new(spans: Vec<(usize, usize)>) -> Self {
        Segmentation { spans }
    }

    /// Segment strings of `doc`.
    pub fn segments(&self, doc: &Document) -> Vec<String> {
        self.spans.iter().map(|&(s, e)| doc.slice_text(s, e)).collect()
    }

    /// Checks contiguity, the length limit and word containment.
    pub fn is_valid_for(&self, doc: &Document, max_len: usize) -> bool {
        let mut pos = 0;
        for &(s, e) in &self.spans {
            if s != pos || e <= s || e - s > max_len || !doc.span_within_word(s, e) {
                return false;
            }
            pos = e;
        }
        pos == doc.len()
    }

    /// Pipe format: segments of a word joined by `|`, boundary characters
    /// written as they are (`"ndi|ya|bulela molo"`).
    pub fn to_pipe_format(&self, doc: &Document) -> String {
        let mut out = String::new();
        let mut prev_in_word = false;
        for &(s, e) in &self.spans {
            let in_word = !doc.chars()[s..e].iter().any(|&c| crate::corpus::is_boundary_char(c));
            if in_word && prev_in_word {
                out.push('|');
            }
            out.extend(&doc.chars()[s..e]);
            prev_in_word = in_word;
        }
        out
    }
}

impl fmt::Debug for Segmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Segmentation{:?}", self.spans)
    }
}

/// Anything that can score candidate segments of a document.
pub trait SegmentScorer<T: Scalar> {
    /// Longest admissible segment `L`.
    fn max_segment_len(&self) -> usize;

    /// Longest document the scorer accepts.
    fn max_document_len(&self) -> usize {
        usize::MAX
    }

    /// Scores every admissible span in one batched pass.
    fn score_table(&self, doc: &Document) -> Result<SegmentScores<T>>;

    /// Scores one span on its own, independently of [`score_table`].
    ///
    /// [`score_table`]: SegmentScorer::score_table
    fn span_log_prob(&self, doc: &Document, start: usize, end: usize) -> Result<T>;
}

/// Test scorer giving every admissible segment the same probability.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer {
    pub prob: f64,
    pub max_len: usize,
}

impl<T: Scalar> SegmentScorer<T> for ConstantScorer {
    fn max_segment_len(&self) -> usize {
        self.max_len
    }

    fn score_table(&self, doc: &Document) -> Result<SegmentScores<T>> {
        let lp = T::lit(self.prob.ln());
        Ok(SegmentScores::build(doc, self.max_len, |_, _| lp))
    }

    fn span_log_prob(&self, doc: &Document, start: usize, end: usize) -> Result<T> {
        check_span(doc, start, end, self.max_len)?;
        Ok(T::lit(self.prob.ln()))
    }
}

/// Validates a half-open span against the segment constraints.
pub fn check_span(doc: &Document, start: usize, end: usize, max_len: usize) -> Result<()> {
    let reason = if start >= end || end > doc.len() {
        "span is empty or outside the document"
    } else if end - start > max_len {
        "span is longer than the maximum segment length"
    } else if !doc.span_within_word(start, end) {
        "span crosses a word boundary"
    } else {
        return Ok(());
    };
    Err(Error::InvalidSpan { start, end, reason })
}

/// `log α_k` for every prefix length `k`.
pub fn forward_scores<T: Scalar>(scores: &SegmentScores<T>) -> Vec<T> {
    let n = scores.len();
    let table = scores.table();
    let mut alpha = Vec::with_capacity(n + 1);
    alpha.push(T::zero());
    for end in 1..=n {
        let terms = (1..=scores.max_len().min(end)).filter_map(|len| {
            let s = table[[end - 1, len - 1]];
            let a = alpha[end - len];
            (!is_log_zero(s) && !is_log_zero(a)).then(|| a + s)
        });
        alpha.push(log_sum_exp(terms));
    }
    alpha
}

/// Backward scores of the lattice restricted to the first `upto`
/// characters: `log β_k` is the log-probability of covering `k..upto`.
pub fn backward_scores<T: Scalar>(scores: &SegmentScores<T>, upto: usize) -> Vec<T> {
    let table = scores.table();
    let mut beta = vec![log_zero::<T>(); upto + 1];
    beta[upto] = T::zero();
    for start in (0..upto).rev() {
        let terms = (1..=scores.max_len().min(upto - start)).filter_map(|len| {
            let s = table[[start + len - 1, len - 1]];
            let b = beta[start + len];
            (!is_log_zero(s) && !is_log_zero(b)).then(|| s + b)
        });
        beta[start] = log_sum_exp(terms);
    }
    beta
}

/// Posterior probability of every edge in the lattice over the first
/// `upto` characters (cells outside that prefix are zero). This is the
/// gradient of `log α_upto` with respect to the edge scores.
pub fn edge_posteriors<T: Scalar>(scores: &SegmentScores<T>, upto: usize) -> Array2<T> {
    let table = scores.table();
    let alpha = forward_scores(scores);
    let beta = backward_scores(scores, upto);
    let total = alpha[upto];
    let mut post = Array2::zeros(table.raw_dim());
    if is_log_zero(total) {
        return post;
    }
    for end in 1..=upto {
        for len in 1..=scores.max_len().min(end) {
            let s = table[[end - 1, len - 1]];
            let (a, b) = (alpha[end - len], beta[end]);
            if is_log_zero(s) || is_log_zero(a) || is_log_zero(b) {
                continue;
            }
            post[[end - 1, len - 1]] = (a + s + b - total).exp();
        }
    }
    post
}

/// Best path through an already scored lattice. Ties prefer the longer
/// final segment at each node.
pub fn viterbi_path<T: Scalar>(scores: &SegmentScores<T>) -> (Segmentation, T) {
    let n = scores.len();
    let table = scores.table();
    let mut best = vec![log_zero::<T>(); n + 1];
    let mut back = vec![0usize; n + 1];
    best[0] = T::zero();
    for end in 1..=n {
        for len in 1..=scores.max_len().min(end) {
            let s = table[[end - 1, len - 1]];
            let prev = best[end - len];
            if is_log_zero(s) || is_log_zero(prev) {
                continue;
            }
            let cand = prev + s;
            if back[end] == 0 || cand >= best[end] {
                best[end] = cand;
                back[end] = len;
            }
        }
    }
    let mut spans = Vec::new();
    let mut pos = n;
    while pos > 0 {
        let len = back[pos];
        assert!(len > 0, "lattice node {pos} is unreachable");
        spans.push((pos - len, pos));
        pos -= len;
    }
    spans.reverse();
    (Segmentation::new(spans), best[n])
}

fn check_length<T: Scalar, S: SegmentScorer<T> + ?Sized>(scorer: &S, doc: &Document) -> Result<()> {
    if doc.len() > scorer.max_document_len() {
        return Err(Error::SequenceTooLong {
            len: doc.len(),
            limit: scorer.max_document_len(),
        });
    }
    Ok(())
}

/// `log p(D)` marginalised over all segmentations, with the full lattice.
pub fn forward_marginal<T: Scalar, S: SegmentScorer<T> + ?Sized>(
    scorer: &S,
    doc: &Document,
) -> Result<(T, Lattice<T>)> {
    check_length(scorer, doc)?;
    let scores = scorer.score_table(doc)?;
    let lattice = Lattice {
        log_alpha: forward_scores(&scores),
    };
    Ok((lattice.log_marginal(), lattice))
}

/// `log p(O | C) = log α_n − log α_|C|`, where the context is the first
/// `context_len` characters and must end on a word boundary.
pub fn conditional_log_likelihood<T: Scalar, S: SegmentScorer<T> + ?Sized>(
    scorer: &S,
    doc: &Document,
    context_len: usize,
) -> Result<T> {
    validate_context(doc, context_len)?;
    let (_, lattice) = forward_marginal(scorer, doc)?;
    Ok(lattice.log_marginal() - lattice.log_alpha[context_len])
}

pub fn validate_context(doc: &Document, context_len: usize) -> Result<()> {
    if context_len > doc.len() {
        return Err(Error::InvalidContext {
            context: context_len,
            len: doc.len(),
            reason: "context is longer than the document",
        });
    }
    if !doc.is_word_boundary(context_len) {
        return Err(Error::InvalidContext {
            context: context_len,
            len: doc.len(),
            reason: "context does not end on a word boundary",
        });
    }
    Ok(())
}

/// The single most probable segmentation and its joint log-probability.
pub fn viterbi<T: Scalar, S: SegmentScorer<T> + ?Sized>(
    scorer: &S,
    doc: &Document,
) -> Result<(Segmentation, T)> {
    check_length(scorer, doc)?;
    let scores = scorer.score_table(doc)?;
    Ok(viterbi_path(&scores))
}

/// Every segmentation of `doc` with its chain-rule log-probability, each
/// segment scored through [`SegmentScorer::span_log_prob`].
pub fn enumerate_oracle<T: Scalar, S: SegmentScorer<T> + ?Sized>(
    scorer: &S,
    doc: &Document,
) -> Result<Vec<(Segmentation, T)>> {
    if doc.len() > MAX_ENUMERATION_LEN {
        return Err(Error::TooLongForEnumeration {
            len: doc.len(),
            max: MAX_ENUMERATION_LEN,
        });
    }
    check_length(scorer, doc)?;
    let max_len = scorer.max_segment_len();
    let mut span_scores = HashMap::new();
    for start in 0..doc.len() {
        for end in start + 1..=(start + max_len).min(doc.len()) {
            if doc.span_within_word(start, end) {
                span_scores.insert((start, end), scorer.span_log_prob(doc, start, end)?);
            }
        }
    }

    fn extend<T: Scalar>(
        pos: usize,
        n: usize,
        spans: &mut Vec<(usize, usize)>,
        span_scores: &HashMap<(usize, usize), T>,
        out: &mut Vec<(Segmentation, T)>,
    ) {
        if pos == n {
            let total = spans.iter().map(|sp| span_scores[sp]).sum();
            out.push((Segmentation::new(spans.clone()), total));
            return;
        }
        for end in pos + 1..=n {
            if span_scores.contains_key(&(pos, end)) {
                spans.push((pos, end));
                extend(end, n, spans, span_scores, out);
                spans.pop();
            }
        }
    }

    let mut out = Vec::new();
    extend(0, doc.len(), &mut Vec::new(), &span_scores, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub(max_len: usize) -> ConstantScorer {
        ConstantScorer { prob: 0.1, max_len }
    }

    #[test]
    fn three_letter_word_marginal() {
        let doc = Document::new("abc");
        let (lp, lattice) = forward_marginal::<f64, _>(&stub(3), &doc).unwrap();
        assert!((lp.exp() - 0.121).abs() < 1e-12);
        assert_eq!(lattice.log_alpha.len(), 4);
        assert_eq!(lattice.log_alpha[0], 0.0);
    }

    #[test]
    fn single_character_document() {
        let doc = Document::new("a");
        let (lp, _) = forward_marginal::<f64, _>(&stub(5), &doc).unwrap();
        assert!((lp - 0.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unit_segments_collapse_the_lattice() {
        let doc = Document::new("ab cd");
        let (lp, _) = forward_marginal::<f64, _>(&stub(1), &doc).unwrap();
        assert!((lp - 5.0 * 0.1f64.ln()).abs() < 1e-9);
        let (seg, _) = viterbi::<f64, _>(&stub(1), &doc).unwrap();
        assert_eq!(seg.spans, (0..5).map(|k| (k, k + 1)).collect::<Vec<_>>());
    }

    #[test]
    fn conditional_examples() {
        let doc = Document::new("abc");
        // the context must end at a word boundary; "abc" with a forced break
        let split = Document::with_breaks("abc", &[1]);
        let full = conditional_log_likelihood::<f64, _>(&stub(3), &doc, 0).unwrap();
        assert!((full.exp() - 0.121).abs() < 1e-12);
        let empty = conditional_log_likelihood::<f64, _>(&stub(3), &doc, 3).unwrap();
        assert_eq!(empty, 0.0);
        assert!(conditional_log_likelihood::<f64, _>(&stub(3), &doc, 1).is_err());
        assert!(conditional_log_likelihood::<f64, _>(&stub(3), &doc, 4).is_err());
        // with the break: "a" | "bc" -> 0.1 * (0.1 + 0.01); ratio 0.11
        let c = conditional_log_likelihood::<f64, _>(&stub(3), &split, 1).unwrap();
        assert!((c.exp() - 0.11).abs() < 1e-12);
    }

    #[test]
    fn unbroken_lattice_ratio_at_one_character() {
        // lattice-level identity on the unconstrained word: 0.121 / 0.1
        let doc = Document::new("abc");
        let scores = <ConstantScorer as SegmentScorer<f64>>::score_table(&stub(3), &doc).unwrap();
        let alpha = forward_scores(&scores);
        assert!(((alpha[3] - alpha[1]).exp() - 1.21).abs() < 1e-12);
    }

    #[test]
    fn viterbi_prefers_whole_word_under_stub() {
        let (seg, lp) = viterbi::<f64, _>(&stub(3), &Document::new("abc")).unwrap();
        assert_eq!(seg.spans, vec![(0, 3)]);
        assert!((lp.exp() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn viterbi_respects_word_boundaries() {
        let doc = Document::new("ab cd");
        let (seg, _) = viterbi::<f64, _>(&stub(5), &doc).unwrap();
        assert_eq!(seg.spans, vec![(0, 2), (2, 3), (3, 5)]);
        assert!(seg.is_valid_for(&doc, 5));
        assert_eq!(seg.to_pipe_format(&doc), "ab cd");
    }

    #[test]
    fn enumeration_counts() {
        for m in 1..=6 {
            let doc = Document::new(&"x".repeat(m));
            let all = enumerate_oracle::<f64, _>(&stub(m), &doc).unwrap();
            assert_eq!(all.len(), 1 << (m - 1));
        }
        let three = enumerate_oracle::<f64, _>(&stub(2), &Document::new("abc")).unwrap();
        assert_eq!(three.len(), 3);
        let spaced = enumerate_oracle::<f64, _>(&stub(3), &Document::new("a b")).unwrap();
        assert_eq!(spaced.len(), 1);
        assert!(enumerate_oracle::<f64, _>(&stub(3), &Document::new(&"a".repeat(15))).is_err());
    }

    #[test]
    fn posteriors_sum_to_expected_segment_count() {
        let doc = Document::new("abcd ef");
        let scores = <ConstantScorer as SegmentScorer<f64>>::score_table(&stub(3), &doc).unwrap();
        let post = edge_posteriors(&scores, doc.len());
        // every character is covered exactly once
        for k in 0..doc.len() {
            let mut cover = 0.0;
            for end in k + 1..=doc.len() {
                for len in 1..=3usize {
                    if end >= len && end - len <= k {
                        cover += post[[end - 1, len - 1]];
                    }
                }
            }
            assert!((cover - 1.0).abs() < 1e-12, "position {k}: {cover}");
        }
    }

    #[test]
    fn pipe_format_marks_internal_boundaries() {
        let doc = Document::new("ndiyabulela molo");
        let seg = Segmentation::new(vec![(0, 3), (3, 5), (5, 11), (11, 12), (12, 16)]);
        assert!(seg.is_valid_for(&doc, 6));
        assert_eq!(seg.to_pipe_format(&doc), "ndi|ya|bulela molo");
        assert_eq!(seg.segments(&doc), ["ndi", "ya", "bulela", " ", "molo"]);
    }

    #[test]
    fn invalid_spans_are_rejected() {
        let doc = Document::new("ab cd");
        assert!(check_span(&doc, 0, 2, 5).is_ok());
        assert!(check_span(&doc, 1, 4, 5).is_err());
        assert!(check_span(&doc, 3, 5, 1).is_err());
        assert!(check_span(&doc, 2, 2, 5).is_err());
    }
}
