use std::fmt;

/// Reserved character marking the end of a generated text. It never occurs
/// in corpora (input lines are stripped of control characters of this kind)
/// and, like whitespace, always forms a segment on its own.
pub const END_OF_TEXT: char = '\u{0003}';

/// Characters that stand alone as single-character words.
#[inline]
pub fn is_boundary_char(c: char) -> bool {
    c.is_whitespace() || c == END_OF_TEXT
}

/// An immutable character sequence with its word extents.
///
/// Positions are 0-based. `word_start(k)` is the position of the first
/// character of the word containing `k`; a boundary character is its own
/// word.
#[derive(Clone, PartialEq, Eq)]
pub struct Document {
    chars: Vec<char>,
    word_start: Vec<usize>,
}

impl Document {
    pub fn new(text: &str) -> Self {
        Self::from_chars(text.chars().collect(), &[])
    }

    /// Builds a document with extra word breaks before each position in
    /// `breaks` (used to end a prompt context after the `=` marker).
    pub fn with_breaks(text: &str, breaks: &[usize]) -> Self {
        Self::from_chars(text.chars().collect(), breaks)
    }

    pub fn from_chars(chars: Vec<char>, breaks: &[usize]) -> Self {
        let mut word_start = Vec::with_capacity(chars.len());
        for (k, &c) in chars.iter().enumerate() {
            let starts_word = k == 0
                || is_boundary_char(c)
                || is_boundary_char(chars[k - 1])
                || breaks.contains(&k);
            word_start.push(if starts_word { k } else { word_start[k - 1] });
        }
        Document { chars, word_start }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn word_start(&self, k: usize) -> usize {
        self.word_start[k]
    }

    pub fn word_starts(&self) -> &[usize] {
        &self.word_start
    }

    /// True when a word boundary falls immediately before position `k`
    /// (`k == 0` and `k == len` count as boundaries).
    pub fn is_word_boundary(&self, k: usize) -> bool {
        k == 0 || k == self.len() || self.word_start[k] == k
    }

    /// Whether `start..end` (half-open) stays inside one word.
    pub fn span_within_word(&self, start: usize, end: usize) -> bool {
        start < end && end <= self.len() && self.word_start[end - 1] <= start
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn slice_text(&self, start: usize, end: usize) -> String {
        self.chars[start..end].iter().collect()
    }

    /// `(start, end)` spans of the maximal non-boundary runs.
    pub fn words(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut k = 0;
        while k < self.len() {
            if is_boundary_char(self.chars[k]) {
                k += 1;
                continue;
            }
            let start = k;
            while k < self.len() && !is_boundary_char(self.chars[k]) && (k == start || self.word_start[k] == start) {
                k += 1;
            }
            out.push((start, k));
        }
        out
    }
}

impl fmt::Debug for Document {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Document({:?})", self.text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_extents_treat_spaces_as_words() {
        let doc = Document::new("ba a bala");
        assert_eq!(doc.len(), 9);
        // spaces at positions 2 and 4 start their own words
        assert_eq!(doc.word_starts(), &[0, 0, 2, 3, 4, 5, 5, 5, 5]);
        assert!(doc.span_within_word(5, 9));
        assert!(!doc.span_within_word(1, 3));
        assert!(doc.span_within_word(2, 3));
        assert_eq!(doc.words(), vec![(0, 2), (3, 4), (5, 9)]);
        assert!(!doc.span_within_word(3, 5));
    }

    #[test]
    fn forced_break_splits_a_word() {
        let doc = Document::with_breaks("ab=cd", &[3]);
        assert_eq!(doc.word_starts(), &[0, 0, 0, 3, 3]);
        assert!(doc.is_word_boundary(3));
        assert_eq!(doc.words(), vec![(0, 3), (3, 5)]);
    }

    #[test]
    fn end_of_text_is_its_own_word() {
        let text: String = ['a', 'b', END_OF_TEXT].iter().collect();
        let doc = Document::new(&text);
        assert_eq!(doc.word_starts(), &[0, 0, 2]);
    }
}
