use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use super::SegmentedCorpus;
use crate::error::{Error, Result};

/// Reference morpheme splits keyed by word.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldMorphology {
    words: HashMap<String, Vec<String>>,
}

impl GoldMorphology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, morphemes: Vec<String>) -> Result<()> {
        if morphemes.is_empty() || morphemes.iter().any(String::is_empty) || morphemes.concat() != word {
            return Err(Error::Invalid(format!("morphemes {morphemes:?} do not spell {word:?}")));
        }
        self.words.insert(word.to_owned(), morphemes);
        Ok(())
    }

    /// Parses `word<TAB>m1|m2|…` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut gold = GoldMorphology::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |detail: String| Error::Format {
                what: "gold morphology",
                detail: format!("line {}: {detail}", i + 1),
            };
            let (word, morphs) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected word<TAB>morphemes".into()))?;
            gold.insert(word, morphs.split('|').map(str::to_owned).collect())
                .map_err(|e| bad(e.to_string()))?;
        }
        Ok(gold)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.words.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Character offsets of the internal split points of a segmentation.
pub fn internal_boundaries<S: AsRef<str>>(parts: &[S]) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut pos = 0;
    for p in &parts[..parts.len().saturating_sub(1)] {
        pos += p.as_ref().chars().count();
        out.insert(pos);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Word occurrences that were evaluated.
    pub words: usize,
}

/// Boundary precision, recall and F1 against `gold`, pooled over every word
/// occurrence that has a gold entry. With no predicted boundaries precision
/// is 0; likewise recall with no gold boundaries, and F1 when both are 0.
pub fn morph_boundary_prf(seg: &SegmentedCorpus, gold: &GoldMorphology) -> Result<BoundaryScores> {
    let (mut hits, mut predicted, mut expected, mut words) = (0usize, 0usize, 0usize, 0usize);
    for word in seg.words() {
        let Some(reference) = gold.get(&word.concat()) else {
            continue;
        };
        words += 1;
        let p = internal_boundaries(word);
        let g = internal_boundaries(reference);
        hits += p.intersection(&g).count();
        predicted += p.len();
        expected += g.len();
    }
    if words == 0 {
        return Err(Error::Invalid("no segmented word has a gold analysis".into()));
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(hits, predicted);
    let recall = ratio(hits, expected);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(BoundaryScores {
        precision,
        recall,
        f1,
        words,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(text: &str) -> SegmentedCorpus {
        SegmentedCorpus::from_pipe_text("t", text).unwrap()
    }

    #[test]
    fn partial_recall() {
        let gold = GoldMorphology::parse("ukuxhasa\tuku|xhas|a\n").unwrap();
        assert_eq!(internal_boundaries(gold.get("ukuxhasa").unwrap()), BTreeSet::from([3, 7]));
        let s = morph_boundary_prf(&seg("uku|xhasa"), &gold).unwrap();
        assert_eq!((s.precision, s.recall), (1.0, 0.5));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exact_match_and_no_prediction() {
        let gold = GoldMorphology::parse("ukuxhasa\tuku|xhas|a").unwrap();
        let s = morph_boundary_prf(&seg("uku|xhas|a"), &gold).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = morph_boundary_prf(&seg("ukuxhasa"), &gold).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn words_outside_gold_are_ignored() {
        let gold = GoldMorphology::parse("abc\ta|bc").unwrap();
        let s = morph_boundary_prf(&seg("a|bc x|y|z a|b|c"), &gold).unwrap();
        assert_eq!(s.words, 2);
        assert_eq!(s.precision, 2.0 / 3.0);
        assert_eq!(s.recall, 1.0);
        assert!(morph_boundary_prf(&seg("q|r"), &gold).is_err());
    }

    #[test]
    fn bad_gold_lines() {
        assert!(GoldMorphology::parse("abc\ta|b").is_err());
        assert!(GoldMorphology::parse("abc").is_err());
        assert!(GoldMorphology::parse("abc\ta||bc").is_err());
    }

    proptest! {
        #[test]
        fn scores_in_unit_cube(splits in prop::collection::vec((1usize..4, 1usize..4, any::<bool>()), 1..8)) {
            let mut gold = GoldMorphology::new();
            let mut words = Vec::new();
            for (i, (a, b, agree)) in splits.iter().enumerate() {
                let w: String = std::iter::repeat_n('a', a + b).chain(std::iter::repeat_n('b', i + 1)).collect();
                let chars: Vec<char> = w.chars().collect();
                let g = vec![chars[..*a].iter().collect::<String>(), chars[*a..].iter().collect()];
                gold.insert(&w, g.clone()).unwrap();
                words.push(if *agree { g } else { vec![w.clone()] });
            }
            let s = morph_boundary_prf(&SegmentedCorpus::new("p", vec![words]).unwrap(), &gold).unwrap();
            for v in [s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let all = splits.iter().all(|x| x.2);
            prop_assert_eq!(s.precision == 1.0 && s.recall == 1.0, all);
        }
    }
}
