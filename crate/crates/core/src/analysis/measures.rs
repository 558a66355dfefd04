use std::collections::{BTreeMap, HashMap, HashSet};

use super::SegmentedCorpus;
use crate::error::{Error, Result};

/// Mean number of subwords per word occurrence.
pub fn fertility(seg: &SegmentedCorpus) -> Result<f64> {
    let words = seg.num_words();
    if words == 0 {
        return Err(Error::EmptyCorpus);
    }
    let subwords: usize = seg.words().map(Vec::len).sum();
    Ok(subwords as f64 / words as f64)
}

/// Number of word occurrences split into each number of subwords.
pub fn fertility_histogram(seg: &SegmentedCorpus) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for w in seg.words() {
        *hist.entry(w.len()).or_default() += 1;
    }
    hist
}

/// Productivity and idiosyncrasy of every subword produced in a corpus.
#[derive(Debug, Clone)]
pub struct SubwordStats {
    /// Subword → (distinct word types containing it, summed token frequency
    /// of those types).
    table: HashMap<String, (usize, usize)>,
}

impl SubwordStats {
    pub fn compute(seg: &SegmentedCorpus) -> Self {
        let mut freq: HashMap<String, usize> = HashMap::new();
        let mut types: HashMap<&str, HashSet<String>> = HashMap::new();
        for word in seg.words() {
            let text = word.concat();
            for s in word {
                types.entry(s).or_default().insert(text.clone());
            }
            *freq.entry(text).or_default() += 1;
        }
        let table = types
            .into_iter()
            .map(|(s, ws)| {
                let total = ws.iter().map(|w| freq[w]).sum();
                (s.to_owned(), (ws.len(), total))
            })
            .collect();
        SubwordStats { table }
    }

    fn entry(&self, subword: &str) -> Result<(usize, usize)> {
        self.table
            .get(subword)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("subword {subword:?} is never produced")))
    }

    /// Number of distinct word types whose segmentation uses `subword`.
    pub fn productivity(&self, subword: &str) -> Result<usize> {
        Ok(self.entry(subword)?.0)
    }

    /// Mean corpus frequency of the word types that use `subword`.
    pub fn idiosyncrasy(&self, subword: &str) -> Result<f64> {
        let (n, total) = self.entry(subword)?;
        Ok(total as f64 / n as f64)
    }

    pub fn num_subwords(&self) -> usize {
        self.table.len()
    }

    /// Subwords in sorted order.
    pub fn subwords(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.table.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }

    /// Means over the distinct produced subwords: (productivity,
    /// idiosyncrasy).
    pub fn type_means(&self) -> Result<(f64, f64)> {
        if self.table.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n = self.table.len() as f64;
        let mut p = 0.0;
        let mut i = 0.0;
        for s in self.subwords() {
            let (count, total) = self.table[s];
            p += count as f64;
            i += total as f64 / count as f64;
        }
        Ok((p / n, i / n))
    }
}

pub fn productivity(seg: &SegmentedCorpus, subword: &str) -> Result<usize> {
    SubwordStats::compute(seg).productivity(subword)
}

pub fn idiosyncrasy(seg: &SegmentedCorpus, subword: &str) -> Result<f64> {
    SubwordStats::compute(seg).idiosyncrasy(subword)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(text: &str) -> SegmentedCorpus {
        SegmentedCorpus::from_pipe_text("t", text).unwrap()
    }

    #[test]
    fn fertility_examples() {
        assert_eq!(fertility(&corpus("aba|hlobo rona")).unwrap(), 1.5);
        assert_eq!(fertility(&corpus("ab cd ef")).unwrap(), 1.0);
        assert_eq!(fertility(&corpus("ndi|ya|bulela")).unwrap(), 3.0);
        assert!(fertility(&corpus("")).is_err());
    }

    #[test]
    fn productivity_and_idiosyncrasy() {
        let seg = corpus("read|ing read|ing sing|ing read|ing\nread|ing sing|ing glad|ly");
        let stats = SubwordStats::compute(&seg);
        assert_eq!(stats.productivity("ing").unwrap(), 2);
        assert_eq!(stats.idiosyncrasy("ing").unwrap(), 3.0);
        assert_eq!(stats.productivity("ly").unwrap(), 1);
        assert_eq!(stats.idiosyncrasy("glad").unwrap(), 1.0);
        assert!(stats.productivity("xyz").is_err());
        assert_eq!(productivity(&seg, "read").unwrap(), 1);
        assert_eq!(idiosyncrasy(&seg, "read").unwrap(), 4.0);
    }

    #[test]
    fn single_type_frequency_seven() {
        let seg = corpus(&"x|yz ".repeat(7));
        assert_eq!(productivity(&seg, "yz").unwrap(), 1);
        assert_eq!(idiosyncrasy(&seg, "yz").unwrap(), 7.0);
    }

    #[test]
    fn type_means_and_histogram() {
        let seg = corpus("a|b a|b c");
        let (p, i) = SubwordStats::compute(&seg).type_means().unwrap();
        // a: 1 type, freq 2; b: same; c: 1 type, freq 1
        assert_eq!(p, 1.0);
        assert_eq!(i, 5.0 / 3.0);
        assert_eq!(fertility_histogram(&seg), BTreeMap::from([(1, 1), (2, 2)]));
    }

    fn arb_corpus() -> impl Strategy<Value = SegmentedCorpus> {
        let word = prop::collection::vec("[abc]{1,3}", 1..4);
        let doc = prop::collection::vec(word, 1..6);
        prop::collection::vec(doc, 1..4).prop_map(|d| SegmentedCorpus::new("p", d).unwrap())
    }

    proptest! {
        #[test]
        fn bounds_hold(seg in arb_corpus()) {
            let f = fertility(&seg).unwrap();
            prop_assert!(f >= 1.0);
            let split = seg.words().any(|w| w.len() > 1);
            prop_assert_eq!(f == 1.0, !split);
            let types: HashSet<String> = seg.words().map(|w| w.concat()).collect();
            let stats = SubwordStats::compute(&seg);
            for s in stats.subwords() {
                let p = stats.productivity(s).unwrap();
                prop_assert!(p >= 1 && p <= types.len());
                prop_assert!(stats.idiosyncrasy(s).unwrap() >= 1.0);
            }
        }

        #[test]
        fn document_order_is_irrelevant(seg in arb_corpus()) {
            let mut rev = seg.clone();
            rev.documents.reverse();
            prop_assert_eq!(fertility(&seg).unwrap(), fertility(&rev).unwrap());
            let a = SubwordStats::compute(&seg).type_means().unwrap();
            let b = SubwordStats::compute(&rev).type_means().unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
