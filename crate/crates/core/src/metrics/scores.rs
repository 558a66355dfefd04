use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const CHRF_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 2.0;
pub const BLEU_ORDER: usize = 4;
/// Constant added to the matched and total counts of every order above 1.
pub const BLEU_SMOOTHING_K: f64 = 1.0;
pub const BLEU_SMOOTHING: &str = "add-k (k=1) on 2- to 4-gram precisions";

fn ngram_counts<T: Eq + Hash + Clone>(items: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if items.len() >= n {
        for w in items.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

/// (hypothesis n-grams, reference n-grams, clipped matches) for one order.
fn match_stats<T: Eq + Hash + Clone>(hyp: &[T], reference: &[T], n: usize) -> [usize; 3] {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matches = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    [h.values().sum(), r.values().sum(), matches]
}

fn check_pairs(hyps: &[&str], refs: &[&str]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::Invalid(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if refs.is_empty() || refs.iter().any(|r| r.trim().is_empty()) {
        return Err(Error::Invalid("references must be non-empty".into()));
    }
    Ok(())
}

fn chrf_from_stats(stats: &[[usize; 3]; CHRF_ORDER]) -> f64 {
    let factor = CHRF_BETA * CHRF_BETA;
    let (mut prec, mut rec, mut order) = (0.0, 0.0, 0);
    for &[n_hyp, n_ref, n_match] in stats {
        if n_hyp > 0 && n_ref > 0 {
            prec += n_match as f64 / n_hyp as f64;
            rec += n_match as f64 / n_ref as f64;
            order += 1;
        }
    }
    if order == 0 {
        return 0.0;
    }
    prec /= order as f64;
    rec /= order as f64;
    if prec + rec == 0.0 {
        0.0
    } else {
        100.0 * (1.0 + factor) * prec * rec / (factor * prec + rec)
    }
}

/// Corpus chrF: character 1- to 6-gram statistics with whitespace removed,
/// summed over all pairs, then precision and recall averaged over the
/// orders both sides have n-grams for and combined with β = 2.
pub fn corpus_chrf(hyps: &[&str], refs: &[&str]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let mut stats = [[0usize; 3]; CHRF_ORDER];
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<char> = h.chars().filter(|c| !c.is_whitespace()).collect();
        let r: Vec<char> = r.chars().filter(|c| !c.is_whitespace()).collect();
        for (n, slot) in stats.iter_mut().enumerate() {
            let s = match_stats(&h, &r, n + 1);
            for i in 0..3 {
                slot[i] += s[i];
            }
        }
    }
    Ok(chrf_from_stats(&stats))
}

/// chrF of a single pair.
pub fn chrf(hypothesis: &str, reference: &str) -> Result<f64> {
    corpus_chrf(&[hypothesis], &[reference])
}

/// Corpus BLEU over whitespace tokens with up to 4-grams, the brevity
/// penalty, and add-one smoothing on the 2- to 4-gram precisions. The score
/// is 0 when no n-gram of any order matches.
pub fn corpus_bleu(hyps: &[&str], refs: &[&str]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let mut correct = [0.0f64; BLEU_ORDER];
    let mut total = [0.0f64; BLEU_ORDER];
    let (mut sys_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        sys_len += h.len();
        ref_len += r.len();
        for n in 0..BLEU_ORDER {
            let [n_hyp, _, n_match] = match_stats(&h, &r, n + 1);
            correct[n] += n_match as f64;
            total[n] += n_hyp as f64;
        }
    }
    let bp = if sys_len >= ref_len {
        1.0
    } else if sys_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / sys_len as f64).exp()
    };
    if correct.iter().all(|&c| c == 0.0) {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..BLEU_ORDER {
        if n > 0 {
            correct[n] += BLEU_SMOOTHING_K;
            total[n] += BLEU_SMOOTHING_K;
        }
        if correct[n] == 0.0 {
            return Ok(0.0);
        }
        log_sum += (correct[n] / total[n]).ln();
    }
    Ok(100.0 * bp * (log_sum / BLEU_ORDER as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_disjoint() {
        assert_eq!(chrf("molo wethu", "molo wethu").unwrap(), 100.0);
        assert_eq!(chrf("xyz", "abc").unwrap(), 0.0);
        assert_eq!(chrf("", "abc").unwrap(), 0.0);
        assert!(chrf("abc", "").is_err());
        let s = ["the cat sat", "a b c d e"];
        assert!((corpus_bleu(&s, &s).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(corpus_bleu(&["x y z"], &["a b c"]).unwrap(), 0.0);
        assert_eq!(corpus_bleu(&[""], &["a b c"]).unwrap(), 0.0);
        assert!(corpus_bleu(&["a"], &["a", "b"]).is_err());
    }

    #[test]
    fn reference_values() {
        assert!((chrf("abcd", "abce").unwrap() - 47.91666666666667).abs() < 1e-9);
        let hyps = ["the cat sat on the mat", "a b c"];
        let refs = ["the cat is on the mat", "a b d"];
        assert!((corpus_bleu(&hyps, &refs).unwrap() - 44.86302725796082).abs() < 1e-9);
    }

    #[test]
    fn whitespace_is_ignored_by_chrf() {
        assert_eq!(chrf("ab cd", "abcd").unwrap(), 100.0);
    }

    #[test]
    fn brevity_penalty_applies() {
        let full = corpus_bleu(&["a b c d"], &["a b c d"]).unwrap();
        let short = corpus_bleu(&["a b c"], &["a b c d"]).unwrap();
        assert!(short < full);
    }

    proptest! {
        #[test]
        fn scores_are_bounded(pairs in prop::collection::vec(("[ab ]{0,12}", "[ab]{1,3}( [ab]{1,3}){0,3}"), 1..5)) {
            let hyps: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
            let refs: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
            let c = corpus_chrf(&hyps, &refs).unwrap();
            let b = corpus_bleu(&hyps, &refs).unwrap();
            prop_assert!((0.0..=100.0 + 1e-9).contains(&c));
            prop_assert!((0.0..=100.0 + 1e-9).contains(&b));
            prop_assert!((corpus_chrf(&refs, &refs).unwrap() - 100.0).abs() < 1e-9);
        }
    }
}
