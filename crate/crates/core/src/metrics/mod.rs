//! Generation quality: chrF, BLEU and the share of degenerate outputs.

mod scores;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

pub use scores::{
    chrf, corpus_bleu, corpus_chrf, BLEU_ORDER, BLEU_SMOOTHING, BLEU_SMOOTHING_K, CHRF_BETA, CHRF_ORDER,
};

use crate::decoding::{detect_degeneration_with, dynamic_decode, DecodeConfig, DegenerationRules, SegmentLm};
use crate::error::{Error, Result};
use crate::training::{render_prompt, PromptExample};

/// Aggregate scores of a test set, each in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub chrf: f64,
    pub bleu: f64,
    pub deg_pct: f64,
    pub n_examples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleResult {
    pub prompt: String,
    pub hypothesis: String,
    pub reference: String,
    /// Why the output counts as degenerate, if it does.
    pub degenerate: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub examples: Vec<ExampleResult>,
}

pub const DECODE_FAILURE: &str = "decode-failure";

/// Scores finished hypotheses against references.
pub fn score_outputs(examples: Vec<ExampleResult>) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    let hyps: Vec<&str> = examples.iter().map(|e| e.hypothesis.as_str()).collect();
    let refs: Vec<&str> = examples.iter().map(|e| e.reference.as_str()).collect();
    let degenerate = examples.iter().filter(|e| e.degenerate.is_some()).count();
    let report = EvalReport {
        chrf: corpus_chrf(&hyps, &refs)?,
        bleu: corpus_bleu(&hyps, &refs)?,
        deg_pct: 100.0 * degenerate as f64 / examples.len() as f64,
        n_examples: examples.len(),
    };
    Ok(Evaluation { report, examples })
}

/// Decodes every test prompt and scores the completions. A prompt that
/// fails to decode yields an empty hypothesis counted as degenerate.
pub fn evaluate<M: SegmentLm>(
    model: &M,
    testset: &[PromptExample],
    decode: &DecodeConfig,
    rules: &DegenerationRules,
) -> Result<Evaluation> {
    let mut examples = Vec::with_capacity(testset.len());
    for ex in testset {
        let (hypothesis, degenerate) = match dynamic_decode(model, &render_prompt(&ex.context), decode) {
            Ok(out) => {
                let flag = detect_degeneration_with(&out.text, rules).map(|r| r.to_string());
                (out.text, flag)
            }
            Err(e) => {
                log::warn!("decoding {:?} failed: {e}", ex.context);
                (String::new(), Some(DECODE_FAILURE.to_owned()))
            }
        };
        examples.push(ExampleResult {
            prompt: ex.context.clone(),
            hypothesis,
            reference: ex.completion.clone(),
            degenerate,
        });
    }
    score_outputs(examples)
}

fn tsv_field(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

impl Evaluation {
    /// `prompt, hypothesis, reference, degenerate, reason` per example.
    pub fn examples_tsv(&self) -> String {
        let mut out = String::from("prompt\thypothesis\treference\tdegenerate\treason\n");
        for e in &self.examples {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                tsv_field(&e.prompt),
                tsv_field(&e.hypothesis),
                tsv_field(&e.reference),
                e.degenerate.is_some(),
                tsv_field(e.degenerate.as_deref().unwrap_or(""))
            )
            .unwrap();
        }
        out
    }

    /// The report with the decoding and metric settings alongside.
    pub fn report_json(&self, decode: &DecodeConfig, rules: &DegenerationRules, extra: &[(&str, String)]) -> String {
        #[derive(Serialize)]
        struct Config<'a> {
            beam_size: usize,
            max_new_chars: usize,
            degeneration_min_repeats: usize,
            degeneration_max_word_len: usize,
            chrf_char_order: usize,
            chrf_beta: f64,
            bleu_max_order: usize,
            bleu_tokenize: &'a str,
            bleu_smoothing: &'a str,
            #[serde(flatten)]
            extra: std::collections::BTreeMap<&'a str, &'a str>,
        }
        #[derive(Serialize)]
        struct Report<'a> {
            #[serde(flatten)]
            scores: &'a EvalReport,
            config: Config<'a>,
        }
        let report = Report {
            scores: &self.report,
            config: Config {
                beam_size: decode.beam_size,
                max_new_chars: decode.max_new_chars,
                degeneration_min_repeats: rules.min_repeats,
                degeneration_max_word_len: rules.max_word_len,
                chrf_char_order: CHRF_ORDER,
                chrf_beta: CHRF_BETA,
                bleu_max_order: BLEU_ORDER,
                bleu_tokenize: "whitespace",
                bleu_smoothing: BLEU_SMOOTHING,
                extra: extra.iter().map(|(k, v)| (*k, v.as_str())).collect(),
            },
        };
        serde_json::to_string_pretty(&report).expect("report serialises")
    }

    pub fn write(&self, tsv: &Path, json: &Path, decode: &DecodeConfig, rules: &DegenerationRules, extra: &[(&str, String)]) -> Result<()> {
        fs::write(tsv, self.examples_tsv()).map_err(|e| Error::io(tsv, e))?;
        fs::write(json, self.report_json(decode, rules, extra) + "\n").map_err(|e| Error::io(json, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::END_OF_TEXT;

    fn result(h: &str, r: &str) -> ExampleResult {
        ExampleResult {
            prompt: "p".into(),
            hypothesis: h.into(),
            reference: r.into(),
            degenerate: detect_degeneration_with(h, &DegenerationRules::default()).map(|d| d.to_string()),
        }
    }

    #[test]
    fn perfect_reproduction() {
        let ev = score_outputs(vec![result("molo wethu kunjani", "molo wethu kunjani")]).unwrap();
        assert_eq!(ev.report.chrf, 100.0);
        assert!((ev.report.bleu - 100.0).abs() < 1e-9);
        assert_eq!(ev.report.deg_pct, 0.0);
    }

    #[test]
    fn empty_outputs_score_zero() {
        let ev = score_outputs(vec![result("", "a b"), result("", "c")]).unwrap();
        assert_eq!((ev.report.chrf, ev.report.bleu), (0.0, 0.0));
    }

    #[test]
    fn one_degenerate_of_four() {
        let ev = score_outputs(vec![
            result("a b", "a b"),
            result("x x x", "x"),
            result("c", "c"),
            result("d e", "d"),
        ])
        .unwrap();
        assert_eq!(ev.report.deg_pct, 25.0);
        assert_eq!(ev.examples_tsv().lines().count(), 5);
        let json = ev.report_json(&DecodeConfig::default(), &DegenerationRules::default(), &[("ckpt", "c1".into())]);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["deg_pct"], 25.0);
        assert_eq!(v["n_examples"], 4);
        assert_eq!(v["config"]["beam_size"], 5);
        assert_eq!(v["config"]["ckpt"], "c1");
        assert!(v["config"]["bleu_smoothing"].as_str().unwrap().contains("add-k"));
    }

    struct Echo;

    impl SegmentLm for Echo {
        type State = usize;
        fn max_segment_len(&self) -> usize {
            4
        }
        fn max_context_len(&self) -> usize {
            12
        }
        fn alphabet(&self) -> &[char] {
            &['o', 'k', END_OF_TEXT]
        }
        fn segment_state(&self, text: &[char]) -> Result<usize> {
            Ok(text.len())
        }
        fn char_log_probs(&self, _: &usize, prefix: &[char]) -> Vec<f64> {
            match prefix.len() {
                0 => vec![-0.1, -3.0, -3.0],
                1 => vec![-3.0, -0.1, -3.0],
                _ => vec![-3.0, -3.0, -3.0],
            }
        }
        fn segment_log_prob(&self, state: &usize, segment: &[char]) -> f64 {
            match segment {
                ['o', 'k'] => -0.2,
                [END_OF_TEXT] if *state == 9 => -0.01,
                _ => -9.0,
            }
        }
    }

    #[test]
    fn evaluate_counts_decode_failures() {
        let testset = vec![
            PromptExample::new("a", "ok"),
            PromptExample::new("far too long a prompt", "ok"),
        ];
        let ev = evaluate(&Echo, &testset, &DecodeConfig::default(), &DegenerationRules::default()).unwrap();
        assert_eq!(ev.examples[0].hypothesis, "ok");
        assert_eq!(ev.examples[1].degenerate.as_deref(), Some(DECODE_FAILURE));
        assert_eq!(ev.report.deg_pct, 50.0);
        assert_eq!(ev.report.n_examples, 2);
    }
}
