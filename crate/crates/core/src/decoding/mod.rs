//! Character-by-character beam search that tracks segment boundaries, and
//! the degeneration detector for generated text.

mod degeneration;

use std::cmp::Ordering;
use std::rc::Rc;

pub use degeneration::{detect_degeneration, detect_degeneration_with, DegenerationReason, DegenerationRules};

use crate::corpus::{is_boundary_char, CharId, CharVocab, END_OF_TEXT};
use crate::error::{Error, Result};
use crate::model::{ContextEncoding, SegmentalModel};
use crate::scalar::Scalar;

/// What a decoder needs from a segmental model. Scores are natural logs.
pub trait SegmentLm {
    /// Conditioning state for a segment that starts after some text.
    type State;

    fn max_segment_len(&self) -> usize;

    /// Longest text (prompt plus completion) the model can condition on.
    fn max_context_len(&self) -> usize;

    /// Characters that may be emitted, end-of-text included.
    fn alphabet(&self) -> &[char];

    fn segment_state(&self, text: &[char]) -> Result<Self::State>;

    /// Character-head log-probabilities of each alphabet character
    /// following `prefix` inside the segment.
    fn char_log_probs(&self, state: &Self::State, prefix: &[char]) -> Vec<f64>;

    /// Full mixture log-probability of the complete segment.
    fn segment_log_prob(&self, state: &Self::State, segment: &[char]) -> f64;
}

/// Decoding adapter for [`SegmentalModel`].
pub struct ModelLm<'m, T> {
    model: &'m SegmentalModel<T>,
    alphabet: Vec<char>,
    classes: Vec<usize>,
}

impl<'m, T: Scalar> ModelLm<'m, T> {
    pub fn new(model: &'m SegmentalModel<T>) -> Self {
        let vocab = model.vocab();
        let ids: Vec<CharId> = vocab.char_ids().chain([CharVocab::EOT]).collect();
        ModelLm {
            model,
            alphabet: ids.iter().map(|&i| vocab.char_of(i).expect("emittable id")).collect(),
            classes: ids.iter().map(|&i| SegmentalModel::<T>::class_of(i)).collect(),
        }
    }

    fn ids(&self, chars: &[char]) -> Vec<CharId> {
        self.model.vocab().encode(chars)
    }
}

/// Encoding of the text preceding a segment.
pub struct ModelState<T> {
    enc: ContextEncoding<T>,
    start: usize,
}

impl<T: Scalar> SegmentLm for ModelLm<'_, T> {
    type State = ModelState<T>;

    fn max_segment_len(&self) -> usize {
        self.model.config().max_segment_len
    }

    fn max_context_len(&self) -> usize {
        self.model.config().max_seq_len
    }

    fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    fn segment_state(&self, text: &[char]) -> Result<ModelState<T>> {
        Ok(ModelState {
            enc: self.model.encode(&self.ids(text))?,
            start: text.len(),
        })
    }

    fn char_log_probs(&self, state: &ModelState<T>, prefix: &[char]) -> Vec<f64> {
        let dist = self
            .model
            .char_step_log_probs(&state.enc, state.start, &self.ids(prefix));
        self.classes.iter().map(|&c| dist[c].to_f64_lossy()).collect()
    }

    fn segment_log_prob(&self, state: &ModelState<T>, segment: &[char]) -> f64 {
        self.model
            .segment_ids_log_prob(&state.enc, state.start, &self.ids(segment))
            .to_f64_lossy()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_new_chars: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 5,
            max_new_chars: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EndOfText,
    MaxLength,
    /// Every hypothesis reached a non-finite score.
    BeamEmpty,
}

/// A finished completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Generated characters, end-of-text excluded.
    pub text: String,
    /// Committed segments in order; their concatenation is `text`.
    pub segments: Vec<String>,
    pub score: f64,
    pub stop: StopReason,
}

impl Decoded {
    /// Segments joined with `|` inside words.
    pub fn pipe_format(&self) -> String {
        let mut out = String::new();
        let mut prev_in_word = false;
        for seg in &self.segments {
            let in_word = !seg.chars().any(is_boundary_char);
            if prev_in_word && in_word {
                out.push('|');
            }
            out.push_str(seg);
            prev_in_word = in_word;
        }
        out
    }
}

struct Open<S> {
    state: Rc<S>,
    chars: Vec<char>,
    /// Character-head score of `chars`, end-of-segment not yet charged.
    provisional: f64,
}

struct Hyp<S> {
    text: Vec<char>,
    segments: Vec<usize>,
    committed: f64,
    open: Option<Open<S>>,
    finished: Option<StopReason>,
}

impl<S> Hyp<S> {
    fn score(&self) -> f64 {
        self.committed + self.open.as_ref().map_or(0.0, |o| o.provisional)
    }

    fn into_decoded(self) -> Decoded {
        let mut segments = Vec::with_capacity(self.segments.len());
        let mut start = 0;
        for &end in &self.segments {
            segments.push(self.text[start..end].iter().collect());
            start = end;
        }
        Decoded {
            score: self.score(),
            text: self.text.iter().collect(),
            segments,
            stop: self.finished.unwrap_or(StopReason::MaxLength),
        }
    }
}

/// Highest score first; ties go to the lexicographically smaller text, then
/// to the earlier segmentation.
fn rank<S>(a: &Hyp<S>, b: &Hyp<S>) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| a.text.cmp(&b.text))
        .then_with(|| a.segments.cmp(&b.segments))
}

/// Closes the open segment, replacing its provisional score with the full
/// mixture score.
fn close<M: SegmentLm>(model: &M, hyp: &mut Hyp<M::State>) {
    if let Some(open) = hyp.open.take() {
        hyp.committed += model.segment_log_prob(&open.state, &open.chars);
        hyp.segments.push(hyp.text.len());
    }
}

/// Generates a completion of `prompt` by beam search over characters and
/// segment boundaries.
///
/// Each step extends a hypothesis by one character, either inside its open
/// segment or as the first character of a new one after closing the open
/// segment. Whitespace and end-of-text are single-character segments;
/// end-of-text finishes the hypothesis. Hypotheses that reach the length
/// limit have their open segment closed. Scores are total log-probabilities
/// with no length normalisation, and hypotheses with equal text but
/// different segmentations are kept apart.
pub fn dynamic_decode<M: SegmentLm>(model: &M, prompt: &str, config: &DecodeConfig) -> Result<Decoded> {
    if config.beam_size == 0 {
        return Err(Error::Config("beam_size must be at least 1".into()));
    }
    let prompt: Vec<char> = prompt.chars().collect();
    let limit = model.max_context_len();
    if prompt.len() >= limit {
        return Err(Error::SequenceTooLong {
            len: prompt.len(),
            limit,
        });
    }
    let max_new = config.max_new_chars.min(limit - prompt.len());
    let max_seg = model.max_segment_len();
    let alphabet = model.alphabet();

    let mut beam = vec![Hyp::<M::State> {
        text: Vec::new(),
        segments: Vec::new(),
        committed: 0.0,
        open: None,
        finished: None,
    }];
    let mut finished = Vec::new();
    let mut full_text = prompt.clone();
    for _ in 0..max_new {
        if beam.is_empty() {
            break;
        }
        let mut candidates = Vec::new();
        for hyp in beam.drain(..) {
            if let Some(open) = &hyp.open {
                if open.chars.len() < max_seg {
                    let probs = model.char_log_probs(&open.state, &open.chars);
                    for (&c, &lp) in alphabet.iter().zip(&probs) {
                        if c == END_OF_TEXT || is_boundary_char(c) {
                            continue;
                        }
                        let mut chars = open.chars.clone();
                        chars.push(c);
                        let mut text = hyp.text.clone();
                        text.push(c);
                        candidates.push(Hyp {
                            text,
                            segments: hyp.segments.clone(),
                            committed: hyp.committed,
                            open: Some(Open {
                                state: Rc::clone(&open.state),
                                chars,
                                provisional: open.provisional + lp,
                            }),
                            finished: None,
                        });
                    }
                }
            }

            let mut closed = hyp;
            close(model, &mut closed);
            full_text.truncate(prompt.len());
            full_text.extend_from_slice(&closed.text);
            let state = Rc::new(model.segment_state(&full_text)?);
            let first = model.char_log_probs(&state, &[]);
            for (&c, &lp) in alphabet.iter().zip(&first) {
                let mut text = closed.text.clone();
                text.push(c);
                let mut next = Hyp {
                    text,
                    segments: closed.segments.clone(),
                    committed: closed.committed,
                    open: None,
                    finished: None,
                };
                if c == END_OF_TEXT {
                    next.text.pop();
                    next.committed += model.segment_log_prob(&state, &[c]);
                    next.finished = Some(StopReason::EndOfText);
                } else if is_boundary_char(c) {
                    next.committed += model.segment_log_prob(&state, &[c]);
                    next.segments.push(next.text.len());
                } else {
                    next.open = Some(Open {
                        state: Rc::clone(&state),
                        chars: vec![c],
                        provisional: lp,
                    });
                }
                candidates.push(next);
            }
        }
        candidates.retain(|h| h.score().is_finite());
        candidates.sort_by(rank);
        for hyp in candidates {
            if hyp.finished.is_some() {
                finished.push(hyp);
            } else if beam.len() < config.beam_size {
                beam.push(hyp);
            }
        }
    }
    for mut hyp in beam {
        close(model, &mut hyp);
        hyp.finished = Some(StopReason::MaxLength);
        if hyp.score().is_finite() {
            finished.push(hyp);
        }
    }
    finished.sort_by(rank);
    Ok(match finished.into_iter().next() {
        Some(best) => best.into_decoded(),
        None => Decoded {
            text: String::new(),
            segments: Vec::new(),
            score: f64::NEG_INFINITY,
            stop: StopReason::BeamEmpty,
        },
    })
}
