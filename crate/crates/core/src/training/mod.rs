//! Pretraining on the marginal likelihood and prompt-completion finetuning.

mod optim;
mod prompt;
mod schedule;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use optim::Adam;
pub use prompt::{parse_prompt_tsv, render_prompt, PromptExample, PROMPT_MARKER};
pub use schedule::{make_schedule, CheckpointSchedule, InverseSqrt};

use crate::autodiff::{Gradients, Tape};
use crate::config::KeyValues;
use crate::corpus::{Document, END_OF_TEXT};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, SegmentalModel};
use crate::scalar::Scalar;

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "best";

/// Optimisation settings shared by pretraining and finetuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Sequences per optimiser step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub checkpoint_dir: PathBuf,
}

impl TrainConfig {
    pub const KEYS: [&'static str; 6] = ["learning_rate", "warmup_steps", "batch_size", "epochs", "seed", "clip_norm"];

    pub fn pretraining(checkpoint_dir: impl Into<PathBuf>) -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            warmup_steps: 4000,
            batch_size: 256,
            epochs: 40,
            seed: 0,
            clip_norm: 1.0,
            checkpoint_dir: checkpoint_dir.into(),
        }
    }

    pub fn finetuning(checkpoint_dir: impl Into<PathBuf>) -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            warmup_steps: 500,
            batch_size: 16,
            epochs: 20,
            ..TrainConfig::pretraining(checkpoint_dir)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> InverseSqrt {
        InverseSqrt {
            base: self.learning_rate,
            warmup_steps: self.warmup_steps,
        }
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("learning_rate", self.learning_rate);
        kv.set("warmup_steps", self.warmup_steps);
        kv.set("batch_size", self.batch_size);
        kv.set("epochs", self.epochs);
        kv.set("seed", self.seed);
        kv.set("clip_norm", self.clip_norm);
    }

    /// Overrides the fields of `self` present in `kv`.
    pub fn with_kv(mut self, kv: &KeyValues) -> Result<Self> {
        self.learning_rate = kv.get_or("learning_rate", self.learning_rate)?;
        self.warmup_steps = kv.get_or("warmup_steps", self.warmup_steps)?;
        self.batch_size = kv.get_or("batch_size", self.batch_size)?;
        self.epochs = kv.get_or("epochs", self.epochs)?;
        self.seed = kv.get_or("seed", self.seed)?;
        self.clip_norm = kv.get_or("clip_norm", self.clip_norm)?;
        self.validate()?;
        Ok(self)
    }
}

/// One optimiser step in the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    /// Mean negative log-likelihood per character over the batch.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoints: Vec<PathBuf>,
    pub log: Vec<LogRow>,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub best_checkpoint: PathBuf,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    /// Validation loss after each epoch.
    pub valid_losses: Vec<f64>,
    pub log: Vec<LogRow>,
    pub skipped_empty: usize,
    pub skipped_too_long: usize,
}

pub fn checkpoint_name(step: usize) -> String {
    format!("step-{step:06}")
}

/// A training sequence and the length of its conditioning prefix.
struct Item {
    doc: Document,
    context: usize,
}

impl Item {
    fn target_chars(&self) -> usize {
        self.doc.len() - self.context
    }
}

struct CsvLog {
    out: BufWriter<File>,
    path: PathBuf,
    rows: Vec<LogRow>,
}

impl CsvLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut log = CsvLog {
            out: BufWriter::new(file),
            path,
            rows: Vec::new(),
        };
        log.line("step,epoch,loss,lr")?;
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    fn push(&mut self, row: LogRow) -> Result<()> {
        self.rows.push(row);
        self.line(&format!("{},{},{},{}", row.step, row.epoch, row.loss, row.lr))
    }
}

fn check_vocab<T: Scalar>(model: &SegmentalModel<T>, docs: &[Document]) -> Result<()> {
    let vocab = model.vocab();
    for doc in docs {
        if let Some(c) = doc.chars().iter().find(|&&c| c != END_OF_TEXT && !vocab.contains(c)) {
            return Err(Error::VocabMismatch(format!(
                "character {c:?} in training text is missing from the model vocabulary"
            )));
        }
        if doc.len() > model.config().max_seq_len {
            return Err(Error::SequenceTooLong {
                len: doc.len(),
                limit: model.config().max_seq_len,
            });
        }
    }
    Ok(())
}

/// Mean negative log-likelihood per target character of `batch`, with
/// gradients accumulated into `grads`.
fn batch_loss<T: Scalar>(
    model: &SegmentalModel<T>,
    batch: &[&Item],
    grads: &mut Gradients<T>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let chars: usize = batch.iter().map(|it| it.target_chars()).sum();
    let weight = T::lit(-1.0 / chars.max(1) as f64);
    let mut total = 0.0;
    for item in batch {
        let mut tape = Tape::training(model.params(), ChaCha8Rng::from_rng(&mut *rng));
        let ratio = model.log_ratio_on_tape(&mut tape, &item.doc, item.context)?;
        total += tape.scalar(ratio).to_f64_lossy();
        let loss = tape.scale(ratio, weight);
        tape.backward(loss, grads);
    }
    Ok(-total / chars.max(1) as f64)
}

/// Evaluation-mode mean negative log-likelihood per target character.
fn eval_loss<T: Scalar>(model: &SegmentalModel<T>, items: &[Item]) -> Result<f64> {
    let mut total = 0.0;
    let mut chars = 0;
    for item in items {
        let mut tape = Tape::new(model.params());
        let ratio = model.log_ratio_on_tape(&mut tape, &item.doc, item.context)?;
        total -= tape.scalar(ratio).to_f64_lossy();
        chars += item.target_chars();
    }
    Ok(total / chars.max(1) as f64)
}

/// Mean per-character negative log marginal likelihood of `docs`.
pub fn evaluate_loss<T: Scalar>(model: &SegmentalModel<T>, docs: &[Document]) -> Result<f64> {
    let items: Vec<Item> = docs
        .iter()
        .map(|d| Item {
            doc: d.clone(),
            context: 0,
        })
        .collect();
    eval_loss(model, &items)
}

/// Mean per-character `−log p(O | C)` over finetuning examples that fit.
pub fn evaluate_prompt_loss<T: Scalar>(model: &SegmentalModel<T>, examples: &[PromptExample]) -> Result<f64> {
    let (items, _, _) = prompt_items(model, examples);
    eval_loss(model, &items)
}

struct Trainer<'a, T> {
    model: &'a mut SegmentalModel<T>,
    config: &'a TrainConfig,
    adam: Adam<T>,
    rng: ChaCha8Rng,
    step: usize,
    log: CsvLog,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    fn new(model: &'a mut SegmentalModel<T>, config: &'a TrainConfig) -> Result<Self> {
        config.validate()?;
        let dir = &config.checkpoint_dir;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log = CsvLog::create(dir.join(TRAIN_LOG_FILE))?;
        Ok(Trainer {
            adam: Adam::new(model.params()),
            model,
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            step: 0,
            log,
        })
    }

    /// Runs one epoch, calling `after_step` after each optimiser update.
    fn epoch(
        &mut self,
        items: &[Item],
        epoch: usize,
        mut after_step: impl FnMut(&SegmentalModel<T>, usize) -> Result<()>,
    ) -> Result<()> {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut self.rng);
        for chunk in order.chunks(self.config.batch_size) {
            self.step += 1;
            let batch: Vec<&Item> = chunk.iter().map(|&i| &items[i]).collect();
            let mut grads = Gradients::zeros_like(self.model.params());
            let loss = batch_loss(self.model, &batch, &mut grads, &mut self.rng)?;
            if !loss.is_finite() || !grads.global_norm().is_finite() {
                log::error!("non-finite loss at step {}", self.step);
                return Err(Error::NonFiniteLoss { step: self.step });
            }
            grads.clip_global_norm(T::lit(self.config.clip_norm));
            let lr = self.config.schedule().at(self.step);
            self.adam.update(self.model.params_mut(), &grads, lr);
            self.log.push(LogRow {
                step: self.step,
                epoch,
                loss,
                lr,
            })?;
            log::debug!("step {} epoch {epoch} loss {loss:.4} lr {lr:.3e}", self.step);
            after_step(self.model, self.step)?;
        }
        Ok(())
    }
}

/// Maximises the marginal likelihood of `corpus` (sequences that already
/// fit `max_seq_len`), writing checkpoints on the schedule and a CSV log to
/// `config.checkpoint_dir`.
pub fn pretrain<T: Scalar>(
    model: &mut SegmentalModel<T>,
    corpus: &[Document],
    config: &TrainConfig,
) -> Result<PretrainOutcome> {
    let items: Vec<Item> = corpus
        .iter()
        .filter(|d| !d.is_empty())
        .map(|d| Item {
            doc: d.clone(),
            context: 0,
        })
        .collect();
    if items.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    check_vocab(model, corpus)?;
    config.validate()?;
    let steps_per_epoch = items.len().div_ceil(config.batch_size);
    let schedule = make_schedule(steps_per_epoch * config.epochs, steps_per_epoch)?;
    let mut trainer = Trainer::new(model, config)?;
    let mut checkpoints = Vec::new();
    for epoch in 1..=config.epochs {
        trainer.epoch(&items, epoch, |model, step| {
            if schedule.contains(step) {
                let path = config.checkpoint_dir.join(checkpoint_name(step));
                let mut extra = KeyValues::new();
                extra.set("step", step);
                extra.set("epoch", epoch);
                save_checkpoint(model, &path, &extra)?;
                log::info!("checkpoint {}", path.display());
                checkpoints.push(path);
            }
            Ok(())
        })?;
    }
    Ok(PretrainOutcome {
        checkpoints,
        log: trainer.log.rows,
    })
}

fn prompt_items<T: Scalar>(model: &SegmentalModel<T>, examples: &[PromptExample]) -> (Vec<Item>, usize, usize) {
    let mut items = Vec::new();
    let (mut empty, mut too_long) = (0, 0);
    for ex in examples {
        if ex.completion.is_empty() {
            empty += 1;
            continue;
        }
        let (doc, context) = ex.to_document();
        if doc.len() > model.config().max_seq_len {
            too_long += 1;
            continue;
        }
        items.push(Item { doc, context });
    }
    (items, empty, too_long)
}

/// Maximises `log p(O | C)` over `train`, evaluating on `valid` after every
/// epoch and keeping the best-scoring parameters in
/// `checkpoint_dir/best`. With no usable validation examples the training
/// examples are used for selection. On return `model` holds the final
/// epoch's parameters.
pub fn finetune<T: Scalar>(
    model: &mut SegmentalModel<T>,
    train: &[PromptExample],
    valid: &[PromptExample],
    config: &TrainConfig,
) -> Result<FinetuneOutcome> {
    let (items, skipped_empty, skipped_too_long) = prompt_items(model, train);
    if skipped_empty + skipped_too_long > 0 {
        log::warn!("skipped {skipped_empty} empty and {skipped_too_long} over-long examples");
    }
    if items.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (valid_items, _, _) = prompt_items(model, valid);
    let docs: Vec<Document> = items.iter().chain(&valid_items).map(|i| i.doc.clone()).collect();
    check_vocab(model, &docs)?;

    let best_path = config.checkpoint_dir.join(BEST_CHECKPOINT);
    let mut trainer = Trainer::new(model, config)?;
    let mut best = (0, f64::INFINITY);
    let mut valid_losses = Vec::new();
    for epoch in 1..=config.epochs {
        trainer.epoch(&items, epoch, |_, _| Ok(()))?;
        let selection = if valid_items.is_empty() { &items } else { &valid_items };
        let loss = eval_loss(trainer.model, selection)?;
        log::info!("epoch {epoch} validation loss {loss:.4}");
        valid_losses.push(loss);
        if loss < best.1 || epoch == 1 {
            best = (epoch, loss);
            let mut extra = KeyValues::new();
            extra.set("epoch", epoch);
            extra.set("valid_loss", loss);
            save_checkpoint(trainer.model, &best_path, &extra)?;
        }
    }
    Ok(FinetuneOutcome {
        best_checkpoint: best_path,
        best_epoch: best.0,
        best_valid_loss: best.1,
        valid_losses,
        log: trainer.log.rows,
        skipped_empty,
        skipped_too_long,
    })
}

/// Reads the `step,epoch,loss,lr` CSV written during training.
pub fn read_train_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: &str| Error::Format {
        what: "training log",
        detail: format!("bad row {line:?}"),
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(line));
            }
            Ok(LogRow {
                step: f[0].parse().map_err(|_| bad(line))?,
                epoch: f[1].parse().map_err(|_| bad(line))?,
                loss: f[2].parse().map_err(|_| bad(line))?,
                lr: f[3].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CharVocab, SubwordLexicon};
    use crate::model::{load_checkpoint, ModelConfig};

    fn tiny_model(docs: &[Document], dropout: f64) -> SegmentalModel<f64> {
        let vocab = CharVocab::from_documents(docs);
        let lexicon = SubwordLexicon::build(docs, 6, 3).unwrap();
        let config = ModelConfig {
            layers: 1,
            heads: 2,
            embed_dim: 16,
            max_seq_len: 64,
            lexicon_size: lexicon.len(),
            max_segment_len: 3,
            dropout,
            init_seed: 3,
        };
        SegmentalModel::new(config, vocab, lexicon).unwrap()
    }

    fn config(dir: &Path, epochs: usize, batch: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 3e-3,
            warmup_steps: 5,
            batch_size: batch,
            epochs,
            seed: 11,
            clip_norm: 1.0,
            checkpoint_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn single_document_single_step() {
        let tmp = tempfile::tempdir().unwrap();
        let docs = vec![Document::new("ab ba")];
        let mut model = tiny_model(&docs, 0.0);
        let out = pretrain(&mut model, &docs, &config(tmp.path(), 1, 1)).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.checkpoints, vec![tmp.path().join("step-000001")]);
        assert!(out.checkpoints[0].join("params.bin").exists());
        let log = read_train_log(&tmp.path().join(TRAIN_LOG_FILE)).unwrap();
        assert_eq!(log, out.log);
    }

    #[test]
    fn loss_decreases_on_repeated_pattern() {
        let tmp = tempfile::tempdir().unwrap();
        let docs = vec![Document::new("abab abab abab"), Document::new("ab abab ab")];
        let mut model = tiny_model(&docs, 0.0);
        let out = pretrain(&mut model, &docs, &config(tmp.path(), 100, 1)).unwrap();
        assert_eq!(out.log.len(), 200);
        let first = evaluate_loss(&tiny_model(&docs, 0.0), &docs).unwrap();
        let last = evaluate_loss(&model, &docs).unwrap();
        assert!(last < first, "{last} !< {first}");
        assert!(out.log[199].loss < out.log[0].loss);
    }

    #[test]
    fn training_is_deterministic() {
        let docs = vec![Document::new("abc ab ca"), Document::new("bca cab")];
        let run = || {
            let tmp = tempfile::tempdir().unwrap();
            let mut model = tiny_model(&docs, 0.1);
            let out = pretrain(&mut model, &docs, &config(tmp.path(), 3, 1)).unwrap();
            out.log.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let docs = vec![Document::new("ab ba")];
        let mut model = tiny_model(&docs, 0.0);
        let other = vec![Document::new("xy")];
        let err = pretrain(&mut model, &other, &config(tmp.path(), 1, 1)).unwrap_err();
        assert!(matches!(err, Error::VocabMismatch(_)));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let tmp = tempfile::tempdir().unwrap();
        let docs = vec![Document::new("ab ba")];
        let mut model = tiny_model(&docs, 0.0);
        // a huge learning rate drives parameters to non-finite values
        let mut cfg = config(tmp.path(), 50, 1);
        cfg.learning_rate = 1e300;
        cfg.warmup_steps = 0;
        let id = model.params().id_of("lex.w").unwrap();
        model.params_mut().get_mut(id).fill(f64::MAX);
        match pretrain(&mut model, &docs, &cfg) {
            Err(Error::NonFiniteLoss { step }) => assert!(step >= 1),
            other => panic!("expected non-finite loss, got {other:?}"),
        }
    }

    #[test]
    fn empty_and_long_prompts_are_skipped() {
        let tmp = tempfile::tempdir().unwrap();
        let text = "ab ba # # =ab";
        let docs = vec![Document::new(&format!("{text}{END_OF_TEXT}"))];
        let mut model = tiny_model(&docs, 0.0);
        let long = "ab ".repeat(40);
        let train = vec![
            PromptExample::new("ab ba", "ab"),
            PromptExample::new("ab", ""),
            PromptExample::new(long.trim(), "ba"),
        ];
        let out = finetune(&mut model, &train, &[], &config(tmp.path(), 2, 1)).unwrap();
        assert_eq!(out.skipped_empty, 1);
        assert_eq!(out.skipped_too_long, 1);
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.valid_losses.len(), 2);
    }

    #[test]
    fn finetuning_raises_completion_likelihood() {
        let tmp = tempfile::tempdir().unwrap();
        let ex = PromptExample::new("ab", "ba ab");
        let (doc, _) = ex.to_document();
        let mut model = tiny_model(&[doc], 0.0);
        let cfg = config(tmp.path(), 4, 1);
        let out = finetune(&mut model, &[ex.clone()], &[ex.clone()], &cfg).unwrap();
        let v = &out.valid_losses;
        assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
        let (best, _) = load_checkpoint::<f64>(&out.best_checkpoint).unwrap();
        let reloaded = evaluate_prompt_loss(&best, &[ex]).unwrap();
        assert_eq!(reloaded.to_bits(), out.best_valid_loss.to_bits());
    }

    #[test]
    fn completion_gradient_matches_finite_differences() {
        let ex = PromptExample::new("ab", "ba");
        let (doc, context) = ex.to_document();
        let model = tiny_model(&[doc.clone()], 0.0);
        let loss = |m: &SegmentalModel<f64>| {
            let mut tape = Tape::new(m.params());
            let v = m.log_ratio_on_tape(&mut tape, &doc, context).unwrap();
            -tape.scalar(v)
        };
        let mut grads = Gradients::zeros_like(model.params());
        let mut tape = Tape::new(model.params());
        let v = model.log_ratio_on_tape(&mut tape, &doc, context).unwrap();
        let neg = tape.scale(v, -1.0);
        tape.backward(neg, &mut grads);
        let h = 1e-6;
        for name in ["gate_out.w", "lex.w", "char.seg_char", "block0.q.w", "tok_emb"] {
            let id = model.params().id_of(name).unwrap();
            let shape = model.params().get(id).dim();
            for idx in [(0, 0), (shape.0 - 1, shape.1 - 1), (shape.0 / 2, shape.1 / 2)] {
                let mut plus = model.clone();
                plus.params_mut().get_mut(id)[idx] += h;
                let mut minus = model.clone();
                minus.params_mut().get_mut(id)[idx] -= h;
                let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let ana = grads.get(id)[idx];
                assert!(
                    (num - ana).abs() <= 1e-3 * num.abs().max(ana.abs()).max(1e-3),
                    "{name}{idx:?}: {num} vs {ana}"
                );
            }
        }
    }

    #[test]
    fn context_characters_do_not_enter_the_loss() {
        // changing a context character changes p(O|C) only through
        // conditioning, never by charging its own probability
        let ex = PromptExample::new("ab", "ba");
        let (doc, context) = ex.to_document();
        let model = tiny_model(&[doc.clone()], 0.0);
        let mut tape = Tape::new(model.params());
        let v = model.log_ratio_on_tape(&mut tape, &doc, context).unwrap();
        let ratio = tape.scalar(v);
        let (full, _) = crate::lattice::forward_marginal(&model, &doc).unwrap();
        let prefix = Document::new(&doc.slice_text(0, context));
        let (ctx, _) = crate::lattice::forward_marginal(&model, &prefix).unwrap();
        assert!((ratio - (full - ctx)).abs() < 1e-9);
    }
}
