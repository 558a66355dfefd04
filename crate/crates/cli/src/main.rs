//! Command-line entry point for training, segmenting, generating and
//! evaluating subword-segmental language models.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use seglm::analysis::{build_trajectory, segment_corpus, GoldMorphology, SegmentationSource};
use seglm::config::KeyValues;
use seglm::corpus::{batchify, load_corpus, CharVocab, Document, SubwordLexicon};
use seglm::decoding::{dynamic_decode, DecodeConfig, DegenerationRules, ModelLm};
use seglm::metrics::evaluate;
use seglm::model::{AnyModel, ModelConfig, SegmentalModel};
use seglm::scalar::{DType, Scalar};
use seglm::training::{finetune, parse_prompt_tsv, pretrain, render_prompt, TrainConfig, PROMPT_MARKER};

const CKPT_ENV: &str = "SEGLM_CKPT_DIR";
const SNAPSHOT_FILE: &str = "resolved_config.txt";
const LEXICON_KEYS: [&str; 2] = ["lexicon_size", "max_segment_len"];
const DECODE_KEYS: [&str; 2] = ["beam_size", "max_new_chars"];
const DEGENERATION_KEYS: [&str; 2] = ["degeneration_min_repeats", "degeneration_max_word_len"];

#[derive(Parser)]
#[command(name = "seglm", version, about = "Subword-segmental language modelling")]
struct Cli {
    /// Log verbosity: repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// File of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one key (repeatable); applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// A bad invocation detected after argument parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl ConfigArgs {
    fn resolve(&self, allowed: &[&str]) -> Result<KeyValues> {
        let mut kv = match &self.config {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::new(),
        };
        for pair in &self.overrides {
            kv.set_pair(pair).map_err(|e| UsageError(e.to_string()))?;
        }
        kv.check_keys(allowed).map_err(|e| UsageError(format!("{e}; accepted keys: {}", allowed.join(", "))))?;
        Ok(kv)
    }
}

#[derive(Args)]
struct CkptArg {
    /// Checkpoint directory.
    #[arg(long, env = CKPT_ENV)]
    ckpt: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the character vocabulary and subword lexicon of a corpus.
    BuildLexicon {
        /// Corpus, one document per line.
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a model on the marginal likelihood of a corpus.
    Pretrain {
        /// Corpus, one document per line.
        #[arg(long)]
        corpus: PathBuf,
        /// Directory from build-lexicon; built from the corpus when absent.
        #[arg(long)]
        lexicon_dir: Option<PathBuf>,
        /// Directory for checkpoints and the training log.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Finetune a checkpoint on input/output pairs.
    Finetune {
        #[command(flatten)]
        ckpt: CkptArg,
        /// Training pairs, input<TAB>output per line.
        #[arg(long)]
        train: PathBuf,
        /// Validation pairs used to select the best epoch.
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Directory for the training log and the `best` checkpoint.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write the most probable segmentation of each line in pipe format.
    Segment {
        #[command(flatten)]
        ckpt: CkptArg,
        /// Text to segment, one document per line.
        #[arg(long = "in")]
        input: PathBuf,
        /// Pipe-format output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete prompts (raw inputs, one per line) with beam search.
    Generate {
        #[command(flatten)]
        ckpt: CkptArg,
        /// Prompts, one per line.
        #[arg(long = "in")]
        input: PathBuf,
        /// Completions, one per line.
        #[arg(long)]
        out: PathBuf,
        /// Append the segmented completion as a second tab-separated column.
        #[arg(long)]
        segmented: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Track segmentation metrics across checkpoints or segmented files.
    Analyze {
        /// Comma-separated checkpoint directories or pipe-format files.
        #[arg(long, value_delimiter = ',', required = true)]
        ckpts: Vec<PathBuf>,
        /// Evaluation corpus, one document per line.
        #[arg(long)]
        eval: PathBuf,
        /// Gold morphology, word<TAB>m1|m2 per line.
        #[arg(long)]
        gold: PathBuf,
        /// Trajectory CSV.
        #[arg(long)]
        out: PathBuf,
        /// Per-checkpoint subwords-per-word histogram CSV.
        #[arg(long)]
        hist: Option<PathBuf>,
    },
    /// Generate for a test set and report chrF, BLEU and degeneration.
    Evaluate {
        #[command(flatten)]
        ckpt: CkptArg,
        /// Test pairs, prompt<TAB>reference per line.
        #[arg(long)]
        test: PathBuf,
        /// Directory for examples.tsv and report.json.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Snapshot path for a run whose output is a file.
fn snapshot_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".config.txt");
    out.with_file_name(name)
}

fn snapshot(path: &Path, command: &str, kv: &KeyValues) -> Result<()> {
    let mut full = kv.clone();
    full.set("command", command);
    write(path, &full.to_text())
}

fn decode_settings(kv: &KeyValues) -> Result<DecodeConfig> {
    let d = DecodeConfig::default();
    let cfg = DecodeConfig {
        beam_size: kv.get_or("beam_size", d.beam_size)?,
        max_new_chars: kv.get_or("max_new_chars", d.max_new_chars)?,
    };
    if cfg.beam_size == 0 {
        bail!("beam_size must be at least 1");
    }
    Ok(cfg)
}

fn degeneration_settings(kv: &KeyValues) -> Result<DegenerationRules> {
    let d = DegenerationRules::default();
    Ok(DegenerationRules {
        min_repeats: kv.get_or("degeneration_min_repeats", d.min_repeats)?,
        max_word_len: kv.get_or("degeneration_max_word_len", d.max_word_len)?,
    })
}

/// Corpus characters plus those of the prompt template, so a pretrained
/// model can later be finetuned on rendered prompts.
fn vocab_for(docs: &[Document]) -> CharVocab {
    let chars: BTreeSet<char> = docs
        .iter()
        .flat_map(|d| d.chars().iter().copied())
        .chain(PROMPT_MARKER.chars())
        .collect();
    CharVocab::from_chars(chars)
}

fn build_lexicon(corpus: &Path, out: &Path, config: &ConfigArgs) -> Result<()> {
    let kv = config.resolve(&LEXICON_KEYS)?;
    let defaults = ModelConfig::default();
    let size = kv.get_or("lexicon_size", defaults.lexicon_size)?;
    let max_len = kv.get_or("max_segment_len", defaults.max_segment_len)?;
    let loaded = load_corpus(corpus, None)?;
    let lexicon = SubwordLexicon::build(&loaded.documents, size, max_len)?;
    if lexicon.len() < size {
        log::warn!("corpus yields only {} lexicon entries", lexicon.len());
    }
    create_dir(out)?;
    let vocab = vocab_for(&loaded.documents);
    vocab.save(&out.join("charvocab.txt"))?;
    lexicon.save(&out.join("lexicon.txt"))?;
    let mut resolved = kv.clone();
    resolved.set("lexicon_size", size);
    resolved.set("max_segment_len", max_len);
    resolved.set("corpus", corpus.display());
    snapshot(&out.join(SNAPSHOT_FILE), "build-lexicon", &resolved)?;
    println!("{} characters, {} lexicon entries", vocab.len(), lexicon.len());
    Ok(())
}

fn pretrain_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = ModelConfig::KEYS.to_vec();
    keys.extend(TrainConfig::KEYS);
    keys.push("dtype");
    keys
}

fn pretrain_cmd(corpus: &Path, lexicon_dir: Option<&Path>, out: &Path, config: &ConfigArgs) -> Result<()> {
    let kv = config.resolve(&pretrain_keys())?;
    let mut model_cfg = ModelConfig::from_kv(&kv)?;
    let train_cfg = TrainConfig::pretraining(out).with_kv(&kv)?;
    let dtype_name: String = kv.get_or("dtype", "f32".to_owned())?;
    let Some(dtype) = DType::parse(&dtype_name) else {
        bail!("dtype must be f32 or f64, got {dtype_name:?}");
    };

    let (vocab, lexicon) = match lexicon_dir {
        Some(dir) => {
            let vocab = CharVocab::load(&dir.join("charvocab.txt"))?;
            let lexicon = SubwordLexicon::load(&dir.join("lexicon.txt"), model_cfg.max_segment_len)?;
            (vocab, lexicon)
        }
        None => {
            let loaded = load_corpus(corpus, None)?;
            let lexicon = SubwordLexicon::build(&loaded.documents, model_cfg.lexicon_size, model_cfg.max_segment_len)?;
            (vocab_for(&loaded.documents), lexicon)
        }
    };
    let loaded = load_corpus(corpus, Some(&vocab))?;
    if loaded.unknown_chars > 0 {
        bail!("{} corpus characters are missing from the vocabulary", loaded.unknown_chars);
    }
    if lexicon.len() != model_cfg.lexicon_size {
        log::warn!("lexicon has {} entries; using that as lexicon_size", lexicon.len());
        model_cfg.lexicon_size = lexicon.len();
    }
    let sequences = batchify(&loaded.documents, model_cfg.max_seq_len)?;

    let mut resolved = KeyValues::new();
    model_cfg.to_kv(&mut resolved);
    train_cfg.to_kv(&mut resolved);
    resolved.set("dtype", dtype.name());
    resolved.set("corpus", corpus.display());
    create_dir(out)?;
    snapshot(&out.join(SNAPSHOT_FILE), "pretrain", &resolved)?;
    log::info!("{} training sequences", sequences.len());

    let checkpoints = match dtype {
        DType::F32 => run_pretrain::<f32>(model_cfg, vocab, lexicon, &sequences, &train_cfg)?,
        DType::F64 => run_pretrain::<f64>(model_cfg, vocab, lexicon, &sequences, &train_cfg)?,
    };
    for c in checkpoints {
        println!("{}", c.display());
    }
    Ok(())
}

fn run_pretrain<T: Scalar>(
    cfg: ModelConfig,
    vocab: CharVocab,
    lexicon: SubwordLexicon,
    sequences: &[Document],
    train: &TrainConfig,
) -> Result<Vec<PathBuf>> {
    let mut model = SegmentalModel::<T>::new(cfg, vocab, lexicon)?;
    Ok(pretrain(&mut model, sequences, train)?.checkpoints)
}

fn finetune_cmd(ckpt: &Path, train: &Path, valid: Option<&Path>, out: &Path, config: &ConfigArgs) -> Result<()> {
    let kv = config.resolve(&TrainConfig::KEYS)?;
    let train_cfg = TrainConfig::finetuning(out).with_kv(&kv)?;
    let read = |p: &Path| -> Result<_> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(parse_prompt_tsv(&text)?)
    };
    let train_set = read(train)?;
    let valid_set = match valid {
        Some(p) => read(p)?,
        None => Vec::new(),
    };
    let mut resolved = KeyValues::new();
    train_cfg.to_kv(&mut resolved);
    resolved.set("ckpt", ckpt.display());
    resolved.set("train", train.display());
    if let Some(v) = valid {
        resolved.set("valid", v.display());
    }
    create_dir(out)?;
    snapshot(&out.join(SNAPSHOT_FILE), "finetune", &resolved)?;
    let outcome = match AnyModel::load(ckpt)?.0 {
        AnyModel::F32(mut m) => finetune(&mut m, &train_set, &valid_set, &train_cfg)?,
        AnyModel::F64(mut m) => finetune(&mut m, &train_set, &valid_set, &train_cfg)?,
    };
    if outcome.skipped_empty + outcome.skipped_too_long > 0 {
        eprintln!(
            "skipped {} empty and {} over-long examples",
            outcome.skipped_empty, outcome.skipped_too_long
        );
    }
    println!("{}", outcome.best_checkpoint.display());
    Ok(())
}

fn segment_cmd(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let docs = load_corpus(input, None)?.documents;
    let seg = match AnyModel::load(ckpt)?.0 {
        AnyModel::F32(m) => segment_corpus(&m, &docs, ckpt.display().to_string())?,
        AnyModel::F64(m) => segment_corpus(&m, &docs, ckpt.display().to_string())?,
    };
    write(out, &seg.to_pipe_text())?;
    let mut resolved = KeyValues::new();
    resolved.set("ckpt", ckpt.display());
    resolved.set("in", input.display());
    snapshot(&snapshot_beside(out), "segment", &resolved)
}

fn generate_lines<T: Scalar>(model: &SegmentalModel<T>, prompts: &[&str], cfg: &DecodeConfig, segmented: bool) -> Result<String> {
    let lm = ModelLm::new(model);
    let mut out = String::new();
    for p in prompts {
        let d = dynamic_decode(&lm, &render_prompt(p), cfg)?;
        out.push_str(&d.text.replace(['\n', '\t'], " "));
        if segmented {
            out.push('\t');
            out.push_str(&d.pipe_format().replace(['\n', '\t'], " "));
        }
        out.push('\n');
    }
    Ok(out)
}

fn generate_cmd(ckpt: &Path, input: &Path, out: &Path, segmented: bool, config: &ConfigArgs) -> Result<()> {
    let kv = config.resolve(&DECODE_KEYS)?;
    let cfg = decode_settings(&kv)?;
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let prompts: Vec<&str> = text.lines().collect();
    let lines = match AnyModel::load(ckpt)?.0 {
        AnyModel::F32(m) => generate_lines(&m, &prompts, &cfg, segmented)?,
        AnyModel::F64(m) => generate_lines(&m, &prompts, &cfg, segmented)?,
    };
    write(out, &lines)?;
    let mut resolved = kv.clone();
    resolved.set("beam_size", cfg.beam_size);
    resolved.set("max_new_chars", cfg.max_new_chars);
    resolved.set("ckpt", ckpt.display());
    resolved.set("in", input.display());
    resolved.set("segmented", segmented);
    snapshot(&snapshot_beside(out), "generate", &resolved)
}

fn analyze_cmd(ckpts: &[PathBuf], eval: &Path, gold: &Path, out: &Path, hist: Option<&Path>) -> Result<()> {
    let docs = load_corpus(eval, None)?.documents;
    let gold_morph = GoldMorphology::load(gold)?;
    let sources: Vec<SegmentationSource> = ckpts.iter().map(SegmentationSource::from_path).collect();
    let report = build_trajectory(&sources, &docs, &gold_morph);
    write(out, &report.to_csv())?;
    if let Some(h) = hist {
        write(h, &report.histogram_csv())?;
    }
    let mut resolved = KeyValues::new();
    let list: Vec<String> = ckpts.iter().map(|p| p.display().to_string()).collect();
    resolved.set("ckpts", list.join(","));
    resolved.set("eval", eval.display());
    resolved.set("gold", gold.display());
    snapshot(&snapshot_beside(out), "analyze", &resolved)?;
    if report.failures() > 0 {
        eprintln!("{} of {} sources failed", report.failures(), report.rows.len());
    }
    Ok(())
}

fn evaluate_cmd(ckpt: &Path, test: &Path, out: &Path, config: &ConfigArgs) -> Result<()> {
    let mut allowed = DECODE_KEYS.to_vec();
    allowed.extend(DEGENERATION_KEYS);
    let kv = config.resolve(&allowed)?;
    let decode = decode_settings(&kv)?;
    let rules = degeneration_settings(&kv)?;
    let text = fs::read_to_string(test).with_context(|| format!("reading {}", test.display()))?;
    let testset = parse_prompt_tsv(&text)?;
    let evaluation = match AnyModel::load(ckpt)?.0 {
        AnyModel::F32(m) => evaluate(&ModelLm::new(&m), &testset, &decode, &rules)?,
        AnyModel::F64(m) => evaluate(&ModelLm::new(&m), &testset, &decode, &rules)?,
    };
    create_dir(out)?;
    let extra = [
        ("ckpt", ckpt.display().to_string()),
        ("test", test.display().to_string()),
    ];
    evaluation.write(&out.join("examples.tsv"), &out.join("report.json"), &decode, &rules, &extra)?;
    let mut resolved = KeyValues::new();
    resolved.set("beam_size", decode.beam_size);
    resolved.set("max_new_chars", decode.max_new_chars);
    resolved.set("degeneration_min_repeats", rules.min_repeats);
    resolved.set("degeneration_max_word_len", rules.max_word_len);
    for (k, v) in &extra {
        resolved.set(k, v);
    }
    snapshot(&out.join(SNAPSHOT_FILE), "evaluate", &resolved)?;
    let r = &evaluation.report;
    println!("chrf={:.2} bleu={:.2} deg_pct={:.2} n={}", r.chrf, r.bleu, r.deg_pct, r.n_examples);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::BuildLexicon { corpus, out, config } => build_lexicon(corpus, out, config),
        Command::Pretrain {
            corpus,
            lexicon_dir,
            out,
            config,
        } => pretrain_cmd(corpus, lexicon_dir.as_deref(), out, config),
        Command::Finetune {
            ckpt,
            train,
            valid,
            out,
            config,
        } => finetune_cmd(&ckpt.ckpt, train, valid.as_deref(), out, config),
        Command::Segment { ckpt, input, out } => segment_cmd(&ckpt.ckpt, input, out),
        Command::Generate {
            ckpt,
            input,
            out,
            segmented,
            config,
        } => generate_cmd(&ckpt.ckpt, input, out, *segmented, config),
        Command::Analyze {
            ckpts,
            eval,
            gold,
            out,
            hist,
        } => analyze_cmd(ckpts, eval, gold, out, hist.as_deref()),
        Command::Evaluate { ckpt, test, out, config } => evaluate_cmd(&ckpt.ckpt, test, out, config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
