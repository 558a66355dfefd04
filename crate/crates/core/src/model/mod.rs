//! The segment scorer: a causal character Transformer whose state before a
//! position conditions a mixture of a lexicon softmax and an in-segment
//! character generator.

mod checkpoint;

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{load_checkpoint, read_checkpoint_dtype, save_checkpoint, PARAMS_MAGIC};

use crate::autodiff::{gelu, log_softmax_rows, sigmoid, ParamId, ParamStore, Tape, Var, MIXTURE_FLOOR};
use crate::config::KeyValues;
use crate::corpus::{CharId, CharVocab, Document, SubwordLexicon};
use crate::error::{Error, Result};
use crate::lattice::{check_span, validate_context, SegmentScorer, SegmentScores};
use crate::scalar::{DType, Scalar};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub max_seq_len: usize,
    pub lexicon_size: usize,
    pub max_segment_len: usize,
    pub dropout: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 6,
            heads: 8,
            embed_dim: 512,
            max_seq_len: 512,
            lexicon_size: 10_000,
            max_segment_len: 5,
            dropout: 0.1,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 8] = [
        "layers",
        "heads",
        "embed_dim",
        "max_seq_len",
        "lexicon_size",
        "max_segment_len",
        "dropout",
        "init_seed",
    ];

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.layers == 0 || self.heads == 0 || self.embed_dim == 0 {
            return fail("layers, heads and embed_dim must be positive");
        }
        if self.embed_dim % self.heads != 0 {
            return fail("embed_dim must be divisible by heads");
        }
        if self.max_segment_len == 0 || self.lexicon_size == 0 {
            return fail("max_segment_len and lexicon_size must be at least 1");
        }
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("layers", self.layers);
        kv.set("heads", self.heads);
        kv.set("embed_dim", self.embed_dim);
        kv.set("max_seq_len", self.max_seq_len);
        kv.set("lexicon_size", self.lexicon_size);
        kv.set("max_segment_len", self.max_segment_len);
        kv.set("dropout", self.dropout);
        kv.set("init_seed", self.init_seed);
    }

    /// Reads the model keys, falling back to defaults for missing ones.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = ModelConfig::default();
        let cfg = ModelConfig {
            layers: kv.get_or("layers", d.layers)?,
            heads: kv.get_or("heads", d.heads)?,
            embed_dim: kv.get_or("embed_dim", d.embed_dim)?,
            max_seq_len: kv.get_or("max_seq_len", d.max_seq_len)?,
            lexicon_size: kv.get_or("lexicon_size", d.lexicon_size)?,
            max_segment_len: kv.get_or("max_segment_len", d.max_segment_len)?,
            dropout: kv.get_or("dropout", d.dropout)?,
            init_seed: kv.get_or("init_seed", d.init_seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    ln_attn: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    ln_ff: Norm,
    ff_in: Linear,
    ff_out: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    ln_final: Norm,
    lex: Linear,
    gate_hidden: Linear,
    gate_out: Linear,
    seg_pos: ParamId,
    seg_char: ParamId,
    char_hidden: Linear,
    char_out: Linear,
}

/// Hidden states `h_0 ..= h_n` of a character sequence; `h_j` summarises
/// the sequence-start symbol and the first `j` characters.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoding<T> {
    pub hidden: Array2<T>,
}

impl<T> ContextEncoding<T> {
    /// Number of characters encoded.
    pub fn len(&self) -> usize {
        self.hidden.nrows() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.nrows() <= 1
    }
}

/// A checkpoint loaded at the precision it was saved with.
#[derive(Debug, Clone)]
pub enum AnyModel {
    F32(SegmentalModel<f32>),
    F64(SegmentalModel<f64>),
}

impl AnyModel {
    pub fn load(dir: &std::path::Path) -> Result<(Self, KeyValues)> {
        Ok(match read_checkpoint_dtype(dir)? {
            DType::F32 => {
                let (m, kv) = load_checkpoint::<f32>(dir)?;
                (AnyModel::F32(m), kv)
            }
            DType::F64 => {
                let (m, kv) = load_checkpoint::<f64>(dir)?;
                (AnyModel::F64(m), kv)
            }
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            AnyModel::F32(m) => m.config(),
            AnyModel::F64(m) => m.config(),
        }
    }
}

/// A subword-segmental language model.
#[derive(Debug, Clone)]
pub struct SegmentalModel<T> {
    config: ModelConfig,
    vocab: CharVocab,
    lexicon: SubwordLexicon,
    params: ParamStore<T>,
    layout: Layout,
}

struct ParamInit<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl<T: Scalar> ParamInit<'_, T> {
    fn normal(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let (rng, normal) = (&mut self.rng, &self.normal);
        let value = Array2::from_shape_simple_fn((rows, cols), || T::lit(normal.sample(rng)));
        self.store.add(name, value)
    }

    fn fill(&mut self, name: String, rows: usize, cols: usize, v: f64) -> ParamId {
        self.store.add(name, Array2::from_elem((rows, cols), T::lit(v)))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.normal(format!("{name}.w"), fan_in, fan_out),
            b: self.fill(format!("{name}.b"), 1, fan_out, 0.0),
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            gamma: self.fill(format!("{name}.gamma"), 1, dim, 1.0),
            beta: self.fill(format!("{name}.beta"), 1, dim, 0.0),
        }
    }
}

impl<T: Scalar> SegmentalModel<T> {
    /// Freshly initialised model; `config.lexicon_size` and
    /// `config.max_segment_len` must agree with the lexicon.
    pub fn new(config: ModelConfig, vocab: CharVocab, lexicon: SubwordLexicon) -> Result<Self> {
        config.validate()?;
        if lexicon.len() != config.lexicon_size {
            return Err(Error::Config(format!(
                "lexicon has {} entries but lexicon_size is {}",
                lexicon.len(),
                config.lexicon_size
            )));
        }
        if lexicon.max_len() != config.max_segment_len {
            return Err(Error::Config(format!(
                "lexicon max_len {} differs from max_segment_len {}",
                lexicon.max_len(),
                config.max_segment_len
            )));
        }
        let d = config.embed_dim;
        let v = vocab.len();
        let l = config.max_segment_len;
        let mut params = ParamStore::new();
        let mut init = ParamInit {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
            normal: Normal::new(0.0, 0.02).expect("valid normal"),
        };
        let tok_emb = init.normal("tok_emb".into(), v, d);
        let pos_emb = init.normal("pos_emb".into(), config.max_seq_len + 1, d);
        let blocks = (0..config.layers)
            .map(|i| Block {
                ln_attn: init.norm(&format!("block{i}.ln_attn"), d),
                q: init.linear(&format!("block{i}.q"), d, d),
                k: init.linear(&format!("block{i}.k"), d, d),
                v: init.linear(&format!("block{i}.v"), d, d),
                out: init.linear(&format!("block{i}.out"), d, d),
                ln_ff: init.norm(&format!("block{i}.ln_ff"), d),
                ff_in: init.linear(&format!("block{i}.ff_in"), d, 4 * d),
                ff_out: init.linear(&format!("block{i}.ff_out"), 4 * d, d),
            })
            .collect();
        let ln_final = init.norm("ln_final", d);
        let lex = init.linear("lex", d, lexicon.len());
        let gate_hidden = init.linear("gate_hidden", d, d);
        let gate_out = init.linear("gate_out", d, 1);
        let seg_pos = init.normal("char.seg_pos".into(), l + 1, d);
        let seg_char = init.normal("char.seg_char".into(), l * v, d);
        let char_hidden = init.linear("char.hidden", d, d);
        let char_out = init.linear("char.out", d, vocab.num_classes());
        let layout = Layout {
            tok_emb,
            pos_emb,
            blocks,
            ln_final,
            lex,
            gate_hidden,
            gate_out,
            seg_pos,
            seg_char,
            char_hidden,
            char_out,
        };
        Ok(SegmentalModel {
            config,
            vocab,
            lexicon,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &CharVocab {
        &self.vocab
    }

    pub fn lexicon(&self) -> &SubwordLexicon {
        &self.lexicon
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    /// Character head class of a vocabulary id (sequence start has none).
    #[inline]
    pub fn class_of(id: CharId) -> usize {
        debug_assert!(id != CharVocab::BOS);
        id as usize - 1
    }

    #[inline]
    pub fn id_of_class(class: usize) -> CharId {
        (class + 1) as CharId
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: n,
                limit: self.config.max_seq_len,
            });
        }
        Ok(())
    }

    fn linear(&self, tape: &mut Tape<'_, T>, x: Var, lin: &Linear) -> Var {
        let (w, b) = (tape.param(lin.w), tape.param(lin.b));
        tape.linear(x, w, b)
    }

    fn norm(&self, tape: &mut Tape<'_, T>, x: Var, n: &Norm) -> Var {
        let (g, b) = (tape.param(n.gamma), tape.param(n.beta));
        tape.layer_norm(x, g, b)
    }

    /// Backbone on a tape: returns the `(n + 1) × d` hidden states.
    pub fn encode_on_tape(&self, tape: &mut Tape<'_, T>, ids: &[CharId]) -> Result<Var> {
        self.check_len(ids.len())?;
        let p = self.config.dropout;
        let mut input = Vec::with_capacity(ids.len() + 1);
        input.push(CharVocab::BOS as usize);
        input.extend(ids.iter().map(|&i| i as usize));
        let positions: Vec<usize> = (0..input.len()).collect();
        let tok = tape.param(self.layout.tok_emb);
        let pos = tape.param(self.layout.pos_emb);
        let te = tape.gather_rows(tok, &input);
        let pe = tape.gather_rows(pos, &positions);
        let mut x = tape.add(te, pe);
        x = tape.dropout(x, p);
        for block in &self.layout.blocks {
            let a = self.norm(tape, x, &block.ln_attn);
            let q = self.linear(tape, a, &block.q);
            let k = self.linear(tape, a, &block.k);
            let v = self.linear(tape, a, &block.v);
            let att = tape.causal_attention(q, k, v, self.config.heads);
            let o = self.linear(tape, att, &block.out);
            let o = tape.dropout(o, p);
            x = tape.add(x, o);
            let f = self.norm(tape, x, &block.ln_ff);
            let f = self.linear(tape, f, &block.ff_in);
            let f = tape.gelu(f);
            let f = self.linear(tape, f, &block.ff_out);
            let f = tape.dropout(f, p);
            x = tape.add(x, f);
        }
        Ok(self.norm(tape, x, &self.layout.ln_final))
    }

    /// Evaluation-mode encoding of a character-id sequence.
    pub fn encode(&self, ids: &[CharId]) -> Result<ContextEncoding<T>> {
        let mut tape = Tape::new(&self.params);
        let h = self.encode_on_tape(&mut tape, ids)?;
        Ok(ContextEncoding {
            hidden: tape.value(h).clone(),
        })
    }

    /// Segment log-probability table of `doc` on a tape (`n × L`).
    pub fn score_table_on_tape(&self, tape: &mut Tape<'_, T>, doc: &Document) -> Result<Var> {
        let n = doc.len();
        let max_len = self.config.max_segment_len;
        let vsize = self.vocab.len();
        let ids = self.vocab.encode(doc.chars());
        let h = self.encode_on_tape(tape, &ids)?;

        // in-segment states (start, offset) that some admissible span uses
        let mut row_base = Vec::with_capacity(n);
        let mut h_rows = Vec::new();
        let mut pos_rows = Vec::new();
        let mut char_rows = Vec::new();
        for start in 0..n {
            row_base.push(h_rows.len());
            let mut reach = 1;
            while reach < max_len && start + reach < n && doc.span_within_word(start, start + reach + 1) {
                reach += 1;
            }
            for offset in 0..=reach {
                h_rows.push(vec![start]);
                pos_rows.push(vec![offset]);
                char_rows.push(
                    (0..offset)
                        .map(|i| i * vsize + ids[start + i] as usize)
                        .collect(),
                );
            }
        }
        let hg = tape.gather_sum(h, h_rows);
        let sp = tape.param(self.layout.seg_pos);
        let pg = tape.gather_sum(sp, pos_rows);
        let sc = tape.param(self.layout.seg_char);
        let cg = tape.gather_sum(sc, char_rows);
        let u = tape.add(hg, pg);
        let u = tape.add(u, cg);
        let z = self.linear(tape, u, &self.layout.char_hidden);
        let z = tape.gelu(z);
        let logits = self.linear(tape, z, &self.layout.char_out);
        let char_lsm = tape.log_softmax(logits);

        let lex_logits = self.linear(tape, h, &self.layout.lex);
        let lex_lsm = tape.log_softmax(lex_logits);

        let gh = self.linear(tape, h, &self.layout.gate_hidden);
        let gh = tape.gelu(gh);
        let gate = self.linear(tape, gh, &self.layout.gate_out);

        let eos = Self::class_of(CharVocab::EOS);
        let mut char_groups = Vec::with_capacity(n * max_len);
        let mut lex_groups = Vec::with_capacity(n * max_len);
        for end in 0..n {
            for len in 1..=max_len {
                if len > end + 1 || !doc.span_within_word(end + 1 - len, end + 1) {
                    char_groups.push(None);
                    lex_groups.push(None);
                    continue;
                }
                let start = end + 1 - len;
                let base = row_base[start];
                let mut entries: Vec<(usize, usize)> = (0..len)
                    .map(|i| (base + i, Self::class_of(ids[start + i])))
                    .collect();
                entries.push((base + len, eos));
                char_groups.push(Some(entries));
                lex_groups.push(
                    self.lexicon
                        .id(&doc.chars()[start..=end])
                        .map(|lid| vec![(start, lid as usize)]),
                );
            }
        }
        let char_table = tape.pick_sum(char_lsm, n, max_len, char_groups);
        let lex_table = tape.pick_sum(lex_lsm, n, max_len, lex_groups);
        Ok(tape.mixture(gate, char_table, lex_table))
    }

    /// `log α_n − log α_context` for `doc` on a tape.
    pub fn log_ratio_on_tape(&self, tape: &mut Tape<'_, T>, doc: &Document, context: usize) -> Result<Var> {
        validate_context(doc, context)?;
        let table = self.score_table_on_tape(tape, doc)?;
        Ok(tape.lattice_log_ratio(table, context))
    }

    /// Log-distribution of the lexicon head at segment start `start`.
    pub fn lexicon_log_probs(&self, enc: &ContextEncoding<T>, start: usize) -> Array1<T> {
        let h = enc.hidden.slice(s![start..start + 1, ..]);
        let lin = &self.layout.lex;
        let logits = h.dot(self.params.get(lin.w)) + self.params.get(lin.b);
        log_softmax_rows(logits.view()).index_axis_move(Axis(0), 0)
    }

    /// Mixture logit at segment start `start`; `φ = σ(logit)` weights the
    /// character head.
    pub fn mixture_logit(&self, enc: &ContextEncoding<T>, start: usize) -> T {
        let h = enc.hidden.slice(s![start..start + 1, ..]);
        let (hid, out) = (&self.layout.gate_hidden, &self.layout.gate_out);
        let z = (h.dot(self.params.get(hid.w)) + self.params.get(hid.b)).mapv(gelu);
        let g = z.dot(self.params.get(out.w)) + self.params.get(out.b);
        g[[0, 0]]
    }

    /// `φ` at segment start `start`.
    pub fn mixture_weight(&self, enc: &ContextEncoding<T>, start: usize) -> T {
        sigmoid(self.mixture_logit(enc, start))
    }

    /// Next-character log-distribution (over head classes, end-of-segment
    /// included) for a segment starting at `start` whose first characters
    /// are `prefix`.
    pub fn char_step_log_probs(&self, enc: &ContextEncoding<T>, start: usize, prefix: &[CharId]) -> Array1<T> {
        assert!(prefix.len() <= self.config.max_segment_len, "prefix longer than a segment");
        let vsize = self.vocab.len();
        let mut u = enc.hidden.row(start).to_owned();
        u += &self.params.get(self.layout.seg_pos).row(prefix.len());
        let table = self.params.get(self.layout.seg_char);
        for (i, &id) in prefix.iter().enumerate() {
            u += &table.row(i * vsize + id as usize);
        }
        let u = u.insert_axis(Axis(0));
        let (hid, out) = (&self.layout.char_hidden, &self.layout.char_out);
        let z = (u.dot(self.params.get(hid.w)) + self.params.get(hid.b)).mapv(gelu);
        let logits = z.dot(self.params.get(out.w)) + self.params.get(out.b);
        log_softmax_rows(logits.view()).index_axis_move(Axis(0), 0)
    }

    /// Character-head log-probability of a whole segment, end-of-segment
    /// included.
    pub fn char_segment_log_prob(&self, enc: &ContextEncoding<T>, start: usize, segment: &[CharId]) -> T {
        let mut total = T::zero();
        for m in 0..=segment.len() {
            let dist = self.char_step_log_probs(enc, start, &segment[..m]);
            let next = segment.get(m).copied().unwrap_or(CharVocab::EOS);
            total += dist[Self::class_of(next)];
        }
        total
    }

    /// Mixture log-probability of `segment` starting at `start`, with no
    /// word-boundary checks. Computed in probability space.
    pub fn segment_ids_log_prob(&self, enc: &ContextEncoding<T>, start: usize, segment: &[CharId]) -> T {
        let phi = self.mixture_weight(enc, start);
        let p_char = self.char_segment_log_prob(enc, start, segment).exp();
        let chars: Option<Vec<char>> = segment.iter().map(|&id| self.vocab.char_of(id)).collect();
        let p_lex = chars
            .and_then(|c| self.lexicon.id(&c))
            .map(|lid| self.lexicon_log_probs(enc, start)[lid as usize].exp())
            .unwrap_or_else(T::zero);
        let p = phi * p_char + (T::one() - phi) * p_lex;
        p.max(T::lit(MIXTURE_FLOOR)).ln()
    }

    /// `log p(t = doc[start..end] | doc[..start])` under the mixture.
    pub fn segment_log_prob(&self, enc: &ContextEncoding<T>, doc: &Document, start: usize, end: usize) -> Result<T> {
        check_span(doc, start, end, self.config.max_segment_len)?;
        if enc.len() < start {
            return Err(Error::InvalidSpan {
                start,
                end,
                reason: "encoding does not cover the segment start",
            });
        }
        let ids = self.vocab.encode(&doc.chars()[start..end]);
        Ok(self.segment_ids_log_prob(enc, start, &ids))
    }
}

impl<T: Scalar> SegmentScorer<T> for SegmentalModel<T> {
    fn max_segment_len(&self) -> usize {
        self.config.max_segment_len
    }

    fn max_document_len(&self) -> usize {
        self.config.max_seq_len
    }

    fn score_table(&self, doc: &Document) -> Result<SegmentScores<T>> {
        let mut tape = Tape::new(&self.params);
        let table = self.score_table_on_tape(&mut tape, doc)?;
        Ok(SegmentScores::from_table(tape.value(table).clone()))
    }

    fn span_log_prob(&self, doc: &Document, start: usize, end: usize) -> Result<T> {
        self.check_len(doc.len())?;
        let enc = self.encode(&self.vocab.encode(&doc.chars()[..start]))?;
        self.segment_log_prob(&enc, doc, start, end)
    }
}
