//! A small reverse-mode automatic differentiation tape over dense matrices.
//!
//! Every value on the tape is a 2-D array; vectors are `1 × d` or `n × 1`.
//! The op set is exactly what the segmental model needs, and several ops are
//! fused (attention, layer norm, the lexicon/character mixture and the
//! lattice marginal) so their backward passes can be written in closed form.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::lattice::{self, SegmentScores};
use crate::scalar::{is_log_zero, log_add, log_zero, Scalar};

/// Smallest mixture probability kept before taking the log.
pub const MIXTURE_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered parameter matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Array2<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Per-parameter gradient buffers, aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub grads: Vec<Array2<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        Gradients {
            grads: params.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<T> {
        &self.grads[id.0]
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn global_norm(&self) -> T {
        self.grads
            .iter()
            .map(|g| g.iter().map(|&x| x * x).sum::<T>())
            .sum::<T>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Gelu(Var),
    Scale(Var, T),
    SumAll(Vec<Var>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv_std: Array1<T>,
    },
    GatherSum {
        table: Var,
        lists: Vec<Vec<usize>>,
    },
    Dropout {
        x: Var,
        mask: Array2<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Array2<T>>,
    },
    LogSoftmax(Var),
    PickSum {
        x: Var,
        groups: Vec<Option<Vec<(usize, usize)>>>,
    },
    Mixture {
        gate: Var,
        char_lp: Var,
        lex_lp: Var,
    },
    Lattice {
        scores: Var,
        context: usize,
    },
}

struct Node<T> {
    value: Option<Array2<T>>,
    op: Op<T>,
}

/// Records a forward computation so it can be differentiated.
pub struct Tape<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    /// An evaluation-mode tape: dropout is the identity.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            dropout_rng: None,
        }
    }

    /// A training-mode tape whose dropout masks are drawn from `rng`.
    pub fn training(params: &'p ParamStore<T>, rng: ChaCha8Rng) -> Self {
        let mut tape = Tape::new(params);
        tape.dropout_rng = Some(rng);
        tape
    }

    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.dropout_rng
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-parameter nodes own their value"),
        }
    }

    pub fn scalar(&self, v: Var) -> T {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "expected a scalar node");
        val[[0, 0]]
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 × d` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a single row");
        let out = self.value(a) + r;
        self.push(out, Op::AddRow(a, row))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let h = self.matmul(x, weight);
        self.add_row(h, bias)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(gelu);
        self.push(out, Op::Gelu(x))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).mapv(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    /// Sums `1 × 1` nodes.
    pub fn sum_scalars(&mut self, xs: &[Var]) -> Var {
        let total: T = xs.iter().map(|&x| self.scalar(x)).sum();
        self.push(Array2::from_elem((1, 1), total), Op::SumAll(xs.to_vec()))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let eps = T::lit(1e-5);
        let xv = self.value(x);
        let d = T::lit(xv.ncols() as f64);
        let mut xhat = xv.to_owned();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (mut row, istd) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / d;
            *istd = T::one() / (var + eps).sqrt();
            let s = *istd;
            row.mapv_inplace(|v| v * s);
        }
        let out = &(&xhat * self.value(gamma)) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Row `r` of the output is the sum of `table` rows listed in `lists[r]`
    /// (an empty list gives a zero row). Covers embedding lookup and the
    /// in-segment character conditioning.
    pub fn gather_sum(&mut self, table: Var, lists: Vec<Vec<usize>>) -> Var {
        let tv = self.value(table);
        let mut out = Array2::zeros((lists.len(), tv.ncols()));
        for (mut row, list) in out.axis_iter_mut(Axis(0)).zip(&lists) {
            for &i in list {
                row += &tv.row(i);
            }
        }
        self.push(out, Op::GatherSum { table, lists })
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        self.gather_sum(table, ids.iter().map(|&i| vec![i]).collect())
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if p <= 0.0 {
            return x;
        }
        if self.dropout_rng.is_none() {
            return x;
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let shape = self.value(x).raw_dim();
        let rng = self.dropout_rng.as_mut().expect("training tape");
        let mask = Array2::from_shape_simple_fn(shape, || {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        let out = self.value(x) * &mask;
        self.push(out, Op::Dropout { x, mask })
    }

    /// Multi-head causal self-attention on already projected `q`, `k`, `v`.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = qv.dim();
        assert_eq!(d % heads, 0, "embedding width must divide into heads");
        let dh = d / heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut out = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = qv.slice(cols).dot(&kv.slice(cols).t());
            for (i, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
                let mut max = T::neg_infinity();
                for &x in row.iter().take(i + 1) {
                    max = max.max(x * scale);
                }
                let mut total = T::zero();
                for (j, x) in row.iter_mut().enumerate() {
                    if j <= i {
                        *x = (*x * scale - max).exp();
                        total += *x;
                    } else {
                        *x = T::zero();
                    }
                }
                row.mapv_inplace(|x| x / total);
            }
            out.slice_mut(cols).assign(&scores.dot(&vv.slice(cols)));
            probs.push(scores);
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let out = log_softmax_rows(self.value(x).view());
        self.push(out, Op::LogSoftmax(x))
    }

    /// Output cell `i` (row-major over `rows × cols`) is the sum of the listed
    /// entries of `x`, or the log-zero sentinel when the group is `None`.
    pub fn pick_sum(
        &mut self,
        x: Var,
        rows: usize,
        cols: usize,
        groups: Vec<Option<Vec<(usize, usize)>>>,
    ) -> Var {
        assert_eq!(groups.len(), rows * cols);
        let xv = self.value(x);
        let flat: Vec<T> = groups
            .iter()
            .map(|g| match g {
                Some(entries) => entries.iter().map(|&(r, c)| xv[[r, c]]).sum(),
                None => log_zero(),
            })
            .collect();
        let out = Array2::from_shape_vec((rows, cols), flat).expect("shape matches groups");
        self.push(out, Op::PickSum { x, groups })
    }

    /// Segment log-probabilities under the lexicon/character mixture.
    ///
    /// `char_lp` and `lex_lp` are `n × L` tables indexed by (end position,
    /// length − 1); `gate` is `n × 1` holding the mixture logit of each start
    /// position. Cells whose character score is the sentinel stay impossible.
    pub fn mixture(&mut self, gate: Var, char_lp: Var, lex_lp: Var) -> Var {
        let (g, c, x) = (self.value(gate), self.value(char_lp), self.value(lex_lp));
        let (n, max_len) = c.dim();
        let floor = T::lit(MIXTURE_FLOOR.ln());
        let mut out = Array2::from_elem((n, max_len), log_zero());
        for end in 0..n {
            for l in 0..max_len.min(end + 1) {
                let cv = c[[end, l]];
                if is_log_zero(cv) {
                    continue;
                }
                let a = g[[end - l, 0]];
                let lp_char = log_sigmoid(a) + cv;
                let lp_lex = if is_log_zero(x[[end, l]]) {
                    log_zero()
                } else {
                    log_sigmoid(-a) + x[[end, l]]
                };
                out[[end, l]] = log_add(lp_char, lp_lex).max(floor);
            }
        }
        self.push(
            out,
            Op::Mixture {
                gate,
                char_lp,
                lex_lp,
            },
        )
    }

    /// `log α_n − log α_context` of the segmentation lattice whose edge
    /// scores are `scores` (`n × L`, end position × length − 1).
    pub fn lattice_log_ratio(&mut self, scores: Var, context: usize) -> Var {
        let table = SegmentScores::from_table(self.value(scores).to_owned());
        let alpha = lattice::forward_scores(&table);
        let value = alpha[alpha.len() - 1] - alpha[context];
        self.push(
            Array2::from_elem((1, 1), value),
            Op::Lattice { scores, context },
        )
    }

    /// Reverse pass from a scalar node; parameter gradients are added into
    /// `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients<T>) {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be a scalar");
        let mut adj: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Param(id) => grads.grads[id.0] += &g,
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::AddRow(a, row) => {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adj, *row, dr);
                    accumulate(&mut adj, *a, g);
                }
                Op::Gelu(x) => {
                    let mut dx = g;
                    Zip::from(&mut dx)
                        .and(self.value(*x))
                        .for_each(|d, &xv| *d *= gelu_grad(xv));
                    accumulate(&mut adj, *x, dx);
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    accumulate(&mut adj, *x, g.mapv(|v| v * f));
                }
                Op::SumAll(xs) => {
                    for &x in xs {
                        accumulate(&mut adj, x, g.clone());
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let d = T::lit(xhat.ncols() as f64);
                    let dgamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gv;
                    let mut dx = Array2::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = dh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>();
                        let k = inv_std[r] / d;
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = k * (d * dh[c] - sum_dh - xh[c] * sum_dh_xh);
                        }
                    }
                    accumulate(&mut adj, *gamma, dgamma);
                    accumulate(&mut adj, *beta, dbeta);
                    accumulate(&mut adj, *x, dx);
                }
                Op::GatherSum { table, lists } => {
                    let mut dt = Array2::zeros(self.value(*table).raw_dim());
                    for (row, list) in g.axis_iter(Axis(0)).zip(lists) {
                        for &idx in list {
                            let mut target = dt.row_mut(idx);
                            target += &row;
                        }
                    }
                    accumulate(&mut adj, *table, dt);
                }
                Op::Dropout { x, mask } => accumulate(&mut adj, *x, &g * mask),
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (n, d) = qv.dim();
                    let dh = d / heads;
                    let scale = T::one() / T::lit(dh as f64).sqrt();
                    let mut dq = Array2::zeros((n, d));
                    let mut dk = Array2::zeros((n, d));
                    let mut dv = Array2::zeros((n, d));
                    for (h, p) in probs.iter().enumerate() {
                        let cols = s![.., h * dh..(h + 1) * dh];
                        let go = g.slice(cols);
                        dv.slice_mut(cols).assign(&p.t().dot(&go));
                        let dp = go.dot(&vv.slice(cols).t());
                        let mut ds = &dp * p;
                        for (mut row, prow) in ds.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                            let dot = row.sum();
                            Zip::from(&mut row)
                                .and(&prow)
                                .for_each(|x, &pv| *x = (*x - pv * dot) * scale);
                        }
                        dq.slice_mut(cols).assign(&ds.dot(&kv.slice(cols)));
                        dk.slice_mut(cols).assign(&ds.t().dot(&qv.slice(cols)));
                    }
                    accumulate(&mut adj, *q, dq);
                    accumulate(&mut adj, *k, dk);
                    accumulate(&mut adj, *v, dv);
                }
                Op::LogSoftmax(x) => {
                    let y = self.nodes[i].value.as_ref().expect("value");
                    let mut dx = g;
                    for (mut drow, yrow) in dx.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))) {
                        let total = drow.sum();
                        Zip::from(&mut drow)
                            .and(&yrow)
                            .for_each(|d, &yv| *d -= yv.exp() * total);
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::PickSum { x, groups } => {
                    let mut dx = Array2::zeros(self.value(*x).raw_dim());
                    for (gv, group) in g.iter().zip(groups) {
                        if let Some(entries) = group {
                            for &(r, c) in entries {
                                dx[[r, c]] += *gv;
                            }
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Mixture {
                    gate,
                    char_lp,
                    lex_lp,
                } => {
                    let (gt, c, x) = (self.value(*gate), self.value(*char_lp), self.value(*lex_lp));
                    let out = self.nodes[i].value.as_ref().expect("value");
                    let (n, max_len) = c.dim();
                    let floor = T::lit(MIXTURE_FLOOR.ln());
                    let mut dgate = Array2::zeros(gt.raw_dim());
                    let mut dc = Array2::zeros(c.raw_dim());
                    let mut dx = Array2::zeros(x.raw_dim());
                    for end in 0..n {
                        for l in 0..max_len.min(end + 1) {
                            let gv = g[[end, l]];
                            let o = out[[end, l]];
                            if is_log_zero(c[[end, l]]) || gv == T::zero() || o <= floor {
                                continue;
                            }
                            let a = gt[[end - l, 0]];
                            let w_char = (log_sigmoid(a) + c[[end, l]] - o).exp();
                            let w_lex = if is_log_zero(x[[end, l]]) {
                                T::zero()
                            } else {
                                (log_sigmoid(-a) + x[[end, l]] - o).exp()
                            };
                            dc[[end, l]] += gv * w_char;
                            dx[[end, l]] += gv * w_lex;
                            dgate[[end - l, 0]] += gv * (w_char * sigmoid(-a) - w_lex * sigmoid(a));
                        }
                    }
                    accumulate(&mut adj, *gate, dgate);
                    accumulate(&mut adj, *char_lp, dc);
                    accumulate(&mut adj, *lex_lp, dx);
                }
                Op::Lattice { scores, context } => {
                    let table = SegmentScores::from_table(self.value(*scores).to_owned());
                    let n = table.len();
                    let mut post = lattice::edge_posteriors(&table, n);
                    if *context > 0 {
                        let prefix = lattice::edge_posteriors(&table, *context);
                        post -= &prefix;
                    }
                    let gv = g[[0, 0]];
                    post.mapv_inplace(|p| p * gv);
                    accumulate(&mut adj, *scores, post);
                }
            }
        }
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
    match &mut adj[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn log_softmax_rows<T: Scalar>(x: ArrayView2<T>) -> Array2<T> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log σ(x)` without overflow for large `|x|`.
#[inline]
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    let t = inner.tanh();
    let dinner = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_K) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
    }

    /// Central-difference check of every parameter entry against the tape.
    fn check_grads<F>(params: &mut ParamStore<f64>, f: F)
    where
        F: Fn(&mut Tape<'_, f64>) -> Var,
    {
        let mut grads = Gradients::zeros_like(params);
        {
            let mut tape = Tape::new(params);
            let loss = f(&mut tape);
            tape.backward(loss, &mut grads);
        }
        let eps = 1e-6;
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            for idx in 0..params.get(id).len() {
                let orig = params.get(id).as_slice().unwrap()[idx];
                params.get_mut(id).as_slice_mut().unwrap()[idx] = orig + eps;
                let up = {
                    let mut t = Tape::new(params);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                params.get_mut(id).as_slice_mut().unwrap()[idx] = orig - eps;
                let down = {
                    let mut t = Tape::new(params);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                params.get_mut(id).as_slice_mut().unwrap()[idx] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads.get(id).as_slice().unwrap()[idx];
                let tol = 1e-4 * numeric.abs().max(analytic.abs()) + 1e-8;
                assert!(
                    (numeric - analytic).abs() <= tol,
                    "{} [{idx}]: numeric {numeric} vs analytic {analytic}",
                    params.name(id)
                );
            }
        }
    }

    #[test]
    fn dense_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamStore::new();
        let x = params.add("x", random(4, 6, &mut rng));
        let w = params.add("w", random(6, 6, &mut rng));
        let b = params.add("b", random(1, 6, &mut rng));
        let gamma = params.add("gamma", random(1, 6, &mut rng));
        let beta = params.add("beta", random(1, 6, &mut rng));
        let wq = params.add("wq", random(6, 6, &mut rng));
        let table = params.add("table", random(5, 6, &mut rng));
        check_grads(&mut params, |t| {
            let xv = t.param(x);
            let emb = t.param(table);
            let e = t.gather_sum(emb, vec![vec![0], vec![1, 2], vec![], vec![4, 4]]);
            let xv = t.add(xv, e);
            let (g, be) = (t.param(gamma), t.param(beta));
            let ln = t.layer_norm(xv, g, be);
            let (wv, bv) = (t.param(w), t.param(b));
            let h = t.linear(ln, wv, bv);
            let h = t.gelu(h);
            let wqv = t.param(wq);
            let q = t.matmul(h, wqv);
            let att = t.causal_attention(q, h, ln, 2);
            let lsm = t.log_softmax(att);
            let picked = t.pick_sum(lsm, 1, 3, vec![Some(vec![(0, 1)]), Some(vec![(1, 2), (3, 5)]), None]);
            let cells: Vec<Var> = (0..2)
                .map(|c| {
                    let mut m = Array2::zeros((1, 3));
                    m[[0, c]] = 1.0;
                    let sel = t.constant(m.t().to_owned());
                    t.matmul(picked, sel)
                })
                .collect();
            let total = t.sum_scalars(&cells);
            t.scale(total, -0.5)
        });
    }

    #[test]
    fn mixture_and_lattice_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ParamStore::new();
        let gate = params.add("gate", random(4, 1, &mut rng));
        let chars = params.add("chars", random(4, 3, &mut rng).mapv(|v| -1.0 - v.abs()));
        let lex = params.add("lex", random(4, 3, &mut rng).mapv(|v| -2.0 - v.abs()));
        check_grads(&mut params, |t| {
            let g = t.param(gate);
            let c = t.param(chars);
            // invalidate spans that run off the front or cross position 2
            let mask = array![
                [0.0, -1e9, -1e9],
                [0.0, 0.0, -1e9],
                [0.0, -1e9, -1e9],
                [0.0, 0.0, -1e9]
            ];
            let m = t.constant(mask);
            let c = t.add(c, m);
            let x = t.param(lex);
            let mix = t.mixture(g, c, x);
            t.lattice_log_ratio(mix, 2)
        });
    }

    #[test]
    fn gradient_clipping_caps_norm() {
        let mut params = ParamStore::<f64>::new();
        params.add("a", array![[3.0, 4.0]]);
        let mut g = Gradients::zeros_like(&params);
        g.grads[0] = array![[3.0, 4.0]];
        let before = g.clip_global_norm(1.0);
        assert!((before - 5.0).abs() < 1e-12);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_helpers_are_stable() {
        assert!((log_sigmoid(-800.0f64) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0f64).abs() < 1e-12);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }
}
