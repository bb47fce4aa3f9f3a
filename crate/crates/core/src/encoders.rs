//! Sequence encoding, graph node initialisation, the gated relational graph
//! encoder and graph-context fusion.
//!
//! Matrices are row-major with one row per token or node.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::corpus::{EmbeddingFile, Example, ParsedSentence, Part, TokenAddr};
use crate::error::{Error, Result};
use crate::graph::{NodeKind, Relation, Supergraph, TypedEdge};
use crate::interaction::pairwise_attention;
use crate::nn::{Dropout, Scorer};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
/// Special tokens; their ids are their positions here in every vocabulary.
pub const SPECIALS: [&str; 5] = [
    UNK,
    BOS,
    EOS,
    crate::extract::POS_MARKER,
    crate::extract::NEG_MARKER,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIALS {
            v.add(s);
        }
        v
    }
}

impl Vocab {
    /// Lower-cased word types of all examples, in first-seen order.
    pub fn build(examples: &[Example]) -> Self {
        let mut v = Vocab::default();
        for ex in examples {
            for (_, s) in ex.sentences() {
                for t in &s.tokens {
                    v.add(&t.text.to_lowercase());
                }
            }
        }
        v
    }

    fn add(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a special or lower-cased word; unknown words map to `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        self.index.get(&token.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }
}

/// Positions of the parts of one `(context, question, option)` sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLayout {
    pub option: usize,
    /// Token text per position; specials appear verbatim.
    pub tokens: Vec<String>,
    /// Source token per position; `None` for specials.
    pub addrs: Vec<Option<TokenAddr>>,
    pub context: Range<usize>,
    /// Question rows, including the polarity marker when present.
    pub question: Range<usize>,
    pub option_rows: Range<usize>,
    pub marker: Option<usize>,
    /// Context tokens dropped to fit `max_seq_len`.
    pub truncated: usize,
    rows: BTreeMap<TokenAddr, usize>,
}

impl SequenceLayout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn row_of(&self, addr: TokenAddr) -> Option<usize> {
        self.rows.get(&addr).copied()
    }
}

fn sentence_tokens(sentences: &[ParsedSentence]) -> Vec<(String, TokenAddr)> {
    sentences
        .iter()
        .flat_map(|s| {
            s.tokens
                .iter()
                .map(move |t| (t.text.clone(), TokenAddr::new(s.sent_id, t.index as u32)))
        })
        .collect()
}

/// Lays out `<s> context </s> [marker] question option </s>`. Context tokens
/// past the length budget are dropped from the end.
pub fn build_layout(
    example: &Example,
    option: usize,
    marker: Option<&str>,
    max_seq_len: usize,
) -> Result<SequenceLayout> {
    let opt = example.options.get(option).ok_or_else(|| {
        Error::validation(
            &example.example_id,
            format!("option {option} does not exist"),
        )
    })?;
    let mut context = sentence_tokens(&example.context_sentences);
    let question = sentence_tokens(std::slice::from_ref(&example.question));
    let option_tokens = sentence_tokens(opt);
    let fixed = 3 + usize::from(marker.is_some()) + question.len() + option_tokens.len();
    if fixed > max_seq_len {
        return Err(Error::validation(
            &example.example_id,
            format!(
                "question and option {option} need {fixed} positions, max_seq_len is {max_seq_len}"
            ),
        ));
    }
    let budget = max_seq_len - fixed;
    let truncated = context.len().saturating_sub(budget);
    context.truncate(budget);

    let mut tokens = Vec::with_capacity(fixed + context.len());
    let mut addrs = Vec::with_capacity(tokens.capacity());
    let mut push = |t: &str, a: Option<TokenAddr>, tokens: &mut Vec<String>| {
        tokens.push(t.to_string());
        addrs.push(a);
    };
    push(BOS, None, &mut tokens);
    for (t, a) in &context {
        push(t, Some(*a), &mut tokens);
    }
    let context_rows = 1..1 + context.len();
    push(EOS, None, &mut tokens);
    let q_start = tokens.len();
    let marker_row = marker.map(|m| {
        push(m, None, &mut tokens);
        q_start
    });
    for (t, a) in &question {
        push(t, Some(*a), &mut tokens);
    }
    let question_rows = q_start..tokens.len();
    let o_start = tokens.len();
    for (t, a) in &option_tokens {
        push(t, Some(*a), &mut tokens);
    }
    let option_rows = o_start..tokens.len();
    push(EOS, None, &mut tokens);

    let rows = addrs
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.map(|a| (a, i)))
        .collect();
    Ok(SequenceLayout {
        option,
        tokens,
        addrs,
        context: context_rows,
        question: question_rows,
        option_rows,
        marker: marker_row,
        truncated,
        rows,
    })
}

/// Input features of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenFeatures {
    /// Vocabulary ids for the trainable backbone.
    Ids(Vec<usize>),
    /// Frozen vectors (zero rows at specials) plus the special id per position.
    Precomputed {
        vectors: Tensor,
        specials: Vec<Option<usize>>,
    },
}

impl TokenFeatures {
    pub fn from_vocab(layout: &SequenceLayout, vocab: &Vocab) -> Self {
        TokenFeatures::Ids(layout.tokens.iter().map(|t| vocab.id(t)).collect())
    }

    pub fn from_file(
        layout: &SequenceLayout,
        example_id: &str,
        file: &EmbeddingFile,
    ) -> Result<Self> {
        let d = file.d();
        let mut data = vec![0.0; layout.len() * d];
        let mut specials = Vec::with_capacity(layout.len());
        for (i, (tok, addr)) in layout.tokens.iter().zip(&layout.addrs).enumerate() {
            match addr {
                Some(a) => {
                    let v = file.get(example_id, *a).ok_or_else(|| Error::Coverage {
                        example_id: example_id.to_string(),
                        sent_id: a.sent_id,
                        token: a.token,
                    })?;
                    for (dst, src) in data[i * d..(i + 1) * d].iter_mut().zip(v) {
                        *dst = f64::from(*src);
                    }
                    specials.push(None);
                }
                None => {
                    let id = SPECIALS.iter().position(|s| s == tok).unwrap_or(0);
                    specials.push(Some(id));
                }
            }
        }
        Ok(TokenFeatures::Precomputed {
            vectors: Tensor::new(layout.len(), d, data),
            specials,
        })
    }

    pub fn len(&self) -> usize {
        match self {
            TokenFeatures::Ids(ids) => ids.len(),
            TokenFeatures::Precomputed { specials, .. } => specials.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Backbone parameters. `tokens` exists in trainable mode, `specials` in
/// precomputed mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedParams<T> {
    pub tokens: Option<T>,
    pub specials: Option<T>,
    pub positions: T,
    pub mix_w: T,
    pub mix_b: T,
}

impl<T: Copy> EmbedParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> EmbedParams<U> {
        EmbedParams {
            tokens: self.tokens.map(&f),
            specials: self.specials.map(&f),
            positions: f(self.positions),
            mix_w: f(self.mix_w),
            mix_b: f(self.mix_b),
        }
    }
}

/// `ReLU((X + P[0..L]) W_mix + b_mix)`, one row per position.
pub fn encode_sequence(
    tape: &mut Tape,
    p: &EmbedParams<Var>,
    features: &TokenFeatures,
    drop: &mut Dropout<'_>,
) -> Result<Var> {
    let n = features.len();
    let x = match features {
        TokenFeatures::Ids(ids) => {
            let table = p
                .tokens
                .ok_or_else(|| Error::Config("token ids given to a precomputed backbone".into()))?;
            tape.gather_rows(table, ids)
        }
        TokenFeatures::Precomputed { vectors, specials } => {
            let table = p.specials.ok_or_else(|| {
                Error::Config("precomputed vectors given to a trainable backbone".into())
            })?;
            let width = tape.value(table).cols();
            if vectors.cols() != width {
                return Err(Error::Dimension {
                    expected: width,
                    found: vectors.cols(),
                });
            }
            let ids: Vec<usize> = specials.iter().map(|s| s.unwrap_or(0)).collect();
            let mask = Tensor::column(
                specials
                    .iter()
                    .map(|s| f64::from(u8::from(s.is_some())))
                    .collect(),
            );
            let mask = tape.constant(mask);
            let rows = tape.gather_rows(table, &ids);
            let special_part = tape.mul_col(rows, mask);
            let fixed = tape.constant(vectors.clone());
            tape.add(fixed, special_part)
        }
    };
    let max = tape.value(p.positions).rows();
    if n > max {
        return Err(Error::shape(
            "encode_sequence",
            format!("sequence of {n} tokens exceeds {max} positions"),
        ));
    }
    let pos_ids: Vec<usize> = (0..n).collect();
    let pos = tape.gather_rows(p.positions, &pos_ids);
    let x = tape.add(x, pos);
    let h = crate::nn::linear(tape, x, p.mix_w, p.mix_b);
    let h = tape.relu(h);
    Ok(drop.apply(tape, h))
}

/// Constant `groups.len() x width` matrix whose row `g` averages the rows
/// listed in `groups[g]`.
pub fn averaging_matrix(groups: &[Vec<usize>], width: usize) -> Tensor {
    let mut m = Tensor::zeros(groups.len(), width);
    for (g, rows) in groups.iter().enumerate() {
        let w = 1.0 / rows.len().max(1) as f64;
        for &r in rows {
            let v = m.get(g, r) + w;
            m.set(g, r, v);
        }
    }
    m
}

/// Node features as the mean of each node's token rows in `tokens`.
pub fn init_graph_features(tape: &mut Tape, tokens: Var, node_rows: &[Vec<usize>]) -> Result<Var> {
    if let Some(i) = node_rows.iter().position(Vec::is_empty) {
        return Err(Error::Graph(format!(
            "node {i} has no token rows to average"
        )));
    }
    let width = tape.value(tokens).rows();
    let m = tape.constant(averaging_matrix(node_rows, width));
    Ok(tape.matmul(m, tokens))
}

/// Token rows for every node of `graph`, indexed into the stacked sequences.
/// Context spans read the first sequence, option spans their own sequence.
pub fn resolve_node_rows(
    graph: &Supergraph,
    example: &Example,
    layouts: &[SequenceLayout],
    offsets: &[usize],
    global_rows: &[usize],
) -> Result<Vec<Vec<usize>>> {
    graph
        .nodes
        .iter()
        .map(|node| {
            if node.kind == NodeKind::Global {
                return Ok(global_rows.to_vec());
            }
            let span = node
                .span
                .ok_or_else(|| Error::Graph(format!("node {} has no span", node.node_id)))?;
            let rows = span_rows(example, layouts, offsets, span.sent_id, span.range());
            match rows {
                Some(r) if !r.is_empty() => Ok(r),
                _ => Err(Error::Graph(format!(
                    "node {} ('{}') span {}:{}..{} does not map into the encoded sequence",
                    node.node_id, node.surface, span.sent_id, span.start, span.end
                ))),
            }
        })
        .collect()
}

/// Stacked row indices of a token span, or `None` if any token is missing.
pub fn span_rows(
    example: &Example,
    layouts: &[SequenceLayout],
    offsets: &[usize],
    sent_id: u32,
    range: crate::corpus::TokenRange,
) -> Option<Vec<usize>> {
    let (part, _) = example.sentence(sent_id)?;
    let seq = match part {
        Part::Context => 0,
        Part::Option(k) => k,
        Part::Question => 0,
    };
    let layout = layouts.get(seq)?;
    (range.start..range.end)
        .map(|t| {
            layout
                .row_of(TokenAddr::new(sent_id, t as u32))
                .map(|r| offsets[seq] + r)
        })
        .collect()
}

/// Weight and gate of one relation in one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationBlock<T> {
    /// `d x d` message transform.
    pub w: T,
    /// `d x 1` gate projection.
    pub gate: T,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgcnLayer<T> {
    /// Indexed like [`Relation::ALL`].
    pub blocks: Vec<RelationBlock<T>>,
    /// When present, every edge uses this block regardless of its relation.
    pub single: Option<RelationBlock<T>>,
}

impl<T: Copy> RgcnLayer<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> RgcnLayer<U> {
        let block = |b: &RelationBlock<T>| RelationBlock {
            w: f(b.w),
            gate: f(b.gate),
        };
        RgcnLayer {
            blocks: self.blocks.iter().map(block).collect(),
            single: self.single.as_ref().map(block),
        }
    }
}

fn relation_slot(rel: Relation) -> usize {
    Relation::ALL
        .iter()
        .position(|r| *r == rel)
        .expect("relation listed")
}

/// One gated relational layer:
/// `h'_i = ReLU( sum_r sum_{j in N_r(i)} g_{j,r} / c_{i,r} * h_j W_r )`
/// with `g_{j,r} = sigmoid(h_j W_{r,g})` and `c_{i,r}` the number of incoming
/// `r` edges of `i`. Gate vectors (`N x 1`, one per relation used) are pushed
/// to `gates`.
pub fn gated_rgcn_layer(
    tape: &mut Tape,
    h: Var,
    edges: &[TypedEdge],
    layer: &RgcnLayer<Var>,
    gates: &mut Vec<Var>,
) -> Var {
    let n = tape.value(h).rows();
    let d = tape.value(h).cols();
    let mut groups: BTreeMap<usize, Vec<&TypedEdge>> = BTreeMap::new();
    for e in edges {
        let key = if layer.single.is_some() {
            0
        } else {
            relation_slot(e.rel)
        };
        groups.entry(key).or_default().push(e);
    }
    let mut isolated = vec![true; n];
    let mut total: Option<Var> = None;
    for (key, group) in groups {
        let block = layer.single.unwrap_or(layer.blocks[key]);
        let mut incoming = vec![0usize; n];
        for e in &group {
            incoming[e.dst] += 1;
        }
        let mut agg = Tensor::zeros(n, n);
        for e in &group {
            let v = agg.get(e.dst, e.src) + 1.0 / incoming[e.dst] as f64;
            agg.set(e.dst, e.src, v);
            isolated[e.dst] = false;
        }
        let messages = tape.matmul(h, block.w);
        let gate_pre = tape.matmul(h, block.gate);
        let gate = tape.sigmoid(gate_pre);
        gates.push(gate);
        let gated = tape.mul_col(messages, gate);
        let a = tape.constant(agg);
        let part = tape.matmul(a, gated);
        total = Some(match total {
            Some(t) => tape.add(t, part),
            None => part,
        });
    }
    let isolated = isolated.iter().filter(|x| **x).count();
    if isolated > 0 {
        log::warn!("{isolated} graph node(s) have no incoming edge; their features become zero");
    }
    let total = total.unwrap_or_else(|| tape.constant(Tensor::zeros(n, d)));
    tape.relu(total)
}

/// Edges of the intra-fact stage, with a self edge added for the global node.
pub fn stage1_edges(graph: &Supergraph) -> Vec<TypedEdge> {
    let mut edges: Vec<TypedEdge> = graph
        .edges
        .iter()
        .filter(|e| e.rel.is_intra_fact())
        .copied()
        .collect();
    if let Some(g) = graph.global_node() {
        edges.push(TypedEdge::new(g, g, Relation::SelfLoop));
    }
    edges
}

/// Edges of the cross-fact stage: coreference, global and every self edge.
pub fn stage2_edges(graph: &Supergraph) -> Vec<TypedEdge> {
    let mut edges: Vec<TypedEdge> = graph
        .edges
        .iter()
        .filter(|e| !e.rel.is_intra_fact() || e.rel == Relation::SelfLoop)
        .copied()
        .collect();
    if let Some(g) = graph.global_node() {
        edges.push(TypedEdge::new(g, g, Relation::SelfLoop));
    }
    edges
}

/// Applies `stage1` layers over intra-fact edges, then the remaining layers
/// over cross-fact edges.
pub fn run_graph_encoder(
    tape: &mut Tape,
    graph: &Supergraph,
    h0: Var,
    layers: &[RgcnLayer<Var>],
    stage1: usize,
    drop: &mut Dropout<'_>,
    gates: &mut Vec<Var>,
) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::Config(
            "graph encoder needs at least one layer".into(),
        ));
    }
    if stage1 > layers.len() {
        return Err(Error::Config(format!(
            "stage 1 wants {stage1} layers but only {} exist",
            layers.len()
        )));
    }
    let e1 = stage1_edges(graph);
    let e2 = stage2_edges(graph);
    let mut h = h0;
    for (i, layer) in layers.iter().enumerate() {
        let edges = if i < stage1 { &e1 } else { &e2 };
        h = gated_rgcn_layer(tape, h, edges, layer, gates);
        h = drop.apply(tape, h);
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionParams<T> {
    pub key: T,
    pub value: T,
    pub scorer: Scorer<T>,
    pub w_lambda: T,
    pub u_lambda: T,
}

impl<T: Copy> FusionParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> FusionParams<U> {
        FusionParams {
            key: f(self.key),
            value: f(self.value),
            scorer: self.scorer.map(&f),
            w_lambda: f(self.w_lambda),
            u_lambda: f(self.u_lambda),
        }
    }
}

/// Result of [`fuse_graph_context`]; `lambda` and `attention` are absent
/// for an empty graph.
#[derive(Debug, Clone, Copy)]
pub struct Fused {
    pub h: Var,
    pub lambda: Option<Var>,
    pub attention: Option<Var>,
}

/// `H~ = Attn(h^C, K, V)`, `lambda = sigmoid(H~ W_l + h^C U_l)`,
/// `H = h^C + lambda * H~`. Each option row attends over all nodes.
pub fn fuse_graph_context(
    tape: &mut Tape,
    hc: Var,
    nodes: Option<Var>,
    p: &FusionParams<Var>,
    drop: &mut Dropout<'_>,
) -> Fused {
    let Some(nodes) = nodes.filter(|n| tape.value(*n).rows() > 0) else {
        return Fused {
            h: hc,
            lambda: None,
            attention: None,
        };
    };
    let keys = tape.matmul(nodes, p.key);
    let values = tape.matmul(nodes, p.value);
    let attn = pairwise_attention(tape, keys, hc, &p.scorer);
    let attn_d = drop.apply(tape, attn);
    let at = tape.transpose(attn_d);
    let h_tilde = tape.matmul(at, values);
    let a = tape.matmul(h_tilde, p.w_lambda);
    let b = tape.matmul(hc, p.u_lambda);
    let pre = tape.add(a, b);
    let lambda = tape.sigmoid(pre);
    let gated = tape.mul(lambda, h_tilde);
    let h = tape.add(hc, gated);
    Fused {
        h,
        lambda: Some(lambda),
        attention: Some(attn),
    }
}

/// Mean of each row group of `x`, stacked.
pub fn pool_rows(tape: &mut Tape, x: Var, rows: &[usize]) -> Var {
    let g = tape.gather_rows(x, rows);
    tape.mean(g, Axis::Rows)
}
