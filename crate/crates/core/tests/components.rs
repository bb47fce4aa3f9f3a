//! Worked examples for the encoder, interaction and decoder building blocks,
//! checked against plain-arithmetic oracles.

// oracles index explicitly to mirror the arithmetic they check
#![allow(clippy::needless_range_loop)]

use focal_core::autodiff::{Axis, Tape, Tensor, Var};
use focal_core::corpus::{Example, ParsedSentence, Token};
use focal_core::decoder::{
    answer_loss, fact_regularization, hierarchical_decode, total_loss, DecoderParams, LossWeights,
    TripletFeatures,
};
use focal_core::encoders::{
    build_layout, encode_sequence, fuse_graph_context, gated_rgcn_layer, init_graph_features,
    run_graph_encoder, EmbedParams, FusionParams, RelationBlock, RgcnLayer, TokenFeatures, Vocab,
};
use focal_core::graph::{
    assemble_supergraph, build_fact_levi, Relation, SentenceMention, TypedEdge,
};
use focal_core::interaction::{
    coattend_with_context, fuse_option_correlations, option_pair_interaction, pairwise_attention,
    InteractionParams,
};
use focal_core::nn::{Dropout, Scorer};

const TOL: f64 = 1e-12;

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "length {} vs {}", a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "entry {i}: {x} vs {y}");
    }
}

fn leaf(t: &mut Tape, rows: &[Vec<f64>]) -> Var {
    t.leaf(Tensor::from_rows(rows))
}

fn zeros(t: &mut Tape, r: usize, c: usize) -> Var {
    t.leaf(Tensor::zeros(r, c))
}

/// Small deterministic pseudo-random values in roughly [-0.5, 0.5].
fn wobble(seed: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (((seed * 7919 + i * 104_729) % 1000) as f64 / 1000.0) - 0.5)
        .collect()
}

fn scorer(t: &mut Tape, v1: &[f64], v2: &[f64], v3: &[f64]) -> Scorer<Var> {
    Scorer {
        v1: t.leaf(Tensor::row(v1.to_vec())),
        v2: t.leaf(Tensor::row(v2.to_vec())),
        v3: t.leaf(Tensor::row(v3.to_vec())),
    }
}

fn zero_scorer(t: &mut Tape, d: usize) -> Scorer<Var> {
    let z = vec![0.0; d];
    scorer(t, &z, &z, &z)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------- encoders

fn one_word(sent_id: u32, word: &str) -> ParsedSentence {
    ParsedSentence {
        sent_id,
        tokens: vec![Token::new(0, word, "NOUN", None, "root")],
        coref_mentions: vec![],
    }
}

fn one_word_example() -> Example {
    Example {
        example_id: "w".into(),
        context_sentences: vec![one_word(0, "rain")],
        question: one_word(1, "why"),
        options: (0..4).map(|k| vec![one_word(2 + k, "wet")]).collect(),
        label: Some(0),
        qtype: None,
    }
}

#[test]
fn zero_embeddings_pool_to_the_mixing_bias_image() {
    let ex = one_word_example();
    let vocab = Vocab::build(std::slice::from_ref(&ex));
    let layout = build_layout(&ex, 0, Some("<pos>"), 16).unwrap();
    assert_eq!(layout.len(), 1 + 1 + 1 + 3 + 1);
    let d = 4;
    let mut t = Tape::new();
    let bias = [0.3, -0.2, 0.1, 0.5];
    let p = EmbedParams {
        tokens: Some(zeros(&mut t, vocab.len(), d)),
        specials: None,
        positions: zeros(&mut t, 16, d),
        mix_w: t.leaf(Tensor::new(d, d, wobble(1, d * d))),
        mix_b: t.leaf(Tensor::row(bias.to_vec())),
    };
    let h = encode_sequence(
        &mut t,
        &p,
        &TokenFeatures::from_vocab(&layout, &vocab),
        &mut Dropout::off(),
    )
    .unwrap();
    let pooled = t.mean(h, Axis::Rows);
    close(t.value(pooled).data(), &[0.3, 0.0, 0.1, 0.5], TOL);
}

#[test]
fn encoding_is_deterministic_and_marker_sits_after_context() {
    let ex = one_word_example();
    let vocab = Vocab::build(std::slice::from_ref(&ex));
    let layout = build_layout(&ex, 2, Some("<neg>"), 16).unwrap();
    let l_c = layout.context.len();
    assert_eq!(layout.marker, Some(l_c + 2));
    assert_eq!(layout.tokens[l_c + 2], "<neg>");
    let feats = TokenFeatures::from_vocab(&layout, &vocab);
    let TokenFeatures::Ids(ids) = &feats else {
        panic!("ids expected")
    };
    assert_eq!(ids[l_c + 2], vocab.id("<neg>"));

    let run = || {
        let mut t = Tape::new();
        let p = EmbedParams {
            tokens: Some(t.leaf(Tensor::new(vocab.len(), 3, wobble(2, vocab.len() * 3)))),
            specials: None,
            positions: t.leaf(Tensor::new(16, 3, wobble(3, 48))),
            mix_w: t.leaf(Tensor::new(3, 3, wobble(4, 9))),
            mix_b: zeros(&mut t, 1, 3),
        };
        let h = encode_sequence(&mut t, &p, &feats, &mut Dropout::off()).unwrap();
        t.value(h).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn node_features_average_their_token_rows() {
    let mut t = Tape::new();
    let u = [1.0, 2.0];
    let v = [3.0, -4.0];
    let w = [0.5, 0.25];
    let tokens = leaf(&mut t, &[u.to_vec(), v.to_vec(), w.to_vec()]);
    // rows 0 and 2 play the question and option token of a global node
    let h = init_graph_features(&mut t, tokens, &[vec![0], vec![0, 1], vec![0, 2]]).unwrap();
    let h = t.value(h);
    close(h.row_slice(0), &u, TOL);
    close(
        h.row_slice(1),
        &[(u[0] + v[0]) / 2.0, (u[1] + v[1]) / 2.0],
        TOL,
    );
    close(
        h.row_slice(2),
        &[(u[0] + w[0]) / 2.0, (u[1] + w[1]) / 2.0],
        TOL,
    );
    assert!(init_graph_features(&mut t, tokens, &[vec![]]).is_err());
}

/// A layer whose blocks take their weights from `w(rel)` and `gate(rel)`.
fn layer_with(
    t: &mut Tape,
    d: usize,
    w: impl Fn(Relation) -> Tensor,
    gate: impl Fn(Relation) -> Tensor,
) -> RgcnLayer<Var> {
    RgcnLayer {
        blocks: Relation::ALL
            .iter()
            .map(|&r| RelationBlock {
                w: t.leaf(w(r)),
                gate: t.leaf(gate(r)),
            })
            .collect(),
        single: None,
    }
    .map(|v| {
        assert_eq!(t.value(v).rows(), d);
        v
    })
}

#[test]
fn self_loop_with_identity_and_neutral_gate_halves_the_input() {
    let d = 3;
    let mut t = Tape::new();
    let layer = layer_with(&mut t, d, |_| Tensor::identity(d), |_| Tensor::zeros(d, 1));
    let p = [0.4, 1.0, 2.5];
    let h = leaf(&mut t, &[p.to_vec()]);
    let mut gates = Vec::new();
    let out = gated_rgcn_layer(
        &mut t,
        h,
        &[TypedEdge::new(0, 0, Relation::SelfLoop)],
        &layer,
        &mut gates,
    );
    close(t.value(out).data(), &[0.2, 0.5, 1.25], TOL);
    assert_eq!(gates.len(), 1);
    close(t.value(gates[0]).data(), &[0.5], TOL);
}

#[test]
fn same_relation_neighbours_are_averaged() {
    let d = 2;
    let mut t = Tape::new();
    let layer = layer_with(&mut t, d, |_| Tensor::identity(d), |_| Tensor::zeros(d, 1));
    let h = leaf(&mut t, &[vec![0.0, 0.0], vec![2.0, 4.0], vec![6.0, 0.0]]);
    let edges = [
        TypedEdge::new(1, 0, Relation::DefaultIn),
        TypedEdge::new(2, 0, Relation::DefaultIn),
    ];
    let out = gated_rgcn_layer(&mut t, h, &edges, &layer, &mut Vec::new());
    // 0.5 gate times the mean of the two neighbours
    close(t.value(out).row_slice(0), &[2.0, 1.0], TOL);
    // nodes 1 and 2 receive nothing
    close(t.value(out).row_slice(1), &[0.0, 0.0], TOL);
}

/// Dense loop over nodes, relations and neighbours.
fn rgcn_oracle(
    h: &[Vec<f64>],
    edges: &[TypedEdge],
    w: &dyn Fn(Relation) -> Tensor,
    gate: &dyn Fn(Relation) -> Tensor,
) -> Vec<Vec<f64>> {
    let n = h.len();
    let d = h[0].len();
    let mut out = vec![vec![0.0; d]; n];
    for i in 0..n {
        for rel in Relation::ALL {
            let nbrs: Vec<usize> = edges
                .iter()
                .filter(|e| e.dst == i && e.rel == rel)
                .map(|e| e.src)
                .collect();
            if nbrs.is_empty() {
                continue;
            }
            let c = nbrs.len() as f64;
            let wr = w(rel);
            let gr = gate(rel);
            for &j in &nbrs {
                let g = sigmoid((0..d).map(|k| h[j][k] * gr.get(k, 0)).sum());
                for col in 0..d {
                    let msg: f64 = (0..d).map(|k| h[j][k] * wr.get(k, col)).sum();
                    out[i][col] += g * msg / c;
                }
            }
        }
    }
    for row in &mut out {
        for x in row.iter_mut() {
            *x = x.max(0.0);
        }
    }
    out
}

fn path_edges() -> Vec<TypedEdge> {
    vec![
        TypedEdge::new(0, 1, Relation::DefaultIn),
        TypedEdge::new(1, 2, Relation::DefaultOut),
        TypedEdge::new(1, 0, Relation::ReverseIn),
        TypedEdge::new(2, 1, Relation::ReverseOut),
        TypedEdge::new(0, 0, Relation::SelfLoop),
        TypedEdge::new(1, 1, Relation::SelfLoop),
        TypedEdge::new(2, 2, Relation::SelfLoop),
    ]
}

#[test]
fn three_node_path_matches_dense_summation() {
    let d = 3;
    let w = |r: Relation| Tensor::new(d, d, wobble(10 + r as usize, d * d));
    let gate = |r: Relation| Tensor::new(d, 1, wobble(20 + r as usize, d));
    let rows = vec![
        vec![0.3, -0.1, 0.8],
        vec![-0.6, 0.2, 0.4],
        vec![0.9, 0.5, -0.3],
    ];
    let mut t = Tape::new();
    let layer = layer_with(&mut t, d, w, gate);
    let h = leaf(&mut t, &rows);
    let out = gated_rgcn_layer(&mut t, h, &path_edges(), &layer, &mut Vec::new());
    let want: Vec<f64> = rgcn_oracle(&rows, &path_edges(), &w, &gate).concat();
    close(t.value(out).data(), &want, TOL);
}

#[test]
fn saturated_gates_reduce_to_plain_relational_convolution() {
    // gate pre-activations above 40 round sigmoid to exactly 1
    let d = 3;
    let w = |r: Relation| Tensor::new(d, d, wobble(30 + r as usize, d * d));
    let gate = |_: Relation| Tensor::filled(d, 1, 100.0);
    let rows = vec![
        vec![0.5, 0.6, 0.7],
        vec![0.9, 0.2, 0.4],
        vec![0.3, 0.8, 0.1],
        vec![0.6, 0.6, 0.6],
    ];
    let mut edges = path_edges();
    edges.push(TypedEdge::new(3, 3, Relation::SelfLoop));
    edges.push(TypedEdge::new(2, 3, Relation::Coref));
    edges.push(TypedEdge::new(3, 2, Relation::Coref));
    let mut t = Tape::new();
    let layer = layer_with(&mut t, d, w, gate);
    let h = leaf(&mut t, &rows);
    let out = gated_rgcn_layer(&mut t, h, &edges, &layer, &mut Vec::new());

    let plain: Vec<f64> = (0..rows.len())
        .flat_map(|i| {
            let mut acc = vec![0.0; d];
            for rel in Relation::ALL {
                let nbrs: Vec<usize> = edges
                    .iter()
                    .filter(|e| e.dst == i && e.rel == rel)
                    .map(|e| e.src)
                    .collect();
                for &j in &nbrs {
                    for (col, a) in acc.iter_mut().enumerate() {
                        *a += (0..d).map(|k| rows[j][k] * w(rel).get(k, col)).sum::<f64>()
                            / nbrs.len() as f64;
                    }
                }
            }
            acc.into_iter().map(|x| x.max(0.0))
        })
        .collect();
    close(t.value(out).data(), &plain, TOL);
}

#[test]
fn edge_direction_selects_the_parameter_block() {
    let d = 2;
    let rows = vec![vec![0.7, 0.3], vec![0.4, 0.9]];
    let probe = |rel: Relation, bump: Relation| {
        let mut t = Tape::new();
        let layer = layer_with(
            &mut t,
            d,
            |r| {
                let base = Tensor::identity(d);
                if r == bump {
                    base.scale(3.0)
                } else {
                    base
                }
            },
            |_| Tensor::zeros(d, 1),
        );
        let h = leaf(&mut t, &rows);
        let out = gated_rgcn_layer(
            &mut t,
            h,
            &[TypedEdge::new(0, 1, rel)],
            &layer,
            &mut Vec::new(),
        );
        t.value(out).row_slice(1).to_vec()
    };
    let base = probe(Relation::DefaultIn, Relation::Global);
    assert_ne!(probe(Relation::DefaultIn, Relation::DefaultIn), base);
    assert_eq!(probe(Relation::ReverseIn, Relation::DefaultIn), base);
    assert_ne!(probe(Relation::ReverseIn, Relation::ReverseIn), base);
}

#[test]
fn node_without_incoming_edges_becomes_zero() {
    let d = 2;
    let mut t = Tape::new();
    let layer = layer_with(&mut t, d, |_| Tensor::identity(d), |_| Tensor::zeros(d, 1));
    let h = leaf(&mut t, &[vec![1.0, 1.0], vec![2.0, 2.0]]);
    let out = gated_rgcn_layer(
        &mut t,
        h,
        &[TypedEdge::new(0, 0, Relation::SelfLoop)],
        &layer,
        &mut Vec::new(),
    );
    close(t.value(out).row_slice(1), &[0.0, 0.0], TOL);
}

fn two_fact_graph(with_coref: bool) -> focal_core::graph::Supergraph {
    use focal_core::corpus::{CorefMention, Part, TokenRange};
    use focal_core::extract::{Phrase, Span, Triplet};
    let ph = |sent, start, text: &str| Phrase {
        span: Span {
            sent_id: sent,
            start,
            end: start + 1,
        },
        text: text.into(),
    };
    let tri = |sent, s: &str, p: &str, o: &str| Triplet {
        source: Part::Context,
        subject: ph(sent, 0, s),
        predicate: ph(sent, 1, p),
        object: ph(sent, 2, o),
    };
    let facts = [
        build_fact_levi(&tri(0, "Bill", "is", "doctor")),
        build_fact_levi(&tri(1, "He", "treats", "patients")),
    ];
    let mentions: Vec<SentenceMention> = if with_coref {
        (0..2)
            .map(|s| SentenceMention {
                sent_id: s,
                mention: CorefMention {
                    cluster: 0,
                    span: TokenRange::new(0, 1),
                },
            })
            .collect()
    } else {
        vec![]
    };
    assemble_supergraph(&facts, &mentions, false)
}

fn graph_layers(t: &mut Tape, d: usize, n: usize) -> Vec<RgcnLayer<Var>> {
    (0..n)
        .map(|l| {
            layer_with(
                t,
                d,
                |r| Tensor::new(d, d, wobble(40 + 10 * l + r as usize, d * d)).map(|x| x + 0.6),
                |r| Tensor::new(d, 1, wobble(90 + 10 * l + r as usize, d)),
            )
        })
        .collect()
}

fn node_rows(n: usize, d: usize, bump: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut r: Vec<f64> = wobble(200 + i, d).into_iter().map(|x| x + 0.6).collect();
            if i == 0 {
                r[0] += bump;
            }
            r
        })
        .collect()
}

#[test]
fn stage_two_without_cross_edges_is_a_self_update() {
    let d = 3;
    let g = two_fact_graph(false);
    let rows = node_rows(6, d, 0.0);
    let mut t = Tape::new();
    let layers = graph_layers(&mut t, d, 2);
    let h0 = leaf(&mut t, &rows);
    let out = run_graph_encoder(
        &mut t,
        &g,
        h0,
        &layers,
        1,
        &mut Dropout::off(),
        &mut Vec::new(),
    )
    .unwrap();

    let intra: Vec<TypedEdge> = g.edges.clone();
    let selfs: Vec<TypedEdge> = g
        .edges
        .iter()
        .filter(|e| e.rel == Relation::SelfLoop)
        .copied()
        .collect();
    let h1 = gated_rgcn_layer(&mut t, h0, &intra, &layers[0], &mut Vec::new());
    let h2 = gated_rgcn_layer(&mut t, h1, &selfs, &layers[1], &mut Vec::new());
    assert_eq!(t.value(out), t.value(h2));
}

#[test]
fn coreference_carries_a_perturbation_only_in_stage_two() {
    let d = 3;
    let g = two_fact_graph(true);
    let run = |stage1: usize, total: usize, bump: f64| {
        let mut t = Tape::new();
        let layers = graph_layers(&mut t, d, total);
        let h0 = leaf(&mut t, &node_rows(6, d, bump));
        let out = run_graph_encoder(
            &mut t,
            &g,
            h0,
            &layers,
            stage1,
            &mut Dropout::off(),
            &mut Vec::new(),
        )
        .unwrap();
        t.value(out).clone()
    };
    // fact B occupies nodes 3..6
    let fact_b = |m: &Tensor| {
        (3..6)
            .flat_map(|r| m.row_slice(r).to_vec())
            .collect::<Vec<_>>()
    };
    let a = run(1, 1, 0.0);
    let b = run(1, 1, 0.5);
    assert_eq!(fact_b(&a), fact_b(&b));
    assert_ne!(a.row_slice(0), b.row_slice(0));
    let a = run(1, 2, 0.0);
    let b = run(1, 2, 0.5);
    assert_ne!(fact_b(&a)[..d], fact_b(&b)[..d]);
}

#[test]
fn graph_encoder_needs_a_layer() {
    let g = two_fact_graph(false);
    let mut t = Tape::new();
    let h0 = leaf(&mut t, &node_rows(6, 2, 0.0));
    assert!(
        run_graph_encoder(&mut t, &g, h0, &[], 0, &mut Dropout::off(), &mut Vec::new()).is_err()
    );
}

fn fusion_params(
    t: &mut Tape,
    d: usize,
    lambda: Option<(Tensor, Tensor)>,
    value: Tensor,
) -> FusionParams<Var> {
    let (wl, ul) = lambda.unwrap_or_else(|| {
        (
            Tensor::new(d, d, wobble(5, d * d)),
            Tensor::new(d, d, wobble(6, d * d)),
        )
    });
    FusionParams {
        key: t.leaf(Tensor::new(d, d, wobble(7, d * d))),
        value: t.leaf(value),
        scorer: scorer(t, &wobble(8, d), &wobble(9, d), &wobble(10, d)),
        w_lambda: t.leaf(wl),
        u_lambda: t.leaf(ul),
    }
}

fn hc_rows(d: usize) -> Vec<Vec<f64>> {
    (0..4)
        .map(|k| wobble(300 + k, d).into_iter().map(|x| x + 1.0).collect())
        .collect()
}

#[test]
fn empty_graph_leaves_context_untouched() {
    let d = 3;
    let mut t = Tape::new();
    let hc = leaf(&mut t, &hc_rows(d));
    let p = fusion_params(&mut t, d, None, Tensor::identity(d));
    let f = fuse_graph_context(&mut t, hc, None, &p, &mut Dropout::off());
    assert_eq!(t.value(f.h), t.value(hc));
    assert!(f.lambda.is_none());
}

#[test]
fn zero_lambda_weights_give_half_the_graph_summary() {
    let d = 3;
    let mut t = Tape::new();
    let hc = leaf(&mut t, &hc_rows(d));
    let f_row = vec![0.25, -0.5, 0.75];
    let nodes = leaf(&mut t, std::slice::from_ref(&f_row));
    let p = fusion_params(
        &mut t,
        d,
        Some((Tensor::zeros(d, d), Tensor::zeros(d, d))),
        Tensor::identity(d),
    );
    let f = fuse_graph_context(&mut t, hc, Some(nodes), &p, &mut Dropout::off());
    close(t.value(f.lambda.unwrap()).data(), &[0.5; 12], TOL);
    // a single key receives weight 1, so every option reads f
    let want: Vec<f64> = hc_rows(d)
        .iter()
        .flat_map(|r| {
            r.iter()
                .zip(&f_row)
                .map(|(a, b)| a + 0.5 * b)
                .collect::<Vec<_>>()
        })
        .collect();
    close(t.value(f.h).data(), &want, TOL);
}

#[test]
fn closed_lambda_returns_context_bitwise() {
    let d = 3;
    let mut t = Tape::new();
    let hc = leaf(&mut t, &hc_rows(d));
    let nodes = leaf(&mut t, &node_rows(5, d, 0.0));
    let p = fusion_params(
        &mut t,
        d,
        Some((Tensor::zeros(d, d), Tensor::filled(d, d, -1e4))),
        Tensor::identity(d),
    );
    let f = fuse_graph_context(&mut t, hc, Some(nodes), &p, &mut Dropout::off());
    assert!(t.value(f.lambda.unwrap()).data().iter().all(|&x| x == 0.0));
    assert_eq!(t.value(f.h), t.value(hc));
}

// ------------------------------------------------------------- interaction

#[test]
fn zero_scorer_gives_uniform_attention() {
    let mut t = Tape::new();
    let u = leaf(&mut t, &[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.0, 5.0]]);
    let w = leaf(&mut t, &[vec![4.0, 4.0], vec![-2.0, 1.0]]);
    let v = zero_scorer(&mut t, 2);
    let a = pairwise_attention(&mut t, u, w, &v);
    assert_eq!(t.value(a).shape(), [3, 2]);
    close(t.value(a).data(), &[1.0 / 3.0; 6], TOL);
}

#[test]
fn single_row_attention_is_all_ones() {
    let mut t = Tape::new();
    let u = leaf(&mut t, &[vec![1.0, -2.0]]);
    let w = leaf(&mut t, &[vec![4.0, 4.0], vec![-2.0, 1.0], vec![0.1, 0.2]]);
    let v = scorer(&mut t, &[0.3, 0.1], &[-0.7, 0.2], &[0.5, 0.5]);
    let a = pairwise_attention(&mut t, u, w, &v);
    close(t.value(a).data(), &[1.0; 3], TOL);
}

#[test]
fn two_by_one_attention_matches_scalar_softmax() {
    let (u1, u2, w) = ([0.5, -1.0], [2.0, 0.25], [1.5, -0.5]);
    let (v1, v2, v3) = ([0.2, 0.4], [-0.3, 0.9], [0.7, -0.1]);
    let score = |u: &[f64; 2]| dot(&v1, u) + dot(&v2, &w) + dot(&v3, &[u[0] * w[0], u[1] * w[1]]);
    let (s1, s2) = (score(&u1), score(&u2));
    let a1 = s1.exp() / (s1.exp() + s2.exp());

    let mut t = Tape::new();
    let uu = leaf(&mut t, &[u1.to_vec(), u2.to_vec()]);
    let ww = leaf(&mut t, &[w.to_vec()]);
    let v = scorer(&mut t, &v1, &v2, &v3);
    let a = pairwise_attention(&mut t, uu, ww, &v);
    close(t.value(a).data(), &[a1, 1.0 - a1], TOL);
}

#[test]
fn identical_options_compare_against_their_column_mean() {
    let rows = [vec![1.0, 3.0, -2.0], vec![5.0, -1.0, 0.5]];
    let mut t = Tape::new();
    let oi = leaf(&mut t, &rows);
    let oj = leaf(&mut t, &rows);
    let v = zero_scorer(&mut t, 3);
    let out = option_pair_interaction(&mut t, oi, oj, &v, &mut Dropout::off()).unwrap();
    let mean: Vec<f64> = (0..3).map(|c| (rows[0][c] + rows[1][c]) / 2.0).collect();
    let want: Vec<f64> = rows
        .iter()
        .flat_map(|r| {
            let diff = r.iter().zip(&mean).map(|(a, m)| a - m);
            let prod = r.iter().zip(&mean).map(|(a, m)| a * m);
            diff.chain(prod).collect::<Vec<_>>()
        })
        .collect();
    assert_eq!(t.value(out).shape(), [2, 6]);
    close(t.value(out).data(), &want, TOL);
}

#[test]
fn zero_option_interacts_to_zero_and_self_comparison_errors() {
    let mut t = Tape::new();
    let oi = zeros(&mut t, 3, 4);
    let oj = t.leaf(Tensor::new(2, 4, wobble(11, 8)));
    let v = scorer(&mut t, &wobble(12, 4), &wobble(13, 4), &wobble(14, 4));
    let out = option_pair_interaction(&mut t, oi, oj, &v, &mut Dropout::off()).unwrap();
    assert_eq!(t.value(out).shape(), [3, 8]);
    assert!(t.value(out).data().iter().all(|&x| x == 0.0));
    assert!(option_pair_interaction(&mut t, oj, oj, &v, &mut Dropout::off()).is_err());
}

fn interaction_setup(
    t: &mut Tape,
    d: usize,
    gate_bias: f64,
) -> (Var, Vec<Var>, Var, InteractionParams<Var>) {
    let oi = t.leaf(Tensor::new(3, d, wobble(50, 3 * d)));
    let partners: Vec<Var> = (0..3)
        .map(|k| t.leaf(Tensor::new(3, 2 * d, wobble(51 + k, 6 * d))))
        .collect();
    let q = t.leaf(Tensor::new(1, d, wobble(55, d)));
    let p = InteractionParams {
        scorer: zero_scorer(t, d),
        w_c: t.leaf(Tensor::new(7 * d, d, wobble(56, 7 * d * d))),
        b_c: zeros(t, 1, d),
        w_g: zeros(t, 3 * d, d),
        b_g: t.leaf(Tensor::filled(1, d, gate_bias)),
    };
    (oi, partners, q, p)
}

#[test]
fn open_gate_keeps_the_option_rows() {
    let d = 4;
    let mut t = Tape::new();
    let (oi, partners, q, p) = interaction_setup(&mut t, d, 100.0);
    let out = fuse_option_correlations(&mut t, oi, &partners, q, &p).unwrap();
    assert_eq!(out.concat_width, 28);
    assert_eq!(t.value(out.rep), t.value(oi));
}

#[test]
fn closed_gate_yields_the_correlation_features() {
    let d = 4;
    let mut t = Tape::new();
    let (oi, partners, q, p) = interaction_setup(&mut t, d, -100.0);
    let out = fuse_option_correlations(&mut t, oi, &partners, q, &p).unwrap();
    let mut parts = vec![oi];
    parts.extend(&partners);
    let cat = t.concat_cols(&parts);
    let pre = t.matmul(cat, p.w_c);
    let o_hat = t.tanh(pre);
    close(t.value(out.rep).data(), t.value(o_hat).data(), TOL);
    assert!(fuse_option_correlations(&mut t, oi, &partners[..2], q, &p).is_err());
}

#[test]
fn single_context_row_is_every_summary() {
    let mut t = Tape::new();
    let opt = t.leaf(Tensor::new(3, 2, wobble(60, 6)));
    let ctx = leaf(&mut t, &[vec![0.9, -0.4]]);
    let v = scorer(&mut t, &wobble(61, 2), &wobble(62, 2), &wobble(63, 2));
    let (s, a) = coattend_with_context(&mut t, opt, Some(ctx), &v, &mut Dropout::off());
    close(t.value(s).data(), &[0.9, -0.4], TOL);
    assert!(a.is_some());
}

#[test]
fn zero_options_with_zero_scorer_read_the_context_mean() {
    let mut t = Tape::new();
    let opt = zeros(&mut t, 2, 2);
    let ctx = leaf(&mut t, &[vec![1.0, 2.0], vec![3.0, 6.0], vec![-1.0, 1.0]]);
    let v = zero_scorer(&mut t, 2);
    let (s, _) = coattend_with_context(&mut t, opt, Some(ctx), &v, &mut Dropout::off());
    close(t.value(s).data(), &[1.0, 3.0], TOL);
    let (fallback, a) = coattend_with_context(&mut t, ctx, None, &v, &mut Dropout::off());
    assert!(a.is_none());
    close(t.value(fallback).data(), &[1.0, 3.0], TOL);
}

#[test]
fn two_by_two_coattention_matches_enumeration() {
    let opts = [[0.2, -0.6], [1.1, 0.3]];
    let ctx = [[0.5, 0.5], [-0.8, 1.4]];
    let (v1, v2, v3) = ([0.3, -0.2], [0.6, 0.1], [-0.4, 0.9]);
    let mut summary = [0.0; 2];
    for o in &opts {
        let s: Vec<f64> = ctx
            .iter()
            .map(|c| dot(&v1, c) + dot(&v2, o) + dot(&v3, &[c[0] * o[0], c[1] * o[1]]))
            .collect();
        let z: f64 = s.iter().map(|x| x.exp()).sum();
        for (c, si) in ctx.iter().zip(&s) {
            for k in 0..2 {
                summary[k] += si.exp() / z * c[k] / 2.0;
            }
        }
    }
    let mut t = Tape::new();
    let o = leaf(&mut t, &opts.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
    let c = leaf(&mut t, &ctx.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
    let v = scorer(&mut t, &v1, &v2, &v3);
    let (s, _) = coattend_with_context(&mut t, o, Some(c), &v, &mut Dropout::off());
    close(t.value(s).data(), &summary, TOL);
}

// ----------------------------------------------------------------- decoder

fn decoder_params(t: &mut Tape, d: usize, gate_bias: f64) -> DecoderParams<Var> {
    DecoderParams {
        fc1_w: t.leaf(Tensor::new(4 * d, d, wobble(70, 4 * d * d))),
        fc1_b: zeros(t, 1, d),
        fc2_w: t.leaf(Tensor::new(4 * d, d, wobble(71, 4 * d * d))),
        fc2_b: zeros(t, 1, d),
        fcp_w: zeros(t, 2 * d, d),
        fcp_b: t.leaf(Tensor::filled(1, d, gate_bias)),
        z_w: t.leaf(Tensor::new(d, 1, wobble(72, d))),
        z_b: t.leaf(Tensor::scalar(0.125)),
    }
}

fn decode_inputs(t: &mut Tape, d: usize) -> (Var, Var, Var) {
    (
        t.leaf(Tensor::new(4, d, wobble(73, 4 * d))),
        t.leaf(Tensor::new(4, d, wobble(74, 4 * d))),
        t.leaf(Tensor::new(4, d, wobble(75, 4 * d))),
    )
}

fn linear_logits(rows: &Tensor, w: &Tensor, b: f64) -> Vec<f64> {
    (0..rows.rows())
        .map(|r| {
            dot(
                rows.row_slice(r),
                &(0..w.rows()).map(|k| w.get(k, 0)).collect::<Vec<_>>(),
            ) + b
        })
        .collect()
}

#[test]
fn open_decoder_gate_reads_the_graph_features() {
    let d = 3;
    let mut t = Tape::new();
    let p = decoder_params(&mut t, d, 100.0);
    let (hc, h, of) = decode_inputs(&mut t, d);
    let out = hierarchical_decode(&mut t, hc, h, of, &p, false, &mut Dropout::off()).unwrap();
    assert_eq!(t.value(out.logits).shape(), [4, 1]);
    let want = linear_logits(t.value(h), t.value(p.z_w), 0.125);
    close(t.value(out.logits).data(), &want, TOL);
}

#[test]
fn closed_decoder_gate_reads_the_option_features() {
    let d = 3;
    let mut t = Tape::new();
    let p = decoder_params(&mut t, d, -100.0);
    let (hc, h, of) = decode_inputs(&mut t, d);
    let out = hierarchical_decode(&mut t, hc, h, of, &p, false, &mut Dropout::off()).unwrap();
    let want = linear_logits(t.value(of), t.value(p.z_w), 0.125);
    close(t.value(out.logits).data(), &want, TOL);
}

#[test]
fn literal_second_block_is_a_different_model() {
    let d = 3;
    let mut t = Tape::new();
    let mut p = decoder_params(&mut t, d, 0.0);
    p.fcp_w = t.leaf(Tensor::new(2 * d, d, wobble(76, 2 * d * d)));
    let (hc, h, of) = decode_inputs(&mut t, d);
    let a = hierarchical_decode(&mut t, hc, h, of, &p, false, &mut Dropout::off()).unwrap();
    let b = hierarchical_decode(&mut t, hc, h, of, &p, true, &mut Dropout::off()).unwrap();
    assert_ne!(t.value(a.logits), t.value(b.logits));
    let bad = t.leaf(Tensor::zeros(3, d));
    assert!(hierarchical_decode(&mut t, hc, h, bad, &p, false, &mut Dropout::off()).is_err());
}

fn ce(z: &[f64], label: usize) -> f64 {
    let mut t = Tape::new();
    let v = t.constant(Tensor::column(z.to_vec()));
    let l = answer_loss(&mut t, v, label).unwrap();
    t.value(l).item()
}

#[test]
fn answer_loss_closed_forms() {
    assert!((ce(&[0.7; 4], 2) - 4f64.ln()).abs() < TOL);
    assert!((4f64.ln() - 1.386294).abs() < 1e-6);
    assert!(ce(&[10.0, -10.0, -10.0, -10.0], 0) < 1e-8);
    let e = std::f64::consts::E;
    assert!((ce(&[1.0, 0.0, 0.0, 0.0], 1) - (3.0 + e).ln()).abs() < TOL);
    let mut t = Tape::new();
    let v = t.constant(Tensor::column(vec![0.0; 4]));
    assert!(answer_loss(&mut t, v, 4).is_err());
}

fn lfr(triplets: &[([f64; 2], [f64; 2], [f64; 2])]) -> f64 {
    let mut t = Tape::new();
    let feats: Vec<TripletFeatures> = triplets
        .iter()
        .map(|(s, r, o)| TripletFeatures {
            subject: t.constant(Tensor::row(s.to_vec())),
            relation: t.constant(Tensor::row(r.to_vec())),
            object: t.constant(Tensor::row(o.to_vec())),
        })
        .collect();
    let l = fact_regularization(&mut t, &feats);
    t.value(l).item()
}

#[test]
fn fact_regulariser_closed_forms() {
    assert_eq!(lfr(&[]), 0.0);
    assert!(lfr(&[([1.0, 2.0], [0.5, -1.0], [1.5, 1.0])]).abs() < TOL);
    assert!((lfr(&[([1.0, 0.0], [0.0, 0.0], [0.0, 3.0])]) - 1.0).abs() < TOL);
    let anti = ([1.0, 1.0], [1.0, 0.0], [-2.0, -1.0]);
    assert!((lfr(&[anti, anti, anti]) - 6.0).abs() < TOL);
}

#[test]
fn total_loss_weights() {
    let combine = |a: f64, b: f64, l_ans: f64, l_lfr: f64| {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(l_ans));
        let y = t.constant(Tensor::scalar(l_lfr));
        let l = total_loss(&mut t, x, y, LossWeights::new(a, b).unwrap());
        t.value(l).item()
    };
    assert_eq!(combine(1.0, 0.5, 2.0, 4.0), 4.0);
    assert_eq!(combine(1.0, 0.0, 2.0, 4.0), 2.0);
    for (a, b) in [(1.0, 0.5), (2.0, 0.0), (0.3, 1.7)] {
        assert!((combine(a, b, 1.25, 0.75) - (a * 1.25 + b * 0.75)).abs() < TOL);
    }
    assert_eq!(LossWeights::default(), LossWeights::new(1.0, 0.5).unwrap());
    assert!(LossWeights::new(0.0, 0.5).is_err());
}
