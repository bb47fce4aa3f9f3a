//! The full model: parameter registry, per-example preparation and forward pass.

use crate::autodiff::{Axis, ParamId, ParamStore, Tape, Var};
use crate::config::{BackboneMode, ModelConfig};
use crate::corpus::{EmbeddingFile, Example, NUM_OPTIONS};
use crate::decoder::{
    answer_loss, fact_regularization, hierarchical_decode, total_loss, DecoderParams, LossWeights,
    TripletFeatures,
};
use crate::encoders::{
    averaging_matrix, build_layout, encode_sequence, fuse_graph_context, init_graph_features,
    pool_rows, resolve_node_rows, run_graph_encoder, span_rows, EmbedParams, FusionParams,
    RelationBlock, RgcnLayer, SequenceLayout, TokenFeatures, Vocab, SPECIALS,
};
use crate::error::{Error, Result};
use crate::extract::{detect_negation, extract_example, QuestionPolarity, Triplet};
use crate::graph::{build_supergraph, GraphOptions, Relation, Supergraph};
use crate::interaction::{
    coattend_with_context, fuse_option_correlations, option_pair_interaction, InteractionParams,
};
use crate::nn::{Dropout, Scorer};

/// Every parameter of the model, as ids in a [`ParamStore`] or as bound tape variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelParams<T> {
    pub embed: EmbedParams<T>,
    pub layers: Vec<RgcnLayer<T>>,
    pub fusion: FusionParams<T>,
    pub interaction: InteractionParams<T>,
    pub coattention: Scorer<T>,
    pub decoder: DecoderParams<T>,
}

impl<T: Copy> ModelParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> ModelParams<U> {
        ModelParams {
            embed: self.embed.map(&f),
            layers: self.layers.iter().map(|l| l.map(&f)).collect(),
            fusion: self.fusion.map(&f),
            interaction: self.interaction.map(&f),
            coattention: self.coattention.map(&f),
            decoder: self.decoder.map(&f),
        }
    }
}

struct Registrar<'a> {
    store: &'a mut ParamStore,
    seed: u64,
}

impl Registrar<'_> {
    fn weight(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.store.uniform(self.seed, name, rows, cols, rows)
    }

    fn vector(&mut self, name: &str, cols: usize) -> ParamId {
        self.store.uniform(self.seed, name, 1, cols, cols)
    }

    fn bias(&mut self, name: &str, cols: usize) -> ParamId {
        self.store.zeros(name, 1, cols)
    }

    fn scorer(&mut self, prefix: &str, d: usize) -> Scorer<ParamId> {
        Scorer {
            v1: self.vector(&format!("{prefix}.v1"), d),
            v2: self.vector(&format!("{prefix}.v2"), d),
            v3: self.vector(&format!("{prefix}.v3"), d),
        }
    }

    fn block(&mut self, prefix: &str, d: usize) -> RelationBlock<ParamId> {
        RelationBlock {
            w: self.weight(&format!("{prefix}.w"), d, d),
            gate: self.weight(&format!("{prefix}.gate"), d, 1),
        }
    }
}

/// Width of the backbone input vectors for `config`.
pub fn input_width(config: &ModelConfig) -> Result<usize> {
    match config.backbone {
        BackboneMode::Trainable => Ok(config.d),
        BackboneMode::Precomputed => config.embedding_dim.ok_or_else(|| {
            Error::Config(
                "precomputed backbone needs embedding_dim (taken from the embedding file)".into(),
            )
        }),
    }
}

fn register(
    config: &ModelConfig,
    vocab: &Vocab,
    store: &mut ParamStore,
) -> Result<ModelParams<ParamId>> {
    let d = config.d;
    let d_in = input_width(config)?;
    let mut r = Registrar {
        store,
        seed: config.seed,
    };
    let (tokens, specials) = match config.backbone {
        BackboneMode::Trainable => (Some(r.weight("embed.tokens", vocab.len(), d_in)), None),
        BackboneMode::Precomputed => (None, Some(r.weight("embed.specials", SPECIALS.len(), d_in))),
    };
    let embed = EmbedParams {
        tokens,
        specials,
        positions: r.weight("embed.positions", config.max_seq_len, d_in),
        mix_w: r.weight("embed.mix.w", d_in, d),
        mix_b: r.bias("embed.mix.b", d),
    };
    let layers = (0..config.graph_layers)
        .map(|l| RgcnLayer {
            blocks: Relation::ALL
                .iter()
                .map(|rel| r.block(&format!("rgcn.{l}.{}", rel.name()), d))
                .collect(),
            single: config
                .ablations
                .single_edge_type
                .then(|| r.block(&format!("rgcn.{l}.single"), d)),
        })
        .collect();
    let fusion = FusionParams {
        key: r.weight("fusion.key", d, d),
        value: r.weight("fusion.value", d, d),
        scorer: r.scorer("fusion.attn", d),
        w_lambda: r.weight("fusion.lambda.w", d, d),
        u_lambda: r.weight("fusion.lambda.u", d, d),
    };
    let interaction = InteractionParams {
        scorer: r.scorer("interaction.attn", d),
        w_c: r.weight("interaction.correlation.w", 7 * d, d),
        b_c: r.bias("interaction.correlation.b", d),
        w_g: r.weight("interaction.gate.w", 3 * d, d),
        b_g: r.bias("interaction.gate.b", d),
    };
    let coattention = r.scorer("coattention.attn", d);
    let decoder = DecoderParams {
        fc1_w: r.weight("decoder.fc1.w", 4 * d, d),
        fc1_b: r.bias("decoder.fc1.b", d),
        fc2_w: r.weight("decoder.fc2.w", 4 * d, d),
        fc2_b: r.bias("decoder.fc2.b", d),
        fcp_w: r.weight("decoder.gate.w", 2 * d, d),
        fcp_b: r.bias("decoder.gate.b", d),
        z_w: r.weight("decoder.out.w", d, 1),
        z_b: r.bias("decoder.out.b", 1),
    };
    Ok(ModelParams {
        embed,
        layers,
        fusion,
        interaction,
        coattention,
        decoder,
    })
}

/// An example after extraction, graph construction and sequence layout.
/// Depends on the configuration and vocabulary but not on parameter values.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub example_id: String,
    pub label: Option<usize>,
    pub qtype: Option<String>,
    pub polarity: QuestionPolarity,
    pub layouts: Vec<SequenceLayout>,
    pub features: Vec<TokenFeatures>,
    /// First stacked row of each sequence.
    pub offsets: Vec<usize>,
    pub triplets: Vec<Triplet>,
    pub graph: Supergraph,
    pub node_rows: Vec<Vec<usize>>,
    /// Stacked rows of subject, predicate and object per triplet.
    pub triplet_rows: Vec<[Vec<usize>; 3]>,
    /// Triplets lost because context truncation removed one of their tokens.
    pub dropped_triplets: usize,
}

impl PreparedExample {
    pub fn total_rows(&self) -> usize {
        self.layouts.iter().map(SequenceLayout::len).sum()
    }
}

/// Runs the parameter-free part of the pipeline on one example.
pub fn prepare(
    example: &Example,
    config: &ModelConfig,
    vocab: &Vocab,
    embeddings: Option<&EmbeddingFile>,
) -> Result<PreparedExample> {
    example.validate()?;
    let polarity = detect_negation(&example.question);
    let marker = (!config.ablations.no_question_marker).then(|| polarity.marker());
    let layouts = (0..NUM_OPTIONS)
        .map(|k| build_layout(example, k, marker, config.max_seq_len))
        .collect::<Result<Vec<_>>>()?;
    let features = layouts
        .iter()
        .map(|l| match config.backbone {
            BackboneMode::Trainable => Ok(TokenFeatures::from_vocab(l, vocab)),
            BackboneMode::Precomputed => {
                let file = embeddings.ok_or_else(|| {
                    Error::Config("precomputed backbone needs an embedding file".into())
                })?;
                TokenFeatures::from_file(l, &example.example_id, file)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut offsets = Vec::with_capacity(NUM_OPTIONS);
    let mut acc = 0;
    for l in &layouts {
        offsets.push(acc);
        acc += l.len();
    }

    let mut triplets = Vec::new();
    let mut triplet_rows = Vec::new();
    let mut dropped = 0;
    for t in extract_example(example)? {
        let rows = t
            .spans()
            .map(|s| span_rows(example, &layouts, &offsets, s.sent_id, s.range()));
        if let [Some(s), Some(p), Some(o)] = rows {
            triplets.push(t);
            triplet_rows.push([s, p, o]);
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!(
            "example '{}': {dropped} triplet(s) fall in the truncated context and are skipped",
            example.example_id
        );
    }

    let ab = config.ablations;
    let graph = build_supergraph(example, &triplets, GraphOptions::from_ablations(&ab));
    let mut global_rows: Vec<usize> = layouts[0].question.clone().collect();
    if !ab.question_only_global {
        for (k, l) in layouts.iter().enumerate() {
            global_rows.extend(l.option_rows.clone().map(|r| offsets[k] + r));
        }
    }
    let node_rows = resolve_node_rows(&graph, example, &layouts, &offsets, &global_rows)?;

    Ok(PreparedExample {
        example_id: example.example_id.clone(),
        label: example.label,
        qtype: example.qtype.clone(),
        polarity,
        layouts,
        features,
        offsets,
        triplets,
        graph,
        node_rows,
        triplet_rows,
        dropped_triplets: dropped,
    })
}

/// Named handles recorded during a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// Sigmoid gates by component: `rgcn`, `fusion`, `interaction`, `decoder`.
    pub gates: Vec<(&'static str, Var)>,
    /// `d`-wide concatenation width fed to the correlation layer, per option.
    pub correlation_widths: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `4 x 1`.
    pub logits: Var,
    /// `4 x d` pooled sequence features.
    pub pooled: Var,
    /// `4 x d` graph-fused features.
    pub fused: Var,
    /// `4 x d` option features after interaction and co-attention.
    pub options: Var,
    pub node_features: Option<Var>,
    pub l_ans: Option<Var>,
    pub l_lfr: Var,
    /// Present when the example is labelled.
    pub loss: Option<Var>,
    pub trace: Trace,
}

#[derive(Debug, Clone)]
pub struct FocalModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    ids: ModelParams<ParamId>,
}

impl FocalModel {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let ids = register(&config, &vocab, &mut params)?;
        Ok(FocalModel {
            config,
            vocab,
            params,
            ids,
        })
    }

    /// Rebuilds a model around stored parameter values.
    pub fn from_parts(
        config: ModelConfig,
        mut vocab: Vocab,
        mut params: ParamStore,
    ) -> Result<Self> {
        vocab.reindex();
        params.reindex();
        let mut fresh = FocalModel::new(config, vocab)?;
        if !fresh.params.same_layout(&params) {
            return Err(Error::Checkpoint(
                "stored parameters do not match the configured architecture".into(),
            ));
        }
        fresh.params = params;
        Ok(fresh)
    }

    pub fn param_ids(&self) -> &ModelParams<ParamId> {
        &self.ids
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights::new(self.config.alpha, self.config.effective_beta())
            .expect("validated configuration")
    }

    pub fn prepare(
        &self,
        example: &Example,
        embeddings: Option<&EmbeddingFile>,
    ) -> Result<PreparedExample> {
        prepare(example, &self.config, &self.vocab, embeddings)
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.bind(tape)
    }

    /// Builds the computation for one example on `tape`, reading parameters
    /// from `vars` (as returned by [`FocalModel::bind`]).
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        ex: &PreparedExample,
        drop: &mut Dropout<'_>,
    ) -> Result<ForwardOutput> {
        let p = self.ids.map(|id| vars[id.index()]);
        let mut trace = Trace::default();

        let seqs = ex
            .features
            .iter()
            .map(|f| encode_sequence(tape, &p.embed, f, drop))
            .collect::<Result<Vec<_>>>()?;
        let stacked = tape.concat_rows(&seqs);
        let pooled_rows: Vec<Var> = seqs.iter().map(|s| tape.mean(*s, Axis::Rows)).collect();
        let pooled = tape.concat_rows(&pooled_rows);

        let node_features = if ex.graph.node_count() > 0 {
            let h0 = init_graph_features(tape, stacked, &ex.node_rows)?;
            let (stage1, _) = self.config.stage_layers();
            let mut gates = Vec::new();
            let h = run_graph_encoder(tape, &ex.graph, h0, &p.layers, stage1, drop, &mut gates)?;
            trace.gates.extend(gates.into_iter().map(|g| ("rgcn", g)));
            Some(h)
        } else {
            None
        };
        let fused = fuse_graph_context(tape, pooled, node_features, &p.fusion, drop);
        if let Some(l) = fused.lambda {
            trace.gates.push(("fusion", l));
        }

        let options = self.interact(tape, &p, ex, &seqs, drop, &mut trace)?;

        let dec = hierarchical_decode(
            tape,
            pooled,
            fused.h,
            options,
            &p.decoder,
            self.config.decoder_e2_literal,
            drop,
        )?;
        trace.gates.push(("decoder", dec.gate));

        let l_lfr = self.fact_loss(tape, stacked, ex);
        let (l_ans, loss) = match ex.label {
            Some(label) => {
                let l_ans = answer_loss(tape, dec.logits, label).map_err(|e| match e {
                    Error::Validation { rule, .. } => Error::validation(&ex.example_id, rule),
                    other => other,
                })?;
                let loss = total_loss(tape, l_ans, l_lfr, self.loss_weights());
                (Some(l_ans), Some(loss))
            }
            None => (None, None),
        };
        Ok(ForwardOutput {
            logits: dec.logits,
            pooled,
            fused: fused.h,
            options,
            node_features,
            l_ans,
            l_lfr,
            loss,
            trace,
        })
    }

    fn interact(
        &self,
        tape: &mut Tape,
        p: &ModelParams<Var>,
        ex: &PreparedExample,
        seqs: &[Var],
        drop: &mut Dropout<'_>,
        trace: &mut Trace,
    ) -> Result<Var> {
        let oq: Vec<Var> = ex
            .layouts
            .iter()
            .zip(seqs)
            .map(|(l, s)| {
                let rows: Vec<usize> = l.question.clone().chain(l.option_rows.clone()).collect();
                tape.gather_rows(*s, &rows)
            })
            .collect();

        if self.config.ablations.no_interaction {
            let pooled: Vec<Var> = oq.iter().map(|o| tape.mean(*o, Axis::Rows)).collect();
            return Ok(tape.concat_rows(&pooled));
        }

        let q_rows: Vec<usize> = ex.layouts[0].question.clone().collect();
        let q_tilde = if q_rows.is_empty() {
            tape.mean(oq[0], Axis::Rows)
        } else {
            pool_rows(tape, seqs[0], &q_rows)
        };

        let mut summaries = Vec::with_capacity(NUM_OPTIONS);
        for i in 0..NUM_OPTIONS {
            let mut partners = Vec::with_capacity(NUM_OPTIONS - 1);
            for j in (0..NUM_OPTIONS).filter(|j| *j != i) {
                partners.push(option_pair_interaction(
                    tape,
                    oq[i],
                    oq[j],
                    &p.interaction.scorer,
                    drop,
                )?);
            }
            let adv = fuse_option_correlations(tape, oq[i], &partners, q_tilde, &p.interaction)?;
            trace.gates.push(("interaction", adv.gate));
            trace.correlation_widths.push(adv.concat_width);
            let ctx_rows: Vec<usize> = ex.layouts[i].context.clone().collect();
            let ctx = (!ctx_rows.is_empty()).then(|| tape.gather_rows(seqs[i], &ctx_rows));
            let (summary, _) = coattend_with_context(tape, adv.rep, ctx, &p.coattention, drop);
            summaries.push(summary);
        }
        Ok(tape.concat_rows(&summaries))
    }

    fn fact_loss(&self, tape: &mut Tape, stacked: Var, ex: &PreparedExample) -> Var {
        if ex.triplet_rows.is_empty() {
            return fact_regularization(tape, &[]);
        }
        let groups: Vec<Vec<usize>> = ex
            .triplet_rows
            .iter()
            .flat_map(|t| t.iter().cloned())
            .collect();
        let avg = tape.constant(averaging_matrix(&groups, ex.total_rows()));
        let spans = tape.matmul(avg, stacked);
        let feats: Vec<TripletFeatures> = (0..ex.triplet_rows.len())
            .map(|k| TripletFeatures {
                subject: tape.gather_rows(spans, &[3 * k]),
                relation: tape.gather_rows(spans, &[3 * k + 1]),
                object: tape.gather_rows(spans, &[3 * k + 2]),
            })
            .collect();
        fact_regularization(tape, &feats)
    }

    /// Answer logits of one example without dropout.
    pub fn logits(&self, ex: &PreparedExample) -> Result<[f64; NUM_OPTIONS]> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.forward(&mut tape, &vars, ex, &mut Dropout::off())?;
        let z = tape.value(out.logits).data();
        Ok([z[0], z[1], z[2], z[3]])
    }

    /// Loss terms of one labelled example without dropout: `(total, l_ans, l_lfr)`.
    pub fn losses(&self, ex: &PreparedExample) -> Result<(f64, f64, f64)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.forward(&mut tape, &vars, ex, &mut Dropout::off())?;
        let loss = out
            .loss
            .ok_or_else(|| Error::validation(&ex.example_id, "example has no label"))?;
        let l_ans = out.l_ans.expect("labelled");
        Ok((
            tape.value(loss).item(),
            tape.value(l_ans).item(),
            tape.value(out.l_lfr).item(),
        ))
    }
}

/// Index of the largest logit; ties go to the lower index.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}
