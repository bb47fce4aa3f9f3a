//! Fact units in Levi form, merged into a supergraph with coreference links
//! and a global atom.
//!
//! Each triplet (E1, P, E2) becomes three nodes. Edges point towards or away
//! from the predicate node:
//!
//! ```text
//! E1 --default-in--> P --default-out--> E2
//! E1 <--reverse-in-- P <--reverse-out-- E2
//! ```
//!
//! plus a self edge on every node. Coreferent entity nodes are joined in both
//! directions, and the optional global atom is joined to and from every node.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::config::Ablations;
use crate::corpus::{CorefMention, Example};
use crate::extract::{Span, Triplet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Entity,
    Predicate,
    Global,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeAtom {
    pub node_id: usize,
    pub kind: NodeKind,
    pub span: Option<Span>,
    pub surface: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    DefaultIn,
    DefaultOut,
    ReverseIn,
    ReverseOut,
    SelfLoop,
    Coref,
    Global,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::DefaultIn,
        Relation::DefaultOut,
        Relation::ReverseIn,
        Relation::ReverseOut,
        Relation::SelfLoop,
        Relation::Coref,
        Relation::Global,
    ];

    /// Relations that live inside a single fact unit.
    pub fn is_intra_fact(self) -> bool {
        !matches!(self, Relation::Coref | Relation::Global)
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::DefaultIn => "default-in",
            Relation::DefaultOut => "default-out",
            Relation::ReverseIn => "reverse-in",
            Relation::ReverseOut => "reverse-out",
            Relation::SelfLoop => "self",
            Relation::Coref => "coref",
            Relation::Global => "global",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypedEdge {
    pub src: usize,
    pub dst: usize,
    pub rel: Relation,
}

impl TypedEdge {
    pub fn new(src: usize, dst: usize, rel: Relation) -> Self {
        TypedEdge { src, dst, rel }
    }
}

/// One fact unit with node ids local to the unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactSubgraph {
    pub nodes: Vec<NodeAtom>,
    pub edges: Vec<TypedEdge>,
}

/// Levi form of a triplet: subject, predicate and object nodes (ids 0, 1, 2)
/// with four directional edges and three self edges.
pub fn build_fact_levi(triplet: &Triplet) -> FactSubgraph {
    let node = |id, kind, phrase: &crate::extract::Phrase| NodeAtom {
        node_id: id,
        kind,
        span: Some(phrase.span),
        surface: phrase.text.clone(),
    };
    let nodes = vec![
        node(0, NodeKind::Entity, &triplet.subject),
        node(1, NodeKind::Predicate, &triplet.predicate),
        node(2, NodeKind::Entity, &triplet.object),
    ];
    let edges = vec![
        TypedEdge::new(0, 1, Relation::DefaultIn),
        TypedEdge::new(1, 2, Relation::DefaultOut),
        TypedEdge::new(1, 0, Relation::ReverseIn),
        TypedEdge::new(2, 1, Relation::ReverseOut),
        TypedEdge::new(0, 0, Relation::SelfLoop),
        TypedEdge::new(1, 1, Relation::SelfLoop),
        TypedEdge::new(2, 2, Relation::SelfLoop),
    ];
    FactSubgraph { nodes, edges }
}

/// Entity-only unit: subject and object nodes with self edges and no
/// predicate node. Used when fact units are replaced by plain entities.
pub fn build_entity_pair(triplet: &Triplet) -> FactSubgraph {
    let node = |id, phrase: &crate::extract::Phrase| NodeAtom {
        node_id: id,
        kind: NodeKind::Entity,
        span: Some(phrase.span),
        surface: phrase.text.clone(),
    };
    FactSubgraph {
        nodes: vec![node(0, &triplet.subject), node(1, &triplet.object)],
        edges: vec![
            TypedEdge::new(0, 0, Relation::SelfLoop),
            TypedEdge::new(1, 1, Relation::SelfLoop),
        ],
    }
}

/// A coreference mention located in a specific sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentenceMention {
    pub sent_id: u32,
    pub mention: CorefMention,
}

pub fn example_mentions(example: &Example) -> Vec<SentenceMention> {
    example
        .sentences()
        .flat_map(|(_, s)| {
            s.coref_mentions.iter().map(move |m| SentenceMention {
                sent_id: s.sent_id,
                mention: *m,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Supergraph {
    pub nodes: Vec<NodeAtom>,
    pub edges: Vec<TypedEdge>,
    /// Member node ids of each fact unit, in fact order.
    pub fact_index: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphStats {
    pub facts: usize,
    pub nodes: usize,
    pub entity_nodes: usize,
    pub predicate_nodes: usize,
    pub edges: usize,
    pub fact_edges: usize,
    pub coref_edges: usize,
    pub global_edges: usize,
}

impl Supergraph {
    pub fn empty() -> Self {
        Supergraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            fact_index: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn global_node(&self) -> Option<usize> {
        self.nodes.iter().position(|n| n.kind == NodeKind::Global)
    }

    pub fn stats(&self) -> GraphStats {
        let count_kind = |k| self.nodes.iter().filter(|n| n.kind == k).count();
        let count_rel =
            |f: &dyn Fn(Relation) -> bool| self.edges.iter().filter(|e| f(e.rel)).count();
        GraphStats {
            facts: self.fact_index.len(),
            nodes: self.nodes.len(),
            entity_nodes: count_kind(NodeKind::Entity),
            predicate_nodes: count_kind(NodeKind::Predicate),
            edges: self.edges.len(),
            fact_edges: count_rel(&|r| r.is_intra_fact()),
            coref_edges: count_rel(&|r| r == Relation::Coref),
            global_edges: count_rel(&|r| r == Relation::Global),
        }
    }

    /// GraphViz rendering. Edges are ordered by (src, dst, rel).
    pub fn to_dot(&self) -> String {
        if self.nodes.is_empty() && self.edges.is_empty() {
            return "digraph S { }".to_string();
        }
        let mut out = String::from("digraph S {\n");
        for n in &self.nodes {
            let kind = match n.kind {
                NodeKind::Entity => "entity",
                NodeKind::Predicate => "predicate",
                NodeKind::Global => "global",
            };
            writeln!(
                out,
                "  n{} [label=\"{}\", kind=\"{}\"];",
                n.node_id,
                escape(&n.surface),
                kind
            )
            .unwrap();
        }
        let mut edges = self.edges.clone();
        edges.sort();
        for e in edges {
            writeln!(out, "  n{} -> n{} [label=\"{}\"];", e.src, e.dst, e.rel).unwrap();
        }
        out.push('}');
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Renders `graph` as DOT text; see [`Supergraph::to_dot`].
pub fn export_dot(graph: &Supergraph) -> String {
    graph.to_dot()
}

/// Unions fact units, links entity nodes that overlap mentions of the same
/// coreference cluster (within the mention's sentence) and optionally adds
/// the global atom as the last node.
pub fn assemble_supergraph(
    facts: &[FactSubgraph],
    mentions: &[SentenceMention],
    include_global: bool,
) -> Supergraph {
    let mut graph = Supergraph::empty();
    for fact in facts {
        let base = graph.nodes.len();
        let mut members = Vec::with_capacity(fact.nodes.len());
        for n in &fact.nodes {
            let id = base + n.node_id;
            graph.nodes.push(NodeAtom {
                node_id: id,
                ..n.clone()
            });
            members.push(id);
        }
        graph.edges.extend(
            fact.edges
                .iter()
                .map(|e| TypedEdge::new(base + e.src, base + e.dst, e.rel)),
        );
        graph.fact_index.push(members);
    }

    let mut clusters: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for m in mentions {
        for n in &graph.nodes {
            let Some(span) = n.span else { continue };
            if n.kind == NodeKind::Entity
                && span.sent_id == m.sent_id
                && span.range().overlaps(&m.mention.span)
            {
                clusters
                    .entry(m.mention.cluster)
                    .or_default()
                    .insert(n.node_id);
            }
        }
    }
    let mut pairs = BTreeSet::new();
    for members in clusters.values() {
        let members: Vec<usize> = members.iter().copied().collect();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                pairs.insert((a, b));
            }
        }
    }
    for (a, b) in pairs {
        graph.edges.push(TypedEdge::new(a, b, Relation::Coref));
        graph.edges.push(TypedEdge::new(b, a, Relation::Coref));
    }

    if include_global {
        let g = graph.nodes.len();
        graph.nodes.push(NodeAtom {
            node_id: g,
            kind: NodeKind::Global,
            span: None,
            surface: "<global>".to_string(),
        });
        for n in 0..g {
            graph.edges.push(TypedEdge::new(g, n, Relation::Global));
            graph.edges.push(TypedEdge::new(n, g, Relation::Global));
        }
    }
    graph
}

/// Which fact-unit construction to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphOptions {
    pub include_global: bool,
    pub include_coref: bool,
    pub entity_only: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            include_global: true,
            include_coref: true,
            entity_only: false,
        }
    }
}

impl GraphOptions {
    /// The construction a model with these ablations trains on.
    pub fn from_ablations(ab: &Ablations) -> Self {
        GraphOptions {
            include_global: !ab.no_global_atom,
            include_coref: !ab.no_coref,
            entity_only: ab.entity_only,
        }
    }
}

/// Builds the supergraph of an example from its extracted triplets.
pub fn build_supergraph(example: &Example, triplets: &[Triplet], opts: GraphOptions) -> Supergraph {
    let facts: Vec<FactSubgraph> = triplets
        .iter()
        .map(|t| {
            if opts.entity_only {
                build_entity_pair(t)
            } else {
                build_fact_levi(t)
            }
        })
        .collect();
    let mentions = if opts.include_coref {
        example_mentions(example)
    } else {
        Vec::new()
    };
    assemble_supergraph(&facts, &mentions, opts.include_global)
}
