//! Model and training configuration.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneMode {
    /// Embedding table, learned positions and one ReLU mixing layer.
    Trainable,
    /// Frozen per-token vectors from an embedding file, then the same mixing layer.
    Precomputed,
}

impl fmt::Display for BackboneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneMode::Trainable => "trainable",
            BackboneMode::Precomputed => "precomputed",
        })
    }
}

/// Component switches. Each flag removes or replaces one part of the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub no_global_atom: bool,
    pub no_coref: bool,
    pub single_edge_type: bool,
    pub no_interaction: bool,
    pub beta_zero: bool,
    pub entity_only: bool,
    pub no_question_marker: bool,
    pub question_only_global: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 8] = [
        "no_global_atom",
        "no_coref",
        "single_edge_type",
        "no_interaction",
        "beta_zero",
        "entity_only",
        "no_question_marker",
        "question_only_global",
    ];

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "no_global_atom" => &mut self.no_global_atom,
            "no_coref" => &mut self.no_coref,
            "single_edge_type" => &mut self.single_edge_type,
            "no_interaction" => &mut self.no_interaction,
            "beta_zero" => &mut self.beta_zero,
            "entity_only" => &mut self.entity_only,
            "no_question_marker" => &mut self.no_question_marker,
            "question_only_global" => &mut self.question_only_global,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str) -> Result<()> {
        let known = Self::NAMES.join(", ");
        let slot = self
            .slot(name.trim())
            .ok_or_else(|| Error::Config(format!("unknown ablation '{name}' (known: {known})")))?;
        *slot = true;
        Ok(())
    }

    /// Parses a comma-separated flag list; empty items are ignored.
    pub fn parse_list(list: &str) -> Result<Ablations> {
        let mut a = Ablations::default();
        for item in list.split(',').filter(|s| !s.trim().is_empty()) {
            a.set(item)?;
        }
        Ok(a)
    }

    pub fn only(name: &str) -> Result<Ablations> {
        Self::parse_list(name)
    }

    pub fn union(self, other: Ablations) -> Ablations {
        let mut out = self;
        for name in other.enabled() {
            *out.slot(name).expect("known flag") = true;
        }
        out
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        let mut copy = *self;
        Self::NAMES
            .iter()
            .copied()
            .filter(|n| *copy.slot(n).expect("known flag"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneMode,
    /// Hidden size of every model component.
    pub d: usize,
    /// Width of precomputed token vectors; ignored by the trainable backbone.
    pub embedding_dim: Option<usize>,
    pub graph_layers: usize,
    /// Layers over intra-fact edges; defaults to `ceil(graph_layers / 2)`.
    pub stage1_layers: Option<usize>,
    pub max_seq_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_proportion: f64,
    pub dropout: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub decoder_e2_literal: bool,
    pub ablations: Ablations,
}

/// Partial configuration as read from a file; unset fields fall back to the
/// preset of the selected backbone.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    backbone: Option<BackboneMode>,
    d: Option<usize>,
    embedding_dim: Option<usize>,
    graph_layers: Option<usize>,
    stage1_layers: Option<usize>,
    max_seq_len: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    warmup_proportion: Option<f64>,
    dropout: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    #[serde(default, with = "double_option")]
    grad_clip: Option<Option<f64>>,
    seed: Option<u64>,
    decoder_e2_literal: Option<bool>,
    ablations: Option<Ablations>,
}

mod double_option {
    use serde::{Deserialize, Deserializer};

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<f64>>, D::Error> {
        Option::<f64>::deserialize(d).map(Some)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::preset(BackboneMode::Trainable)
    }
}

impl ModelConfig {
    pub fn preset(backbone: BackboneMode) -> Self {
        let (d, lr) = match backbone {
            BackboneMode::Trainable => (64, 1e-3),
            BackboneMode::Precomputed => (1024, 8e-6),
        };
        ModelConfig {
            backbone,
            d,
            embedding_dim: None,
            graph_layers: 2,
            stage1_layers: None,
            max_seq_len: 384,
            epochs: 10,
            batch_size: 16,
            learning_rate: lr,
            weight_decay: 0.01,
            warmup_proportion: 0.1,
            dropout: 0.1,
            alpha: 1.0,
            beta: 0.5,
            grad_clip: Some(1.0),
            seed: 42,
            decoder_e2_literal: false,
            ablations: Ablations::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ConfigFile =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = ModelConfig::preset(file.backbone.unwrap_or(BackboneMode::Trainable));
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = file.$field { c.$field = v; } )* };
        }
        take!(
            d,
            graph_layers,
            max_seq_len,
            epochs,
            batch_size,
            learning_rate,
            weight_decay
        );
        take!(
            warmup_proportion,
            dropout,
            alpha,
            beta,
            seed,
            decoder_e2_literal,
            ablations
        );
        if file.embedding_dim.is_some() {
            c.embedding_dim = file.embedding_dim;
        }
        if file.stage1_layers.is_some() {
            c.stage1_layers = file.stage1_layers;
        }
        if let Some(clip) = file.grad_clip {
            c.grad_clip = clip;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("d", self.d),
            ("graph_layers", self.graph_layers),
            ("max_seq_len", self.max_seq_len),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if let Some(s1) = self.stage1_layers {
            if s1 > self.graph_layers {
                return bad(format!(
                    "stage1_layers {s1} exceeds graph_layers {}",
                    self.graph_layers
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.warmup_proportion) {
            return bad(format!(
                "warmup_proportion must lie in [0, 1], got {}",
                self.warmup_proportion
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if let Some(clip) = self.grad_clip {
            if clip.is_nan() || clip <= 0.0 {
                return bad(format!("grad_clip must be positive, got {clip}"));
            }
        }
        if self.max_seq_len < 6 {
            return bad("max_seq_len must be at least 6".into());
        }
        Ok(())
    }

    /// Layers in the intra-fact stage and in the cross-fact stage.
    pub fn stage_layers(&self) -> (usize, usize) {
        let s1 = self.stage1_layers.unwrap_or(self.graph_layers.div_ceil(2));
        (s1, self.graph_layers - s1)
    }

    /// The β actually applied, after the `beta_zero` switch.
    pub fn effective_beta(&self) -> f64 {
        if self.ablations.beta_zero {
            0.0
        } else {
            self.beta
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
