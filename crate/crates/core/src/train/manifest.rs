use serde::{Deserialize, Serialize};

use crate::config::{BackboneMode, ModelConfig};

/// Summary of a run's configuration, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub backbone: BackboneMode,
    pub d: usize,
    pub layers: usize,
    pub stage_layers: [usize; 2],
    pub seed: u64,
    pub ablations: Vec<String>,
    pub config_hash: String,
    pub num_parameters: usize,
    pub train_examples: usize,
}

impl RunManifest {
    pub fn new(config: &ModelConfig, num_parameters: usize, train_examples: usize) -> Self {
        let (s1, s2) = config.stage_layers();
        RunManifest {
            backbone: config.backbone,
            d: config.d,
            layers: config.graph_layers,
            stage_layers: [s1, s2],
            seed: config.seed,
            ablations: config
                .ablations
                .enabled()
                .into_iter()
                .map(String::from)
                .collect(),
            config_hash: config.hash(),
            num_parameters,
            train_examples,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
