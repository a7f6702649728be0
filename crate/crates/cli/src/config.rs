//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wmnet::attacks::{Attack, QuantScope};
use wmnet::nn::{build_model, gen_dataset, Dataset, DatasetKind, NetworkSpec, TrainConfig};
use wmnet::{MasterSeed, ModelWeights};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Short network name used in the setting label.
    pub network_label: String,
    pub master_seed: MasterSeed,
    pub out_dir: PathBuf,
    pub network: NetworkSpec,
    pub dataset: DatasetSpec,
    pub plan: PlanSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub classes: usize,
    pub per_class: usize,
    pub noise: f64,
    pub seed: u64,
    /// Lift the 2-D points to this many dimensions (see `Dataset::lift`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lift_dim: Option<usize>,
    #[serde(default)]
    pub lift_seed: u64,
}

impl DatasetSpec {
    pub fn generate(&self) -> wmnet::Result<Dataset> {
        let data = gen_dataset(self.kind, self.classes, self.per_class, self.noise, self.seed)?;
        match self.lift_dim {
            Some(dim) => data.lift(dim, self.lift_seed),
            None => Ok(data),
        }
    }

    pub fn label(&self) -> String {
        let kind = match self.kind {
            DatasetKind::Blobs => "Blobs",
            DatasetKind::Spirals => "Spirals",
            DatasetKind::Rings => "Rings",
        };
        format!("{kind}{}", self.classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub payload_l: usize,
    pub spreading_s: usize,
    pub strength_c: f64,
    pub host_layers: Vec<String>,
}

/// One `[[attacks]]` entry; list-valued parameters expand into a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    Identity,
    Prune {
        fractions: Vec<f64>,
    },
    Quantize {
        bits: Vec<u32>,
        #[serde(default)]
        scope: QuantScope,
    },
    Cutoff {
        /// Defaults to the plan's host layers.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        layers: Option<Vec<String>>,
        thresholds: Vec<f64>,
    },
    FineTune {
        train: TrainConfig,
    },
    Transfer {
        dataset: DatasetSpec,
        train: TrainConfig,
    },
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |msg: String| Err(CliError::Usage(msg));
        if self.schema_version != SCHEMA_VERSION {
            return usage(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        self.network.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let layers = self.network.layer_names();
        if self.plan.host_layers.is_empty() {
            return usage("plan.host_layers is empty".into());
        }
        let known = |name: &String| layers.contains(name);
        if let Some(bad) = self.plan.host_layers.iter().find(|n| !known(n)) {
            return usage(format!("host layer `{bad}` is not in the network (layers: {})", layers.join(", ")));
        }
        let input = self.dataset.lift_dim.unwrap_or(2);
        if input != self.network.input_dim {
            return usage(format!("dataset has {input} features, network expects {}", self.network.input_dim));
        }
        if self.dataset.classes > self.network.classes {
            return usage(format!("dataset has {} classes, network has {}", self.dataset.classes, self.network.classes));
        }
        for spec in &self.attacks {
            match spec {
                AttackSpec::Cutoff { layers: Some(names), .. } => {
                    if let Some(bad) = names.iter().find(|n| !known(n)) {
                        return usage(format!("cutoff layer `{bad}` is not in the network"));
                    }
                }
                AttackSpec::FineTune { train } => train.validate().map_err(|e| CliError::Usage(e.to_string()))?,
                AttackSpec::Transfer { dataset, train } => {
                    train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                    if dataset.lift_dim.unwrap_or(2) != self.network.input_dim {
                        return usage("transfer dataset dimension differs from the network input".into());
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// `Network-Task-l-C-S`.
    pub fn setting_label(&self) -> String {
        format!(
            "{}-{}-{}-{}-{}",
            self.network_label,
            self.dataset.label(),
            self.plan.payload_l,
            self.plan.strength_c,
            self.plan.spreading_s
        )
    }

    pub fn initial_model(&self) -> wmnet::Result<ModelWeights> {
        build_model(&self.network)
    }

    /// Expands the attack list into individual attacks, in config order.
    pub fn expand_attacks(&self) -> wmnet::Result<Vec<Attack>> {
        let mut out = Vec::new();
        for spec in &self.attacks {
            match spec {
                AttackSpec::Identity => out.push(Attack::Identity),
                AttackSpec::Prune { fractions } => {
                    out.extend(fractions.iter().map(|&fraction| Attack::Prune { fraction }))
                }
                AttackSpec::Quantize { bits, scope } => {
                    out.extend(bits.iter().map(|&bits| Attack::Quantize { bits, scope: *scope }))
                }
                AttackSpec::Cutoff { layers, thresholds } => {
                    let layers = layers.clone().unwrap_or_else(|| self.plan.host_layers.clone());
                    out.extend(thresholds.iter().map(|&threshold| Attack::Cutoff { layers: layers.clone(), threshold }))
                }
                AttackSpec::FineTune { train } => out.push(Attack::FineTune { cfg: train.clone() }),
                AttackSpec::Transfer { dataset, train } => out.push(Attack::Transfer {
                    data: Box::new(dataset.generate()?),
                    new_classes: dataset.classes,
                    cfg: train.clone(),
                }),
            }
        }
        Ok(out)
    }
}
