//! Run-directory layout and the JSON fragments each command leaves behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wmnet::attacks::AttackResult;
use wmnet::dist::Histogram;
use wmnet::nn::TrainHistory;
use wmnet::{Message, Occupancy};

use crate::error::CliError;

pub const KEY: &str = "key.json";
pub const BASELINE_MODEL: &str = "baseline.wmns";
pub const BASELINE: &str = "baseline.json";
pub const WATERMARKED_MODEL: &str = "watermarked.wmns";
pub const WATERMARKED: &str = "watermarked.json";
pub const ATTACKS: &str = "attacks.json";
pub const RESULTS_CSV: &str = "results.csv";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFragment {
    pub setting: String,
    pub ter: f64,
    /// Standard deviation of every weight layer of the trained baseline.
    pub layer_sigma: BTreeMap<String, f64>,
    pub history: TrainHistory,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkedFragment {
    pub setting: String,
    pub message: Message,
    pub message_hex: String,
    pub ter: f64,
    pub ber: f64,
    pub occupancy: Occupancy,
    pub history: TrainHistory,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackFragment {
    pub setting: String,
    pub rows: Vec<AttackResult>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSecrecy {
    pub layer: String,
    pub std_wm: f64,
    pub std_non_wm: f64,
    pub std_ratio: f64,
    pub kl_empirical_nats: f64,
    pub kl_closed_form_nats: f64,
    pub indistinguishable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub baseline_seconds: f64,
    pub watermarked_seconds: f64,
    pub attacks_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub setting: String,
    pub baseline_ter: f64,
    pub watermarked_ter: f64,
    pub occupancy: Occupancy,
    pub ber_pre_attack: f64,
    pub attacks: Vec<AttackResult>,
    pub secrecy: Vec<LayerSecrecy>,
    pub skipped_layers: Vec<String>,
    pub indistinguishable: bool,
    pub baseline_history: TrainHistory,
    pub watermarked_history: TrainHistory,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramDump {
    pub layer: String,
    #[serde(flatten)]
    pub histogram: Histogram,
}

pub fn path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("fragments serialise");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed {}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}
