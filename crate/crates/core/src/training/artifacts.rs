use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochMetrics, Prediction, TrainConfig, TrainingError};
use crate::grammar::kb_sha256;

pub const MANIFEST_FORMAT: &str = "sgformer-run";

/// Record of one run: settings, inputs, metrics and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub config: TrainConfig,
    /// Input path to SHA-256 of its bytes.
    pub datasets: BTreeMap<String, String>,
    pub knowledge_base_sha256: String,
    pub seed: u64,
    pub metrics: Vec<EpochMetrics>,
    /// Free-form results such as fold MAEs.
    pub results: BTreeMap<String, String>,
    /// Written files to SHA-256 of their bytes.
    pub artifacts: BTreeMap<String, String>,
    pub checkpoints: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &TrainConfig) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            command: command.into(),
            config: config.clone(),
            datasets: BTreeMap::new(),
            knowledge_base_sha256: kb_sha256().to_string(),
            seed: config.seed,
            metrics: Vec::new(),
            results: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            checkpoints: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn append_epoch(&mut self, m: EpochMetrics) {
        self.metrics.push(m);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, TrainingError> {
        serde_json::from_str(s).map_err(|e| TrainingError::Config(format!("manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainingError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// One tab-separated line per epoch, no header; columns as in
/// [`EpochMetrics::COLUMNS`].
pub fn write_metrics<W: Write>(mut out: W, metrics: &[EpochMetrics]) -> std::io::Result<()> {
    for m in metrics {
        writeln!(out, "{}", m.to_line())?;
    }
    Ok(())
}

pub fn read_metrics(text: &str) -> Result<Vec<EpochMetrics>, TrainingError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| EpochMetrics::from_line(l).ok_or_else(|| TrainingError::Config(format!("metrics line {} is malformed", i + 1))))
        .collect()
}

/// `id<TAB>target<TAB>prediction` with a header row; `-` for a missing target.
pub fn write_predictions<W: Write>(mut out: W, predictions: &[Prediction]) -> std::io::Result<()> {
    writeln!(out, "id\ttarget\tprediction")?;
    for p in predictions {
        let target = p.target.map_or("-".to_string(), |t| t.to_string());
        writeln!(out, "{}\t{}\t{}", p.id, target, p.prediction)?;
    }
    Ok(())
}
