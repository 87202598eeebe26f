//! Optimizer, learning-rate schedule, pretraining and finetuning loops,
//! evaluation and run artifacts.
//!
//! Every optimizer step draws masking and dropout randomness from its own
//! ChaCha8 stream keyed by `(seed, step)`, and every epoch shuffles with a
//! stream keyed by `(seed, epoch)`, so a run is reproducible from its seed.

mod artifacts;
mod bundle;
mod config;
mod loops;
mod optimizer;
mod schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::embedding::EmbeddingError;
use crate::encoder::EncoderError;
use crate::objectives::ObjectiveError;
use crate::tensor::TensorError;

pub use artifacts::{read_metrics, write_metrics, write_predictions, RunManifest, MANIFEST_FORMAT};
pub use bundle::{ElementSet, ModelBundle};
pub use config::{TrainConfig, CONFIG_VERSION};
pub use loops::{
    attention_maps, cls_embeddings, corpus_vocabulary, evaluate, finetune, fold_plan, masked_position_accuracy,
    mean_absolute_error, predict, predict_lattice, predict_values, pretrain, pretrain_bundle, stream_rng,
    train_regressor, Evaluation, FinetuneOutcome, FoldOutcome, Labelled, Prediction, PretrainOutcome, RegressorRun,
};
pub use optimizer::{AdamW, AdamWSettings};
pub use schedule::{lr_at, ScheduleSpec};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("optimizer step requested before a backward pass")]
    NoGradients,
    #[error("step {step} is beyond the schedule's {total} steps")]
    StepBeyondSchedule { step: u64, total: u64 },
    #[error("{0} is empty")]
    EmptySplit(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("incompatible model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TrainingError {
    /// True for errors caused by bad inputs or settings rather than by the
    /// run itself.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            TrainingError::Io(_) | TrainingError::Tensor(_) | TrainingError::NoGradients | TrainingError::StepBeyondSchedule { .. }
        )
    }
}

/// Returned by epoch observers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// One line of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub fold: Option<usize>,
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Rate of the epoch's last step.
    pub lr: f64,
    pub loss: f64,
    pub mlm_loss: Option<f64>,
    pub lpp_loss: Option<f64>,
    /// Masked-token accuracy over the epoch's training batches.
    pub mlm_accuracy: Option<f64>,
    /// Running training MAE in target units (dropout active).
    pub train_mae: Option<f64>,
    pub val_mae: Option<f64>,
}

impl EpochMetrics {
    pub const COLUMNS: [&'static str; 10] = [
        "fold",
        "epoch",
        "step",
        "lr",
        "loss",
        "mlm_loss",
        "lpp_loss",
        "mlm_accuracy",
        "train_mae",
        "val_mae",
    ];

    /// Tab-separated, `-` for absent values.
    pub fn to_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
        [
            self.fold.map_or("-".to_string(), |f| f.to_string()),
            self.epoch.to_string(),
            self.step.to_string(),
            self.lr.to_string(),
            self.loss.to_string(),
            opt(self.mlm_loss),
            opt(self.lpp_loss),
            opt(self.mlm_accuracy),
            opt(self.train_mae),
            opt(self.val_mae),
        ]
        .join("\t")
    }

    pub fn from_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != Self::COLUMNS.len() {
            return None;
        }
        let opt = |s: &str| if s == "-" { Some(None) } else { s.parse().ok().map(Some) };
        Some(EpochMetrics {
            fold: if f[0] == "-" { None } else { Some(f[0].parse().ok()?) },
            epoch: f[1].parse().ok()?,
            step: f[2].parse().ok()?,
            lr: f[3].parse().ok()?,
            loss: f[4].parse().ok()?,
            mlm_loss: opt(f[5])?,
            lpp_loss: opt(f[6])?,
            mlm_accuracy: opt(f[7])?,
            train_mae: opt(f[8])?,
            val_mae: opt(f[9])?,
        })
    }
}
