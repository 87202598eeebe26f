//! Transformer encoder over embedded crystal sequences.
//!
//! Post-norm blocks (self-attention, residual, layer norm, GELU feed-forward,
//! residual, layer norm), `[CLS]` pooling, prediction-head parameters, attention
//! maps and checkpoints.

mod attention;
mod checkpoint;
mod model;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingError;
use crate::tensor::TensorError;

pub use attention::{scaled_dot_attention, AttentionExport, AttentionMap, LayerAttention, LayerSelector};
pub use checkpoint::{Checkpoint, CheckpointHeader, ParamEntry, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use model::{is_decay_exempt, EncoderState, ForwardOutput, HeadParams, LayerParams, MlmParams, Mode, ModelInput, LPP_OUTPUTS};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("sequence length {len} exceeds the configured maximum {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("batch sequences have different lengths")]
    RaggedBatch,
    #[error("empty batch")]
    EmptyBatch,
    #[error("attention recording was disabled for this forward pass")]
    RecordingDisabled,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub attention_dropout: f64,
    pub hidden_dropout: f64,
    pub head_dropout: f64,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl EncoderConfig {
    fn sized(n_layers: usize, n_heads: usize, d_model: usize, vocab_size: usize, max_len: usize) -> Self {
        EncoderConfig {
            n_layers,
            n_heads,
            d_model,
            d_ff: 4 * d_model,
            attention_dropout: 0.1,
            hidden_dropout: 0.1,
            head_dropout: 0.1,
            max_len,
            vocab_size,
        }
    }

    /// 2 layers, 4 heads, width 64.
    pub fn desk(vocab_size: usize, max_len: usize) -> Self {
        Self::sized(2, 4, 64, vocab_size, max_len)
    }

    /// 8 layers, 12 heads, width 768.
    pub fn full(vocab_size: usize, max_len: usize) -> Self {
        Self::sized(8, 12, 768, vocab_size, max_len)
    }

    pub fn preset(name: &str, vocab_size: usize, max_len: usize) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk(vocab_size, max_len)),
            "full" => Some(Self::full(vocab_size, max_len)),
            _ => None,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn without_dropout(mut self) -> Self {
        self.attention_dropout = 0.0;
        self.hidden_dropout = 0.0;
        self.head_dropout = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let dims = [
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(EncoderError::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(EncoderError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        for (name, p) in [
            ("attention_dropout", self.attention_dropout),
            ("hidden_dropout", self.hidden_dropout),
            ("head_dropout", self.head_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(EncoderError::Config(format!("{name} {p} must lie in [0, 1)")));
            }
        }
        Ok(())
    }
}
