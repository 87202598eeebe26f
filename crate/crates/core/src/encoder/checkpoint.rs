use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::EncoderState;
use super::{EncoderConfig, EncoderError};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_FORMAT: &str = "sgformer-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in values.
    pub offset: usize,
}

/// First line of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: EncoderConfig,
    pub params: Vec<ParamEntry>,
    pub step: u64,
    pub seed: u64,
    pub blob_sha256: String,
    pub metadata: BTreeMap<String, String>,
}

/// Encoder parameters plus run bookkeeping.
///
/// On disk: a one-line JSON header, a newline, then every parameter as
/// little-endian `f32` in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: EncoderState<f32>,
    pub step: u64,
    pub seed: u64,
    /// Free-form companions such as the vocabulary and target scalers.
    pub metadata: BTreeMap<String, String>,
}

fn err(msg: impl Into<String>) -> EncoderError {
    EncoderError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(state: EncoderState<f32>, step: u64, seed: u64) -> Self {
        Checkpoint {
            state,
            step,
            seed,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let store = self.state.store();
        let mut blob = Vec::with_capacity(store.scalar_count() * 4);
        let mut params = Vec::with_capacity(store.len());
        let mut offset = 0;
        for id in store.ids() {
            let v = store.value(id);
            params.push(ParamEntry {
                name: store.name(id).to_string(),
                shape: v.shape().to_vec(),
                offset,
            });
            offset += v.len();
            for x in v.data() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.state.config().clone(),
            params,
            step: self.step,
            seed: self.seed,
            blob_sha256: hex::encode(Sha256::digest(&blob)),
            metadata: self.metadata.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.extend_from_slice(&blob);
        out
    }

    pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8]), EncoderError> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| err("missing header line"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| err(format!("bad header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(err(format!("unknown format `{}`", header.format)));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {}", header.version)));
        }
        Ok((header, &bytes[nl + 1..]))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EncoderError> {
        let (header, blob) = Self::read_header(bytes)?;
        if hex::encode(Sha256::digest(blob)) != header.blob_sha256 {
            return Err(err("blob checksum mismatch"));
        }
        if blob.len() % 4 != 0 {
            return Err(err("blob length is not a multiple of 4"));
        }
        let values: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut store = ParamStore::new();
        let mut expected_offset = 0;
        for p in &header.params {
            let n: usize = p.shape.iter().product();
            if p.offset != expected_offset || p.offset + n > values.len() {
                return Err(err(format!("parameter {} has inconsistent offset", p.name)));
            }
            store.add(p.name.clone(), Tensor::from_vec(&p.shape, values[p.offset..p.offset + n].to_vec())?);
            expected_offset += n;
        }
        if expected_offset != values.len() {
            return Err(err("blob has trailing values"));
        }
        let state = EncoderState::from_store(header.config, store)?;
        Ok(Checkpoint {
            state,
            step: header.step,
            seed: header.seed,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
