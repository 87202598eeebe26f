use std::collections::BTreeMap;
use std::path::Path;

use super::{TrainConfig, TrainingError};
use crate::data::CrystalRecord;
use crate::embedding::{ElementEmbeddingTable, TokenVocabulary};
use crate::encoder::{Checkpoint, EncoderState, ModelInput};
use crate::objectives::TargetScaler;

const KEY_VOCAB: &str = "vocabulary";
const KEY_ELEMENTS: &str = "elements";
const KEY_ELEMENT_TABLE: &str = "element_table";
const KEY_LATTICE_SCALER: &str = "lattice_scaler";
const KEY_TARGET_SCALER: &str = "target_scaler";
const KEY_CONFIG: &str = "train_config";
const KEY_STAGE: &str = "stage";

/// Element feature table together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementSet {
    pub table: ElementEmbeddingTable,
    /// `Some(seed)` for the seeded synthetic table, `None` for a loaded file.
    pub synthetic_seed: Option<u64>,
}

impl ElementSet {
    pub fn synthetic(seed: u64) -> Self {
        ElementSet {
            table: ElementEmbeddingTable::synthetic(seed),
            synthetic_seed: Some(seed),
        }
    }

    pub fn load(path: &Path) -> Result<Self, TrainingError> {
        Ok(ElementSet {
            table: ElementEmbeddingTable::load(path)?,
            synthetic_seed: None,
        })
    }

    fn write(&self, meta: &mut BTreeMap<String, String>) {
        match self.synthetic_seed {
            Some(seed) => {
                meta.insert(KEY_ELEMENTS.into(), format!("synthetic:{seed}"));
            }
            None => {
                meta.insert(KEY_ELEMENTS.into(), "inline".into());
                meta.insert(KEY_ELEMENT_TABLE.into(), self.table.to_text());
            }
        }
    }

    fn read(meta: &BTreeMap<String, String>) -> Result<Self, TrainingError> {
        let source = meta.get(KEY_ELEMENTS).ok_or_else(|| missing(KEY_ELEMENTS))?;
        if let Some(seed) = source.strip_prefix("synthetic:") {
            let seed = seed.parse().map_err(|_| TrainingError::Mismatch(format!("bad element source `{source}`")))?;
            return Ok(ElementSet::synthetic(seed));
        }
        let text = meta.get(KEY_ELEMENT_TABLE).ok_or_else(|| missing(KEY_ELEMENT_TABLE))?;
        Ok(ElementSet {
            table: ElementEmbeddingTable::parse(text)?,
            synthetic_seed: None,
        })
    }
}

fn missing(key: &str) -> TrainingError {
    TrainingError::Mismatch(format!("checkpoint metadata lacks `{key}`"))
}

/// Encoder weights plus everything needed to tokenize inputs and map
/// outputs back to physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub state: EncoderState<f32>,
    pub vocab: TokenVocabulary,
    pub elements: ElementSet,
    pub lattice_scaler: Option<TargetScaler>,
    pub target_scaler: Option<TargetScaler>,
    pub config: TrainConfig,
    /// `init`, `pretrained` or `finetuned`.
    pub stage: String,
}

impl ModelBundle {
    pub fn new(vocab: TokenVocabulary, elements: ElementSet, config: &TrainConfig) -> Result<Self, TrainingError> {
        let enc = config.encoder_config(vocab.len(), vocab.layout().sequence_len())?;
        Ok(ModelBundle {
            state: EncoderState::new(enc, config.seed)?,
            vocab,
            elements,
            lattice_scaler: None,
            target_scaler: None,
            config: config.clone(),
            stage: "init".into(),
        })
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(self.state.clone(), step, self.config.seed);
        let meta = &mut ck.metadata;
        meta.insert(KEY_VOCAB.into(), self.vocab.to_text());
        self.elements.write(meta);
        if let Some(s) = &self.lattice_scaler {
            meta.insert(KEY_LATTICE_SCALER.into(), s.to_json());
        }
        if let Some(s) = &self.target_scaler {
            meta.insert(KEY_TARGET_SCALER.into(), s.to_json());
        }
        meta.insert(KEY_CONFIG.into(), self.config.to_toml());
        meta.insert(KEY_STAGE.into(), self.stage.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainingError> {
        let meta = &ck.metadata;
        let vocab = TokenVocabulary::from_text(meta.get(KEY_VOCAB).ok_or_else(|| missing(KEY_VOCAB))?)?;
        let enc = ck.state.config();
        if enc.vocab_size != vocab.len() {
            return Err(TrainingError::Mismatch(format!(
                "checkpoint expects {} tokens, its vocabulary has {}",
                enc.vocab_size,
                vocab.len()
            )));
        }
        if vocab.layout().sequence_len() > enc.max_len {
            return Err(TrainingError::Mismatch(format!(
                "vocabulary sequences of length {} exceed the encoder maximum {}",
                vocab.layout().sequence_len(),
                enc.max_len
            )));
        }
        let scaler = |key: &str| -> Result<Option<TargetScaler>, TrainingError> {
            meta.get(key)
                .map(|s| TargetScaler::from_json(s).map_err(TrainingError::Mismatch))
                .transpose()
        };
        let config = match meta.get(KEY_CONFIG) {
            Some(t) => TrainConfig::from_toml(t)?,
            None => TrainConfig::default(),
        };
        Ok(ModelBundle {
            state: ck.state.clone(),
            vocab,
            elements: ElementSet::read(meta)?,
            lattice_scaler: scaler(KEY_LATTICE_SCALER)?,
            target_scaler: scaler(KEY_TARGET_SCALER)?,
            config,
            stage: meta.get(KEY_STAGE).cloned().unwrap_or_else(|| "init".into()),
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainingError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn inputs(&self, records: &[CrystalRecord]) -> Result<Vec<ModelInput>, TrainingError> {
        records
            .iter()
            .map(|r| r.to_model_input(&self.vocab, &self.elements.table).map_err(TrainingError::from))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{build_vocabulary, BinSpec, InfoLayout};

    #[test]
    fn checkpoint_round_trip_keeps_companions() {
        let vocab = build_vocabulary(InfoLayout::none(), BinSpec::default(), &[]);
        let mut cfg = TrainConfig::default();
        cfg.seed = 4;
        let mut b = ModelBundle::new(vocab, ElementSet::synthetic(2), &cfg).unwrap();
        b.target_scaler = Some(TargetScaler::fit_scalar(&[1.0, 2.0, 4.0]).unwrap());
        b.stage = "finetuned".into();
        let ck = b.to_checkpoint(17);
        let back = ModelBundle::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, b);

        let text = b.elements.table.to_text();
        let inline = ElementSet {
            table: ElementEmbeddingTable::parse(&text).unwrap(),
            synthetic_seed: None,
        };
        let mut meta = BTreeMap::new();
        inline.write(&mut meta);
        assert_eq!(ElementSet::read(&meta).unwrap(), inline);
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let vocab = build_vocabulary(InfoLayout::none(), BinSpec::default(), &[]);
        let b = ModelBundle::new(vocab, ElementSet::synthetic(0), &TrainConfig::default()).unwrap();
        let mut ck = b.to_checkpoint(0);
        let other = build_vocabulary(InfoLayout::mof(), BinSpec::default(), &[]);
        ck.metadata.insert(KEY_VOCAB.into(), other.to_text());
        assert!(matches!(ModelBundle::from_checkpoint(&ck), Err(TrainingError::Mismatch(_))));
        ck.metadata.remove(KEY_VOCAB);
        assert!(ModelBundle::from_checkpoint(&ck).is_err());
    }
}
