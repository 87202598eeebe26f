//! Token vocabulary, crystal tokenization and embedded-input assembly.
//!
//! A crystal becomes the fixed-length sequence
//! `[CLS]`, 12 space-group tokens, the configured informatics tokens and 20
//! formula slots. Formula slots carry element labels in the id sequence; their
//! embedding rows come from the element table and a learned projection rather
//! than from the token table.

mod bins;
mod elements;
mod tokenize;
mod vocab;

use thiserror::Error;

use crate::grammar::GrammarError;

pub use bins::{quantize_informatics, BinSpec, NumericField, DEFAULT_ATOM_CAP, PORES_BINS, VOLUME_BINS};
pub use elements::{assemble_input, embed_formula, project_formula_row, ElementEmbeddingTable, EmbeddedInput, ELEMENT_DIM, FORMULA_ROW_DIM};
pub use tokenize::{tokenize_crystal, InfoField, InfoLayout, InformaticsFields, SlotKind, TokenSequence};
pub use vocab::{build_vocabulary, Category, TokenVocabulary, CLS_ID, EMPTY_ID, MASK_ID, PAD_ID, RESERVED, UNK_ID};

/// Number of space-group positions after `[CLS]`.
pub const SG_TOKENS: usize = 12;
/// Number of formula slots at the end of every sequence.
pub const FORMULA_SLOTS: usize = 20;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("record supplies informatics field `{0}` that the vocabulary layout does not include")]
    LayoutMismatch(&'static str),
    #[error("{field} value {value} is not finite")]
    NonFinite { field: &'static str, value: f64 },
    #[error("{field} value {value} is outside its domain ({domain})")]
    OutOfDomain {
        field: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("no element embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("element embedding line {line}: {reason}")]
    EmbeddingFile { line: usize, reason: String },
    #[error("vocabulary file line {line}: {reason}")]
    VocabularyFile { line: usize, reason: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
