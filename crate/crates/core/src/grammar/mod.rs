//! Crystallographic grammar: the 230-space-group knowledge base, Hermann-Mauguin
//! symbol splitting, crystal-system lattice rules and the stoichiometric formula
//! parser.

mod elements;
mod formula;
mod hm_symbol;
mod lattice;
mod space_group;

use thiserror::Error;

pub use elements::{atomic_number, is_element, ELEMENT_SYMBOLS, MAX_ATOMIC_NUMBER};
pub use formula::{parse_formula, FormulaComposition, MAX_FORMULA_ELEMENTS};
pub use hm_symbol::{split_hm_symbol, SplitSymbol};
pub use lattice::{lattice_constraints, LatticeConstraints, LatticeParameters, LengthAxis};
pub use space_group::{
    crystal_system_of, lookup_space_group, space_groups, CrystalSystem, Polarity,
    kb_sha256, SpaceGroupRecord, SpaceGroupTable, Symmetry, KB_TEXT,
};

/// Marker stored in an unused directional-symbol slot.
pub const EMPTY_SLOT: &str = "";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrammarError {
    #[error("invalid space group number {0}: expected 1-230")]
    InvalidSpaceGroup(i64),
    #[error("cannot parse Hermann-Mauguin symbol {symbol:?}: unexpected {found:?} at offset {offset}")]
    SymbolChar {
        symbol: String,
        offset: usize,
        found: char,
    },
    #[error("cannot parse Hermann-Mauguin symbol {symbol:?}: {reason}")]
    SymbolShape { symbol: String, reason: String },
    #[error("unknown element symbol {0:?}")]
    UnknownElement(String),
    #[error("unbalanced parentheses in formula {formula:?} at offset {offset}")]
    UnbalancedParentheses { formula: String, offset: usize },
    #[error("unexpected {found:?} at offset {offset} in formula {formula:?}")]
    FormulaSyntax {
        formula: String,
        offset: usize,
        found: char,
    },
    #[error("formula {0:?} has zero total count")]
    ZeroCount(String),
    #[error("formula is empty")]
    EmptyFormula,
    #[error("formula {formula:?} has {count} distinct elements, more than {max}")]
    TooManyElements {
        formula: String,
        count: usize,
        max: usize,
    },
    #[error("space group knowledge base: {0}")]
    KnowledgeBase(String),
}
