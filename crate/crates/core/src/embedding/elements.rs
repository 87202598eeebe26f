use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tokenize::{SlotKind, TokenSequence};
use super::vocab::PAD_ID;
use super::{EmbeddingError, FORMULA_SLOTS};
use crate::grammar::{is_element, FormulaComposition, ELEMENT_SYMBOLS};
use crate::tensor::{Float, Tensor};

/// Length of one element vector.
pub const ELEMENT_DIM: usize = 200;
/// Fraction plus element vector.
pub const FORMULA_ROW_DIM: usize = ELEMENT_DIM + 1;

/// Element symbol to fixed-length feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementEmbeddingTable {
    vectors: BTreeMap<String, Vec<f64>>,
}

impl ElementEmbeddingTable {
    pub fn get(&self, symbol: &str) -> Option<&[f64]> {
        self.vectors.get(symbol).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    /// Parses `symbol v1 ... v200` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, EmbeddingError> {
        let mut vectors = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| EmbeddingError::EmbeddingFile { line: i + 1, reason };
            let mut parts = line.split_whitespace();
            let symbol = parts.next().unwrap_or_default();
            if !is_element(symbol) {
                return Err(bad(format!("unknown element `{symbol}`")));
            }
            let values = parts
                .map(|p| p.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| bad("non-numeric or non-finite value".into()))?;
            if values.len() != ELEMENT_DIM {
                return Err(bad(format!("expected {ELEMENT_DIM} values, found {}", values.len())));
            }
            if vectors.insert(symbol.to_string(), values).is_some() {
                return Err(bad(format!("duplicate element `{symbol}`")));
            }
        }
        Ok(ElementEmbeddingTable { vectors })
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (s, v) in &self.vectors {
            out.push_str(s);
            for x in v {
                let _ = write!(out, " {x:?}");
            }
            out.push('\n');
        }
        out
    }

    /// Seeded random unit vectors for every element, for use without a
    /// pretrained embedding file.
    pub fn synthetic(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = ELEMENT_SYMBOLS
            .iter()
            .map(|s| {
                let mut v: Vec<f64> = (0..ELEMENT_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                (s.to_string(), v)
            })
            .collect();
        ElementEmbeddingTable { vectors }
    }
}

/// `20 x 201` matrix: row i is `[fraction_i, vector_i]`, remaining rows zero.
pub fn embed_formula(comp: &FormulaComposition, table: &ElementEmbeddingTable) -> Result<Tensor<f64>, EmbeddingError> {
    if comp.len() > FORMULA_SLOTS {
        return Err(EmbeddingError::Dimension(format!("{} elements exceed {FORMULA_SLOTS} slots", comp.len())));
    }
    let mut out = Tensor::zeros(&[FORMULA_SLOTS, FORMULA_ROW_DIM]);
    for (i, (el, frac)) in comp.entries().iter().enumerate() {
        let v = table.get(el).ok_or_else(|| EmbeddingError::MissingEmbedding(el.clone()))?;
        let row = out.row_mut(i);
        row[0] = *frac;
        row[1..].copy_from_slice(v);
    }
    Ok(out)
}

/// `row · W + b` for a single 201-wide formula row; `W` is `201 x d_model`.
pub fn project_formula_row<T: Float>(row: &[T], weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Vec<T>, EmbeddingError> {
    if row.len() != weight.rows() || weight.cols() != bias.len() {
        return Err(EmbeddingError::Dimension(format!(
            "row of {} against projection {:?} + {:?}",
            row.len(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut out = bias.data().to_vec();
    T::gemm(1, row.len(), out.len(), T::one(), row, false, weight.data(), false, T::one(), &mut out);
    Ok(out)
}

/// Embedded `L x d_model` input with its attention mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedInput<T> {
    pub matrix: Tensor<T>,
    pub attention_mask: Vec<bool>,
    pub record_id: Option<String>,
}

/// Token-table rows at discrete positions, projected formula rows at real
/// formula slots, zero rows at `[PAD]`, plus positional rows at every
/// non-`[PAD]` position.
pub fn assemble_input<T: Float>(
    seq: &TokenSequence,
    formula: &Tensor<f64>,
    token_table: &Tensor<T>,
    projection_weight: &Tensor<T>,
    projection_bias: &Tensor<T>,
    positions: &Tensor<T>,
) -> Result<EmbeddedInput<T>, EmbeddingError> {
    let d = token_table.cols();
    let l = seq.len();
    if positions.rows() < l || positions.cols() != d || projection_bias.len() != d {
        return Err(EmbeddingError::Dimension(format!(
            "sequence {l} x {d} against positions {:?} and projection bias {:?}",
            positions.shape(),
            projection_bias.shape()
        )));
    }
    if formula.rows() != FORMULA_SLOTS || formula.cols() != FORMULA_ROW_DIM {
        return Err(EmbeddingError::Dimension(format!("formula matrix {:?}", formula.shape())));
    }
    let mut matrix = Tensor::zeros(&[l, d]);
    for (pos, (&id, slot)) in seq.ids.iter().zip(&seq.slots).enumerate() {
        if id == PAD_ID {
            continue;
        }
        let row: Vec<T> = match slot {
            SlotKind::Formula(k) => {
                let f: Vec<T> = formula.row(*k).iter().map(|&x| T::from_f64_lossy(x)).collect();
                project_formula_row(&f, projection_weight, projection_bias)?
            }
            _ => {
                if id >= token_table.rows() {
                    return Err(EmbeddingError::Dimension(format!("token id {id} beyond table of {}", token_table.rows())));
                }
                token_table.row(id).to_vec()
            }
        };
        for ((o, r), p) in matrix.row_mut(pos).iter_mut().zip(row).zip(positions.row(pos)) {
            *o = r + *p;
        }
    }
    Ok(EmbeddedInput {
        matrix,
        attention_mask: seq.attention_mask.clone(),
        record_id: None,
    })
}
