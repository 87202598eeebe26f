use serde::{Deserialize, Serialize};

use super::EmbeddingError;

pub const VOLUME_BINS: usize = 64;
pub const PORES_BINS: usize = 20;
pub const DEFAULT_ATOM_CAP: u32 = 256;

/// Numeric informatics fields that are discretized into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumericField {
    Volume,
    AtomCount,
    Porosity,
    AccessiblePorosity,
}

impl NumericField {
    pub fn name(self) -> &'static str {
        match self {
            NumericField::Volume => "volume",
            NumericField::AtomCount => "natoms",
            NumericField::Porosity => "porosity",
            NumericField::AccessiblePorosity => "acc_porosity",
        }
    }
}

/// Bin edges for the numeric informatics fields.
///
/// Intervals are half-open `[lo, hi)`; values below the first edge fall in
/// bin 0 and values at or beyond the last interior edge fall in the top bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub volume_edges: Vec<f64>,
    pub atom_cap: u32,
    pub porosity_edges: Vec<f64>,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec::with_volume_range(1.0, 1.0e6)
    }
}

fn log_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let (l, h) = (lo.ln(), hi.ln());
    (0..=bins).map(|i| (l + (h - l) * i as f64 / bins as f64).exp()).collect()
}

impl BinSpec {
    /// 64 log-spaced volume bins spanning `[lo, hi]` Å³.
    pub fn with_volume_range(lo: f64, hi: f64) -> Self {
        let (mut lo, mut hi) = (lo, hi);
        if !(lo > 0.0 && hi.is_finite()) || hi <= lo {
            lo = if lo > 0.0 && lo.is_finite() { lo / 2.0 } else { 1.0 };
            hi = lo * 4.0;
        }
        BinSpec {
            volume_edges: log_edges(lo, hi, VOLUME_BINS),
            atom_cap: DEFAULT_ATOM_CAP,
            porosity_edges: (0..=PORES_BINS).map(|i| 100.0 * i as f64 / PORES_BINS as f64).collect(),
        }
    }

    /// Fits the volume range on observed training volumes; defaults when none are given.
    pub fn fit_volumes(volumes: impl IntoIterator<Item = f64>) -> Self {
        let (lo, hi) = volumes
            .into_iter()
            .filter(|v| v.is_finite() && *v > 0.0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if lo.is_finite() {
            BinSpec::with_volume_range(lo, hi)
        } else {
            BinSpec::default()
        }
    }

    pub fn with_atom_cap(mut self, cap: u32) -> Self {
        self.atom_cap = cap.max(1);
        self
    }

    /// Every label the field can produce, in bin order.
    pub fn labels(&self, field: NumericField) -> Vec<String> {
        match field {
            NumericField::Volume => (0..self.volume_edges.len() - 1).map(|i| format!("{i:02}")).collect(),
            NumericField::AtomCount => (1..=self.atom_cap)
                .map(|n| n.to_string())
                .chain(std::iter::once(format!(">{}", self.atom_cap)))
                .collect(),
            NumericField::Porosity | NumericField::AccessiblePorosity => {
                (0..self.porosity_edges.len() - 1).map(|i| format!("{i:02}")).collect()
            }
        }
    }
}

fn bin_index(edges: &[f64], v: f64) -> usize {
    let interior = &edges[1..edges.len() - 1];
    interior.partition_point(|&e| e <= v)
}

/// Deterministic bin label for a numeric informatics value.
pub fn quantize_informatics(value: f64, field: NumericField, spec: &BinSpec) -> Result<String, EmbeddingError> {
    if !value.is_finite() {
        return Err(EmbeddingError::NonFinite {
            field: field.name(),
            value,
        });
    }
    let out_of_domain = |domain| EmbeddingError::OutOfDomain {
        field: field.name(),
        value,
        domain,
    };
    match field {
        NumericField::Volume => {
            if value <= 0.0 {
                return Err(out_of_domain("> 0"));
            }
            Ok(format!("{:02}", bin_index(&spec.volume_edges, value)))
        }
        NumericField::AtomCount => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(out_of_domain("integer >= 1"));
            }
            if value > spec.atom_cap as f64 {
                Ok(format!(">{}", spec.atom_cap))
            } else {
                Ok(format!("{}", value as u64))
            }
        }
        NumericField::Porosity | NumericField::AccessiblePorosity => {
            if !(0.0..=100.0).contains(&value) {
                return Err(out_of_domain("[0, 100]"));
            }
            Ok(format!("{:02}", bin_index(&spec.porosity_edges, value)))
        }
    }
}
