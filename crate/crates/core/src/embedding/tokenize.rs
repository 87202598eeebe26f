use serde::{Deserialize, Serialize};

use super::bins::{quantize_informatics, NumericField};
use super::vocab::{Category, TokenVocabulary, CLS_ID, EMPTY_ID, PAD_ID};
use super::{EmbeddingError, FORMULA_SLOTS, SG_TOKENS};
use crate::grammar::{lookup_space_group, FormulaComposition};

/// Informatics fields in their fixed sequence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoField {
    Topology,
    Volume,
    AtomCount,
    Porosity,
    AccessiblePorosity,
    OrganicCation,
}

impl InfoField {
    pub const ALL: [InfoField; 6] = [
        InfoField::Topology,
        InfoField::Volume,
        InfoField::AtomCount,
        InfoField::Porosity,
        InfoField::AccessiblePorosity,
        InfoField::OrganicCation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InfoField::Topology => "topology",
            InfoField::Volume => "volume",
            InfoField::AtomCount => "natoms",
            InfoField::Porosity => "porosity",
            InfoField::AccessiblePorosity => "acc_porosity",
            InfoField::OrganicCation => "organic_cation",
        }
    }

    pub fn from_name(s: &str) -> Option<InfoField> {
        InfoField::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn category(self) -> Category {
        match self {
            InfoField::Topology => Category::Topology,
            InfoField::Volume => Category::Volume,
            InfoField::AtomCount => Category::AtomCount,
            InfoField::Porosity => Category::Porosity,
            InfoField::AccessiblePorosity => Category::AccessiblePorosity,
            InfoField::OrganicCation => Category::OrganicCation,
        }
    }
}

/// Which informatics fields occupy sequence positions, always in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<InfoField>", into = "Vec<InfoField>")]
pub struct InfoLayout {
    fields: Vec<InfoField>,
}

impl From<InfoLayout> for Vec<InfoField> {
    fn from(l: InfoLayout) -> Self {
        l.fields
    }
}

impl TryFrom<Vec<InfoField>> for InfoLayout {
    type Error = String;

    fn try_from(v: Vec<InfoField>) -> Result<Self, String> {
        Ok(InfoLayout::new(v))
    }
}

impl InfoLayout {
    pub fn new(fields: impl IntoIterator<Item = InfoField>) -> Self {
        let mut fields: Vec<InfoField> = fields.into_iter().collect();
        fields.sort();
        fields.dedup();
        InfoLayout { fields }
    }

    pub fn none() -> Self {
        InfoLayout::default()
    }

    /// Topology, volume, atom count and both porosity fractions.
    pub fn mof() -> Self {
        InfoLayout::new(InfoField::ALL[..5].iter().copied())
    }

    /// Organic cation only.
    pub fn hoip() -> Self {
        InfoLayout::new([InfoField::OrganicCation])
    }

    pub fn fields(&self) -> &[InfoField] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn contains(&self, f: InfoField) -> bool {
        self.fields.contains(&f)
    }

    /// Total sequence length `1 + 12 + n_info + 20`.
    pub fn sequence_len(&self) -> usize {
        1 + SG_TOKENS + self.fields.len() + FORMULA_SLOTS
    }

    /// Comma-separated field names; `-` for the empty layout.
    pub fn to_text(&self) -> String {
        if self.fields.is_empty() {
            "-".into()
        } else {
            self.fields.iter().map(|f| f.name()).collect::<Vec<_>>().join(",")
        }
    }

    pub fn from_text(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == "-" || s.is_empty() {
            return Ok(InfoLayout::none());
        }
        s.split(',')
            .map(|p| InfoField::from_name(p.trim()).ok_or_else(|| format!("unknown informatics field `{p}`")))
            .collect::<Result<Vec<_>, _>>()
            .map(InfoLayout::new)
    }
}

/// Optional per-record informatics values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InformaticsFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<String>,
    /// Å³
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_cell_volume: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_count: Option<u32>,
    /// Percent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub porosity_fraction: Option<f64>,
    /// Percent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accessible_void_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub organic_cation: Option<String>,
}

impl InformaticsFields {
    pub fn has(&self, f: InfoField) -> bool {
        match f {
            InfoField::Topology => self.topology.is_some(),
            InfoField::Volume => self.unit_cell_volume.is_some(),
            InfoField::AtomCount => self.atom_count.is_some(),
            InfoField::Porosity => self.porosity_fraction.is_some(),
            InfoField::AccessiblePorosity => self.accessible_void_fraction.is_some(),
            InfoField::OrganicCation => self.organic_cation.is_some(),
        }
    }

    /// Copy keeping only the fields present in `layout`.
    pub fn restricted_to(&self, layout: &InfoLayout) -> InformaticsFields {
        let keep = |f| layout.contains(f);
        InformaticsFields {
            topology: self.topology.clone().filter(|_| keep(InfoField::Topology)),
            unit_cell_volume: self.unit_cell_volume.filter(|_| keep(InfoField::Volume)),
            atom_count: self.atom_count.filter(|_| keep(InfoField::AtomCount)),
            porosity_fraction: self.porosity_fraction.filter(|_| keep(InfoField::Porosity)),
            accessible_void_fraction: self.accessible_void_fraction.filter(|_| keep(InfoField::AccessiblePorosity)),
            organic_cation: self.organic_cation.clone().filter(|_| keep(InfoField::OrganicCation)),
        }
    }

    /// Domain checks: percentages in [0, 100], volume > 0, atom count ≥ 1.
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let check = |field: &'static str, v: Option<f64>, ok: fn(f64) -> bool, domain: &'static str| match v {
            Some(v) if !v.is_finite() => Err(EmbeddingError::NonFinite { field, value: v }),
            Some(v) if !ok(v) => Err(EmbeddingError::OutOfDomain { field, value: v, domain }),
            _ => Ok(()),
        };
        let pct = |v: f64| (0.0..=100.0).contains(&v);
        check("volume", self.unit_cell_volume, |v| v > 0.0, "> 0")?;
        check("natoms", self.atom_count.map(f64::from), |v| v >= 1.0, ">= 1")?;
        check("porosity", self.porosity_fraction, pct, "[0, 100]")?;
        check("acc_porosity", self.accessible_void_fraction, pct, "[0, 100]")
    }
}

/// What a sequence position holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Cls,
    /// Index 0–11 into the space-group token block.
    SpaceGroup(usize),
    Info(InfoField),
    /// Index 0–19 into the formula block.
    Formula(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub slots: Vec<SlotKind>,
    /// False only at `[PAD]` positions.
    pub attention_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// First formula-slot position.
    pub fn formula_start(&self) -> usize {
        self.ids.len() - FORMULA_SLOTS
    }

    /// Number of real (non-padding) formula slots.
    pub fn formula_count(&self) -> usize {
        self.attention_mask[self.formula_start()..].iter().filter(|&&m| m).count()
    }
}

/// Converts a crystal into its fixed-length token sequence.
pub fn tokenize_crystal(
    sg_number: i64,
    formula: &FormulaComposition,
    info: &InformaticsFields,
    vocab: &TokenVocabulary,
) -> Result<TokenSequence, EmbeddingError> {
    let layout = vocab.layout();
    if let Some(f) = InfoField::ALL.into_iter().find(|&f| info.has(f) && !layout.contains(f)) {
        return Err(EmbeddingError::LayoutMismatch(f.name()));
    }
    if formula.len() > FORMULA_SLOTS {
        return Err(EmbeddingError::Dimension(format!("{} formula elements exceed {FORMULA_SLOTS} slots", formula.len())));
    }
    let record = lookup_space_group(sg_number)?;
    let n = layout.sequence_len();
    let mut ids = Vec::with_capacity(n);
    let mut slots = Vec::with_capacity(n);

    ids.push(CLS_ID);
    slots.push(SlotKind::Cls);
    for (i, (tok, cat)) in record.token_strings().iter().zip(Category::SPACE_GROUP_POSITIONS).enumerate() {
        ids.push(if tok.is_empty() { EMPTY_ID } else { vocab.id_or_unk(cat, tok) });
        slots.push(SlotKind::SpaceGroup(i));
    }

    let bins = vocab.bins();
    for &field in layout.fields() {
        let cat = field.category();
        let numeric = |v: f64, kind| -> Result<usize, EmbeddingError> {
            Ok(vocab.id_or_unk(cat, &quantize_informatics(v, kind, bins)?))
        };
        let id = match field {
            InfoField::Topology => info.topology.as_deref().map(|t| Ok(vocab.id_or_unk(cat, t))),
            InfoField::OrganicCation => info.organic_cation.as_deref().map(|t| Ok(vocab.id_or_unk(cat, t))),
            InfoField::Volume => info.unit_cell_volume.map(|v| numeric(v, NumericField::Volume)),
            InfoField::AtomCount => info.atom_count.map(|v| numeric(v as f64, NumericField::AtomCount)),
            InfoField::Porosity => info.porosity_fraction.map(|v| numeric(v, NumericField::Porosity)),
            InfoField::AccessiblePorosity => {
                info.accessible_void_fraction.map(|v| numeric(v, NumericField::AccessiblePorosity))
            }
        };
        ids.push(id.transpose()?.unwrap_or(EMPTY_ID));
        slots.push(SlotKind::Info(field));
    }

    for (slot, el) in (0..FORMULA_SLOTS).zip(formula.elements().map(Some).chain(std::iter::repeat(None))) {
        ids.push(match el {
            Some(e) => vocab.id_or_unk(Category::Element, e),
            None => PAD_ID,
        });
        slots.push(SlotKind::Formula(slot));
    }
    let attention_mask = ids.iter().map(|&id| id != PAD_ID).collect();
    Ok(TokenSequence {
        ids,
        slots,
        attention_mask,
    })
}
