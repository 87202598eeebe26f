use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use super::bins::{BinSpec, NumericField};
use super::tokenize::{InfoField, InfoLayout, InformaticsFields};
use super::EmbeddingError;
use crate::grammar::{space_groups, ELEMENT_SYMBOLS};

pub const CLS_ID: usize = 0;
pub const MASK_ID: usize = 1;
pub const PAD_ID: usize = 2;
pub const EMPTY_ID: usize = 3;
pub const UNK_ID: usize = 4;
pub const RESERVED: [&str; 5] = ["[CLS]", "[MASK]", "[PAD]", "[EMPTY]", "[UNK]"];

const FORMAT_LINE: &str = "sgformer-vocabulary 1";

/// Token families. Each token string is unique within its category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Special,
    SpaceGroupSymbol,
    SpaceGroupNumber,
    Order,
    PointGroup,
    CrystalSystem,
    LaueClass,
    Symmetry,
    Polarity,
    Centering,
    Directional,
    Element,
    Topology,
    Volume,
    AtomCount,
    Porosity,
    AccessiblePorosity,
    OrganicCation,
}

impl Category {
    pub const ALL: [Category; 18] = [
        Category::Special,
        Category::SpaceGroupSymbol,
        Category::SpaceGroupNumber,
        Category::Order,
        Category::PointGroup,
        Category::CrystalSystem,
        Category::LaueClass,
        Category::Symmetry,
        Category::Polarity,
        Category::Centering,
        Category::Directional,
        Category::Element,
        Category::Topology,
        Category::Volume,
        Category::AtomCount,
        Category::Porosity,
        Category::AccessiblePorosity,
        Category::OrganicCation,
    ];

    /// Category of each of the 12 space-group positions.
    pub const SPACE_GROUP_POSITIONS: [Category; 12] = [
        Category::SpaceGroupSymbol,
        Category::SpaceGroupNumber,
        Category::Order,
        Category::PointGroup,
        Category::CrystalSystem,
        Category::LaueClass,
        Category::Symmetry,
        Category::Polarity,
        Category::Centering,
        Category::Directional,
        Category::Directional,
        Category::Directional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Special => "special",
            Category::SpaceGroupSymbol => "sg_symbol",
            Category::SpaceGroupNumber => "sg_number",
            Category::Order => "order",
            Category::PointGroup => "point_group",
            Category::CrystalSystem => "crystal_system",
            Category::LaueClass => "laue_class",
            Category::Symmetry => "symmetry",
            Category::Polarity => "polarity",
            Category::Centering => "centering",
            Category::Directional => "directional",
            Category::Element => "element",
            Category::Topology => "topology",
            Category::Volume => "volume",
            Category::AtomCount => "natoms",
            Category::Porosity => "porosity",
            Category::AccessiblePorosity => "acc_porosity",
            Category::OrganicCation => "organic_cation",
        }
    }

    pub fn from_name(name: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// Bidirectional token map with dense ids; ids 0–4 are the reserved tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVocabulary {
    layout: InfoLayout,
    bins: BinSpec,
    tokens: Vec<(Category, String)>,
    index: HashMap<(Category, String), usize>,
}

impl TokenVocabulary {
    fn from_tokens(layout: InfoLayout, bins: BinSpec, tokens: Vec<(Category, String)>) -> Result<Self, String> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(format!("duplicate token {}:{}", t.0.name(), t.1));
            }
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i) != Some(&(Category::Special, r.to_string())) {
                return Err(format!("reserved id {i} must be {r}"));
            }
        }
        Ok(TokenVocabulary {
            layout,
            bins,
            tokens,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn layout(&self) -> &InfoLayout {
        &self.layout
    }

    pub fn bins(&self) -> &BinSpec {
        &self.bins
    }

    pub fn id(&self, category: Category, token: &str) -> Option<usize> {
        self.index.get(&(category, token.to_string())).copied()
    }

    /// Id of a token, or `[UNK]` when unseen.
    pub fn id_or_unk(&self, category: Category, token: &str) -> usize {
        self.id(category, token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<(Category, &str)> {
        self.tokens.get(id).map(|(c, s)| (*c, s.as_str()))
    }

    /// Human-readable label of an id, e.g. `F 4/m -3 2/m` or `[PAD]`.
    pub fn label(&self, id: usize) -> String {
        match self.tokens.get(id) {
            Some((Category::Special, s)) => s.clone(),
            Some((Category::Volume | Category::Porosity | Category::AccessiblePorosity | Category::AtomCount, s)) => {
                format!("{}:{s}", self.tokens[id].0.name())
            }
            Some((_, s)) => s.clone(),
            None => format!("<{id}>"),
        }
    }

    /// Contiguous id range of a category.
    pub fn category_range(&self, category: Category) -> std::ops::Range<usize> {
        let start = self.tokens.iter().position(|(c, _)| *c == category);
        match start {
            Some(s) => {
                let len = self.tokens[s..].iter().take_while(|(c, _)| *c == category).count();
                s..s + len
            }
            None => 0..0,
        }
    }

    /// Versioned text form: header lines, then `id<TAB>category<TAB>"token"`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let floats = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "{FORMAT_LINE}");
        let _ = writeln!(out, "layout {}", self.layout.to_text());
        let _ = writeln!(out, "volume_edges {}", floats(&self.bins.volume_edges));
        let _ = writeln!(out, "atom_cap {}", self.bins.atom_cap);
        let _ = writeln!(out, "porosity_edges {}", floats(&self.bins.porosity_edges));
        let _ = writeln!(out, "tokens {}", self.tokens.len());
        for (i, (c, s)) in self.tokens.iter().enumerate() {
            let quoted = serde_json::to_string(s).expect("string serialization");
            let _ = writeln!(out, "{i}\t{}\t{quoted}", c.name());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EmbeddingError> {
        let bad = |line: usize, reason: &str| EmbeddingError::VocabularyFile {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |key: &str| -> Result<(usize, String), EmbeddingError> {
            let (n, l) = lines.next().ok_or_else(|| bad(0, "unexpected end of file"))?;
            if key.is_empty() {
                return Ok((n, l.to_string()));
            }
            l.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
                .map(|r| (n, r.to_string()))
                .ok_or_else(|| bad(n, &format!("expected `{key}` header")))
        };
        let (n, first) = header("")?;
        if first != FORMAT_LINE {
            return Err(bad(n, "unsupported vocabulary format"));
        }
        let (n, layout) = header("layout")?;
        let layout = InfoLayout::from_text(&layout).map_err(|e| bad(n, &e))?;
        let parse_floats = |n: usize, s: &str| -> Result<Vec<f64>, EmbeddingError> {
            s.split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| bad(n, "bad float")))
                .collect()
        };
        let (n, v) = header("volume_edges")?;
        let volume_edges = parse_floats(n, &v)?;
        let (n, a) = header("atom_cap")?;
        let atom_cap = a.parse().map_err(|_| bad(n, "bad atom cap"))?;
        let (n, p) = header("porosity_edges")?;
        let porosity_edges = parse_floats(n, &p)?;
        if volume_edges.len() < 2 || porosity_edges.len() < 2 {
            return Err(bad(n, "bin edges need at least two values"));
        }
        let (n, count) = header("tokens")?;
        let count: usize = count.parse().map_err(|_| bad(n, "bad token count"))?;
        let mut tokens = Vec::with_capacity(count);
        for (n, l) in lines {
            if l.is_empty() {
                continue;
            }
            let mut parts = l.splitn(3, '\t');
            let (Some(id), Some(cat), Some(tok)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(n, "expected id, category and token"));
            };
            if id.parse::<usize>().ok() != Some(tokens.len()) {
                return Err(bad(n, "ids must be dense and ascending"));
            }
            let cat = Category::from_name(cat).ok_or_else(|| bad(n, "unknown category"))?;
            let tok: String = serde_json::from_str(tok).map_err(|_| bad(n, "bad token string"))?;
            tokens.push((cat, tok));
        }
        if tokens.len() != count {
            return Err(bad(0, "token count does not match header"));
        }
        let bins = BinSpec {
            volume_edges,
            atom_cap,
            porosity_edges,
        };
        TokenVocabulary::from_tokens(layout, bins, tokens).map_err(|e| bad(0, &e))
    }
}

/// Builds the vocabulary from the knowledge base, the numeric bins and the
/// string-valued informatics fields observed in `records`.
pub fn build_vocabulary<'a>(
    layout: InfoLayout,
    bins: BinSpec,
    records: impl IntoIterator<Item = &'a InformaticsFields>,
) -> TokenVocabulary {
    let mut tokens: Vec<(Category, String)> = RESERVED.iter().map(|r| (Category::Special, r.to_string())).collect();
    let kb = space_groups();
    for (pos, cat) in Category::SPACE_GROUP_POSITIONS.iter().enumerate() {
        if pos > 9 {
            continue;
        }
        let mut seen = BTreeSet::new();
        let mut ordered = Vec::new();
        for rec in kb.records() {
            let strings = rec.token_strings();
            let slots: &[String] = if *cat == Category::Directional { &strings[9..12] } else { &strings[pos..pos + 1] };
            for s in slots {
                if !s.is_empty() && seen.insert(s.clone()) {
                    ordered.push(s.clone());
                }
            }
        }
        tokens.extend(ordered.into_iter().map(|s| (*cat, s)));
    }
    tokens.extend(ELEMENT_SYMBOLS.iter().map(|s| (Category::Element, s.to_string())));

    let mut topologies = BTreeSet::new();
    let mut cations = BTreeSet::new();
    for r in records {
        if let Some(t) = &r.topology {
            topologies.insert(t.clone());
        }
        if let Some(c) = &r.organic_cation {
            cations.insert(c.clone());
        }
    }
    for field in layout.fields() {
        match field {
            InfoField::Topology => tokens.extend(topologies.iter().map(|t| (Category::Topology, t.clone()))),
            InfoField::OrganicCation => tokens.extend(cations.iter().map(|t| (Category::OrganicCation, t.clone()))),
            InfoField::Volume => tokens.extend(bins.labels(NumericField::Volume).into_iter().map(|l| (Category::Volume, l))),
            InfoField::AtomCount => {
                tokens.extend(bins.labels(NumericField::AtomCount).into_iter().map(|l| (Category::AtomCount, l)))
            }
            InfoField::Porosity => {
                tokens.extend(bins.labels(NumericField::Porosity).into_iter().map(|l| (Category::Porosity, l)))
            }
            InfoField::AccessiblePorosity => tokens.extend(
                bins.labels(NumericField::AccessiblePorosity)
                    .into_iter()
                    .map(|l| (Category::AccessiblePorosity, l)),
            ),
        }
    }
    TokenVocabulary::from_tokens(layout, bins, tokens).expect("generated vocabulary is well formed")
}
