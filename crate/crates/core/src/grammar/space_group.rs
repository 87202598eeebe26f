use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GrammarError;

/// Shipped knowledge base, one record per line, `|`-separated in token order.
pub const KB_TEXT: &str = include_str!("../../data/space_groups.tsv");
const KB_MANIFEST: &str = include_str!("../../data/space_groups.tsv.sha256");


#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrystalSystem {
    Triclinic,
    Monoclinic,
    Orthorhombic,
    Tetragonal,
    Trigonal,
    Hexagonal,
    Cubic,
}

impl CrystalSystem {
    pub const ALL: [CrystalSystem; 7] = [
        CrystalSystem::Triclinic,
        CrystalSystem::Monoclinic,
        CrystalSystem::Orthorhombic,
        CrystalSystem::Tetragonal,
        CrystalSystem::Trigonal,
        CrystalSystem::Hexagonal,
        CrystalSystem::Cubic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CrystalSystem::Triclinic => "triclinic",
            CrystalSystem::Monoclinic => "monoclinic",
            CrystalSystem::Orthorhombic => "orthorhombic",
            CrystalSystem::Tetragonal => "tetragonal",
            CrystalSystem::Trigonal => "trigonal",
            CrystalSystem::Hexagonal => "hexagonal",
            CrystalSystem::Cubic => "cubic",
        }
    }

    /// 0 (triclinic) through 6 (cubic).
    pub fn index(self) -> usize {
        self as usize
    }

    /// Standard International Tables number ranges.
    pub fn from_number(number: u16) -> Option<Self> {
        Some(match number {
            1..=2 => CrystalSystem::Triclinic,
            3..=15 => CrystalSystem::Monoclinic,
            16..=74 => CrystalSystem::Orthorhombic,
            75..=142 => CrystalSystem::Tetragonal,
            143..=167 => CrystalSystem::Trigonal,
            168..=194 => CrystalSystem::Hexagonal,
            195..=230 => CrystalSystem::Cubic,
            _ => return None,
        })
    }
}

impl fmt::Display for CrystalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CrystalSystem {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CrystalSystem::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| GrammarError::KnowledgeBase(format!("unknown crystal system {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symmetry {
    Centrosymmetric,
    NonCentrosymmetric,
}

impl Symmetry {
    pub fn name(self) -> &'static str {
        match self {
            Symmetry::Centrosymmetric => "Centrosymmetric",
            Symmetry::NonCentrosymmetric => "Non-centrosymmetric",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Polar,
    NonPolar,
}

impl Polarity {
    pub fn name(self) -> &'static str {
        match self {
            Polarity::Polar => "polar",
            Polarity::NonPolar => "non-polar",
        }
    }
}

/// Crystallographic identity of one space group, fields in token order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceGroupRecord {
    pub full_symbol: String,
    pub number: u16,
    pub order: u32,
    pub point_group: String,
    pub crystal_system: CrystalSystem,
    pub laue_class: String,
    pub symmetry: Symmetry,
    pub polarity: Polarity,
    pub centering: char,
    /// Directional symbols; unused slots hold [`super::EMPTY_SLOT`].
    pub directional_symbols: [String; 3],
}

impl SpaceGroupRecord {
    /// The twelve space-group token strings in their fixed order.
    pub fn token_strings(&self) -> [String; 12] {
        [
            self.full_symbol.clone(),
            self.number.to_string(),
            self.order.to_string(),
            self.point_group.clone(),
            self.crystal_system.name().to_string(),
            self.laue_class.clone(),
            self.symmetry.name().to_string(),
            self.polarity.name().to_string(),
            self.centering.to_string(),
            self.directional_symbols[0].clone(),
            self.directional_symbols[1].clone(),
            self.directional_symbols[2].clone(),
        ]
    }

    fn parse_line(line: &str, lineno: usize) -> Result<Self, GrammarError> {
        let bad = |what: &str| GrammarError::KnowledgeBase(format!("line {lineno}: {what}"));
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 12 {
            return Err(bad(&format!("expected 12 fields, found {}", fields.len())));
        }
        let number: u16 = fields[1].parse().map_err(|_| bad("bad number"))?;
        let order: u32 = fields[2].parse().map_err(|_| bad("bad order"))?;
        let symmetry = match fields[6] {
            "Centrosymmetric" => Symmetry::Centrosymmetric,
            "Non-centrosymmetric" => Symmetry::NonCentrosymmetric,
            other => return Err(bad(&format!("bad symmetry flag {other:?}"))),
        };
        let polarity = match fields[7] {
            "polar" => Polarity::Polar,
            "non-polar" => Polarity::NonPolar,
            other => return Err(bad(&format!("bad polarity flag {other:?}"))),
        };
        let mut centering = fields[8].chars();
        let centering = match (centering.next(), centering.next()) {
            (Some(c), None) => c,
            _ => return Err(bad("centering must be one letter")),
        };
        Ok(SpaceGroupRecord {
            full_symbol: fields[0].to_string(),
            number,
            order,
            point_group: fields[3].to_string(),
            crystal_system: fields[4].parse()?,
            laue_class: fields[5].to_string(),
            symmetry,
            polarity,
            centering,
            directional_symbols: [
                fields[9].to_string(),
                fields[10].to_string(),
                fields[11].to_string(),
            ],
        })
    }

    fn check_invariants(&self) -> Result<(), String> {
        if Some(self.crystal_system) != CrystalSystem::from_number(self.number) {
            return Err(format!("{}: crystal system out of range", self.number));
        }
        if !"PABCIFR".contains(self.centering) {
            return Err(format!("{}: bad centering {}", self.number, self.centering));
        }
        if !self.full_symbol.starts_with(self.centering) {
            return Err(format!("{}: centering is not the first letter", self.number));
        }
        if self.symmetry == Symmetry::Centrosymmetric && self.polarity == Polarity::Polar {
            return Err(format!("{}: centrosymmetric but polar", self.number));
        }
        if self.order == 0 {
            return Err(format!("{}: zero order", self.number));
        }
        Ok(())
    }
}

/// The full table of 230 records, indexed by number.
#[derive(Debug, Clone)]
pub struct SpaceGroupTable {
    records: Vec<SpaceGroupRecord>,
}

impl SpaceGroupTable {
    /// Parses a knowledge-base text and verifies it against a hex SHA-256 digest.
    pub fn parse(text: &str, expected_sha256: &str) -> Result<Self, GrammarError> {
        let digest = hex::encode(Sha256::digest(text.as_bytes()));
        if digest != expected_sha256 {
            return Err(GrammarError::KnowledgeBase(format!(
                "checksum mismatch: expected {expected_sha256}, computed {digest}"
            )));
        }
        let mut records = Vec::with_capacity(230);
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let rec = SpaceGroupRecord::parse_line(line, i + 1)?;
            rec.check_invariants().map_err(GrammarError::KnowledgeBase)?;
            if rec.number as usize != records.len() + 1 {
                return Err(GrammarError::KnowledgeBase(format!(
                    "line {}: records must be listed 1..230 in order",
                    i + 1
                )));
            }
            records.push(rec);
        }
        if records.len() != 230 {
            return Err(GrammarError::KnowledgeBase(format!(
                "expected 230 records, found {}",
                records.len()
            )));
        }
        Ok(SpaceGroupTable { records })
    }

    pub fn get(&self, number: i64) -> Result<&SpaceGroupRecord, GrammarError> {
        if !(1..=230).contains(&number) {
            return Err(GrammarError::InvalidSpaceGroup(number));
        }
        Ok(&self.records[number as usize - 1])
    }

    pub fn records(&self) -> &[SpaceGroupRecord] {
        &self.records
    }

    pub fn find_by_full_symbol(&self, symbol: &str) -> Option<&SpaceGroupRecord> {
        self.records.iter().find(|r| r.full_symbol == symbol)
    }
}

/// Hex SHA-256 of [`KB_TEXT`] as recorded in the shipped manifest.
pub fn kb_sha256() -> &'static str {
    static DIGEST: OnceLock<String> = OnceLock::new();
    DIGEST.get_or_init(|| {
        KB_MANIFEST
            .split_whitespace()
            .next()
            .unwrap_or_default()
            .to_string()
    })
}

/// The shipped knowledge base. Panics only if the embedded data is corrupt,
/// which the unit tests rule out.
pub fn space_groups() -> &'static SpaceGroupTable {
    static TABLE: OnceLock<SpaceGroupTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        SpaceGroupTable::parse(KB_TEXT, kb_sha256()).expect("embedded space-group table")
    })
}

pub fn lookup_space_group(number: i64) -> Result<&'static SpaceGroupRecord, GrammarError> {
    space_groups().get(number)
}

pub fn crystal_system_of(number: i64) -> Result<CrystalSystem, GrammarError> {
    Ok(lookup_space_group(number)?.crystal_system)
}
