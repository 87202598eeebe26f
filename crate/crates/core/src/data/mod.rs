//! Crystal datasets: loading and validation, splits, synthetic corpora and
//! repeat averaging.
//!
//! Two on-disk formats share one flat schema. Delimited tables (comma, or tab
//! for `.tsv`) use the columns
//!
//! `id, formula, spacegroup, topology, volume, natoms, porosity, acc_porosity,
//! organic_cation, a, b, c, alpha, beta, gamma, target, unit`
//!
//! and record-lines files carry one JSON object per line with the same keys.
//! Empty cells and missing keys mean "absent". `id`, `formula` and
//! `spacegroup` are required.

mod split;
mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{
    embed_formula, tokenize_crystal, ElementEmbeddingTable, EmbeddingError, InformaticsFields, TokenVocabulary,
};
use crate::encoder::ModelInput;
use crate::grammar::{crystal_system_of, lattice_constraints, parse_formula, CrystalSystem, FormulaComposition, GrammarError, LatticeParameters};

pub use split::{split, Partition, SplitSpec};
pub use synthetic::{kb_corpus, synthetic_lpp_corpus, synthetic_regression_corpus, SyntheticTask, EDGE_JITTER, EDGE_PER_RADIUS};

/// Relative tolerance on lattice lengths that should be equal.
pub const LENGTH_TOLERANCE: f64 = 1e-3;
/// Absolute tolerance on constrained angles, degrees.
pub const ANGLE_TOLERANCE: f64 = 0.1;

pub const COLUMNS: [&str; 17] = [
    "id",
    "formula",
    "spacegroup",
    "topology",
    "volume",
    "natoms",
    "porosity",
    "acc_porosity",
    "organic_cation",
    "a",
    "b",
    "c",
    "alpha",
    "beta",
    "gamma",
    "target",
    "unit",
];

const REQUIRED: [&str; 3] = ["id", "formula", "spacegroup"];

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} (record {id}): {}", self.line, self.reason),
            None => write!(f, "line {}: {}", self.line, self.reason),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}", summarize(.0))]
    Rows(Vec<RowError>),
    #[error("required column `{0}` is missing")]
    MissingColumn(&'static str),
    #[error("record {id} has no {field}")]
    MissingField { id: String, field: &'static str },
    #[error("unknown dataset format `{0}` (table, lines)")]
    UnknownFormat(String),
    #[error("invalid split `{0}`")]
    BadSplit(String),
    #[error("split {spec} needs at least {needed} records, got {found}")]
    TooFewRecords { spec: String, needed: usize, found: usize },
    #[error("empty dataset")]
    Empty,
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn summarize(rows: &[RowError]) -> String {
    let mut s = format!("{} invalid row(s)", rows.len());
    for r in rows.iter().take(5) {
        s.push_str(&format!("; {r}"));
    }
    if rows.len() > 5 {
        s.push_str("; ...");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// Delimited table with a header row.
    Table,
    /// One JSON object per line.
    Lines,
}

impl DataFormat {
    /// `.jsonl`/`.ndjson`/`.json` are record lines, everything else a table.
    pub fn from_path(path: &Path) -> DataFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => DataFormat::Lines,
            _ => DataFormat::Table,
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "table" | "csv" | "tsv" => Ok(DataFormat::Table),
            "lines" | "jsonl" => Ok(DataFormat::Lines),
            _ => Err(DataError::UnknownFormat(s.into())),
        }
    }
}

/// One crystal with its optional labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalRecord {
    pub id: String,
    pub formula: String,
    pub spacegroup: i64,
    #[serde(default)]
    pub informatics: InformaticsFields,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeParameters>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl CrystalRecord {
    pub fn new(id: impl Into<String>, formula: impl Into<String>, spacegroup: i64) -> Self {
        CrystalRecord {
            id: id.into(),
            formula: formula.into(),
            spacegroup,
            informatics: InformaticsFields::default(),
            lattice: None,
            target: None,
            unit: None,
        }
    }

    pub fn composition(&self) -> Result<FormulaComposition, GrammarError> {
        parse_formula(&self.formula)
    }

    pub fn crystal_system(&self) -> Result<CrystalSystem, GrammarError> {
        crystal_system_of(self.spacegroup)
    }

    /// Hard checks. Returns the constraint warnings that do not reject the
    /// record.
    pub fn validate(&self) -> Result<Vec<String>, String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        self.composition().map_err(|e| e.to_string())?;
        let system = self.crystal_system().map_err(|e| e.to_string())?;
        self.informatics.validate().map_err(|e| e.to_string())?;
        if let Some(t) = self.target {
            if !t.is_finite() {
                return Err(format!("target {t} is not finite"));
            }
        }
        let mut warnings = Vec::new();
        if let Some(l) = &self.lattice {
            l.check_bounds()?;
            for v in lattice_constraints(system).violations(l, LENGTH_TOLERANCE, ANGLE_TOLERANCE) {
                warnings.push(format!("record {}: {} lattice: {v}", self.id, system.name()));
            }
        }
        Ok(warnings)
    }

    /// Token sequence and formula matrix under `vocab`. Informatics fields the
    /// layout does not carry are dropped.
    pub fn to_model_input(&self, vocab: &TokenVocabulary, elements: &ElementEmbeddingTable) -> Result<ModelInput, DataError> {
        let comp = self.composition()?;
        let info = self.informatics.restricted_to(vocab.layout());
        Ok(ModelInput {
            seq: tokenize_crystal(self.spacegroup, &comp, &info, vocab)?,
            formula: embed_formula(&comp, elements)?,
            record_id: Some(self.id.clone()),
        })
    }

    pub fn require_lattice(&self) -> Result<LatticeParameters, DataError> {
        self.lattice.ok_or_else(|| DataError::MissingField {
            id: self.id.clone(),
            field: "lattice parameters",
        })
    }

    pub fn require_target(&self) -> Result<f64, DataError> {
        self.target.ok_or_else(|| DataError::MissingField {
            id: self.id.clone(),
            field: "target",
        })
    }
}

/// Flat on-disk row.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Row {
    id: Option<String>,
    formula: Option<String>,
    spacegroup: Option<i64>,
    topology: Option<String>,
    volume: Option<f64>,
    natoms: Option<u32>,
    porosity: Option<f64>,
    acc_porosity: Option<f64>,
    organic_cation: Option<String>,
    a: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    target: Option<f64>,
    unit: Option<String>,
}

impl Row {
    fn into_record(self) -> Result<CrystalRecord, (Option<String>, String)> {
        let id = self.id.filter(|s| !s.is_empty());
        let fail = |reason: String| (id.clone(), reason);
        let formula = self.formula.filter(|s| !s.is_empty()).ok_or_else(|| fail("missing formula".into()))?;
        let spacegroup = self.spacegroup.ok_or_else(|| fail("missing spacegroup".into()))?;
        let lengths = [self.a, self.b, self.c, self.alpha, self.beta, self.gamma];
        let lattice = match lengths.iter().filter(|v| v.is_some()).count() {
            0 => None,
            6 => Some(LatticeParameters::from_array(lengths.map(Option::unwrap))),
            _ => return Err(fail("lattice needs all of a, b, c, alpha, beta, gamma".into())),
        };
        let id = id.clone().ok_or_else(|| fail("missing id".into()))?;
        let non_empty = |s: Option<String>| s.filter(|s| !s.is_empty());
        Ok(CrystalRecord {
            id,
            formula,
            spacegroup,
            informatics: InformaticsFields {
                topology: non_empty(self.topology),
                unit_cell_volume: self.volume,
                atom_count: self.natoms,
                porosity_fraction: self.porosity,
                accessible_void_fraction: self.acc_porosity,
                organic_cation: non_empty(self.organic_cation),
            },
            lattice,
            target: self.target,
            unit: non_empty(self.unit),
        })
    }

    fn from_record(r: &CrystalRecord) -> Row {
        let l = r.lattice.map(LatticeParameters::to_array);
        let at = |i: usize| l.map(|v| v[i]);
        Row {
            id: Some(r.id.clone()),
            formula: Some(r.formula.clone()),
            spacegroup: Some(r.spacegroup),
            topology: r.informatics.topology.clone(),
            volume: r.informatics.unit_cell_volume,
            natoms: r.informatics.atom_count,
            porosity: r.informatics.porosity_fraction,
            acc_porosity: r.informatics.accessible_void_fraction,
            organic_cation: r.informatics.organic_cation.clone(),
            a: at(0),
            b: at(1),
            c: at(2),
            alpha: at(3),
            beta: at(4),
            gamma: at(5),
            target: r.target,
            unit: r.unit.clone(),
        }
    }
}

/// Loaded records with the diagnostics that did not reject them.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<CrystalRecord>,
    pub warnings: Vec<String>,
    /// Rows skipped under `allow_partial`.
    pub rejected: Vec<RowError>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Keep valid rows when some fail instead of rejecting the file.
    pub allow_partial: bool,
}

pub fn load_dataset(path: &Path, format: DataFormat, opts: LoadOptions) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    let delimiter = if path.extension().and_then(|e| e.to_str()) == Some("tsv") { b'\t' } else { b',' };
    read_dataset(std::io::BufReader::new(file), format, delimiter, opts)
}

pub fn read_dataset<R: BufRead>(reader: R, format: DataFormat, delimiter: u8, opts: LoadOptions) -> Result<Dataset, DataError> {
    let mut parsed: Vec<(usize, Result<Row, String>)> = Vec::new();
    let mut warnings = Vec::new();
    match format {
        DataFormat::Table => {
            let mut rdr = csv::ReaderBuilder::new().delimiter(delimiter).trim(csv::Trim::All).from_reader(reader);
            let headers = rdr.headers()?.clone();
            for col in REQUIRED {
                if !headers.iter().any(|h| h == col) {
                    return Err(DataError::MissingColumn(col));
                }
            }
            for h in headers.iter().filter(|h| !COLUMNS.contains(h)) {
                warnings.push(format!("ignoring unknown column `{h}`"));
            }
            for result in rdr.deserialize::<Row>() {
                match result {
                    Ok(row) => parsed.push((parsed.len() + 2, Ok(row))),
                    Err(e) => {
                        let line = e.position().map_or(parsed.len() + 2, |p| p.line() as usize);
                        parsed.push((line, Err(e.to_string())));
                    }
                }
            }
        }
        DataFormat::Lines => {
            let mut unknown = HashSet::new();
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: Result<serde_json::Map<String, serde_json::Value>, _> = serde_json::from_str(&line);
                let row = value.map_err(|e| e.to_string()).and_then(|m| {
                    for k in m.keys().filter(|k| !COLUMNS.contains(&k.as_str())) {
                        if unknown.insert(k.clone()) {
                            warnings.push(format!("ignoring unknown field `{k}`"));
                        }
                    }
                    serde_json::from_value::<Row>(serde_json::Value::Object(m)).map_err(|e| e.to_string())
                });
                parsed.push((i + 1, row));
            }
        }
    }
    let mut records = Vec::with_capacity(parsed.len());
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (line, row) in parsed {
        let record = row
            .map_err(|reason| (None, reason))
            .and_then(Row::into_record)
            .and_then(|r| match r.validate() {
                Ok(w) => Ok((r, w)),
                Err(reason) => Err((Some(r.id.clone()), reason)),
            });
        match record {
            Ok((r, w)) => {
                if !seen.insert(r.id.clone()) {
                    warnings.push(format!("line {line}: duplicate id {}", r.id));
                }
                warnings.extend(w.into_iter().map(|w| format!("line {line}: {w}")));
                records.push(r);
            }
            Err((id, reason)) => errors.push(RowError { line, id, reason }),
        }
    }
    if !errors.is_empty() && !opts.allow_partial {
        return Err(DataError::Rows(errors));
    }
    Ok(Dataset {
        records,
        warnings,
        rejected: errors,
    })
}

pub fn write_dataset<W: Write>(records: &[CrystalRecord], out: W, format: DataFormat, delimiter: u8) -> Result<(), DataError> {
    match format {
        DataFormat::Table => {
            let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
            for r in records {
                w.serialize(Row::from_record(r))?;
            }
            if records.is_empty() {
                w.write_record(COLUMNS)?;
            }
            w.flush()?;
        }
        DataFormat::Lines => {
            let mut out = out;
            for r in records {
                let mut map = serde_json::to_value(Row::from_record(r)).expect("row serializes");
                if let serde_json::Value::Object(m) = &mut map {
                    m.retain(|_, v| !v.is_null());
                }
                writeln!(out, "{map}")?;
            }
        }
    }
    Ok(())
}

pub fn save_dataset(records: &[CrystalRecord], path: &Path, format: DataFormat) -> Result<(), DataError> {
    let delimiter = if path.extension().and_then(|e| e.to_str()) == Some("tsv") { b'\t' } else { b',' };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(records, file, format, delimiter)
}

pub fn file_sha256(path: &Path) -> Result<String, DataError> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Reduced formula with element chunks in sorted order, so `ClNa` and
/// `Na2Cl2` share a key with `NaCl`.
fn formula_key(comp: &FormulaComposition) -> String {
    let reduced = comp.to_formula_string();
    let mut chunks: Vec<&str> = Vec::new();
    let mut start = 0;
    for (i, ch) in reduced.char_indices().skip(1) {
        if ch.is_ascii_uppercase() {
            chunks.push(&reduced[start..i]);
            start = i;
        }
    }
    chunks.push(&reduced[start..]);
    chunks.sort_unstable();
    chunks.concat()
}

/// Merges records sharing a normalized formula and space group. Lattice
/// parameters and targets are averaged over the repeats that carry them;
/// the first repeat supplies the id and informatics fields.
pub fn dedup_average(records: &[CrystalRecord]) -> Result<Vec<CrystalRecord>, DataError> {
    let mut order: Vec<(String, i64)> = Vec::new();
    let mut groups: BTreeMap<(String, i64), Vec<&CrystalRecord>> = BTreeMap::new();
    for r in records {
        let key = (formula_key(&r.composition()?), r.spacegroup);
        let g = groups.entry(key.clone()).or_default();
        if g.is_empty() {
            order.push(key);
        }
        g.push(r);
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let mut out = g[0].clone();
            let lattices: Vec<[f64; 6]> = g.iter().filter_map(|r| r.lattice.map(LatticeParameters::to_array)).collect();
            if !lattices.is_empty() {
                let mut mean = [0.0; 6];
                for l in &lattices {
                    for (m, v) in mean.iter_mut().zip(l) {
                        *m += v;
                    }
                }
                out.lattice = Some(LatticeParameters::from_array(mean.map(|m| m / lattices.len() as f64)));
            }
            let targets: Vec<f64> = g.iter().filter_map(|r| r.target).collect();
            if !targets.is_empty() {
                out.target = Some(targets.iter().sum::<f64>() / targets.len() as f64);
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{build_vocabulary, BinSpec, InfoLayout};
    use proptest::prelude::*;

    fn read(text: &str, format: DataFormat) -> Result<Dataset, DataError> {
        read_dataset(text.as_bytes(), format, b',', LoadOptions::default())
    }

    #[test]
    fn one_valid_row() {
        let d = read("id,formula,spacegroup\nx1,NaCl,225\n", DataFormat::Table).unwrap();
        assert_eq!(d.records, vec![CrystalRecord::new("x1", "NaCl", 225)]);
        assert!(d.warnings.is_empty());
    }

    #[test]
    fn bad_spacegroup_names_the_row() {
        let err = read("id,formula,spacegroup\nok,NaCl,225\nbad,NaCl,231\n", DataFormat::Table).unwrap_err();
        match err {
            DataError::Rows(rows) => {
                assert_eq!(rows.len(), 1);
                assert_eq!(rows[0].line, 3);
                assert_eq!(rows[0].id.as_deref(), Some("bad"));
                assert!(rows[0].reason.contains("231"));
            }
            other => panic!("{other}"),
        }
        let partial = read_dataset(
            "id,formula,spacegroup\nok,NaCl,225\nbad,NaCl,231\n".as_bytes(),
            DataFormat::Table,
            b',',
            LoadOptions { allow_partial: true },
        )
        .unwrap();
        assert_eq!(partial.records.len(), 1);
        assert_eq!(partial.rejected.len(), 1);
    }

    #[test]
    fn mof_row_carries_topology_and_volume() {
        let d = read(
            "id,formula,spacegroup,topology,volume,porosity,extra\nm1,Zn4C24H12O13,225,pcu.cat0,17000.5,81.2,zzz\n",
            DataFormat::Table,
        )
        .unwrap();
        let info = &d.records[0].informatics;
        assert_eq!(info.topology.as_deref(), Some("pcu.cat0"));
        assert_eq!(info.unit_cell_volume, Some(17000.5));
        assert_eq!(d.warnings, vec!["ignoring unknown column `extra`".to_string()]);
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(read("id,formula\nx,NaCl\n", DataFormat::Table), Err(DataError::MissingColumn("spacegroup"))));
        let e = read("id,formula,spacegroup,a\nx,NaCl,225,4.0\n", DataFormat::Table).unwrap_err();
        assert!(e.to_string().contains("lattice needs all"));
        let e = read("id,formula,spacegroup\nx,Xx2,225\n", DataFormat::Table).unwrap_err();
        assert!(e.to_string().contains("line 2"));
        let e = read("{\"id\":\"a\",\"formula\":\"Si\",\"spacegroup\":\"p\"}\n", DataFormat::Lines).unwrap_err();
        assert!(e.to_string().contains("line 1"));
        let e = read("id,formula,spacegroup,porosity\nx,Si,227,140\n", DataFormat::Table).unwrap_err();
        assert!(e.to_string().contains("porosity"));
    }

    #[test]
    fn constraint_violation_warns_without_rejecting() {
        let d = read(
            "id,formula,spacegroup,a,b,c,alpha,beta,gamma\nx,NaCl,225,5.6,5.6,5.7,90,90,90\n",
            DataFormat::Table,
        )
        .unwrap();
        assert_eq!(d.records[0].lattice.unwrap().c, 5.7);
        assert_eq!(d.warnings.len(), 1);
        assert!(d.warnings[0].contains("cubic"));
    }

    #[test]
    fn lines_format_and_tsv() {
        let d = read("{\"id\":\"a\",\"formula\":\"Si\",\"spacegroup\":227,\"target\":1.5,\"unit\":\"eV\"}\n\n", DataFormat::Lines).unwrap();
        assert_eq!(d.records[0].target, Some(1.5));
        assert_eq!(d.records[0].unit.as_deref(), Some("eV"));
        let t = read_dataset("id\tformula\tspacegroup\nq\tGaAs\t216\n".as_bytes(), DataFormat::Table, b'\t', LoadOptions::default()).unwrap();
        assert_eq!(t.records[0].spacegroup, 216);
    }

    fn arb_record() -> impl Strategy<Value = CrystalRecord> {
        (
            "[a-z][a-z0-9]{0,6}",
            prop::sample::select(vec!["NaCl", "Fe2O3", "CaTiO3", "Zn4C24H12O13", "Si"]),
            1i64..=230,
            prop::option::of(1.0f64..1e5),
            prop::option::of(0u32..500),
            prop::option::of(-10.0f64..10.0),
            prop::option::of(prop::sample::select(vec!["pcu", "dia.cat0"])),
            prop::option::of(prop::array::uniform6(1.0f64..100.0)),
        )
            .prop_map(|(id, f, sg, vol, n, t, topo, lat)| CrystalRecord {
                id,
                formula: f.into(),
                spacegroup: sg,
                informatics: InformaticsFields {
                    topology: topo.map(String::from),
                    unit_cell_volume: vol,
                    atom_count: n.map(|n| n + 1),
                    ..Default::default()
                },
                lattice: lat.map(LatticeParameters::from_array),
                target: t,
                unit: None,
            })
    }

    proptest! {
        #[test]
        fn write_then_load_is_identity(records in prop::collection::vec(arb_record(), 0..8), lines in any::<bool>()) {
            let format = if lines { DataFormat::Lines } else { DataFormat::Table };
            let mut buf = Vec::new();
            write_dataset(&records, &mut buf, format, b',').unwrap();
            let back = read_dataset(&buf[..], format, b',', LoadOptions::default()).unwrap();
            prop_assert_eq!(back.records, records);
        }
    }

    #[test]
    fn dedup_averages_repeats() {
        let mut a = CrystalRecord::new("a", "NaCl", 225);
        a.lattice = Some(LatticeParameters::new(5.0, 5.0, 5.0, 90.0, 90.0, 90.0));
        a.target = Some(1.0);
        let mut b = CrystalRecord::new("b", "Na1Cl1", 225);
        b.lattice = Some(LatticeParameters::new(6.0, 6.0, 6.0, 90.0, 90.0, 90.0));
        let mut c = CrystalRecord::new("c", "ClNa", 225);
        c.target = Some(3.0);
        let d = CrystalRecord::new("d", "NaCl", 221);
        let out = dedup_average(&[a, b, c, d]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].id, "a");
        assert_eq!(out[0].lattice.unwrap().a, 5.5);
        assert_eq!(out[0].target, Some(2.0));
        assert_eq!(out[1].id, "d");
    }

    #[test]
    fn model_input_drops_fields_outside_the_layout() {
        let vocab = build_vocabulary(InfoLayout::none(), BinSpec::default(), &[]);
        let mut r = CrystalRecord::new("m", "ZnO", 186);
        r.informatics.unit_cell_volume = Some(48.0);
        let input = r.to_model_input(&vocab, &ElementEmbeddingTable::synthetic(0)).unwrap();
        assert_eq!(input.seq.len(), 33);
        assert_eq!(input.record_id.as_deref(), Some("m"));
    }
}
