use std::path::{Path, PathBuf};

use anyhow::Context;
use toml::{Table, Value};

use sgformer::data::{
    file_sha256, kb_corpus, load_dataset, synthetic_lpp_corpus, synthetic_regression_corpus, CrystalRecord, DataFormat,
    LoadOptions, SyntheticTask,
};
use sgformer::grammar::kb_sha256;
use sgformer::training::{ElementSet, TrainConfig};

use crate::fail::{Classify, Failure};

/// Keys handled by the command line rather than the training configuration.
const CLI_KEYS: &[&str] = &[
    "data",
    "checkpoint",
    "out_dir",
    "out",
    "elements",
    "format",
    "allow_partial",
    "layer",
    "rho_grid",
    "r_probe",
    "flood_fill",
    "radii",
];

/// Settings from a config file with command-line values layered on top.
pub struct Layers {
    table: Table,
}

impl Layers {
    pub fn load(config: Option<&Path>) -> Result<Self, Failure> {
        let table = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).invalid()?;
                text.parse::<Table>().with_context(|| format!("parsing {}", p.display())).invalid()?
            }
            None => Table::new(),
        };
        Ok(Layers { table })
    }

    pub fn set<V: Into<Value>>(&mut self, key: &str, v: Option<V>) {
        if let Some(v) = v {
            self.table.insert(key.to_string(), v.into());
        }
    }

    pub fn set_usize(&mut self, key: &str, v: Option<usize>) {
        self.set(key, v.map(|x| x as i64));
    }

    pub fn set_u64(&mut self, key: &str, v: Option<u64>) {
        self.set(key, v.map(|x| x as i64));
    }

    pub fn set_path(&mut self, key: &str, v: &Option<PathBuf>) {
        self.set(key, v.as_ref().map(|p| p.display().to_string()));
    }

    pub fn str(&self, key: &str) -> Result<Option<String>, Failure> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(Failure::invalid(format!("`{key}` must be a string, found {other}"))),
        }
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>, Failure> {
        Ok(self.str(key)?.map(PathBuf::from))
    }

    pub fn require_path(&self, key: &str, flag: &str) -> Result<PathBuf, Failure> {
        self.path(key)?
            .ok_or_else(|| Failure::invalid(format!("missing {flag} (config key `{key}`)")))
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>, Failure> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(x)) => Ok(Some(*x as f64)),
            Some(other) => Err(Failure::invalid(format!("`{key}` must be a number, found {other}"))),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>, Failure> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Integer(x)) if *x >= 0 => Ok(Some(*x as usize)),
            Some(other) => Err(Failure::invalid(format!("`{key}` must be a non-negative integer, found {other}"))),
        }
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>, Failure> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(other) => Err(Failure::invalid(format!("`{key}` must be true or false, found {other}"))),
        }
    }

    /// Training configuration: a named preset (if `preset` names one) under
    /// the remaining keys.
    pub fn train_config(&self) -> Result<TrainConfig, Failure> {
        let mut keys = self.table.clone();
        for k in CLI_KEYS {
            keys.remove(*k);
        }
        let recipe = keys.get("preset").and_then(Value::as_str).and_then(TrainConfig::named);
        if recipe.is_some() {
            keys.remove("preset");
        }
        let mut merged = Table::try_from(recipe.unwrap_or_default()).invalid()?;
        merged.extend(keys);
        let cfg: TrainConfig = merged.try_into().context("configuration").invalid()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> Result<u64, Failure> {
        Ok(self.usize("seed")?.unwrap_or(0) as u64)
    }
}

/// Records plus a fingerprint of where they came from.
pub struct Source {
    pub records: Vec<CrystalRecord>,
    pub name: String,
    pub digest: String,
}

/// `kb-corpus`, `synthetic-lpp:N`, `synthetic-regression:N` or a file path.
pub fn load_source(spec: &str, seed: u64, allow_partial: bool) -> Result<Source, Failure> {
    if spec == "kb-corpus" {
        return Ok(Source {
            records: kb_corpus(),
            name: spec.into(),
            digest: kb_sha256().into(),
        });
    }
    if let Some(rest) = spec.strip_prefix("synthetic-") {
        if let Some((task, n)) = rest.split_once(':') {
            let task: SyntheticTask = task.parse().map_err(Failure::invalid)?;
            let n: usize = n.parse().map_err(|_| Failure::invalid(format!("bad record count in `{spec}`")))?;
            let records = match task {
                SyntheticTask::Lpp => synthetic_lpp_corpus(n, seed),
                SyntheticTask::Regression => synthetic_regression_corpus(n, seed),
            };
            return Ok(Source {
                records,
                name: spec.into(),
                digest: format!("{spec}@{seed}"),
            });
        }
    }
    let path = Path::new(spec);
    let data = load_dataset(path, DataFormat::from_path(path), LoadOptions { allow_partial })
        .with_context(|| format!("loading {spec}"))
        .invalid()?;
    for w in &data.warnings {
        log::warn!("{spec}: {w}");
    }
    for r in &data.rejected {
        log::warn!("{spec}: skipped {r}");
    }
    Ok(Source {
        records: data.records,
        name: spec.into(),
        digest: file_sha256(path).invalid()?,
    })
}

pub fn element_set(layers: &Layers, cfg: &TrainConfig) -> Result<ElementSet, Failure> {
    match layers.path("elements")? {
        Some(p) => Ok(ElementSet::load(&p)?),
        None => Ok(ElementSet::synthetic(cfg.element_seed)),
    }
}
