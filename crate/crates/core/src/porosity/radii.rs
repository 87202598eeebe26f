use std::collections::BTreeMap;
use std::path::Path;

use super::PorosityError;

const BUNDLED: &str = include_str!("../../data/vdw_radii.txt");

/// Radius used for elements missing from the bundled table.
pub const FALLBACK_RADIUS: f64 = 2.0;

/// Element symbol to van der Waals radius in Å.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusTable {
    radii: BTreeMap<String, f64>,
    fallback: Option<f64>,
}

impl Default for RadiusTable {
    /// Bundled table with [`FALLBACK_RADIUS`] for unlisted elements.
    fn default() -> Self {
        let mut t = Self::parse(BUNDLED).expect("bundled radius table parses");
        t.fallback = Some(FALLBACK_RADIUS);
        t
    }
}

impl RadiusTable {
    /// Every element gets `r`.
    pub fn uniform(r: f64) -> Self {
        RadiusTable {
            radii: BTreeMap::new(),
            fallback: Some(r),
        }
    }

    /// `symbol radius` per line, `#` comments. No fallback.
    pub fn parse(text: &str) -> Result<Self, PorosityError> {
        let mut radii = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| PorosityError::Parse { line: i + 1, reason };
            let mut words = line.split_whitespace();
            let (Some(sym), Some(r), None) = (words.next(), words.next(), words.next()) else {
                return Err(bad("expected `symbol radius`".into()));
            };
            let r: f64 = r.parse().map_err(|_| bad(format!("`{r}` is not a number")))?;
            if !(r.is_finite() && r >= 0.0) {
                return Err(bad(format!("radius {r} must be finite and non-negative")));
            }
            radii.insert(sym.to_string(), r);
        }
        Ok(RadiusTable { radii, fallback: None })
    }

    pub fn load(path: &Path) -> Result<Self, PorosityError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Entries of `other` replace ours.
    pub fn with_overrides(mut self, other: &RadiusTable) -> Self {
        for (k, v) in &other.radii {
            self.radii.insert(k.clone(), *v);
        }
        if other.fallback.is_some() {
            self.fallback = other.fallback;
        }
        self
    }

    pub fn set(&mut self, symbol: &str, r: f64) {
        self.radii.insert(symbol.to_string(), r);
    }

    pub fn radius(&self, symbol: &str) -> Option<f64> {
        self.radii.get(symbol).copied().or(self.fallback)
    }

    /// Same table with every radius multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        RadiusTable {
            radii: self.radii.iter().map(|(s, r)| (s.clone(), r * k)).collect(),
            fallback: self.fallback.map(|r| r * k),
        }
    }
}
