use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

/// How records are partitioned for finetuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SplitSpec {
    KFold(usize),
    /// Train, (validation,) test fractions.
    Ratio(Vec<f64>),
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = || DataError::BadSplit(self.to_string());
        match self {
            SplitSpec::KFold(k) if *k < 2 => Err(bad()),
            SplitSpec::Ratio(parts) => {
                if !(2..=3).contains(&parts.len()) || parts.iter().any(|&p| !(p > 0.0)) {
                    return Err(bad());
                }
                if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(bad());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn has_validation(&self) -> bool {
        matches!(self, SplitSpec::Ratio(p) if p.len() == 3)
    }
}

impl std::fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitSpec::KFold(k) => write!(f, "kfold{k}"),
            SplitSpec::Ratio(p) => {
                let parts: Vec<String> = p.iter().map(|x| x.to_string()).collect();
                write!(f, "ratio:{}", parts.join(","))
            }
        }
    }
}

impl std::str::FromStr for SplitSpec {
    type Err = DataError;

    /// Accepts `kfold5`, `kfold:5`, `ratio:0.7,0.15,0.15`, `70/15/15` and `80/20`.
    fn from_str(s: &str) -> Result<Self, DataError> {
        let bad = || DataError::BadSplit(s.to_string());
        let spec = if let Some(k) = s.strip_prefix("kfold") {
            SplitSpec::KFold(k.trim_start_matches(':').parse().map_err(|_| bad())?)
        } else if let Some(r) = s.strip_prefix("ratio:") {
            SplitSpec::Ratio(r.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?)
        } else if s.contains('/') {
            SplitSpec::Ratio(
                s.split('/')
                    .map(|x| x.trim().parse::<f64>().map(|p| p / 100.0).map_err(|_| bad()))
                    .collect::<Result<_, _>>()?,
            )
        } else {
            return Err(bad());
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for SplitSpec {
    type Error = DataError;

    fn try_from(s: String) -> Result<Self, DataError> {
        s.parse()
    }
}

impl From<SplitSpec> for String {
    fn from(s: SplitSpec) -> String {
        s.to_string()
    }
}

/// Disjoint index groups covering `0..n`: the folds of a k-fold split, or
/// train, (validation,) test for a ratio split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub groups: Vec<Vec<usize>>,
}

impl Partition {
    /// Training indices (every other group) and the held-out group `i`.
    pub fn fold(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        let train = self
            .groups
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, g)| g.iter().copied())
            .collect();
        (train, self.groups[i].clone())
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the groups are disjoint and cover `0..n`.
    pub fn is_cover(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.groups.iter().flatten() {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Seeded shuffle of `0..n` cut according to `spec`.
///
/// Ratio splits give the non-training parts `round(fraction * n)` records
/// and the training part the rest. K-fold sizes differ by at most one.
pub fn split(n: usize, spec: &SplitSpec, seed: u64) -> Result<Partition, DataError> {
    spec.validate()?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sizes: Vec<usize> = match spec {
        SplitSpec::KFold(k) => {
            if *k > n {
                return Err(DataError::TooFewRecords {
                    spec: spec.to_string(),
                    needed: *k,
                    found: n,
                });
            }
            (0..*k).map(|i| n / k + usize::from(i < n % k)).collect()
        }
        SplitSpec::Ratio(parts) => {
            let rest: Vec<usize> = parts[1..].iter().map(|p| (p * n as f64).round() as usize).collect();
            let held: usize = rest.iter().sum();
            if held >= n || rest.contains(&0) {
                return Err(DataError::TooFewRecords {
                    spec: spec.to_string(),
                    needed: parts.len(),
                    found: n,
                });
            }
            std::iter::once(n - held).chain(rest).collect()
        }
    };
    let mut groups = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        let mut g = idx[start..start + s].to_vec();
        g.sort_unstable();
        groups.push(g);
        start += s;
    }
    Ok(Partition { groups })
}
