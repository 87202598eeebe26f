use serde::{Deserialize, Serialize};

use super::ObjectiveError;

/// Per-column standardization fitted on a training split.
///
/// Columns flagged as logarithmic are transformed with `ln` before
/// centering, so `inverse` returns values on the original scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub log: Vec<bool>,
}

impl TargetScaler {
    pub fn fit(rows: &[Vec<f64>], log: &[bool]) -> Result<Self, ObjectiveError> {
        let width = log.len();
        if rows.is_empty() {
            return Err(ObjectiveError::MissingTargets);
        }
        let mut cols = vec![Vec::with_capacity(rows.len()); width];
        for row in rows {
            if row.len() != width {
                return Err(ObjectiveError::ScalerWidth {
                    expected: width,
                    found: row.len(),
                });
            }
            for (c, (&x, &lg)) in row.iter().zip(log).enumerate() {
                cols[c].push(if lg { x.ln() } else { x });
            }
        }
        let mut mean = Vec::with_capacity(width);
        let mut std = Vec::with_capacity(width);
        for (column, xs) in cols.iter().enumerate() {
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let s = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
            if !(m.is_finite() && s.is_finite()) {
                return Err(ObjectiveError::DegenerateTarget { column });
            }
            mean.push(m);
            // constant columns are only centred
            std.push(if s > 1e-12 * m.abs().max(1.0) { s } else { 1.0 });
        }
        Ok(TargetScaler {
            mean,
            std,
            log: log.to_vec(),
        })
    }

    /// Lengths `a, b, c` on a log scale, angles linear.
    pub fn fit_lattice(rows: &[[f64; 6]]) -> Result<Self, ObjectiveError> {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Self::fit(&rows, &[true, true, true, false, false, false])
    }

    pub fn fit_scalar(values: &[f64]) -> Result<Self, ObjectiveError> {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        Self::fit(&rows, &[false])
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, row: &[f64]) -> Result<(), ObjectiveError> {
        if row.len() != self.width() {
            return Err(ObjectiveError::ScalerWidth {
                expected: self.width(),
                found: row.len(),
            });
        }
        Ok(())
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check(row)?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(c, &x)| ((if self.log[c] { x.ln() } else { x }) - self.mean[c]) / self.std[c])
            .collect())
    }

    pub fn inverse(&self, row: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check(row)?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(c, &z)| {
                let x = z * self.std[c] + self.mean[c];
                if self.log[c] {
                    x.exp()
                } else {
                    x
                }
            })
            .collect())
    }

    pub fn transform_lattice(&self, row: &[f64; 6]) -> Result<[f64; 6], ObjectiveError> {
        let v = self.transform(row)?;
        let mut out = [0.0; 6];
        out.copy_from_slice(&v);
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scaler serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        serde_json::from_str(s).map_err(|e| format!("scaler: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fit_standardizes() {
        let s = TargetScaler::fit_scalar(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, vec![2.5]);
        assert!((s.std[0] - 1.25f64.sqrt()).abs() < 1e-15);
        let z: Vec<f64> = [1.0, 2.0, 3.0, 4.0].iter().map(|&x| s.transform(&[x]).unwrap()[0]).collect();
        assert!(z.iter().sum::<f64>().abs() < 1e-12);
        assert!((z.iter().map(|x| x * x).sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lattice_lengths_are_logged() {
        let rows = [[2.0, 3.0, 4.0, 90.0, 90.0, 90.0], [8.0, 3.5, 5.0, 95.0, 100.0, 120.0]];
        let s = TargetScaler::fit_lattice(&rows).unwrap();
        assert!((s.mean[0] - 4f64.ln()).abs() < 1e-15);
        assert!((s.std[0] - 2f64.ln()).abs() < 1e-15);
        assert!((s.transform_lattice(&rows[0]).unwrap()[0] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_and_width_errors() {
        let flat = TargetScaler::fit_scalar(&[3.0, 3.0]).unwrap();
        assert_eq!((flat.mean[0], flat.std[0]), (3.0, 1.0));
        assert_eq!(flat.transform(&[4.5]).unwrap(), vec![1.5]);
        assert!(matches!(TargetScaler::fit_scalar(&[1.0, f64::INFINITY]), Err(ObjectiveError::DegenerateTarget { column: 0 })));
        assert!(matches!(TargetScaler::fit_scalar(&[1.0, -1.0]).map(|_| ()), Ok(())));
        assert!(matches!(TargetScaler::fit_scalar(&[]), Err(ObjectiveError::MissingTargets)));
        let s = TargetScaler::fit_scalar(&[0.0, 1.0]).unwrap();
        assert!(s.transform(&[1.0, 2.0]).is_err());
        assert_eq!(TargetScaler::from_json(&s.to_json()).unwrap(), s);
    }

    proptest! {
        #[test]
        fn inverse_undoes_transform(
            xs in proptest::collection::vec(0.5f64..50.0, 2..20),
            probe in 0.5f64..50.0,
        ) {
            prop_assume!(xs.iter().any(|&x| (x - xs[0]).abs() > 1e-3));
            let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, x * 2.0 - 3.0]).collect();
            let s = TargetScaler::fit(&rows, &[true, false]).unwrap();
            let p = [probe, probe * 0.7];
            let back = s.inverse(&s.transform(&p).unwrap()).unwrap();
            prop_assert!((back[0] - p[0]).abs() <= 1e-10 * p[0].abs().max(1.0));
            prop_assert!((back[1] - p[1]).abs() <= 1e-10 * p[1].abs().max(1.0));
        }
    }
}
