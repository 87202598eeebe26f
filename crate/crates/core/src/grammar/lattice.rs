use serde::{Deserialize, Serialize};

use super::CrystalSystem;

/// Unit-cell edge lengths in Å and angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeParameters {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LatticeParameters {
    pub fn new(a: f64, b: f64, c: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        LatticeParameters {
            a,
            b,
            c,
            alpha,
            beta,
            gamma,
        }
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        LatticeParameters::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.a, self.b, self.c, self.alpha, self.beta, self.gamma]
    }

    pub fn lengths(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn angles(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }

    /// Positive finite lengths and angles strictly inside (0°, 180°).
    pub fn check_bounds(&self) -> Result<(), String> {
        for (name, v) in ["a", "b", "c"].iter().zip(self.lengths()) {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("lattice length {name} = {v} must be positive"));
            }
        }
        for (name, v) in ["alpha", "beta", "gamma"].iter().zip(self.angles()) {
            if !(v.is_finite() && v > 0.0 && v < 180.0) {
                return Err(format!("lattice angle {name} = {v} must lie in (0, 180)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LengthAxis {
    A,
    B,
    C,
}

/// Symmetry-imposed relations between lattice parameters.
///
/// `length_classes` partitions {a, b, c} into groups that must be equal;
/// `angle_values` fixes individual angles in degrees (`None` means free).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeConstraints {
    pub length_classes: Vec<Vec<LengthAxis>>,
    pub angle_values: [Option<f64>; 3],
}

impl LatticeConstraints {
    pub fn is_unconstrained(&self) -> bool {
        self.length_classes.iter().all(|c| c.len() == 1) && self.angle_values.iter().all(Option::is_none)
    }

    /// Violations of the constraints, using relative tolerance for lengths and
    /// absolute degrees for angles. Empty when satisfied.
    pub fn violations(&self, p: &LatticeParameters, length_rel_tol: f64, angle_tol_deg: f64) -> Vec<String> {
        let mut out = Vec::new();
        let len = |ax: LengthAxis| match ax {
            LengthAxis::A => p.a,
            LengthAxis::B => p.b,
            LengthAxis::C => p.c,
        };
        for class in &self.length_classes {
            let vals: Vec<f64> = class.iter().map(|&ax| len(ax)).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo > length_rel_tol * hi.abs() {
                out.push(format!("lengths {class:?} should be equal, got {vals:?}"));
            }
        }
        for ((name, want), got) in ["alpha", "beta", "gamma"]
            .iter()
            .zip(self.angle_values)
            .zip(p.angles())
        {
            if let Some(want) = want {
                if (got - want).abs() > angle_tol_deg {
                    out.push(format!("{name} should be {want}, got {got}"));
                }
            }
        }
        out
    }
}

/// Constraint set for a crystal system in its conventional setting.
///
/// Trigonal groups use hexagonal axes, matching the knowledge-base setting of
/// the rhombohedral groups; monoclinic uses unique axis b.
pub fn lattice_constraints(system: CrystalSystem) -> LatticeConstraints {
    use LengthAxis::*;
    let free3 = vec![vec![A], vec![B], vec![C]];
    let (length_classes, angle_values) = match system {
        CrystalSystem::Triclinic => (free3, [None, None, None]),
        CrystalSystem::Monoclinic => (free3, [Some(90.0), None, Some(90.0)]),
        CrystalSystem::Orthorhombic => (free3, [Some(90.0); 3]),
        CrystalSystem::Tetragonal => (vec![vec![A, B], vec![C]], [Some(90.0); 3]),
        CrystalSystem::Trigonal | CrystalSystem::Hexagonal => (
            vec![vec![A, B], vec![C]],
            [Some(90.0), Some(90.0), Some(120.0)],
        ),
        CrystalSystem::Cubic => (vec![vec![A, B, C]], [Some(90.0); 3]),
    };
    LatticeConstraints {
        length_classes,
        angle_values,
    }
}
