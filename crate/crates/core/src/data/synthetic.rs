use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CrystalRecord;
use crate::grammar::{crystal_system_of, parse_formula, space_groups, CrystalSystem, FormulaComposition, LatticeParameters, ELEMENT_SYMBOLS};
use crate::porosity::RadiusTable;

/// Nominal cell edge per Å of fraction-weighted van der Waals radius.
pub const EDGE_PER_RADIUS: f64 = 3.5;
/// Each free edge is the nominal edge times a factor uniform in `1 ± EDGE_JITTER`.
pub const EDGE_JITTER: f64 = 0.1;
/// Free angle range for triclinic cells, degrees.
const TRICLINIC_ANGLES: (f64, f64) = (70.0, 110.0);
/// Monoclinic β range, degrees.
const MONOCLINIC_BETA: (f64, f64) = (90.0, 120.0);
/// Elements drawn for generated formulas (H through Bi).
const ELEMENT_POOL: usize = 83;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    Lpp,
    Regression,
}

impl std::str::FromStr for SyntheticTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lpp" => Ok(SyntheticTask::Lpp),
            "regression" => Ok(SyntheticTask::Regression),
            _ => Err(format!("unknown synthetic task `{s}` (lpp, regression)")),
        }
    }
}

/// One to four distinct elements with counts 1 to 6.
fn random_formula<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(1..=4);
    let mut out = String::new();
    for i in sample(rng, ELEMENT_POOL, n) {
        out.push_str(ELEMENT_SYMBOLS[i]);
        let count: u32 = rng.gen_range(1..=6);
        if count > 1 {
            out.push_str(&count.to_string());
        }
    }
    out
}

/// `EDGE_PER_RADIUS` times the fraction-weighted radius of the elements.
pub fn nominal_edge(composition: &FormulaComposition, radii: &RadiusTable) -> f64 {
    let mean: f64 = composition
        .entries()
        .iter()
        .map(|(el, f)| f * radii.radius(el).expect("table has a fallback"))
        .sum();
    EDGE_PER_RADIUS * mean
}

fn random_lattice<R: Rng>(system: CrystalSystem, edge: f64, rng: &mut R) -> LatticeParameters {
    let mut len = || edge * rng.gen_range(1.0 - EDGE_JITTER..1.0 + EDGE_JITTER);
    let (a, b, c) = (len(), len(), len());
    use CrystalSystem::*;
    match system {
        Triclinic => {
            let mut ang = || rng.gen_range(TRICLINIC_ANGLES.0..TRICLINIC_ANGLES.1);
            LatticeParameters::new(a, b, c, ang(), ang(), ang())
        }
        Monoclinic => LatticeParameters::new(a, b, c, 90.0, rng.gen_range(MONOCLINIC_BETA.0..MONOCLINIC_BETA.1), 90.0),
        Orthorhombic => LatticeParameters::new(a, b, c, 90.0, 90.0, 90.0),
        Tetragonal => LatticeParameters::new(a, a, c, 90.0, 90.0, 90.0),
        Trigonal | Hexagonal => LatticeParameters::new(a, a, c, 90.0, 90.0, 120.0),
        Cubic => LatticeParameters::new(a, a, a, 90.0, 90.0, 90.0),
    }
}

/// Records with uniformly drawn space groups and lattice parameters that
/// satisfy the crystal-system constraints exactly. Free lengths scatter
/// around [`nominal_edge`] of the formula, triclinic angles are uniform in
/// 70-110°, monoclinic β in 90-120°.
pub fn synthetic_lpp_corpus(n: usize, seed: u64) -> Vec<CrystalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radii = RadiusTable::default();
    (0..n)
        .map(|i| {
            let sg = rng.gen_range(1..=230i64);
            let system = crystal_system_of(sg).expect("drawn in range");
            let mut r = CrystalRecord::new(format!("lpp-{i}"), random_formula(&mut rng), sg);
            let edge = nominal_edge(&r.composition().expect("generated formula parses"), &radii);
            r.lattice = Some(random_lattice(system, edge, &mut rng));
            r
        })
        .collect()
}

/// Regression records whose target is
/// `system_index + 2 * mixing_entropy` (system index 0 = triclinic up to
/// 6 = cubic, entropy of the element fractions in nats) plus uniform noise
/// spanning 1% of the noiseless target range.
pub fn synthetic_regression_corpus(n: usize, seed: u64) -> Vec<CrystalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records: Vec<CrystalRecord> = (0..n)
        .map(|i| {
            let sg = rng.gen_range(1..=230i64);
            let mut r = CrystalRecord::new(format!("reg-{i}"), random_formula(&mut rng), sg);
            let system = crystal_system_of(sg).expect("drawn in range");
            let entropy = parse_formula(&r.formula).expect("generated formula parses").mixing_entropy();
            r.target = Some(system.index() as f64 + 2.0 * entropy);
            r
        })
        .collect();
    let (lo, hi) = records
        .iter()
        .filter_map(|r| r.target)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    let half = 0.005 * (hi - lo);
    for r in &mut records {
        let noise = if half > 0.0 { rng.gen_range(-half..=half) } else { 0.0 };
        r.target = r.target.map(|t| t + noise);
    }
    records
}

/// One record per space group with a fixed pseudo-random formula, for
/// masked-token pretraining on the knowledge base itself.
pub fn kb_corpus() -> Vec<CrystalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    space_groups()
        .records()
        .iter()
        .map(|sg| CrystalRecord::new(format!("sg-{}", sg.number), random_formula(&mut rng), i64::from(sg.number)))
        .collect()
}
