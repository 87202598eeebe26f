use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;
use crate::grammar::LatticeParameters;

fn site(el: &str, f: [f64; 3]) -> Site {
    Site { element: el.into(), frac: f }
}

fn sphere_void(r: f64, volume: f64) -> f64 {
    100.0 * (1.0 - 4.0 / 3.0 * PI * r.powi(3) / volume)
}

fn opts(density: f64, probe: f64, flood_fill: bool) -> PorosityOptions {
    PorosityOptions {
        grid: GridSpec::new(density).unwrap(),
        probe_radius: probe,
        flood_fill,
        workers: 1,
    }
}

fn single_sphere(offset: [f64; 3]) -> PeriodicStructure {
    PeriodicStructure::cubic(10.0, vec![site("X", offset)]).unwrap()
}

#[test]
fn empty_cell_is_all_void() {
    let s = PeriodicStructure::cubic(7.3, vec![]).unwrap();
    let r = compute_porosity(&s, &RadiusTable::default(), &PorosityOptions::default()).unwrap();
    assert_eq!(r.void_fraction, 100.0);
    assert_eq!(r.accessible_fraction, 100.0);
    assert_eq!(r.total, 37 * 37 * 37);
    assert_eq!(r.dims, [37, 37, 37]);
}

#[test]
fn single_sphere_matches_the_analytic_volume() {
    let s = single_sphere([0.0, 0.0, 0.0]);
    let radii = RadiusTable::uniform(2.0);
    let r = compute_porosity(&s, &radii, &PorosityOptions::default()).unwrap();
    assert_eq!(r.total, 125_000);
    assert_eq!(r.void_fraction, 100.0 * r.unoccupied as f64 / r.total as f64);
    assert!((r.void_fraction - sphere_void(2.0, 1000.0)).abs() <= 0.3, "{}", r.void_fraction);
    assert!((r.accessible_fraction - sphere_void(3.2, 1000.0)).abs() <= 0.5, "{}", r.accessible_fraction);
    assert_eq!(r.accessible, r.admissible);
}

#[test]
fn skewed_cell_sphere_volume() {
    let p = LatticeParameters::new(11.0, 12.0, 13.0, 80.0, 100.0, 105.0);
    let s = PeriodicStructure::from_parameters(&p, vec![site("X", [0.3, 0.6, 0.1])]).unwrap();
    let r = compute_porosity(&s, &RadiusTable::uniform(2.5), &opts(5.0, 0.0, false)).unwrap();
    assert!((r.void_fraction - sphere_void(2.5, s.volume())).abs() <= 0.3, "{}", r.void_fraction);
}

#[test]
fn full_coverage_and_oversized_probe() {
    let s = single_sphere([0.5, 0.5, 0.5]);
    let half_diagonal = 10.0 * 3f64.sqrt() / 2.0;
    let r = compute_porosity(&s, &RadiusTable::uniform(half_diagonal + 0.01), &opts(3.0, 0.0, true)).unwrap();
    assert_eq!((r.void_fraction, r.accessible_fraction), (0.0, 0.0));
    let r = compute_porosity(&s, &RadiusTable::uniform(2.0), &opts(3.0, 10.0, true)).unwrap();
    assert_eq!(r.accessible_fraction, 0.0);
    assert!(r.void_fraction > 90.0);
}

#[test]
fn zero_probe_without_flood_fill_equals_void() {
    let s = PeriodicStructure::cubic(8.0, vec![site("C", [0.1, 0.2, 0.3]), site("O", [0.6, 0.5, 0.9])]).unwrap();
    let r = compute_porosity(&s, &RadiusTable::default(), &opts(5.0, 0.0, false)).unwrap();
    assert_eq!(r.accessible_fraction, r.void_fraction);
    assert_eq!(r.accessible, r.unoccupied);
}

/// Closed cubic shell of overlapping spheres around the cell centre; the
/// probe fits inside it but cannot get out.
fn caged_cavity() -> (PeriodicStructure, RadiusTable) {
    let a = 20.0;
    let mut sites = Vec::new();
    for i in -2i32..=2 {
        for j in -2i32..=2 {
            for k in -2i32..=2 {
                if i.abs() == 2 || j.abs() == 2 || k.abs() == 2 {
                    let f = [i, j, k].map(|x| 0.5 + 2.0 * x as f64 / a);
                    sites.push(site("C", f));
                }
            }
        }
    }
    let mut radii = RadiusTable::default();
    radii.set("C", 1.5);
    (PeriodicStructure::cubic(a, sites).unwrap(), radii)
}

#[test]
fn enclosed_pocket_is_not_accessible() {
    let (s, radii) = caged_cavity();
    assert_eq!(s.sites().len(), 98);
    let grid = clearance_grid(&s, &radii, GridSpec::new(2.0).unwrap(), 1).unwrap();
    let centre = grid.index(20, 20, 20);
    assert!(grid.values[centre] >= DEFAULT_PROBE_RADIUS);
    let (accessible, _, _) = classify(&grid, DEFAULT_PROBE_RADIUS, true).unwrap();
    assert!(!accessible[centre]);
    let corner = grid.index(0, 0, 0);
    assert!(accessible[corner]);

    let with = compute_porosity(&s, &radii, &opts(2.0, DEFAULT_PROBE_RADIUS, true)).unwrap();
    let without = compute_porosity(&s, &radii, &opts(2.0, DEFAULT_PROBE_RADIUS, false)).unwrap();
    assert!(with.accessible < with.admissible);
    assert_eq!(without.accessible, with.admissible);
    assert!(with.accessible_fraction < without.accessible_fraction);
    assert!(with.accessible_fraction < with.void_fraction);
}

#[test]
fn isolated_pockets_fall_back_to_the_largest() {
    // a dense sphere nearly fills the cell, leaving disconnected corners
    let s = PeriodicStructure::cubic(6.0, vec![site("X", [0.5, 0.5, 0.5]), site("X", [0.0, 0.0, 0.0])]).unwrap();
    let radii = RadiusTable::uniform(2.55);
    let grid = clearance_grid(&s, &radii, GridSpec::new(4.0).unwrap(), 1).unwrap();
    let (acc, _, admissible) = classify(&grid, 0.0, true).unwrap();
    let n_acc = acc.iter().filter(|&&a| a).count();
    assert!(admissible > 0);
    assert!(n_acc > 0 && n_acc <= admissible);
}

#[test]
fn shards_do_not_change_the_result() {
    let (s, radii) = caged_cavity();
    let one = compute_porosity(&s, &radii, &opts(1.5, 1.2, true)).unwrap();
    let many = compute_porosity(&s, &radii, &PorosityOptions { workers: 3, ..opts(1.5, 1.2, true) }).unwrap();
    assert_eq!(one, many);
}

#[test]
fn input_errors() {
    let s = PeriodicStructure::cubic(5.0, vec![site("Qq", [0.0, 0.0, 0.0])]).unwrap();
    assert!(matches!(
        compute_porosity(&s, &RadiusTable::parse("C 1.7").unwrap(), &PorosityOptions::default()),
        Err(PorosityError::MissingRadius(e)) if e == "Qq"
    ));
    let ok = single_sphere([0.0; 3]);
    assert!(matches!(
        compute_porosity(&ok, &RadiusTable::uniform(1.0), &opts(2.0, -0.1, true)),
        Err(PorosityError::NegativeProbe(_))
    ));
    assert!(GridSpec::new(0.0).is_err());
    assert!(GridSpec::new(f64::NAN).is_err());
}

#[test]
fn large_radii_raise_warnings() {
    let s = PeriodicStructure::cubic(5.0, vec![site("C", [0.0; 3]), site("C", [0.5; 3])]).unwrap();
    assert_eq!(validity_warnings(&s, &RadiusTable::default(), 1.2).len(), 1);
    assert!(validity_warnings(&single_sphere([0.0; 3]), &RadiusTable::uniform(2.0), 1.2).is_empty());
}

#[test]
fn error_shrinks_with_grid_density() {
    let offsets = [[0.0, 0.0, 0.0], [0.13, 0.71, 0.42], [0.37, 0.05, 0.93], [0.61, 0.29, 0.17]];
    let exact = sphere_void(2.0, 1000.0);
    let mean_error = |density: f64| {
        offsets
            .iter()
            .map(|&o| {
                let r = compute_porosity(&single_sphere(o), &RadiusTable::uniform(2.0), &opts(density, 0.0, false)).unwrap();
                (r.void_fraction - exact).abs()
            })
            .sum::<f64>()
            / offsets.len() as f64
    };
    let errs = [mean_error(2.0), mean_error(5.0), mean_error(10.0)];
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn tokens_follow_the_bins() {
    let spec = crate::embedding::BinSpec::default();
    let mut r = compute_porosity(&single_sphere([0.0; 3]), &RadiusTable::uniform(2.0), &opts(2.0, 1.2, true)).unwrap();
    r.void_fraction = 0.0;
    r.accessible_fraction = 100.0;
    assert_eq!(porosity_tokens(&r, &spec).unwrap(), ("00".into(), "19".into()));
    r.void_fraction = 47.3;
    r.accessible_fraction = 35.0;
    // 5% wide bins: 47.3 -> 9, 35.0 -> 7
    assert_eq!(porosity_tokens(&r, &spec).unwrap(), ("09".into(), "07".into()));
    let info = structure_informatics(&single_sphere([0.0; 3]), &r);
    assert_eq!(info.atom_count, Some(1));
    assert!((info.unit_cell_volume.unwrap() - 1000.0).abs() < 1e-9);
}

fn structure_strategy() -> impl Strategy<Value = PeriodicStructure> {
    let cell = (6.0f64..11.0, 6.0f64..11.0, 6.0f64..11.0, 75.0f64..105.0, 75.0f64..105.0, 75.0f64..105.0);
    let sites = prop::collection::vec((prop::sample::select(vec!["H", "C", "N", "O"]), prop::array::uniform3(0.0f64..1.0)), 0..5);
    (cell, sites).prop_filter_map("valid cell", |((a, b, c, al, be, ga), sites)| {
        let p = LatticeParameters::new(a, b, c, al, be, ga);
        let sites = sites.into_iter().map(|(e, f)| site(e, f)).collect();
        PeriodicStructure::from_parameters(&p, sites).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn accessible_never_exceeds_void(s in structure_strategy(), probe in 0.0f64..2.5) {
        let r = compute_porosity(&s, &RadiusTable::default(), &opts(3.0, probe, true)).unwrap();
        prop_assert!(0.0 <= r.accessible_fraction);
        prop_assert!(r.accessible_fraction <= r.void_fraction);
        prop_assert!(r.void_fraction <= 100.0);
        prop_assert!(r.accessible <= r.admissible && r.admissible <= r.unoccupied);
    }

    #[test]
    fn larger_spheres_leave_less_void(s in structure_strategy(), k in 1.0f64..1.5) {
        let base = RadiusTable::default();
        let small = compute_porosity(&s, &base, &opts(3.0, 0.0, false)).unwrap();
        let big = compute_porosity(&s, &base.scaled(k), &opts(3.0, 0.0, false)).unwrap();
        prop_assert!(big.void_fraction <= small.void_fraction);
    }

    #[test]
    fn larger_probes_fit_in_fewer_places(s in structure_strategy(), p in 0.0f64..2.0, dp in 0.0f64..1.0) {
        let grid = clearance_grid(&s, &RadiusTable::default(), GridSpec::new(3.0).unwrap(), 1).unwrap();
        let (_, _, a) = classify(&grid, p, false).unwrap();
        let (_, _, b) = classify(&grid, p + dp, false).unwrap();
        prop_assert!(b <= a);
    }

    #[test]
    fn rigid_shifts_barely_move_the_void(s in structure_strategy(), shift in prop::array::uniform3(0.0f64..1.0)) {
        let radii = RadiusTable::default();
        let o = opts(5.0, 0.0, false);
        let a = compute_porosity(&s, &radii, &o).unwrap();
        let b = compute_porosity(&s.translated(shift), &radii, &o).unwrap();
        prop_assert!((a.void_fraction - b.void_fraction).abs() <= 1.0, "{} vs {}", a.void_fraction, b.void_fraction);
    }
}
