use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{PeriodicStructure, PorosityError, RadiusTable};

pub const DEFAULT_DENSITY: f64 = 5.0;
pub const DEFAULT_PROBE_RADIUS: f64 = 1.2;

/// Grid density in points per Å along each lattice direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub density: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { density: DEFAULT_DENSITY }
    }
}

impl GridSpec {
    pub fn new(density: f64) -> Result<Self, PorosityError> {
        if !(density.is_finite() && density > 0.0) {
            return Err(PorosityError::BadDensity(density));
        }
        Ok(GridSpec { density })
    }

    /// `ceil(density * edge)` per direction, at least 1.
    pub fn dims(&self, s: &PeriodicStructure) -> [usize; 3] {
        s.edge_lengths().map(|l| ((self.density * l).ceil() as usize).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PorosityOptions {
    pub grid: GridSpec,
    pub probe_radius: f64,
    /// Restrict accessible points to percolating components. When false a
    /// point is accessible as soon as the probe fits there.
    pub flood_fill: bool,
    pub workers: usize,
}

impl Default for PorosityOptions {
    fn default() -> Self {
        PorosityOptions {
            grid: GridSpec::default(),
            probe_radius: DEFAULT_PROBE_RADIUS,
            flood_fill: true,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PorosityResult {
    /// Percent of grid points outside every van der Waals sphere.
    pub void_fraction: f64,
    /// Percent of grid points reachable by the probe.
    pub accessible_fraction: f64,
    pub unoccupied: usize,
    /// Points where the probe fits, before connectivity.
    pub admissible: usize,
    pub accessible: usize,
    pub total: usize,
    pub probe_radius: f64,
    pub density: f64,
    pub dims: [usize; 3],
}

/// Distance from every grid point to the nearest van der Waals surface
/// (negative inside a sphere). Point `(i, j, k)` sits at fractional
/// `((i + ½)/n₁, (j + ½)/n₂, (k + ½)/n₃)` and has index `(i·n₂ + j)·n₃ + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearanceGrid {
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl ClearanceGrid {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [_, n1, n2] = self.dims;
        [idx / (n1 * n2), (idx / n2) % n1, idx % n2]
    }
}

struct Prepared {
    radii: Vec<f64>,
    frac: Vec<[f64; 3]>,
    lattice: [[f64; 3]; 3],
    images: Vec<[f64; 3]>,
}

fn prepare(s: &PeriodicStructure, radii: &RadiusTable) -> Result<Prepared, PorosityError> {
    let r = s
        .sites()
        .iter()
        .map(|site| radii.radius(&site.element).ok_or_else(|| PorosityError::MissingRadius(site.element.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut images = Vec::with_capacity(27);
    for a in -1..=1 {
        for b in -1..=1 {
            for c in -1..=1 {
                images.push(s.to_cartesian([a as f64, b as f64, c as f64]));
            }
        }
    }
    Ok(Prepared {
        radii: r,
        frac: s.sites().iter().map(|x| x.frac).collect(),
        lattice: *s.lattice(),
        images,
    })
}

impl Prepared {
    fn clearance(&self, p: [f64; 3]) -> f64 {
        let l = &self.lattice;
        let mut best = f64::INFINITY;
        for (f, r) in self.frac.iter().zip(&self.radii) {
            let d = [0, 1, 2].map(|k| {
                let x = p[k] - f[k];
                x - x.round()
            });
            let base = [0, 1, 2].map(|k| d[0] * l[0][k] + d[1] * l[1][k] + d[2] * l[2][k]);
            let mut nearest = f64::INFINITY;
            for img in &self.images {
                let v = [base[0] + img[0], base[1] + img[1], base[2] + img[2]];
                nearest = nearest.min(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
            }
            best = best.min(nearest.sqrt() - r);
        }
        best
    }
}

/// Clearance at every grid point, computed in `workers` contiguous shards.
pub fn clearance_grid(s: &PeriodicStructure, radii: &RadiusTable, grid: GridSpec, workers: usize) -> Result<ClearanceGrid, PorosityError> {
    let prep = prepare(s, radii)?;
    let dims = grid.dims(s);
    let total = dims[0] * dims[1] * dims[2];
    let mut values = vec![0.0; total];
    let workers = workers.clamp(1, total);
    let chunk = total.div_ceil(workers);
    let shape = ClearanceGrid { dims, values: Vec::new() };
    std::thread::scope(|scope| {
        for (w, out) in values.chunks_mut(chunk).enumerate() {
            let prep = &prep;
            let shape = &shape;
            scope.spawn(move || {
                for (o, v) in out.iter_mut().enumerate() {
                    let c = shape.coords(w * chunk + o);
                    let p = [0, 1, 2].map(|k| (c[k] as f64 + 0.5) / dims[k] as f64);
                    *v = prep.clearance(p);
                }
            });
        }
    });
    Ok(ClearanceGrid { dims, values })
}

/// Marks admissible points that belong to a component wrapping around the
/// cell in some direction; with no wrapping component, the largest one.
fn percolating(grid: &ClearanceGrid, admissible: &[bool]) -> Vec<bool> {
    const UNSEEN: usize = usize::MAX;
    let n = admissible.len();
    let dims = grid.dims;
    let mut label = vec![UNSEEN; n];
    let mut unwrapped = vec![[0i64; 3]; n];
    let mut components: Vec<(Vec<usize>, bool)> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !admissible[start] || label[start] != UNSEEN {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        let mut wraps = false;
        label[start] = id;
        unwrapped[start] = grid.coords(start).map(|c| c as i64);
        queue.push_back(start);
        while let Some(cur) = queue.pop_front() {
            let c = grid.coords(cur);
            let u = unwrapped[cur];
            for axis in 0..3 {
                for step in [-1i64, 1] {
                    let size = dims[axis] as i64;
                    let mut nc = c.map(|x| x as i64);
                    nc[axis] = (nc[axis] + step).rem_euclid(size);
                    let next = grid.index(nc[0] as usize, nc[1] as usize, nc[2] as usize);
                    if !admissible[next] {
                        continue;
                    }
                    let mut nu = u;
                    nu[axis] += step;
                    if label[next] == UNSEEN {
                        label[next] = id;
                        unwrapped[next] = nu;
                        members.push(next);
                        queue.push_back(next);
                    } else if unwrapped[next] != nu {
                        wraps = true;
                    }
                }
            }
        }
        components.push((members, wraps));
    }
    let mut keep = vec![false; n];
    let any_wraps = components.iter().any(|c| c.1);
    let chosen: Vec<&Vec<usize>> = if any_wraps {
        components.iter().filter(|c| c.1).map(|c| &c.0).collect()
    } else {
        // first of the largest, so ties resolve by grid order
        let mut best: Option<&Vec<usize>> = None;
        for (m, _) in &components {
            if best.map_or(true, |b| m.len() > b.len()) {
                best = Some(m);
            }
        }
        best.into_iter().collect()
    };
    for m in chosen {
        for &i in m {
            keep[i] = true;
        }
    }
    keep
}

/// Void and accessible fractions from a precomputed clearance grid.
pub fn classify(grid: &ClearanceGrid, probe_radius: f64, flood_fill: bool) -> Result<(Vec<bool>, usize, usize), PorosityError> {
    if !(probe_radius.is_finite() && probe_radius >= 0.0) {
        return Err(PorosityError::NegativeProbe(probe_radius));
    }
    let unoccupied = grid.values.iter().filter(|&&c| c >= 0.0).count();
    let admissible: Vec<bool> = grid.values.iter().map(|&c| c >= probe_radius).collect();
    let n_admissible = admissible.iter().filter(|&&a| a).count();
    let accessible = if flood_fill { percolating(grid, &admissible) } else { admissible };
    Ok((accessible, unoccupied, n_admissible))
}

pub fn compute_porosity(s: &PeriodicStructure, radii: &RadiusTable, opts: &PorosityOptions) -> Result<PorosityResult, PorosityError> {
    if !(opts.probe_radius.is_finite() && opts.probe_radius >= 0.0) {
        return Err(PorosityError::NegativeProbe(opts.probe_radius));
    }
    let grid = clearance_grid(s, radii, opts.grid, opts.workers)?;
    let (accessible, unoccupied, admissible) = classify(&grid, opts.probe_radius, opts.flood_fill)?;
    let total = grid.values.len();
    let accessible = accessible.iter().filter(|&&a| a).count();
    Ok(PorosityResult {
        void_fraction: 100.0 * unoccupied as f64 / total as f64,
        accessible_fraction: 100.0 * accessible as f64 / total as f64,
        unoccupied,
        admissible,
        accessible,
        total,
        probe_radius: opts.probe_radius,
        density: opts.grid.density,
        dims: grid.dims,
    })
}

/// Radii for which nearest-image distances may be wrong: the sphere plus
/// probe reaches past half the narrowest cell width.
pub fn validity_warnings(s: &PeriodicStructure, radii: &RadiusTable, probe_radius: f64) -> Vec<String> {
    let half = s.face_widths().into_iter().fold(f64::INFINITY, f64::min) / 2.0;
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for site in s.sites() {
        if let Some(r) = radii.radius(&site.element) {
            if r + probe_radius >= half && seen.insert(site.element.clone()) {
                out.push(format!(
                    "{}: radius {r} Å plus probe {probe_radius} Å reaches half the narrowest cell width ({half:.3} Å)",
                    site.element
                ));
            }
        }
    }
    out
}
