use std::fmt::Write as _;
use std::path::Path;

use super::PorosityError;
use crate::grammar::LatticeParameters;

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub element: String,
    /// Fractional coordinates, wrapped to [0, 1).
    pub frac: [f64; 3],
}

/// Unit cell with fractional atom sites.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicStructure {
    lattice: [[f64; 3]; 3],
    sites: Vec<Site>,
}

fn wrap(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

impl PeriodicStructure {
    /// `lattice` rows are the cell vectors a, b, c in Å.
    pub fn new(lattice: [[f64; 3]; 3], sites: Vec<Site>) -> Result<Self, PorosityError> {
        if lattice.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PorosityError::Structure("lattice has non-finite entries".into()));
        }
        let volume = dot(lattice[0], cross(lattice[1], lattice[2]));
        if volume <= 1e-9 {
            return Err(PorosityError::SingularLattice(volume));
        }
        let mut wrapped = Vec::with_capacity(sites.len());
        for s in sites {
            if s.frac.iter().any(|v| !v.is_finite()) {
                return Err(PorosityError::Structure(format!("site {} has non-finite coordinates", s.element)));
            }
            wrapped.push(Site {
                element: s.element,
                frac: s.frac.map(wrap),
            });
        }
        Ok(PeriodicStructure { lattice, sites: wrapped })
    }

    pub fn cubic(a: f64, sites: Vec<Site>) -> Result<Self, PorosityError> {
        Self::new([[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]], sites)
    }

    /// Standard setting: a along x, b in the xy plane.
    pub fn from_parameters(p: &LatticeParameters, sites: Vec<Site>) -> Result<Self, PorosityError> {
        let [a, b, c] = p.lengths();
        let [al, be, ga] = p.angles().map(f64::to_radians);
        let cx = c * be.cos();
        let cy = c * (al.cos() - be.cos() * ga.cos()) / ga.sin();
        let cz2 = c * c - cx * cx - cy * cy;
        if cz2 <= 0.0 {
            return Err(PorosityError::SingularLattice(0.0));
        }
        Self::new([[a, 0.0, 0.0], [b * ga.cos(), b * ga.sin(), 0.0], [cx, cy, cz2.sqrt()]], sites)
    }

    pub fn lattice(&self) -> &[[f64; 3]; 3] {
        &self.lattice
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn volume(&self) -> f64 {
        dot(self.lattice[0], cross(self.lattice[1], self.lattice[2]))
    }

    pub fn edge_lengths(&self) -> [f64; 3] {
        self.lattice.map(norm)
    }

    /// Distance between opposite faces along each direction.
    pub fn face_widths(&self) -> [f64; 3] {
        let v = self.volume();
        let [a, b, c] = self.lattice;
        [v / norm(cross(b, c)), v / norm(cross(c, a)), v / norm(cross(a, b))]
    }

    pub fn to_cartesian(&self, f: [f64; 3]) -> [f64; 3] {
        let l = &self.lattice;
        [0, 1, 2].map(|k| f[0] * l[0][k] + f[1] * l[1][k] + f[2] * l[2][k])
    }

    /// Rigid shift of every site, wrapped back into the cell.
    pub fn translated(&self, shift: [f64; 3]) -> Self {
        let sites = self
            .sites
            .iter()
            .map(|s| Site {
                element: s.element.clone(),
                frac: [0, 1, 2].map(|k| wrap(s.frac[k] + shift[k])),
            })
            .collect();
        PeriodicStructure { lattice: self.lattice, sites }
    }

    /// Reads the text form:
    ///
    /// ```text
    /// lattice
    /// 10 0 0
    /// 0 10 0
    /// 0 0 10
    /// sites
    /// Na 0 0 0
    /// Cl 0.5 0.5 0.5
    /// ```
    ///
    /// Blank lines and `#` comments are skipped; the nine lattice numbers may
    /// be spread over any number of lines.
    pub fn parse(text: &str) -> Result<Self, PorosityError> {
        enum Part {
            Start,
            Lattice,
            Sites,
        }
        let mut part = Part::Start;
        let mut nums = Vec::new();
        let mut sites = Vec::new();
        let mut seen_sites = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| PorosityError::Parse { line: i + 1, reason };
            let mut words = line.split_whitespace();
            let head = words.next().unwrap_or("");
            let rest: Vec<&str> = words.collect();
            match head.to_ascii_lowercase().as_str() {
                "lattice" => {
                    part = Part::Lattice;
                    for w in rest {
                        nums.push(w.parse::<f64>().map_err(|_| bad(format!("`{w}` is not a number")))?);
                    }
                    continue;
                }
                "sites" => {
                    if matches!(part, Part::Start) {
                        return Err(bad("expected `lattice` before `sites`".into()));
                    }
                    part = Part::Sites;
                    seen_sites = true;
                    if !rest.is_empty() {
                        return Err(bad("`sites` takes no values on its own line".into()));
                    }
                    continue;
                }
                _ => {}
            }
            match part {
                Part::Start => return Err(bad("expected `lattice`".into())),
                Part::Lattice => {
                    for w in line.split_whitespace() {
                        nums.push(w.parse::<f64>().map_err(|_| bad(format!("`{w}` is not a number")))?);
                    }
                }
                Part::Sites => {
                    if rest.len() != 3 {
                        return Err(bad("a site needs an element and three fractional coordinates".into()));
                    }
                    let mut frac = [0.0; 3];
                    for (k, w) in rest.iter().enumerate() {
                        frac[k] = w.parse().map_err(|_| bad(format!("`{w}` is not a number")))?;
                    }
                    sites.push(Site {
                        element: head.to_string(),
                        frac,
                    });
                }
            }
        }
        if nums.len() != 9 {
            return Err(PorosityError::Structure(format!("lattice needs 9 numbers, found {}", nums.len())));
        }
        if !seen_sites {
            return Err(PorosityError::Structure("missing `sites` section".into()));
        }
        let lattice = [[nums[0], nums[1], nums[2]], [nums[3], nums[4], nums[5]], [nums[6], nums[7], nums[8]]];
        Self::new(lattice, sites)
    }

    pub fn load(path: &Path) -> Result<Self, PorosityError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("lattice\n");
        for row in &self.lattice {
            let _ = writeln!(out, "{} {} {}", row[0], row[1], row[2]);
        }
        out.push_str("sites\n");
        for s in &self.sites {
            let _ = writeln!(out, "{} {} {} {}", s.element, s.frac[0], s.frac[1], s.frac[2]);
        }
        out
    }
}
