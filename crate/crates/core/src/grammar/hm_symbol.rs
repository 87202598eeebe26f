//! Splitting of Hermann-Mauguin symbols into a centering letter and up to
//! three directional symbols.
//!
//! Accepts spaced full symbols (`F 4/m -3 2/m`), compact short symbols
//! (`Fm-3m`, `Pmm2`) and both screw-axis spellings (`P2_12_12_1`, `P212121`).
//! Compact screw axes are ambiguous (`P4132` reads as `4_1 3 2` or `4 1 3_2`);
//! when more than one reading exists the one naming a knowledge-base full
//! symbol wins, otherwise the reading that binds screw subscripts greedily.

use super::{space_groups, GrammarError, EMPTY_SLOT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSymbol {
    pub centering: char,
    pub directional: [String; 3],
}

impl SplitSymbol {
    /// Space-separated canonical spelling, e.g. `P 2_1 2_1 2_1`.
    pub fn canonical(&self) -> String {
        let mut out = self.centering.to_string();
        for d in self.directional.iter().filter(|d| !d.is_empty()) {
            out.push(' ');
            out.push_str(d);
        }
        out
    }
}

const CENTERINGS: &str = "PABCIFR";
const PLANES: &str = "mabcnde";

fn rotation_order(c: char) -> Option<u32> {
    match c {
        '1' => Some(1),
        '2' => Some(2),
        '3' => Some(3),
        '4' => Some(4),
        '6' => Some(6),
        _ => None,
    }
}

struct ChunkParser {
    chars: Vec<(usize, char)>,
    furthest: (usize, Option<char>),
}

impl ChunkParser {
    fn fail(&mut self, i: usize) {
        let found = self.chars.get(i).map(|&(_, c)| c);
        if i >= self.furthest.0 {
            self.furthest = (i, found);
        }
    }

    fn at(&self, i: usize) -> Option<char> {
        self.chars.get(i).map(|&(_, c)| c)
    }

    /// All (symbol, next index) readings of one directional symbol starting at `i`.
    fn symbol_at(&mut self, i: usize) -> Vec<(String, usize)> {
        let Some(c) = self.at(i) else {
            return Vec::new();
        };
        if PLANES.contains(c) {
            return vec![(c.to_string(), i + 1)];
        }
        let (bar, j) = if c == '-' { (true, i + 1) } else { (false, i) };
        let Some(order) = self.at(j).and_then(rotation_order) else {
            self.fail(j);
            return Vec::new();
        };
        let rot = self.at(j).unwrap();
        let mut stems: Vec<(String, usize)> = Vec::new();
        let base = if bar { format!("-{rot}") } else { rot.to_string() };
        let valid_screw = |d: char| {
            !bar && d.to_digit(10).is_some_and(|d| d >= 1 && d < order)
        };
        match (self.at(j + 1), self.at(j + 2)) {
            (Some('_'), Some(d)) if valid_screw(d) => {
                stems.push((format!("{base}_{d}"), j + 3));
            }
            (Some('_'), _) => {
                self.fail(j + 2);
                return Vec::new();
            }
            (Some(d), _) if valid_screw(d) => {
                stems.push((format!("{base}_{d}"), j + 2));
                stems.push((base, j + 1));
            }
            _ => stems.push((base, j + 1)),
        }
        let mut out = Vec::new();
        for (stem, k) in stems {
            if self.at(k) == Some('/') {
                match self.at(k + 1) {
                    Some(p) if PLANES.contains(p) && !bar => {
                        out.push((format!("{stem}/{p}"), k + 2));
                    }
                    _ => self.fail(k + 1),
                }
            } else {
                out.push((stem, k));
            }
        }
        out
    }

    /// All complete readings of the chunk from `i`, each at most `budget` symbols.
    fn readings_from(&mut self, i: usize, budget: usize) -> Vec<Vec<String>> {
        if i == self.chars.len() {
            return vec![Vec::new()];
        }
        if budget == 0 {
            self.fail(i);
            return Vec::new();
        }
        let mut out = Vec::new();
        for (sym, next) in self.symbol_at(i) {
            for mut rest in self.readings_from(next, budget - 1) {
                rest.insert(0, sym.clone());
                out.push(rest);
            }
        }
        out
    }
}

pub fn split_hm_symbol(full_symbol: &str) -> Result<SplitSymbol, GrammarError> {
    let symbol = full_symbol.trim();
    let char_err = |offset: usize, found: char| GrammarError::SymbolChar {
        symbol: full_symbol.to_string(),
        offset,
        found,
    };
    let lead = full_symbol.len() - full_symbol.trim_start().len();
    let mut it = symbol.char_indices();
    let centering = match it.next() {
        Some((_, c)) if CENTERINGS.contains(c) => c,
        Some((o, c)) => return Err(char_err(lead + o, c)),
        None => {
            return Err(GrammarError::SymbolShape {
                symbol: full_symbol.to_string(),
                reason: "empty symbol".into(),
            })
        }
    };
    let rest = &symbol[centering.len_utf8()..];

    // Whitespace-separated chunks, each with its absolute offset.
    let base = lead + centering.len_utf8();
    let mut chunks: Vec<Vec<(usize, char)>> = Vec::new();
    let mut current = Vec::new();
    for (o, c) in rest.char_indices() {
        if c.is_whitespace() {
            if !current.is_empty() {
                chunks.push(std::mem::take(&mut current));
            }
        } else {
            current.push((base + o, c));
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }

    // Cartesian product of per-chunk readings, capped at three symbols.
    let mut candidates: Vec<Vec<String>> = vec![Vec::new()];
    for chunk in chunks {
        let mut parser = ChunkParser {
            chars: chunk,
            furthest: (0, None),
        };
        let readings = parser.readings_from(0, 3);
        if readings.is_empty() {
            let (idx, found) = parser.furthest;
            return match (parser.chars.get(idx), found) {
                (Some(&(offset, _)), Some(c)) => Err(char_err(offset, c)),
                _ => Err(GrammarError::SymbolShape {
                    symbol: full_symbol.to_string(),
                    reason: "symbol ends unexpectedly".into(),
                }),
            };
        }
        let mut next = Vec::new();
        for prefix in &candidates {
            for r in &readings {
                if prefix.len() + r.len() <= 3 {
                    let mut v = prefix.clone();
                    v.extend(r.iter().cloned());
                    next.push(v);
                }
            }
        }
        candidates = next;
    }
    candidates.retain(|c| !c.is_empty());
    if candidates.is_empty() {
        return Err(GrammarError::SymbolShape {
            symbol: full_symbol.to_string(),
            reason: "expected one to three directional symbols".into(),
        });
    }

    let to_split = |syms: &Vec<String>| {
        let mut directional = [
            EMPTY_SLOT.to_string(),
            EMPTY_SLOT.to_string(),
            EMPTY_SLOT.to_string(),
        ];
        for (slot, s) in directional.iter_mut().zip(syms) {
            *slot = s.clone();
        }
        SplitSymbol {
            centering,
            directional,
        }
    };
    let table = space_groups();
    let chosen = candidates
        .iter()
        .map(to_split)
        .find(|s| table.find_by_full_symbol(&s.canonical()).is_some())
        .unwrap_or_else(|| to_split(&candidates[0]));
    Ok(chosen)
}
