use std::fmt::Write;

use num_rational::Ratio;
use num_traits::{One, Zero};

use super::{is_element, GrammarError};

/// Upper bound on distinct elements, matching the fixed number of formula slots.
pub const MAX_FORMULA_ELEMENTS: usize = 20;

type Count = Ratio<i128>;

/// Element fractions of a stoichiometric formula in first-appearance order.
#[derive(Debug, Clone)]
pub struct FormulaComposition {
    entries: Vec<(String, f64)>,
    exact: Vec<(i128, i128)>,
}

impl FormulaComposition {
    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn elements(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(e, _)| e.as_str())
    }

    pub fn fractions(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, f)| *f)
    }

    /// Builds a composition from explicit (element, amount) pairs.
    pub fn from_amounts(amounts: &[(&str, f64)]) -> Result<Self, GrammarError> {
        let mut text = String::new();
        for (el, amt) in amounts {
            write!(text, "{el}{amt}").unwrap();
        }
        parse_formula(&text)
    }

    /// Shannon entropy of the element fractions, in nats.
    pub fn mixing_entropy(&self) -> f64 {
        -self
            .fractions()
            .filter(|f| *f > 0.0)
            .map(|f| f * f.ln())
            .sum::<f64>()
    }

    /// Smallest integer counts with these fractions, e.g. `Fe2O3`.
    pub fn to_formula_string(&self) -> String {
        let mut out = String::new();
        let lcm = self
            .exact
            .iter()
            .fold(1i128, |acc, &(_, d)| num_integer_lcm(acc, d));
        for ((el, _), &(n, d)) in self.entries.iter().zip(&self.exact) {
            let count = n * (lcm / d);
            if count == 1 {
                out.push_str(el);
            } else {
                write!(out, "{el}{count}").unwrap();
            }
        }
        out
    }
}

impl PartialEq for FormulaComposition {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

fn num_integer_lcm(a: i128, b: i128) -> i128 {
    a / gcd(a, b) * b
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn offset(&self) -> usize {
        self.chars.get(self.pos).map_or(self.src.len(), |&(o, _)| o)
    }

    fn syntax(&self) -> GrammarError {
        match self.peek() {
            Some(found) => GrammarError::FormulaSyntax {
                formula: self.src.to_string(),
                offset: self.offset(),
                found,
            },
            None => GrammarError::EmptyFormula,
        }
    }

    fn count(&mut self) -> Result<Count, GrammarError> {
        let start = self.pos;
        let mut int_part: i128 = 0;
        let mut frac_digits = 0u32;
        let mut frac_part: i128 = 0;
        let mut seen_dot = false;
        while let Some(c) = self.peek() {
            if let Some(d) = c.to_digit(10) {
                if seen_dot {
                    frac_part = frac_part * 10 + d as i128;
                    frac_digits += 1;
                } else {
                    int_part = int_part * 10 + d as i128;
                }
            } else if c == '.' && !seen_dot {
                seen_dot = true;
            } else {
                break;
            }
            self.pos += 1;
            if self.pos - start > 18 {
                return Err(self.syntax());
            }
        }
        if self.pos == start {
            return Ok(Count::one());
        }
        if seen_dot && frac_digits == 0 && self.pos - start == 1 {
            self.pos = start;
            return Err(self.syntax());
        }
        let denom = 10i128.pow(frac_digits);
        Ok(Count::new(int_part * denom + frac_part, denom))
    }

    fn element(&mut self) -> Result<String, GrammarError> {
        let first = self.peek().filter(|c| c.is_ascii_uppercase()).ok_or_else(|| self.syntax())?;
        self.pos += 1;
        if let Some(second) = self.peek().filter(|c| c.is_ascii_lowercase()) {
            let two = format!("{first}{second}");
            self.pos += 1;
            return if is_element(&two) {
                Ok(two)
            } else {
                Err(GrammarError::UnknownElement(two))
            };
        }
        let one = first.to_string();
        if is_element(&one) {
            Ok(one)
        } else {
            Err(GrammarError::UnknownElement(one))
        }
    }

    fn group(&mut self, depth: usize, out: &mut Vec<(String, Count)>) -> Result<(), GrammarError> {
        while let Some(c) = self.peek() {
            match c {
                '(' | '[' => {
                    let open_at = self.offset();
                    let close = if c == '(' { ')' } else { ']' };
                    self.pos += 1;
                    let mut inner = Vec::new();
                    self.group(depth + 1, &mut inner)?;
                    if self.peek() != Some(close) {
                        return Err(GrammarError::UnbalancedParentheses {
                            formula: self.src.to_string(),
                            offset: open_at,
                        });
                    }
                    self.pos += 1;
                    let mult = self.count()?;
                    for (el, n) in inner {
                        out.push((el, n * mult));
                    }
                }
                ')' | ']' => {
                    if depth == 0 {
                        return Err(GrammarError::UnbalancedParentheses {
                            formula: self.src.to_string(),
                            offset: self.offset(),
                        });
                    }
                    return Ok(());
                }
                c if c.is_ascii_uppercase() => {
                    let el = self.element()?;
                    let n = self.count()?;
                    out.push((el, n));
                }
                c if c.is_ascii_lowercase() => {
                    let mut sym = c.to_string();
                    if let Some(&(_, n)) = self.chars.get(self.pos + 1) {
                        if n.is_ascii_lowercase() {
                            sym.push(n);
                        }
                    }
                    return Err(GrammarError::UnknownElement(sym));
                }
                _ => return Err(self.syntax()),
            }
        }
        Ok(())
    }
}

/// Parses a stoichiometric formula into normalized element fractions.
///
/// Parentheses (and square brackets) nest with optional integer or decimal
/// multipliers. Counts are accumulated as exact rationals before the final
/// division, so the fractions sum to one independent of element order.
pub fn parse_formula(text: &str) -> Result<FormulaComposition, GrammarError> {
    let chars: Vec<(usize, char)> = text
        .char_indices()
        .filter(|(_, c)| !c.is_whitespace())
        .collect();
    if chars.is_empty() {
        return Err(GrammarError::EmptyFormula);
    }
    let mut parser = Parser {
        src: text,
        chars,
        pos: 0,
    };
    let mut raw = Vec::new();
    parser.group(0, &mut raw)?;

    let mut merged: Vec<(String, Count)> = Vec::new();
    for (el, n) in raw {
        match merged.iter_mut().find(|(e, _)| *e == el) {
            Some((_, acc)) => *acc += n,
            None => merged.push((el, n)),
        }
    }
    merged.retain(|(_, n)| !n.is_zero());
    let total: Count = merged.iter().map(|(_, n)| *n).sum();
    if total.is_zero() {
        return Err(GrammarError::ZeroCount(text.to_string()));
    }
    if merged.len() > MAX_FORMULA_ELEMENTS {
        return Err(GrammarError::TooManyElements {
            formula: text.to_string(),
            count: merged.len(),
            max: MAX_FORMULA_ELEMENTS,
        });
    }
    let mut entries = Vec::with_capacity(merged.len());
    let mut exact = Vec::with_capacity(merged.len());
    for (el, n) in merged {
        let frac = n / total;
        entries.push((el, *frac.numer() as f64 / *frac.denom() as f64));
        exact.push((*frac.numer(), *frac.denom()));
    }
    Ok(FormulaComposition { entries, exact })
}
