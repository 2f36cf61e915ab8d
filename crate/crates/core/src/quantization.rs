//! Uniform AD quantization of the state rectangle.
//!
//! Cell `k` of a variable with range `[lo, hi]` and `b` bits covers
//! `[lo + k w, lo + (k + 1) w)` with `w = (hi - lo) / 2^b`; the topmost cell is
//! closed on both sides so the rectangle is tiled exactly.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("value {value} of state {var} is outside [{lower}, {upper}]")]
    OutOfRange { var: usize, value: f64, lower: f64, upper: f64 },
    #[error("cell index {index} of state {var} exceeds {limit}")]
    BadIndex { var: usize, index: u32, limit: u32 },
    #[error("invalid schema: {0}")]
    Schema(String),
}

/// Relative distance to a cell boundary under which a coordinate is treated as
/// lying exactly on it.
pub const SNAP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantSchema {
    pub ranges: Vec<(f64, f64)>,
    pub bits: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell(pub Vec<u32>);

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// One coordinate of a cell box. `closed_upper` is false for every cell but
/// the topmost one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub closed_upper: bool,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && (v < self.upper || (self.closed_upper && v <= self.upper))
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

pub type QuantAction = Vec<bool>;

/// All `2^n` boolean action vectors, the first input being the most
/// significant bit.
pub fn all_actions(n: usize) -> Vec<QuantAction> {
    (0..1u32 << n).map(|k| (0..n).map(|i| (k >> (n - 1 - i)) & 1 == 1).collect()).collect()
}

pub fn action_bits(a: &[bool]) -> String {
    a.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

impl QuantSchema {
    pub fn new(ranges: Vec<(f64, f64)>, bits: Vec<u32>) -> Result<Self, QuantError> {
        if ranges.len() != bits.len() || ranges.is_empty() {
            return Err(QuantError::Schema("one bit count per state variable".into()));
        }
        for (i, (&(lo, hi), &b)) in ranges.iter().zip(&bits).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(QuantError::Schema(format!("state {i}: need lo < hi, got [{lo}, {hi}]")));
            }
            if b == 0 || b > 24 {
                return Err(QuantError::Schema(format!("state {i}: bits must be in 1..=24, got {b}")));
            }
        }
        Ok(QuantSchema { ranges, bits })
    }

    pub fn uniform(ranges: Vec<(f64, f64)>, b: u32) -> Result<Self, QuantError> {
        let n = ranges.len();
        Self::new(ranges, vec![b; n])
    }

    pub fn dims(&self) -> usize {
        self.ranges.len()
    }

    pub fn cells_per(&self, i: usize) -> u32 {
        1 << self.bits[i]
    }

    pub fn width(&self, i: usize) -> f64 {
        let (lo, hi) = self.ranges[i];
        (hi - lo) / self.cells_per(i) as f64
    }

    pub fn total_bits(&self) -> u32 {
        self.bits.iter().sum()
    }

    pub fn total_cells(&self) -> usize {
        1usize << self.total_bits()
    }

    pub fn quantize(&self, x: &[f64]) -> Result<Cell, QuantError> {
        let mut out = Vec::with_capacity(self.dims());
        for (i, &v) in x.iter().enumerate().take(self.dims()) {
            let (lo, hi) = self.ranges[i];
            if !(v >= lo && v <= hi) {
                return Err(QuantError::OutOfRange { var: i, value: v, lower: lo, upper: hi });
            }
            let k = ((v - lo) / self.width(i)).floor() as i64;
            let k = k.clamp(0, self.cells_per(i) as i64 - 1) as u32;
            // Guard against rounding in (v - lo) / w putting v one cell off.
            let k = if v < lo + k as f64 * self.width(i) && k > 0 {
                k - 1
            } else if k + 1 < self.cells_per(i) && v >= lo + (k + 1) as f64 * self.width(i) {
                k + 1
            } else {
                k
            };
            out.push(k);
        }
        Ok(Cell(out))
    }

    pub fn interval(&self, i: usize, k: u32) -> Interval {
        let (lo, hi) = self.ranges[i];
        let w = self.width(i);
        let top = k + 1 == self.cells_per(i);
        Interval {
            lower: lo + k as f64 * w,
            upper: if top { hi } else { lo + (k + 1) as f64 * w },
            closed_upper: top,
        }
    }

    pub fn cell_box(&self, c: &Cell) -> Result<Vec<Interval>, QuantError> {
        self.check(c)?;
        Ok(c.0.iter().enumerate().map(|(i, &k)| self.interval(i, k)).collect())
    }

    fn check(&self, c: &Cell) -> Result<(), QuantError> {
        if c.0.len() != self.dims() {
            return Err(QuantError::Schema(format!("cell has {} indices, schema {}", c.0.len(), self.dims())));
        }
        for (i, &k) in c.0.iter().enumerate() {
            if k >= self.cells_per(i) {
                return Err(QuantError::BadIndex { var: i, index: k, limit: self.cells_per(i) });
            }
        }
        Ok(())
    }

    /// Closed box handed to MILP queries. Open upper faces are pulled in by a
    /// margin well above the solver tolerance so that points on a shared face
    /// are attributed to the upper cell only.
    pub fn query_box(&self, c: &Cell) -> Vec<(f64, f64)> {
        c.0.iter()
            .enumerate()
            .map(|(i, &k)| {
                let iv = self.interval(i, k);
                if iv.closed_upper {
                    (iv.lower, iv.upper)
                } else {
                    (iv.lower, iv.upper - open_margin(self.width(i)))
                }
            })
            .collect()
    }

    pub fn linear_index(&self, c: &Cell) -> usize {
        c.0.iter().enumerate().fold(0usize, |acc, (i, &k)| (acc << self.bits[i]) | k as usize)
    }

    pub fn from_linear(&self, mut idx: usize) -> Cell {
        let mut out = vec![0u32; self.dims()];
        for i in (0..self.dims()).rev() {
            out[i] = (idx & ((1usize << self.bits[i]) - 1)) as u32;
            idx >>= self.bits[i];
        }
        Cell(out)
    }

    /// Lexicographic order, first variable most significant.
    pub fn enumerate_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.total_cells()).map(move |i| self.from_linear(i))
    }

    /// Fractional cell coordinate of `v`, snapped to the nearest boundary when
    /// within [`SNAP`] of it.
    fn coordinate(&self, i: usize, v: f64) -> f64 {
        let k = (v - self.ranges[i].0) / self.width(i);
        let r = k.round();
        if (k - r).abs() < SNAP {
            r
        } else {
            k
        }
    }

    /// Per-variable index ranges of the cells meeting the closed box, and
    /// whether the box leaves the rectangle.
    pub fn cover(&self, bx: &[(f64, f64)]) -> (Option<Vec<(u32, u32)>>, bool) {
        let mut exits = false;
        let mut spans = Vec::with_capacity(self.dims());
        let mut empty = false;
        for (i, &(m, mx)) in bx.iter().enumerate().take(self.dims()) {
            let n = self.cells_per(i) as f64;
            let km = self.coordinate(i, m);
            let kx = self.coordinate(i, mx);
            if km < 0.0 || kx > n {
                exits = true;
            }
            // The top cell is closed, so a box starting exactly on the upper edge still meets it.
            let first = km.floor().max(0.0).min(n - 1.0);
            let last = kx.floor().min(n - 1.0);
            if kx < 0.0 || km > n || first > last {
                empty = true;
                spans.push((0, 0));
            } else {
                spans.push((first as u32, last as u32));
            }
        }
        (if empty { None } else { Some(spans) }, exits)
    }

    /// Cells meeting the closed box, in lexicographic order.
    pub fn cells_in_box(&self, bx: &[(f64, f64)]) -> (Vec<Cell>, bool) {
        let (spans, exits) = self.cover(bx);
        let Some(spans) = spans else {
            return (Vec::new(), exits);
        };
        let mut out = Vec::new();
        let mut cur: Vec<u32> = spans.iter().map(|s| s.0).collect();
        loop {
            out.push(Cell(cur.clone()));
            let mut i = self.dims();
            loop {
                if i == 0 {
                    return (out, exits);
                }
                i -= 1;
                if cur[i] < spans[i].1 {
                    cur[i] += 1;
                    for (j, s) in spans.iter().enumerate().skip(i + 1) {
                        cur[j] = s.0;
                    }
                    break;
                }
            }
        }
    }
}

pub fn open_margin(width: f64) -> f64 {
    (1e-3 * width).min(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vo(b: u32) -> QuantSchema {
        QuantSchema::uniform(vec![(-1.0, 7.0)], b).unwrap()
    }

    #[test]
    fn quantize_examples() {
        let s = vo(2);
        assert_eq!(s.quantize(&[5.0]).unwrap(), Cell(vec![3]));
        assert_eq!(s.quantize(&[7.0]).unwrap(), Cell(vec![3]));
        assert_eq!(s.quantize(&[-1.0]).unwrap(), Cell(vec![0]));
        assert!(matches!(s.quantize(&[7.5]), Err(QuantError::OutOfRange { .. })));
    }

    #[test]
    fn cell_box_examples() {
        let s = vo(2);
        let b0 = s.cell_box(&Cell(vec![0])).unwrap()[0];
        assert_eq!((b0.lower, b0.upper, b0.closed_upper), (-1.0, 1.0, false));
        let b3 = s.cell_box(&Cell(vec![3])).unwrap()[0];
        assert_eq!((b3.lower, b3.upper, b3.closed_upper), (5.0, 7.0, true));
        assert!(s.cell_box(&Cell(vec![4])).is_err());
        for c in s.enumerate_cells() {
            let mid: Vec<f64> = s.cell_box(&c).unwrap().iter().map(|iv| iv.midpoint()).collect();
            assert_eq!(s.quantize(&mid).unwrap(), c);
        }
    }

    #[test]
    fn enumeration_order() {
        let s = QuantSchema::uniform(vec![(0.0, 1.0), (0.0, 1.0)], 1).unwrap();
        let cells: Vec<Cell> = s.enumerate_cells().collect();
        assert_eq!(cells, vec![Cell(vec![0, 0]), Cell(vec![0, 1]), Cell(vec![1, 0]), Cell(vec![1, 1])]);
        let s = vo(2);
        let idx: Vec<u32> = s.enumerate_cells().map(|c| c.0[0]).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        let s = QuantSchema::new(vec![(0.0, 1.0), (0.0, 1.0)], vec![2, 3]).unwrap();
        assert_eq!(s.enumerate_cells().count(), 1 << 5);
        for (i, c) in s.enumerate_cells().enumerate() {
            assert_eq!(s.linear_index(&c), i);
        }
    }

    #[test]
    fn box_cover() {
        let s = QuantSchema::uniform(vec![(0.0, 4.0)], 2).unwrap();
        let (cells, exits) = s.cells_in_box(&[(2.0, 3.0)]);
        assert_eq!(cells, vec![Cell(vec![2]), Cell(vec![3])]);
        assert!(!exits);
        let (cells, exits) = s.cells_in_box(&[(-1.0, 0.0 - 1e-12)]);
        assert_eq!(cells, vec![Cell(vec![0])]);
        assert!(exits);
        let (cells, exits) = s.cells_in_box(&[(3.5, 4.0)]);
        assert_eq!(cells, vec![Cell(vec![3])]);
        assert!(!exits);
        let (cells, exits) = s.cells_in_box(&[(-3.0, -2.0)]);
        assert!(cells.is_empty() && exits);
        // touching the closed top edge from above
        let (cells, exits) = s.cells_in_box(&[(4.0, 5.0)]);
        assert_eq!(cells, vec![Cell(vec![3])]);
        assert!(exits);
        let (cells, exits) = s.cells_in_box(&[(4.5, 5.0)]);
        assert!(cells.is_empty() && exits);
    }

    #[test]
    fn actions_lexicographic() {
        assert_eq!(all_actions(2), vec![vec![false, false], vec![false, true], vec![true, false], vec![true, true]]);
        assert_eq!(action_bits(&[true, false]), "10");
    }
}
