//! Symbolic k-adic addresses, the squares and intervals they name, and the
//! symbolic metric on `[0, 1]`.
//!
//! A level-`n` square is named by two digit strings `(i_1..i_n, j_1..j_n)`,
//! most significant digit first. Inside the tree we carry the equivalent
//! integer coordinates `x = sum i_l k^(n-l)`, `y = sum j_l k^(n-l)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::percolation::PercolationParams;

const DIGIT_CHARS: &[u8; 36] = b"0123456789abcdefghijklmnopqrstuvwxyz";

/// Integer coordinates of a square at some (implicit) depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub const ROOT: Cell = Cell { x: 0, y: 0 };

    pub fn new(x: u32, y: u32) -> Self {
        Cell { x, y }
    }
}

/// A closed axis-aligned square `[x0, x0 + side] x [y0, y0 + side]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Square {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
}

impl Square {
    pub fn new(x0: f64, y0: f64, side: f64) -> Self {
        Square { x0, y0, side }
    }

    pub fn unit() -> Self {
        Square::new(0.0, 0.0, 1.0)
    }

    /// The square of integer coordinates `cell` at `depth`.
    pub fn of_cell(k: u32, depth: u32, cell: Cell) -> Self {
        let scale = (k as f64).powi(depth as i32);
        Square::new(cell.x as f64 / scale, cell.y as f64 / scale, 1.0 / scale)
    }

    pub fn x1(&self) -> f64 {
        self.x0 + self.side
    }

    pub fn y1(&self) -> f64 {
        self.y0 + self.side
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    /// Reflection about the main diagonal `x = y`.
    pub fn transposed(&self) -> Self {
        Square::new(self.y0, self.x0, self.side)
    }
}

/// Name of a level-`n` square: two digit strings of equal length.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct CellAddress {
    i: Vec<u8>,
    j: Vec<u8>,
}

impl CellAddress {
    pub fn new(i: Vec<u8>, j: Vec<u8>) -> Result<Self> {
        if i.len() != j.len() {
            return Err(Error::InvalidAddress(format!(
                "digit strings differ in length ({} vs {})",
                i.len(),
                j.len()
            )));
        }
        Ok(CellAddress { i, j })
    }

    pub fn root() -> Self {
        CellAddress::default()
    }

    pub fn depth(&self) -> u32 {
        self.i.len() as u32
    }

    pub fn i_digits(&self) -> &[u8] {
        &self.i
    }

    pub fn j_digits(&self) -> &[u8] {
        &self.j
    }

    /// Checks every digit against the base `k`.
    pub fn validate(&self, k: u32) -> Result<()> {
        match self.i.iter().chain(&self.j).find(|&&d| d as u32 >= k) {
            Some(d) => Err(Error::InvalidAddress(format!(
                "digit {d} out of range for k = {k} in {self}"
            ))),
            None => Ok(()),
        }
    }

    pub fn from_cell(k: u32, depth: u32, cell: Cell) -> Self {
        CellAddress {
            i: digits_of(cell.x, k, depth),
            j: digits_of(cell.y, k, depth),
        }
    }

    pub fn to_cell(&self, k: u32) -> Result<Cell> {
        self.validate(k)?;
        let limit = PercolationParams::depth_limit_for(k);
        if self.depth() > limit {
            return Err(Error::DepthOutOfRange {
                requested: self.depth(),
                limit,
            });
        }
        let fold = |ds: &[u8]| ds.iter().fold(0u64, |acc, &d| acc * k as u64 + d as u64) as u32;
        Ok(Cell::new(fold(&self.i), fold(&self.j)))
    }

    pub fn parent(&self) -> Option<Self> {
        if self.i.is_empty() {
            return None;
        }
        let n = self.i.len() - 1;
        Some(CellAddress {
            i: self.i[..n].to_vec(),
            j: self.j[..n].to_vec(),
        })
    }

    pub fn child(&self, i: u8, j: u8) -> Self {
        let mut out = self.clone();
        out.i.push(i);
        out.j.push(j);
        out
    }
}

fn digits_of(mut value: u32, k: u32, depth: u32) -> Vec<u8> {
    let mut out = vec![0u8; depth as usize];
    for slot in out.iter_mut().rev() {
        *slot = (value % k) as u8;
        value /= k;
    }
    out
}

fn write_digits(f: &mut fmt::Formatter<'_>, digits: &[u8]) -> fmt::Result {
    for &d in digits {
        let c = DIGIT_CHARS.get(d as usize).copied().unwrap_or(b'?');
        write!(f, "{}", c as char)?;
    }
    Ok(())
}

pub(crate) fn parse_digits(s: &str) -> Result<Vec<u8>> {
    s.bytes()
        .map(|b| match b {
            b'0'..=b'9' => Ok(b - b'0'),
            b'a'..=b'z' => Ok(b - b'a' + 10),
            _ => Err(Error::InvalidAddress(format!("bad digit {:?}", b as char))),
        })
        .collect()
}

pub(crate) fn format_digits(digits: &[u8]) -> String {
    digits
        .iter()
        .map(|&d| DIGIT_CHARS.get(d as usize).copied().unwrap_or(b'?') as char)
        .collect()
}

/// Text form `i:120/j:001`; digits above 9 are written `a..z`.
impl fmt::Display for CellAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("i:")?;
        write_digits(f, &self.i)?;
        f.write_str("/j:")?;
        write_digits(f, &self.j)
    }
}

impl FromStr for CellAddress {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidAddress(format!("expected \"i:<digits>/j:<digits>\", got {s:?}"));
        let (i, j) = s.trim().split_once('/').ok_or_else(bad)?;
        let i = i.strip_prefix("i:").ok_or_else(bad)?;
        let j = j.strip_prefix("j:").ok_or_else(bad)?;
        CellAddress::new(parse_digits(i)?, parse_digits(j)?)
    }
}

/// The square `K_{i,j}` named by `addr`.
pub fn cell_square(params: &PercolationParams, addr: &CellAddress) -> Result<Square> {
    let cell = addr.to_cell(params.k())?;
    Ok(Square::of_cell(params.k(), addr.depth(), cell))
}

/// A level-`n` k-adic interval `[left, left + k^-n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KadicInterval {
    pub depth: u32,
    pub digits: Vec<u8>,
    pub left: f64,
    pub right: f64,
}

impl KadicInterval {
    pub fn index(&self, k: u32) -> u64 {
        self.digits.iter().fold(0u64, |acc, &d| acc * k as u64 + d as u64)
    }
}

/// How k-adic points are treated when a caller needs the interval of `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KadicMode {
    /// Reject k-adic points: the axial density is undefined there.
    #[default]
    Strict,
    /// Use left-closed intervals `[a, b)`.
    LeftClosed,
}

/// `x * k^level`, snapped to the nearest integer when within one ulp of it.
fn scaled(k: u32, x: f64, level: u32) -> (f64, bool) {
    let t = x * (k as f64).powi(level as i32);
    let r = t.round();
    if (t - r).abs() <= f64::EPSILON * t.abs().max(1.0) {
        (r, true)
    } else {
        (t, false)
    }
}

/// Smallest level `l <= max_level` at which `x` is a k-adic point `m k^-l`.
pub fn kadic_level(k: u32, x: f64, max_level: u32) -> Option<u32> {
    (0..=max_level).find(|&level| scaled(k, x, level).1)
}

/// Distance of `x` to the nearest k-adic point of level `<= level`.
pub fn kadic_distance(k: u32, x: f64, level: u32) -> f64 {
    let scale = (k as f64).powi(level as i32);
    let t = x * scale;
    (t - t.round()).abs() / scale
}

/// The level-`depth` k-adic interval containing `x`.
pub fn locate(params: &PercolationParams, x: f64, depth: u32, mode: KadicMode) -> Result<KadicInterval> {
    if !(0.0..1.0).contains(&x) {
        return Err(Error::OutOfRange(x));
    }
    let k = params.k();
    let limit = PercolationParams::depth_limit_for(k);
    if depth > limit {
        return Err(Error::DepthOutOfRange { requested: depth, limit });
    }
    let (t, on_point) = scaled(k, x, depth);
    if on_point && mode == KadicMode::Strict {
        let level = kadic_level(k, x, depth).unwrap_or(depth);
        return Err(Error::KadicPoint { x, level });
    }
    let index = t.floor() as u32;
    let scale = (k as f64).powi(depth as i32);
    Ok(KadicInterval {
        depth,
        digits: digits_of(index, k, depth),
        left: index as f64 / scale,
        right: (index as f64 + 1.0) / scale,
    })
}

/// The k-symbolic metric: `k^-l` for the first level `l` with a k-adic point
/// strictly between `x` and `y`; `0` when `x == y`.
pub fn rho_metric(params: &PercolationParams, x: f64, y: f64) -> Result<f64> {
    for v in [x, y] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(v));
        }
    }
    Ok(rho_level(params.k(), x, y).map_or(0.0, |l| (params.k() as f64).powi(-(l as i32))))
}

/// Level `l` realising [`rho_metric`], or `None` if the points coincide.
pub fn rho_level(k: u32, x: f64, y: f64) -> Option<u32> {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    if lo == hi {
        return None;
    }
    let kf = k as f64;
    let mut level = 1u32;
    while kf.powi(level as i32) < 2f64.powi(62) {
        let (a, _) = scaled(k, lo, level);
        let (b, _) = scaled(k, hi, level);
        if a.floor() + 1.0 < b {
            return Some(level);
        }
        level += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: u32) -> PercolationParams {
        PercolationParams::new(k, 0.5).unwrap()
    }

    #[test]
    fn cell_square_examples() {
        let sq = cell_square(&params(2), &CellAddress::new(vec![0], vec![1]).unwrap()).unwrap();
        assert_eq!((sq.x0, sq.x1(), sq.y0, sq.y1()), (0.0, 0.5, 0.5, 1.0));

        let sq = cell_square(&params(3), &CellAddress::root()).unwrap();
        assert_eq!(sq, Square::unit());

        let sq = cell_square(&params(3), &"i:12/j:00".parse().unwrap()).unwrap();
        assert!((sq.x0 - 5.0 / 9.0).abs() < 1e-15);
        assert!((sq.x1() - 6.0 / 9.0).abs() < 1e-15);
        assert_eq!(sq.y0, 0.0);
        assert!((sq.y1() - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn digit_out_of_range_is_rejected() {
        let addr = CellAddress::new(vec![0, 3], vec![1, 1]).unwrap();
        assert!(matches!(cell_square(&params(3), &addr), Err(Error::InvalidAddress(_))));
        assert!(CellAddress::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn address_text_round_trip() {
        let addr: CellAddress = "i:120/j:001".parse().unwrap();
        assert_eq!(addr.i_digits(), &[1, 2, 0]);
        assert_eq!(addr.j_digits(), &[0, 0, 1]);
        assert_eq!(addr.to_string(), "i:120/j:001");
        assert_eq!("i:/j:".parse::<CellAddress>().unwrap(), CellAddress::root());
        assert!("120/001".parse::<CellAddress>().is_err());
        let cell = addr.to_cell(3).unwrap();
        assert_eq!(cell, Cell::new(15, 1));
        assert_eq!(CellAddress::from_cell(3, 3, cell), addr);
    }

    #[test]
    fn rho_examples() {
        assert_eq!(rho_metric(&params(2), 0.1, 0.4).unwrap(), 0.25);
        assert_eq!(rho_metric(&params(5), 0.3, 0.3).unwrap(), 0.0);
        assert!((rho_metric(&params(3), 0.1, 0.9).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(rho_metric(&params(2), -0.1, 0.4).is_err());
    }

    #[test]
    fn rho_needs_strict_separation() {
        // 0.5 sits on the level-1 dyadic point, which does not separate it from 0.75.
        assert_eq!(rho_metric(&params(2), 0.5, 0.75).unwrap(), 0.125);
        assert_eq!(rho_metric(&params(2), 0.25, 0.75).unwrap(), 0.5);
    }

    #[test]
    fn locate_examples() {
        let iv = locate(&params(2), 0.3, 2, KadicMode::Strict).unwrap();
        assert_eq!(iv.digits, vec![0, 1]);
        assert_eq!((iv.left, iv.right), (0.25, 0.5));

        let iv = locate(&params(3), 0.0, 1, KadicMode::LeftClosed).unwrap();
        assert_eq!(iv.digits, vec![0]);
        assert!((iv.right - 1.0 / 3.0).abs() < 1e-16);

        assert_eq!(
            locate(&params(2), 0.5, 1, KadicMode::Strict),
            Err(Error::KadicPoint { x: 0.5, level: 1 })
        );
        // 1/3 rounds to a float within an ulp of the ternary point.
        assert!(matches!(
            locate(&params(3), 1.0 / 3.0, 4, KadicMode::Strict),
            Err(Error::KadicPoint { level: 1, .. })
        ));
        let iv = locate(&params(3), 1.0 / 3.0, 2, KadicMode::LeftClosed).unwrap();
        assert_eq!(iv.digits, vec![1, 0]);
        assert!(locate(&params(2), 1.0, 1, KadicMode::LeftClosed).is_err());
    }

    #[test]
    fn children_tile_parent() {
        let k = 3;
        let parent = CellAddress::new(vec![2], vec![1]).unwrap();
        let psq = cell_square(&params(k), &parent).unwrap();
        let mut area = 0.0;
        for i in 0..k as u8 {
            for j in 0..k as u8 {
                let sq = cell_square(&params(k), &parent.child(i, j)).unwrap();
                assert!((sq.side - 1.0 / 9.0).abs() < 1e-16);
                assert!(sq.x0 >= psq.x0 - 1e-15 && sq.x1() <= psq.x1() + 1e-15);
                assert!(sq.y0 >= psq.y0 - 1e-15 && sq.y1() <= psq.y1() + 1e-15);
                area += sq.area();
            }
        }
        assert!((area - psq.area()).abs() < 1e-15);
    }
}
