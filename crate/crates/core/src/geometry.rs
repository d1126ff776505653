//! Orthogonal projections `pi_theta(x, y) = x cos(theta) + y sin(theta)`
//! and the exact length of a fiber `{pi_theta = t}` inside a square.
//!
//! The two axial directions are a declared mode ([`Direction::Axial`]), never
//! inferred from a float: along them fibers run along grid edges and the
//! densities are piecewise constant, so they get their own code path.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::addressing::Square;
use crate::error::{Error, Result};

/// Axial projections. `Horizontal` is `theta = 0` (onto the x-axis),
/// `Vertical` is `theta = pi/2` (onto the y-axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

impl Axis {
    pub fn theta(self) -> f64 {
        match self {
            Axis::Horizontal => 0.0,
            Axis::Vertical => FRAC_PI_2,
        }
    }
}

/// A projection angle in `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Angle(f64);

impl Angle {
    pub fn new(theta: f64) -> Result<Self> {
        if !(0.0..PI).contains(&theta) {
            return Err(Error::InvalidParams(format!("theta must lie in [0, pi), got {theta}")));
        }
        Ok(Angle(theta))
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn cos(self) -> f64 {
        self.0.cos()
    }

    pub fn sin(self) -> f64 {
        self.0.sin()
    }

    /// Exact comparison against the two axial angles, no tolerance.
    pub fn is_axial(self) -> bool {
        self.0 == 0.0 || self.0 == FRAC_PI_2
    }

    /// Distance to the nearest axial direction, `min(theta, |pi/2 - theta|, pi - theta)`.
    pub fn margin(self) -> f64 {
        self.0.min((FRAC_PI_2 - self.0).abs()).min(PI - self.0)
    }
}

/// Either a declared axial mode or an oblique angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    Axial(Axis),
    Oblique(Angle),
}

impl Direction {
    pub fn oblique(theta: f64) -> Result<Self> {
        Ok(Direction::Oblique(Angle::new(theta)?))
    }

    pub fn theta(&self) -> f64 {
        match self {
            Direction::Axial(axis) => axis.theta(),
            Direction::Oblique(angle) => angle.radians(),
        }
    }

    pub fn is_axial(&self) -> bool {
        matches!(self, Direction::Axial(_))
    }
}

/// Accepts `horizontal`, `vertical`, plain radians (`1.0`), or multiples of
/// pi such as `pi/4`, `3pi/8`, `0.25*pi`.
impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "horizontal" => return Ok(Direction::Axial(Axis::Horizontal)),
            "vertical" => return Ok(Direction::Axial(Axis::Vertical)),
            _ => {}
        }
        let bad = || Error::InvalidParams(format!("cannot parse direction {s:?}"));
        let theta = match s.split_once("pi") {
            Some((coef, rest)) => {
                let coef = coef.trim().trim_end_matches('*').trim();
                let coef = if coef.is_empty() { 1.0 } else { coef.parse::<f64>().map_err(|_| bad())? };
                let rest = rest.trim();
                let denom = match rest.strip_prefix('/') {
                    Some(d) => d.trim().parse::<f64>().map_err(|_| bad())?,
                    None if rest.is_empty() => 1.0,
                    None => return Err(bad()),
                };
                coef * PI / denom
            }
            None => s.parse::<f64>().map_err(|_| bad())?,
        };
        Direction::oblique(theta)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Axial(Axis::Horizontal) => f.write_str("horizontal"),
            Direction::Axial(Axis::Vertical) => f.write_str("vertical"),
            Direction::Oblique(angle) => write!(f, "{}", angle.radians()),
        }
    }
}

impl Serialize for Direction {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Direction::Axial(_) => serializer.serialize_str(&self.to_string()),
            Direction::Oblique(angle) => serializer.serialize_f64(angle.radians()),
        }
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(theta) => Direction::oblique(theta),
            Raw::Text(text) => text.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// `x cos(theta) + y sin(theta)`.
pub fn project(angle: Angle, point: (f64, f64)) -> f64 {
    point.0 * angle.cos() + point.1 * angle.sin()
}

/// Length of `{ (u, v) : u cos + v sin = x }` inside the closed square,
/// by parametric (Liang-Barsky) clipping of the fiber line.
pub fn chord_length(square: &Square, angle: Angle, x: f64) -> f64 {
    let (c, s) = (angle.cos(), angle.sin());
    // Fiber: (x c, x s) + t (-s, c), unit speed.
    let origin = [x * c, x * s];
    let dir = [-s, c];
    let bounds = [(square.x0, square.x1()), (square.y0, square.y1())];
    let (mut t_lo, mut t_hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for axis in 0..2 {
        let (lo, hi) = bounds[axis];
        if dir[axis] == 0.0 {
            if origin[axis] < lo || origin[axis] > hi {
                return 0.0;
            }
            continue;
        }
        let a = (lo - origin[axis]) / dir[axis];
        let b = (hi - origin[axis]) / dir[axis];
        t_lo = t_lo.max(a.min(b));
        t_hi = t_hi.min(a.max(b));
    }
    (t_hi - t_lo).max(0.0)
}

/// `pi_theta([0, 1]^2) = [lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRange {
    pub lo: f64,
    pub hi: f64,
}

impl ProjectionRange {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }
}

pub fn range(direction: Direction) -> ProjectionRange {
    match direction {
        Direction::Axial(_) => ProjectionRange { lo: 0.0, hi: 1.0 },
        Direction::Oblique(angle) => {
            let (c, s) = (angle.cos(), angle.sin());
            ProjectionRange {
                lo: c.min(0.0) + s.min(0.0),
                hi: c.max(0.0) + s.max(0.0),
            }
        }
    }
}

/// The function `x -> chord_length(square, theta, x)` for oblique `theta`:
/// zero outside `[knots[0], knots[3]]`, rising linearly to `height` at
/// `knots[1]`, flat until `knots[2]`, falling back to zero at `knots[3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trapezoid {
    pub knots: [f64; 4],
    pub height: f64,
}

/// Relative tolerance under which projected corners are merged.
pub const MERGE_RTOL: f64 = 1e-12;

pub(crate) fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= MERGE_RTOL * a.abs().max(b.abs()).max(1.0)
}

impl Trapezoid {
    /// Trapezoid of a square of the given side whose lower-left corner
    /// projects to 0.
    pub fn template(side: f64, angle: Angle) -> Result<Self> {
        if angle.is_axial() {
            return Err(Error::Mode(format!(
                "theta = {} is axial; use the axial density instead",
                angle.radians()
            )));
        }
        let (c, s) = (angle.cos(), angle.sin());
        let mut knots = [0.0, side * c, side * s, side * (c + s)];
        knots.sort_by(f64::total_cmp);
        if close(knots[1], knots[2]) {
            let mid = 0.5 * (knots[1] + knots[2]);
            knots[1] = mid;
            knots[2] = mid;
        }
        Ok(Trapezoid {
            knots,
            height: side / c.abs().max(s.abs()),
        })
    }

    pub fn shifted(&self, offset: f64) -> Self {
        Trapezoid {
            knots: self.knots.map(|t| t + offset),
            height: self.height,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let [a, b, c, d] = self.knots;
        if x <= a || x >= d {
            0.0
        } else if x < b {
            self.height * (x - a) / (b - a)
        } else if x <= c {
            self.height
        } else {
            self.height * (d - x) / (d - c)
        }
    }

    /// Distinct breakpoints (three when the plateau degenerates).
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = self.knots.to_vec();
        out.dedup();
        out
    }

    pub fn values(&self) -> Vec<f64> {
        self.breakpoints().iter().map(|&x| if x == self.knots[0] || x == self.knots[3] { 0.0 } else { self.height }).collect()
    }

    /// Exact integral; equals the square's area.
    pub fn integral(&self) -> f64 {
        let [a, b, c, d] = self.knots;
        0.5 * self.height * ((d - a) + (c - b))
    }

    /// Slope of the rising (and falling) edge, `1 / |sin cos|`.
    pub fn max_slope(&self) -> f64 {
        self.height / (self.knots[1] - self.knots[0])
    }
}

/// The trapezoid of `square` under the oblique projection `angle`.
pub fn cell_trapezoid(square: &Square, angle: Angle) -> Result<Trapezoid> {
    let template = Trapezoid::template(square.side, angle)?;
    Ok(template.shifted(project(angle, (square.x0, square.y0))))
}

/// Length of the common reference range `Delta`: the anti-diagonal of the
/// unit square.
pub const DELTA_LENGTH: f64 = SQRT_2;

/// Affine map from the raw range of an oblique projection onto
/// `Delta = [0, sqrt 2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaMap {
    range: ProjectionRange,
}

impl DeltaMap {
    pub fn new(direction: Direction) -> Result<Self> {
        match direction {
            Direction::Axial(_) => Err(Error::Mode("the Delta normalization is defined for oblique directions only".into())),
            Direction::Oblique(angle) if angle.is_axial() => Err(Error::Mode(format!(
                "theta = {} is axial; the Delta normalization needs an oblique direction",
                angle.radians()
            ))),
            Direction::Oblique(_) => Ok(DeltaMap { range: range(direction) }),
        }
    }

    pub fn to_delta(&self, t: f64) -> f64 {
        (t - self.range.lo) * DELTA_LENGTH / self.range.len()
    }

    pub fn from_delta(&self, u: f64) -> f64 {
        self.range.lo + u * self.range.len() / DELTA_LENGTH
    }

    /// Factor by which densities are multiplied when moving to `Delta`.
    pub fn density_factor(&self) -> f64 {
        self.range.len() / DELTA_LENGTH
    }
}

/// Pushes an oblique density forward onto `Delta`; mass is preserved.
pub fn normalize_to_delta(density: &crate::density::PiecewiseDensity) -> Result<crate::density::PiecewiseDensity> {
    density.normalize_to_delta()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn angle(theta: f64) -> Angle {
        Angle::new(theta).unwrap()
    }

    #[test]
    fn project_examples() {
        assert_eq!(project(angle(0.0), (0.3, 0.9)), 0.3);
        assert!((project(angle(FRAC_PI_2), (0.3, 0.9)) - 0.9).abs() < 1e-15);
        assert!((project(angle(FRAC_PI_4), (1.0, 1.0)) - SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn chord_examples() {
        let unit = Square::unit();
        assert!((chord_length(&unit, angle(FRAC_PI_2), 0.3) - 1.0).abs() < 1e-15);
        assert_eq!(chord_length(&unit, angle(0.0), 0.3), 1.0);
        assert_eq!(chord_length(&unit, angle(0.0), 1.3), 0.0);
        assert!((chord_length(&unit, angle(FRAC_PI_4), SQRT_2 / 2.0) - SQRT_2).abs() < 1e-15);
        // Corner cut u + v = 0.2: the chord joins (0.2, 0) and (0, 0.2).
        assert!((chord_length(&unit, angle(FRAC_PI_4), 0.1 * SQRT_2) - 0.2 * SQRT_2).abs() < 1e-15);
        assert_eq!(chord_length(&unit, angle(FRAC_PI_4), -0.1), 0.0);
    }

    #[test]
    fn trapezoid_pi_over_three() {
        let t = cell_trapezoid(&Square::unit(), angle(PI / 3.0)).unwrap();
        let expected = [0.0, 0.5, 3f64.sqrt() / 2.0, 0.5 + 3f64.sqrt() / 2.0];
        for (a, b) in t.knots.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((t.height - 2.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((t.integral() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_degenerates_to_triangle() {
        let t = cell_trapezoid(&Square::unit(), angle(FRAC_PI_4)).unwrap();
        assert_eq!(t.breakpoints().len(), 3);
        assert!((t.eval(SQRT_2 / 2.0) - SQRT_2).abs() < 1e-15);
        assert!((t.integral() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn axial_is_a_mode_error() {
        assert!(matches!(cell_trapezoid(&Square::unit(), angle(0.0)), Err(Error::Mode(_))));
        assert!(matches!(cell_trapezoid(&Square::unit(), angle(FRAC_PI_2)), Err(Error::Mode(_))));
        assert!(DeltaMap::new(Direction::Axial(Axis::Vertical)).is_err());
    }

    #[test]
    fn range_examples() {
        let r = range(Direction::Axial(Axis::Horizontal));
        assert_eq!((r.lo, r.hi), (0.0, 1.0));
        let r = range(Direction::oblique(FRAC_PI_4).unwrap());
        assert_eq!(r.lo, 0.0);
        assert!((r.hi - SQRT_2).abs() < 1e-15);
        let r = range(Direction::oblique(PI / 3.0).unwrap());
        assert!((r.hi - (0.5 + 3f64.sqrt() / 2.0)).abs() < 1e-15);
        let r = range(Direction::oblique(3.0 * FRAC_PI_4).unwrap());
        assert!((r.lo + SQRT_2 / 2.0).abs() < 1e-15 && (r.hi - SQRT_2 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn delta_map_round_trip() {
        let map = DeltaMap::new(Direction::oblique(0.3).unwrap()).unwrap();
        for t in [0.0, 0.2, 0.77, 1.25] {
            assert!((map.from_delta(map.to_delta(t)) - t).abs() < 1e-12);
        }
        let quarter = DeltaMap::new(Direction::oblique(FRAC_PI_4).unwrap()).unwrap();
        assert!((quarter.to_delta(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn direction_parsing() {
        assert_eq!("vertical".parse::<Direction>().unwrap(), Direction::Axial(Axis::Vertical));
        assert_eq!("pi/4".parse::<Direction>().unwrap().theta(), FRAC_PI_4);
        assert_eq!("3pi/4".parse::<Direction>().unwrap().theta(), 3.0 * PI / 4.0);
        assert_eq!("0.25*pi".parse::<Direction>().unwrap().theta(), FRAC_PI_4);
        assert_eq!("1.0".parse::<Direction>().unwrap().theta(), 1.0);
        // A float pi/2 stays an (axial) angle; it is never promoted to the axial mode.
        let d: Direction = "pi/2".parse().unwrap();
        assert!(matches!(d, Direction::Oblique(a) if a.is_axial()));
        assert!("pi".parse::<Direction>().is_err());
        assert!("north".parse::<Direction>().is_err());
        let json = serde_json::to_string(&Direction::Axial(Axis::Horizontal)).unwrap();
        assert_eq!(json, "\"horizontal\"");
        let back: Direction = serde_json::from_str("0.5").unwrap();
        assert_eq!(back.theta(), 0.5);
    }
}
