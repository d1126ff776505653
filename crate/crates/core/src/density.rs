//! Projected densities `y_n(x) = p^-n |fiber(x) ∩ E_n|`.
//!
//! Two independent routes compute the same quantity:
//!
//! * [`density`] and [`density_axial`] build the whole function exactly from
//!   a materialized tree, as a [`PiecewiseDensity`];
//! * [`fiber_profile`] walks only the squares a single fiber meets and
//!   returns `y_0(x), ..., y_n(x)` at once. It works on lazy realizations,
//!   which is what makes depth 10 affordable.
//!
//! [`direct_density_sum`] is a third, brute-force route used as an oracle.

use serde::{Deserialize, Serialize};

use crate::addressing::{kadic_level, Cell, KadicMode, Square};
use crate::error::{Error, Result};
use crate::geometry::{chord_length, close, range, Angle, Axis, DeltaMap, Direction, Trapezoid};
use crate::percolation::{CellSource, Node, PercolationParams, PercolationTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    /// Continuous, linear between breakpoints; `values` are taken at the breakpoints.
    Linear,
    /// Constant on the open level-`n` k-adic intervals; `values` are per piece.
    ConstantOnKadic,
}

/// Coordinates of the density's argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// The raw projection `pi_theta` onto the real line.
    Raw,
    /// Pushed forward onto the common range `Delta = [0, sqrt 2]`.
    Delta,
}

/// Exact representation of `x -> y_n(x)`. Zero outside the breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDensity {
    kind: DensityKind,
    level: u32,
    direction: Direction,
    params: PercolationParams,
    frame: Frame,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseDensity {
    pub fn kind(&self) -> DensityKind {
        self.kind
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn params(&self) -> PercolationParams {
        self.params
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    fn scale(&self) -> f64 {
        (self.params.k() as f64).powi(self.level as i32)
    }

    /// Pointwise value. Axial densities reject k-adic points of level
    /// `<= n` in strict mode.
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        self.evaluate_with(x, KadicMode::Strict)
    }

    pub fn evaluate_with(&self, x: f64, mode: KadicMode) -> Result<f64> {
        match self.kind {
            DensityKind::Linear => Ok(self.linear_at(x)),
            DensityKind::ConstantOnKadic => {
                if !(0.0..=1.0).contains(&x) {
                    return Ok(0.0);
                }
                let (t, on_point) = self.kadic_position(x);
                if on_point && mode == KadicMode::Strict {
                    let level = kadic_level(self.params.k(), x, self.level).unwrap_or(self.level);
                    return Err(Error::KadicPoint { x, level });
                }
                let last = self.values.len() - 1;
                Ok(self.values[(t.floor() as usize).min(last)])
            }
        }
    }

    fn kadic_position(&self, x: f64) -> (f64, bool) {
        let t = x * self.scale();
        let r = t.round();
        if (t - r).abs() <= f64::EPSILON * t.abs().max(1.0) {
            (r, true)
        } else {
            (t, false)
        }
    }

    fn linear_at(&self, x: f64) -> f64 {
        let bp = &self.breakpoints;
        if bp.is_empty() || x < bp[0] || x > bp[bp.len() - 1] {
            return 0.0;
        }
        let i = bp.partition_point(|&b| b <= x) - 1;
        if i + 1 == bp.len() {
            return self.values[i];
        }
        let (b0, b1) = (bp[i], bp[i + 1]);
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        v0 + (v1 - v0) * (x - b0) / (b1 - b0)
    }

    /// Limit of the density as `t -> x` from below.
    pub fn limit_left(&self, x: f64) -> f64 {
        match self.kind {
            DensityKind::Linear => self.linear_at(x),
            DensityKind::ConstantOnKadic => {
                if x <= 0.0 || x > 1.0 {
                    return 0.0;
                }
                let (t, on_point) = self.kadic_position(x);
                let idx = if on_point { t as usize - 1 } else { t.floor() as usize };
                self.values[idx.min(self.values.len() - 1)]
            }
        }
    }

    /// Limit of the density as `t -> x` from above.
    pub fn limit_right(&self, x: f64) -> f64 {
        match self.kind {
            DensityKind::Linear => self.linear_at(x),
            DensityKind::ConstantOnKadic => {
                if !(0.0..1.0).contains(&x) {
                    return 0.0;
                }
                let (t, _) = self.kadic_position(x);
                self.values[(t.floor() as usize).min(self.values.len() - 1)]
            }
        }
    }

    /// Exact integral.
    pub fn mass(&self) -> f64 {
        match self.kind {
            DensityKind::Linear => {
                let mut acc = Neumaier::default();
                for (w, v) in self.breakpoints.windows(2).zip(self.values.windows(2)) {
                    acc.add(0.5 * (v[0] + v[1]) * (w[1] - w[0]));
                }
                acc.total()
            }
            DensityKind::ConstantOnKadic => {
                let mut acc = Neumaier::default();
                for (w, v) in self.breakpoints.windows(2).zip(&self.values) {
                    acc.add(v * (w[1] - w[0]));
                }
                acc.total()
            }
        }
    }

    /// Cumulative distribution of the (unnormalized) measure.
    pub fn cumulative(&self) -> Cumulative<'_> {
        let mut partial = Vec::with_capacity(self.breakpoints.len());
        let mut acc = Neumaier::default();
        partial.push(0.0);
        for i in 0..self.breakpoints.len().saturating_sub(1) {
            let width = self.breakpoints[i + 1] - self.breakpoints[i];
            let piece = match self.kind {
                DensityKind::Linear => 0.5 * (self.values[i] + self.values[i + 1]) * width,
                DensityKind::ConstantOnKadic => self.values[i] * width,
            };
            acc.add(piece);
            partial.push(acc.total());
        }
        Cumulative { density: self, partial }
    }

    /// Points at which the function may change slope or jump, strictly
    /// inside `(a, b)`, plus the interval ends.
    fn knots_in(&self, a: f64, b: f64, out: &mut Vec<f64>) {
        out.extend(self.breakpoints.iter().copied().filter(|&t| t > a && t < b));
    }

    /// Sup minus inf over `[a, b]`. Jumps of axial densities count through
    /// their one-sided limits (the function is undefined on k-adic points).
    pub fn variation(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = extremes_over(&[self], a, b, |vals| vals[0]);
        hi - lo
    }

    /// Normalizes onto `Delta`.
    pub fn normalize_to_delta(&self) -> Result<Self> {
        if self.frame == Frame::Delta {
            return Err(Error::Mode("density is already in the Delta frame".into()));
        }
        let map = DeltaMap::new(self.direction)?;
        let factor = map.density_factor();
        Ok(PiecewiseDensity {
            frame: Frame::Delta,
            breakpoints: self.breakpoints.iter().map(|&t| map.to_delta(t)).collect(),
            values: self.values.iter().map(|&v| v * factor).collect(),
            ..self.clone()
        })
    }

    /// Inverse of [`normalize_to_delta`](Self::normalize_to_delta).
    pub fn denormalize_from_delta(&self) -> Result<Self> {
        if self.frame == Frame::Raw {
            return Err(Error::Mode("density is already in the raw frame".into()));
        }
        let map = DeltaMap::new(self.direction)?;
        let factor = map.density_factor();
        Ok(PiecewiseDensity {
            frame: Frame::Raw,
            breakpoints: self.breakpoints.iter().map(|&u| map.from_delta(u)).collect(),
            values: self.values.iter().map(|&v| v / factor).collect(),
            ..self.clone()
        })
    }

    pub fn to_file(&self) -> DensityFile {
        DensityFile {
            kind: self.kind,
            level: self.level,
            theta: self.direction,
            frame: self.frame,
            k: self.params.k(),
            p: self.params.p(),
            breakpoints: self.breakpoints.clone(),
            values_or_slopes: self.values.clone(),
        }
    }

    pub fn from_file(file: DensityFile) -> Result<Self> {
        let params = PercolationParams::new(file.k, file.p)?;
        let expected = match file.kind {
            DensityKind::Linear => file.breakpoints.len(),
            DensityKind::ConstantOnKadic => file.breakpoints.len().saturating_sub(1),
        };
        if file.values_or_slopes.len() != expected {
            return Err(Error::Mode(format!(
                "expected {expected} values for {} breakpoints",
                file.breakpoints.len()
            )));
        }
        if file.breakpoints.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Mode("breakpoints must be sorted".into()));
        }
        Ok(PiecewiseDensity {
            kind: file.kind,
            level: file.level,
            direction: file.theta,
            params,
            frame: file.frame,
            breakpoints: file.breakpoints,
            values: file.values_or_slopes,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("density serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DensityFile = serde_json::from_str(text).map_err(|e| Error::Mode(format!("bad density file: {e}")))?;
        Self::from_file(file)
    }

    /// `x,value` rows preceded by a `# {json header}` line. Axial densities
    /// are sampled with left-closed intervals.
    pub fn to_csv(&self, xs: &[f64], seed: Option<u64>) -> String {
        let header = serde_json::json!({
            "theta": self.direction,
            "n": self.level,
            "k": self.params.k(),
            "p": self.params.p(),
            "seed": seed,
            "frame": self.frame,
        });
        let mut out = format!("# {header}\nx,value\n");
        for &x in xs {
            let v = self.evaluate_with(x, KadicMode::LeftClosed).unwrap_or(0.0);
            out.push_str(&format!("{x},{v}\n"));
        }
        out
    }
}

/// Wire format of a [`PiecewiseDensity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFile {
    pub kind: DensityKind,
    pub level: u32,
    pub theta: Direction,
    pub frame: Frame,
    pub k: u32,
    pub p: f64,
    pub breakpoints: Vec<f64>,
    pub values_or_slopes: Vec<f64>,
}

/// CDF helper returned by [`PiecewiseDensity::cumulative`].
pub struct Cumulative<'a> {
    density: &'a PiecewiseDensity,
    partial: Vec<f64>,
}

impl Cumulative<'_> {
    pub fn total(&self) -> f64 {
        self.partial.last().copied().unwrap_or(0.0)
    }

    pub fn at(&self, x: f64) -> f64 {
        let bp = &self.density.breakpoints;
        if bp.is_empty() || x <= bp[0] {
            return 0.0;
        }
        if x >= bp[bp.len() - 1] {
            return self.total();
        }
        let i = bp.partition_point(|&b| b <= x) - 1;
        let dx = x - bp[i];
        let extra = match self.density.kind {
            DensityKind::Linear => 0.5 * (self.density.values[i] + self.density.linear_at(x)) * dx,
            DensityKind::ConstantOnKadic => self.density.values[i] * dx,
        };
        self.partial[i] + extra
    }
}

/// Smallest and largest value of `combine(values of each density)` over
/// `[a, b]`, taken over one-sided limits at every knot.
fn extremes_over(densities: &[&PiecewiseDensity], a: f64, b: f64, combine: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let mut knots = vec![a, b];
    for d in densities {
        d.knots_in(a, b, &mut knots);
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut vals = vec![0.0; densities.len()];
    let mut consider = |vals: &[f64]| {
        let v = combine(vals);
        lo = lo.min(v);
        hi = hi.max(v);
    };
    if knots.len() == 1 {
        for (slot, d) in vals.iter_mut().zip(densities) {
            *slot = d.limit_right(a);
        }
        consider(&vals);
    }
    for w in knots.windows(2) {
        for (slot, d) in vals.iter_mut().zip(densities) {
            *slot = d.limit_right(w[0]);
        }
        consider(&vals);
        for (slot, d) in vals.iter_mut().zip(densities) {
            *slot = d.limit_left(w[1]);
        }
        consider(&vals);
    }
    (lo, hi)
}

/// `sup |d1 - d2|` over `[a, b]`.
pub fn sup_distance(d1: &PiecewiseDensity, d2: &PiecewiseDensity, a: f64, b: f64) -> Result<f64> {
    if d1.frame != d2.frame {
        return Err(Error::Mode("densities live in different frames".into()));
    }
    let (lo, hi) = extremes_over(&[d1, d2], a, b, |v| v[0] - v[1]);
    Ok(lo.abs().max(hi.abs()))
}

/// Sup minus inf of `density` over `[a, b]`.
pub fn variation(density: &PiecewiseDensity, a: f64, b: f64) -> f64 {
    density.variation(a, b)
}

/// Compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Exact `y_n` for an oblique direction: the sum over `E_n` of
/// `p^-n` times each square's trapezoid.
///
/// All level-`n` trapezoids are translates of one template, so the sum is
/// assembled from its second differences: `+1` at the lowest projected
/// corner, `-1` at the middle two, `+1` at the highest. Every event sits at
/// a lattice corner `(X, Y)`, so the value at a breakpoint is
/// `slope * side * (c (S X - sum dX) + s (S Y - sum dY))` with the running
/// sums kept as exact integers; rounding does not accumulate across events.
pub fn density(tree: &PercolationTree, n: u32, angle: Angle) -> Result<PiecewiseDensity> {
    let cells = tree.level(n)?;
    let params = tree.params();
    let side = (params.k() as f64).powi(-(n as i32));
    let template = Trapezoid::template(side, angle)?;
    let (c, s) = (angle.cos(), angle.sin());
    let project = |x: i64, y: i64| side * (x as f64 * c + y as f64 * s);

    // Corner offsets in increasing order of projection, with their signs.
    let mut corners = [(0i64, 0i64), (1, 0), (0, 1), (1, 1)];
    corners.sort_by(|a, b| (a.0 as f64 * c + a.1 as f64 * s).total_cmp(&(b.0 as f64 * c + b.1 as f64 * s)));
    let signs = [1i64, -1, -1, 1];

    let mut events: Vec<(f64, i64, i64, i64)> = Vec::with_capacity(cells.len() * 4);
    for cell in cells {
        for (&(a, b), &sign) in corners.iter().zip(&signs) {
            let (x, y) = (cell.x as i64 + a, cell.y as i64 + b);
            events.push((project(x, y), sign, x, y));
        }
    }
    events.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let scale = template.max_slope() * params.p().powi(-(n as i32)) * side;
    let mut breakpoints = Vec::new();
    let mut values = Vec::new();
    let (mut slope_count, mut sum_x, mut sum_y) = (0i64, 0i128, 0i128);
    let mut i = 0;
    while i < events.len() {
        // Coincident events form one candidate breakpoint.
        let (pos, _, rx, ry) = events[i];
        let mut delta = 0;
        while i < events.len() && close(pos, events[i].0) {
            let (_, sign, x, y) = events[i];
            delta += sign;
            sum_x += (sign as i128) * (x as i128);
            sum_y += (sign as i128) * (y as i128);
            i += 1;
        }
        slope_count += delta;
        let first = breakpoints.is_empty();
        let last = i == events.len();
        if delta != 0 || first || last {
            let v = if first || last {
                0.0
            } else {
                let a = (slope_count as i128 * rx as i128 - sum_x) as f64;
                let b = (slope_count as i128 * ry as i128 - sum_y) as f64;
                (scale * (c * a + s * b)).max(0.0)
            };
            breakpoints.push(pos);
            values.push(v);
        }
    }
    debug_assert_eq!(slope_count, 0);

    Ok(PiecewiseDensity {
        kind: DensityKind::Linear,
        level: n,
        direction: Direction::Oblique(angle),
        params,
        frame: Frame::Raw,
        breakpoints,
        values,
    })
}

/// Largest `k^n` for which the axial density is materialized.
pub const AXIAL_PIECE_LIMIT: u64 = 1 << 26;

/// Exact axial `y_n`: on the level-`n` k-adic interval with index `j`, the
/// vertical density is `p^-n k^-n #{i : (i, j) in E_n}`; horizontal swaps
/// the roles of `i` and `j`.
pub fn density_axial(tree: &PercolationTree, n: u32, axis: Axis) -> Result<PiecewiseDensity> {
    let cells = tree.level(n)?;
    let params = tree.params();
    let pieces = (params.k() as u64).pow(n);
    if pieces > AXIAL_PIECE_LIMIT {
        return Err(Error::Infeasible(format!("{pieces} axial pieces at level {n}")));
    }
    let mut counts = vec![0u32; pieces as usize];
    for cell in cells {
        let idx = match axis {
            Axis::Horizontal => cell.x,
            Axis::Vertical => cell.y,
        };
        counts[idx as usize] += 1;
    }
    let weight = (params.pk()).powi(-(n as i32));
    let scale = pieces as f64;
    Ok(PiecewiseDensity {
        kind: DensityKind::ConstantOnKadic,
        level: n,
        direction: Direction::Axial(axis),
        params,
        frame: Frame::Raw,
        breakpoints: (0..=pieces).map(|j| j as f64 / scale).collect(),
        values: counts.into_iter().map(|c| c as f64 * weight).collect(),
    })
}

/// Dispatches on the direction.
pub fn density_of(tree: &PercolationTree, n: u32, direction: Direction) -> Result<PiecewiseDensity> {
    match direction {
        Direction::Axial(axis) => density_axial(tree, n, axis),
        Direction::Oblique(angle) => density(tree, n, angle),
    }
}

/// `p^-n sum_{cells of E_n} chord_length(cell, theta, x)`, one square at a
/// time. Quadratic-free but linear in `#E_n` per point; an oracle.
pub fn direct_density_sum(tree: &PercolationTree, n: u32, direction: Direction, x: f64) -> Result<f64> {
    let params = tree.params();
    let angle = Angle::new(direction.theta())?;
    let mut acc = Neumaier::default();
    for &cell in tree.level(n)? {
        acc.add(chord_length(&Square::of_cell(params.k(), n, cell), angle, x));
    }
    Ok(acc.total() * params.p().powi(-(n as i32)))
}

/// `y_0(x), ..., y_depth(x)` along a single fiber, visiting only the squares
/// the fiber meets.
pub fn fiber_profile<S: CellSource + ?Sized>(
    source: &S,
    direction: Direction,
    x: f64,
    depth: u32,
    mode: KadicMode,
) -> Result<Vec<f64>> {
    let params = source.params();
    check_source_depth(source, depth)?;
    let mut sums = match direction {
        Direction::Oblique(angle) => oblique_fiber(source, angle, x, depth, None)?,
        Direction::Axial(axis) => axial_fiber(source, axis, x, depth, mode, None)?,
    };
    let inv_p = 1.0 / params.p();
    let mut weight = 1.0;
    for s in sums.iter_mut() {
        *s *= weight;
        weight *= inv_p;
    }
    Ok(sums)
}

fn check_source_depth<S: CellSource + ?Sized>(source: &S, depth: u32) -> Result<()> {
    let limit = source.depth_limit().unwrap_or(u32::MAX).min(source.params().depth_limit());
    if depth > limit {
        return Err(Error::DepthOutOfRange { requested: depth, limit });
    }
    Ok(())
}

/// `y_depth(x)` together with the level-`depth` squares the fiber meets.
///
/// Paired with [`fiber_step`] this redraws only the next level, which is all
/// a conditional resample below `depth` changes.
pub fn fiber_frontier<S: CellSource + ?Sized>(
    source: &S,
    direction: Direction,
    x: f64,
    depth: u32,
    mode: KadicMode,
) -> Result<(f64, Vec<Node>)> {
    check_source_depth(source, depth)?;
    let mut frontier = Vec::new();
    let sums = match direction {
        Direction::Oblique(angle) => oblique_fiber(source, angle, x, depth, Some(&mut frontier))?,
        Direction::Axial(axis) => axial_fiber(source, axis, x, depth, mode, Some(&mut frontier))?,
    };
    Ok((sums[depth as usize] * source.params().p().powi(-(depth as i32)), frontier))
}

/// `y_{depth+1}(x)` from the squares returned by [`fiber_frontier`]; `source`
/// must agree with the one that produced them down to `depth`.
pub fn fiber_step<S: CellSource + ?Sized>(source: &S, direction: Direction, x: f64, depth: u32, frontier: &[Node]) -> Result<f64> {
    check_source_depth(source, depth + 1)?;
    let params = source.params();
    let k = params.k() as f64;
    let child = depth + 1;
    let side = k.powi(-(child as i32));
    let mut acc = 0.0;
    match direction {
        Direction::Oblique(angle) => {
            let tmpl = Trapezoid::template(side, angle)?;
            let (c, s) = (angle.cos(), angle.sin());
            let rel = |cell: Cell| x - side * (cell.x as f64 * c + cell.y as f64 * s);
            let hits = |cell: Cell| {
                let r = rel(cell);
                r > tmpl.knots[0] && r < tmpl.knots[3]
            };
            for &node in frontier {
                source.for_each_child(depth, node, &hits, &mut |n| acc += tmpl.eval(rel(n.cell)));
            }
        }
        Direction::Axial(axis) => {
            let line = fiber_line(params.k(), x, child);
            let on_line = |cell: Cell| axis_coordinate(axis, cell) == line;
            let mut count = 0u64;
            for &node in frontier {
                source.for_each_child(depth, node, &on_line, &mut |_| count += 1);
            }
            acc = count as f64 * side;
        }
    }
    Ok(acc * params.p().powi(-(child as i32)))
}

fn axis_coordinate(axis: Axis, cell: Cell) -> u32 {
    match axis {
        Axis::Horizontal => cell.x,
        Axis::Vertical => cell.y,
    }
}

/// Index of the level-`m` column (or row) holding `x`, left-closed.
fn fiber_line(k: u32, x: f64, m: u32) -> u32 {
    let size = (k as f64).powi(m as i32);
    let t = x * size;
    let r = t.round();
    let idx = if (t - r).abs() <= f64::EPSILON * t.abs().max(1.0) { r } else { t.floor() };
    (idx.max(0.0) as u64).min(size as u64 - 1) as u32
}

/// `y_n(x)` through [`fiber_profile`].
pub fn fiber_value<S: CellSource + ?Sized>(source: &S, direction: Direction, x: f64, n: u32, mode: KadicMode) -> Result<f64> {
    Ok(fiber_profile(source, direction, x, n, mode)?[n as usize])
}

fn oblique_fiber<S: CellSource + ?Sized>(
    source: &S,
    angle: Angle,
    x: f64,
    depth: u32,
    mut frontier: Option<&mut Vec<Node>>,
) -> Result<Vec<f64>> {
    let k = source.params().k();
    let (c, s) = (angle.cos(), angle.sin());
    let templates: Vec<(f64, Trapezoid)> = (0..=depth)
        .map(|m| {
            let side = (k as f64).powi(-(m as i32));
            Trapezoid::template(side, angle).map(|t| (side, t))
        })
        .collect::<Result<_>>()?;
    let offset = |m: u32, cell: Cell| {
        let side = templates[m as usize].0;
        side * (cell.x as f64 * c + cell.y as f64 * s)
    };

    let mut sums = vec![0.0; depth as usize + 1];
    let mut stack: Vec<(u32, Node, f64)> = Vec::new();
    let root_chord = templates[0].1.eval(x);
    if root_chord > 0.0 {
        stack.push((0, source.root(), root_chord));
    }
    let mut pending = Vec::new();
    while let Some((m, node, chord)) = stack.pop() {
        sums[m as usize] += chord;
        if m == depth {
            if let Some(f) = frontier.as_deref_mut() {
                f.push(node);
            }
            continue;
        }
        let child = m + 1;
        let tmpl = templates[child as usize].1;
        let hits = |cell: Cell| {
            let rel = x - offset(child, cell);
            rel > tmpl.knots[0] && rel < tmpl.knots[3]
        };
        pending.clear();
        source.for_each_child(m, node, &hits, &mut |n| pending.push(n));
        for &n in &pending {
            let chord = tmpl.eval(x - offset(child, n.cell));
            if chord > 0.0 {
                stack.push((child, n, chord));
            }
        }
    }
    Ok(sums)
}

fn axial_fiber<S: CellSource + ?Sized>(
    source: &S,
    axis: Axis,
    x: f64,
    depth: u32,
    mode: KadicMode,
    mut frontier: Option<&mut Vec<Node>>,
) -> Result<Vec<f64>> {
    let k = source.params().k();
    let mut sums = vec![0.0; depth as usize + 1];
    if !(0.0..=1.0).contains(&x) {
        return Ok(sums);
    }
    if mode == KadicMode::Strict {
        if let Some(level) = kadic_level(k, x, depth) {
            return Err(Error::KadicPoint { x, level });
        }
    }
    // Column (or row) index of the fiber at each level.
    let lines: Vec<u32> = (0..=depth).map(|m| fiber_line(k, x, m)).collect();
    let along = |cell: Cell| axis_coordinate(axis, cell);
    let mut stack = vec![(0u32, source.root())];
    let mut pending = Vec::new();
    while let Some((m, node)) = stack.pop() {
        sums[m as usize] += (k as f64).powi(-(m as i32));
        if m == depth {
            if let Some(f) = frontier.as_deref_mut() {
                f.push(node);
            }
            continue;
        }
        let line = lines[m as usize + 1];
        pending.clear();
        source.for_each_child(m, node, &|cell| along(cell) == line, &mut |n| pending.push(n));
        stack.extend(pending.iter().map(|&n| (m + 1, n)));
    }
    Ok(sums)
}

/// One observation of `|y_{n+1}(x) - y_n(x)|` on a single realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementSample {
    pub x: f64,
    pub theta: Direction,
    pub level: u32,
    pub y_n: f64,
    pub y_next: f64,
    pub value: f64,
}

/// The increment between levels `n` and `n + 1` of the same realization.
pub fn increment<S: CellSource + ?Sized>(source: &S, n: u32, direction: Direction, x: f64) -> Result<IncrementSample> {
    let profile = fiber_profile(source, direction, x, n + 1, KadicMode::Strict)?;
    let (y_n, y_next) = (profile[n as usize], profile[n as usize + 1]);
    Ok(IncrementSample {
        x,
        theta: direction,
        level: n,
        y_n,
        y_next,
        value: (y_next - y_n).abs(),
    })
}

/// Distance used by [`holder_modulus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolderMetric {
    Euclidean,
    /// The k-symbolic metric; only meaningful for axial densities.
    Rho,
}

fn pair_distance(metric: HolderMetric, k: u32, x: f64, y: f64) -> f64 {
    match metric {
        HolderMetric::Euclidean => (x - y).abs(),
        HolderMetric::Rho => crate::addressing::rho_level(k, x, y).map_or(0.0, |l| (k as f64).powi(-(l as i32))),
    }
}

/// `max |f(x) - f(y)| / d(x, y)^alpha` over the given pairs; pairs at
/// distance zero are skipped.
pub fn holder_modulus(f: impl Fn(f64) -> f64, pairs: &[(f64, f64)], metric: HolderMetric, k: u32, alpha: f64) -> f64 {
    pairs
        .iter()
        .filter_map(|&(x, y)| {
            let d = pair_distance(metric, k, x, y);
            (d > 0.0).then(|| (f(x) - f(y)).abs() / d.powf(alpha))
        })
        .fold(0.0, f64::max)
}

/// [`holder_modulus`] over all pairs of pre-evaluated samples.
pub fn holder_modulus_sampled(xs: &[f64], values: &[f64], metric: HolderMetric, k: u32, alpha: f64) -> f64 {
    let mut best = 0.0f64;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let d = pair_distance(metric, k, xs[i], xs[j]);
            if d > 0.0 {
                best = best.max((values[i] - values[j]).abs() / d.powf(alpha));
            }
        }
    }
    best
}

/// The raw range of `direction` (support of every `y_n`).
pub fn support(direction: Direction) -> (f64, f64) {
    let r = range(direction);
    (r.lo, r.hi)
}
