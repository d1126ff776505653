//! Realizations of the random construction `E_1 ⊇ E_2 ⊇ ...`.
//!
//! Every square of every level owns one uniform draw, a pure function of
//! `(seed, depth, x, y)`. A square survives when its parent survives and its
//! draw is below `p`. Two views of the same realization exist:
//!
//! * [`Realization`] is lazy and unbounded; children are drawn on demand, so
//!   a fiber through a depth-10 realization only touches the squares it hits.
//! * [`PercolationTree`] materializes every surviving square down to a fixed
//!   depth, level by level.
//!
//! Both implement [`CellSource`], which is all the density code needs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::addressing::{Cell, CellAddress};
use crate::error::{Error, Result};
use crate::rng::LevelKey;

/// The pair `(k, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct PercolationParams {
    k: u32,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    k: u32,
    p: f64,
}

impl TryFrom<RawParams> for PercolationParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        PercolationParams::new(raw.k, raw.p)
    }
}

impl From<PercolationParams> for RawParams {
    fn from(params: PercolationParams) -> Self {
        RawParams { k: params.k, p: params.p }
    }
}

impl PercolationParams {
    pub const MAX_K: u32 = 36;

    pub fn new(k: u32, p: f64) -> Result<Self> {
        if !(2..=Self::MAX_K).contains(&k) {
            return Err(Error::InvalidParams(format!("k must lie in 2..={}, got {k}", Self::MAX_K)));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParams(format!("p must lie in (0, 1), got {p}")));
        }
        Ok(PercolationParams { k, p })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn pk(&self) -> f64 {
        self.p * self.k as f64
    }

    /// Mean number of surviving children, `k^2 p`.
    pub fn mean_offspring(&self) -> f64 {
        self.p * (self.k * self.k) as f64
    }

    /// `k^2 p > 1`: the construction survives with positive probability.
    pub fn supercritical_branching(&self) -> bool {
        self.mean_offspring() > 1.0
    }

    /// `k p > 1`: the regime in which projections are studied.
    pub fn projection_regime(&self) -> bool {
        self.pk() > 1.0
    }

    /// Deepest level whose integer coordinates fit in a `u32`.
    pub fn depth_limit(&self) -> u32 {
        Self::depth_limit_for(self.k)
    }

    pub fn depth_limit_for(k: u32) -> u32 {
        let mut depth = 0;
        let mut size = 1u64;
        while size * k as u64 <= 1u64 << 32 {
            size *= k as u64;
            depth += 1;
        }
        depth
    }

    pub fn check_depth(&self, depth: u32) -> Result<()> {
        if depth > self.depth_limit() {
            return Err(Error::DepthOutOfRange {
                requested: depth,
                limit: self.depth_limit(),
            });
        }
        Ok(())
    }
}

/// Seeds used for the draws at each depth.
///
/// A fresh realization uses one master seed everywhere. Resampling below
/// depth `m` appends a segment so that depths `> m` use a new seed while the
/// shallower levels keep their original draws.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSchedule {
    master: u64,
    /// `(first depth, seed)`, strictly increasing in depth, all `>= 1`.
    reseeds: Vec<(u32, u64)>,
}

impl SeedSchedule {
    pub fn new(master: u64) -> Self {
        SeedSchedule { master, reseeds: Vec::new() }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn reseeds(&self) -> &[(u32, u64)] {
        &self.reseeds
    }

    pub fn seed_at(&self, depth: u32) -> u64 {
        self.reseeds
            .iter()
            .rev()
            .find(|(from, _)| *from <= depth)
            .map_or(self.master, |&(_, seed)| seed)
    }

    /// Same schedule up to `from_depth - 1`, then `seed` from `from_depth` on.
    pub fn reseeded(&self, from_depth: u32, seed: u64) -> Self {
        let mut reseeds: Vec<_> = self.reseeds.iter().copied().filter(|(d, _)| *d < from_depth).collect();
        reseeds.push((from_depth.max(1), seed));
        SeedSchedule { master: self.master, reseeds }
    }
}

/// A node of a [`CellSource`]: the square's integer coordinates plus an
/// opaque index used by materialized trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub cell: Cell,
    pub index: u32,
}

/// Anything that can enumerate the surviving children of a surviving square.
pub trait CellSource: Sync {
    fn params(&self) -> PercolationParams;

    /// Deepest level available, or `None` when unbounded.
    fn depth_limit(&self) -> Option<u32>;

    fn root(&self) -> Node {
        Node { cell: Cell::ROOT, index: 0 }
    }

    /// Calls `visit` for each surviving child of `node` (a square at `depth`)
    /// for which `wanted` holds. `wanted` is consulted before any draw.
    fn for_each_child(&self, depth: u32, node: Node, wanted: &dyn Fn(Cell) -> bool, visit: &mut dyn FnMut(Node));
}

/// A lazily evaluated, unbounded realization.
#[derive(Debug, Clone)]
pub struct Realization {
    params: PercolationParams,
    seeds: SeedSchedule,
    keys: Vec<LevelKey>,
}

impl PartialEq for Realization {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.seeds == other.seeds
    }
}

impl Realization {
    pub fn new(params: PercolationParams, seed: u64) -> Self {
        Self::with_schedule(params, SeedSchedule::new(seed))
    }

    pub fn with_schedule(params: PercolationParams, seeds: SeedSchedule) -> Self {
        let keys = (0..=params.depth_limit()).map(|d| LevelKey::new(seeds.seed_at(d), d)).collect();
        Realization { params, seeds, keys }
    }

    pub fn params(&self) -> PercolationParams {
        self.params
    }

    pub fn seeds(&self) -> &SeedSchedule {
        &self.seeds
    }

    /// The same realization down to `depth`, with fresh draws below it.
    pub fn resampled_below(&self, depth: u32, seed: u64) -> Self {
        Self::with_schedule(self.params, self.seeds.reseeded(depth + 1, seed))
    }

    /// Whether the square's own draw keeps it (ignores its ancestors).
    #[inline]
    pub fn draw_keeps(&self, depth: u32, cell: Cell) -> bool {
        depth == 0 || self.keys[depth as usize].uniform(cell.x, cell.y) < self.params.p
    }

    /// Whether the square and all its ancestors survive.
    pub fn survives(&self, depth: u32, cell: Cell) -> bool {
        let k = self.params.k;
        let (mut x, mut y) = (cell.x, cell.y);
        for d in (1..=depth).rev() {
            if !self.draw_keeps(d, Cell::new(x, y)) {
                return false;
            }
            x /= k;
            y /= k;
        }
        true
    }

    #[inline]
    fn children_into(&self, depth: u32, parent: Cell, out: &mut Vec<Cell>) {
        let k = self.params.k;
        let key = self.keys[depth as usize + 1];
        let p = self.params.p;
        for i in 0..k {
            let x = parent.x * k + i;
            for j in 0..k {
                let y = parent.y * k + j;
                if key.uniform(x, y) < p {
                    out.push(Cell::new(x, y));
                }
            }
        }
    }

    /// `#E_m` for `m = 0..=depth`, by depth-first traversal without storing
    /// the tree.
    pub fn count_levels(&self, depth: u32) -> Result<Vec<u64>> {
        self.params.check_depth(depth)?;
        let mut counts = vec![0u64; depth as usize + 1];
        let mut stack = vec![(0u32, Cell::ROOT)];
        let mut scratch = Vec::with_capacity((self.params.k * self.params.k) as usize);
        while let Some((d, cell)) = stack.pop() {
            counts[d as usize] += 1;
            if d < depth {
                scratch.clear();
                self.children_into(d, cell, &mut scratch);
                if d + 1 == depth {
                    counts[depth as usize] += scratch.len() as u64;
                } else {
                    stack.extend(scratch.iter().map(|&c| (d + 1, c)));
                }
            }
        }
        Ok(counts)
    }

    /// Whether `E_depth` is nonempty; stops at the first surviving square.
    pub fn survives_to(&self, depth: u32) -> Result<bool> {
        self.params.check_depth(depth)?;
        let mut stack = vec![(0u32, Cell::ROOT)];
        let mut scratch = Vec::new();
        while let Some((d, cell)) = stack.pop() {
            if d == depth {
                return Ok(true);
            }
            scratch.clear();
            self.children_into(d, cell, &mut scratch);
            stack.extend(scratch.iter().map(|&c| (d + 1, c)));
        }
        Ok(false)
    }
}

impl CellSource for Realization {
    fn params(&self) -> PercolationParams {
        self.params
    }

    fn depth_limit(&self) -> Option<u32> {
        None
    }

    fn for_each_child(&self, depth: u32, node: Node, wanted: &dyn Fn(Cell) -> bool, visit: &mut dyn FnMut(Node)) {
        let k = self.params.k;
        let key = self.keys[depth as usize + 1];
        for i in 0..k {
            let x = node.cell.x * k + i;
            for j in 0..k {
                let cell = Cell::new(x, node.cell.y * k + j);
                if wanted(cell) && key.uniform(cell.x, cell.y) < self.params.p {
                    visit(Node { cell, index: 0 });
                }
            }
        }
    }
}

/// All surviving squares of a realization down to `max_depth`.
///
/// Level `m` lists its squares in canonical order: lexicographic in the
/// interleaved digits `(i_1, j_1, i_2, j_2, ...)`. Children of one parent are
/// therefore contiguous, and `first_child[m][idx]..first_child[m][idx + 1]`
/// is the range of children of square `idx` inside level `m + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PercolationTree {
    realization: Realization,
    levels: Vec<Vec<Cell>>,
    first_child: Vec<Vec<u32>>,
}

const CHUNK: usize = 2048;

impl PercolationTree {
    pub fn params(&self) -> PercolationParams {
        self.realization.params
    }

    pub fn seeds(&self) -> &SeedSchedule {
        &self.realization.seeds
    }

    pub fn realization(&self) -> &Realization {
        &self.realization
    }

    pub fn max_depth(&self) -> u32 {
        self.levels.len() as u32 - 1
    }

    pub fn level(&self, m: u32) -> Result<&[Cell]> {
        self.levels.get(m as usize).map(Vec::as_slice).ok_or(Error::DepthOutOfRange {
            requested: m,
            limit: self.max_depth(),
        })
    }

    pub fn levels(&self) -> &[Vec<Cell>] {
        &self.levels
    }

    pub fn children(&self, m: u32, index: usize) -> &[Cell] {
        let offsets = &self.first_child[m as usize];
        &self.levels[m as usize + 1][offsets[index] as usize..offsets[index + 1] as usize]
    }

    /// Builds a tree from explicit levels, checking that every square has its
    /// parent. Levels may be in any order; they are canonicalized.
    pub fn from_levels(params: PercolationParams, seeds: SeedSchedule, mut levels: Vec<Vec<Cell>>) -> Result<Self> {
        if levels.is_empty() {
            levels.push(vec![Cell::ROOT]);
        }
        let depth = levels.len() as u32 - 1;
        params.check_depth(depth)?;
        let k = params.k;
        if levels[0] != [Cell::ROOT] {
            return Err(Error::InvalidAddress("level 0 must hold exactly the root".into()));
        }
        for (m, level) in levels.iter_mut().enumerate() {
            let size = (k as u64).pow(m as u32);
            if let Some(c) = level.iter().find(|c| c.x as u64 >= size || c.y as u64 >= size) {
                return Err(Error::InvalidAddress(format!("({}, {}) does not exist at depth {m}", c.x, c.y)));
            }
            level.sort_by_key(|&c| canonical_key(k, m as u32, c));
            if level.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidAddress(format!("duplicate square at depth {m}")));
            }
        }
        let mut first_child = Vec::with_capacity(depth as usize);
        for m in 0..depth as usize {
            let (parents, kids) = (&levels[m], &levels[m + 1]);
            let mut offsets = Vec::with_capacity(parents.len() + 1);
            let mut cursor = 0usize;
            for parent in parents {
                offsets.push(cursor as u32);
                while cursor < kids.len() && Cell::new(kids[cursor].x / k, kids[cursor].y / k) == *parent {
                    cursor += 1;
                }
            }
            offsets.push(cursor as u32);
            if cursor != kids.len() {
                let orphan = kids[cursor];
                return Err(Error::Orphan {
                    depth: m as u32 + 1,
                    address: CellAddress::from_cell(k, m as u32 + 1, orphan).to_string(),
                });
            }
            first_child.push(offsets);
        }
        Ok(PercolationTree {
            realization: Realization::with_schedule(params, seeds),
            levels,
            first_child,
        })
    }

    fn grow(&mut self, new_depth: u32) -> Result<()> {
        let params = self.params();
        params.check_depth(new_depth)?;
        while self.max_depth() < new_depth {
            let depth = self.max_depth();
            let parents = self.levels.last().expect("root level");
            let realization = &self.realization;
            let chunks: Vec<(Vec<Cell>, Vec<u32>)> = parents
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut kids = Vec::new();
                    let mut counts = Vec::with_capacity(chunk.len());
                    for &parent in chunk {
                        let before = kids.len();
                        realization.children_into(depth, parent, &mut kids);
                        counts.push((kids.len() - before) as u32);
                    }
                    (kids, counts)
                })
                .collect();
            let total: usize = chunks.iter().map(|(kids, _)| kids.len()).sum();
            let mut next = Vec::with_capacity(total);
            let mut offsets = Vec::with_capacity(parents.len() + 1);
            let mut cursor = 0u32;
            for (kids, counts) in chunks {
                for count in counts {
                    offsets.push(cursor);
                    cursor += count;
                }
                next.extend(kids);
            }
            offsets.push(cursor);
            self.first_child.push(offsets);
            self.levels.push(next);
        }
        Ok(())
    }

    /// Whether `E_m` is empty.
    pub fn is_extinct_at(&self, m: u32) -> bool {
        self.levels.get(m as usize).is_some_and(|l| l.is_empty())
    }
}

/// Sort key realising the canonical order of squares at `depth`.
pub(crate) fn canonical_key(k: u32, depth: u32, cell: Cell) -> u128 {
    let (mut x, mut y) = (cell.x, cell.y);
    let mut key = 0u128;
    let mut place = 1u128;
    for _ in 0..depth {
        key += ((x % k) * k + (y % k)) as u128 * place;
        place *= (k * k) as u128;
        x /= k;
        y /= k;
    }
    key
}

impl CellSource for PercolationTree {
    fn params(&self) -> PercolationParams {
        self.params()
    }

    fn depth_limit(&self) -> Option<u32> {
        Some(self.max_depth())
    }

    fn for_each_child(&self, depth: u32, node: Node, wanted: &dyn Fn(Cell) -> bool, visit: &mut dyn FnMut(Node)) {
        if depth >= self.max_depth() {
            return;
        }
        let offsets = &self.first_child[depth as usize];
        let (start, end) = (offsets[node.index as usize], offsets[node.index as usize + 1]);
        let level = &self.levels[depth as usize + 1];
        for index in start..end {
            let cell = level[index as usize];
            if wanted(cell) {
                visit(Node { cell, index });
            }
        }
    }
}

/// Materializes the realization with master seed `seed` down to `depth`.
pub fn generate(params: PercolationParams, seed: u64, depth: u32) -> Result<PercolationTree> {
    generate_from(Realization::new(params, seed), depth)
}

/// Materializes an arbitrary realization (for instance a resampled one).
pub fn generate_from(realization: Realization, depth: u32) -> Result<PercolationTree> {
    let mut tree = PercolationTree {
        realization,
        levels: vec![vec![Cell::ROOT]],
        first_child: Vec::new(),
    };
    tree.grow(depth)?;
    Ok(tree)
}

/// Extends `tree` to `new_depth`, leaving every existing level untouched.
pub fn refine(tree: &PercolationTree, new_depth: u32) -> Result<PercolationTree> {
    if new_depth < tree.max_depth() {
        return Err(Error::DepthOutOfRange {
            requested: new_depth,
            limit: tree.max_depth(),
        });
    }
    let mut out = tree.clone();
    out.grow(new_depth)?;
    Ok(out)
}

/// `#E_m`.
pub fn count_cells(tree: &PercolationTree, m: u32) -> Result<u64> {
    Ok(tree.level(m)?.len() as u64)
}

/// `(k^2 p)^-m #E_m`, the mean-one martingale whose limit is `Z(E)`.
pub fn z_estimate(tree: &PercolationTree, m: u32) -> Result<f64> {
    let count = count_cells(tree, m)?;
    Ok(count as f64 / tree.params().mean_offspring().powi(m as i32))
}

/// A tree equal to `tree` through depth `m` with every level below `m`
/// redrawn from `sub_seed`.
pub fn resample_children(tree: &PercolationTree, m: u32, sub_seed: u64) -> Result<PercolationTree> {
    if m >= tree.max_depth() {
        return Err(Error::DepthOutOfRange {
            requested: m,
            limit: tree.max_depth().saturating_sub(1),
        });
    }
    let seeds = tree.seeds().reseeded(m + 1, sub_seed);
    let mut out = PercolationTree {
        realization: Realization::with_schedule(tree.params(), seeds),
        levels: tree.levels[..=m as usize].to_vec(),
        first_child: tree.first_child[..m as usize].to_vec(),
    };
    out.grow(tree.max_depth())?;
    Ok(out)
}

/// `log(k^2 p) / log k`.
pub fn dim_theory(params: &PercolationParams) -> Result<f64> {
    if !params.supercritical_branching() {
        return Err(Error::Regime(format!(
            "k^2 p = {} <= 1: the set is almost surely empty",
            params.mean_offspring()
        )));
    }
    Ok(params.mean_offspring().ln() / (params.k as f64).ln())
}

/// Least-squares slope of `log #E_m` against `m log k` over
/// `m in [max_depth / 2, max_depth]`.
pub fn dim_estimate(tree: &PercolationTree) -> Result<f64> {
    let counts: Vec<u64> = tree.levels.iter().map(|l| l.len() as u64).collect();
    dim_estimate_from_counts(tree.params().k(), &counts)
}

pub fn dim_estimate_from_counts(k: u32, counts: &[u64]) -> Result<f64> {
    let depth = counts.len().checked_sub(1).unwrap_or(0);
    if depth == 0 {
        return Err(Error::NoEstimate("need at least depth 1".into()));
    }
    if counts[depth] == 0 {
        return Err(Error::NoEstimate(format!("extinct by depth {depth}")));
    }
    let log_k = (k as f64).ln();
    let points: Vec<(f64, f64)> = (depth / 2..=depth)
        .map(|m| (m as f64 * log_k, (counts[m] as f64).ln()))
        .collect();
    Ok(crate::stats::linear_fit(&points).slope)
}
