//! Monte Carlo checks of the density theory, driven by a TOML config.
//!
//! Each section draws its own realizations from seeds derived by hashing
//! `(master seed, section, index)`, runs them in parallel, and reduces the
//! results in index order. Reports are therefore identical for any number
//! of worker threads. Gates (pass/fail thresholds) live in the config and are
//! echoed in the report.
//!
//! ```toml
//! seed = 2024
//! params = { k = 3, p = 0.7 }
//!
//! [dimension]
//! depth = 6
//! realizations = 20
//! tolerance = 0.1
//! ```

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::addressing::{kadic_distance, KadicMode};
use crate::bounds::{gamma_const, grid_mesh, increment_thresholds};
use crate::density::{
    density, fiber_frontier, fiber_profile, fiber_step, holder_modulus_sampled, support, HolderMetric,
};
use crate::error::{Error, Result};
use crate::geometry::{Angle, Direction, DELTA_LENGTH};
use crate::percolation::{dim_estimate_from_counts, dim_theory, generate, PercolationParams, Realization};
use crate::rng::{derive_seed, Stream};
use crate::stats::{gw_extinction_by, linear_fit, mean_se, MeanSe};

const TAG_MARTINGALE: u64 = 1;
const TAG_CONCENTRATION: u64 = 2;
const TAG_CONVERGENCE: u64 = 3;
const TAG_HOLDER: u64 = 4;
const TAG_DIMENSION: u64 = 5;
const TAG_UNIFORMITY: u64 = 6;

/// Axial sample points stay this far from k-adic points.
pub const KADIC_MARGIN: f64 = 1e-9;

/// Draws tried before a sample slot is declared empty.
const MAX_DRAWS: u32 = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: PercolationParams,
    pub seed: u64,
    /// Budget on the expected number of squares `(k^2 p)^depth` of one
    /// realization at the deepest level any section uses.
    #[serde(default = "default_max_cells")]
    pub max_cells: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub martingale: Option<MartingaleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<ConcentrationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder: Option<HolderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<DimensionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniformity: Option<UniformityConfig>,
}

fn default_max_cells() -> f64 {
    2.5e8
}

impl ExperimentConfig {
    pub fn new(params: PercolationParams, seed: u64) -> Self {
        ExperimentConfig {
            params,
            seed,
            max_cells: default_max_cells(),
            output_dir: None,
            martingale: None,
            concentration: None,
            convergence: None,
            holder: None,
            dimension: None,
            uniformity: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let limit = self.params.depth_limit();
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.max_cells > 0.0) {
            return bad("max_cells must be positive".into());
        }
        if let Some(c) = &self.martingale {
            if c.resamples < 1000 {
                return bad(format!("martingale.resamples must be at least 1000, got {}", c.resamples));
            }
            if c.triples == 0 || c.level + 1 > limit {
                return bad("martingale needs triples >= 1 and level + 1 within the depth limit".into());
            }
            check_directions("martingale", &c.directions, c.delta)?;
        }
        if let Some(c) = &self.concentration {
            if c.levels[0] > c.levels[1] || c.levels[1] + 1 > limit || c.samples == 0 {
                return bad("concentration needs levels = [lo, hi] with lo <= hi, hi + 1 within the depth limit, samples >= 1".into());
            }
            check_directions("concentration", &c.directions, c.delta)?;
        }
        if let Some(c) = &self.convergence {
            if c.depths[0] + 2 > c.depths[1] + 1 || c.depths[1] + 1 > limit || c.realizations == 0 || c.x_samples == 0 {
                return bad("convergence needs depths = [lo, hi] with lo < hi, hi + 1 within the depth limit".into());
            }
            if c.directions.is_empty() {
                return bad("convergence.directions must not be empty".into());
            }
        }
        if let Some(c) = &self.holder {
            if c.depths[0] >= c.depths[1] || c.depths[1] > limit || c.realizations == 0 || c.points < 2 {
                return bad("holder needs depths = [shallow, deep] with shallow < deep, points >= 2".into());
            }
            if c.alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) || !c.alphas.contains(&c.gate_alpha) {
                return bad("holder.alphas must lie in (0, 1] and contain gate_alpha".into());
            }
            if c.directions.is_empty() {
                return bad("holder.directions must not be empty".into());
            }
        }
        if let Some(c) = &self.dimension {
            if c.depth < 2 || c.depth > limit || c.realizations == 0 {
                return bad("dimension needs depth >= 2 and realizations >= 1".into());
            }
        }
        if let Some(c) = &self.uniformity {
            if !(c.delta > 0.0 && c.delta < FRAC_PI_4) || c.level > limit || c.realizations == 0 {
                return bad("uniformity needs 0 < delta < pi/4 and realizations >= 1".into());
            }
        }
        Ok(())
    }
}

fn check_directions(section: &str, directions: &Option<Vec<Direction>>, delta: f64) -> Result<()> {
    match directions {
        Some(d) if d.is_empty() => Err(Error::Config(format!("{section}.directions must not be empty"))),
        None if !(delta > 0.0 && delta < FRAC_PI_4) => Err(Error::Config(format!("{section}.delta must lie in (0, pi/4)"))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MartingaleConfig {
    pub level: u32,
    pub triples: u32,
    pub resamples: u32,
    /// Fixed directions, cycled over triples; when absent, `theta` is drawn
    /// uniformly from `[delta, pi/2 - delta]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<Direction>>,
    pub delta: f64,
    pub z_max: f64,
    pub min_pass_rate: f64,
}

impl Default for MartingaleConfig {
    fn default() -> Self {
        MartingaleConfig {
            level: 5,
            triples: 100,
            resamples: 10_000,
            directions: None,
            delta: 0.1,
            z_max: 4.0,
            min_pass_rate: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcentrationConfig {
    pub levels: [u32; 2],
    pub samples: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<Direction>>,
    pub delta: f64,
    pub max_final_exceedance: f64,
    pub max_inversions: u32,
    /// An inversion is tolerated only within this many standard errors.
    pub inversion_se: f64,
    pub min_samples_per_level: u32,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig {
            levels: [3, 8],
            samples: 4000,
            directions: None,
            delta: 0.1,
            max_final_exceedance: 0.05,
            max_inversions: 1,
            inversion_se: 2.0,
            min_samples_per_level: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Increments `y_{n+1} - y_n` are fitted for `n` in this range.
    pub depths: [u32; 2],
    pub realizations: u32,
    pub x_samples: u32,
    pub directions: Vec<Direction>,
    pub min_r_squared: f64,
    pub min_pass_fraction: f64,
    pub condition_on_survival: bool,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            depths: [4, 9],
            realizations: 50,
            x_samples: 500,
            directions: vec![Direction::Axial(crate::geometry::Axis::Vertical), Direction::Oblique(Angle::new(1.0).unwrap())],
            min_r_squared: 0.9,
            min_pass_fraction: 0.8,
            condition_on_survival: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolderConfig {
    pub alphas: Vec<f64>,
    pub gate_alpha: f64,
    /// Proxy depths `[shallow, deep]` whose moduli must agree.
    pub depths: [u32; 2],
    pub points: u32,
    pub realizations: u32,
    pub directions: Vec<Direction>,
    pub max_relative_change: f64,
    pub min_pass_fraction: f64,
    pub condition_on_survival: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ordering: Option<OrderingConfig>,
}

impl Default for HolderConfig {
    fn default() -> Self {
        HolderConfig {
            alphas: vec![0.05, 0.1, 0.2, 0.3, 0.5],
            gate_alpha: 0.05,
            depths: [8, 10],
            points: 256,
            realizations: 50,
            directions: vec![Direction::Oblique(Angle::new(FRAC_PI_4).unwrap())],
            max_relative_change: 0.2,
            min_pass_fraction: 0.8,
            condition_on_survival: true,
            ordering: None,
        }
    }
}

/// Direction dependence of the Hölder constant: along `thetas` (ordered by
/// increasing distance from the axes) the modulus should not increase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderingConfig {
    pub thetas: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_fraction: Option<f64>,
}

impl Default for OrderingConfig {
    fn default() -> Self {
        OrderingConfig {
            thetas: vec![0.15, 0.4, FRAC_PI_4],
            min_fraction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimensionConfig {
    pub depth: u32,
    /// Number of surviving realizations to average over.
    pub realizations: u32,
    pub tolerance: f64,
    /// Also estimate at this depth, to compare biases.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare_depth: Option<u32>,
    /// Realizations drawn at most, as a multiple of `realizations`.
    pub max_draw_factor: u32,
}

impl Default for DimensionConfig {
    fn default() -> Self {
        DimensionConfig {
            depth: 8,
            realizations: 100,
            tolerance: 0.05,
            compare_depth: None,
            max_draw_factor: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniformityConfig {
    pub level: u32,
    pub delta: f64,
    pub realizations: u32,
    pub probes: u32,
    /// Largest grid (per axis) the section agrees to build.
    pub max_grid: f64,
    /// Repeat with half the mesh and report the ratio of worst deviations.
    pub mesh_halving: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_c6: Option<f64>,
}

impl Default for UniformityConfig {
    fn default() -> Self {
        UniformityConfig {
            level: 2,
            delta: 0.2,
            realizations: 1,
            probes: 200,
            max_grid: 1e5,
            mesh_halving: true,
            max_c6: None,
        }
    }
}

/// A declared pass/fail threshold and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub section: &'static str,
    pub name: String,
    pub observed: f64,
    pub comparison: &'static str,
    pub threshold: f64,
    pub passed: bool,
}

impl Gate {
    fn at_least(section: &'static str, name: impl Into<String>, observed: f64, threshold: f64) -> Self {
        Gate {
            section,
            name: name.into(),
            observed,
            comparison: ">=",
            threshold,
            passed: observed >= threshold,
        }
    }

    fn below(section: &'static str, name: impl Into<String>, observed: f64, threshold: f64) -> Self {
        Gate {
            section,
            name: name.into(),
            observed,
            comparison: "<",
            threshold,
            passed: observed < threshold,
        }
    }

    fn at_most(section: &'static str, name: impl Into<String>, observed: f64, threshold: f64) -> Self {
        Gate {
            section,
            name: name.into(),
            observed,
            comparison: "<=",
            threshold,
            passed: observed <= threshold,
        }
    }
}

fn sample_direction(fixed: &Option<Vec<Direction>>, delta: f64, index: usize, stream: &mut Stream) -> Direction {
    match fixed {
        Some(list) => list[index % list.len()],
        None => Direction::Oblique(Angle::new(stream.range(delta, FRAC_PI_2 - delta)).expect("angle in range")),
    }
}

/// A point of the direction's range; axial points avoid k-adic points of
/// level `<= depth` by [`KADIC_MARGIN`].
pub fn sample_x(k: u32, direction: Direction, depth: u32, stream: &mut Stream) -> f64 {
    let (lo, hi) = support(direction);
    loop {
        let x = stream.range(lo, hi);
        if !direction.is_axial() || kadic_distance(k, x, depth) >= KADIC_MARGIN {
            return x;
        }
    }
}

/// Metric in which regularity is measured for `direction`.
pub fn holder_metric(direction: Direction) -> HolderMetric {
    if direction.is_axial() {
        HolderMetric::Rho
    } else {
        HolderMetric::Euclidean
    }
}

fn survival_oracle(params: &PercolationParams, depth: u32) -> f64 {
    1.0 - gw_extinction_by(params.k() * params.k(), params.p(), depth)
}

// ---------------------------------------------------------------- martingale

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleTriple {
    pub realization_seed: u64,
    pub direction: Direction,
    pub x: f64,
    pub y_n: f64,
    pub mean_next: f64,
    pub se_next: f64,
    pub z: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub level: u32,
    pub resamples: u32,
    pub triples_requested: u32,
    pub triples_tested: usize,
    /// Draws rejected because the fiber missed `E_n`.
    pub rejected_draws: u64,
    pub within: usize,
    pub pass_rate: f64,
    pub max_abs_z: f64,
    #[serde(skip)]
    pub triples: Vec<MartingaleTriple>,
}

/// Conditional mean of `y_{n+1}(x)` given `E_n`, against `y_n(x)`.
pub fn run_martingale(params: PercolationParams, master: u64, config: &MartingaleConfig) -> Result<(MartingaleReport, Vec<Gate>)> {
    let n = config.level;
    let outcomes: Vec<(Option<MartingaleTriple>, u64)> = (0..config.triples as u64)
        .into_par_iter()
        .map(|t| -> Result<_> {
            let mut stream = Stream::new(master, &[TAG_MARTINGALE, t]);
            let mut rejected = 0;
            for _ in 0..MAX_DRAWS {
                let realization_seed = stream.next_u64();
                let direction = sample_direction(&config.directions, config.delta, t as usize, &mut stream);
                let x = sample_x(params.k(), direction, n + 1, &mut stream);
                let realization = Realization::new(params, realization_seed);
                let (y_n, frontier) = fiber_frontier(&realization, direction, x, n, KadicMode::Strict)?;
                if y_n <= 0.0 {
                    rejected += 1;
                    continue;
                }
                let resample_root = stream.next_u64();
                let draws: Vec<f64> = (0..config.resamples as u64)
                    .map(|j| {
                        let resampled = realization.resampled_below(n, derive_seed(resample_root, &[j]));
                        fiber_step(&resampled, direction, x, n, &frontier)
                    })
                    .collect::<Result<_>>()?;
                let MeanSe { mean, se, .. } = mean_se(&draws);
                let z = if se > 0.0 {
                    (mean - y_n) / se
                } else if mean == y_n {
                    0.0
                } else {
                    f64::INFINITY
                };
                let triple = MartingaleTriple {
                    realization_seed,
                    direction,
                    x,
                    y_n,
                    mean_next: mean,
                    se_next: se,
                    z,
                    within: z.abs() <= config.z_max,
                };
                return Ok((Some(triple), rejected));
            }
            Ok((None, rejected))
        })
        .collect::<Result<_>>()?;

    let rejected_draws = outcomes.iter().map(|(_, r)| r).sum();
    let triples: Vec<MartingaleTriple> = outcomes.into_iter().filter_map(|(t, _)| t).collect();
    let within = triples.iter().filter(|t| t.within).count();
    let pass_rate = if triples.is_empty() { 0.0 } else { within as f64 / triples.len() as f64 };
    let report = MartingaleReport {
        level: n,
        resamples: config.resamples,
        triples_requested: config.triples,
        triples_tested: triples.len(),
        rejected_draws,
        within,
        pass_rate,
        max_abs_z: triples.iter().map(|t| t.z.abs()).fold(0.0, f64::max),
        triples,
    };
    let gates = vec![Gate::at_least("martingale", format!("fraction within {} SE", config.z_max), pass_rate, config.min_pass_rate)];
    Ok((report, gates))
}

// ------------------------------------------------------------- concentration

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationLevel {
    pub n: u32,
    /// Two-sided allowance `(pk)^(-n/6)`.
    pub threshold: f64,
    /// Samples with `0 < y_n < (pk)^(n/3)`.
    pub samples: u64,
    pub exceedances: u64,
    pub frequency: f64,
    pub se: f64,
    /// Samples with `y_n > 1`, for the one-sided upward allowance.
    pub upward_samples: u64,
    pub upward_exceedances: u64,
    pub upward_frequency: f64,
    /// `gamma^((pk)^(n/3))`.
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inversion {
    pub from: u32,
    pub rise: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub samples: u32,
    pub levels: Vec<ConcentrationLevel>,
    pub inversions: Vec<Inversion>,
    /// Largest ratio of empirical frequency to `gamma^((pk)^(n/3))`.
    pub c1_hat: f64,
    /// The same fit on the even- and odd-indexed samples.
    pub c1_hat_batches: [f64; 2],
}

fn tally(params: &PercolationParams, profiles: &[&Vec<f64>], levels: [u32; 2]) -> Result<Vec<ConcentrationLevel>> {
    let pk = params.pk();
    let gamma = gamma_const(params.p())?;
    (levels[0]..=levels[1])
        .map(|n| {
            let thr = increment_thresholds(params, n, 1.0)?.two_sided_threshold;
            let cap = pk.powf(n as f64 / 3.0);
            let (mut samples, mut exceed, mut up_samples, mut up_exceed) = (0u64, 0u64, 0u64, 0u64);
            for prof in profiles {
                let (y, next) = (prof[n as usize], prof[n as usize + 1]);
                if y > 0.0 && y < cap {
                    samples += 1;
                    exceed += ((next - y).abs() >= thr) as u64;
                }
                if y > 1.0 {
                    up_samples += 1;
                    let allowance = increment_thresholds(params, n, y)?.upward_threshold;
                    up_exceed += (next >= y + allowance) as u64;
                }
            }
            let frequency = if samples > 0 { exceed as f64 / samples as f64 } else { 0.0 };
            Ok(ConcentrationLevel {
                n,
                threshold: thr,
                samples,
                exceedances: exceed,
                frequency,
                se: if samples > 0 { (frequency * (1.0 - frequency) / samples as f64).sqrt() } else { 0.0 },
                upward_samples: up_samples,
                upward_exceedances: up_exceed,
                upward_frequency: if up_samples > 0 { up_exceed as f64 / up_samples as f64 } else { 0.0 },
                exponent: gamma.powf(pk.powf(n as f64 / 3.0)),
            })
        })
        .collect()
}

fn c1_fit(levels: &[ConcentrationLevel]) -> f64 {
    levels
        .iter()
        .map(|l| l.frequency.max(l.upward_frequency) / l.exponent)
        .fold(0.0, f64::max)
}

/// Frequencies of large one-step increments, level by level.
pub fn run_concentration(params: PercolationParams, master: u64, config: &ConcentrationConfig) -> Result<(ConcentrationReport, Vec<Gate>)> {
    let hi = config.levels[1];
    let profiles: Vec<Vec<f64>> = (0..config.samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut stream = Stream::new(master, &[TAG_CONCENTRATION, i]);
            let realization = Realization::new(params, stream.next_u64());
            let direction = sample_direction(&config.directions, config.delta, i as usize, &mut stream);
            let x = sample_x(params.k(), direction, hi + 1, &mut stream);
            fiber_profile(&realization, direction, x, hi + 1, KadicMode::Strict)
        })
        .collect::<Result<_>>()?;

    let all: Vec<&Vec<f64>> = profiles.iter().collect();
    let levels = tally(&params, &all, config.levels)?;
    let even: Vec<&Vec<f64>> = profiles.iter().step_by(2).collect();
    let odd: Vec<&Vec<f64>> = profiles.iter().skip(1).step_by(2).collect();
    let c1_hat_batches = [c1_fit(&tally(&params, &even, config.levels)?), c1_fit(&tally(&params, &odd, config.levels)?)];

    let inversions: Vec<Inversion> = levels
        .windows(2)
        .filter(|w| w[1].frequency > w[0].frequency)
        .map(|w| Inversion {
            from: w[0].n,
            rise: w[1].frequency - w[0].frequency,
            se: (w[0].se * w[0].se + w[1].se * w[1].se).sqrt(),
        })
        .collect();
    let worst_inversion = inversions
        .iter()
        .map(|inv| if inv.se > 0.0 { inv.rise / inv.se } else { f64::INFINITY })
        .fold(0.0, f64::max);
    let last = levels.last().expect("at least one level");
    let fewest = levels.iter().map(|l| l.samples).min().unwrap_or(0);

    let gates = vec![
        Gate::at_most("concentration", "inversions", inversions.len() as f64, config.max_inversions as f64),
        Gate::at_most("concentration", "largest inversion in SE", worst_inversion, config.inversion_se),
        Gate::below("concentration", format!("exceedance frequency at n = {}", last.n), last.frequency, config.max_final_exceedance),
        Gate::at_least("concentration", "samples per level", fewest as f64, config.min_samples_per_level as f64),
    ];
    let report = ConcentrationReport {
        samples: config.samples,
        c1_hat: c1_fit(&levels),
        c1_hat_batches,
        levels,
        inversions,
    };
    Ok((report, gates))
}

// --------------------------------------------------------------- convergence

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRun {
    pub index: u64,
    pub seed: u64,
    pub survived: bool,
    /// `max_x |y_{n+1}(x) - y_n(x)|` for each fitted `n`.
    pub sup_increments: Vec<f64>,
    pub slope: f64,
    pub r_squared: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceDirection {
    pub direction: Direction,
    pub realizations: u32,
    pub survivors: usize,
    pub survival_fraction: f64,
    /// `P(E_depth != {})` from the Galton–Watson recursion.
    pub survival_theory: f64,
    pub tested: usize,
    pub passed: usize,
    pub pass_fraction: f64,
    pub mean_slope: f64,
    /// `exp(mean slope)`: fitted per-level contraction of the increments.
    pub rate_hat: f64,
    /// `(pk)^(-1/6)`.
    pub rate_benchmark: f64,
    #[serde(skip)]
    pub runs: Vec<ConvergenceRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub depths: [u32; 2],
    pub directions: Vec<ConvergenceDirection>,
}

/// `max_x |y_{n+1}(x) - y_n(x)|` for `n = lo..=hi`.
pub fn sup_increments<S: crate::percolation::CellSource + ?Sized>(source: &S, direction: Direction, xs: &[f64], depths: [u32; 2]) -> Result<Vec<f64>> {
    let [lo, hi] = depths;
    let mut sup = vec![0.0f64; (hi - lo + 1) as usize];
    for &x in xs {
        let prof = fiber_profile(source, direction, x, hi + 1, KadicMode::Strict)?;
        for n in lo..=hi {
            let slot = &mut sup[(n - lo) as usize];
            *slot = slot.max((prof[n as usize + 1] - prof[n as usize]).abs());
        }
    }
    Ok(sup)
}

/// Least-squares fit of `log sup-increment` against `n`; `None` if some
/// increment vanishes.
pub fn increment_fit(sups: &[f64], lo: u32) -> Option<crate::stats::LinearFit> {
    if sups.iter().any(|&s| !(s > 0.0)) {
        return None;
    }
    let points: Vec<(f64, f64)> = sups.iter().enumerate().map(|(i, s)| ((lo + i as u32) as f64, s.ln())).collect();
    Some(linear_fit(&points))
}

/// Geometric decay of the largest one-step increments.
pub fn run_convergence(params: PercolationParams, master: u64, config: &ConvergenceConfig) -> Result<(ConvergenceReport, Vec<Gate>)> {
    let [lo, hi] = config.depths;
    let mut directions = Vec::new();
    let mut gates = Vec::new();
    for (d, &direction) in config.directions.iter().enumerate() {
        let runs: Vec<ConvergenceRun> = (0..config.realizations as u64)
            .into_par_iter()
            .map(|r| -> Result<_> {
                let seed = derive_seed(master, &[TAG_CONVERGENCE, r]);
                let realization = Realization::new(params, seed);
                let survived = realization.survives_to(hi + 1)?;
                if !survived && config.condition_on_survival {
                    return Ok(ConvergenceRun {
                        index: r,
                        seed,
                        survived,
                        sup_increments: Vec::new(),
                        slope: f64::NAN,
                        r_squared: f64::NAN,
                        passed: false,
                    });
                }
                let mut stream = Stream::new(master, &[TAG_CONVERGENCE, r, d as u64]);
                let xs: Vec<f64> = (0..config.x_samples).map(|_| sample_x(params.k(), direction, hi + 1, &mut stream)).collect();
                let sups = sup_increments(&realization, direction, &xs, config.depths)?;
                let fit = increment_fit(&sups, lo);
                let (slope, r_squared) = fit.map_or((f64::NAN, f64::NAN), |f| (f.slope, f.r_squared));
                Ok(ConvergenceRun {
                    index: r,
                    seed,
                    survived,
                    sup_increments: sups,
                    slope,
                    r_squared,
                    passed: slope < 0.0 && r_squared > config.min_r_squared,
                })
            })
            .collect::<Result<_>>()?;
        let survivors = runs.iter().filter(|r| r.survived).count();
        let tested: Vec<&ConvergenceRun> = runs.iter().filter(|r| r.survived || !config.condition_on_survival).collect();
        let passed = tested.iter().filter(|r| r.passed).count();
        let pass_fraction = if tested.is_empty() { 0.0 } else { passed as f64 / tested.len() as f64 };
        let slopes: Vec<f64> = tested.iter().map(|r| r.slope).filter(|s| s.is_finite()).collect();
        let mean_slope = if slopes.is_empty() { f64::NAN } else { mean_se(&slopes).mean };
        gates.push(Gate::at_least("convergence", format!("{direction}: fraction with negative slope and R^2 > {}", config.min_r_squared), pass_fraction, config.min_pass_fraction));
        directions.push(ConvergenceDirection {
            direction,
            realizations: config.realizations,
            survivors,
            survival_fraction: survivors as f64 / config.realizations as f64,
            survival_theory: survival_oracle(&params, hi + 1),
            tested: tested.len(),
            passed,
            pass_fraction,
            mean_slope,
            rate_hat: mean_slope.exp(),
            rate_benchmark: params.pk().powf(-1.0 / 6.0),
            runs,
        });
    }
    Ok((ConvergenceReport { depths: config.depths, directions }, gates))
}

// -------------------------------------------------------------------- holder

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderRun {
    pub index: u64,
    pub seed: u64,
    /// Moduli at the shallow and deep proxy depth, one pair per alpha.
    pub moduli: Vec<[f64; 2]>,
    pub stabilized: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderAlpha {
    pub alpha: f64,
    pub stabilized_fraction: f64,
    pub median_relative_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderDirection {
    pub direction: Direction,
    pub metric: HolderMetric,
    pub tested: usize,
    pub alphas: Vec<HolderAlpha>,
    /// Largest alpha whose modulus stabilized on the required fraction.
    pub largest_stable_alpha: Option<f64>,
    #[serde(skip)]
    pub runs: Vec<HolderRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingReport {
    pub thetas: Vec<f64>,
    pub tested: usize,
    pub holds: usize,
    pub fraction: f64,
    /// Mean modulus (gate alpha, deep proxy) per theta.
    pub mean_moduli: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderReport {
    pub depths: [u32; 2],
    pub points: u32,
    pub realizations: u32,
    pub survivors: usize,
    pub directions: Vec<HolderDirection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ordering: Option<OrderingReport>,
}

/// Relative change of a modulus between two proxy depths.
pub fn relative_change(shallow: f64, deep: f64) -> f64 {
    if shallow == deep {
        0.0
    } else {
        (deep - shallow).abs() / shallow.abs().max(deep.abs())
    }
}

fn holder_points(params: &PercolationParams, direction: Direction, depth: u32, count: u32, stream: &mut Stream) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..count).map(|_| sample_x(params.k(), direction, depth, stream)).collect();
    xs.sort_by(f64::total_cmp);
    xs
}

/// Hölder moduli at two proxy depths on a sampled point set.
pub fn run_holder(params: PercolationParams, master: u64, config: &HolderConfig) -> Result<(HolderReport, Vec<Gate>)> {
    let [shallow, deep] = config.depths;
    let k = params.k();
    let seeds: Vec<(u64, u64)> = (0..config.realizations as u64).map(|r| (r, derive_seed(master, &[TAG_HOLDER, r]))).collect();
    let survived: Vec<bool> = seeds
        .par_iter()
        .map(|&(_, seed)| Realization::new(params, seed).survives_to(deep))
        .collect::<Result<_>>()?;
    let tested: Vec<(u64, u64)> = seeds
        .iter()
        .zip(&survived)
        .filter(|(_, &s)| s || !config.condition_on_survival)
        .map(|(&pair, _)| pair)
        .collect();

    let moduli_at = |realization: &Realization, direction: Direction, stream: &mut Stream, alphas: &[f64]| -> Result<Vec<[f64; 2]>> {
        let xs = holder_points(&params, direction, deep, config.points, stream);
        let mut ys_shallow = Vec::with_capacity(xs.len());
        let mut ys_deep = Vec::with_capacity(xs.len());
        for &x in &xs {
            let prof = fiber_profile(realization, direction, x, deep, KadicMode::Strict)?;
            ys_shallow.push(prof[shallow as usize]);
            ys_deep.push(prof[deep as usize]);
        }
        let metric = holder_metric(direction);
        Ok(alphas
            .iter()
            .map(|&a| [holder_modulus_sampled(&xs, &ys_shallow, metric, k, a), holder_modulus_sampled(&xs, &ys_deep, metric, k, a)])
            .collect())
    };

    let mut directions = Vec::new();
    let mut gates = Vec::new();
    for (d, &direction) in config.directions.iter().enumerate() {
        let runs: Vec<HolderRun> = tested
            .par_iter()
            .map(|&(index, seed)| -> Result<_> {
                let realization = Realization::new(params, seed);
                let mut stream = Stream::new(master, &[TAG_HOLDER, index, d as u64]);
                let moduli = moduli_at(&realization, direction, &mut stream, &config.alphas)?;
                let stabilized = moduli.iter().map(|m| relative_change(m[0], m[1]) < config.max_relative_change).collect();
                Ok(HolderRun { index, seed, moduli, stabilized })
            })
            .collect::<Result<_>>()?;
        let alphas: Vec<HolderAlpha> = config
            .alphas
            .iter()
            .enumerate()
            .map(|(a, &alpha)| {
                let ok = runs.iter().filter(|r| r.stabilized[a]).count();
                let mut changes: Vec<f64> = runs.iter().map(|r| relative_change(r.moduli[a][0], r.moduli[a][1])).collect();
                changes.sort_by(f64::total_cmp);
                HolderAlpha {
                    alpha,
                    stabilized_fraction: if runs.is_empty() { 0.0 } else { ok as f64 / runs.len() as f64 },
                    median_relative_change: changes.get(changes.len() / 2).copied().unwrap_or(f64::NAN),
                }
            })
            .collect();
        let largest_stable_alpha = alphas
            .iter()
            .filter(|a| a.stabilized_fraction >= config.min_pass_fraction)
            .map(|a| a.alpha)
            .fold(None, |acc: Option<f64>, a| Some(acc.map_or(a, |b| b.max(a))));
        let gate_idx = config.alphas.iter().position(|&a| a == config.gate_alpha).expect("validated");
        gates.push(Gate::at_least(
            "holder",
            format!("{direction}: fraction stabilized at alpha = {}", config.gate_alpha),
            alphas[gate_idx].stabilized_fraction,
            config.min_pass_fraction,
        ));
        directions.push(HolderDirection {
            direction,
            metric: holder_metric(direction),
            tested: runs.len(),
            alphas,
            largest_stable_alpha,
            runs,
        });
    }

    let ordering = match &config.ordering {
        None => None,
        Some(ord) => {
            let dirs: Vec<Direction> = ord.thetas.iter().map(|&t| Direction::oblique(t)).collect::<Result<_>>()?;
            let per_run: Vec<Vec<f64>> = tested
                .par_iter()
                .map(|&(index, seed)| -> Result<_> {
                    let realization = Realization::new(params, seed);
                    dirs.iter()
                        .enumerate()
                        .map(|(t, &dir)| {
                            let mut stream = Stream::new(master, &[TAG_HOLDER, index, 1000 + t as u64]);
                            Ok(moduli_at(&realization, dir, &mut stream, &[config.gate_alpha])?[0][1])
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            let holds = per_run.iter().filter(|m| m.windows(2).all(|w| w[0] >= w[1])).count();
            let fraction = if per_run.is_empty() { 0.0 } else { holds as f64 / per_run.len() as f64 };
            if let Some(min) = ord.min_fraction {
                gates.push(Gate::at_least("holder", "fraction with modulus nonincreasing away from the axes", fraction, min));
            }
            let mean_moduli = (0..dirs.len())
                .map(|t| {
                    let v: Vec<f64> = per_run.iter().map(|m| m[t]).collect();
                    if v.is_empty() { f64::NAN } else { mean_se(&v).mean }
                })
                .collect();
            Some(OrderingReport {
                thetas: ord.thetas.clone(),
                tested: per_run.len(),
                holds,
                fraction,
                mean_moduli,
            })
        }
    };

    let report = HolderReport {
        depths: config.depths,
        points: config.points,
        realizations: config.realizations,
        survivors: survived.iter().filter(|&&s| s).count(),
        directions,
        ordering,
    };
    Ok((report, gates))
}

// ----------------------------------------------------------------- dimension

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionReport {
    pub depth: u32,
    pub drawn: u64,
    pub survivors: usize,
    pub survival_fraction: f64,
    pub survival_theory: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theory: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    /// `mean - theory`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,
    /// Bias of the same estimator at `compare_depth`, on the same survivors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<(u32, f64)>,
    /// Total squares counted.
    pub cells_counted: u64,
    /// Set when nothing survived.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip)]
    pub estimates: Vec<(u64, f64)>,
}

/// Slope-based dimension estimates over surviving realizations.
pub fn run_dimension(params: PercolationParams, master: u64, config: &DimensionConfig) -> Result<(DimensionReport, Vec<Gate>)> {
    let wanted = config.realizations as usize;
    let max_draws = config.realizations as u64 * config.max_draw_factor.max(1) as u64;
    let mut survivors: Vec<(u64, Vec<u64>)> = Vec::new();
    let mut drawn = 0u64;
    let mut cells = 0u64;
    // Draw in index order, in batches, until enough realizations survive.
    while survivors.len() < wanted && drawn < max_draws {
        let batch = ((wanted - survivors.len()) as u64 + 8).min(max_draws - drawn);
        let counts: Vec<(u64, Vec<u64>)> = (drawn..drawn + batch)
            .into_par_iter()
            .map(|r| {
                let realization = Realization::new(params, derive_seed(master, &[TAG_DIMENSION, r]));
                realization.count_levels(config.depth).map(|c| (r, c))
            })
            .collect::<Result<_>>()?;
        for (r, c) in counts {
            drawn = r + 1;
            cells += c.iter().sum::<u64>();
            if c[config.depth as usize] > 0 {
                survivors.push((r, c));
                if survivors.len() == wanted {
                    break;
                }
            }
        }
    }

    let theory = dim_theory(&params).ok();
    let estimates: Vec<(u64, f64)> = survivors
        .iter()
        .map(|(r, c)| dim_estimate_from_counts(params.k(), c).map(|e| (*r, e)))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = estimates.iter().map(|e| e.1).collect();
    let stats = (!values.is_empty()).then(|| mean_se(&values));
    let compare = match config.compare_depth {
        Some(depth) if !survivors.is_empty() => {
            // Shallower depths reuse the counts; deeper ones recount the same
            // realizations (a survivor may still die out before `depth`).
            let alt: Vec<f64> = survivors
                .par_iter()
                .filter_map(|(r, c)| {
                    if (depth as usize) < c.len() {
                        dim_estimate_from_counts(params.k(), &c[..=depth as usize]).ok()
                    } else {
                        let realization = Realization::new(params, derive_seed(master, &[TAG_DIMENSION, *r]));
                        realization.count_levels(depth).and_then(|c| dim_estimate_from_counts(params.k(), &c)).ok()
                    }
                })
                .collect();
            match (theory, alt.is_empty()) {
                (Some(t), false) => Some((depth, mean_se(&alt).mean - t)),
                _ => None,
            }
        }
        _ => None,
    };

    let report = DimensionReport {
        depth: config.depth,
        drawn,
        survivors: survivors.len(),
        survival_fraction: if drawn > 0 { survivors.len() as f64 / drawn as f64 } else { 0.0 },
        survival_theory: survival_oracle(&params, config.depth),
        theory,
        mean: stats.map(|s| s.mean),
        se: stats.map(|s| s.se),
        bias: stats.zip(theory).map(|(s, t)| s.mean - t),
        compare,
        cells_counted: cells,
        note: survivors.is_empty().then(|| "no surviving realizations".to_string()),
        estimates,
    };
    let gates = vec![
        Gate::at_least("dimension", "surviving realizations", report.survivors as f64, wanted as f64),
        Gate::below("dimension", "|mean estimate - theory|", report.bias.map_or(f64::INFINITY, f64::abs), config.tolerance),
    ];
    Ok((report, gates))
}

// ---------------------------------------------------------------- uniformity

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityPass {
    pub mesh: f64,
    pub theta_grid: usize,
    pub x_grid: usize,
    pub max_deviation: f64,
    pub c6_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityReport {
    pub level: u32,
    pub delta: f64,
    /// `(pk)^(-n/6)`.
    pub allowance: f64,
    pub cardinality_bound: f64,
    pub passes: Vec<UniformityPass>,
    /// Worst deviation at the mesh over that at half the mesh.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub halving_ratio: Option<f64>,
}

/// `theta` grid with spacing at most `mesh` covering `[delta, pi/2 - delta]`.
pub fn theta_grid(delta: f64, mesh: f64) -> Vec<f64> {
    let span = FRAC_PI_2 - 2.0 * delta;
    let steps = (span / mesh).ceil().max(1.0) as usize;
    (0..=steps).map(|j| delta + span * j as f64 / steps as f64).collect()
}

/// Grid with spacing at most `mesh` covering `Delta`.
pub fn delta_grid(mesh: f64) -> Vec<f64> {
    let steps = (DELTA_LENGTH / mesh).ceil().max(1.0) as usize;
    (0..=steps).map(|i| DELTA_LENGTH * i as f64 / steps as f64).collect()
}

fn nearest(grid: &[f64], v: f64) -> f64 {
    let i = grid.partition_point(|&g| g < v);
    match (i.checked_sub(1).map(|j| grid[j]), grid.get(i)) {
        (Some(a), Some(&b)) => {
            if v - a <= b - v {
                a
            } else {
                b
            }
        }
        (Some(a), None) => a,
        (None, Some(&b)) => b,
        (None, None) => v,
    }
}

/// Largest `|y^theta(u) - y^{theta_j}(u_i)|` over probes `(theta, u)` and
/// their nearest grid points, all in the `Delta` frame.
pub fn grid_deviation(tree: &crate::percolation::PercolationTree, n: u32, thetas: &[f64], us: &[f64], probes: &[(f64, f64)]) -> Result<f64> {
    let mut worst = 0.0f64;
    for &(theta, u) in probes {
        let (tg, ug) = (nearest(thetas, theta), nearest(us, u));
        let at = |t: f64, v: f64| -> Result<f64> { density(tree, n, Angle::new(t)?)?.normalize_to_delta()?.evaluate(v) };
        worst = worst.max((at(theta, u)? - at(tg, ug)?).abs());
    }
    Ok(worst)
}

/// Lipschitz interpolation between grid points of the `theta` and `x` grids.
pub fn run_uniformity(params: PercolationParams, master: u64, config: &UniformityConfig) -> Result<(UniformityReport, Vec<Gate>)> {
    let n = config.level;
    let mesh = grid_mesh(&params, n, config.delta)?;
    let meshes: Vec<f64> = if config.mesh_halving { vec![mesh.mesh, mesh.mesh / 2.0] } else { vec![mesh.mesh] };
    let allowance = params.pk().powf(-(n as f64) / 6.0);
    let mut passes = Vec::new();
    for &h in &meshes {
        let thetas = theta_grid(config.delta, h);
        let us = delta_grid(h);
        let size = thetas.len().max(us.len()) as f64;
        if size > config.max_grid {
            return Err(Error::Infeasible(format!("grid of {size} points at level {n} exceeds max_grid = {}", config.max_grid)));
        }
        let worst: Vec<f64> = (0..config.realizations as u64)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let tree = generate(params, derive_seed(master, &[TAG_UNIFORMITY, r]), n)?;
                let mut stream = Stream::new(master, &[TAG_UNIFORMITY, r, 1]);
                let probes: Vec<(f64, f64)> = (0..config.probes)
                    .map(|_| (stream.range(config.delta, FRAC_PI_2 - config.delta), stream.range(0.0, DELTA_LENGTH)))
                    .collect();
                grid_deviation(&tree, n, &thetas, &us, &probes)
            })
            .collect::<Result<_>>()?;
        let max_deviation = worst.into_iter().fold(0.0, f64::max);
        passes.push(UniformityPass {
            mesh: h,
            theta_grid: thetas.len(),
            x_grid: us.len(),
            max_deviation,
            c6_hat: max_deviation / allowance,
        });
    }
    let halving_ratio = (passes.len() == 2).then(|| passes[0].max_deviation / passes[1].max_deviation);
    let mut gates = Vec::new();
    if let Some(max) = config.max_c6 {
        gates.push(Gate::at_most("uniformity", "fitted C6", passes[0].c6_hat, max));
    }
    let report = UniformityReport {
        level: n,
        delta: config.delta,
        allowance,
        cardinality_bound: mesh.cardinality,
        passes,
        halving_ratio,
    };
    Ok((report, gates))
}

// --------------------------------------------------------------------- suite

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub martingale: Option<MartingaleReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concentration: Option<ConcentrationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holder: Option<HolderReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dimension: Option<DimensionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniformity: Option<UniformityReport>,
    pub gates: Vec<Gate>,
    pub passed: bool,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-sample tables for plotting, as `(file name, contents)`.
    pub fn csv_extracts(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if let Some(m) = &self.martingale {
            let mut s = String::from("triple,seed,theta,x,y_n,mean_next,se_next,z\n");
            for (i, t) in m.triples.iter().enumerate() {
                writeln!(s, "{i},{},{},{},{},{},{},{}", t.realization_seed, t.direction, t.x, t.y_n, t.mean_next, t.se_next, t.z).unwrap();
            }
            out.push(("martingale.csv".into(), s));
        }
        if let Some(c) = &self.concentration {
            let mut s = String::from("n,threshold,samples,exceedances,frequency,se,upward_samples,upward_exceedances,exponent\n");
            for l in &c.levels {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    l.n, l.threshold, l.samples, l.exceedances, l.frequency, l.se, l.upward_samples, l.upward_exceedances, l.exponent
                )
                .unwrap();
            }
            out.push(("concentration.csv".into(), s));
        }
        if let Some(c) = &self.convergence {
            let mut s = String::from("direction,realization,n,sup_increment\n");
            for d in &c.directions {
                for r in &d.runs {
                    for (i, v) in r.sup_increments.iter().enumerate() {
                        writeln!(s, "{},{},{},{v}", d.direction, r.index, c.depths[0] + i as u32).unwrap();
                    }
                }
            }
            out.push(("convergence.csv".into(), s));
        }
        if let Some(h) = &self.holder {
            let mut s = String::from("direction,realization,alpha,modulus_shallow,modulus_deep\n");
            for d in &h.directions {
                for r in &d.runs {
                    for (a, m) in d.alphas.iter().zip(&r.moduli) {
                        writeln!(s, "{},{},{},{},{}", d.direction, r.index, a.alpha, m[0], m[1]).unwrap();
                    }
                }
            }
            out.push(("holder.csv".into(), s));
        }
        if let Some(d) = &self.dimension {
            let mut s = String::from("realization,estimate\n");
            for (r, e) in &d.estimates {
                writeln!(s, "{r},{e}").unwrap();
            }
            out.push(("dimension.csv".into(), s));
        }
        out
    }
}

/// Expected size of the deepest level each section touches.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feasibility {
    pub sections: Vec<(String, u32, f64)>,
    pub estimated_cells: f64,
    pub max_cells: f64,
    pub feasible: bool,
}

pub fn feasibility(config: &ExperimentConfig) -> Feasibility {
    let growth = config.params.mean_offspring();
    let mut sections = Vec::new();
    let mut push = |name: &str, depth: u32| sections.push((name.to_string(), depth, growth.powi(depth as i32)));
    if let Some(c) = &config.martingale {
        push("martingale", c.level + 1);
    }
    if let Some(c) = &config.concentration {
        push("concentration", c.levels[1] + 1);
    }
    if let Some(c) = &config.convergence {
        push("convergence", c.depths[1] + 1);
    }
    if let Some(c) = &config.holder {
        push("holder", c.depths[1]);
    }
    if let Some(c) = &config.dimension {
        push("dimension", c.depth.max(c.compare_depth.unwrap_or(0)));
    }
    if let Some(c) = &config.uniformity {
        push("uniformity", c.level);
    }
    let estimated_cells = sections.iter().map(|s| s.2).fold(1.0, f64::max);
    Feasibility {
        sections,
        estimated_cells,
        max_cells: config.max_cells,
        feasible: estimated_cells <= config.max_cells,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Worker threads; `0` lets the thread pool decide.
    pub workers: usize,
}

/// Runs every configured section.
pub fn run_suite(config: &ExperimentConfig, options: RunOptions) -> Result<ExperimentReport> {
    config.validate()?;
    let feasible = feasibility(config);
    if !feasible.feasible {
        return Err(Error::Infeasible(format!(
            "about {:.3e} squares per realization exceed max_cells = {:.3e}",
            feasible.estimated_cells, config.max_cells
        )));
    }
    let needs_pk = config.martingale.is_some() || config.concentration.is_some() || config.convergence.is_some() || config.holder.is_some() || config.uniformity.is_some();
    if needs_pk && !config.params.projection_regime() {
        return Err(Error::Regime(format!("pk = {} <= 1: the configured sections assume pk > 1", config.params.pk())));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_sections(config))
}

fn run_sections(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let (params, seed) = (config.params, config.seed);
    let mut gates = Vec::new();
    let mut collect = |g: Vec<Gate>| gates.extend(g);
    let martingale = config.martingale.as_ref().map(|c| run_martingale(params, seed, c)).transpose()?.map(|(r, g)| {
        collect(g);
        r
    });
    let concentration = config.concentration.as_ref().map(|c| run_concentration(params, seed, c)).transpose()?.map(|(r, g)| {
        collect(g);
        r
    });
    let convergence = config.convergence.as_ref().map(|c| run_convergence(params, seed, c)).transpose()?.map(|(r, g)| {
        collect(g);
        r
    });
    let holder = config.holder.as_ref().map(|c| run_holder(params, seed, c)).transpose()?.map(|(r, g)| {
        collect(g);
        r
    });
    let dimension = config.dimension.as_ref().map(|c| run_dimension(params, seed, c)).transpose()?.map(|(r, g)| {
        collect(g);
        r
    });
    let uniformity = config.uniformity.as_ref().map(|c| run_uniformity(params, seed, c)).transpose()?.map(|(r, g)| {
        collect(g);
        r
    });
    let passed = gates.iter().all(|g| g.passed);
    Ok(ExperimentReport {
        config: config.clone(),
        martingale,
        concentration,
        convergence,
        holder,
        dimension,
        uniformity,
        gates,
        passed,
    })
}

/// Writes `report.json` and the CSV extracts into `dir`.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join("report.json");
    std::fs::write(&path, report.to_json())?;
    written.push(path);
    for (name, body) in report.csv_extracts() {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
