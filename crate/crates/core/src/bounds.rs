//! Closed-form constants and probability bounds.
//!
//! The existential constants `C_1, ..., C_6` have no known values; every
//! evaluator here uses `1` for them and says so in [`ConstantsReport`].
//! Probability lower bounds that drop below zero are flagged as vacuous
//! rather than clamped.

use std::f64::consts::SQRT_2;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::percolation::{dim_theory, PercolationParams};

/// `P(S > a) <= exp(-a^2 / 2 Upsilon)` for a sum of independent, centred
/// variables bounded by one.
pub fn hoeffding_bound(a: f64, upsilon: f64) -> Result<f64> {
    if !(a > 0.0 && upsilon > 0.0) {
        return Err(Error::InvalidParams(format!("need a > 0 and Upsilon > 0, got a = {a}, Upsilon = {upsilon}")));
    }
    Ok((-a * a / (2.0 * upsilon)).exp())
}

/// `gamma = exp(-p^2 / (2 sqrt 2 max(p, 1 - p)))`.
pub fn gamma_const(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParams(format!("p must lie in (0, 1), got {p}")));
    }
    Ok(ln_gamma(p).exp())
}

fn ln_gamma(p: f64) -> f64 {
    -p * p / (2.0 * SQRT_2 * p.max(1.0 - p))
}

fn require_pk(params: &PercolationParams) -> Result<f64> {
    let pk = params.pk();
    if pk <= 1.0 {
        return Err(Error::Regime(format!("pk = {pk} <= 1; the bound needs pk > 1")));
    }
    Ok(pk)
}

/// Search ceiling for the minimal-integer constants.
const SCAN_LIMIT: u32 = 1_000_000;

/// Whether `N_0` satisfies `1 + (pk)^(-N_0/3) < (pk)^(1/8)`.
pub fn n0_condition(params: &PercolationParams, n0: u32) -> bool {
    let pk = params.pk();
    1.0 + pk.powf(-(n0 as f64) / 3.0) < pk.powf(0.125)
}

/// The consequence `1 + (pk)^(-5 N_0/12) < (pk)^(1/4)`.
pub fn n0_consequence(params: &PercolationParams, n0: u32) -> bool {
    let pk = params.pk();
    1.0 + pk.powf(-5.0 * n0 as f64 / 12.0) < pk.powf(0.25)
}

/// Smallest positive `N_0` with `1 + (pk)^(-N_0/3) < (pk)^(1/8)`.
pub fn n0_const(params: &PercolationParams) -> Result<u32> {
    require_pk(params)?;
    let n0 = (1..=SCAN_LIMIT)
        .find(|&n| n0_condition(params, n))
        .ok_or_else(|| Error::Regime(format!("no N0 <= {SCAN_LIMIT}: pk = {} is too close to 1", params.pk())))?;
    if !n0_consequence(params, n0) {
        return Err(Error::Regime(format!("N0 = {n0} violates the consequence inequality")));
    }
    Ok(n0)
}

/// Variant used for oblique projections, where the per-step allowance
/// gains a `2 C_6 (pk)^(-N_0/6)` term.
pub fn n0_general(params: &PercolationParams, c6: f64) -> Result<u32> {
    let pk = require_pk(params)?;
    if !(c6 >= 0.0) {
        return Err(Error::InvalidParams(format!("C6 must be nonnegative, got {c6}")));
    }
    let holds = |n: u32| {
        let n = n as f64;
        1.0 + pk.powf(-n / 3.0) + 2.0 * c6 * pk.powf(-n / 6.0) < pk.powf(0.125)
    };
    (1..=SCAN_LIMIT)
        .find(|&n| holds(n))
        .ok_or_else(|| Error::Regime(format!("no N0 <= {SCAN_LIMIT} for C6 = {c6}")))
}

/// `L = ceil(-8 log_{pk} p) + 1`.
pub fn l_const(params: &PercolationParams) -> Result<u32> {
    let pk = require_pk(params)?;
    let raw = -8.0 * params.p().ln() / pk.ln();
    Ok(raw.ceil() as u32 + 1)
}

/// `(pk)^(L N_0 / 4) > (pk)^((L - 1) N_0 / 8) p^(-N_0)`, compared in logs.
pub fn l_consequence(params: &PercolationParams, l: u32, n0: u32) -> bool {
    let ln_pk = params.pk().ln();
    let (l, n0) = (l as f64, n0 as f64);
    l * n0 / 4.0 * ln_pk > (l - 1.0) * n0 / 8.0 * ln_pk - n0 * params.p().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IncrementThresholds {
    /// Upward allowance `p^-n k^-n (p^n k^n y)^(2/3)` for `y_{n+1}` above `y_n = y`.
    pub upward_threshold: f64,
    /// Two-sided allowance `(pk)^(-n/6)` on `|y_{n+1} - y_n|` when `y_n < (pk)^(n/3)`.
    pub two_sided_threshold: f64,
    /// `gamma^((pk)^(n/3))`; the failure probability is at most `C_1` times this.
    pub failure_exponent: f64,
}

pub fn increment_thresholds(params: &PercolationParams, n: u32, y: f64) -> Result<IncrementThresholds> {
    if !(y >= 0.0) {
        return Err(Error::InvalidParams(format!("density value must be nonnegative, got {y}")));
    }
    let pk = params.pk();
    let n = n as f64;
    let mass = pk.powf(n) * y;
    Ok(IncrementThresholds {
        upward_threshold: mass.powf(2.0 / 3.0) / pk.powf(n),
        two_sided_threshold: pk.powf(-n / 6.0),
        failure_exponent: gamma_power(params, n / 3.0),
    })
}

/// `gamma^((pk)^e)`, evaluated through logarithms.
fn gamma_power(params: &PercolationParams, e: f64) -> f64 {
    (ln_gamma(params.p()) * params.pk().powf(e)).exp()
}

/// A truncated infinite sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailSum {
    pub value: f64,
    /// Number of terms actually summed.
    pub terms: u32,
    /// First index from which successive terms at least halve.
    pub m_star: u32,
}

/// `sum_{m >= N} k^(m - N) gamma^((pk)^(m/3))` with `C_1 = 1`.
///
/// The early terms may grow (the `k^m` factor wins until the double
/// exponential takes over), so the cutoff `term < epsilon * sum` only
/// applies once the term ratio has dropped below one half.
pub fn increment_tail(params: &PercolationParams, big_n: u32, epsilon: f64) -> Result<TailSum> {
    let pk = require_pk(params)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParams(format!("epsilon must be positive, got {epsilon}")));
    }
    let ln_k = (params.k() as f64).ln();
    let lg = ln_gamma(params.p());
    let ln_term = |m: u32| (m - big_n) as f64 * ln_k + lg * pk.powf(m as f64 / 3.0);

    let mut sum = 0.0;
    let mut m_star = None;
    let mut m = big_n;
    loop {
        let current = ln_term(m);
        sum += current.exp();
        let next = ln_term(m + 1);
        if m_star.is_none() && (next == f64::NEG_INFINITY || next - current < -std::f64::consts::LN_2) {
            m_star = Some(m);
        }
        if let Some(star) = m_star {
            let term = next.exp();
            if term == 0.0 || term < epsilon * sum {
                return Ok(TailSum {
                    value: sum,
                    terms: m - big_n + 1,
                    m_star: star,
                });
            }
        }
        m += 1;
        if m - big_n > SCAN_LIMIT {
            return Err(Error::Regime("tail sum did not reach its decay regime".into()));
        }
    }
}

/// `sum_{m = lo}^{hi} gamma^((pk)^(m/3))`.
fn gamma_sum(params: &PercolationParams, lo: u32, hi: u32) -> f64 {
    (lo..=hi).map(|m| gamma_power(params, m as f64 / 3.0)).sum()
}

/// A probability lower bound `1 - (...)` that may be vacuous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbabilityBound {
    /// Unclamped value; negative when the bound says nothing.
    pub raw: f64,
    pub vacuous: bool,
}

impl ProbabilityBound {
    fn new(raw: f64) -> Self {
        ProbabilityBound { raw, vacuous: raw <= 0.0 }
    }

    /// `max(raw, 0)`, for display only.
    pub fn clamped(&self) -> f64 {
        self.raw.max(0.0)
    }
}

/// Index `ceil(n / L)` at which the sum in the level-`n` bound starts.
pub fn block_start(n: u32, l: u32) -> u32 {
    n.div_ceil(l)
}

/// `1 - sum_{m = n/L}^{n} gamma^((pk)^(m/3))` with `C_1 = 1`.
pub fn block_probability(params: &PercolationParams, n: u32) -> Result<ProbabilityBound> {
    let l = l_const(params)?;
    Ok(ProbabilityBound::new(1.0 - gamma_sum(params, block_start(n, l), n)))
}

/// Mesh of the `theta`- and `x`-grids at level `n` and the bound on their
/// cardinality (`C_4 = C_5 = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridMesh {
    pub mesh: f64,
    pub cardinality: f64,
}

pub fn grid_mesh(params: &PercolationParams, n: u32, delta: f64) -> Result<GridMesh> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParams(format!("delta must be positive, got {delta}")));
    }
    let (k, p, n) = (params.k() as f64, params.p(), n as f64);
    let ln_scale = 5.0 * n / 6.0 * p.ln() - 7.0 * n / 6.0 * k.ln();
    Ok(GridMesh {
        mesh: delta * ln_scale.exp(),
        cardinality: (-ln_scale).exp() / delta,
    })
}

/// The level `n` compatible with a length scale `k^-N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthRelation {
    /// Largest `n >= 0` with `N > n A + B`, if any.
    pub n: Option<u32>,
    /// `L' = 1 / A` with `A = 7/6 + (5/6) log_k(1/p)`.
    pub l_prime: f64,
    /// `L'' = B / A` with `B = log_k(C_4 / delta)`.
    pub l_double_prime: f64,
}

/// Whether `N > 7n/6 + (5n/6) log_k(1/p) + log_k(1/delta)`.
pub fn depth_condition(params: &PercolationParams, big_n: u32, n: u32, delta: f64) -> bool {
    let ln_k = (params.k() as f64).ln();
    let n = n as f64;
    let rhs = 7.0 * n / 6.0 + 5.0 * n / 6.0 * (-params.p().ln() / ln_k) + (1.0 / delta).ln() / ln_k;
    (big_n as f64) > rhs
}

pub fn depth_relation(params: &PercolationParams, big_n: u32, delta: f64) -> Result<DepthRelation> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParams(format!("delta must be positive, got {delta}")));
    }
    let ln_k = (params.k() as f64).ln();
    let a = 7.0 / 6.0 + 5.0 / 6.0 * (-params.p().ln() / ln_k);
    let b = (1.0 / delta).ln() / ln_k;
    // Start from the rearranged closed form and settle rounding by the
    // defining inequality itself.
    let guess = ((big_n as f64 - b) / a).floor();
    let n = if guess < 0.0 && !depth_condition(params, big_n, 0, delta) {
        None
    } else {
        let mut n = guess.max(0.0) as u32;
        while n > 0 && !depth_condition(params, big_n, n, delta) {
            n -= 1;
        }
        while depth_condition(params, big_n, n + 1, delta) {
            n += 1;
        }
        depth_condition(params, big_n, n, delta).then_some(n)
    };
    Ok(DepthRelation {
        n,
        l_prime: 1.0 / a,
        l_double_prime: b / a,
    })
}

/// The full probability bound for the oblique increments from level `n`
/// on: `1 - delta^-2 p^(-5n/3) k^(7n/3) sum_{m >= n} gamma^((pk)^(m/3))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridFailureBound {
    pub prefactor: f64,
    pub tail: f64,
    pub bound: ProbabilityBound,
}

pub fn grid_failure_bound(params: &PercolationParams, n: u32, delta: f64) -> Result<GridFailureBound> {
    require_pk(params)?;
    let card = grid_mesh(params, n, delta)?.cardinality;
    let prefactor = card * card;
    let mut tail = 0.0;
    let mut m = n;
    loop {
        let term = gamma_power(params, m as f64 / 3.0);
        tail += term;
        if term == 0.0 || term < 1e-17 * tail {
            break;
        }
        m += 1;
    }
    Ok(GridFailureBound {
        prefactor,
        tail,
        bound: ProbabilityBound::new(1.0 - prefactor * tail),
    })
}

/// `1 - p_N`: the failure probability for one level-`N` interval in the
/// proof that the densities converge.
pub fn scale_failure(params: &PercolationParams, big_n: u32) -> Result<f64> {
    let l = l_const(params)?;
    let head = gamma_sum(params, block_start(big_n, l), big_n);
    let tail = increment_tail(params, big_n, 1e-17)?.value;
    Ok(head + tail)
}

/// Partial sums of `sum_{N >= N_0} k^N (1 - p_N)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummabilitySeries {
    /// Natural log of the sum; the sum itself overflows for many parameters.
    pub ln_sum: f64,
    pub terms: u32,
    pub converged: bool,
}

pub fn scale_series(params: &PercolationParams, max_terms: u32) -> Result<SummabilitySeries> {
    let n0 = n0_const(params)?;
    let ln_k = (params.k() as f64).ln();
    let mut ln_sum = f64::NEG_INFINITY;
    let mut prev_ln_term = f64::INFINITY;
    for i in 0..max_terms {
        let big_n = n0 + i;
        let ln_term = big_n as f64 * ln_k + scale_failure(params, big_n)?.ln();
        ln_sum = log_add(ln_sum, ln_term);
        let decaying = ln_term < prev_ln_term;
        prev_ln_term = ln_term;
        // Stop once the terms decrease and each adds under 1e-12 relative.
        if decaying && (ln_term == f64::NEG_INFINITY || ln_term - ln_sum < -12.0 * std::f64::consts::LN_10) {
            return Ok(SummabilitySeries {
                ln_sum,
                terms: i + 1,
                converged: true,
            });
        }
    }
    Ok(SummabilitySeries {
        ln_sum,
        terms: max_terms,
        converged: false,
    })
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Inputs of [`constants_report`] besides `(k, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsQuery {
    /// Angle margin `delta`.
    pub delta: f64,
    /// Level `n` for the thresholds and grid.
    pub n: u32,
    /// Length scale exponent `N`.
    pub big_n: u32,
    pub epsilon: f64,
}

impl Default for ConstantsQuery {
    fn default() -> Self {
        ConstantsQuery {
            delta: 0.1,
            n: 6,
            big_n: 20,
            epsilon: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsReport {
    pub k: u32,
    pub p: f64,
    pub delta: f64,
    pub n: u32,
    #[serde(rename = "N")]
    pub big_n: u32,
    pub gamma: f64,
    pub n0: Option<u32>,
    pub n0_consequence: Option<bool>,
    pub l: Option<u32>,
    pub l_consequence: Option<bool>,
    pub dim_theory: Option<f64>,
    pub increments: IncrementThresholds,
    pub mesh: GridMesh,
    pub depth_relation: DepthRelation,
    pub increment_tail: Option<TailSum>,
    pub block_probability: Option<ProbabilityBound>,
    pub grid_failure: Option<GridFailureBound>,
    /// Existential constants, all evaluated as 1.
    pub unit_constants: Vec<&'static str>,
    pub warnings: Vec<String>,
}

/// Everything the `constants` command prints.
pub fn constants_report(params: &PercolationParams, query: &ConstantsQuery) -> Result<ConstantsReport> {
    let mut warnings = Vec::new();
    if !params.projection_regime() {
        warnings.push(format!("pk = {} <= 1: pk-power bounds are not evaluated", params.pk()));
    }
    if !params.supercritical_branching() {
        warnings.push(format!("k^2 p = {} <= 1: the limit set is almost surely empty", params.mean_offspring()));
    }
    let n0 = n0_const(params).ok();
    let l = l_const(params).ok();
    Ok(ConstantsReport {
        k: params.k(),
        p: params.p(),
        delta: query.delta,
        n: query.n,
        big_n: query.big_n,
        gamma: gamma_const(params.p())?,
        n0,
        n0_consequence: n0.map(|n0| n0_consequence(params, n0)),
        l,
        l_consequence: l.zip(n0).map(|(l, n0)| l_consequence(params, l, n0)),
        dim_theory: dim_theory(params).ok(),
        increments: increment_thresholds(params, query.n, 1.0)?,
        mesh: grid_mesh(params, query.n, query.delta)?,
        depth_relation: depth_relation(params, query.big_n, query.delta)?,
        increment_tail: increment_tail(params, query.big_n, query.epsilon).ok(),
        block_probability: block_probability(params, query.big_n).ok(),
        grid_failure: grid_failure_bound(params, query.n, query.delta).ok(),
        unit_constants: vec!["C1", "C4", "C5"],
        warnings,
    })
}
