//! Maximum differential entropy under moment constraints.
//!
//! For a support `S`, equality costs `h_i` and inequality costs `g_j`, the
//! largest entropy of a density on `S` with `E h_i = 0` and `E g_j ≤ 0` is
//!
//! ```text
//! γ* = min_{u, λ ⪰ 0} log ∫_S exp(−uᵀh(s) − λᵀg(s)) ds
//! ```
//!
//! (the normalization multiplier is eliminated, so `γ* = −ν*`). The
//! integral is evaluated with a fixed [`QuadRule`] and minimized by a
//! projected Newton method whose Hessian is the exact covariance of the
//! cost vector under the current Gibbs density.

mod channel;
pub mod quadrature;
pub(crate) mod solver;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::zonotope::{FiberMap, ZonotopeDecomposition};
use crate::{Error, Result};

pub use channel::{
    ec_spec, gamma_b, gamma_e, gamma_full_rank, pinned_gamma, sample_density, signaling_map, Mode,
    SignalingMap,
};
pub use quadrature::{QuadRule, QuadratureConfig};

use solver::{minimize, Bounds, Objective, Options};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Infeasible,
    MaxIter,
    /// The input is partly deterministic and the answer came from a closed form
    /// (or is `−∞` because the output lives on a lower-dimensional set).
    Degenerate,
}

/// A single cost functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cost {
    /// `aᵀs − c`.
    Affine { a: Vec<f64>, c: f64 },
    /// `f_min(s) − c`.
    FiberMin { c: f64 },
    /// `f_min(H̃1 − s) − c`.
    FiberMinReflected { c: f64 },
    /// `(s − threshold)_+ − cap`, one-dimensional supports only.
    StopLoss { threshold: f64, cap: f64 },
}

impl Cost {
    pub fn offset(&self) -> f64 {
        match self {
            Cost::Affine { c, .. } | Cost::FiberMin { c } | Cost::FiberMinReflected { c } => *c,
            Cost::StopLoss { cap, .. } => *cap,
        }
    }

    fn raw(&self, s: &[f64], fiber: Option<&FiberMap>) -> f64 {
        match self {
            Cost::Affine { a, .. } => a.iter().zip(s).map(|(x, y)| x * y).sum(),
            Cost::FiberMin { .. } => fiber.expect("validated").f_min_raw(s),
            Cost::FiberMinReflected { .. } => fiber.expect("validated").f_min_reflected_raw(s),
            Cost::StopLoss { threshold, .. } => (s[0] - threshold).max(0.0),
        }
    }

    /// Value of the cost at `s`.
    pub fn eval(&self, s: &[f64], fiber: Option<&FiberMap>) -> f64 {
        self.raw(s, fiber) - self.offset()
    }
}

#[derive(Debug, Clone)]
pub enum Support {
    Interval { lo: f64, hi: f64 },
    Zonotope(ZonotopeDecomposition),
}

impl Support {
    pub fn volume(&self) -> f64 {
        match self {
            Support::Interval { lo, hi } => hi - lo,
            Support::Zonotope(zd) => zd.volume,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Support::Interval { .. } => 1,
            Support::Zonotope(zd) => zd.dim(),
        }
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        match self {
            Support::Interval { lo, hi } => s.len() == 1 && s[0] >= *lo && s[0] <= *hi,
            Support::Zonotope(zd) => s.len() == zd.dim() && zd.contains(&DVector::from_column_slice(s), 1e-12),
        }
    }
}

/// Support, costs, and (when fiber costs appear) the fiber geometry.
#[derive(Debug, Clone)]
pub struct MomentSpec {
    pub support: Support,
    pub equalities: Vec<Cost>,
    pub inequalities: Vec<Cost>,
    pub fiber: Option<FiberMap>,
}

impl MomentSpec {
    pub fn new(
        support: Support,
        equalities: Vec<Cost>,
        inequalities: Vec<Cost>,
        fiber: Option<FiberMap>,
    ) -> Result<Self> {
        let dim = support.dim();
        if support.volume().is_nan() || support.volume() <= 0.0 {
            return Err(Error::InvalidArgument("support has zero volume".into()));
        }
        if let Some(f) = &fiber {
            if f.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: f.dim() });
            }
        }
        for c in &equalities {
            if !matches!(c, Cost::Affine { .. }) {
                return Err(Error::InvalidArgument("equality costs must be affine".into()));
            }
        }
        for c in equalities.iter().chain(&inequalities) {
            if !c.offset().is_finite() {
                return Err(Error::NonFinite("cost offset"));
            }
            match c {
                Cost::Affine { a, .. } => {
                    if a.len() != dim {
                        return Err(Error::DimensionMismatch { expected: dim, found: a.len() });
                    }
                    if a.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite("cost coefficients"));
                    }
                }
                Cost::FiberMin { .. } | Cost::FiberMinReflected { .. } if fiber.is_none() => {
                    return Err(Error::InvalidArgument("fiber costs need a fiber map".into()));
                }
                Cost::StopLoss { threshold, .. } if dim != 1 || !threshold.is_finite() => {
                    return Err(Error::InvalidArgument("stop-loss costs need a finite threshold in one dimension".into()));
                }
                _ => {}
            }
        }
        Ok(Self { support, equalities, inequalities, fiber })
    }

    /// Unconstrained problem on an interval.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(Support::Interval { lo, hi }, Vec::new(), Vec::new(), None)
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn n_params(&self) -> usize {
        self.equalities.len() + self.inequalities.len()
    }

    fn costs(&self) -> impl Iterator<Item = &Cost> {
        self.equalities.iter().chain(&self.inequalities)
    }

    pub fn offsets(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_params(), self.costs().map(Cost::offset))
    }

    fn raw_into(&self, s: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(self.costs()) {
            *o = c.raw(s, self.fiber.as_ref());
        }
    }

    /// Cost vector `(h(s), g(s))`.
    pub fn costs_at(&self, s: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.n_params(), self.costs().map(|c| c.eval(s, self.fiber.as_ref())))
    }

    /// Points where some cost is not smooth (one-dimensional supports).
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut fiber_kinks = |reflect: bool| {
            let Some(f) = &self.fiber else { return };
            let corner = f.corner[0];
            for k in 0..f.pieces() {
                for l in k + 1..f.pieces() {
                    let (lo_k, _, a_k) = f.piece(k);
                    let (lo_l, _, a_l) = f.piece(l);
                    let da = a_k[0] - a_l[0];
                    if da.abs() > 1e-14 {
                        let s = (lo_l - lo_k) / da;
                        out.push(if reflect { corner - s } else { s });
                    }
                }
            }
        };
        let mut direct = false;
        let mut reflected = false;
        for c in self.costs() {
            match c {
                Cost::FiberMin { .. } => direct = true,
                Cost::FiberMinReflected { .. } => reflected = true,
                _ => {}
            }
        }
        if self.dim() == 1 {
            if direct {
                fiber_kinks(false);
            }
            if reflected {
                fiber_kinks(true);
            }
            for c in self.costs() {
                if let Cost::StopLoss { threshold, .. } = c {
                    out.push(*threshold);
                }
            }
        }
        out.retain(|x| x.is_finite());
        out.sort_by(f64::total_cmp);
        out
    }

    /// Quadrature rule for this support; `qmc_points` applies in three or more dimensions.
    pub fn rule(&self, cfg: &QuadratureConfig, qmc_points: usize) -> QuadRule {
        match &self.support {
            Support::Interval { lo, hi } => quadrature::interval_rule(&[(*lo, *hi)], &self.breakpoints(), cfg),
            Support::Zonotope(zd) => match zd.dim() {
                1 => {
                    let cells: Vec<(f64, f64)> = zd
                        .cells
                        .iter()
                        .map(|c| (c.translate[0], c.translate[0] + c.matrix[(0, 0)]))
                        .collect();
                    quadrature::interval_rule(&cells, &self.breakpoints(), cfg)
                }
                2 => quadrature::tensor_rule(zd, cfg),
                _ => quadrature::halton_rule(zd, qmc_points, cfg.seed),
            },
        }
    }
}

const CHUNK: usize = 4096;

/// Cost values at every node of a quadrature rule.
#[derive(Debug, Clone)]
pub(crate) struct Stats {
    pub m: usize,
    pub raw: Vec<f64>,
    pub log_w: Vec<f64>,
    pub offsets: DVector<f64>,
}

struct Partial {
    s0: f64,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Stats {
    pub fn build(spec: &MomentSpec, rule: &QuadRule) -> Self {
        let m = spec.n_params();
        let mut raw = vec![0.0; rule.len() * m];
        if m > 0 {
            raw.par_chunks_mut(m * CHUNK).enumerate().for_each(|(c, block)| {
                for (k, out) in block.chunks_mut(m).enumerate() {
                    spec.raw_into(rule.point(c * CHUNK + k), out);
                }
            });
        }
        Self { m, raw, log_w: rule.log_w.clone(), offsets: spec.offsets() }
    }

    pub fn len(&self) -> usize {
        self.log_w.len()
    }

    fn exponent(&self, k: usize, theta: &[f64]) -> f64 {
        let t = &self.raw[k * self.m..(k + 1) * self.m];
        self.log_w[k] - t.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
    }

    fn max_exponent(&self, theta: &[f64]) -> (f64, usize) {
        let n = self.len();
        let chunks: Vec<(f64, usize)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut best = (f64::NEG_INFINITY, c * CHUNK);
                for k in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let e = self.exponent(k, theta);
                    if e > best.0 {
                        best = (e, k);
                    }
                }
                best
            })
            .collect();
        chunks.into_iter().fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
    }

    /// `log Σ w exp(−θᵀT)` without the offsets.
    pub fn log_z(&self, theta: &[f64]) -> f64 {
        let (mx, _) = self.max_exponent(theta);
        if !mx.is_finite() {
            return mx;
        }
        let n = self.len();
        let parts: Vec<f64> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(|k| (self.exponent(k, theta) - mx).exp()).sum())
            .collect();
        mx + parts.iter().sum::<f64>().ln()
    }

    /// Log-partition, mean and covariance of `T` under the Gibbs density.
    pub fn moments(&self, theta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let m = self.m;
        let (mx, arg) = self.max_exponent(theta);
        if !mx.is_finite() {
            return (mx, DVector::from_element(m, f64::NAN), DMatrix::from_element(m, m, f64::NAN));
        }
        // shift by the dominant node to limit cancellation in the covariance
        let center: Vec<f64> = self.raw[arg * m..(arg + 1) * m].to_vec();
        let n = self.len();
        let parts: Vec<Partial> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut p = Partial { s0: 0.0, s1: vec![0.0; m], s2: vec![0.0; m * m] };
                let mut d = vec![0.0; m];
                for k in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let w = (self.exponent(k, theta) - mx).exp();
                    p.s0 += w;
                    for i in 0..m {
                        d[i] = self.raw[k * m + i] - center[i];
                        p.s1[i] += w * d[i];
                    }
                    for i in 0..m {
                        for j in 0..=i {
                            p.s2[i * m + j] += w * d[i] * d[j];
                        }
                    }
                }
                p
            })
            .collect();
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; m];
        let mut s2 = vec![0.0; m * m];
        for p in &parts {
            s0 += p.s0;
            s1.iter_mut().zip(&p.s1).for_each(|(a, b)| *a += b);
            s2.iter_mut().zip(&p.s2).for_each(|(a, b)| *a += b);
        }
        let mean_d: Vec<f64> = s1.iter().map(|v| v / s0).collect();
        let mean = DVector::from_fn(m, |i, _| center[i] + mean_d[i]);
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = s2[i * m + j] / s0 - mean_d[i] * mean_d[j];
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        (mx + s0.ln(), mean, cov)
    }
}

struct DualObjective<'a> {
    stats: &'a Stats,
}

impl Objective for DualObjective<'_> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.stats.offsets) + self.stats.log_z(x.as_slice())
    }

    fn value_grad_hess(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (lz, mean, cov) = self.stats.moments(x.as_slice());
        (x.dot(&self.stats.offsets) + lz, &self.stats.offsets - mean, cov)
    }
}

/// Dual multipliers; `nu` normalizes the density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub nu: f64,
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl DualPoint {
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_iterator(self.u.len() + self.lambda.len(), self.u.iter().chain(&self.lambda).copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxEntSolution {
    /// Maximum differential entropy in nats.
    pub gamma: f64,
    pub dual: DualPoint,
    pub grad_norm: f64,
    /// Quadrature nodes used by the last solve.
    pub n_quad: usize,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Average-intensity vector the density corresponds to (EC: `α`; BC: the optimal `x ⪯ α`).
    pub allocation: Option<Vec<f64>>,
}

impl MaxEntSolution {
    pub(crate) fn closed_form(gamma: f64, allocation: Option<Vec<f64>>) -> Self {
        Self {
            gamma,
            dual: DualPoint { nu: -gamma, u: Vec::new(), lambda: Vec::new() },
            grad_norm: 0.0,
            n_quad: 0,
            iterations: 0,
            status: SolveStatus::Degenerate,
            allocation,
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self.status, SolveStatus::Converged | SolveStatus::Degenerate)
    }
}

fn split_theta(spec: &MomentSpec, theta: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    let n_eq = spec.equalities.len();
    (theta.as_slice()[..n_eq].to_vec(), theta.as_slice()[n_eq..].to_vec())
}

pub(crate) fn bounded_mask(spec: &MomentSpec) -> Vec<bool> {
    (0..spec.n_params()).map(|i| i >= spec.equalities.len()).collect()
}

fn solve_on(spec: &MomentSpec, stats: &Stats, x0: DVector<f64>) -> MaxEntSolution {
    let bounds = Bounds::nonnegative(&bounded_mask(spec));
    let out = minimize(&DualObjective { stats }, x0, &bounds, &Options::default());
    let gamma = if out.status == SolveStatus::Infeasible { f64::NEG_INFINITY } else { out.value };
    let (u, lambda) = split_theta(spec, &out.x);
    MaxEntSolution {
        gamma,
        dual: DualPoint { nu: -gamma, u, lambda },
        grad_norm: out.grad_norm,
        n_quad: stats.len(),
        iterations: out.iterations,
        status: out.status,
        allocation: None,
    }
}

/// Maximum entropy of a density on the support subject to the costs.
pub fn solve_gamma_star(spec: &MomentSpec, cfg: &QuadratureConfig) -> Result<MaxEntSolution> {
    cfg.validate()?;
    let mut points = cfg.qmc_points;
    let stats = Stats::build(spec, &spec.rule(cfg, points));
    let mut sol = solve_on(spec, &stats, DVector::zeros(spec.n_params()));
    if spec.dim() < 3 {
        return Ok(sol);
    }
    while points * 2 <= cfg.qmc_max_points && sol.status == SolveStatus::Converged {
        points *= 2;
        let stats = Stats::build(spec, &spec.rule(cfg, points));
        let next = solve_on(spec, &stats, sol.dual.theta());
        let change = (next.gamma - sol.gamma).abs();
        sol = next;
        if change < cfg.qmc_tol {
            break;
        }
    }
    Ok(sol)
}

/// `log ∫ exp(−uᵀh − λᵀg)` and its gradient over `(u, λ)`.
pub fn log_partition(
    spec: &MomentSpec,
    cfg: &QuadratureConfig,
    u: &[f64],
    lambda: &[f64],
) -> Result<(f64, DVector<f64>)> {
    if u.len() != spec.equalities.len() {
        return Err(Error::DimensionMismatch { expected: spec.equalities.len(), found: u.len() });
    }
    if lambda.len() != spec.inequalities.len() {
        return Err(Error::DimensionMismatch { expected: spec.inequalities.len(), found: lambda.len() });
    }
    if lambda.iter().any(|&l| l < 0.0) {
        return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
    }
    let stats = Stats::build(spec, &spec.rule(cfg, cfg.qmc_points));
    let theta = DVector::from_iterator(spec.n_params(), u.iter().chain(lambda).copied());
    let obj = DualObjective { stats: &stats };
    let (value, grad, _) = obj.value_grad_hess(&theta);
    Ok((value, grad))
}

/// Expected cost vector `(E h, E g)` under the solution's density.
pub fn expected_costs(sol: &MaxEntSolution, spec: &MomentSpec, cfg: &QuadratureConfig) -> DVector<f64> {
    let stats = Stats::build(spec, &spec.rule(cfg, cfg.qmc_points));
    let (_, mean, _) = stats.moments(sol.dual.theta().as_slice());
    mean - &stats.offsets
}

/// `p*(s) = exp(ν − uᵀh(s) − λᵀg(s))`, zero off the support.
pub fn density_eval(sol: &MaxEntSolution, spec: &MomentSpec, s: &[f64]) -> f64 {
    if !spec.support.contains(s) {
        return 0.0;
    }
    let theta = sol.dual.theta();
    if theta.is_empty() {
        return (sol.dual.nu).exp();
    }
    (sol.dual.nu - theta.dot(&spec.costs_at(s))).exp()
}

/// `(k/2) log(1 + exp(2γ/k) / (2πeσ²))`.
pub fn epi_lower_bound(gamma: f64, k: usize, sigma: f64) -> f64 {
    let kf = k as f64;
    let ratio = (2.0 * gamma / kf).exp() / (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma);
    0.5 * kf * ratio.ln_1p()
}

/// Mean of the density `∝ e^{−u s}` on `[0, 1]`.
pub fn truncated_exp_mean(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        return 0.5 - u / 12.0 + u.powi(3) / 720.0;
    }
    1.0 / u - 1.0 / u.exp_m1()
}

/// Rate `u` whose truncated exponential on `[0, 1]` has the given mean in `(0, 1)`.
pub fn truncated_exp_rate(mean: f64) -> f64 {
    let (mut lo, mut hi) = (-(1.0 / (1.0 - mean) + 10.0), 1.0 / mean + 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if truncated_exp_mean(mid) > mean {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Largest entropy of a variable on `[0, 1]` with mean `a`.
pub fn max_entropy_unit_mean(a: f64) -> f64 {
    if a <= 0.0 || a >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let a = a.min(1.0 - a);
    let u = truncated_exp_rate(a);
    if u.abs() < 1e-8 {
        return -u * u / 24.0;
    }
    // log normalizer ln((1 − e^{−u})/u) plus u·a
    (-(-u).exp_m1() / u).ln() + u * a
}

/// Largest entropy of a variable on `[0, 1]` with mean at most `a`.
pub fn max_entropy_unit_bounded(a: f64) -> f64 {
    if a >= 0.5 {
        0.0
    } else {
        max_entropy_unit_mean(a)
    }
}
