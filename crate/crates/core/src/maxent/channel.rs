//! High-SNR offsets `γ_E`, `γ_B` of channels with `r = n_t − 1`, closed forms
//! for deterministic antennas, sampling from the optimal density, and the
//! map from output samples back to channel inputs.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::solver::{minimize, Bounds, Objective, Options};
use super::{
    max_entropy_unit_bounded, max_entropy_unit_mean, Cost, MaxEntSolution, MomentSpec, QuadratureConfig, SolveStatus,
    Stats, Support,
};
use crate::channel::{IntensityProfile, ReducedChannel, DEGENERATE_ALPHA_TOL};
use crate::zonotope::{decompose, FiberMap};
use crate::{Error, Result};

/// Equal-cost (means pinned to `α`) or bounded-cost (means at most `α`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ec,
    Bc,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ec" => Ok(Mode::Ec),
            "bc" => Ok(Mode::Bc),
            other => Err(Error::Parse(format!("unknown mode {other:?}, expected EC or BC"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ec => "EC",
            Mode::Bc => "BC",
        })
    }
}

fn require_tail(rc: &ReducedChannel) -> Result<()> {
    if rc.r + 1 != rc.n_t() {
        return Err(Error::RankMismatch { expected: rc.n_t() - 1, found: rc.r });
    }
    Ok(())
}

fn check_len(rc: &ReducedChannel, alpha: &IntensityProfile) -> Result<()> {
    if alpha.len() != rc.n_t() {
        return Err(Error::DimensionMismatch { expected: rc.n_t(), found: alpha.len() });
    }
    Ok(())
}

/// Moment problem whose maximum entropy is `γ_E` at average intensity `x`.
///
/// Costs in order: `s_i − (H̃x)_i` for each output coordinate, then
/// `f_min(s) − v_tailᵀx` and `f_min(H̃1 − s) − v_tailᵀ(1 − x)`.
pub fn ec_spec(rc: &ReducedChannel, x: &[f64]) -> Result<MomentSpec> {
    require_tail(rc)?;
    if x.len() != rc.n_t() {
        return Err(Error::DimensionMismatch { expected: rc.n_t(), found: x.len() });
    }
    let fiber = FiberMap::new(rc)?;
    let xv = DVector::from_column_slice(x);
    let mean = &rc.h_tilde * &xv;
    let low = fiber.v_tail.dot(&xv);
    let high = fiber.tail_sum - low;
    let equalities = (0..rc.r)
        .map(|i| {
            let mut a = vec![0.0; rc.r];
            a[i] = 1.0;
            Cost::Affine { a, c: mean[i] }
        })
        .collect();
    let inequalities = vec![Cost::FiberMin { c: low }, Cost::FiberMinReflected { c: high }];
    MomentSpec::new(Support::Zonotope(decompose(rc)?), equalities, inequalities, Some(fiber))
}

fn pinned_set(alpha: &[f64], mode: Mode) -> Vec<usize> {
    (0..alpha.len())
        .filter(|&i| match mode {
            Mode::Ec => alpha[i] <= DEGENERATE_ALPHA_TOL || alpha[i] >= 1.0 - DEGENERATE_ALPHA_TOL,
            Mode::Bc => alpha[i] <= DEGENERATE_ALPHA_TOL,
        })
        .collect()
}

fn scalar_entropy(a: f64, mode: Mode) -> f64 {
    match mode {
        Mode::Ec => max_entropy_unit_mean(a),
        Mode::Bc => max_entropy_unit_bounded(a),
    }
}

fn bc_allocation(alpha: &[f64], pinned: &[usize]) -> Vec<f64> {
    alpha.iter().enumerate().map(|(i, &a)| if pinned.contains(&i) { 0.0 } else { a.min(0.5) }).collect()
}

/// `log|det H̃_R| + Σ_{j∈R} h(α_j)` over the free antennas `R`, assuming they form a square block.
fn product_entropy(h: &DMatrix<f64>, alpha: &[f64], free: &[usize], mode: Mode) -> f64 {
    if free.len() != h.nrows() {
        return f64::NEG_INFINITY;
    }
    let block = h.select_columns(free);
    let hadamard: f64 = free.iter().map(|&j| h.column(j).norm()).product();
    let det = block.determinant().abs();
    if det <= 1e-12 * hadamard {
        return f64::NEG_INFINITY;
    }
    det.ln() + free.iter().map(|&j| scalar_entropy(alpha[j], mode)).sum::<f64>()
}

/// Closed form when some antennas are deterministic.
///
/// Pinning one antenna leaves a square channel whose output entropy is the
/// log-determinant plus independent one-dimensional maxima; pinning more
/// leaves an output of lower dimension and the answer is `−∞`.
pub fn pinned_gamma(rc: &ReducedChannel, alpha: &IntensityProfile, mode: Mode) -> Result<MaxEntSolution> {
    check_len(rc, alpha)?;
    let a = alpha.alpha();
    let pinned = pinned_set(a, mode);
    if pinned.is_empty() {
        return Err(Error::InvalidArgument("no deterministic antenna to pin".into()));
    }
    let free: Vec<usize> = (0..a.len()).filter(|i| !pinned.contains(i)).collect();
    let gamma = product_entropy(&rc.h_tilde, a, &free, mode);
    let allocation = match mode {
        Mode::Ec => a.to_vec(),
        Mode::Bc => bc_allocation(a, &pinned),
    };
    Ok(MaxEntSolution::closed_form(gamma, Some(allocation)))
}

/// Offset of a square full-rank reduced channel, where inputs may be independent.
pub fn gamma_full_rank(rc: &ReducedChannel, alpha: &IntensityProfile, mode: Mode) -> Result<MaxEntSolution> {
    check_len(rc, alpha)?;
    if rc.r != rc.n_t() {
        return Err(Error::RankMismatch { expected: rc.n_t(), found: rc.r });
    }
    let a = alpha.alpha();
    let free: Vec<usize> = (0..a.len()).collect();
    let gamma = product_entropy(&rc.h_tilde, a, &free, mode);
    let allocation = match mode {
        Mode::Ec => a.to_vec(),
        Mode::Bc => bc_allocation(a, &[]),
    };
    let mut sol = MaxEntSolution::closed_form(gamma, Some(allocation));
    if gamma.is_finite() {
        sol.status = SolveStatus::Converged;
    }
    Ok(sol)
}

/// `γ_E`: largest entropy of `S = H̃X` with `E X = α`.
pub fn gamma_e(rc: &ReducedChannel, alpha: &IntensityProfile, cfg: &QuadratureConfig) -> Result<MaxEntSolution> {
    require_tail(rc)?;
    check_len(rc, alpha)?;
    if !pinned_set(alpha.alpha(), Mode::Ec).is_empty() {
        return pinned_gamma(rc, alpha, Mode::Ec);
    }
    let spec = ec_spec(rc, alpha.alpha())?;
    let mut sol = super::solve_gamma_star(&spec, cfg)?;
    sol.allocation = Some(alpha.alpha().to_vec());
    Ok(sol)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Smoothed bounded-cost dual
/// `Σ α_i μ·softplus(c_iᵀθ/μ) + λ₂·1ᵀv_tail + log Z(θ)`, `c_i = (h̃_i, v_i, −v_i)`.
struct BoundedDual<'a> {
    stats: &'a Stats,
    c: DMatrix<f64>,
    alpha: Vec<f64>,
    tail_sum: f64,
    mu: f64,
}

impl BoundedDual<'_> {
    fn allocation(&self, theta: &DVector<f64>) -> Vec<f64> {
        let z = &self.c * theta;
        (0..self.alpha.len()).map(|i| self.alpha[i] * logistic(z[i] / self.mu)).collect()
    }
}

impl Objective for BoundedDual<'_> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let z = &self.c * x;
        let kinks: f64 = (0..self.alpha.len()).map(|i| self.alpha[i] * self.mu * softplus(z[i] / self.mu)).sum();
        kinks + x[x.len() - 1] * self.tail_sum + self.stats.log_z(x.as_slice())
    }

    fn value_grad_hess(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (lz, mean, mut hess) = self.stats.moments(x.as_slice());
        let z = &self.c * x;
        let n = x.len();
        let mut grad = -mean;
        grad[n - 1] += self.tail_sum;
        let mut value = lz + x[n - 1] * self.tail_sum;
        for i in 0..self.alpha.len() {
            let t = z[i] / self.mu;
            let p = logistic(t);
            value += self.alpha[i] * self.mu * softplus(t);
            let ci = self.c.row(i).transpose();
            grad.axpy(self.alpha[i] * p, &ci, 1.0);
            let curv = self.alpha[i] * p * (1.0 - p) / self.mu;
            if curv > 0.0 {
                hess.ger(curv, &ci, &ci, 1.0);
            }
        }
        (value, grad, hess)
    }
}

/// `γ_B`: largest entropy of `S = H̃X` with `E X ⪯ α`, i.e. the maximum of `γ_E` over `0 ⪯ x ⪯ α`.
///
/// The kinks `(·)_+` of the dual are smoothed with a softplus of width `μ`
/// that shrinks from 1 to 1e-9; each stage is warm-started from the last.
/// The reported `γ` is the equal-cost dual value at the recovered allocation.
pub fn gamma_b(rc: &ReducedChannel, alpha: &IntensityProfile, cfg: &QuadratureConfig) -> Result<MaxEntSolution> {
    require_tail(rc)?;
    check_len(rc, alpha)?;
    cfg.validate()?;
    let a = alpha.alpha();
    if !pinned_set(a, Mode::Bc).is_empty() {
        return pinned_gamma(rc, alpha, Mode::Bc);
    }
    let r = rc.r;
    let n_t = rc.n_t();
    let base = ec_spec(rc, &vec![0.0; n_t])?;
    let fiber = base.fiber.clone().expect("fiber present");
    let c = DMatrix::from_fn(n_t, r + 2, |i, j| match j {
        j if j < r => rc.h_tilde[(j, i)],
        j if j == r => fiber.v_tail[i],
        _ => -fiber.v_tail[i],
    });
    let bounds = Bounds::nonnegative(&(0..r + 2).map(|j| j >= r).collect::<Vec<_>>());

    let solve_with = |points: usize, warm: DVector<f64>| -> (DVector<f64>, Vec<f64>, f64, SolveStatus, usize, usize) {
        let rule = base.rule(cfg, points);
        let mut stats = Stats::build(&base, &rule);
        stats.offsets = DVector::zeros(r + 2);
        let mut theta = warm;
        let mut status = SolveStatus::MaxIter;
        let mut iterations = 0;
        let mut grad_norm = f64::INFINITY;
        let mut mu = 1.0;
        let mut obj = BoundedDual { stats: &stats, c: c.clone(), alpha: a.to_vec(), tail_sum: fiber.tail_sum, mu };
        while mu >= 1e-9 {
            obj.mu = mu;
            let out = minimize(&obj, theta, &bounds, &Options::default());
            theta = out.x;
            status = out.status;
            iterations += out.iterations;
            grad_norm = out.grad_norm;
            if status == SolveStatus::Infeasible {
                break;
            }
            mu *= 0.1;
        }
        let x = obj.allocation(&theta);
        (theta, x, grad_norm, status, iterations, stats.len())
    };

    let mut points = cfg.qmc_points;
    let (mut theta, mut x, mut grad_norm, mut status, mut iterations, mut n_quad) =
        solve_with(points, DVector::zeros(r + 2));
    let gamma_at = |theta: &DVector<f64>, x: &[f64], points: usize| -> Result<f64> {
        let spec = ec_spec(rc, x)?;
        let stats = Stats::build(&spec, &spec.rule(cfg, points));
        Ok(theta.dot(&stats.offsets) + stats.log_z(theta.as_slice()))
    };
    let mut gamma = gamma_at(&theta, &x, points)?;
    if r >= 3 {
        while points * 2 <= cfg.qmc_max_points && status == SolveStatus::Converged {
            points *= 2;
            let next = solve_with(points, theta.clone());
            (theta, x, grad_norm, status, iterations, n_quad) = next;
            let g = gamma_at(&theta, &x, points)?;
            let change = (g - gamma).abs();
            gamma = g;
            if change < cfg.qmc_tol {
                break;
            }
        }
    }
    if status == SolveStatus::Infeasible {
        gamma = f64::NEG_INFINITY;
    }
    Ok(MaxEntSolution {
        gamma,
        dual: super::DualPoint { nu: -gamma, u: theta.as_slice()[..r].to_vec(), lambda: theta.as_slice()[r..].to_vec() },
        grad_norm,
        n_quad,
        iterations,
        status,
        allocation: Some(x),
    })
}

fn log_density(sol: &MaxEntSolution, spec: &MomentSpec, theta: &DVector<f64>, s: &[f64]) -> f64 {
    if theta.is_empty() {
        sol.dual.nu
    } else {
        sol.dual.nu - theta.dot(&spec.costs_at(s))
    }
}

fn corners(spec: &MomentSpec) -> Vec<Vec<f64>> {
    match &spec.support {
        Support::Interval { lo, hi } => {
            let mut pts = vec![vec![*lo], vec![*hi]];
            pts.extend(spec.breakpoints().into_iter().filter(|b| b > lo && b < hi).map(|b| vec![b]));
            pts
        }
        Support::Zonotope(zd) => {
            let r = zd.dim();
            let mut pts = Vec::new();
            for cell in &zd.cells {
                for mask in 0..(1usize << r) {
                    let t = DVector::from_fn(r, |i, _| if mask >> i & 1 == 1 { 1.0 } else { 0.0 });
                    pts.push(cell.point(&t).iter().copied().collect());
                }
            }
            if r == 1 {
                pts.extend(spec.breakpoints().into_iter().map(|b| vec![b]));
            }
            pts
        }
    }
}

/// Draws `n` points from the optimal density by rejection from the uniform law on the support.
pub fn sample_density<R: Rng + ?Sized>(
    sol: &MaxEntSolution,
    spec: &MomentSpec,
    cfg: &QuadratureConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if !sol.is_converged() || !sol.gamma.is_finite() {
        return Err(Error::Infeasible("density is not available".into()));
    }
    let theta = sol.dual.theta();
    let rule = spec.rule(cfg, cfg.qmc_points.min(1 << 14));
    let mut envelope = f64::NEG_INFINITY;
    for i in 0..rule.len() {
        envelope = envelope.max(log_density(sol, spec, &theta, rule.point(i)));
    }
    for p in corners(spec) {
        envelope = envelope.max(log_density(sol, spec, &theta, &p));
    }
    envelope += 0.05;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = match &spec.support {
            Support::Interval { lo, hi } => DVector::from_element(1, rng.random_range(*lo..*hi)),
            Support::Zonotope(zd) => zd.sample_uniform(rng),
        };
        let lp = log_density(sol, spec, &theta, s.as_slice());
        if lp > envelope {
            envelope = lp + 0.05;
        }
        if rng.random::<f64>().ln() < lp - envelope {
            out.push(s);
        }
    }
    Ok(out)
}

/// Deterministic map from output points to inputs achieving a given mean.
///
/// `φ(s) = (τ f_min(s) + (1 − τ) f_max(s)) v_tail + V₁ diag(σ)⁻¹ s` with `τ`
/// chosen so that the mean of `φ(S)` equals `α`.
#[derive(Debug, Clone)]
pub struct SignalingMap {
    pub tau: f64,
    fiber: FiberMap,
}

impl SignalingMap {
    pub fn map(&self, s: &DVector<f64>) -> DVector<f64> {
        let lo = self.fiber.f_min_raw(s.as_slice());
        let hi = self.fiber.tail_sum - self.fiber.f_min_reflected_raw(s.as_slice());
        let lambda = self.tau * lo + (1.0 - self.tau) * hi;
        // rounding can leave a coordinate a few ulps outside the cube
        (&self.fiber.v_tail * lambda + self.fiber.base_point(s)).map(|v| v.clamp(0.0, 1.0))
    }

    pub fn map_all(&self, samples: &[DVector<f64>]) -> Vec<DVector<f64>> {
        samples.iter().map(|s| self.map(s)).collect()
    }
}

/// Builds the map for an equal-cost solution produced by [`gamma_e`].
pub fn signaling_map(
    rc: &ReducedChannel,
    alpha: &IntensityProfile,
    sol: &MaxEntSolution,
    cfg: &QuadratureConfig,
) -> Result<SignalingMap> {
    require_tail(rc)?;
    check_len(rc, alpha)?;
    if sol.status != SolveStatus::Converged {
        return Err(Error::Infeasible("signaling needs a converged equal-cost solution".into()));
    }
    let spec = ec_spec(rc, alpha.alpha())?;
    let stats = Stats::build(&spec, &spec.rule(cfg, cfg.qmc_points));
    let (_, mean, _) = stats.moments(sol.dual.theta().as_slice());
    let fiber = spec.fiber.clone().expect("fiber present");
    let e_min = mean[rc.r];
    let e_max = fiber.tail_sum - mean[rc.r + 1];
    let target = fiber.v_tail.dot(&alpha.as_vector());
    let tau = if (e_max - e_min).abs() <= 1e-12 { 1.0 } else { (e_max - target) / (e_max - e_min) };
    if !(-1e-6..=1.0 + 1e-6).contains(&tau) {
        return Err(Error::Infeasible(format!("mixing weight {tau} outside [0, 1]")));
    }
    Ok(SignalingMap { tau: tau.clamp(0.0, 1.0), fiber })
}
