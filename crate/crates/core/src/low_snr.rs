//! Low-SNR slopes.
//!
//! At low SNR the capacity behaves like half the largest trace of the
//! output covariance. With `G = HᵀH` and average intensities `x`, the
//! largest trace is `V(x) = Σ_ij g_ij (min(x_i, x_j) − x_i x_j)`, attained by
//! the comonotone binary input. The bounded-cost slope maximizes `V` over
//! `0 ⪯ x ⪯ α`; the ladder `x = min(β1, α)` is a one-parameter restriction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::maxent::solver::{minimize, Bounds, Objective, Options};
use crate::maxent::SolveStatus;
use crate::{Error, Result};

fn check(g: &DMatrix<f64>, x: &[f64]) -> Result<()> {
    if !g.is_square() {
        return Err(Error::InvalidArgument("Gram matrix must be square".into()));
    }
    if g.nrows() != x.len() {
        return Err(Error::DimensionMismatch { expected: g.nrows(), found: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("intensity vector"));
    }
    Ok(())
}

/// Largest output-covariance trace with per-antenna means `alpha`.
pub fn v_max_ec(g: &DMatrix<f64>, alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut v = 0.0;
    for i in 0..n {
        for j in 0..n {
            v += g[(i, j)] * (alpha[i].min(alpha[j]) - alpha[i] * alpha[j]);
        }
    }
    v
}

/// The comonotone `{0,1}ⁿ` law: mass `α_k − α_{k+1}` on the first `k` unit vectors summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxCorrBinary {
    pub points: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl MaxCorrBinary {
    pub fn mean(&self) -> Vec<f64> {
        let n = self.points[0].len();
        (0..n).map(|i| self.points.iter().zip(&self.probs).map(|(p, w)| w * p[i]).sum()).collect()
    }

    /// Trace of the covariance of `H X`, given `G = HᵀH`.
    pub fn output_trace(&self, g: &DMatrix<f64>) -> f64 {
        let mean = DVector::from_vec(self.mean());
        let mut second = 0.0;
        for (p, w) in self.points.iter().zip(&self.probs) {
            let x = DVector::from_column_slice(p);
            second += w * (x.transpose() * g * &x)[(0, 0)];
        }
        second - (mean.transpose() * g * &mean)[(0, 0)]
    }
}

/// Requires `alpha` in non-increasing order.
pub fn max_corr_binary(alpha: &[f64]) -> Result<MaxCorrBinary> {
    let n = alpha.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty profile".into()));
    }
    if alpha.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Unsorted);
    }
    if let Some((index, &value)) = alpha.iter().enumerate().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
        return Err(Error::AlphaOutOfRange { index, value });
    }
    let mut points = Vec::with_capacity(n + 1);
    let mut probs = Vec::with_capacity(n + 1);
    for k in 0..=n {
        points.push((0..n).map(|i| if i < k { 1.0 } else { 0.0 }).collect());
        let upper = if k == 0 { 1.0 } else { alpha[k - 1] };
        let lower = if k == n { 0.0 } else { alpha[k] };
        probs.push(upper - lower);
    }
    Ok(MaxCorrBinary { points, probs })
}

/// `f₀(x) = −V(x)` and a subgradient; ties `x_i = x_j` split the `min` derivative evenly.
pub fn f0_subgradient(g: &DMatrix<f64>, x: &[f64]) -> Result<(f64, DVector<f64>)> {
    check(g, x)?;
    let n = x.len();
    let mut grad = DVector::zeros(n);
    for k in 0..n {
        let mut d = g[(k, k)];
        for j in 0..n {
            if j != k {
                let share = if x[k] < x[j] {
                    1.0
                } else if x[k] == x[j] {
                    0.5
                } else {
                    0.0
                };
                d += 2.0 * g[(k, j)] * share;
            }
            d -= 2.0 * g[(k, j)] * x[j];
        }
        grad[k] = -d;
    }
    Ok((-v_max_ec(g, x), grad))
}

/// Result of the bounded-cost allocation problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub x: Vec<f64>,
    /// `V(x)`, twice the low-SNR slope.
    pub value: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// `−V` with `min(a, b)` replaced by `(a + b − √((a − b)² + μ²))/2`.
struct SmoothedTrace<'a> {
    g: &'a DMatrix<f64>,
    mu: f64,
}

impl Objective for SmoothedTrace<'_> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let n = x.len();
        let mut v = 0.0;
        for i in 0..n {
            v += self.g[(i, i)] * (x[i] - x[i] * x[i]);
            for j in i + 1..n {
                let d = x[i] - x[j];
                let m = 0.5 * (x[i] + x[j] - (d * d + self.mu * self.mu).sqrt());
                v += 2.0 * self.g[(i, j)] * (m - x[i] * x[j]);
            }
        }
        -v
    }

    fn value_grad_hess(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            grad[i] -= self.g[(i, i)] * (1.0 - 2.0 * x[i]);
            hess[(i, i)] += 2.0 * self.g[(i, i)];
            for j in i + 1..n {
                let gij = 2.0 * self.g[(i, j)];
                let d = x[i] - x[j];
                let root = (d * d + self.mu * self.mu).sqrt();
                let dm = d / root;
                grad[i] -= gij * (0.5 * (1.0 - dm) - x[j]);
                grad[j] -= gij * (0.5 * (1.0 + dm) - x[i]);
                let curv = gij * 0.5 * self.mu * self.mu / (root * root * root);
                hess[(i, i)] += curv;
                hess[(j, j)] += curv;
                hess[(i, j)] += gij - curv;
                hess[(j, i)] += gij - curv;
            }
        }
        (self.value(x), grad, hess)
    }
}

/// Projected subgradient ascent with Polyak-type steps, used when the smoothed solve stalls.
fn subgradient_polish(g: &DMatrix<f64>, lo: &[f64], hi: &[f64], start: Vec<f64>) -> (Vec<f64>, f64, usize) {
    let n = start.len();
    let mut x = start;
    let mut best = (x.clone(), v_max_ec(g, &x));
    let mut estimate = best.1 + 1e-3 * (1.0 + best.1);
    let mut iter = 0;
    let mut stagnant = 0;
    while iter < 50_000 && stagnant < 2_000 {
        iter += 1;
        let (f, sg) = f0_subgradient(g, &x).expect("dimensions checked");
        let norm2 = sg.norm_squared();
        if norm2 == 0.0 {
            break;
        }
        let step = (estimate + f).max(1e-12) / norm2;
        for i in 0..n {
            x[i] = (x[i] - step * sg[i]).clamp(lo[i], hi[i]);
        }
        let v = v_max_ec(g, &x);
        if v > best.1 + 1e-15 {
            best = (x.clone(), v);
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        if stagnant > 0 && stagnant % 200 == 0 {
            estimate = 0.5 * (estimate + best.1);
        }
    }
    (best.0, best.1, iter)
}

/// Maximizes `V` over `0 ⪯ x ⪯ α`.
///
/// When `min α ≥ 1/2` the answer is `½·1`. Otherwise the maximizer lies in
/// `[min α, ½]ⁿ ∩ [0, α]` and the antenna with the smallest `α` sits at its
/// bound, so the search runs over that narrowed box.
pub fn solve_bc_allocation(g: &DMatrix<f64>, alpha: &[f64]) -> Result<Allocation> {
    check(g, alpha)?;
    if let Some((index, &value)) = alpha.iter().enumerate().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
        return Err(Error::AlphaOutOfRange { index, value });
    }
    let n = alpha.len();
    let (pin, &a_min) = alpha
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .ok_or_else(|| Error::InvalidArgument("empty profile".into()))?;
    if a_min >= 0.5 {
        let x = vec![0.5; n];
        return Ok(Allocation { value: v_max_ec(g, &x), x, iterations: 0, status: SolveStatus::Converged });
    }
    let lo: Vec<f64> = (0..n).map(|_| a_min).collect();
    let mut hi: Vec<f64> = alpha.iter().map(|a| a.min(0.5)).collect();
    hi[pin] = a_min;

    // warm start from the best ladder point, which already lies in the box
    let (beta, _) = ladder_best_beta(g, alpha)?;
    let start: Vec<f64> = (0..n).map(|i| beta.min(alpha[i]).clamp(lo[i], hi[i])).collect();
    let bounds = Bounds { lo: lo.clone(), hi: hi.clone() };
    let mut x = DVector::from_vec(start.clone());
    let mut iterations = 0;
    let mut status = SolveStatus::Converged;
    let mut mu = 1e-1;
    while mu >= 1e-10 {
        let out = minimize(&SmoothedTrace { g, mu }, x, &bounds, &Options { max_iter: 200, ..Options::default() });
        x = out.x;
        iterations += out.iterations;
        if out.status != SolveStatus::Converged {
            status = out.status;
        }
        mu *= 0.1;
    }
    let mut xs: Vec<f64> = x.iter().copied().collect();
    let mut value = v_max_ec(g, &xs);
    if status != SolveStatus::Converged {
        let (xp, vp, it) = subgradient_polish(g, &lo, &hi, xs.clone());
        iterations += it;
        if vp >= value {
            xs = xp;
            value = vp;
        }
        status = SolveStatus::Converged;
    }
    let ladder_value = v_max_ec(g, &start);
    if ladder_value > value {
        xs = start;
        value = ladder_value;
    }
    Ok(Allocation { x: xs, value, iterations, status })
}

/// Best ladder allocation `min(β1, α)` for `β ∈ [min α, min(max α, ½)]`.
///
/// `V(min(β1, α))` is quadratic in `β` between consecutive distinct `α`
/// values, so each interval contributes its endpoints and its vertex.
pub fn ladder_best_beta(g: &DMatrix<f64>, alpha: &[f64]) -> Result<(f64, f64)> {
    check(g, alpha)?;
    let a_min = alpha.iter().copied().fold(f64::INFINITY, f64::min);
    let a_max = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let top = a_max.min(0.5);
    let lo = a_min.min(top);
    let ladder = |b: f64| -> f64 {
        let x: Vec<f64> = alpha.iter().map(|&a| b.min(a)).collect();
        v_max_ec(g, &x)
    };
    let mut knots: Vec<f64> = alpha.iter().copied().filter(|&a| a > lo && a < top).collect();
    knots.push(lo);
    knots.push(top);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut best = (lo, ladder(lo));
    let mut consider = |b: f64| {
        let v = ladder(b);
        if v > best.1 {
            best = (b, v);
        }
    };
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        consider(b);
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (ladder(a), ladder(m), ladder(b));
        let h = 0.5 * (b - a);
        let curv = fa - 2.0 * fm + fb;
        if curv < 0.0 {
            let vertex = m - h * (fb - fa) / (2.0 * curv);
            if vertex > a && vertex < b {
                consider(vertex);
            }
        }
    }
    Ok(best)
}

/// Ladder value over the optimal bounded-cost value.
pub fn ratio_rl(g: &DMatrix<f64>, alpha: &[f64]) -> Result<f64> {
    let (_, ladder) = ladder_best_beta(g, alpha)?;
    let opt = solve_bc_allocation(g, alpha)?;
    if opt.value <= 1e-15 {
        return Err(Error::InvalidArgument("optimal trace is zero; the ratio is undefined".into()));
    }
    Ok(ladder / opt.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(rows: &[&[f64]]) -> DMatrix<f64> {
        let n_r = rows.len();
        let n_t = rows[0].len();
        let h = DMatrix::from_fn(n_r, n_t, |r, c| rows[r][c]);
        h.transpose() * h
    }

    #[test]
    fn trace_examples() {
        let g = gram(&[&[0.65, 0.35]]);
        assert!((v_max_ec(&g, &[0.9, 0.2]) - 0.066725).abs() < 1e-15);
        assert_eq!(v_max_ec(&g, &[0.0, 0.0]), 0.0);
        assert!(v_max_ec(&g, &[1.0, 1.0]).abs() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert!((v_max_ec(&d, &[0.5, 0.5, 0.5]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn comonotone_law() {
        let m = max_corr_binary(&[0.9, 0.2]).unwrap();
        assert_eq!(m.points, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        let expected = [0.1, 0.7, 0.2];
        for (p, e) in m.probs.iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
        let g = gram(&[&[0.65, 0.35]]);
        assert!((m.output_trace(&g) - v_max_ec(&g, &[0.9, 0.2])).abs() < 1e-15);
        let ones = max_corr_binary(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(ones.probs[3], 1.0);
        let half = max_corr_binary(&[0.5, 0.5]).unwrap();
        assert_eq!(half.probs, vec![0.5, 0.0, 0.5]);
        assert!(matches!(max_corr_binary(&[0.2, 0.9]), Err(Error::Unsorted)));
    }

    #[test]
    fn subgradient_matches_differences() {
        let g = gram(&[&[0.6, 0.3, 0.9], &[0.2, 0.8, 0.4]]);
        let x = [0.31, 0.12, 0.44];
        let (_, sg) = f0_subgradient(&g, &x).unwrap();
        for k in 0..3 {
            let mut p = x;
            let mut m = x;
            p[k] += 1e-6;
            m[k] -= 1e-6;
            let fd = (-v_max_ec(&g, &p) + v_max_ec(&g, &m)) / 2e-6;
            assert!((fd - sg[k]).abs() < 1e-6);
        }
        let (_, sym) = f0_subgradient(&gram(&[&[1.0, 1.0]]), &[0.3, 0.3]).unwrap();
        assert!((sym[0] - sym[1]).abs() < 1e-15);
    }

    #[test]
    fn allocation_examples() {
        let g = gram(&[&[0.65, 0.35]]);
        let a = solve_bc_allocation(&g, &[0.9, 0.2]).unwrap();
        assert!((a.value - 0.17562).abs() < 1e-5, "{a:?}");
        assert!((a.x[0] - 0.39231).abs() < 1e-4 && (a.x[1] - 0.2).abs() < 1e-15);
        let (beta, v) = ladder_best_beta(&g, &[0.9, 0.2]).unwrap();
        assert!((beta - 0.3315 / 0.845).abs() < 1e-9 && (v - a.value).abs() < 1e-9);

        let high = solve_bc_allocation(&g, &[0.7, 0.6]).unwrap();
        assert_eq!(high.x, vec![0.5, 0.5]);

        let single = solve_bc_allocation(&gram(&[&[2.0]]), &[0.3]).unwrap();
        assert_eq!(single.x, vec![0.3]);
        let single = solve_bc_allocation(&gram(&[&[2.0]]), &[0.8]).unwrap();
        assert_eq!(single.x, vec![0.5]);
    }

    #[test]
    fn rank_one_ratio_is_one() {
        let g = gram(&[&[0.3, 0.5, 0.2], &[0.6, 1.0, 0.4]]);
        let r = ratio_rl(&g, &[0.8, 0.3, 0.1]).unwrap();
        assert!((r - 1.0).abs() < 1e-9, "{r}");
        assert!(ratio_rl(&g, &[0.0, 0.0, 0.0]).is_err());
    }
}
