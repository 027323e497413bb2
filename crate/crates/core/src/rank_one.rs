//! Rank-one channels reduce to a scalar input `S ∈ [0, 1]`.
//!
//! With `H = σ₁ u₁ v₁ᵀ` and `v₁ ⪰ 0`, the output depends on `X` only through
//! `S = v₁ᵀX / 1ᵀv₁`. Listing antennas by non-increasing `α`, the attainable
//! laws of `S` are those with the right mean (equal cost) and stop-loss
//! moments `E(S − c_k)_+ ≤ b_k`, where `c_k` and `b_k` are partial sums of
//! the weights `v₁^{(i)}/1ᵀv₁` and of `v₁^{(i)}α_i/1ᵀv₁`.

use serde::{Deserialize, Serialize};

use crate::channel::{IntensityProfile, ReducedChannel};
use crate::maxent::{self, Cost, MaxEntSolution, Mode, MomentSpec, QuadratureConfig, Support};
use crate::{Error, Result};

const CAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopLoss {
    pub threshold: f64,
    pub cap: f64,
}

/// Constraints on the scalar input of a rank-one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SisoConstraintSet {
    pub kind: Mode,
    /// Required mean (equal cost only).
    pub mean: Option<f64>,
    pub stop_loss: Vec<StopLoss>,
    /// `σ₁·1ᵀv₁`, the gain from `S` to the reduced output.
    pub gain: f64,
}

/// Leading right-singular vector in descending-`α` order, with the matching `α`.
fn sorted_weights(rc: &ReducedChannel, alpha: &IntensityProfile) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if rc.r != 1 {
        return Err(Error::RankMismatch { expected: 1, found: rc.r });
    }
    if alpha.len() != rc.n_t() {
        return Err(Error::DimensionMismatch { expected: rc.n_t(), found: alpha.len() });
    }
    let v = rc.v1.column(0);
    let scale = v.amax();
    if v.iter().any(|&x| x < -1e-12 * scale) {
        return Err(Error::InvalidArgument("leading singular vector has negative entries".into()));
    }
    let total: f64 = v.iter().map(|x| x.max(0.0)).sum();
    let order = alpha.order_perm();
    let w = order.iter().map(|&i| v[i].max(0.0) / total).collect();
    let a = order.iter().map(|&i| alpha.alpha()[i]).collect();
    Ok((w, a, rc.sigma[0] * total))
}

fn build(w: &[f64], a: &[f64], first: usize, kind: Mode, gain: f64) -> SisoConstraintSet {
    let n = w.len();
    let mean: f64 = w.iter().zip(a).map(|(x, y)| x * y).sum();
    let mut stop_loss: Vec<StopLoss> = Vec::new();
    for k in first..n {
        let threshold: f64 = w[..k].iter().sum();
        let cap: f64 = w[k..].iter().zip(&a[k..]).map(|(x, y)| x * y).sum();
        // zero weights repeat a threshold; keep the tighter cap
        match stop_loss.last_mut() {
            Some(last) if (last.threshold - threshold).abs() <= 1e-14 => last.cap = last.cap.min(cap),
            _ => stop_loss.push(StopLoss { threshold, cap }),
        }
    }
    stop_loss.retain(|c| c.threshold < 1.0 - 1e-14);
    SisoConstraintSet { kind, mean: (kind == Mode::Ec).then_some(mean), stop_loss, gain }
}

/// Equal-cost constraints: the mean and caps for `k = 1, …, n_t − 1`.
pub fn ec_constraints(rc: &ReducedChannel, alpha: &IntensityProfile) -> Result<SisoConstraintSet> {
    let (w, a, gain) = sorted_weights(rc, alpha)?;
    Ok(build(&w, &a, 1, Mode::Ec, gain))
}

/// Bounded-cost constraints: caps for `k = 0, …, n_t − 1`, the first bounding the mean.
pub fn bc_constraints(rc: &ReducedChannel, alpha: &IntensityProfile) -> Result<SisoConstraintSet> {
    let (w, a, gain) = sorted_weights(rc, alpha)?;
    Ok(build(&w, &a, 0, Mode::Bc, gain))
}

pub fn constraints(rc: &ReducedChannel, alpha: &IntensityProfile, mode: Mode) -> Result<SisoConstraintSet> {
    match mode {
        Mode::Ec => ec_constraints(rc, alpha),
        Mode::Bc => bc_constraints(rc, alpha),
    }
}

/// `Σ p_i (s_i − c)_+` over `(s_i, p_i)` pairs.
pub fn stop_loss(dist: &[(f64, f64)], c: f64) -> f64 {
    dist.iter().map(|&(s, p)| p * (s - c).max(0.0)).sum()
}

/// Moment problem on `[0, 1]`, or `None` when the constraints force a point mass.
///
/// A cap of zero confines `S` below its threshold; under equal cost a cap
/// equal to `mean − c` confines `S` above it. Such constraints shrink the
/// support instead of entering the dual.
pub fn siso_spec(cs: &SisoConstraintSet) -> Result<Option<MomentSpec>> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut kept = Vec::new();
    for c in &cs.stop_loss {
        if c.cap < -CAP_TOL {
            return Err(Error::Infeasible(format!("negative cap {}", c.cap)));
        }
        if c.cap <= CAP_TOL {
            hi = hi.min(c.threshold);
            continue;
        }
        if let Some(m) = cs.mean {
            if m - c.threshold >= c.cap - CAP_TOL {
                lo = lo.max(c.threshold);
                continue;
            }
        }
        kept.push(c.clone());
    }
    if hi - lo <= CAP_TOL {
        return Ok(None);
    }
    let equalities = match cs.mean {
        Some(m) if m <= lo + CAP_TOL || m >= hi - CAP_TOL => return Ok(None),
        Some(m) => vec![Cost::Affine { a: vec![1.0], c: m }],
        None => Vec::new(),
    };
    let inequalities =
        kept.into_iter().map(|c| Cost::StopLoss { threshold: c.threshold, cap: c.cap }).collect();
    MomentSpec::new(Support::Interval { lo, hi }, equalities, inequalities, None).map(Some)
}

/// Largest entropy of the scalar input.
pub fn gamma_siso(cs: &SisoConstraintSet, cfg: &QuadratureConfig) -> Result<MaxEntSolution> {
    match siso_spec(cs)? {
        Some(spec) => maxent::solve_gamma_star(&spec, cfg),
        None => {
            let mut sol = MaxEntSolution::closed_form(f64::NEG_INFINITY, None);
            sol.status = maxent::SolveStatus::Degenerate;
            Ok(sol)
        }
    }
}

/// Entropy of the reduced output `σ₁·1ᵀv₁·S`, comparable with [`maxent::gamma_e`] and [`maxent::gamma_b`].
pub fn gamma_rank_one(
    rc: &ReducedChannel,
    alpha: &IntensityProfile,
    mode: Mode,
    cfg: &QuadratureConfig,
) -> Result<MaxEntSolution> {
    let cs = constraints(rc, alpha, mode)?;
    let mut sol = gamma_siso(&cs, cfg)?;
    sol.gamma += cs.gain.ln();
    sol.dual.nu = -sol.gamma;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{reduce, ChannelMatrix, DEFAULT_RANK_TOL};

    fn setup(rows: &[Vec<f64>], alpha: &[f64]) -> (ReducedChannel, IntensityProfile) {
        let h = ChannelMatrix::from_rows(rows).unwrap();
        (reduce(&h, DEFAULT_RANK_TOL).unwrap(), IntensityProfile::new(alpha.to_vec()).unwrap())
    }

    #[test]
    fn single_antenna_has_only_a_mean() {
        let (rc, alpha) = setup(&[vec![0.8]], &[0.3]);
        let cs = ec_constraints(&rc, &alpha).unwrap();
        assert!(cs.stop_loss.is_empty());
        assert!((cs.mean.unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn two_antenna_arithmetic() {
        let (rc, alpha) = setup(&[vec![0.65, 0.35]], &[0.9, 0.2]);
        let cs = ec_constraints(&rc, &alpha).unwrap();
        assert!((cs.mean.unwrap() - 0.655).abs() < 1e-14);
        assert_eq!(cs.stop_loss.len(), 1);
        assert!((cs.stop_loss[0].threshold - 0.65).abs() < 1e-14);
        assert!((cs.stop_loss[0].cap - 0.07).abs() < 1e-14);
        assert!((cs.gain - 1.0).abs() < 1e-14);

        let (rc, alpha) = setup(&[vec![0.25, 0.75]], &[0.2, 0.1]);
        let cs = bc_constraints(&rc, &alpha).unwrap();
        assert_eq!(cs.mean, None);
        assert!((cs.stop_loss[0].threshold).abs() < 1e-15);
        assert!((cs.stop_loss[0].cap - 0.125).abs() < 1e-14);
        assert!((cs.stop_loss[1].threshold - 0.25).abs() < 1e-14);
        assert!((cs.stop_loss[1].cap - 0.075).abs() < 1e-14);
    }

    #[test]
    fn full_intensity_is_a_point_mass() {
        let (rc, alpha) = setup(&[vec![0.65, 0.35]], &[1.0, 1.0]);
        let cs = ec_constraints(&rc, &alpha).unwrap();
        assert!((cs.mean.unwrap() - 1.0).abs() < 1e-15);
        let sol = gamma_siso(&cs, &QuadratureConfig::default()).unwrap();
        assert_eq!(sol.gamma, f64::NEG_INFINITY);
    }

    #[test]
    fn duplicate_thresholds_merge() {
        let (rc, alpha) = setup(&[vec![0.5, 0.0, 0.5]], &[0.9, 0.5, 0.1]);
        let cs = ec_constraints(&rc, &alpha).unwrap();
        assert_eq!(cs.stop_loss.len(), 1);
        assert!((cs.stop_loss[0].threshold - 0.5).abs() < 1e-14);
        assert!((cs.stop_loss[0].cap - 0.05).abs() < 1e-14);
    }

    #[test]
    fn stop_loss_examples() {
        assert!((stop_loss(&[(1.0, 1.0)], 0.25) - 0.75).abs() < 1e-15);
        let grid: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64 / 10.0, 1.0 / 11.0)).collect();
        assert!((stop_loss(&grid, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unconstrained_scalar() {
        let cs = SisoConstraintSet { kind: Mode::Bc, mean: None, stop_loss: vec![], gain: 1.0 };
        assert!(gamma_siso(&cs, &QuadratureConfig::default()).unwrap().gamma.abs() < 1e-14);
    }
}
