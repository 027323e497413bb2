//! Channel representation and SVD-based reduction.
//!
//! A nonnegative gain matrix `H` (`n_r × n_t`) is decomposed as
//! `H = U B Vᵀ`. Dropping the zero rows of `Uᵀ Y` leaves the full-row-rank
//! model `Ỹ = H̃ X + Z̃` with `H̃ = diag(σ₁, …, σ_r) V₁ᵀ`. The right-singular
//! vectors are sign-fixed so that `1ᵀv₁ > 0`; every other pair is fixed by
//! the same rule so the reduction is deterministic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default relative threshold `σ_i / σ₁` below which a singular value counts as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// `α_i` within this distance of 0 or 1 is treated as a deterministic antenna.
pub const DEGENERATE_ALPHA_TOL: f64 = 1e-12;

const SIGN_TOL: f64 = 1e-12;

/// Nonnegative channel gain matrix, rows are receivers and columns transmitters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    h: DMatrix<f64>,
}

impl ChannelMatrix {
    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::InvalidArgument("empty channel matrix".into()));
        }
        for c in 0..h.ncols() {
            for r in 0..h.nrows() {
                let v = h[(r, c)];
                if !v.is_finite() {
                    return Err(Error::NonFinite("channel matrix"));
                }
                if v < 0.0 {
                    return Err(Error::NegativeGain { row: r, col: c, value: v });
                }
            }
        }
        if h.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroChannel);
        }
        Ok(Self { h })
    }

    /// Builds a matrix from row-major nested vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_r = rows.len();
        let n_t = rows.first().map_or(0, Vec::len);
        for row in rows {
            if row.len() != n_t {
                return Err(Error::DimensionMismatch { expected: n_t, found: row.len() });
            }
        }
        Self::new(DMatrix::from_fn(n_r, n_t, |r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn n_r(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.h.ncols()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_r()).map(|r| self.h.row(r).iter().copied().collect()).collect()
    }

    /// Gram matrix `HᵀH`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.h.transpose() * &self.h
    }
}

/// Per-antenna ratio of average to peak intensity.
///
/// `alpha` is kept in the caller's antenna order; `order` is the stable
/// permutation that lists antennas by non-increasing `α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityProfile {
    alpha: Vec<f64>,
    order: Vec<usize>,
}

impl IntensityProfile {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        for (index, &value) in alpha.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite("alpha"));
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::AlphaOutOfRange { index, value });
            }
        }
        let mut order: Vec<usize> = (0..alpha.len()).collect();
        order.sort_by(|&a, &b| alpha[b].total_cmp(&alpha[a]));
        Ok(Self { alpha, order })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Permutation with `alpha[order[0]] ≥ alpha[order[1]] ≥ …`.
    pub fn order_perm(&self) -> &[usize] {
        &self.order
    }

    pub fn sorted(&self) -> Vec<f64> {
        self.order.iter().map(|&i| self.alpha[i]).collect()
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.alpha)
    }

    /// Antennas whose input is deterministic under equal-cost constraints.
    pub fn degenerate(&self) -> Vec<usize> {
        self.alpha
            .iter()
            .enumerate()
            .filter(|(_, &a)| a <= DEGENERATE_ALPHA_TOL || a >= 1.0 - DEGENERATE_ALPHA_TOL)
            .map(|(i, _)| i)
            .collect()
    }
}

/// AWGN standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() {
            return Err(Error::NonFinite("noise level"));
        }
        if sigma <= 0.0 {
            return Err(Error::InvalidArgument(format!("noise level must be positive, got {sigma}")));
        }
        Ok(Self(sigma))
    }

    pub fn sigma(self) -> f64 {
        self.0
    }
}

/// A channel matrix paired with an intensity profile of matching length.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedChannel {
    pub h: ChannelMatrix,
    pub alpha: IntensityProfile,
}

pub fn validate(h: DMatrix<f64>, alpha: Vec<f64>) -> Result<ValidatedChannel> {
    let h = ChannelMatrix::new(h)?;
    if alpha.len() != h.n_t() {
        return Err(Error::DimensionMismatch { expected: h.n_t(), found: alpha.len() });
    }
    let alpha = IntensityProfile::new(alpha)?;
    Ok(ValidatedChannel { h, alpha })
}

/// Output of [`reduce`].
#[derive(Debug, Clone)]
pub struct ReducedChannel {
    /// Numerical rank.
    pub r: usize,
    /// Nonzero singular values, descending.
    pub sigma: DVector<f64>,
    /// All `min(n_r, n_t)` singular values, descending, including the ones cut by the rank test.
    pub all_singular_values: DVector<f64>,
    /// First `r` right-singular vectors (`n_t × r`).
    pub v1: DMatrix<f64>,
    /// Last right-singular vector, only when `r = n_t − 1`.
    pub v_tail: Option<DVector<f64>>,
    /// Full orthogonal `V` (`n_t × n_t`).
    pub v: DMatrix<f64>,
    /// `diag(σ) V₁ᵀ`, an `r × n_t` matrix of full row rank.
    pub h_tilde: DMatrix<f64>,
    /// Orthogonal `n_r × n_r` output rotation.
    pub u: DMatrix<f64>,
}

impl ReducedChannel {
    pub fn n_t(&self) -> usize {
        self.v.nrows()
    }

    pub fn n_r(&self) -> usize {
        self.u.nrows()
    }

    /// `H̃·1`, the far corner of the admissible region.
    pub fn corner(&self) -> DVector<f64> {
        self.h_tilde.column_sum()
    }

    /// `U [H̃; 0]`, which should reproduce the original matrix.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut padded = DMatrix::zeros(self.n_r(), self.n_t());
        padded.rows_mut(0, self.r).copy_from(&self.h_tilde);
        &self.u * padded
    }
}

fn orient(v: &mut DVector<f64>) -> bool {
    let s = v.sum();
    let flip = if s.abs() > SIGN_TOL {
        s < 0.0
    } else {
        v.iter().find(|x| x.abs() > SIGN_TOL).is_some_and(|&x| x < 0.0)
    };
    if flip {
        v.neg_mut();
    }
    flip
}

/// Completes `cols` (orthonormal, `n × k`) to an orthonormal basis of `Rⁿ`.
fn complete_basis(cols: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut basis: Vec<DVector<f64>> = (0..cols.ncols()).map(|j| cols.column(j).into_owned()).collect();
    for e in 0..n {
        if basis.len() == n {
            break;
        }
        let mut cand = DVector::zeros(n);
        cand[e] = 1.0;
        // two passes of Gram-Schmidt for stability
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&cand);
                cand.axpy(-d, b, 1.0);
            }
        }
        let norm = cand.norm();
        if norm > 1e-8 {
            basis.push(cand / norm);
        }
    }
    DMatrix::from_columns(&basis)
}

/// Singular values of `H` in descending order.
pub fn singular_values(h: &ChannelMatrix) -> DVector<f64> {
    let mut s: Vec<f64> = h.matrix().clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(s)
}

/// SVD reduction to a full-row-rank channel.
pub fn reduce(h: &ChannelMatrix, rank_tol: f64) -> Result<ReducedChannel> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::InvalidArgument(format!("rank_tol must lie in (0, 1), got {rank_tol}")));
    }
    let (n_r, n_t) = (h.n_r(), h.n_t());
    let rows = n_r.max(n_t);
    let mut padded = DMatrix::zeros(rows, n_t);
    padded.rows_mut(0, n_r).copy_from(h.matrix());
    let svd = padded.svd(true, true);
    let u_full = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v requested");

    let mut idx: Vec<usize> = (0..n_t).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let s1 = sv[0];
    if s1 <= 0.0 {
        return Err(Error::ZeroChannel);
    }
    let r = sv.iter().take_while(|&&s| s / s1 > rank_tol).count();

    let mut v_cols = Vec::with_capacity(n_t);
    let mut u_cols = Vec::with_capacity(r);
    for (k, &i) in idx.iter().enumerate() {
        let mut v = v_t.row(i).transpose();
        if k < r {
            let mut u = u_full.column(i).rows(0, n_r).into_owned();
            if k == 0 && v.sum().abs() <= SIGN_TOL {
                return Err(Error::AmbiguousSign(v.sum()));
            }
            if orient(&mut v) {
                u.neg_mut();
            }
            u_cols.push(u);
        } else {
            orient(&mut v);
        }
        v_cols.push(v);
    }
    let v = DMatrix::from_columns(&v_cols);
    let v1 = v.columns(0, r).into_owned();
    let sigma = DVector::from_column_slice(&sv[..r]);
    let h_tilde = DMatrix::from_diagonal(&sigma) * v1.transpose();
    let u = complete_basis(&DMatrix::from_columns(&u_cols), n_r);
    let v_tail = (r + 1 == n_t).then(|| v.column(n_t - 1).into_owned());
    let k = n_r.min(n_t);
    Ok(ReducedChannel {
        r,
        sigma,
        all_singular_values: DVector::from_column_slice(&sv[..k]),
        v1,
        v_tail,
        v,
        h_tilde,
        u,
    })
}

/// Smallest `i` whose leading squared singular values reach fraction `eps` of the total energy.
pub fn epsilon_rank_from_singular_values(sigma: &[f64], eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {eps}")));
    }
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return Err(Error::ZeroChannel);
    }
    let mut acc = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        acc += s * s;
        // relative slack absorbs rounding in the cumulative sum
        if acc / total >= eps - 1e-12 {
            return Ok(i + 1);
        }
    }
    Ok(sigma.len())
}

pub fn epsilon_rank(h: &ChannelMatrix, eps: f64) -> Result<usize> {
    let rc = reduce(h, DEFAULT_RANK_TOL)?;
    epsilon_rank_from_singular_values(rc.sigma.as_slice(), eps)
}

/// Fraction of energy carried by the leading singular value.
pub fn rank_one_energy_ratio(h: &ChannelMatrix) -> f64 {
    let s = singular_values(h);
    let total: f64 = s.iter().map(|x| x * x).sum();
    s[0] * s[0] / total
}

/// `H = w bᵀ` with both factors nonnegative and `b ∝ v₁`.
///
/// The scaling puts the first non-negligible entry of `w` at 1, so `b` equals
/// the first nonzero row of `H`.
pub fn rank_one_factorization(h: &ChannelMatrix) -> Result<(DVector<f64>, DVector<f64>)> {
    let rc = reduce(h, DEFAULT_RANK_TOL)?;
    if rc.r != 1 {
        return Err(Error::RankMismatch { expected: 1, found: rc.r });
    }
    let mut w = rc.u.column(0) * rc.sigma[0];
    let mut b = rc.v1.column(0).into_owned();
    let wmax = w.amax();
    let pivot = w.iter().copied().find(|x| x.abs() > 1e-9 * wmax).unwrap_or(1.0);
    w /= pivot;
    b *= pivot;
    let clean = |x: &mut f64, scale: f64| {
        if *x < 0.0 && *x > -1e-12 * scale {
            *x = 0.0;
        }
    };
    let ws = w.amax();
    let bs = b.amax();
    w.iter_mut().for_each(|x| clean(x, ws));
    b.iter_mut().for_each(|x| clean(x, bs));
    Ok((w, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> ChannelMatrix {
        ChannelMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn validate_accepts_sorted_profile() {
        let v = validate(DMatrix::from_row_slice(1, 2, &[0.65, 0.35]), vec![0.9, 0.2]).unwrap();
        assert_eq!(v.alpha.order_perm(), &[0, 1]);
    }

    #[test]
    fn validate_accepts_zero_profile() {
        let v = validate(DMatrix::identity(2, 2), vec![0.0, 0.0]).unwrap();
        assert_eq!(v.alpha.degenerate(), vec![0, 1]);
    }

    #[test]
    fn validate_rejects_bad_inputs() {
        let neg = validate(DMatrix::from_row_slice(1, 2, &[-0.1, 0.5]), vec![0.5, 0.5]);
        assert!(matches!(neg, Err(Error::NegativeGain { .. })));
        let nan = validate(DMatrix::from_row_slice(1, 2, &[f64::NAN, 0.5]), vec![0.5, 0.5]);
        assert!(matches!(nan, Err(Error::NonFinite(_))));
        let zero = validate(DMatrix::zeros(2, 2), vec![0.5, 0.5]);
        assert!(matches!(zero, Err(Error::ZeroChannel)));
        let alpha = validate(DMatrix::identity(2, 2), vec![1.5, 0.5]);
        assert!(matches!(alpha, Err(Error::AlphaOutOfRange { index: 0, .. })));
        let dims = validate(DMatrix::identity(2, 2), vec![0.5]);
        assert!(matches!(dims, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn order_perm_sorts_descending() {
        let p = IntensityProfile::new(vec![0.1, 0.7, 0.3, 0.7]).unwrap();
        assert_eq!(p.order_perm(), &[1, 3, 2, 0]);
        assert_eq!(p.sorted(), vec![0.7, 0.7, 0.3, 0.1]);
    }

    #[test]
    fn reduce_single_row() {
        let rc = reduce(&mat(&[&[0.65, 0.35]]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(rc.r, 1);
        assert!((rc.sigma[0] - 0.545f64.sqrt()).abs() < 1e-14);
        let v = rc.v1.column(0);
        assert!((v[0] - 0.65 / 0.545f64.sqrt()).abs() < 1e-14);
        assert!((v[1] - 0.35 / 0.545f64.sqrt()).abs() < 1e-14);
        assert!((rc.h_tilde[(0, 0)] - 0.65).abs() < 1e-14);
        assert!(rc.v_tail.is_some());
    }

    #[test]
    fn reduce_identity() {
        let rc = reduce(&mat(&[&[1.0, 0.0], &[0.0, 1.0]]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(rc.r, 2);
        assert!((rc.sigma[0] - 1.0).abs() < 1e-14 && (rc.sigma[1] - 1.0).abs() < 1e-14);
        assert!(rc.v_tail.is_none());
        assert!((rc.reconstruct() - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn reduce_all_ones() {
        let rc = reduce(&mat(&[&[1.0, 1.0], &[1.0, 1.0]]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(rc.r, 1);
        assert!((rc.sigma[0] - 2.0).abs() < 1e-14);
        let s = 0.5f64.sqrt();
        assert!((rc.v1[(0, 0)] - s).abs() < 1e-14 && (rc.v1[(1, 0)] - s).abs() < 1e-14);
        assert!((rc.reconstruct() - DMatrix::from_element(2, 2, 1.0)).norm() < 1e-13);
    }

    #[test]
    fn reduce_checks_rank_tol_and_keeps_zero_columns() {
        let h = mat(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let rc = reduce(&h, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(rc.r, 1);
        assert!(rc.v_tail.unwrap()[1].abs() > 1.0 - 1e-12);
        assert!(reduce(&h, 2.0).is_err());
        assert!(reduce(&h, 0.0).is_err());
    }

    #[test]
    fn epsilon_rank_examples() {
        assert_eq!(epsilon_rank_from_singular_values(&[2.0, 0.0], 0.95).unwrap(), 1);
        assert_eq!(epsilon_rank_from_singular_values(&[3.0, 1.0], 0.9).unwrap(), 1);
        assert_eq!(epsilon_rank_from_singular_values(&[3.0, 1.0], 0.95).unwrap(), 2);
        assert_eq!(epsilon_rank(&mat(&[&[3.0, 0.0], &[0.0, 1.0]]), 1.0).unwrap(), 2);
    }

    #[test]
    fn rank_one_factorization_examples() {
        let (w, b) = rank_one_factorization(&mat(&[&[0.65, 0.35]])).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-14);
        assert!((b[0] - 0.65).abs() < 1e-14 && (b[1] - 0.35).abs() < 1e-14);

        let h = mat(&[&[1.0, 2.0], &[2.0, 4.0]]);
        let (w, b) = rank_one_factorization(&h).unwrap();
        assert!((&w * b.transpose() - h.matrix()).norm() < 1e-13);
        assert!((w[0] - 1.0).abs() < 1e-13 && (w[1] - 2.0).abs() < 1e-13);
        assert!((b[0] - 1.0).abs() < 1e-13 && (b[1] - 2.0).abs() < 1e-13);

        let err = rank_one_factorization(&mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        assert!(matches!(err, Err(Error::RankMismatch { expected: 1, found: 2 })));
    }

    #[test]
    fn noise_level_must_be_positive() {
        assert!(NoiseLevel::new(0.0).is_err());
        assert!(NoiseLevel::new(1e-3).is_ok());
    }
}
