//! The admissible output region `R(H̃) = {H̃x : x ∈ [0,1]^{n_t}}`.
//!
//! The zonotope is tiled by half-open parallelepipeds, one per basis `U`
//! (an independent `r`-subset of columns). The translates come from a
//! regular tiling: lift generator `j` to `(h̃_j, w_j)` with generic heights
//! and project the lower faces of the lifted zonotope. For basis `U` with
//! `C = H̃_U⁻¹ H̃`, generator `j ∉ U` enters the translate iff
//! `Σ_i C_ij w_{U_i} > w_j`.
//!
//! The fiber functions describe the segment of inputs mapping onto a point
//! when `r = n_t − 1`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::ReducedChannel;
use crate::{Error, Result};

/// Largest `n_t` for which subsets are enumerated.
pub const MAX_TRANSMITTERS: usize = 16;

const HEIGHT_SEED: u64 = 0x005e_ed0f_c311;
const ZERO_TAIL: f64 = 1e-13;

/// Half-open cell `{translate + B t : t ∈ [0,1)^r}`.
#[derive(Debug, Clone, Serialize)]
pub struct ParallelepipedCell {
    pub basis: Vec<usize>,
    pub det_abs: f64,
    pub translate: Vec<f64>,
    #[serde(skip)]
    pub matrix: DMatrix<f64>,
    #[serde(skip)]
    pub inverse: DMatrix<f64>,
}

impl ParallelepipedCell {
    pub fn point(&self, t: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&self.translate) + &self.matrix * t
    }

    pub fn local(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.inverse * (s - DVector::from_column_slice(&self.translate))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ZonotopeDecomposition {
    pub cells: Vec<ParallelepipedCell>,
    pub volume: f64,
    /// Columns `h̃_1 … h̃_{n_t}`.
    pub generators: Vec<Vec<f64>>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = k;
        while i > 0 && cur[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for j in i..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

struct Basis {
    index: Vec<usize>,
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    det_abs: f64,
    coords: DMatrix<f64>,
}

fn bases(h: &DMatrix<f64>) -> Vec<Basis> {
    let r = h.nrows();
    let n = h.ncols();
    let norms: Vec<f64> = (0..n).map(|j| h.column(j).norm()).collect();
    let mut out = Vec::new();
    for idx in combinations(n, r) {
        let hadamard: f64 = idx.iter().map(|&j| norms[j]).product();
        if hadamard == 0.0 {
            continue;
        }
        let m = h.select_columns(&idx);
        let det = m.determinant();
        if det.abs() <= 1e-12 * hadamard {
            continue;
        }
        let Some(inverse) = m.clone().try_inverse() else {
            continue;
        };
        let coords = &inverse * h;
        out.push(Basis { index: idx, matrix: m, inverse, det_abs: det.abs(), coords });
    }
    out
}

/// Translate selection for every basis under lifting heights `w`, or `None` on a tie.
fn translates(h: &DMatrix<f64>, bases: &[Basis], w: &[f64]) -> Option<Vec<Vec<usize>>> {
    let n = h.ncols();
    let wmax = w.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut out = Vec::with_capacity(bases.len());
    for b in bases {
        let mut chosen = Vec::new();
        for j in 0..n {
            if b.index.contains(&j) {
                continue;
            }
            let mut lifted = 0.0;
            let mut scale = 0.0;
            for (i, &u) in b.index.iter().enumerate() {
                lifted += b.coords[(i, j)] * w[u];
                scale += b.coords[(i, j)].abs();
            }
            let diff = lifted - w[j];
            if diff.abs() <= 1e-9 * wmax * (1.0 + scale) {
                return None;
            }
            if diff > 0.0 {
                chosen.push(j);
            }
        }
        out.push(chosen);
    }
    Some(out)
}

/// Tiles `R(H̃)` into half-open parallelepipeds.
pub fn decompose(rc: &ReducedChannel) -> Result<ZonotopeDecomposition> {
    decompose_matrix(&rc.h_tilde)
}

/// Same as [`decompose`] for an arbitrary full-row-rank generator matrix.
pub fn decompose_matrix(h: &DMatrix<f64>) -> Result<ZonotopeDecomposition> {
    let (r, n) = (h.nrows(), h.ncols());
    if n > MAX_TRANSMITTERS {
        return Err(Error::TooManyTransmitters { n_t: n, max: MAX_TRANSMITTERS });
    }
    if r == 0 || r > n {
        return Err(Error::InvalidArgument(format!("generator matrix is {r}x{n}")));
    }
    let bases = bases(h);
    if bases.is_empty() {
        return Err(Error::RankMismatch { expected: r, found: r.saturating_sub(1) });
    }
    let mut w: Vec<f64> = (0..n).map(|j| ((j + 1) * (j + 1)) as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(HEIGHT_SEED);
    let mut picks = translates(h, &bases, &w);
    for _ in 0..64 {
        if picks.is_some() {
            break;
        }
        w = (0..n).map(|_| rng.random_range(1.0..2.0)).collect();
        picks = translates(h, &bases, &w);
    }
    let picks = picks.ok_or_else(|| Error::Infeasible("no generic lifting found".into()))?;

    let mut cells = Vec::with_capacity(bases.len());
    let mut cumulative = Vec::with_capacity(bases.len());
    let mut volume = 0.0;
    for (b, chosen) in bases.into_iter().zip(picks) {
        let mut t = DVector::zeros(r);
        for j in chosen {
            t += h.column(j);
        }
        volume += b.det_abs;
        cumulative.push(volume);
        cells.push(ParallelepipedCell {
            basis: b.index,
            det_abs: b.det_abs,
            translate: t.iter().copied().collect(),
            matrix: b.matrix,
            inverse: b.inverse,
        });
    }
    let generators = (0..n).map(|j| h.column(j).iter().copied().collect()).collect();
    Ok(ZonotopeDecomposition { cells, volume, generators, cumulative })
}

impl ZonotopeDecomposition {
    pub fn dim(&self) -> usize {
        self.cells[0].translate.len()
    }

    /// Index of the cell owning `s` and the local coordinates `t ∈ [0,1)^r`.
    pub fn locate(&self, s: &DVector<f64>) -> Option<(usize, DVector<f64>)> {
        self.cells.iter().enumerate().find_map(|(k, c)| {
            let t = c.local(s);
            t.iter().all(|&x| (0.0..1.0).contains(&x)).then_some((k, t))
        })
    }

    /// Closed membership with slack `tol` in local coordinates.
    pub fn contains(&self, s: &DVector<f64>, tol: f64) -> bool {
        self.cells.iter().any(|c| c.local(s).iter().all(|&x| x >= -tol && x <= 1.0 + tol))
    }

    /// Draws a point uniformly from the region.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let u = rng.random::<f64>() * self.volume;
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.cells.len() - 1);
        let cell = &self.cells[k];
        let t = DVector::from_fn(self.dim(), |_, _| rng.random::<f64>());
        cell.point(&t)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Affine description of the input segment over `s` when `r = n_t − 1`.
///
/// Every nonzero coordinate `i` of the tail vector contributes a lower bound
/// `lo_i + a_iᵀs` and an upper bound `hi_i + a_iᵀs` on `λ`.
#[derive(Debug, Clone)]
pub struct FiberMap {
    pub v_tail: DVector<f64>,
    /// `V₁ diag(σ)⁻¹`, mapping `s` to the base point.
    pub base: DMatrix<f64>,
    pub corner: DVector<f64>,
    pub tail_sum: f64,
    rows: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    slopes: DMatrix<f64>,
}

/// The segment `{λ v_tail + base_point : lo ≤ λ ≤ hi}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fiber {
    pub lo: f64,
    pub hi: f64,
    pub base_point: DVector<f64>,
}

impl FiberMap {
    pub fn new(rc: &ReducedChannel) -> Result<Self> {
        let v_tail = rc
            .v_tail
            .clone()
            .ok_or(Error::RankMismatch { expected: rc.n_t() - 1, found: rc.r })?;
        let sinv = DMatrix::from_diagonal(&rc.sigma.map(|x| 1.0 / x));
        let base = &rc.v1 * sinv;
        let rows: Vec<usize> = (0..v_tail.len()).filter(|&i| v_tail[i].abs() > ZERO_TAIL).collect();
        let mut lo = Vec::with_capacity(rows.len());
        let mut hi = Vec::with_capacity(rows.len());
        let mut slopes = DMatrix::zeros(rows.len(), rc.r);
        for (k, &i) in rows.iter().enumerate() {
            let v = v_tail[i];
            let sign = v.signum();
            lo.push((1.0 - sign) / (2.0 * v));
            hi.push((1.0 + sign) / (2.0 * v));
            for j in 0..rc.r {
                slopes[(k, j)] = -base[(i, j)] / v;
            }
        }
        Ok(Self {
            tail_sum: v_tail.sum(),
            corner: rc.corner(),
            v_tail,
            base,
            rows,
            lo,
            hi,
            slopes,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.ncols()
    }

    /// Number of affine pieces (nonzero tail coordinates).
    pub fn pieces(&self) -> usize {
        self.rows.len()
    }

    /// `(lo_k, hi_k, a_k)` of piece `k`.
    pub fn piece(&self, k: usize) -> (f64, f64, DVector<f64>) {
        (self.lo[k], self.hi[k], self.slopes.row(k).transpose())
    }

    fn slope_dot(&self, k: usize, s: &[f64]) -> f64 {
        s.iter().enumerate().map(|(j, x)| self.slopes[(k, j)] * x).sum()
    }

    /// `f_min(s)` without a membership check.
    pub fn f_min_raw(&self, s: &[f64]) -> f64 {
        (0..self.rows.len())
            .map(|k| self.lo[k] + self.slope_dot(k, s))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `f_max(s)` without a membership check.
    pub fn f_max_raw(&self, s: &[f64]) -> f64 {
        (0..self.rows.len())
            .map(|k| self.hi[k] + self.slope_dot(k, s))
            .fold(f64::INFINITY, f64::min)
    }

    /// `f_min(H̃1 − s)` without a membership check.
    pub fn f_min_reflected_raw(&self, s: &[f64]) -> f64 {
        let t: Vec<f64> = s.iter().zip(self.corner.iter()).map(|(a, c)| c - a).collect();
        self.f_min_raw(&t)
    }

    pub fn base_point(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.base * s
    }

    /// The fiber over `s`, or [`Error::OutsideRegion`] when it is empty.
    pub fn fiber(&self, s: &DVector<f64>) -> Result<Fiber> {
        if s.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: s.len() });
        }
        let base_point = self.base_point(s);
        let scale = 1.0 + s.amax();
        let tol = 1e-9 * scale;
        for i in 0..base_point.len() {
            if !self.rows.contains(&i) && !(-tol..=1.0 + tol).contains(&base_point[i]) {
                return Err(Error::OutsideRegion);
            }
        }
        let lo = self.f_min_raw(s.as_slice());
        let hi = self.f_max_raw(s.as_slice());
        if lo > hi + tol {
            return Err(Error::OutsideRegion);
        }
        Ok(Fiber { lo, hi: hi.max(lo), base_point })
    }

    pub fn f_min(&self, s: &DVector<f64>) -> Result<f64> {
        self.fiber(s).map(|f| f.lo)
    }

    pub fn f_max(&self, s: &DVector<f64>) -> Result<f64> {
        self.fiber(s).map(|f| f.hi)
    }

    /// `λ v_tail + V₁ diag(σ)⁻¹ s`, checked against the fiber interval.
    pub fn fiber_point(&self, s: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        let f = self.fiber(s)?;
        let tol = 1e-9 * (1.0 + lambda.abs());
        if lambda < f.lo - tol || lambda > f.hi + tol {
            return Err(Error::LambdaOutOfRange { lambda, lo: f.lo, hi: f.hi });
        }
        Ok(&self.v_tail * lambda + f.base_point)
    }
}

pub fn f_min(rc: &ReducedChannel, s: &DVector<f64>) -> Result<f64> {
    FiberMap::new(rc)?.f_min(s)
}

pub fn f_max(rc: &ReducedChannel, s: &DVector<f64>) -> Result<f64> {
    FiberMap::new(rc)?.f_max(s)
}

pub fn fiber_point(rc: &ReducedChannel, s: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    FiberMap::new(rc)?.fiber_point(s, lambda)
}
