//! Fixed quadrature rules over the support of a moment problem.
//!
//! One dimension: every cell is cut at the kinks of the cost functions and
//! each piece gets composite Gauss-Legendre panels, which is exact up to
//! rounding for exponentials of piecewise-linear exponents of moderate size.
//! Two dimensions: tensor Gauss-Legendre per parallelepiped. Three and more:
//! Halton points with a Cranley-Patterson shift per parallelepiped.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::zonotope::ZonotopeDecomposition;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Gauss-Legendre nodes per panel in one dimension.
    pub nodes_1d: usize,
    /// Panels per smooth piece in one dimension.
    pub panels_1d: usize,
    /// Gauss-Legendre nodes per axis in two dimensions.
    pub nodes_2d: usize,
    /// Starting number of low-discrepancy points per cell in three or more dimensions.
    pub qmc_points: usize,
    /// Doubling stops once the point count per cell would exceed this.
    pub qmc_max_points: usize,
    /// Doubling stops once `γ` moves less than this.
    pub qmc_tol: f64,
    /// Seed of the random shifts.
    pub seed: u64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            nodes_1d: 32,
            panels_1d: 4,
            nodes_2d: 64,
            qmc_points: 1 << 17,
            qmc_max_points: 1 << 19,
            qmc_tol: 1e-4,
            seed: 0x0c_a9ac_17e5,
        }
    }
}

impl QuadratureConfig {
    /// A cheaper setting for large ensembles.
    pub fn coarse() -> Self {
        Self { nodes_2d: 32, qmc_points: 1 << 12, qmc_max_points: 1 << 12, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes_1d == 0 || self.panels_1d == 0 || self.nodes_2d == 0 || self.qmc_points == 0 {
            return Err(Error::InvalidArgument("quadrature sizes must be positive".into()));
        }
        if self.qmc_tol.is_nan() || self.qmc_tol <= 0.0 {
            return Err(Error::InvalidArgument("qmc_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Nodes (row-major, `dim` coordinates each) with log-weights.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub dim: usize,
    pub points: Vec<f64>,
    pub log_w: Vec<f64>,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.log_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_w.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn push(&mut self, p: &[f64], w: f64) {
        if w > 0.0 {
            self.points.extend_from_slice(p);
            self.log_w.push(w.ln());
        }
    }

    /// Sum of the weights, i.e. the measure of the support.
    pub fn total_weight(&self) -> f64 {
        self.log_w.iter().map(|l| l.exp()).sum()
    }
}

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(n).expect("positive node count");
    GaussLegendre::new(n).as_node_weight_pairs().to_vec()
}

/// Composite rule over a union of intervals, split at `breaks`.
pub fn interval_rule(intervals: &[(f64, f64)], breaks: &[f64], cfg: &QuadratureConfig) -> QuadRule {
    let gl = gauss_legendre(cfg.nodes_1d);
    let mut rule = QuadRule { dim: 1, points: Vec::new(), log_w: Vec::new() };
    for &(a, b) in intervals {
        let (a, b) = (a.min(b), a.max(b));
        if b <= a {
            continue;
        }
        let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
        cuts.push(a);
        cuts.push(b);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (1.0 + y.abs()));
        for piece in cuts.windows(2) {
            let width = (piece[1] - piece[0]) / cfg.panels_1d as f64;
            for p in 0..cfg.panels_1d {
                let lo = piece[0] + p as f64 * width;
                for &(x, w) in &gl {
                    rule.push(&[lo + 0.5 * width * (x + 1.0)], 0.5 * width * w);
                }
            }
        }
    }
    rule
}

/// Tensor Gauss-Legendre over each parallelepiped of a planar tiling.
pub fn tensor_rule(zd: &ZonotopeDecomposition, cfg: &QuadratureConfig) -> QuadRule {
    let gl = gauss_legendre(cfg.nodes_2d);
    let mut rule = QuadRule { dim: 2, points: Vec::new(), log_w: Vec::new() };
    for cell in &zd.cells {
        let b = &cell.matrix;
        let t0 = &cell.translate;
        for &(x, wx) in &gl {
            let tx = 0.5 * (x + 1.0);
            for &(y, wy) in &gl {
                let ty = 0.5 * (y + 1.0);
                let p = [
                    t0[0] + b[(0, 0)] * tx + b[(0, 1)] * ty,
                    t0[1] + b[(1, 0)] * tx + b[(1, 1)] * ty,
                ];
                rule.push(&p, 0.25 * wx * wy * cell.det_abs);
            }
        }
    }
    rule
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

/// Shifted Halton points, `points_per_cell` in every parallelepiped.
pub fn halton_rule(zd: &ZonotopeDecomposition, points_per_cell: usize, seed: u64) -> QuadRule {
    let r = zd.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rule = QuadRule {
        dim: r,
        points: Vec::with_capacity(zd.cells.len() * points_per_cell * r),
        log_w: Vec::with_capacity(zd.cells.len() * points_per_cell),
    };
    let mut t = vec![0.0; r];
    let mut p = vec![0.0; r];
    for cell in &zd.cells {
        let shift: Vec<f64> = (0..r).map(|_| rng.random::<f64>()).collect();
        let w = cell.det_abs / points_per_cell as f64;
        for i in 0..points_per_cell {
            for d in 0..r {
                t[d] = (radical_inverse(i as u64 + 1, PRIMES[d]) + shift[d]).fract();
            }
            for (row, out) in p.iter_mut().enumerate() {
                *out = cell.translate[row] + (0..r).map(|c| cell.matrix[(row, c)] * t[c]).sum::<f64>();
            }
            rule.push(&p, w);
        }
    }
    rule
}
