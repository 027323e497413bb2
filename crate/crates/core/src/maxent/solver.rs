//! Projected Newton method for smooth convex objectives over a box.

use nalgebra::{DMatrix, DVector};

use super::SolveStatus;

pub(crate) trait Objective {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn value_grad_hess(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>);
}

#[derive(Debug, Clone)]
pub(crate) struct Options {
    pub max_iter: usize,
    /// Iteration stops at this projected-gradient norm.
    pub target: f64,
    /// A run counts as converged at this projected-gradient norm.
    pub accept: f64,
    /// Iterates beyond this sup-norm indicate an unbounded dual.
    pub divergence: f64,
    /// A run that stalls counts as converged once the Newton model predicts less than this relative decrease.
    pub decrement: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self { max_iter: 500, target: 1e-10, accept: 1e-7, divergence: 1e6, decrement: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Coordinate-wise bounds; infinite entries leave a side open.
#[derive(Debug, Clone)]
pub(crate) struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    /// Coordinates flagged `true` are nonnegative, the rest free.
    pub fn nonnegative(mask: &[bool]) -> Self {
        Self {
            lo: mask.iter().map(|&b| if b { 0.0 } else { f64::NEG_INFINITY }).collect(),
            hi: vec![f64::INFINITY; mask.len()],
        }
    }

    fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].max(self.lo[i]).min(self.hi[i]);
        }
    }

    /// Coordinate `i` sits on a bound that the gradient pushes against.
    fn blocked(&self, x: &DVector<f64>, g: &DVector<f64>, i: usize) -> bool {
        let tol = 1e-12 * (1.0 + x[i].abs());
        (x[i] <= self.lo[i] + tol && g[i] > 0.0) || (x[i] >= self.hi[i] - tol && g[i] < 0.0)
    }

    pub fn projected_grad_norm(&self, x: &DVector<f64>, g: &DVector<f64>) -> f64 {
        (0..x.len()).filter(|&i| !self.blocked(x, g, i)).map(|i| g[i].abs()).fold(0.0, f64::max)
    }
}

fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>, free: &[usize]) -> Option<DVector<f64>> {
    let k = free.len();
    let scale = free.iter().map(|&i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let hf = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
    let gf = DVector::from_fn(k, |a, _| g[free[a]]);
    let mut reg = 1e-12 * scale;
    for _ in 0..12 {
        let mut m = hf.clone();
        for a in 0..k {
            m[(a, a)] += reg;
        }
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(&(-&gf));
            if d.iter().all(|v| v.is_finite()) {
                let mut full = DVector::zeros(g.len());
                for (a, &i) in free.iter().enumerate() {
                    full[i] = d[a];
                }
                return Some(full);
            }
        }
        reg *= 100.0;
    }
    None
}

/// Backtracking along the projected path; returns the accepted point and its value.
fn line_search<O: Objective>(
    obj: &O,
    x: &DVector<f64>,
    f: f64,
    g: &DVector<f64>,
    d: &DVector<f64>,
    bounds: &Bounds,
) -> Option<(DVector<f64>, f64)> {
    let mut t = 1.0;
    for _ in 0..60 {
        let mut cand = x + d * t;
        bounds.project(&mut cand);
        let step = &cand - x;
        let decrease = g.dot(&step);
        if decrease < 0.0 {
            let fc = obj.value(&cand);
            if fc.is_finite() && fc <= f + 1e-4 * decrease {
                return Some((cand, fc));
            }
        }
        t *= 0.5;
    }
    None
}

pub(crate) fn minimize<O: Objective>(obj: &O, x0: DVector<f64>, bounds: &Bounds, opts: &Options) -> Outcome {
    let mut x = x0;
    bounds.project(&mut x);
    let mut iterations = 0;
    let (mut f, mut g, mut h) = obj.value_grad_hess(&x);
    let mut pg = bounds.projected_grad_norm(&x, &g);
    let mut status = SolveStatus::MaxIter;
    let mut decrement = f64::INFINITY;
    while iterations < opts.max_iter {
        if !f.is_finite() {
            status = SolveStatus::Infeasible;
            break;
        }
        if pg <= opts.target {
            status = SolveStatus::Converged;
            break;
        }
        if x.amax() > opts.divergence {
            status = SolveStatus::Infeasible;
            break;
        }
        iterations += 1;
        // coordinates pushed against their bound stay fixed this step
        let free: Vec<usize> = (0..x.len()).filter(|&i| !bounds.blocked(&x, &g, i)).collect();
        let newton = newton_direction(&g, &h, &free);
        // predicted decrease of the Newton model
        decrement = newton.as_ref().map_or(f64::INFINITY, |d| -0.5 * g.dot(d));
        let mut next = newton.and_then(|d| line_search(obj, &x, f, &g, &d, bounds));
        if next.is_none() {
            let d = -&g;
            next = line_search(obj, &x, f, &g, &d, bounds);
        }
        let Some((xn, fnew)) = next else {
            break;
        };
        let stalled = (f - fnew).abs() <= 1e-16 * (1.0 + f.abs()) && (&xn - &x).amax() <= 1e-15 * (1.0 + x.amax());
        x = xn;
        (f, g, h) = obj.value_grad_hess(&x);
        pg = bounds.projected_grad_norm(&x, &g);
        if stalled {
            break;
        }
    }
    // near sharp kinks the gradient cannot be resolved in floating point, but
    // a tiny Newton decrement still certifies the value
    let settled = decrement.abs() <= opts.decrement * (1.0 + f.abs());
    if status == SolveStatus::MaxIter && (pg <= opts.accept || (iterations < opts.max_iter && settled)) {
        status = SolveStatus::Converged;
    }
    Outcome { x, value: f, grad_norm: pg, iterations, status }
}
