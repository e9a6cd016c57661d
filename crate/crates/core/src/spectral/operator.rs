use std::sync::Arc;

use super::SimplexGrid;
use crate::model::{mat_t_vec, mat_vec, Atom, DirectionPoint};
use crate::numeric::CompensatedSum;
use crate::{Error, Result};

/// Which transfer operator: `P_s` acts with `g`, the conjugate `P*_s` with `gᵀ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Direct,
    Transpose,
}

/// `s`-independent structure of the discretized operator: for every grid node `x_i`
/// the entries `(j, p_k w_j(g_k·x_i), log|g_k x_i|)`.
#[derive(Clone, Debug)]
pub(crate) struct Stencil {
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    coef: Vec<f64>,
    log_norm: Vec<f64>,
}

pub(crate) fn apply_side(side: Side, d: usize, m: &[f64], x: &[f64], out: &mut [f64]) {
    match side {
        Side::Direct => mat_vec(d, m, x, out),
        Side::Transpose => mat_t_vec(d, m, x, out),
    }
}

impl Stencil {
    pub(crate) fn build(atoms: &[Atom], grid: &SimplexGrid, side: Side) -> Result<Self> {
        let d = grid.dim();
        let mut row_ptr = Vec::with_capacity(grid.len() + 1);
        let mut col = Vec::new();
        let mut coef = Vec::new();
        let mut log_norm = Vec::new();
        let mut y = vec![0.0; d];
        let mut w = Vec::with_capacity(d);
        row_ptr.push(0);
        for i in 0..grid.len() {
            let x = grid.point(i);
            for a in atoms {
                apply_side(side, d, a.m.as_slice(), x, &mut y);
                let norm: f64 = y.iter().sum();
                if norm <= 0.0 {
                    return Err(Error::DegenerateAction);
                }
                y.iter_mut().for_each(|v| *v /= norm);
                grid.interpolation(&y, &mut w);
                for &(j, c) in &w {
                    col.push(j);
                    coef.push(a.p * c);
                    log_norm.push(norm.ln());
                }
            }
            row_ptr.push(col.len());
        }
        Ok(Self { row_ptr, col, coef, log_norm })
    }

    pub(crate) fn values(&self, s: f64) -> Vec<f64> {
        self.coef.iter().zip(&self.log_norm).map(|(c, l)| c * (s * l).exp()).collect()
    }

    fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn mul_right(&self, val: &[f64], x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.rows()) {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            *yi = (a..b).map(|e| val[e] * x[self.col[e]]).sum();
        }
    }

    fn mul_left(&self, val: &[f64], x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, xi) in x.iter().enumerate().take(self.rows()) {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col[e]] += xi * val[e];
            }
        }
    }
}

pub(crate) struct Eigen {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// Gap below which a stalled iteration is accepted as converged.
const STALL_GAP: f64 = 1e-11;
const STALL_ITERS: usize = 200;

/// Right Perron vector with the Collatz–Wielandt stopping rule
/// `(max_i (Ar)_i/r_i − min_i (Ar)_i/r_i) / max ≤ tol`.
pub(crate) fn right_perron(st: &Stencil, val: &[f64], tol: f64, max_iter: usize) -> Result<Eigen> {
    let n = st.rows();
    let mut r = vec![1.0; n];
    let mut y = vec![0.0; n];
    let mut best = (f64::INFINITY, 0usize);
    for it in 1..=max_iter {
        st.mul_right(val, &r, &mut y);
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..n {
            let q = y[i] / r[i];
            lo = lo.min(q);
            hi = hi.max(q);
        }
        if !(lo > 0.0) || !hi.is_finite() {
            return Err(Error::DegenerateAction);
        }
        let gap = (hi - lo) / hi;
        let top = y.iter().copied().fold(0.0, f64::max);
        for i in 0..n {
            r[i] = y[i] / top;
        }
        if gap < best.0 {
            best = (gap, it);
        }
        if gap <= tol || (gap <= STALL_GAP && it - best.1 >= STALL_ITERS) {
            return Ok(Eigen { value: 0.5 * (lo + hi), vector: r, iterations: it });
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, gap: best.0 })
}

/// Left Perron vector normalized to a probability vector.
pub(crate) fn left_perron(st: &Stencil, val: &[f64], tol: f64, max_iter: usize) -> Result<Eigen> {
    let n = st.rows();
    let mut nu = vec![1.0 / n as f64; n];
    let mut y = vec![0.0; n];
    let mut best = (f64::INFINITY, 0usize);
    for it in 1..=max_iter {
        st.mul_left(val, &nu, &mut y);
        let total: f64 = y.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateAction);
        }
        let mut change = 0.0;
        for i in 0..n {
            let v = y[i] / total;
            change += (v - nu[i]).abs();
            nu[i] = v;
        }
        if change < best.0 {
            best = (change, it);
        }
        if change <= tol || (change <= STALL_GAP && it - best.1 >= STALL_ITERS) {
            return Ok(Eigen { value: total, vector: nu, iterations: it });
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, gap: best.0 })
}

/// Solution of the eigenproblems for `P_s` and `P*_s` on a grid.
///
/// `nu` and `nu_star` are probability vectors on the grid nodes. `r` is the right
/// eigenvector of the discretized `P_s`, scaled so that `ν_s(r_s) = 1` unless rescaled.
/// `r_star` holds `r*_s(x_i) = Σ_j ν_s(j) ⟨x_i, y_j⟩^s` at the nodes.
#[derive(Clone, Debug)]
pub struct SpectralSolution {
    pub s: f64,
    pub kappa: f64,
    pub kappa_conjugate: f64,
    pub r: Vec<f64>,
    pub nu: Vec<f64>,
    pub nu_star: Vec<f64>,
    pub r_star: Vec<f64>,
    /// `‖P_s r − κ r‖_∞ / ‖r‖_∞` for the discretized operator.
    pub residual: f64,
    /// The same residual for the undiscretized operator acting on the interpolated `r`,
    /// sampled at off-grid points.
    pub discretization_residual: f64,
    pub iterations: usize,
    pub method: &'static str,
    pub grid: Arc<SimplexGrid>,
}

impl SpectralSolution {
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// `ν_s(r_s)`, equal to 1 unless the solution was rescaled.
    pub fn nu_r(&self) -> f64 {
        self.nu.iter().zip(&self.r).map(|(a, b)| a * b).sum()
    }

    pub fn r_at(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.r, x)
    }

    pub fn r_star_at(&self, y: &[f64]) -> f64 {
        r_star_sum(&self.grid, &self.nu, self.s, y)
    }

    /// `r_s` from the conjugate eigenmeasure, `∫ ⟨x, y⟩^s ν*_s(dy)`; proportional to `r`.
    pub fn r_from_conjugate(&self, x: &[f64]) -> f64 {
        r_star_sum(&self.grid, &self.nu_star, self.s, x)
    }

    /// Copy with `r_s` multiplied by `c`.
    pub fn rescaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.r.iter_mut().for_each(|v| *v *= c);
        out
    }
}

fn r_star_sum(grid: &SimplexGrid, measure: &[f64], s: f64, x: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for (j, &w) in measure.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let ip: f64 = grid.point(j).iter().zip(x).map(|(a, b)| a * b).sum();
        acc.add(w * ip.powf(s));
    }
    acc.value()
}

/// `r*_s(y) = ∫ ⟨y, x⟩^s ν_s(dx)` by quadrature against the discrete eigenmeasure.
pub fn r_star_eval(solution: &SpectralSolution, y: &DirectionPoint) -> Result<f64> {
    if y.dim() != solution.dim() {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    Ok(solution.r_star_at(y.as_slice()))
}

pub(crate) fn solve_pair(
    atoms: &[Atom],
    grid: &Arc<SimplexGrid>,
    primal: &Stencil,
    conjugate: &Stencil,
    s: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralSolution> {
    let val = primal.values(s);
    let right = right_perron(primal, &val, tol, max_iter)?;
    let left = left_perron(primal, &val, tol, max_iter)?;
    let cval = conjugate.values(s);
    let cright = right_perron(conjugate, &cval, tol, max_iter)?;
    let cleft = left_perron(conjugate, &cval, tol, max_iter)?;

    let kappa = right.value;
    let mut r = right.vector;
    let nu = left.vector;
    let nu_r: f64 = nu.iter().zip(&r).map(|(a, b)| a * b).sum();
    r.iter_mut().for_each(|v| *v /= nu_r);

    let mut ar = vec![0.0; r.len()];
    primal.mul_right(&val, &r, &mut ar);
    let rmax = r.iter().copied().fold(0.0, f64::max);
    let residual = ar.iter().zip(&r).map(|(a, b)| (a - kappa * b).abs()).fold(0.0, f64::max) / rmax;
    let discretization_residual = continuous_residual(atoms, grid, &r, s, kappa) / rmax;

    let kappa_conjugate = cright.value;
    let allowed = 10.0 * tol.max(discretization_residual);
    if (kappa - kappa_conjugate).abs() > allowed * kappa {
        return Err(Error::KappaMismatch { primal: kappa, conjugate: kappa_conjugate });
    }

    let r_star = (0..grid.len()).map(|i| r_star_sum(grid, &nu, s, grid.point(i))).collect();
    Ok(SpectralSolution {
        s,
        kappa,
        kappa_conjugate,
        r,
        nu,
        nu_star: cleft.vector,
        r_star,
        residual,
        discretization_residual,
        iterations: right.iterations.max(left.iterations).max(cright.iterations).max(cleft.iterations),
        method: "power-iteration",
        grid: Arc::clone(grid),
    })
}

fn continuous_residual(atoms: &[Atom], grid: &SimplexGrid, r: &[f64], s: f64, kappa: f64) -> f64 {
    let d = grid.dim();
    let mut y = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for x in grid.test_points() {
        let mut pr = 0.0;
        for a in atoms {
            mat_vec(d, a.m.as_slice(), &x, &mut y);
            let norm: f64 = y.iter().sum();
            y.iter_mut().for_each(|v| *v /= norm);
            pr += a.p * norm.powf(s) * grid.interpolate(r, &y);
        }
        worst = worst.max((pr - kappa * grid.interpolate(r, &x)).abs());
    }
    worst
}

/// One-shot solve of the eigenproblems for `P_s` and `P*_s`.
pub fn transfer_fixed_point(
    law: &crate::model::MatrixQLaw,
    s: f64,
    grid: &SimplexGrid,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralSolution> {
    let atoms = law.require_atoms("transfer_fixed_point")?;
    if grid.dim() != law.dim() {
        return Err(Error::Domain("grid dimension differs from the law".into()));
    }
    if let Some(k) = atoms.iter().position(|a| !a.m.is_allowable()) {
        return Err(Error::NonAllowable(k));
    }
    let grid = Arc::new(grid.clone());
    let primal = Stencil::build(atoms, &grid, Side::Direct)?;
    let conjugate = Stencil::build(atoms, &grid, Side::Transpose)?;
    solve_pair(atoms, &grid, &primal, &conjugate, s, tol, max_iter)
}
