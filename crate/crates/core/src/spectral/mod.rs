//! Transfer operators on the positive simplex and the pressure function
//! `Λ(s) = log κ(s)`.
//!
//! For a finite-support law the operator
//! `P_s φ(x) = Σ_k p_k |g_k x|^s φ(g_k·x)` is discretized on a [`SimplexGrid`] by
//! interpolating `φ` between nodes. The top eigenvalue of the resulting nonnegative
//! matrix is `κ(s)`; right and left Perron vectors give `r_s` and `ν_s`. In `d = 1`
//! the grid is a point and `κ(s) = Σ p_k m_k^s` exactly.

mod grid;
mod mc;
mod operator;

pub use grid::{GridKind, SimplexGrid};
pub use mc::{kappa_mc, KappaEstimate};
pub use operator::{r_star_eval, transfer_fixed_point, Side, SpectralSolution};

pub(crate) use operator::apply_side;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::model::MatrixQLaw;
use crate::numeric::bracketed_root;
use crate::{Error, Result};
use operator::{right_perron, Stencil};

pub const DEFAULT_TOL: f64 = 1e-13;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Largest `s` searched for a root of `Λ` when the law declares no moment limit.
pub const DEFAULT_S_MAX: f64 = 64.0;

/// Base finite-difference step for the derivative of each order (index = order).
/// Higher orders use wider steps so that rounding does not dominate.
const FD_STEP: [f64; 6] = [0.0, 1e-2, 2e-2, 5e-2, 8e-2, 1.2e-1];

/// `κ(s)` and the eigen-objects of a fixed finite-support law, with caches.
pub struct Pressure {
    law: MatrixQLaw,
    grid: Arc<SimplexGrid>,
    primal: Stencil,
    conjugate: Stencil,
    tol: f64,
    max_iter: usize,
    kappa_cache: Mutex<BTreeMap<u64, f64>>,
    solution_cache: Mutex<BTreeMap<u64, Arc<SpectralSolution>>>,
}

impl std::fmt::Debug for Pressure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pressure")
            .field("law", &self.law.name())
            .field("grid", &(self.grid.kind(), self.grid.len()))
            .field("tol", &self.tol)
            .finish()
    }
}

impl Pressure {
    pub fn new(law: &MatrixQLaw) -> Result<Self> {
        Self::with_grid(law, SimplexGrid::default_for(law.dim()), DEFAULT_TOL, DEFAULT_MAX_ITER)
    }

    pub fn with_grid(law: &MatrixQLaw, grid: SimplexGrid, tol: f64, max_iter: usize) -> Result<Self> {
        let atoms = law.require_atoms("spectral solves")?;
        if grid.dim() != law.dim() {
            return Err(Error::Domain("grid dimension differs from the law".into()));
        }
        if let Some(k) = atoms.iter().position(|a| !a.m.is_allowable()) {
            return Err(Error::NonAllowable(k));
        }
        let grid = Arc::new(grid);
        Ok(Self {
            primal: Stencil::build(atoms, &grid, Side::Direct)?,
            conjugate: Stencil::build(atoms, &grid, Side::Transpose)?,
            law: law.clone(),
            grid,
            tol,
            max_iter,
            kappa_cache: Mutex::new(BTreeMap::new()),
            solution_cache: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn law(&self) -> &MatrixQLaw {
        &self.law
    }

    pub fn grid(&self) -> &Arc<SimplexGrid> {
        &self.grid
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    fn check_moment(&self, s: f64) -> Result<()> {
        match self.law.moment_limit() {
            Some(l) if s >= l => Err(Error::OutOfRange(format!("s = {s} beyond the moment limit {l}"))),
            _ if !s.is_finite() => Err(Error::Domain(format!("s = {s}"))),
            _ => Ok(()),
        }
    }

    /// `κ(s)`; negative `s` is allowed because finite-support allowable laws have all
    /// negative moments of `|g x|`.
    pub fn kappa(&self, s: f64) -> Result<f64> {
        self.check_moment(s)?;
        if let Some(&k) = self.kappa_cache.lock().unwrap().get(&s.to_bits()) {
            return Ok(k);
        }
        let val = self.primal.values(s);
        let k = right_perron(&self.primal, &val, self.tol, self.max_iter)?.value;
        self.kappa_cache.lock().unwrap().insert(s.to_bits(), k);
        Ok(k)
    }

    pub fn lambda(&self, s: f64) -> Result<f64> {
        Ok(self.kappa(s)?.ln())
    }

    /// Full eigen-solution for `P_s` and `P*_s`.
    pub fn solve(&self, s: f64) -> Result<Arc<SpectralSolution>> {
        self.check_moment(s)?;
        if let Some(sol) = self.solution_cache.lock().unwrap().get(&s.to_bits()) {
            return Ok(Arc::clone(sol));
        }
        let atoms = self.law.atoms().expect("checked in constructor");
        let sol = Arc::new(operator::solve_pair(
            atoms,
            &self.grid,
            &self.primal,
            &self.conjugate,
            s,
            self.tol,
            self.max_iter,
        )?);
        self.solution_cache.lock().unwrap().insert(s.to_bits(), Arc::clone(&sol));
        Ok(sol)
    }

    /// `(Λ(s), Λ'(s), …, Λ^{(order)}(s))` by central differences of `Λ` with two
    /// Richardson levels.
    pub fn lambda_derivs(&self, s: f64, order: usize) -> Result<Vec<f64>> {
        if order > 5 {
            return Err(Error::Domain(format!("derivative order {order} > 5")));
        }
        let mut out = vec![self.lambda(s)?];
        for k in 1..=order {
            out.push(self.derivative(s, k)?);
        }
        Ok(out)
    }

    fn derivative(&self, s: f64, k: usize) -> Result<f64> {
        let h = FD_STEP[k] * s.abs().max(1.0);
        let p = if k <= 2 { 4 } else { 2 };
        let d0 = self.stencil(s, h, k)?;
        let d1 = self.stencil(s, h / 2.0, k)?;
        let d2 = self.stencil(s, h / 4.0, k)?;
        let f1 = 2f64.powi(p);
        let f2 = 2f64.powi(p + 2);
        let r0 = (f1 * d1 - d0) / (f1 - 1.0);
        let r1 = (f1 * d2 - d1) / (f1 - 1.0);
        Ok((f2 * r1 - r0) / (f2 - 1.0))
    }

    fn stencil(&self, s: f64, h: f64, k: usize) -> Result<f64> {
        let f = |j: i32| self.lambda(s + j as f64 * h);
        Ok(match k {
            1 => (-f(2)? + 8.0 * f(1)? - 8.0 * f(-1)? + f(-2)?) / (12.0 * h),
            2 => (-f(2)? + 16.0 * f(1)? - 30.0 * f(0)? + 16.0 * f(-1)? - f(-2)?) / (12.0 * h * h),
            3 => (f(2)? - 2.0 * f(1)? + 2.0 * f(-1)? - f(-2)?) / (2.0 * h.powi(3)),
            4 => (f(2)? - 4.0 * f(1)? + 6.0 * f(0)? - 4.0 * f(-1)? + f(-2)?) / h.powi(4),
            5 => (f(3)? - 4.0 * f(2)? + 5.0 * f(1)? - 5.0 * f(-1)? + 4.0 * f(-2)? - f(-3)?) / (2.0 * h.powi(5)),
            _ => unreachable!(),
        })
    }

    /// Upper bound `log max_k ‖g_k‖` on every slope `Λ'(s)` (attained as `s → ∞` when `d = 1`).
    pub fn slope_sup(&self) -> f64 {
        let atoms = self.law.atoms().expect("checked in constructor");
        atoms.iter().map(|a| a.m.op_norm()).fold(0.0, f64::max).ln()
    }

    /// Lower bound `log min_k ι(g_k)` on every slope.
    pub fn slope_inf(&self) -> f64 {
        let atoms = self.law.atoms().expect("checked in constructor");
        atoms.iter().map(|a| a.m.iota()).fold(f64::INFINITY, f64::min).ln()
    }

    /// The `s` with `Λ'(s) = q`.
    pub fn s_for_slope(&self, q: f64) -> Result<f64> {
        let (lo_b, hi_b) = (self.slope_inf(), self.slope_sup());
        if !(q > lo_b + 1e-9 && q < hi_b - 1e-9) {
            return Err(Error::OutOfRange(format!(
                "slope {q} is outside the achievable range ({lo_b}, {hi_b})"
            )));
        }
        let cap = self.law.moment_limit().map(|l| 0.999 * l).unwrap_or(4.0 * DEFAULT_S_MAX);
        let slope = |s: f64| self.derivative(s, 1);
        let mut lo = 0.0;
        while slope(lo)? >= q {
            lo = if lo == 0.0 { -1.0 } else { 2.0 * lo };
            if lo < -cap {
                return Err(Error::OutOfRange(format!("slope {q} not reached for s >= {lo}")));
            }
        }
        let mut hi = lo.max(0.0) + 1.0;
        while slope(hi)? <= q {
            hi *= 2.0;
            if hi > cap {
                return Err(Error::OutOfRange(format!("slope {q} not reached for s <= {cap}")));
            }
        }
        bracketed_root(|s| Ok(slope(s)? - q), lo, hi, 1e-13)
    }

    /// Positive root `α` of `Λ` and the derived drift constants.
    pub fn solve_alpha(&self, bracket: Option<(f64, f64)>) -> Result<AlphaSolution> {
        let s_max = self.law.moment_limit().map(|l| 0.999 * l).unwrap_or(DEFAULT_S_MAX);
        let (lo, mut hi) = bracket.unwrap_or((1e-3, 1.0_f64.min(s_max)));
        if self.lambda(lo)? >= 0.0 {
            return Err(Error::NoPositiveRoot { lo, hi });
        }
        while self.lambda(hi)? <= 0.0 {
            if hi >= s_max {
                return Err(Error::NoPositiveRoot { lo, hi });
            }
            hi = (2.0 * hi).min(s_max);
        }
        let alpha = bracketed_root(|s| self.lambda(s), lo, hi, 1e-15)?;
        let d = self.lambda_derivs(alpha, 2)?;
        if d[1] <= 0.0 {
            return Err(Error::NoPositiveRoot { lo, hi });
        }
        Ok(AlphaSolution {
            alpha,
            lambda_at_alpha: d[0],
            lambda_prime: d[1],
            rho: 1.0 / d[1],
            sigma_alpha: d[2].max(0.0).sqrt(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSolution {
    pub alpha: f64,
    pub lambda_at_alpha: f64,
    pub lambda_prime: f64,
    pub rho: f64,
    pub sigma_alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub s: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
}

/// Calibrated asymptotic constants of a law: `α`, `ρ`, `σ_α` and cached access to
/// `Λ` and its first five derivatives.
pub struct RateModel {
    pressure: Arc<Pressure>,
    pub alpha: f64,
    pub rho: f64,
    pub sigma_alpha: f64,
    derivs_cache: Mutex<BTreeMap<u64, [f64; 6]>>,
    slope_cache: Mutex<BTreeMap<u64, f64>>,
}

impl std::fmt::Debug for RateModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RateModel")
            .field("law", &self.pressure.law().name())
            .field("alpha", &self.alpha)
            .field("rho", &self.rho)
            .field("sigma_alpha", &self.sigma_alpha)
            .finish()
    }
}

impl RateModel {
    pub fn calibrate(law: &MatrixQLaw) -> Result<Self> {
        Self::from_pressure(Arc::new(Pressure::new(law)?))
    }

    pub fn from_pressure(pressure: Arc<Pressure>) -> Result<Self> {
        let a = pressure.solve_alpha(None)?;
        Ok(Self {
            pressure,
            alpha: a.alpha,
            rho: a.rho,
            sigma_alpha: a.sigma_alpha,
            derivs_cache: Mutex::new(BTreeMap::new()),
            slope_cache: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn pressure(&self) -> &Arc<Pressure> {
        &self.pressure
    }

    pub fn law(&self) -> &MatrixQLaw {
        self.pressure.law()
    }

    pub fn kappa(&self, s: f64) -> Result<f64> {
        self.pressure.kappa(s)
    }

    pub fn lambda(&self, s: f64) -> Result<f64> {
        self.pressure.lambda(s)
    }

    /// `[Λ, Λ', Λ'', Λ''', Λ'''', Λ''''']` at `s`.
    pub fn derivs(&self, s: f64) -> Result<[f64; 6]> {
        if let Some(d) = self.derivs_cache.lock().unwrap().get(&s.to_bits()) {
            return Ok(*d);
        }
        let v = self.pressure.lambda_derivs(s, 5)?;
        let d = [v[0], v[1], v[2], v[3], v[4], v[5]];
        if d[2] < -1e-8 {
            return Err(Error::Domain(format!("Λ''({s}) = {} < 0: spectral solve is unreliable", d[2])));
        }
        self.derivs_cache.lock().unwrap().insert(s.to_bits(), d);
        Ok(d)
    }

    pub fn sigma(&self, s: f64) -> Result<f64> {
        Ok(self.derivs(s)?[2].max(0.0).sqrt())
    }

    pub fn solution(&self, s: f64) -> Result<Arc<SpectralSolution>> {
        self.pressure.solve(s)
    }

    /// `s` with `Λ'(s) = q`.
    pub fn s_of_slope(&self, q: f64) -> Result<f64> {
        if let Some(&s) = self.slope_cache.lock().unwrap().get(&q.to_bits()) {
            return Ok(s);
        }
        let s = self.pressure.s_for_slope(q)?;
        self.slope_cache.lock().unwrap().insert(q.to_bits(), s);
        Ok(s)
    }

    /// `s` with `Λ'(s) = 1/β`.
    pub fn s_of_beta(&self, beta: f64) -> Result<f64> {
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("beta = {beta} must be positive")));
        }
        self.s_of_slope(1.0 / beta)
    }

    pub fn lambda_table(&self, s_values: &[f64]) -> Result<Vec<LambdaRow>> {
        s_values
            .iter()
            .map(|&s| {
                let d = self.derivs(s)?;
                Ok(LambdaRow { s, kappa: d[0].exp(), lambda: d[0], d1: d[1], d2: d[2], d3: d[3], d4: d[4], d5: d[5] })
            })
            .collect()
    }
}
