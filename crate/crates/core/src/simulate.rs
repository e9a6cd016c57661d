//! Perpetuity paths and first-passage times.
//!
//! `τ_u = inf{n ≥ 1 : |V_n| > u}` is simulated on the perpetuity sequence itself,
//! `V_n = V_{n−1} + Π_{n−1} Q_n` with `Π_n = M_1 ⋯ M_n`, so that the path law is the
//! right one. The forward recursion `V*_n = M_n V*_{n−1} + Q_n` has the same
//! one-dimensional marginals but a different path law; it is exposed through
//! [`forward_step`] and [`sample_v`].
//!
//! All randomness comes from [`stream_rng`]: replicate `i` of an experiment with seed
//! `seed` draws from ChaCha8 stream `i`, so results do not depend on the worker count.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{mat_mul, mat_vec, DirectionPoint, MatrixQLaw, NonnegMatrix, NonnegVector};
use crate::spectral::{apply_side, Side, SimplexGrid, SpectralSolution};
use crate::{Error, Result};

/// Magnitude beyond which vectors and products are rescaled into a log factor.
const RESCALE_HI: f64 = 1e250;
const RESCALE_LO: f64 = 1e-250;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Order-preserving map over replicate indices, parallel when the `parallel`
/// feature is on (the current rayon pool decides the worker count).
pub fn par_map<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count as u64).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count as u64).map(f).collect()
    }
}

/// State of the forward process `V*_n = M_n V*_{n−1} + Q_n` together with the
/// projective chain `G_n·x₀` (`G_n = M_n ⋯ M_1`) and `log|G_n x₀|`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathState {
    pub n: usize,
    /// `V*_n = exp(v_log_scale) · v`.
    pub v: Vec<f64>,
    pub v_log_scale: f64,
    pub pi_log_norm: f64,
    pub direction: Vec<f64>,
    pub stream: u64,
}

impl PathState {
    pub fn new(x0: &DirectionPoint, stream: u64) -> Self {
        Self {
            n: 0,
            v: vec![0.0; x0.dim()],
            v_log_scale: 0.0,
            pi_log_norm: 0.0,
            direction: x0.as_slice().to_vec(),
            stream,
        }
    }

    pub fn log_norm_v(&self) -> f64 {
        self.v.iter().sum::<f64>().ln() + self.v_log_scale
    }
}

/// One step of the forward recursion.
pub fn forward_step(state: &PathState, m: &NonnegMatrix, q: &NonnegVector) -> Result<PathState> {
    let d = state.v.len();
    if m.dim() != d || q.dim() != d {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    let mut next = state.clone();
    forward_step_raw(&mut next, m.as_slice(), q.as_slice())?;
    Ok(next)
}

fn forward_step_raw(st: &mut PathState, m: &[f64], q: &[f64]) -> Result<()> {
    let d = st.v.len();
    let mut mv = vec![0.0; d];
    mat_vec(d, m, &st.v, &mut mv);
    let qs = (-st.v_log_scale).exp();
    for i in 0..d {
        st.v[i] = mv[i] + q[i] * qs;
    }
    let total: f64 = st.v.iter().sum();
    if total > RESCALE_HI {
        st.v.iter_mut().for_each(|x| *x /= total);
        st.v_log_scale += total.ln();
    }
    mat_vec(d, m, &st.direction, &mut mv);
    let norm: f64 = mv.iter().sum();
    if norm <= 0.0 {
        return Err(Error::DegenerateAction);
    }
    st.pi_log_norm += norm.ln();
    for (x, m) in st.direction.iter_mut().zip(&mv) {
        *x = m / norm;
    }
    st.n += 1;
    Ok(())
}

/// Perpetuity sequence `V_n` with the running product `Π_n`, both stored as
/// `exp(log_scale) · mantissa`. Values stay unscaled (and the arithmetic exact up to
/// floating rounding) while they are between `1e-250` and `1e250`.
#[derive(Clone, Debug)]
pub(crate) struct Perpetuity {
    d: usize,
    pub(crate) pi: Vec<f64>,
    pub(crate) pi_log: f64,
    pub(crate) v: Vec<f64>,
    pub(crate) v_log: f64,
    tmp: Vec<f64>,
    pq: Vec<f64>,
}

impl Perpetuity {
    pub(crate) fn new(d: usize) -> Self {
        let mut pi = vec![0.0; d * d];
        for i in 0..d {
            pi[i * d + i] = 1.0;
        }
        Self { d, pi, pi_log: 0.0, v: vec![0.0; d], v_log: 0.0, tmp: vec![0.0; d * d], pq: vec![0.0; d] }
    }

    pub(crate) fn copy_from(&mut self, other: &Perpetuity) {
        self.pi.copy_from_slice(&other.pi);
        self.pi_log = other.pi_log;
        self.v.copy_from_slice(&other.v);
        self.v_log = other.v_log;
    }

    /// `V ← V + Π Q`, then `Π ← Π M`.
    pub(crate) fn step(&mut self, m: &[f64], q: &[f64]) {
        let d = self.d;
        mat_vec(d, &self.pi, q, &mut self.pq);
        if self.pi_log == self.v_log {
            for i in 0..d {
                self.v[i] += self.pq[i];
            }
        } else if self.pi_log < self.v_log {
            let f = (self.pi_log - self.v_log).exp();
            for i in 0..d {
                self.v[i] += f * self.pq[i];
            }
        } else {
            let f = (self.v_log - self.pi_log).exp();
            for i in 0..d {
                self.v[i] = f * self.v[i] + self.pq[i];
            }
            self.v_log = self.pi_log;
        }
        let total: f64 = self.v.iter().sum();
        if total > RESCALE_HI {
            self.v.iter_mut().for_each(|x| *x /= total);
            self.v_log += total.ln();
        }
        mat_mul(d, &self.pi, m, &mut self.tmp);
        std::mem::swap(&mut self.pi, &mut self.tmp);
        let top = self.pi.iter().copied().fold(0.0, f64::max);
        if top > RESCALE_HI || (top < RESCALE_LO && top > 0.0) {
            self.pi.iter_mut().for_each(|x| *x /= top);
            self.pi_log += top.ln();
        }
    }

    /// `⟨y, V_n⟩` (or `|V_n|` when `y` is `None`) compared strictly with `u`.
    pub(crate) fn exceeds(&self, y: Option<&[f64]>, u: f64) -> bool {
        let val = self.functional(y);
        if self.v_log == 0.0 {
            val > u
        } else {
            val.ln() + self.v_log > u.ln()
        }
    }

    pub(crate) fn functional(&self, y: Option<&[f64]>) -> f64 {
        match y {
            Some(y) => self.v.iter().zip(y).map(|(a, b)| a * b).sum(),
            None => self.v.iter().sum(),
        }
    }

    pub(crate) fn log_functional(&self, y: Option<&[f64]>) -> f64 {
        self.functional(y).ln() + self.v_log
    }

    pub(crate) fn direction(&self) -> Vec<f64> {
        let total: f64 = self.v.iter().sum();
        self.v.iter().map(|x| x / total).collect()
    }
}

/// One simulated first-passage record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassageSample {
    pub seed: u64,
    pub replicate: u64,
    /// Passage time, or the last simulated step when censored.
    pub tau: usize,
    pub censored: bool,
    /// `V_τ / |V_τ|` (at the last step when censored).
    pub direction: Vec<f64>,
    /// `|V_τ| − u`, or `⟨y, V_τ⟩ − u` for directional passage; `0` when censored.
    pub overshoot: f64,
    /// Log likelihood ratio of the untilted law against the sampling law; `0` for plain Monte Carlo.
    pub log_weight: f64,
}

impl PassageSample {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn passed_by(&self, n: usize) -> bool {
        !self.censored && self.tau <= n
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassageConfig {
    pub u: f64,
    pub max_steps: usize,
    pub seed: u64,
    /// Directional passage `⟨y, V_n⟩ > u` instead of `|V_n| > u`.
    pub direction: Option<DirectionPoint>,
}

impl PassageConfig {
    pub fn new(u: f64, max_steps: usize, seed: u64) -> Self {
        Self { u, max_steps, seed, direction: None }
    }

    pub fn with_direction(mut self, y: DirectionPoint) -> Self {
        self.direction = Some(y);
        self
    }

    fn validate(&self, d: usize) -> Result<()> {
        if !(self.u > 0.0) || !self.u.is_finite() {
            return Err(Error::Domain(format!("threshold u = {} must be positive", self.u)));
        }
        if self.max_steps == 0 {
            return Err(Error::Domain("max_steps must be at least 1".into()));
        }
        if let Some(y) = &self.direction {
            if y.dim() != d {
                return Err(Error::Domain("direction dimension differs from the law".into()));
            }
        }
        Ok(())
    }
}

/// Plain Monte Carlo first passage for replicate `replicate`.
pub fn simulate_tau(law: &MatrixQLaw, cfg: &PassageConfig, replicate: u64) -> Result<PassageSample> {
    cfg.validate(law.dim())?;
    Ok(tau_path(law, cfg, replicate))
}

fn tau_path(law: &MatrixQLaw, cfg: &PassageConfig, replicate: u64) -> PassageSample {
    let d = law.dim();
    let mut rng = stream_rng(cfg.seed, replicate);
    let mut m = vec![0.0; d * d];
    let mut q = vec![0.0; d];
    let y = cfg.direction.as_ref().map(|y| y.as_slice());
    let mut path = Perpetuity::new(d);
    for n in 1..=cfg.max_steps {
        law.sample_into(&mut rng, &mut m, &mut q);
        path.step(&m, &q);
        if path.exceeds(y, cfg.u) {
            return finish(cfg, replicate, n, false, &path, 0.0);
        }
    }
    finish(cfg, replicate, cfg.max_steps, true, &path, 0.0)
}

fn finish(cfg: &PassageConfig, replicate: u64, tau: usize, censored: bool, path: &Perpetuity, log_weight: f64) -> PassageSample {
    let y = cfg.direction.as_ref().map(|y| y.as_slice());
    let overshoot = if censored {
        0.0
    } else if path.v_log == 0.0 {
        path.functional(y) - cfg.u
    } else {
        (path.log_functional(y)).exp() - cfg.u
    };
    PassageSample { seed: cfg.seed, replicate, tau, censored, direction: path.direction(), overshoot, log_weight }
}

/// Exponentially tilted step kernel on the projective chain of `Π_nᵀ y₀` (`Transpose`)
/// or of `G_n x₀` (`Direct`).
///
/// From direction `x` atom `k` is drawn with probability
/// `p_k |g_k x|^s h(g_k·x) / Z(x)`, `Z(x) = Σ_j p_j |g_j x|^s h(g_j·x)`, where `h` is
/// the interpolated eigenfunction (`r*_s` for `Transpose`, `r_s` for `Direct`) and
/// `g` acts as `gᵀ` on the transposed chain. The log-weight increment
/// `log Z(x) − s log|g_k x| − log h(g_k·x)` makes the weighted estimator exactly
/// unbiased; it equals `log κ(s) + log h(x) − s log|g_k x| − log h(g_k·x)` up to the
/// eigen-residual of `h`.
#[derive(Clone, Debug)]
pub struct TiltKernel {
    pub s: f64,
    pub kappa: f64,
    pub side: Side,
    d: usize,
    mats: Vec<f64>,
    ps: Vec<f64>,
    grid: Arc<SimplexGrid>,
    h: Vec<f64>,
}

/// One tilted transition.
#[derive(Clone, Debug)]
pub struct TiltStep {
    pub atom: usize,
    pub log_weight_increment: f64,
    pub log_norm: f64,
}

impl TiltKernel {
    pub fn new(law: &MatrixQLaw, solution: &SpectralSolution, side: Side) -> Result<Self> {
        let atoms = law.require_atoms("tilted sampling")?;
        if solution.dim() != law.dim() {
            return Err(Error::Domain("spectral solution dimension differs from the law".into()));
        }
        let h = match side {
            Side::Direct => solution.r.clone(),
            Side::Transpose => solution.r_star.clone(),
        };
        if h.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain("eigenfunction is not positive on the grid".into()));
        }
        Ok(Self {
            s: solution.s,
            kappa: solution.kappa,
            side,
            d: law.dim(),
            mats: atoms.iter().flat_map(|a| a.m.as_slice().iter().copied()).collect(),
            ps: atoms.iter().map(|a| a.p).collect(),
            grid: Arc::clone(&solution.grid),
            h,
        })
    }

    pub fn h_at(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.h, x)
    }

    /// Tilted probabilities of the atoms from direction `x`, with `log Z(x)`.
    pub fn probabilities(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let d = self.d;
        let mut y = vec![0.0; d];
        let mut w: Vec<f64> = Vec::with_capacity(self.ps.len());
        for (k, p) in self.ps.iter().enumerate() {
            apply_side(self.side, d, &self.mats[k * d * d..(k + 1) * d * d], x, &mut y);
            let norm: f64 = y.iter().sum();
            y.iter_mut().for_each(|v| *v /= norm);
            w.push(p * (self.s * norm.ln()).exp() * self.h_at(&y));
        }
        let z: f64 = w.iter().sum();
        (w.into_iter().map(|v| v / z).collect(), z.ln())
    }

    /// Draws an atom from direction `x` and moves `x` to `g·x`.
    pub fn step<R: Rng + ?Sized>(&self, x: &mut [f64], rng: &mut R) -> TiltStep {
        let d = self.d;
        let (probs, log_z) = self.probabilities(x);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut atom = probs.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                atom = k;
                break;
            }
        }
        let mut y = vec![0.0; d];
        apply_side(self.side, d, &self.mats[atom * d * d..(atom + 1) * d * d], x, &mut y);
        let norm: f64 = y.iter().sum();
        for i in 0..d {
            x[i] = y[i] / norm;
        }
        let log_norm = norm.ln();
        TiltStep { atom, log_weight_increment: log_z - self.s * log_norm - self.h_at(x).ln(), log_norm }
    }
}

/// First passage under the tilted law of [`TiltKernel`] on the transposed chain, started
/// from `y` (directional passage) or from the uniform direction (norm passage, since
/// `|V| = d·⟨ȳ, V⟩`). `Q` keeps its conditional law given the atom.
pub fn simulate_tau_tilted(
    law: &MatrixQLaw,
    kernel: &TiltKernel,
    cfg: &PassageConfig,
    replicate: u64,
) -> Result<PassageSample> {
    cfg.validate(law.dim())?;
    if kernel.side != Side::Transpose {
        return Err(Error::Domain("passage tilting runs on the transposed chain".into()));
    }
    let atoms = law.require_atoms("tilted sampling")?;
    let d = law.dim();
    let mut rng = stream_rng(cfg.seed, replicate);
    let y = cfg.direction.as_ref().map(|y| y.as_slice());
    let mut x = match y {
        Some(y) => y.to_vec(),
        None => vec![1.0 / d as f64; d],
    };
    let mut path = Perpetuity::new(d);
    let mut log_w = 0.0;
    for n in 1..=cfg.max_steps {
        let st = kernel.step(&mut x, &mut rng);
        log_w += st.log_weight_increment;
        let a = &atoms[st.atom];
        path.step(a.m.as_slice(), a.q.as_slice());
        if path.exceeds(y, cfg.u) {
            return Ok(finish(cfg, replicate, n, false, &path, log_w));
        }
    }
    Ok(finish(cfg, replicate, cfg.max_steps, true, &path, log_w))
}

/// Replicates `0..count` of plain or tilted passage simulation, in replicate order.
pub fn run_replicates(
    law: &MatrixQLaw,
    cfg: &PassageConfig,
    kernel: Option<&TiltKernel>,
    count: usize,
) -> Result<Vec<PassageSample>> {
    cfg.validate(law.dim())?;
    match kernel {
        None => Ok(par_map(count, |i| tau_path(law, cfg, i))),
        Some(k) => par_map(count, |i| simulate_tau_tilted(law, k, cfg, i)).into_iter().collect(),
    }
}

/// Tilted draw of `log|G_n x|` on the direct chain, with the log weight at step `n`.
pub fn tilted_log_norm(kernel: &TiltKernel, x0: &DirectionPoint, n: usize, seed: u64, replicate: u64) -> (f64, f64) {
    let mut rng = stream_rng(seed, replicate);
    let mut x = x0.as_slice().to_vec();
    let mut log_norm = 0.0;
    let mut log_w = 0.0;
    for _ in 0..n {
        let st = kernel.step(&mut x, &mut rng);
        log_norm += st.log_norm;
        log_w += st.log_weight_increment;
    }
    (log_norm, log_w)
}

/// Independent draws of `V*_n` (equal in law to `V_n`), one stream per sample.
pub fn sample_v(law: &MatrixQLaw, n: usize, samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    if let Some(atoms) = law.atoms() {
        let drift: f64 = atoms.iter().map(|a| a.p * a.m.op_norm().ln()).sum();
        if drift >= 0.0 {
            log::warn!("{}: E log‖M‖ = {drift} >= 0, V_n need not approach a stationary law", law.name());
        }
    }
    let d = law.dim();
    let x0 = DirectionPoint::uniform(d);
    par_map(samples, |i| {
        let mut rng = stream_rng(seed, i);
        let mut st = PathState::new(&x0, i);
        let mut m = vec![0.0; d * d];
        let mut q = vec![0.0; d];
        for _ in 0..n {
            law.sample_into(&mut rng, &mut m, &mut q);
            forward_step_raw(&mut st, &m, &q)?;
        }
        let f = st.v_log_scale.exp();
        Ok(st.v.iter().map(|x| x * f).collect())
    })
    .into_iter()
    .collect()
}

/// `log|V*_n|` for stationary tail studies, robust to overflow.
pub fn sample_log_norm_v(law: &MatrixQLaw, n: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
    let d = law.dim();
    let x0 = DirectionPoint::uniform(d);
    par_map(samples, |i| {
        let mut rng = stream_rng(seed, i);
        let mut st = PathState::new(&x0, i);
        let mut m = vec![0.0; d * d];
        let mut q = vec![0.0; d];
        for _ in 0..n {
            law.sample_into(&mut rng, &mut m, &mut q);
            forward_step_raw(&mut st, &m, &q)?;
        }
        Ok(st.log_norm_v())
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests;
