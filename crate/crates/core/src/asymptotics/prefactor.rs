use serde::{Deserialize, Serialize};

use crate::oracle::{exact_w, EnumerationBudget};
use crate::simulate::{par_map, stream_rng, Perpetuity, TiltKernel};
use crate::spectral::{RateModel, Side, SpectralSolution};
use crate::{Error, Result};

const PLATEAU_REL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrefactorMethod {
    /// Exact enumeration of `W_n` for `n ≤ n_max`.
    Oracle { n_max: usize, max_paths: u64 },
    /// Tilted Monte Carlo of `W_n` at each `n` of the schedule.
    MonteCarlo { schedule: Vec<usize>, samples: usize, seed: u64 },
}

impl PrefactorMethod {
    pub fn oracle(n_max: usize) -> Self {
        Self::Oracle { n_max, max_paths: EnumerationBudget::default().max_paths }
    }

    pub fn monte_carlo(schedule: Vec<usize>, samples: usize, seed: u64) -> Self {
        Self::MonteCarlo { schedule, samples, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefactorEstimate {
    pub s: f64,
    pub varkappa: f64,
    pub varkappa_ci: (f64, f64),
    /// `lim κ(s)^{−n} E[|V_n|^s r_s(V_n/|V_n|)]` and its interval.
    pub limit: f64,
    pub limit_ci: (f64, f64),
    /// `(n, W_n, standard error)`; the error is zero for the oracle.
    pub limit_trace: Vec<(usize, f64, f64)>,
    pub plateau: bool,
    pub nu_r: f64,
    pub method: PrefactorMethod,
}

/// `√Λ'(s) / (s σ_s ν_s(r_s) √(2π)) · limit`.
pub fn varkappa_from_limit(solution: &SpectralSolution, lambda_prime: f64, sigma: f64, limit: f64) -> f64 {
    let s = solution.s;
    lambda_prime.sqrt() / (s * sigma * solution.nu_r() * (2.0 * std::f64::consts::PI).sqrt()) * limit
}

pub fn prefactor_varkappa(model: &RateModel, s: f64, method: &PrefactorMethod) -> Result<PrefactorEstimate> {
    if !(s > model.alpha) {
        return Err(Error::Domain(format!("s = {s} must exceed alpha = {}", model.alpha)));
    }
    let gamma = model.derivs(s)?;
    let sigma = gamma[2].sqrt();
    let sol = model.solution(s)?;
    let trace = match method {
        PrefactorMethod::Oracle { n_max, max_paths } => {
            let budget = EnumerationBudget { max_paths: *max_paths, ..Default::default() };
            let w = exact_w(model.law(), &sol, *n_max, budget)?;
            w.w.iter().enumerate().map(|(i, &v)| (i + 1, v, 0.0)).collect::<Vec<_>>()
        }
        PrefactorMethod::MonteCarlo { schedule, samples, seed } => mc_trace(model, &sol, schedule, *samples, *seed)?,
    };
    let (limit, limit_ci, plateau) = plateau(&trace);
    if !(limit > 0.0) {
        return Err(Error::Domain(format!("non-positive limit estimate {limit}")));
    }
    if !plateau {
        log::warn!("prefactor at s = {s}: no plateau within the schedule, interval widened");
    }
    let k = |x| varkappa_from_limit(&sol, gamma[1], sigma, x);
    Ok(PrefactorEstimate {
        s,
        varkappa: k(limit),
        varkappa_ci: (k(limit_ci.0), k(limit_ci.1)),
        limit,
        limit_ci,
        limit_trace: trace,
        plateau,
        nu_r: sol.nu_r(),
        method: method.clone(),
    })
}

/// Plateau rule: the last three points agree within the larger of `1e-4` relative and
/// twice the standard error. Otherwise an exact trace is extrapolated by Aitken's Δ²
/// (interval from the last value to twice the extrapolated increment), and a Monte
/// Carlo trace keeps its last value with an interval covering the last three points.
fn plateau(trace: &[(usize, f64, f64)]) -> (f64, (f64, f64), bool) {
    let (_, last, se) = *trace.last().expect("non-empty trace");
    let half = 2.0 * se;
    if trace.len() < 3 {
        return (last, (last - half, last + half.max(last)), false);
    }
    let t = &trace[trace.len() - 3..];
    let tol = (PLATEAU_REL * last.abs()).max(half);
    if (t[0].1 - last).abs() <= tol && (t[1].1 - last).abs() <= tol {
        return (last, (last - tol, last + tol), true);
    }
    if se > 0.0 {
        let lo = t.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let hi = t.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        return (last, (lo - half, hi + half), false);
    }
    let (d1, d2) = (t[1].1 - t[0].1, t[2].1 - t[1].1);
    let ratio = d2 / d1;
    let extra = if d1 != 0.0 && ratio > 0.0 && ratio < 1.0 { d2 * ratio / (1.0 - ratio) } else { d2.abs() * 10.0 };
    (last + extra, (last.min(last + extra), last.max(last + 2.0 * extra)), false)
}

/// Tilted estimate of `W_n` on the transposed chain from the uniform direction: the
/// tilt makes `κ^{−n}|Π_nᵀ ȳ|^s` cancel against the weight, so the summand stays bounded.
fn mc_trace(
    model: &RateModel,
    sol: &SpectralSolution,
    schedule: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<(usize, f64, f64)>> {
    let mut sched = schedule.to_vec();
    sched.sort_unstable();
    sched.dedup();
    if sched.is_empty() || sched[0] == 0 || samples < 2 {
        return Err(Error::Domain("schedule must list positive n and samples must be at least 2".into()));
    }
    let law = model.law();
    let atoms = law.require_atoms("tilted prefactor estimation")?;
    let kernel = TiltKernel::new(law, sol, Side::Transpose)?;
    let d = law.dim();
    let s = sol.s;
    let ln_kappa = sol.kappa.ln();
    let n_max = *sched.last().unwrap();
    let rows = par_map(samples, |i| {
        let mut rng = stream_rng(seed, i);
        let mut x = vec![1.0 / d as f64; d];
        let mut path = Perpetuity::new(d);
        let mut log_w = 0.0;
        let mut out = Vec::with_capacity(sched.len());
        let mut next = 0;
        for n in 1..=n_max {
            let st = kernel.step(&mut x, &mut rng);
            log_w += st.log_weight_increment;
            let a = &atoms[st.atom];
            path.step(a.m.as_slice(), a.q.as_slice());
            if n == sched[next] {
                let lv = path.log_functional(None);
                out.push((log_w + s * lv - n as f64 * ln_kappa).exp() * sol.r_at(&path.direction()));
                next += 1;
            }
        }
        out
    });
    Ok(sched
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let mut sum = crate::numeric::CompensatedSum::new();
            let mut sq = crate::numeric::CompensatedSum::new();
            for r in &rows {
                sum.add(r[j]);
                sq.add(r[j] * r[j]);
            }
            let m = sum.value() / samples as f64;
            let var = (sq.value() / samples as f64 - m * m).max(0.0) * samples as f64 / (samples - 1) as f64;
            (n, m, (var / samples as f64).sqrt())
        })
        .collect())
}
