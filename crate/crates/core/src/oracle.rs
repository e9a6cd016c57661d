//! Exact computations for finite-support laws by enumerating atom sequences.
//!
//! The traversal is depth-first with one preallocated state per depth, split over
//! the first atom for parallelism and merged in atom order. Branches whose
//! probability falls below the pruning tolerance are skipped and their mass is
//! reported, so every result is an interval `[value, value + pruned]`.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::model::{Atom, DirectionPoint, MatrixQLaw};
use crate::numeric::CompensatedSum;
use crate::simulate::{par_map, Perpetuity};
use crate::spectral::SpectralSolution;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumerationBudget {
    /// Cap on the number of enumerated nodes (partial paths).
    pub max_paths: u64,
    /// Branches with probability below this are pruned; `0` disables pruning.
    pub prune_below: f64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        Self { max_paths: 1 << 28, prune_below: 0.0 }
    }
}

/// `P(τ_u = n)` for `n = 1..=n_max` and `P(τ_u > n_max)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassageLaw {
    pub u: f64,
    /// `probs[n - 1] = P(τ_u = n)`.
    pub probs: Vec<f64>,
    pub tail: f64,
    pub pruned: f64,
}

impl PassageLaw {
    pub fn n_max(&self) -> usize {
        self.probs.len()
    }

    pub fn at(&self, n: usize) -> f64 {
        if n == 0 || n > self.probs.len() {
            0.0
        } else {
            self.probs[n - 1]
        }
    }

    /// `P(τ_u ≤ n)`.
    pub fn cdf(&self, n: usize) -> f64 {
        let mut acc = CompensatedSum::new();
        for p in self.probs.iter().take(n) {
            acc.add(*p);
        }
        acc.value()
    }

    pub fn total_mass(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        self.probs.iter().for_each(|p| acc.add(*p));
        acc.add(self.tail);
        acc.add(self.pruned);
        acc.value()
    }
}

struct Walk<'a> {
    atoms: &'a [Atom],
    n_max: usize,
    budget: EnumerationBudget,
    nodes: AtomicU64,
}

impl Walk<'_> {
    /// Runs `visit(depth, prob, state, buckets)` at every node; the return value says
    /// whether to descend. The last bucket collects pruned mass.
    fn run<V>(&self, d: usize, buckets: usize, visit: V) -> Result<Vec<f64>>
    where
        V: Fn(usize, f64, &Perpetuity, &mut [CompensatedSum]) -> bool + Sync,
    {
        let parts = par_map(self.atoms.len(), |k| {
            let mut states: Vec<Perpetuity> = (0..=self.n_max).map(|_| Perpetuity::new(d)).collect();
            let mut acc = vec![CompensatedSum::new(); buckets + 1];
            self.node(k as usize, 1, 1.0, &mut states, &mut acc, &visit).map(|_| acc)
        });
        let mut total = vec![CompensatedSum::new(); buckets + 1];
        for part in parts {
            for (t, p) in total.iter_mut().zip(part?) {
                t.merge(&p);
            }
        }
        Ok(total.iter().map(|c| c.value()).collect())
    }

    fn node<V>(
        &self,
        k: usize,
        depth: usize,
        prob: f64,
        states: &mut [Perpetuity],
        acc: &mut [CompensatedSum],
        visit: &V,
    ) -> Result<()>
    where
        V: Fn(usize, f64, &Perpetuity, &mut [CompensatedSum]) -> bool + Sync,
    {
        let a = &self.atoms[k];
        let p = prob * a.p;
        if p < self.budget.prune_below {
            acc.last_mut().unwrap().add(p);
            return Ok(());
        }
        if self.nodes.fetch_add(1, Ordering::Relaxed) >= self.budget.max_paths {
            return Err(Error::Budget(format!("more than {} nodes at depth {}", self.budget.max_paths, self.n_max)));
        }
        let (prev, rest) = states.split_at_mut(depth);
        rest[0].copy_from(&prev[depth - 1]);
        rest[0].step(a.m.as_slice(), a.q.as_slice());
        if visit(depth, p, &rest[0], acc) && depth < self.n_max {
            for j in 0..self.atoms.len() {
                self.node(j, depth + 1, p, states, acc, visit)?;
            }
        }
        Ok(())
    }
}

fn walk<'a>(law: &'a MatrixQLaw, n_max: usize, budget: EnumerationBudget, what: &'static str) -> Result<Walk<'a>> {
    let atoms = law.require_atoms(what)?;
    if n_max == 0 {
        return Err(Error::Domain("n_max must be at least 1".into()));
    }
    Ok(Walk { atoms, n_max, budget, nodes: AtomicU64::new(0) })
}

/// Exact law of `τ_u` (or `τ_u^y`) up to `n_max`.
pub fn exact_passage_law(
    law: &MatrixQLaw,
    u: f64,
    n_max: usize,
    y: Option<&DirectionPoint>,
    budget: EnumerationBudget,
) -> Result<PassageLaw> {
    if !(u >= 0.0) {
        return Err(Error::Domain(format!("threshold u = {u}")));
    }
    let w = walk(law, n_max, budget, "exact_passage_law")?;
    let y = y.map(|y| y.as_slice());
    let out = w.run(law.dim(), n_max + 1, |depth, p, st, acc| {
        if st.exceeds(y, u) {
            acc[depth - 1].add(p);
            false
        } else {
            if depth == n_max {
                acc[n_max].add(p);
            }
            true
        }
    })?;
    Ok(PassageLaw { u, probs: out[..n_max].to_vec(), tail: out[n_max], pruned: out[n_max + 1] })
}

/// `E‖Π_n‖^s` for `n = 1..=n_max` and every `s` in `s_values`; `out[n - 1][j]`.
pub fn exact_matrix_moments(
    law: &MatrixQLaw,
    s_values: &[f64],
    n_max: usize,
    budget: EnumerationBudget,
) -> Result<Vec<Vec<f64>>> {
    let w = walk(law, n_max, budget, "exact_matrix_moment")?;
    let ns = s_values.len();
    let d = law.dim();
    let out = w.run(d, n_max * ns, |depth, p, st, acc| {
        let log_norm = st.pi_log + op_norm_raw(d, &st.pi).ln();
        for (j, &s) in s_values.iter().enumerate() {
            acc[(depth - 1) * ns + j].add(p * (s * log_norm).exp());
        }
        true
    })?;
    Ok(out[..n_max * ns].chunks(ns).map(|c| c.to_vec()).collect())
}

pub fn exact_matrix_moment(law: &MatrixQLaw, s: f64, n: usize, budget: EnumerationBudget) -> Result<f64> {
    Ok(exact_matrix_moments(law, &[s], n, budget)?[n - 1][0])
}

fn op_norm_raw(d: usize, m: &[f64]) -> f64 {
    (0..d).map(|j| (0..d).map(|i| m[i * d + j]).sum::<f64>()).fold(0.0, f64::max)
}

/// Trace of `W_n = E[|V_n|^s r_s(V_n/|V_n|)] / κ(s)^n` and of `E|V_n|^s / κ(s)^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WTrace {
    pub s: f64,
    pub w: Vec<f64>,
    pub plain: Vec<f64>,
    pub pruned: f64,
}

pub fn exact_w(law: &MatrixQLaw, solution: &SpectralSolution, n_max: usize, budget: EnumerationBudget) -> Result<WTrace> {
    if solution.dim() != law.dim() {
        return Err(Error::Domain("spectral solution dimension differs from the law".into()));
    }
    let s = solution.s;
    let w = walk(law, n_max, budget, "exact_W")?;
    let ln_kappa = solution.kappa.ln();
    let out = w.run(law.dim(), 2 * n_max, |depth, p, st, acc| {
        let ln_v = st.log_functional(None);
        let scale = (s * ln_v - depth as f64 * ln_kappa).exp();
        let r = solution.r_at(&st.direction());
        acc[2 * (depth - 1)].add(p * scale * r);
        acc[2 * (depth - 1) + 1].add(p * scale);
        true
    })?;
    Ok(WTrace {
        s,
        w: (0..n_max).map(|i| out[2 * i]).collect(),
        plain: (0..n_max).map(|i| out[2 * i + 1]).collect(),
        pruned: out[2 * n_max],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    pub norm: f64,
    pub directional: Vec<f64>,
    pub pruned: f64,
}

/// `P(|V_n| > u)` and `P(⟨y, V_n⟩ > u)` for each requested `y`.
pub fn exact_exceedance(
    law: &MatrixQLaw,
    u: f64,
    n: usize,
    ys: &[DirectionPoint],
    budget: EnumerationBudget,
) -> Result<Exceedance> {
    let w = walk(law, n, budget, "exact_exceedance")?;
    let ny = ys.len();
    let out = w.run(law.dim(), 1 + ny, |depth, p, st, acc| {
        // V_n is nondecreasing in n, so exceedance at an earlier depth persists
        let all = st.exceeds(None, u) && ys.iter().all(|y| st.exceeds(Some(y.as_slice()), u));
        if depth == n || all {
            if st.exceeds(None, u) {
                acc[0].add(p);
            }
            for (j, y) in ys.iter().enumerate() {
                if st.exceeds(Some(y.as_slice()), u) {
                    acc[1 + j].add(p);
                }
            }
            return false;
        }
        true
    })?;
    Ok(Exceedance { norm: out[0], directional: out[1..=ny].to_vec(), pruned: out[1 + ny] })
}

/// `P(log|Π_n x| ≥ n q)`, or `P(log⟨y, Π_n x⟩ ≥ n q)` when `y` is given.
///
/// One-dimensional laws are summed over multinomial atom counts instead of paths.
pub fn exact_matrix_ld(
    law: &MatrixQLaw,
    n: usize,
    q: f64,
    x: &DirectionPoint,
    y: Option<&DirectionPoint>,
    budget: EnumerationBudget,
) -> Result<f64> {
    let atoms = law.require_atoms("exact_matrix_ld")?;
    let target = n as f64 * q;
    let slack = 1e-12 * target.abs().max(1.0);
    if law.dim() == 1 {
        let logs: Vec<f64> = atoms.iter().map(|a| a.m.get(0, 0).ln()).collect();
        let ps: Vec<f64> = atoms.iter().map(|a| a.p).collect();
        let mut acc = CompensatedSum::new();
        let mut counts = vec![0usize; atoms.len()];
        multinomial(n, 0, &mut counts, &mut |c| {
            let l: f64 = c.iter().zip(&logs).map(|(&k, &lg)| k as f64 * lg).sum();
            if l >= target - slack {
                acc.add(multinomial_prob(n, c, &ps));
            }
        });
        return Ok(acc.value());
    }
    let d = law.dim();
    let w = walk(law, n, budget, "exact_matrix_ld")?;
    let xs = x.as_slice();
    let out = w.run(d, 1, |depth, p, st, acc| {
        if depth < n {
            return true;
        }
        let px: Vec<f64> = (0..d).map(|i| (0..d).map(|j| st.pi[i * d + j] * xs[j]).sum()).collect();
        let inner: f64 = match y {
            Some(y) => px.iter().zip(y.as_slice()).map(|(a, b)| a * b).sum(),
            None => px.iter().sum(),
        };
        if st.pi_log + inner.ln() >= target - slack {
            acc[0].add(p);
        }
        false
    })?;
    Ok(out[0])
}

fn multinomial(left: usize, idx: usize, counts: &mut [usize], f: &mut dyn FnMut(&[usize])) {
    if idx + 1 == counts.len() {
        counts[idx] = left;
        f(counts);
        return;
    }
    for c in 0..=left {
        counts[idx] = c;
        multinomial(left - c, idx + 1, counts, f);
    }
}

fn multinomial_prob(n: usize, counts: &[usize], ps: &[f64]) -> f64 {
    let ln_fact = |k: usize| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    let mut l = ln_fact(n);
    for (&c, &p) in counts.iter().zip(ps) {
        l += c as f64 * p.ln() - ln_fact(c);
    }
    l.exp()
}
