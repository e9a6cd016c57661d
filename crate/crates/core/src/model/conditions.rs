use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MatrixQLaw, NonnegMatrix};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    Pass,
    Warn,
}

/// Evidence on the non-arithmeticity condition: logarithms of Perron roots of
/// strictly positive products and a verdict from pairwise ratio tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A3Evidence {
    pub verdict: Heuristic,
    pub log_eigenvalues: Vec<f64>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub allowable: bool,
    pub non_allowable_atoms: Vec<usize>,
    pub has_positive_product: bool,
    /// Atom indices `k_1 .. k_L` with `M_{k_1} ⋯ M_{k_L}` strictly positive.
    pub witness: Option<Vec<usize>>,
    pub witness_length: Option<usize>,
    pub search_horizon: usize,
    /// `max` over atoms and columns of `max_i g_ij / min_i g_ij`; absent when some column has a zero.
    pub column_ratio_c: Option<f64>,
    pub nonarith: A3Evidence,
    pub moment_flags: Vec<String>,
    /// Set for sampler-only laws, where the checks run on a fixed sample of draws.
    pub heuristic: bool,
}

impl ConditionReport {
    pub fn require_allowable(&self) -> Result<()> {
        match self.non_allowable_atoms.first() {
            Some(&k) => Err(Error::NonAllowable(k)),
            None => Ok(()),
        }
    }

    pub fn require_positive_product(&self) -> Result<()> {
        if self.has_positive_product {
            Ok(())
        } else {
            Err(Error::NoPositiveProduct(self.search_horizon))
        }
    }
}

const SPOT_CHECK_DRAWS: usize = 256;
const A3_MAX_PRODUCTS: usize = 512;

pub fn check_conditions(law: &MatrixQLaw, max_product_len: usize) -> Result<ConditionReport> {
    let d = law.dim();
    let (matrices, heuristic) = match law.atoms() {
        Some(atoms) => (atoms.iter().map(|a| a.m.clone()).collect::<Vec<_>>(), false),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let mut m = vec![0.0; d * d];
            let mut q = vec![0.0; d];
            let mut out = Vec::with_capacity(SPOT_CHECK_DRAWS);
            for _ in 0..SPOT_CHECK_DRAWS {
                law.sample_into(&mut rng, &mut m, &mut q);
                out.push(NonnegMatrix::from_row_major(d, m.clone())?);
            }
            (out, true)
        }
    };

    let non_allowable_atoms: Vec<usize> =
        matrices.iter().enumerate().filter(|(_, m)| !m.is_allowable()).map(|(k, _)| k).collect();

    let witness = positive_product_search(&matrices, max_product_len);
    if let Some(w) = &witness {
        let prod = w.iter().skip(1).fold(matrices[w[0]].clone(), |acc, &k| acc.mul(&matrices[k]));
        debug_assert!(prod.is_positive());
    }

    let column_ratio_c = column_ratio(&matrices);
    let nonarith = nonarith_evidence(&matrices, max_product_len.max(1));

    let mut moment_flags = Vec::new();
    match (law.atoms(), law.moment_limit()) {
        (Some(_), _) => moment_flags.push("finite support: all moments finite".to_string()),
        (None, Some(s)) => moment_flags.push(format!("moments declared finite for s < {s}")),
        (None, None) => moment_flags.push("sampler law without declared moment limit".to_string()),
    }

    Ok(ConditionReport {
        allowable: non_allowable_atoms.is_empty(),
        non_allowable_atoms,
        has_positive_product: witness.is_some(),
        witness_length: witness.as_ref().map(|w| w.len()),
        witness,
        search_horizon: max_product_len,
        column_ratio_c,
        nonarith,
        moment_flags,
        heuristic,
    })
}

fn pattern(m: &NonnegMatrix) -> Vec<bool> {
    m.as_slice().iter().map(|&x| x > 0.0).collect()
}

fn pattern_mul(d: usize, a: &[bool], b: &[bool]) -> Vec<bool> {
    let mut out = vec![false; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).any(|k| a[i * d + k] && b[k * d + j]);
        }
    }
    out
}

/// Breadth-first search over zero patterns of products; products of nonnegative
/// matrices have exactly the boolean product pattern.
fn positive_product_search(matrices: &[NonnegMatrix], max_len: usize) -> Option<Vec<usize>> {
    let d = matrices.first()?.dim();
    let pats: Vec<Vec<bool>> = matrices.iter().map(pattern).collect();
    let mut seen: BTreeSet<Vec<bool>> = BTreeSet::new();
    let mut frontier: Vec<(Vec<bool>, Vec<usize>)> = Vec::new();
    for (k, p) in pats.iter().enumerate() {
        if seen.insert(p.clone()) {
            frontier.push((p.clone(), vec![k]));
        }
    }
    for _ in 0..max_len {
        if let Some((_, w)) = frontier.iter().find(|(p, _)| p.iter().all(|&b| b)) {
            return Some(w.clone());
        }
        let mut next = Vec::new();
        for (p, w) in &frontier {
            for (k, q) in pats.iter().enumerate() {
                let r = pattern_mul(d, p, q);
                if seen.insert(r.clone()) {
                    let mut w2 = w.clone();
                    w2.push(k);
                    next.push((r, w2));
                }
            }
        }
        if next.is_empty() {
            return None;
        }
        frontier = next;
    }
    None
}

fn column_ratio(matrices: &[NonnegMatrix]) -> Option<f64> {
    let mut c: f64 = 1.0;
    for m in matrices {
        let d = m.dim();
        for j in 0..d {
            let col = (0..d).map(|i| m.get(i, j));
            let (lo, hi) = col.fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
            if lo <= 0.0 {
                return None;
            }
            c = c.max(hi / lo);
        }
    }
    Some(c)
}

/// Is `x` within `tol` of a rational with denominator at most `max_den`?
fn near_rational(x: f64, max_den: u64, tol: f64) -> bool {
    let (mut h0, mut h1) = (0.0f64, 1.0f64);
    let (mut k0, mut k1) = (1.0f64, 0.0f64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let (h2, k2) = (a * h1 + h0, a * k1 + k0);
        if k2 > max_den as f64 {
            return false;
        }
        if (x - h2 / k2).abs() <= tol * x.abs().max(1.0) {
            return true;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a;
        if frac.abs() < 1e-15 {
            return (x - h1 / k1).abs() <= tol * x.abs().max(1.0);
        }
        r = 1.0 / frac;
    }
    false
}

fn nonarith_evidence(matrices: &[NonnegMatrix], max_len: usize) -> A3Evidence {
    let mut logs: Vec<f64> = Vec::new();
    let mut level: Vec<NonnegMatrix> = matrices.to_vec();
    let mut examined = 0usize;
    'outer: for len in 1..=max_len {
        for m in &level {
            examined += 1;
            if m.is_positive() || m.dim() == 1 && m.get(0, 0) > 0.0 {
                let l = m.dominant_eigenvalue().ln();
                if l.abs() > 1e-12 && !logs.iter().any(|&x| (x - l).abs() <= 1e-12 * l.abs()) {
                    logs.push(l);
                }
            }
            if examined >= A3_MAX_PRODUCTS {
                break 'outer;
            }
        }
        if len == max_len {
            break;
        }
        let mut next = Vec::with_capacity(level.len() * matrices.len());
        for m in &level {
            for a in matrices {
                next.push(m.mul(a));
                if next.len() + examined >= A3_MAX_PRODUCTS {
                    break;
                }
            }
        }
        level = next;
    }

    let witness = logs.iter().enumerate().find_map(|(i, &a)| {
        logs[i + 1..].iter().find(|&&b| !near_rational(a / b, 64, 1e-9)).map(|&b| (a, b))
    });
    let (verdict, note) = match (logs.len(), witness) {
        (0, _) => (Heuristic::Warn, "no strictly positive product with Perron root != 1 found".to_string()),
        (_, Some((a, b))) => (
            Heuristic::Pass,
            format!("log-eigenvalue ratio {a:.6}/{b:.6} is not close to a small rational"),
        ),
        (_, None) => (
            Heuristic::Warn,
            format!("all {} log-eigenvalues are rationally related; the law looks arithmetic", logs.len()),
        ),
    };
    A3Evidence { verdict, log_eigenvalues: logs, note }
}
