//! Statistical comparison of predictions with simulation and enumeration, producing
//! serializable pass/fail reports. Thresholds live in the per-check configs; the
//! defaults are the desk-scale baseline.

mod stats;

pub use stats::{hill_estimator, ks_statistic, weighted_ks};

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    kesten_prefactor, lln_window, local_to_cumulative_ratio, predict_clt, predict_ld, predict_matrix_ld, rate_i,
    PrefactorEstimate, PrefactorMethod,
};
use crate::model::{check_conditions, DirectionPoint, Heuristic, MatrixQLaw};
use crate::numeric::normal_cdf;
use crate::oracle::{exact_matrix_ld, exact_passage_law, EnumerationBudget};
use crate::simulate::{par_map, run_replicates, sample_v, tilted_log_norm, PassageConfig, TiltKernel};
use crate::spectral::{Pressure, RateModel, Side};
use crate::{Error, Result};
use stats::{effective_sample_size, mean_se, weighted_fraction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theorem {
    Kesten,
    Lln,
    Clt,
    Ld,
    Local,
    #[serde(rename = "matrixld")]
    MatrixLd,
}

impl Theorem {
    pub const ALL: [Theorem; 6] =
        [Theorem::Kesten, Theorem::Lln, Theorem::Clt, Theorem::Ld, Theorem::Local, Theorem::MatrixLd];

    pub fn name(self) -> &'static str {
        match self {
            Theorem::Kesten => "kesten",
            Theorem::Lln => "lln",
            Theorem::Clt => "clt",
            Theorem::Ld => "ld",
            Theorem::Local => "local",
            Theorem::MatrixLd => "matrixld",
        }
    }
}

impl FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Theorem::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown theorem `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
    Inapplicable,
}

/// One compared quantity; `x` is the abscissa (`u`, `log u` or `n`) named by `label`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub x: f64,
    pub predicted: Option<f64>,
    pub empirical: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub statistic: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub theorem: Theorem,
    pub law: String,
    pub law_hash: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub rows: Vec<ReportRow>,
    pub criteria: Vec<Criterion>,
    pub verdict: Verdict,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    pub seeds: Vec<u64>,
    /// Wall time; kept out of the serialized form so reruns compare byte-for-byte.
    #[serde(skip)]
    pub runtime_ms: f64,
}

impl VerificationReport {
    fn new(theorem: Theorem, law: &MatrixQLaw) -> Self {
        Self {
            theorem,
            law: law.name().to_string(),
            law_hash: law.hash().to_string(),
            parameters: BTreeMap::new(),
            rows: vec![],
            criteria: vec![],
            verdict: Verdict::Pass,
            warnings: vec![],
            notes: vec![],
            seeds: vec![],
            runtime_ms: 0.0,
        }
    }

    fn param(&mut self, key: &str, value: impl Serialize) {
        self.parameters.insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    fn row(&mut self, label: &str, x: f64, predicted: Option<f64>, empirical: Option<f64>, ci: Option<(f64, f64)>, statistic: Option<f64>) {
        self.rows.push(ReportRow { label: label.to_string(), x, predicted, empirical, ci, statistic });
    }

    fn criterion(&mut self, name: impl Into<String>, value: f64, threshold: f64, passed: bool) {
        self.criteria.push(Criterion { name: name.into(), value, threshold, passed });
    }

    fn finish(mut self, started: Instant) -> Self {
        self.runtime_ms = started.elapsed().as_secs_f64() * 1e3;
        if self.verdict != Verdict::Inapplicable {
            self.verdict = if self.criteria.iter().any(|c| !c.passed) {
                Verdict::Fail
            } else if self.warnings.is_empty() {
                Verdict::Pass
            } else {
                Verdict::Warn
            };
        }
        self
    }

    pub fn failed(&self) -> bool {
        self.verdict == Verdict::Fail
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Report for a check whose hypotheses fail for this law.
pub fn inapplicable(theorem: Theorem, law: &MatrixQLaw, reason: impl Into<String>) -> VerificationReport {
    let mut r = VerificationReport::new(theorem, law);
    r.verdict = Verdict::Inapplicable;
    r.notes.push(reason.into());
    r
}

/// `v[i+1] ≤ v[i] + slack·√(se_i² + se_{i+1}²)` along the sequence.
fn non_increasing(values: &[f64], ses: &[f64], slack: f64) -> bool {
    values.windows(2).zip(ses.windows(2)).all(|(v, s)| v[1] <= v[0] + slack * (s[0] * s[0] + s[1] * s[1]).sqrt())
}

/// Weighted `τ_u` samples conditioned on `τ_u < ∞`, drawn under the tilt at `α` (where
/// passage is certain) and self-normalized.
#[derive(Clone, Debug)]
pub struct ConditionedTau {
    pub tau: Vec<f64>,
    pub weights: Vec<f64>,
    pub censored: usize,
}

pub fn conditioned_tau(law: &MatrixQLaw, model: &RateModel, u: f64, samples: usize, seed: u64) -> Result<ConditionedTau> {
    let sol = model.solution(model.alpha)?;
    let kernel = TiltKernel::new(law, &sol, Side::Transpose)?;
    let max_steps = (10.0 * model.rho * u.ln()).ceil() as usize + 50;
    let cfg = PassageConfig::new(u, max_steps, seed);
    let out = run_replicates(law, &cfg, Some(&kernel), samples)?;
    let shift = out.iter().filter(|p| !p.censored).map(|p| p.log_weight).fold(f64::NEG_INFINITY, f64::max);
    let mut tau = Vec::with_capacity(out.len());
    let mut weights = Vec::with_capacity(out.len());
    let mut censored = 0;
    for p in &out {
        if p.censored {
            censored += 1;
        } else {
            tau.push(p.tau as f64);
            weights.push((p.log_weight - shift).exp());
        }
    }
    Ok(ConditionedTau { tau, weights, censored })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KestenConfig {
    pub samples: usize,
    /// Steps of the forward recursion before a draw counts as stationary.
    pub burn_in: usize,
    pub seed: u64,
    /// Hill estimator uses the top `hill_fraction · samples` order statistics.
    pub hill_fraction: f64,
    pub tolerance: f64,
    pub u_grid: Option<Vec<f64>>,
    pub direction: Option<DirectionPoint>,
}

impl Default for KestenConfig {
    fn default() -> Self {
        Self { samples: 200_000, burn_in: 300, seed: 1, hill_fraction: 0.005, tolerance: 0.1, u_grid: None, direction: None }
    }
}

pub fn check_kesten(law: &MatrixQLaw, model: Option<&RateModel>, cfg: &KestenConfig) -> Result<VerificationReport> {
    let started = Instant::now();
    let Some(model) = model else {
        return Ok(inapplicable(Theorem::Kesten, law, "Λ has no positive root: no heavy tail; A1 violated"));
    };
    let draws = sample_v(law, cfg.burn_in, cfg.samples, cfg.seed)?;
    let logs: Vec<f64> = draws.iter().map(|v| v.iter().sum::<f64>().ln()).collect();
    let mut r = kesten_report(law, model.alpha, &logs, cfg)?;
    r.seeds.push(cfg.seed);
    r.param("burn_in", cfg.burn_in);
    if let Some(y) = &cfg.direction {
        let dir: Vec<f64> = draws.iter().map(|v| v.iter().zip(y.as_slice()).map(|(a, b)| a * b).sum::<f64>().ln()).collect();
        let grid: Vec<f64> = r.rows.iter().filter(|row| row.label == "u^alpha P(|V| > u)").map(|row| row.x).collect();
        let norm = kesten_prefactor(&logs, model.alpha, &grid)?;
        let directional = kesten_prefactor(&dir, model.alpha, &grid)?;
        let spectral = crate::spectral::r_star_eval(&*model.solution(model.alpha)?, y)?;
        let ratio = directional.c / norm.c;
        let rel = ((directional.ci.1 - directional.ci.0) / directional.c + (norm.ci.1 - norm.ci.0) / norm.c) / 2.0;
        r.row("directional / norm constant", 0.0, Some(spectral), Some(ratio), Some((ratio * (1.0 - rel), ratio * (1.0 + rel))), None);
        r.param("direction", y);
    }
    Ok(r.finish(started))
}

/// Kesten check on given draws of `log|V|` (usable with synthetic data).
pub fn kesten_report(law: &MatrixQLaw, alpha: f64, log_samples: &[f64], cfg: &KestenConfig) -> Result<VerificationReport> {
    let started = Instant::now();
    let mut r = VerificationReport::new(Theorem::Kesten, law);
    r.param("samples", log_samples.len());
    r.param("hill_fraction", cfg.hill_fraction);
    let n = log_samples.len();
    let k = ((cfg.hill_fraction * n as f64) as usize).clamp(10, n.saturating_sub(1).max(1));
    if n < 100 {
        return Err(Error::Budget(format!("{n} samples are too few for a tail fit")));
    }
    let hill = hill_estimator(log_samples, k);
    let mut sorted = log_samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let grid = match &cfg.u_grid {
        Some(g) => g.clone(),
        None => {
            let lo = sorted[((0.95 * n as f64) as usize).min(n - 1)];
            let hi = sorted[n.saturating_sub(200).max(1)];
            (0..10).map(|i| (lo + (hi - lo) * i as f64 / 9.0).exp()).collect()
        }
    };
    r.param("u_grid", &grid);
    r.row("hill alpha", k as f64, Some(alpha), Some(hill), Some((hill * (1.0 - 1.96 / (k as f64).sqrt()), hill * (1.0 + 1.96 / (k as f64).sqrt()))), None);
    match kesten_prefactor(log_samples, alpha, &grid) {
        Ok(est) => {
            for p in &est.points {
                r.row("u^alpha P(|V| > u)", p.u, None, Some(p.scaled), Some((p.scaled - 1.96 * p.std_error, p.scaled + 1.96 * p.std_error)), None);
            }
            r.row("tail constant", 0.0, None, Some(est.c), Some(est.ci), Some(est.flatness));
            if !est.plateau {
                r.warnings.push(format!("u^alpha P(|V| > u) is not flat (statistic {:.2}): pre-asymptotic grid", est.flatness));
            }
        }
        Err(e) => r.warnings.push(format!("tail constant not estimated: {e}")),
    }
    let rel = (hill - alpha).abs() / alpha;
    r.criterion(format!("|hill - alpha| / alpha <= {}", cfg.tolerance), rel, cfg.tolerance, rel <= cfg.tolerance);
    Ok(r.finish(started))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnConfig {
    /// `log u` values.
    pub log_u: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    /// Relative half-width: the band is `ρ(1 ± eps)`.
    pub eps: f64,
    /// Window constant; defaults to `ρ(1+α+0.1) + ρ²σ_α²`.
    pub b: Option<f64>,
    pub max_final_fraction: f64,
}

impl Default for LlnConfig {
    fn default() -> Self {
        Self { log_u: vec![8.0, 12.0, 16.0], samples: 20_000, seed: 2, eps: 0.6, b: None, max_final_fraction: 0.1 }
    }
}

/// Conditioned law of large numbers for `τ_u / log u`. Without a calibrated model the
/// passage is certain only if `Λ'(0) > 0`; then `ρ = 1/Λ'(0)` and plain simulation is used.
pub fn check_lln(law: &MatrixQLaw, model: Option<&RateModel>, cfg: &LlnConfig) -> Result<VerificationReport> {
    let started = Instant::now();
    let mut r = VerificationReport::new(Theorem::Lln, law);
    let (rho, b) = match model {
        Some(m) => (m.rho, cfg.b.unwrap_or(m.rho * (1.0 + m.alpha + 0.1) + m.rho * m.rho * m.sigma_alpha * m.sigma_alpha)),
        None => {
            let drift = Pressure::new(law)?.lambda_derivs(0.0, 1)?[1];
            if !(drift > 0.0) {
                return Err(Error::NoPositiveRoot { lo: 0.0, hi: f64::INFINITY });
            }
            r.notes.push(format!("Λ'(0) = {drift} > 0: passage is certain, rho = 1/Λ'(0)"));
            (1.0 / drift, cfg.b.unwrap_or(1.0))
        }
    };
    r.param("log_u", &cfg.log_u);
    r.param("samples", cfg.samples);
    r.param("eps", cfg.eps);
    r.param("b", b);
    r.param("rho", rho);
    r.seeds.push(cfg.seed);
    let mut fractions = vec![];
    let mut window_fractions = vec![];
    let mut ses = vec![];
    for (i, &lu) in cfg.log_u.iter().enumerate() {
        let u = lu.exp();
        let seed = cfg.seed.wrapping_add(i as u64);
        let (tau, weights) = match model {
            Some(m) => {
                let c = conditioned_tau(law, m, u, cfg.samples, seed)?;
                if c.censored > 0 {
                    r.warnings.push(format!("log u = {lu}: {} tilted paths censored", c.censored));
                }
                (c.tau, c.weights)
            }
            None => {
                let pc = PassageConfig::new(u, (10.0 * rho * lu).ceil() as usize + 50, seed);
                let out = run_replicates(law, &pc, None, cfg.samples)?;
                (out.iter().filter(|p| !p.censored).map(|p| p.tau as f64).collect(), out.iter().filter(|p| !p.censored).map(|_| 1.0).collect())
            }
        };
        let ratio: Vec<f64> = tau.iter().map(|t| t / lu).collect();
        let (outside, se) = weighted_fraction(ratio.iter().zip(&weights).map(|(&x, &w)| ((x - rho).abs() > cfg.eps * rho, w)));
        let (win_lo, win_hi) = lln_window(rho, u, b).unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        let (outside_win, _) = weighted_fraction(tau.iter().zip(&weights).map(|(&t, &w)| (t < win_lo || t > win_hi, w)));
        let mean = ratio.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() / weights.iter().sum::<f64>();
        r.row("tau/log u mean", lu, Some(rho), Some(mean), None, None);
        r.row("fraction outside rho(1 ± eps)", lu, None, Some(outside), Some((outside - 2.0 * se, outside + 2.0 * se)), None);
        r.row("fraction outside window", lu, None, Some(outside_win), None, None);
        window_fractions.push(outside_win);
        fractions.push(outside);
        ses.push(se);
    }
    let trend = non_increasing(&fractions, &ses, 2.0);
    r.criterion("fraction outside band non-increasing (2 se slack)", f64::from(u8::from(trend)), 1.0, trend);
    let last = *fractions.last().unwrap_or(&f64::NAN);
    r.criterion(format!("final fraction <= {}", cfg.max_final_fraction), last, cfg.max_final_fraction, last <= cfg.max_final_fraction);
    let last_win = *window_fractions.last().unwrap_or(&f64::NAN);
    r.criterion(format!("final fraction outside window <= {}", cfg.max_final_fraction), last_win, cfg.max_final_fraction, last_win <= cfg.max_final_fraction);
    Ok(r.finish(started))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltConfig {
    pub log_u: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub max_final_ks: f64,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self { log_u: vec![8.0, 12.0, 16.0], samples: 100_000, seed: 3, max_final_ks: 0.1 }
    }
}

pub fn check_clt(law: &MatrixQLaw, model: &RateModel, cfg: &CltConfig) -> Result<VerificationReport> {
    let started = Instant::now();
    let mut r = VerificationReport::new(Theorem::Clt, law);
    r.param("log_u", &cfg.log_u);
    r.param("samples", cfg.samples);
    r.seeds.push(cfg.seed);
    if !(model.sigma_alpha > 0.0) {
        r.verdict = Verdict::Inapplicable;
        r.notes.push("sigma_alpha = 0: A3 violated, CLT inapplicable".into());
        return Ok(r.finish(started));
    }
    if let Ok(c) = check_conditions(law, 8) {
        if c.nonarith.verdict == Heuristic::Warn {
            r.notes.push(format!("non-arithmeticity heuristic warns ({}); tau is compared with Φ as a lattice variable", c.nonarith.note));
        }
    }
    let mut ks = vec![];
    for (i, &lu) in cfg.log_u.iter().enumerate() {
        let u = lu.exp();
        let c = conditioned_tau(law, model, u, cfg.samples, cfg.seed.wrapping_add(i as u64))?;
        if c.censored > 0 {
            r.warnings.push(format!("log u = {lu}: {} tilted paths censored", c.censored));
        }
        let pred = predict_clt(model, u, 0.0)?;
        let z: Vec<f64> = c.tau.iter().map(|&t| pred.standardize(t)).collect();
        let d = weighted_ks(&z, &c.weights, normal_cdf);
        let n_eff = effective_sample_size(&c.weights);
        r.row("KS distance to Φ", lu, Some(0.0), Some(d), Some((0.0, 1.36 / n_eff.sqrt())), Some(n_eff));
        ks.push(d);
    }
    let decreasing = ks.windows(2).all(|w| w[1] < w[0]);
    r.criterion("KS strictly decreasing in u", f64::from(u8::from(decreasing)), 1.0, decreasing);
    let last = *ks.last().unwrap_or(&f64::NAN);
    r.criterion(format!("final KS <= {}", cfg.max_final_ks), last, cfg.max_final_ks, last <= cfg.max_final_ks);
    Ok(r.finish(started))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdConfig {
    /// `β / ρ`.
    pub beta_over_rho: f64,
    pub l_schedule: Vec<f64>,
    pub log_u: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    /// Exact check at `u` with `β log u` just above each of these integers.
    pub oracle_n: Vec<usize>,
    pub rate_tolerance: f64,
    pub ratio_band: (f64, f64),
    /// Exact-trace length for an automatically computed prefactor.
    pub prefactor_n: Option<usize>,
}

impl Default for LdConfig {
    fn default() -> Self {
        Self {
            beta_over_rho: 0.5,
            l_schedule: vec![0.0],
            log_u: vec![10.0, 20.0, 30.0],
            samples: 100_000,
            seed: 4,
            oracle_n: vec![],
            rate_tolerance: 0.1,
            ratio_band: (0.5, 2.0),
            prefactor_n: None,
        }
    }
}

/// Largest `n ≤ cap` with `atoms^n ≤ max_paths`.
pub fn enumerable_depth(law: &MatrixQLaw, max_paths: u64, cap: usize) -> usize {
    let k = law.atoms().map_or(1, |a| a.len()).max(2) as f64;
    ((max_paths as f64).ln() / k.ln()).floor().min(cap as f64).max(1.0) as usize
}

/// Exact-trace prefactor with the enumeration depth chosen from the atom count.
pub fn default_prefactor(model: &RateModel, s: f64, n: Option<usize>) -> Result<PrefactorEstimate> {
    let n = n.unwrap_or_else(|| enumerable_depth(model.law(), 1 << 22, 22));
    prefactor_varkappa_cached(model, s, n)
}

fn prefactor_varkappa_cached(model: &RateModel, s: f64, n: usize) -> Result<PrefactorEstimate> {
    crate::asymptotics::prefactor_varkappa(model, s, &PrefactorMethod::oracle(n))
}

pub fn check_ld(law: &MatrixQLaw, model: &RateModel, prefactor: Option<&PrefactorEstimate>, cfg: &LdConfig) -> Result<VerificationReport> {
    let started = Instant::now();
    let mut r = VerificationReport::new(Theorem::Ld, law);
    let beta = cfg.beta_over_rho * model.rho;
    let rp = rate_i(model, beta)?;
    let s = rp.s_of_beta;
    let owned;
    let pf = match prefactor {
        Some(p) => p,
        None => {
            owned = default_prefactor(model, s, cfg.prefactor_n)?;
            r.notes.push("prefactor computed from the exact W_n trace".into());
            &owned
        }
    };
    if !pf.plateau {
        r.notes.push(format!("prefactor limit extrapolated: interval [{:.6}, {:.6}]", pf.limit_ci.0, pf.limit_ci.1));
    }
    r.param("beta", beta);
    r.param("s", s);
    r.param("I_beta", rp.i);
    r.param("varkappa", pf.varkappa);
    r.param("log_u", &cfg.log_u);
    r.param("l_schedule", &cfg.l_schedule);
    r.param("samples", cfg.samples);
    r.seeds.push(cfg.seed);
    let kernel = TiltKernel::new(law, &*model.solution(s)?, Side::Transpose)?;
    for &l in &cfg.l_schedule {
        let mut gaps = vec![];
        let mut last_ratio = f64::NAN;
        let target = rate_i(model, beta - l)?.i;
        for (i, &lu) in cfg.log_u.iter().enumerate() {
            let u = lu.exp();
            let n = ((beta - l) * lu).floor() as usize;
            if n == 0 {
                continue;
            }
            let pc = PassageConfig::new(u, n, cfg.seed.wrapping_add(i as u64));
            let out = run_replicates(law, &pc, Some(&kernel), cfg.samples)?;
            let vals: Vec<f64> = out.iter().map(|p| if p.censored { 0.0 } else { p.weight() }).collect();
            let (p_hat, se) = mean_se(&vals);
            let pred = predict_ld(model, pf, u, beta, l, None)?;
            let rate_hat = -p_hat.ln() / lu;
            r.row(&format!("P(tau <= (beta - l) log u), l = {l}"), lu, Some(pred.value), Some(p_hat), Some((p_hat - 1.96 * se, p_hat + 1.96 * se)), Some(p_hat / pred.value));
            r.row(&format!("-log P / log u, l = {l}"), lu, Some(target), Some(rate_hat), None, None);
            gaps.push((rate_hat - target).abs());
            last_ratio = p_hat / pred.value;
        }
        let last_gap = gaps.last().copied().unwrap_or(f64::NAN) / target;
        r.criterion(format!("l = {l}: |rate - I| / I <= {} at the largest u", cfg.rate_tolerance), last_gap, cfg.rate_tolerance, last_gap <= cfg.rate_tolerance);
        let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
        r.criterion(format!("l = {l}: rate gap non-increasing in u"), f64::from(u8::from(monotone)), 1.0, monotone);
        let (lo, hi) = cfg.ratio_band;
        r.criterion(format!("l = {l}: P/prediction in [{lo}, {hi}] at the largest u"), last_ratio, hi, last_ratio >= lo && last_ratio <= hi);
    }
    if !cfg.oracle_n.is_empty() {
        let mut ratios = vec![];
        for &n in &cfg.oracle_n {
            let u = ((n as f64 + 0.01) / beta).exp();
            let law_tau = exact_passage_law(law, u, n, None, EnumerationBudget::default())?;
            let exact = law_tau.cdf(n);
            let pred = predict_ld(model, pf, u, beta, 0.0, None)?;
            r.row("exact P(tau <= beta log u)", u.ln(), Some(pred.value), Some(exact), None, Some(exact / pred.value));
            ratios.push(exact / pred.value);
        }
        let last = *ratios.last().unwrap();
        r.notes.push(format!("exact/prediction ratios at n = {:?}: {:?}", cfg.oracle_n, ratios));
        let improving = ratios.windows(2).all(|w| w[1].ln().abs() <= w[0].ln().abs());
        if !(0.5..=2.0).contains(&last) || !improving {
            r.warnings.push("exact small-u ratios are not yet within a factor 2 or not improving".into());
        }
    }
    Ok(r.finish(started))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub beta_over_rho: f64,
    pub a: f64,
    pub m: u32,
    /// `⌊β log u⌋` values; `u` is chosen with `β log u` just above each.
    pub n_grid: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_paths: u64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self { beta_over_rho: 0.5, a: -1.0, m: 1, n_grid: vec![], samples: 200_000, seed: 5, tolerance: 0.25, max_paths: 1 << 27 }
    }
}

pub fn check_local(law: &MatrixQLaw, model: &RateModel, cfg: &LocalConfig) -> Result<VerificationReport> {
    let started = Instant::now();
    let mut r = VerificationReport::new(Theorem::Local, law);
    let beta = cfg.beta_over_rho * model.rho;
    let rp = rate_i(model, beta)?;
    let grid = if cfg.n_grid.is_empty() {
        let top = enumerable_depth(law, cfg.max_paths, 24);
        vec![top.saturating_sub(4).max(2), top.saturating_sub(2).max(3), top]
    } else {
        cfg.n_grid.clone()
    };
    r.param("beta", beta);
    r.param("s", rp.s_of_beta);
    r.param("a", cfg.a);
    r.param("m", cfg.m);
    r.param("n_grid", &grid);
    r.seeds.push(cfg.seed);
    let literal = 1.0 - (rp.i / beta + rp.s_of_beta / beta.powi(3)).exp();
    r.notes.push(format!(
        "target uses e^(-I'(beta)) = kappa(s) = {:.6}; with I' = -I/beta - s/beta^3 the pointwise factor would be {literal:.6}",
        rp.kappa()
    ));
    let kernel = TiltKernel::new(law, &*model.solution(rp.s_of_beta)?, Side::Transpose)?;
    let mut errors = vec![];
    for (i, &n) in grid.iter().enumerate() {
        let x = n as f64 + 0.01;
        let u = (x / beta).exp();
        let hi = (x + cfg.a + cfg.m as f64).floor() as usize;
        let lo = (x + cfg.a).floor() as usize;
        let feasible = enumerable_depth(law, cfg.max_paths, usize::MAX) >= n;
        let (window, cumulative, method) = if feasible {
            let pl = exact_passage_law(law, u, n, None, EnumerationBudget { max_paths: cfg.max_paths, ..Default::default() })?;
            (pl.cdf(hi) - pl.cdf(lo), pl.cdf(n), "exact")
        } else {
            let pc = PassageConfig::new(u, n, cfg.seed.wrapping_add(i as u64));
            let out = run_replicates(law, &pc, Some(&kernel), cfg.samples)?;
            let w = |lo: usize, hi: usize| out.iter().filter(|p| !p.censored && p.tau > lo && p.tau <= hi).map(|p| p.weight()).sum::<f64>() / out.len() as f64;
            (w(lo, hi), w(0, n), "tilted")
        };
        let empirical = window / cumulative;
        let predicted = local_to_cumulative_ratio(model, u, beta, cfg.a, cfg.m)?;
        let err = (empirical / predicted - 1.0).abs();
        r.row(&format!("window / cumulative ({method})"), n as f64, Some(predicted), Some(empirical), None, Some(err));
        errors.push(err);
    }
    let last = *errors.last().unwrap_or(&f64::NAN);
    r.criterion(format!("relative error <= {} at the largest n", cfg.tolerance), last, cfg.tolerance, last <= cfg.tolerance);
    let improving = errors.windows(2).all(|w| w[1] <= w[0]);
    r.criterion("relative error non-increasing in n", f64::from(u8::from(improving)), 1.0, improving);
    Ok(r.finish(started))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixLdConfig {
    pub n_grid: Vec<usize>,
    /// Tilt parameter fixing `q = Λ'(s)`.
    pub s: f64,
    pub x: Option<DirectionPoint>,
    pub y: Option<DirectionPoint>,
    pub band: (f64, f64),
    /// Depths with more paths than this are estimated by tilted sampling.
    pub max_paths: u64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for MatrixLdConfig {
    fn default() -> Self {
        Self { n_grid: vec![8, 12, 16], s: 2.0, x: None, y: None, band: (0.6, 1.6), max_paths: 1 << 28, samples: 200_000, seed: 6 }
    }
}

pub fn check_matrix_ld(law: &MatrixQLaw, model: &RateModel, cfg: &MatrixLdConfig) -> Result<VerificationReport> {
    let started = Instant::now();
    let mut r = VerificationReport::new(Theorem::MatrixLd, law);
    let q = model.derivs(cfg.s)?[1];
    let x = cfg.x.clone().unwrap_or_else(|| DirectionPoint::uniform(law.dim()));
    r.param("s", cfg.s);
    r.param("q", q);
    r.param("n_grid", &cfg.n_grid);
    r.param("x", &x);
    r.param("y", &cfg.y);
    let budget = EnumerationBudget { max_paths: cfg.max_paths, ..Default::default() };
    let depth = enumerable_depth(law, cfg.max_paths, usize::MAX);
    let mut ratios = vec![];
    for (i, &n) in cfg.n_grid.iter().enumerate() {
        let pred = predict_matrix_ld(model, n, q, 0.0, &x, cfg.y.as_ref())?;
        let (value, ci, method) = if n <= depth {
            (exact_matrix_ld(law, n, q, &x, cfg.y.as_ref(), budget)?, None, "exact")
        } else {
            if cfg.y.is_some() {
                return Err(Error::Budget(format!("directional matrix deviations at n = {n} exceed the enumeration budget")));
            }
            r.seeds.push(cfg.seed.wrapping_add(i as u64));
            let (p, se) = tilted_matrix_ld(model, n, cfg.s, q, &x, cfg.samples, cfg.seed.wrapping_add(i as u64))?;
            (p, Some((p - 1.96 * se, p + 1.96 * se)), "tilted")
        };
        r.row(&format!("P(log|Pi_n x| >= nq) ({method})"), n as f64, Some(pred.value), Some(value), ci, Some(value / pred.value));
        ratios.push(value / pred.value);
    }
    let last = *ratios.last().unwrap_or(&f64::NAN);
    let (lo, hi) = cfg.band;
    r.criterion(format!("empirical/prediction in [{lo}, {hi}] at the largest n"), last, hi, last >= lo && last <= hi);
    let trend = ratios.windows(2).all(|w| (w[1] - 1.0).abs() <= (w[0] - 1.0).abs());
    r.criterion("|ratio - 1| non-increasing in n", f64::from(u8::from(trend)), 1.0, trend);
    Ok(r.finish(started))
}

/// `P(log|Π_n x| ≥ nq)` under the direct-chain tilt at `s`.
fn tilted_matrix_ld(model: &RateModel, n: usize, s: f64, q: f64, x: &DirectionPoint, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let kernel = TiltKernel::new(model.law(), &*model.solution(s)?, Side::Direct)?;
    let target = n as f64 * q;
    let vals = par_map(samples, |i| {
        let (ln, lw) = tilted_log_norm(&kernel, x, n, seed, i);
        if ln >= target {
            lw.exp()
        } else {
            0.0
        }
    });
    Ok(mean_se(&vals))
}

/// Per-check settings for [`run_verify`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifySettings {
    pub kesten: KestenConfig,
    pub lln: LlnConfig,
    pub clt: CltConfig,
    pub ld: LdConfig,
    pub local: LocalConfig,
    pub matrix_ld: MatrixLdConfig,
}

impl VerifySettings {
    /// Derives every check seed from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.kesten.seed = seed;
        self.lln.seed = seed.wrapping_add(1000);
        self.clt.seed = seed.wrapping_add(2000);
        self.ld.seed = seed.wrapping_add(3000);
        self.local.seed = seed.wrapping_add(4000);
        self.matrix_ld.seed = seed.wrapping_add(5000);
        self
    }

    /// Uses `samples` draws in every simulation-based check.
    pub fn with_samples(mut self, samples: usize) -> Self {
        self.kesten.samples = samples;
        self.lln.samples = samples;
        self.clt.samples = samples;
        self.ld.samples = samples;
        self.local.samples = samples;
        self.matrix_ld.samples = samples;
        self
    }

    pub fn with_log_u(mut self, log_u: Vec<f64>) -> Self {
        self.lln.log_u = log_u.clone();
        self.clt.log_u = log_u.clone();
        self.ld.log_u = log_u;
        self
    }
}

/// Runs the requested checks in fixed order. Calibration failure turns the checks that
/// need `α` into inapplicable reports.
pub fn run_verify(law: &MatrixQLaw, theorems: &[Theorem], settings: &VerifySettings) -> Result<Vec<VerificationReport>> {
    let model = match RateModel::calibrate(law) {
        Ok(m) => Some(m),
        Err(e @ Error::NoPositiveRoot { .. }) => {
            log::warn!("{}: {e}", law.name());
            None
        }
        Err(e) => return Err(e),
    };
    let mut theorems = theorems.to_vec();
    theorems.sort();
    theorems.dedup();
    let mut out = Vec::with_capacity(theorems.len());
    for t in theorems {
        let report = match (t, model.as_ref()) {
            (Theorem::Kesten, m) => check_kesten(law, m, &settings.kesten)?,
            (Theorem::Lln, m) => check_lln(law, m, &settings.lln)?,
            (_, None) => inapplicable(t, law, "Λ has no positive root (no alpha): A3 violated or the passage is certain; theorem inapplicable"),
            (Theorem::Clt, Some(m)) => check_clt(law, m, &settings.clt)?,
            (Theorem::Ld, Some(m)) => check_ld(law, m, None, &settings.ld)?,
            (Theorem::Local, Some(m)) => check_local(law, m, &settings.local)?,
            (Theorem::MatrixLd, Some(m)) => check_matrix_ld(law, m, &settings.matrix_ld)?,
        };
        out.push(report);
    }
    Ok(out)
}
