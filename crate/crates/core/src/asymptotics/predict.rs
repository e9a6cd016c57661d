use serde::{Deserialize, Serialize};

use super::{legendre_expansion, rate_i, require_lower_deviation, PrefactorEstimate};
use crate::model::DirectionPoint;
use crate::numeric::normal_cdf;
use crate::spectral::{r_star_eval, RateModel};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    Cumulative,
    Local { a: f64, m: u32 },
    Pointwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LDPrediction {
    pub u: f64,
    pub beta: f64,
    pub l: f64,
    pub s: f64,
    pub chi: f64,
    #[serde(rename = "C")]
    pub c: f64,
    /// `I(β − l)`.
    pub rate: f64,
    pub value: f64,
    pub variant: Variant,
    /// Set for the directional form, together with the factor `r*_s(y)`.
    pub direction: Option<Vec<f64>>,
    pub r_star: Option<f64>,
}

/// Fractional part, with values within rounding of an integer snapped to `0`.
fn frac(x: f64) -> f64 {
    let f = x - x.round();
    if f.abs() <= 1e-9 * x.abs().max(1.0) {
        0.0
    } else {
        x - x.floor()
    }
}

struct LdBase {
    s: f64,
    kappa: f64,
    chi: f64,
    rate: f64,
    r_star: Option<f64>,
}

fn ld_base(
    model: &RateModel,
    prefactor: &PrefactorEstimate,
    u: f64,
    beta: f64,
    l: f64,
    y: Option<&DirectionPoint>,
) -> Result<LdBase> {
    require_lower_deviation(model, beta)?;
    if !(u > 1.0) {
        return Err(Error::Domain(format!("u = {u} must exceed 1")));
    }
    if !(l >= 0.0 && l < beta) {
        return Err(Error::Domain(format!("l = {l} must lie in [0, beta)")));
    }
    let s = model.s_of_beta(beta)?;
    if (prefactor.s - s).abs() > 1e-8 * s.max(1.0) {
        return Err(Error::Missing(format!("prefactor for s = {s} (supplied s = {})", prefactor.s)));
    }
    let rate = if l == 0.0 { rate_i(model, beta)?.i } else { rate_i(model, beta - l)?.i };
    let r_star = match y {
        Some(y) => Some(r_star_eval(&*model.solution(s)?, y)?),
        None => None,
    };
    Ok(LdBase { s, kappa: model.kappa(s)?, chi: frac((beta - l) * u.ln()), rate, r_star })
}

/// `P(τ_u ≤ (β−l) log u) ≈ C_{β,l}(u)/√(log u) · u^{−I(β−l)}` with
/// `C = ϰ_s κ(s)^{−χ}`, `χ = frac((β−l) log u)`; times `r*_s(y)` for `τ_u^y`.
pub fn predict_ld(
    model: &RateModel,
    prefactor: &PrefactorEstimate,
    u: f64,
    beta: f64,
    l: f64,
    y: Option<&DirectionPoint>,
) -> Result<LDPrediction> {
    let b = ld_base(model, prefactor, u, beta, l, y)?;
    let c = prefactor.varkappa * b.kappa.powf(-b.chi);
    let value = c / u.ln().sqrt() * (-b.rate * u.ln()).exp() * b.r_star.unwrap_or(1.0);
    Ok(LDPrediction {
        u,
        beta,
        l,
        s: b.s,
        chi: b.chi,
        c,
        rate: b.rate,
        value,
        variant: Variant::Cumulative,
        direction: y.map(|y| y.as_slice().to_vec()),
        r_star: b.r_star,
    })
}

/// `P((β−l) log u + a < τ_u ≤ (β−l) log u + a + m)`, predicted as
/// `κ(s)^a (κ(s)^m − 1) · ϰ_s κ(s)^{−χ'}/√(log u) · u^{−I(β−l)}` with
/// `χ' = frac((β−l) log u + a)`. Since `e^{−I'(β)} = κ(s)`, the window factor is
/// `e^{−aI'(β)}(e^{−mI'(β)} − 1)`.
#[allow(clippy::too_many_arguments)]
pub fn predict_local(
    model: &RateModel,
    prefactor: &PrefactorEstimate,
    u: f64,
    beta: f64,
    l: f64,
    a: f64,
    m: u32,
    y: Option<&DirectionPoint>,
) -> Result<LDPrediction> {
    if m == 0 || a > 0.0 || a + m as f64 > 0.0 {
        return Err(Error::OutOfRange(format!("window (a = {a}, m = {m}) needs a <= 0, m >= 1 and a + m <= 0")));
    }
    let b = ld_base(model, prefactor, u, beta, l, y)?;
    let chi = frac(b.chi + a.fract());
    let c = prefactor.varkappa * b.kappa.powf(-chi);
    let window = b.kappa.powf(a) * (b.kappa.powi(m as i32) - 1.0);
    let value = window * c / u.ln().sqrt() * (-b.rate * u.ln()).exp() * b.r_star.unwrap_or(1.0);
    Ok(LDPrediction {
        u,
        beta,
        l,
        s: b.s,
        chi,
        c,
        rate: b.rate,
        value,
        variant: Variant::Local { a, m },
        direction: y.map(|y| y.as_slice().to_vec()),
        r_star: b.r_star,
    })
}

/// `P(τ_u = ⌊β log u⌋)`: the window `a = −1, m = 1, l = 0`, i.e. `(1 − 1/κ(s))` times
/// the cumulative prediction.
pub fn predict_pointwise(
    model: &RateModel,
    prefactor: &PrefactorEstimate,
    u: f64,
    beta: f64,
    y: Option<&DirectionPoint>,
) -> Result<LDPrediction> {
    let mut p = predict_local(model, prefactor, u, beta, 0.0, -1.0, 1, y)?;
    p.variant = Variant::Pointwise;
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltPrediction {
    pub u: f64,
    pub t: f64,
    pub phi: f64,
    pub center: f64,
    pub scale: f64,
}

impl CltPrediction {
    /// `(n − ρ log u) / (σ_α ρ^{3/2} √(log u))`.
    pub fn standardize(&self, n: f64) -> f64 {
        (n - self.center) / self.scale
    }

    /// `𝒞 u^{−α} Φ(t)`, given a Kesten constant.
    pub fn unconditional(&self, kesten_c: f64, alpha: f64) -> f64 {
        kesten_c * self.u.powf(-alpha) * self.phi
    }
}

pub fn predict_clt(model: &RateModel, u: f64, t: f64) -> Result<CltPrediction> {
    if !(u > 1.0) {
        return Err(Error::Domain(format!("u = {u} must exceed 1")));
    }
    let lu = u.ln();
    Ok(CltPrediction {
        u,
        t,
        phi: normal_cdf(t),
        center: model.rho * lu,
        scale: model.sigma_alpha * model.rho.powf(1.5) * lu.sqrt(),
    })
}

/// `[(ρ ∓ b√(log log u / log u)) log u]`.
pub fn predict_lln_window(model: &RateModel, u: f64, b: f64) -> Result<(f64, f64)> {
    lln_window(model.rho, u, b)
}

pub(crate) fn lln_window(rho: f64, u: f64, b: f64) -> Result<(f64, f64)> {
    let lu = u.ln();
    if !(lu > std::f64::consts::E) {
        return Err(Error::Domain(format!("u = {u} must exceed e^e")));
    }
    let half = b * (lu.ln() / lu).sqrt();
    Ok(((rho - half) * lu, (rho + half) * lu))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixLdPrediction {
    pub n: usize,
    pub q: f64,
    pub l: f64,
    pub s: f64,
    pub sigma: f64,
    /// `Λ*(q + l)`.
    pub rate: f64,
    pub r_x: f64,
    pub nu_r: f64,
    pub r_star_y: Option<f64>,
    pub value: f64,
}

/// `P(log|Π_n x| ≥ n(q+l)) ≈ r_s(x)/ν_s(r_s) · exp(−nΛ*(q+l)) / (sσ_s√(2πn))`, times
/// `r*_s(y)` for `⟨y, Π_n x⟩`. `Λ*(q+l)` is expanded around `q = Λ'(s)`.
pub fn predict_matrix_ld(
    model: &RateModel,
    n: usize,
    q: f64,
    l: f64,
    x: &DirectionPoint,
    y: Option<&DirectionPoint>,
) -> Result<MatrixLdPrediction> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    let s = model.s_of_slope(q)?;
    if !(s > 0.0) {
        return Err(Error::OutOfRange(format!("q = {q} is not above the mean slope Λ'(0)")));
    }
    let gamma = model.derivs(s)?;
    let sigma = gamma[2].sqrt();
    let rate = if l == 0.0 { s * q - gamma[0] } else { legendre_expansion(&gamma, s, l)? };
    let sol = model.solution(s)?;
    let r_x = sol.r_at(x.as_slice());
    let r_star_y = match y {
        Some(y) => Some(r_star_eval(&sol, y)?),
        None => None,
    };
    let nf = n as f64;
    let value = r_x / sol.nu_r() * (-nf * rate).exp() / (s * sigma * (2.0 * std::f64::consts::PI * nf).sqrt())
        * r_star_y.unwrap_or(1.0);
    Ok(MatrixLdPrediction { n, q, l, s, sigma, rate, r_x, nu_r: sol.nu_r(), r_star_y, value })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KestenPoint {
    pub u: f64,
    pub exceed: f64,
    /// `u^α P̂(X > u)`.
    pub scaled: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KestenEstimate {
    pub c: f64,
    pub ci: (f64, f64),
    pub points: Vec<KestenPoint>,
    /// Points entering the fit (the upper half of the usable grid).
    pub fitted: usize,
    /// `Σ ((u^α P̂ − ĉ)/se)² / (k − 1)` over the fitted points.
    pub flatness: f64,
    pub plateau: bool,
}

const KESTEN_MIN_EXCEED: f64 = 20.0;
const KESTEN_FLATNESS_MAX: f64 = 4.0;

/// Tail constant from samples of `log X`: the weighted mean of `u^α P̂(X > u)` over the
/// upper half of the grid points with at least 20 exceedances.
pub fn kesten_prefactor(log_samples: &[f64], alpha: f64, u_grid: &[f64]) -> Result<KestenEstimate> {
    let nf = log_samples.len() as f64;
    let mut sorted: Vec<f64> = log_samples.iter().copied().filter(|x| !x.is_nan()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut grid = u_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let points: Vec<KestenPoint> = grid
        .iter()
        .map(|&u| {
            let lu = u.ln();
            let count = (sorted.len() - sorted.partition_point(|&x| x <= lu)) as f64;
            let p = count / nf;
            let scale = (alpha * lu).exp();
            KestenPoint { u, exceed: p, scaled: scale * p, std_error: scale * (p * (1.0 - p) / nf).sqrt() }
        })
        .collect();
    let usable: Vec<&KestenPoint> = points.iter().filter(|p| p.exceed * nf >= KESTEN_MIN_EXCEED).collect();
    if usable.len() < 2 {
        return Err(Error::Budget(format!(
            "fewer than two grid points with {KESTEN_MIN_EXCEED} exceedances among {} samples",
            log_samples.len()
        )));
    }
    let fit = &usable[usable.len() / 2..];
    let (mut sw, mut swx) = (0.0, 0.0);
    for p in fit {
        let w = p.std_error.powi(-2);
        sw += w;
        swx += w * p.scaled;
    }
    let c = swx / sw;
    let flatness = if fit.len() > 1 {
        fit.iter().map(|p| ((p.scaled - c) / p.std_error).powi(2)).sum::<f64>() / (fit.len() - 1) as f64
    } else {
        0.0
    };
    // exceedance counts are nested, so the best single point bounds the error honestly
    let se = fit.iter().map(|p| p.std_error).fold(f64::INFINITY, f64::min);
    Ok(KestenEstimate {
        c,
        ci: (c - 1.96 * se, c + 1.96 * se),
        fitted: fit.len(),
        flatness,
        plateau: flatness <= KESTEN_FLATNESS_MAX,
        points,
    })
}

/// `predict_local / predict_ld(l = 0)`: `κ(s)^a (κ(s)^m − 1) κ(s)^{χ − χ'}`, free of `ϰ_s`.
pub fn local_to_cumulative_ratio(model: &RateModel, u: f64, beta: f64, a: f64, m: u32) -> Result<f64> {
    require_lower_deviation(model, beta)?;
    if m == 0 || a > 0.0 || a + m as f64 > 0.0 {
        return Err(Error::OutOfRange(format!("window (a = {a}, m = {m}) needs a <= 0, m >= 1 and a + m <= 0")));
    }
    let kappa = model.kappa(model.s_of_beta(beta)?)?;
    let chi = frac(beta * u.ln());
    let chi2 = frac(chi + a.fract());
    Ok(kappa.powf(a) * (kappa.powi(m as i32) - 1.0) * kappa.powf(chi - chi2))
}
