//! Rate function, Cramér series and the limit-theorem predictions built on a
//! calibrated [`RateModel`].
//!
//! Conventions: `Λ*(q) = sup_s {sq − Λ(s)}`, and for `β > 0` with `Λ'(s) = 1/β`
//! the rate is `I(β) = βΛ*(1/β) = s − βΛ(s)`. Differentiating in `β` (the terms in
//! `ds/dβ` cancel) gives `I'(β) = −Λ(s)`, so `e^{−I'(β)} = κ(s)`.

mod predict;
mod prefactor;

pub(crate) use predict::lln_window;
pub use predict::{
    kesten_prefactor, local_to_cumulative_ratio, predict_clt, predict_ld, predict_lln_window, predict_local, predict_matrix_ld,
    predict_pointwise, CltPrediction, KestenEstimate, KestenPoint, LDPrediction, MatrixLdPrediction, Variant,
};
pub use prefactor::{prefactor_varkappa, varkappa_from_limit, PrefactorEstimate, PrefactorMethod};

use serde::{Deserialize, Serialize};

use crate::spectral::RateModel;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegendrePoint {
    pub q: f64,
    pub s: f64,
    pub value: f64,
}

/// `Λ*(q)` through the `s` with `Λ'(s) = q`.
pub fn legendre(model: &RateModel, q: f64) -> Result<LegendrePoint> {
    let s = model.s_of_slope(q)?;
    Ok(LegendrePoint { q, s, value: s * q - model.lambda(s)? })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub beta: f64,
    pub s_of_beta: f64,
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "I_prime")]
    pub i_prime: f64,
    /// `γ_{s,k} = Λ^{(k)}(s)` for `k = 0..=5`.
    pub gamma: [f64; 6],
}

impl RatePoint {
    pub fn sigma(&self) -> f64 {
        self.gamma[2].max(0.0).sqrt()
    }

    pub fn kappa(&self) -> f64 {
        self.gamma[0].exp()
    }
}

/// `I(β)` and `I'(β) = −Λ(s)` at `Λ'(s) = 1/β`.
pub fn rate_i(model: &RateModel, beta: f64) -> Result<RatePoint> {
    let s = model.s_of_beta(beta)?;
    let gamma = model.derivs(s)?;
    Ok(RatePoint { beta, s_of_beta: s, i: s - beta * gamma[0], i_prime: -gamma[0], gamma })
}

/// Lower-deviation scope check: `0 < β < ρ`.
pub fn require_lower_deviation(model: &RateModel, beta: f64) -> Result<()> {
    if beta > 0.0 && beta < model.rho {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!(
            "beta = {beta} is outside the lower-deviation regime (0, rho = {})",
            model.rho
        )))
    }
}

/// The first three terms of the Cramér series from `γ = (Λ, Λ', …, Λ^{(5)})` at `s`.
pub fn cramer_xi_from(gamma: &[f64; 6], t: f64) -> Result<f64> {
    let (g2, g3, g4, g5) = (gamma[2], gamma[3], gamma[4], gamma[5]);
    if !(g2 > 0.0) {
        return Err(Error::Domain(format!("Λ''(s) = {g2} is not positive")));
    }
    Ok(g3 / (6.0 * g2.powf(1.5))
        + (g4 * g2 - 3.0 * g3 * g3) * t / (24.0 * g2.powi(3))
        + (g5 * g2 * g2 - 10.0 * g4 * g3 * g2 + 15.0 * g3.powi(3)) * t * t / (120.0 * g2.powf(4.5)))
}

pub fn cramer_xi(model: &RateModel, s: f64, t: f64) -> Result<f64> {
    cramer_xi_from(&model.derivs(s)?, t)
}

/// `Λ*(q + l)` from the Cramér expansion around `q = Λ'(s)`:
/// `Λ*(q) + s l + l²/(2σ²) − l³/σ³ · ξ_s(l/σ)`.
pub fn legendre_expansion(gamma: &[f64; 6], s: f64, l: f64) -> Result<f64> {
    let sigma = gamma[2].max(0.0).sqrt();
    let base = s * gamma[1] - gamma[0];
    Ok(base + s * l + l * l / (2.0 * sigma * sigma) - l.powi(3) / sigma.powi(3) * cramer_xi_from(gamma, l / sigma)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub beta: f64,
    pub l: f64,
    /// Expanded `I(β − l)`.
    pub value: f64,
    /// `I(β − l)` from a direct solve at `β − l`.
    pub direct: f64,
}

impl Expansion {
    pub fn mismatch(&self) -> f64 {
        (self.value - self.direct).abs()
    }
}

/// `I(β − l)` expanded around `β`. With `δ = l/(β(β−l))`, `1/(β−l) = 1/β + δ`, so
///
/// `I(β−l) = (β−l)/β·I(β) + s l/β + l²/(2σ²β²(β−l)) − l³/(σ³β³(β−l)²)·ξ_s(l/(σβ(β−l)))`.
pub fn expand_i(model: &RateModel, beta: f64, l: f64) -> Result<Expansion> {
    if l >= beta {
        return Err(Error::Domain(format!("l = {l} must be below beta = {beta}")));
    }
    let rp = rate_i(model, beta)?;
    let s = rp.s_of_beta;
    let sigma = rp.sigma();
    let bl = beta - l;
    let xi = cramer_xi_from(&rp.gamma, l / (sigma * beta * bl))?;
    let value = bl / beta * rp.i + s * l / beta + l * l / (2.0 * sigma * sigma * beta * beta * bl)
        - l.powi(3) / (sigma.powi(3) * beta.powi(3) * bl * bl) * xi;
    let direct = if l == 0.0 { rp.i } else { rate_i(model, bl)?.i };
    Ok(Expansion { beta, l, value, direct })
}

#[cfg(test)]
mod tests;
