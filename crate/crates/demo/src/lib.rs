//! WebAssembly bindings for the static page in `www/`.
//!
//! Each export takes a law (a bundled name or a JSON config) and returns a JSON
//! string; the native functions behind them are ordinary Rust and tested as such.

use perpetua::asymptotics::rate_i;
use perpetua::model::{bundled_law, bundled_law_names};
use perpetua::oracle::{exact_passage_law, EnumerationBudget};
use perpetua::spectral::{Pressure, RateModel};
use perpetua::{Error, MatrixQLaw};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Enumeration cap: keeps the page responsive.
const MAX_PATHS: u64 = 1 << 20;

#[derive(Debug, Serialize)]
pub struct PressureCurve {
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub sigma_alpha: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct RateCurve {
    pub beta: Vec<f64>,
    pub rate: Vec<f64>,
    pub alpha: f64,
    pub rho: f64,
}

#[derive(Debug, Serialize)]
pub struct PassageDistribution {
    pub u: f64,
    pub n: Vec<usize>,
    pub prob: Vec<f64>,
    /// `P(τ_u > n_max)`, including `τ_u = ∞`.
    pub tail: f64,
    /// `ρ log u`, the first-order location of `τ_u` given `τ_u < ∞`.
    pub lln_center: Option<f64>,
}

pub fn load_law(spec: &str) -> Result<MatrixQLaw, Error> {
    let spec = spec.trim();
    if spec.starts_with('{') {
        MatrixQLaw::from_json_str(spec)
    } else {
        bundled_law(spec)
    }
}

pub fn pressure_curve_native(law: &str, s_min: f64, s_max: f64, points: usize) -> Result<PressureCurve, Error> {
    let law = load_law(law)?;
    if points < 2 || s_max.partial_cmp(&s_min) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Domain("need at least two points and s_max > s_min".into()));
    }
    let p = Pressure::new(&law)?;
    let s: Vec<f64> = (0..points).map(|i| s_min + (s_max - s_min) * i as f64 / (points - 1) as f64).collect();
    let lambda = s.iter().map(|&x| p.lambda(x)).collect::<Result<Vec<_>, _>>()?;
    let model = RateModel::calibrate(&law).ok();
    Ok(PressureCurve {
        s,
        lambda,
        alpha: model.as_ref().map(|m| m.alpha),
        rho: model.as_ref().map(|m| m.rho),
        sigma_alpha: model.as_ref().map(|m| m.sigma_alpha),
    })
}

/// `I(β)` on `points` values of `β` spanning the lower-deviation range up to `ρ`.
pub fn rate_curve_native(law: &str, points: usize) -> Result<RateCurve, Error> {
    let law = load_law(law)?;
    let model = RateModel::calibrate(&law)?;
    let lo = 1.0 / model.pressure().slope_sup();
    let lo = if lo.is_finite() && lo > 0.0 { lo } else { 0.0 };
    let points = points.max(2);
    let mut beta = Vec::with_capacity(points);
    let mut rate = Vec::with_capacity(points);
    for i in 0..points {
        let b = lo + (model.rho - lo) * (0.02 + 0.98 * i as f64 / (points - 1) as f64);
        if let Ok(r) = rate_i(&model, b) {
            beta.push(b);
            rate.push(r.i);
        }
    }
    Ok(RateCurve { beta, rate, alpha: model.alpha, rho: model.rho })
}

pub fn passage_distribution_native(law: &str, u: f64, n_max: usize) -> Result<PassageDistribution, Error> {
    let law = load_law(law)?;
    let pl = exact_passage_law(&law, u, n_max, None, EnumerationBudget { max_paths: MAX_PATHS, ..Default::default() })?;
    let lln_center = RateModel::calibrate(&law).ok().map(|m| m.rho * u.ln());
    Ok(PassageDistribution { u, n: (1..=n_max).collect(), prob: (1..=n_max).map(|n| pl.at(n)).collect(), tail: pl.tail, lln_center })
}

fn to_js<T: Serialize>(r: Result<T, Error>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string())).and_then(|v| serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())))
}

#[wasm_bindgen]
pub fn law_names() -> String {
    serde_json::to_string(&bundled_law_names().collect::<Vec<_>>()).unwrap_or_default()
}

#[wasm_bindgen]
pub fn pressure_curve(law: &str, s_min: f64, s_max: f64, points: usize) -> Result<String, JsValue> {
    to_js(pressure_curve_native(law, s_min, s_max, points))
}

#[wasm_bindgen]
pub fn rate_curve(law: &str, points: usize) -> Result<String, JsValue> {
    to_js(rate_curve_native(law, points))
}

#[wasm_bindgen]
pub fn passage_distribution(law: &str, u: f64, n_max: usize) -> Result<String, JsValue> {
    to_js(passage_distribution_native(law, u, n_max))
}
