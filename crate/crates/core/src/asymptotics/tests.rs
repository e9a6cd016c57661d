use super::*;
use crate::model::{bundled_law, DirectionPoint};
use crate::oracle::{exact_matrix_ld, exact_w, EnumerationBudget};

fn golden() -> RateModel {
    RateModel::calibrate(&bundled_law("golden").unwrap()).unwrap()
}

/// Cumulants of `log m` under the weights `p m^s` for the golden law.
fn golden_cumulants(s: f64) -> [f64; 6] {
    let atoms = [(2.0f64.ln(), 0.5), (0.25f64.ln(), 0.5)];
    let z: f64 = atoms.iter().map(|(x, p)| p * (s * x).exp()).sum();
    let mean: f64 = atoms.iter().map(|(x, p)| p * (s * x).exp() * x).sum::<f64>() / z;
    let cm = |k: i32| atoms.iter().map(|(x, p)| p * (s * x).exp() * (x - mean).powi(k)).sum::<f64>() / z;
    let (m2, m3, m4, m5) = (cm(2), cm(3), cm(4), cm(5));
    [z.ln(), mean, m2, m3, m4 - 3.0 * m2 * m2, m5 - 10.0 * m3 * m2]
}

#[test]
fn rate_at_rho_is_alpha() {
    let m = golden();
    let rp = rate_i(&m, m.rho).unwrap();
    assert!((rp.i - m.alpha).abs() < 1e-8, "{rp:?}");
    assert!(rp.i_prime.abs() < 1e-8);
}

#[test]
fn rate_derivative_matches_central_difference() {
    let m = golden();
    let beta = 0.8 * m.rho;
    let h = 1e-4;
    let fd = (rate_i(&m, beta + h).unwrap().i - rate_i(&m, beta - h).unwrap().i) / (2.0 * h);
    let rp = rate_i(&m, beta).unwrap();
    assert!((fd - rp.i_prime).abs() < 1e-6, "fd {fd} vs {}", rp.i_prime);
    assert!(rp.i_prime < 0.0);
}

#[test]
fn rate_closed_form() {
    let m = golden();
    let c = golden_cumulants(1.0);
    let rp = rate_i(&m, 1.0 / c[1]).unwrap();
    assert!((rp.s_of_beta - 1.0).abs() < 1e-8);
    assert!((rp.i - (1.0 - 1.125f64.ln() / c[1])).abs() < 1e-8);
}

#[test]
fn legendre_examples() {
    let m = golden();
    let q0 = golden_cumulants(0.0)[1];
    assert!(legendre(&m, q0).unwrap().value.abs() < 1e-10);
    let qa = 1.0 / m.rho;
    assert!((legendre(&m, qa).unwrap().value - m.alpha / m.rho).abs() < 1e-8);
    assert!(legendre(&m, 2.0f64.ln()).is_err());
    for s in [-0.5, 0.3, 1.0, 2.5] {
        let c = golden_cumulants(s);
        let lp = legendre(&m, c[1]).unwrap();
        assert!((lp.value - (s * c[1] - c[0])).abs() < 1e-8);
    }
}

#[test]
fn cramer_series() {
    let m = golden();
    let exact = golden_cumulants(m.alpha);
    for t in [0.0, 0.1, -0.2] {
        let a = cramer_xi(&m, m.alpha, t).unwrap();
        let b = cramer_xi_from(&exact, t).unwrap();
        assert!((a - b).abs() < 1e-4, "t={t}: {a} vs {b}");
    }
    let sym = [0.0, 0.0, 2.0, 0.0, 5.0, 0.0];
    assert!((cramer_xi_from(&sym, 0.3).unwrap() - 5.0 * 0.3 / (24.0 * 4.0)).abs() < 1e-15);
    assert!((cramer_xi_from(&exact, 0.0).unwrap() - exact[3] / (6.0 * exact[2].powf(1.5))).abs() < 1e-15);
    assert!(cramer_xi_from(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 0.1).is_err());
}

#[test]
fn expansion_of_rate() {
    let m = golden();
    let beta = 0.8 * m.rho;
    let e0 = expand_i(&m, beta, 0.0).unwrap();
    assert_eq!(e0.value, e0.direct);
    assert!(expand_i(&m, beta, 1e-3).unwrap().mismatch() <= 1e-9);
    // truncation after t² inside ξ leaves an O(l⁶) error
    let big = expand_i(&m, beta, 0.4).unwrap().mismatch();
    let small = expand_i(&m, beta, 0.1).unwrap().mismatch();
    assert!(big / small >= 1e2, "{big} / {small}");
    assert!(expand_i(&m, beta, beta).is_err());
}

#[test]
fn legendre_expansion_matches_direct() {
    let m = golden();
    let s = 1.3;
    let g = m.derivs(s).unwrap();
    for l in [1e-3, 1e-2, -1e-2] {
        let direct = legendre(&m, g[1] + l).unwrap().value;
        assert!((legendre_expansion(&g, s, l).unwrap() - direct).abs() < 1e-9);
    }
}

#[test]
fn prefactor_normalization_invariance() {
    let m = golden();
    let s = m.alpha + 0.3;
    let sol = m.solution(s).unwrap();
    let g = m.derivs(s).unwrap();
    let scaled = sol.rescaled(7.0);
    let w = exact_w(m.law(), &sol, 10, EnumerationBudget::default()).unwrap();
    let w7 = exact_w(m.law(), &scaled, 10, EnumerationBudget::default()).unwrap();
    let a = varkappa_from_limit(&sol, g[1], g[2].sqrt(), w.w[9]);
    let b = varkappa_from_limit(&scaled, g[1], g[2].sqrt(), w7.w[9]);
    assert!((a - b).abs() <= 1e-14 * a, "{a} vs {b}");
}

#[test]
fn prefactor_oracle_and_mc_agree() {
    let m = golden();
    let s = m.alpha + 0.2;
    let oracle = prefactor_varkappa(&m, s, &PrefactorMethod::oracle(20)).unwrap();
    for w in oracle.limit_trace.windows(2) {
        assert!(w[1].1 >= w[0].1 - 1e-12, "trace decreases: {:?}", w);
    }
    // the tilted summand has infinite variance near α, so compare at matched n
    let mc = prefactor_varkappa(&m, s, &PrefactorMethod::monte_carlo(vec![5, 10, 15, 20], 40_000, 7)).unwrap();
    for &(n, w, se) in &mc.limit_trace {
        let exact = oracle.limit_trace[n - 1].1;
        assert!((w - exact).abs() < 3.0 * se, "n={n}: mc {w} ± {se} vs {exact}");
    }
    assert!(!oracle.plateau && oracle.limit > oracle.limit_trace[19].1);
    assert!(mc.varkappa > 0.0);
    assert!(prefactor_varkappa(&m, m.alpha - 0.1, &PrefactorMethod::oracle(5)).is_err());
}

fn golden_prefactor(m: &RateModel, beta: f64) -> PrefactorEstimate {
    let s = m.s_of_beta(beta).unwrap();
    prefactor_varkappa(m, s, &PrefactorMethod::oracle(14)).unwrap()
}

#[test]
fn ld_prediction_shape() {
    let m = golden();
    let beta = 0.5 * m.rho;
    let pf = golden_prefactor(&m, beta);
    let u = (7.0 / beta).exp();
    let p = predict_ld(&m, &pf, u, beta, 0.0, None).unwrap();
    assert!(p.chi < 1e-9 || p.chi > 1.0 - 1e-9);
    let lu = [10.0f64, 20.0, 40.0];
    let v: Vec<f64> = lu.iter().map(|&x| predict_ld(&m, &pf, x.exp(), beta, 0.0, None).unwrap().value.ln()).collect();
    let rp = rate_i(&m, beta).unwrap();
    let slope = (v[2] - v[1]) / 20.0;
    let bound = (rp.kappa().ln() + 0.5 * 2.0f64.ln()) / 20.0;
    assert!((slope + rp.i).abs() <= bound, "{slope} vs {}", -rp.i);
    assert!(predict_ld(&m, &pf, 1e6, m.rho * 1.1, 0.0, None).is_err());
    assert!(predict_ld(&m, &pf, 1e6, 0.4 * m.rho, 0.0, None).is_err());
    let l = 0.05;
    let pl = predict_ld(&m, &pf, 1e8, beta, l, None).unwrap();
    assert!((pl.rate - rate_i(&m, beta - l).unwrap().i).abs() < 1e-12);
}

#[test]
fn local_windows() {
    let m = golden();
    let beta = 0.5 * m.rho;
    let pf = golden_prefactor(&m, beta);
    let u = 1e9;
    let kappa = m.kappa(pf.s).unwrap();
    let cum = predict_ld(&m, &pf, u, beta, 0.0, None).unwrap();
    let pw = predict_pointwise(&m, &pf, u, beta, None).unwrap();
    assert!((pw.value / cum.value - (1.0 - 1.0 / kappa)).abs() < 1e-12);
    let whole = predict_local(&m, &pf, u, beta, 0.0, -5.0, 5, None).unwrap().value;
    let a = predict_local(&m, &pf, u, beta, 0.0, -5.0, 2, None).unwrap().value;
    let b = predict_local(&m, &pf, u, beta, 0.0, -3.0, 3, None).unwrap().value;
    assert!((whole - a - b).abs() <= 1e-12 * whole);
    assert!(predict_local(&m, &pf, u, beta, 0.0, -1.0, 2, None).is_err());
}

#[test]
fn clt_and_lln() {
    let m = golden();
    let c = predict_clt(&m, 1e6, 0.0).unwrap();
    assert_eq!(c.phi, 0.5);
    assert_eq!(c.standardize(c.center), 0.0);
    assert!((predict_clt(&m, 1e6, 1.959964).unwrap().phi - 0.975).abs() < 1e-6);
    let u = 1e12;
    let (lo, hi) = predict_lln_window(&m, u, 0.0).unwrap();
    assert_eq!(lo, hi);
    assert!((lo - m.rho * u.ln()).abs() < 1e-9);
    let (lo, hi) = predict_lln_window(&m, u, 1.5).unwrap();
    assert!((hi - lo - 3.0 * (u.ln() * u.ln().ln()).sqrt()).abs() < 1e-9);
    assert!(predict_lln_window(&m, 10.0, 1.0).is_err());
}

/// The golden law is lattice (`log m ∈ log 2 + 3 log 2 · ℤ`), so the smooth prefactor
/// must be corrected by `s h e^{−sθ_n} / (1 − e^{−sh})`, `θ_n` the overshoot of `nq`
/// to the lattice.
#[test]
fn matrix_ld_d1_lattice() {
    let m = golden();
    let s = 1.0;
    let q = golden_cumulants(s)[1];
    let x = DirectionPoint::uniform(1);
    let h = 3.0 * 2.0f64.ln();
    for n in [12usize, 18, 24] {
        let p = predict_matrix_ld(&m, n, q, 0.0, &x, None).unwrap();
        let top = n as f64 * 2.0f64.ln();
        let theta = top - h * ((top - n as f64 * q) / h).floor() - n as f64 * q;
        let corrected = p.value * s * h * (-s * theta).exp() / (1.0 - (-s * h).exp());
        let exact = exact_matrix_ld(m.law(), n, q, &x, None, EnumerationBudget::default()).unwrap();
        assert!((exact / corrected - 1.0).abs() < 0.12, "n={n}: {exact} vs {corrected}");
    }
}

#[test]
fn matrix_ld_structure() {
    let law = bundled_law("positive2d").unwrap();
    let m = RateModel::calibrate(&law).unwrap();
    let q = m.derivs(1.5).unwrap()[1];
    let x1 = DirectionPoint::new(vec![0.2, 0.8]).unwrap();
    let x2 = DirectionPoint::new(vec![0.9, 0.1]).unwrap();
    let a = predict_matrix_ld(&m, 12, q, 0.0, &x1, None).unwrap();
    let b = predict_matrix_ld(&m, 12, q, 0.0, &x2, None).unwrap();
    assert!((a.value / b.value - a.r_x / b.r_x).abs() < 1e-12);
    assert!((a.rate - legendre(&m, q).unwrap().value).abs() < 1e-9);
    let q0 = m.derivs(0.0).unwrap()[1];
    assert!(predict_matrix_ld(&m, 12, q0 - 0.01, 0.0, &x1, None).is_err());
}

#[test]
fn kesten_recovers_pareto_scale() {
    use rand::{Rng, SeedableRng};
    let (alpha, scale) = (1.7f64, 2.5f64);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<f64> = (0..400_000)
        .map(|_| {
            let u: f64 = 1.0 - rng.gen::<f64>();
            scale.ln() - u.ln() / alpha
        })
        .collect();
    let grid: Vec<f64> = (0..12).map(|i| 3.0 * 1.6f64.powi(i)).collect();
    let k = kesten_prefactor(&samples, alpha, &grid).unwrap();
    let c = scale.powf(alpha);
    assert!((k.c / c - 1.0).abs() < 0.05, "{} vs {c}", k.c);
    assert!(k.plateau);
    assert!(kesten_prefactor(&samples[..10], alpha, &grid).is_err());
}
