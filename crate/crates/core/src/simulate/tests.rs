use super::*;
use crate::model::{build_law_scalar, bundled_law};
use crate::oracle::{exact_passage_law, EnumerationBudget};
use crate::spectral::Pressure;
use approx::assert_relative_eq;

fn vec2(a: f64, b: f64) -> NonnegVector {
    NonnegVector::new(vec![a, b]).unwrap()
}

#[test]
fn forward_step_examples() {
    let x0 = DirectionPoint::uniform(2);
    let mut st = PathState::new(&x0, 0);
    st.v = vec![1.0, 2.0];
    let next = forward_step(&st, &NonnegMatrix::identity(2), &vec2(1.0, 1.0)).unwrap();
    assert_eq!(next.v, vec![2.0, 3.0]);
    assert_eq!(next.n, 1);

    let st = PathState::new(&x0, 0);
    let next = forward_step(&st, &NonnegMatrix::identity(2), &vec2(1.0, 0.0)).unwrap();
    assert_eq!(next.v, vec![1.0, 0.0]);

    let mut st = PathState::new(&DirectionPoint::uniform(1), 0);
    st.v = vec![3.0];
    let next = forward_step(&st, &NonnegMatrix::scalar(2.0).unwrap(), &NonnegVector::new(vec![1.0]).unwrap()).unwrap();
    assert_eq!(next.v, vec![7.0]);
    assert_relative_eq!(next.pi_log_norm, 2f64.ln());
}

#[test]
fn forward_step_rescales_instead_of_overflowing() {
    let mut st = PathState::new(&DirectionPoint::uniform(1), 0);
    let m = NonnegMatrix::scalar(1e30).unwrap();
    let q = NonnegVector::new(vec![1.0]).unwrap();
    for _ in 0..40 {
        st = forward_step(&st, &m, &q).unwrap();
    }
    assert!(st.v.iter().all(|x| x.is_finite()));
    assert_relative_eq!(st.log_norm_v(), 39.0 * 1e30f64.ln(), max_relative = 1e-12);
}

#[test]
fn deterministic_passage() {
    let det = bundled_law("deterministic").unwrap();
    for i in 0..5 {
        let s = simulate_tau(&det, &PassageConfig::new(10.0, 100, 1), i).unwrap();
        assert_eq!(s.tau, 4);
        assert!(!s.censored);
        assert_eq!(s.overshoot, 5.0);
        assert_eq!(s.log_weight, 0.0);
    }
}

#[test]
fn bounded_trajectory_is_censored() {
    let law = build_law_scalar(&[(0.5, 1.0, 1.0)]).unwrap();
    let s = simulate_tau(&law, &PassageConfig::new(10.0, 50, 1), 0).unwrap();
    assert!(s.censored);
    assert_eq!(s.tau, 50);
}

#[test]
fn halfdouble_passage_frequencies() {
    let law = bundled_law("halfdouble").unwrap();
    let cfg = PassageConfig::new(3.0, 3, 42);
    let samples = run_replicates(&law, &cfg, None, 20_000).unwrap();
    assert!(samples.iter().all(|s| s.censored || s.tau == 3));
    let hits = samples.iter().filter(|s| !s.censored).count() as f64 / 20_000.0;
    assert!((hits - 0.5).abs() < 3.0 * (0.25f64 / 20_000.0).sqrt());
}

#[test]
fn tilted_step_law_in_one_dimension() {
    let law = bundled_law("golden").unwrap();
    let p = Pressure::new(&law).unwrap();
    let alpha = p.solve_alpha(None).unwrap().alpha;
    let k = TiltKernel::new(&law, &p.solve(alpha).unwrap(), Side::Transpose).unwrap();
    let (probs, _) = k.probabilities(&[1.0]);
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    assert_relative_eq!(probs[0], phi / 2.0, epsilon = 1e-9);
}

#[test]
fn zero_tilt_is_plain_monte_carlo() {
    let law = bundled_law("positive2d").unwrap();
    let p = Pressure::new(&law).unwrap();
    let k = TiltKernel::new(&law, &p.solve(0.0).unwrap(), Side::Transpose).unwrap();
    let cfg = PassageConfig::new(5.0, 30, 9);
    for i in 0..50 {
        let s = simulate_tau_tilted(&law, &k, &cfg, i).unwrap();
        assert!(s.log_weight.abs() < 1e-9);
    }
}

#[test]
fn tilted_estimate_is_unbiased_on_tiny_instance() {
    let law = bundled_law("halfdouble").unwrap();
    let exact = exact_passage_law(&law, 3.0, 3, None, EnumerationBudget::default()).unwrap();
    let p = Pressure::new(&law).unwrap();
    let k = TiltKernel::new(&law, &p.solve(1.5).unwrap(), Side::Transpose).unwrap();
    let cfg = PassageConfig::new(3.0, 3, 5);
    let n = 50_000;
    let samples = run_replicates(&law, &cfg, Some(&k), n).unwrap();
    let w: Vec<f64> = samples.iter().map(|s| if s.passed_by(3) { s.weight() } else { 0.0 }).collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((mean - exact.cdf(3)).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean} vs {}", exact.cdf(3));
}

#[test]
fn sample_v_examples() {
    let law = build_law_scalar(&[(0.5, 1.0, 1.0)]).unwrap();
    let v = sample_v(&law, 20, 3, 1).unwrap();
    for x in v {
        assert!((x[0] - 2.0).abs() <= 2f64.powi(-19));
    }
    let golden = bundled_law("golden").unwrap();
    assert!(sample_v(&golden, 1, 10, 1).unwrap().iter().all(|x| x[0] == 1.0));
}

#[test]
fn sample_v_mean_matches_closed_form() {
    // E V_n for M uniform on {0.25, 0.75} and Q ≡ 1 is Σ_{j<n} 0.5^j
    let law = build_law_scalar(&[(0.25, 1.0, 0.5), (0.75, 1.0, 0.5)]).unwrap();
    let n = 6;
    let v = sample_v(&law, n, 40_000, 3).unwrap();
    let xs: Vec<f64> = v.iter().map(|x| x[0]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
    let want = 2.0 * (1.0 - 0.5f64.powi(n as i32));
    assert!((mean - want).abs() < 3.0 * sd / (xs.len() as f64).sqrt());
}

#[test]
fn streams_are_independent_of_scheduling() {
    let law = bundled_law("smooth4").unwrap();
    let cfg = PassageConfig::new(50.0, 200, 77);
    let all = run_replicates(&law, &cfg, None, 64).unwrap();
    for i in [0u64, 17, 63] {
        assert_eq!(all[i as usize], simulate_tau(&law, &cfg, i).unwrap());
    }
}

#[test]
fn config_validation() {
    let law = bundled_law("golden").unwrap();
    assert!(simulate_tau(&law, &PassageConfig::new(0.0, 10, 1), 0).is_err());
    assert!(simulate_tau(&law, &PassageConfig::new(1.0, 0, 1), 0).is_err());
    let cfg = PassageConfig::new(1.0, 10, 1).with_direction(DirectionPoint::uniform(2));
    assert!(simulate_tau(&law, &cfg, 0).is_err());
}
