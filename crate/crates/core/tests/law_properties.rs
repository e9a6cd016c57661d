use perpetua::model::{bundled_law, Atom, DirectionPoint, MatrixQLaw, NonnegMatrix, NonnegVector};
use perpetua::oracle::{exact_exceedance, exact_matrix_moments, exact_passage_law, exact_w, EnumerationBudget};
use perpetua::simulate::{par_map, run_replicates, sample_v, simulate_tau, PassageConfig, TiltKernel};
use perpetua::spectral::{Pressure, RateModel, Side};
use proptest::prelude::*;

/// Laws with 2–3 positive atoms in dimension 1 or 2 and dyadic-ish probabilities.
fn small_law() -> impl Strategy<Value = MatrixQLaw> {
    (1usize..=2, 2usize..=3).prop_flat_map(|(d, k)| {
        (
            Just(d),
            prop::collection::vec(prop::collection::vec(0.05..2.5f64, d * d), k),
            prop::collection::vec(prop::collection::vec(0.1..2.0f64, d), k),
            prop::collection::vec(1u32..4, k),
        )
            .prop_map(|(d, ms, qs, ws)| {
                let total: u32 = ws.iter().sum();
                let atoms = ms
                    .into_iter()
                    .zip(qs)
                    .zip(&ws)
                    .map(|((m, q), &w)| Atom {
                        m: NonnegMatrix::from_row_major(d, m).unwrap(),
                        q: NonnegVector::new(q).unwrap(),
                        p: w as f64 / total as f64,
                    })
                    .collect();
                MatrixQLaw::from_atoms("random", atoms).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn primal_and_conjugate_agree(law in small_law(), s in 0.0..3.0f64) {
        let p = Pressure::new(&law).unwrap();
        let sol = p.solve(s).unwrap();
        let tol = 10.0 * p.tol().max(sol.discretization_residual);
        prop_assert!((sol.kappa - sol.kappa_conjugate).abs() <= tol * sol.kappa, "{} vs {}", sol.kappa, sol.kappa_conjugate);
    }

    #[test]
    fn lambda_is_convex(law in small_law()) {
        let p = Pressure::new(&law).unwrap();
        let l: Vec<f64> = (0..9).map(|i| p.lambda(0.4 * i as f64).unwrap()).collect();
        for w in l.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-8);
        }
    }

    #[test]
    fn passage_masses_sum_to_one(law in small_law(), u in 0.5..30.0f64) {
        let pl = exact_passage_law(&law, u, 8, None, EnumerationBudget::default()).unwrap();
        prop_assert!((pl.total_mass() - 1.0).abs() < 1e-12);
        prop_assert_eq!(pl.pruned, 0.0);
    }

    #[test]
    fn tau_is_monotone_in_u(law in small_law(), u in 0.5..50.0f64, factor in 1.0..4.0f64, rep in 0u64..1000) {
        let a = simulate_tau(&law, &PassageConfig::new(u, 200, 17), rep).unwrap();
        let b = simulate_tau(&law, &PassageConfig::new(u * factor, 200, 17), rep).unwrap();
        prop_assert!(a.tau <= b.tau || b.censored);
    }

    #[test]
    fn weight_identity_on_the_line(ms in prop::collection::vec(0.1..3.0f64, 2..4), s in 0.1..3.0f64, seed in 0u64..100) {
        // d = 1: r*_s ≡ 1, so the increment is log κ(s) − s log m exactly
        let k = ms.len();
        let atoms = ms.iter().map(|&m| Atom { m: NonnegMatrix::scalar(m).unwrap(), q: NonnegVector::new(vec![1.0]).unwrap(), p: 1.0 / k as f64 }).collect();
        let law = MatrixQLaw::from_atoms("line", atoms).unwrap();
        let sol = Pressure::new(&law).unwrap().solve(s).unwrap();
        let kernel = TiltKernel::new(&law, &sol, Side::Transpose).unwrap();
        let mut x = vec![1.0];
        let mut rng = perpetua::simulate::stream_rng(seed, 0);
        for _ in 0..20 {
            let st = kernel.step(&mut x, &mut rng);
            let expect = sol.kappa.ln() - s * ms[st.atom].ln();
            prop_assert!((st.log_weight_increment - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn weight_identity_in_two_dimensions() {
    let law = bundled_law("positive2d").unwrap();
    let s = 1.4;
    let sol = Pressure::new(&law).unwrap().solve(s).unwrap();
    let kernel = TiltKernel::new(&law, &sol, Side::Transpose).unwrap();
    let atoms = law.atoms().unwrap();
    let mut x = vec![0.5, 0.5];
    let mut rng = perpetua::simulate::stream_rng(3, 0);
    for _ in 0..200 {
        let before = x.clone();
        let st = kernel.step(&mut x, &mut rng);
        let gt = atoms[st.atom].m.transpose().apply(&before);
        let norm: f64 = gt.iter().sum();
        let expect = -(s * norm.ln() + sol.r_star_at(&x).ln() - sol.r_star_at(&before).ln() - sol.kappa.ln());
        // equal up to the eigen-residual of the interpolated r*_s
        assert!((st.log_weight_increment - expect).abs() < 1e-6, "{} vs {expect}", st.log_weight_increment);
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let law = bundled_law("positive2d").unwrap();
    let cfg = PassageConfig::new(40.0, 100, 99);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_replicates(&law, &cfg, None, 3000).unwrap())
    };
    assert_eq!(run(1), run(8));
    let w = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let sol = Pressure::new(&law).unwrap().solve(1.0).unwrap();
            exact_w(&law, &sol, 9, EnumerationBudget::default()).unwrap()
        })
    };
    assert_eq!(w(1), w(8));
}

#[test]
fn forward_marginals_match_exact_exceedance() {
    for name in ["golden", "positive2d"] {
        let law = bundled_law(name).unwrap();
        for (n, u) in [(4usize, 3.0), (8, 5.0), (10, 8.0)] {
            let exact = exact_exceedance(&law, u, n, &[], EnumerationBudget::default()).unwrap().norm;
            let draws = sample_v(&law, n, 40_000, 5 + n as u64).unwrap();
            let hits = draws.iter().filter(|v| v.iter().sum::<f64>() > u).count() as f64 / draws.len() as f64;
            let se = (exact * (1.0 - exact) / draws.len() as f64).sqrt().max(1e-4);
            assert!((hits - exact).abs() < 3.0 * se, "{name} n={n}: {hits} vs {exact}");
        }
    }
}

#[test]
fn tilted_estimator_is_unbiased_against_the_oracle() {
    for name in ["golden", "smooth4", "positive2d"] {
        let law = bundled_law(name).unwrap();
        let model = RateModel::calibrate(&law).unwrap();
        let sol = model.solution(model.alpha + 0.5).unwrap();
        let kernel = TiltKernel::new(&law, &sol, Side::Transpose).unwrap();
        let (u, n) = (25.0, 7);
        let exact = exact_passage_law(&law, u, n, None, EnumerationBudget::default()).unwrap().cdf(n);
        let out = run_replicates(&law, &PassageConfig::new(u, n, 8), Some(&kernel), 40_000).unwrap();
        let vals: Vec<f64> = out.iter().map(|p| if p.passed_by(n) { p.weight() } else { 0.0 }).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() * vals.len()) as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se + 1e-12, "{name}: {mean} ± {se} vs {exact}");
    }
}

#[test]
fn w_is_nondecreasing_and_moments_bounded() {
    for name in ["golden", "smooth4", "positive2d"] {
        let law = bundled_law(name).unwrap();
        let model = RateModel::calibrate(&law).unwrap();
        for ds in [0.1, 0.5] {
            let sol = model.solution(model.alpha + ds).unwrap();
            let tr = exact_w(&law, &sol, 8, EnumerationBudget::default()).unwrap();
            for w in tr.w.windows(2) {
                assert!(w[1] >= w[0] - 1e-6, "{name}: {w:?}");
            }
            let lo = tr.plain.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = tr.plain.iter().copied().fold(0.0, f64::max);
            assert!(lo > 0.0 && hi / lo < 50.0, "{name}: {:?}", tr.plain);
        }
    }
}

#[test]
fn uniform_moment_bound() {
    for name in ["positive2d", "garch12"] {
        let law = bundled_law(name).unwrap();
        let p = Pressure::new(&law).unwrap();
        let s_grid: Vec<f64> = (0..9).map(|i| 0.25 + 0.25 * i as f64).collect();
        let n_max = if name == "garch12" { 8 } else { 10 };
        let moments = exact_matrix_moments(&law, &s_grid, n_max, EnumerationBudget::default()).unwrap();
        let mut c: f64 = 0.0;
        for (i, &s) in s_grid.iter().enumerate() {
            let kappa = p.kappa(s).unwrap();
            for (n, row) in moments.iter().enumerate() {
                c = c.max(row[i] / kappa.powi(n as i32 + 1));
            }
        }
        assert!(c.is_finite() && c < 10.0, "{name}: c = {c}");
    }
}

#[test]
fn par_map_keeps_order() {
    let v = par_map(1000, |i| i * 3);
    assert!(v.iter().enumerate().all(|(i, &x)| x == 3 * i as u64));
    let _ = DirectionPoint::uniform(2);
}
