use mmv_core::game::Generator;
use mmv_core::meanvar::{lagrange_gamma, optimal_a, MeanVarianceSolution};
use mmv_core::model::audit_assumptions;
use mmv_core::pde::solve;
use mmv_core::sim::{objective_from_bundle, simulate_system, EtaControl, Measure, PiControl};
use mmv_core::{Anchor, ControlFields, FactorMarketModel, GridSpec, McConfig, ModelFamily};
use proptest::prelude::*;

fn ou_tanh(kappa: f64, beta: f64, sigma0: f64, lambda0: f64, lambda1: f64, rho: f64) -> FactorMarketModel {
    FactorMarketModel::new(
        ModelFamily::OuTanh {
            kappa,
            mean_level: 0.0,
            beta,
            sigma0,
            lambda0,
            lambda1,
        },
        0.02,
        rho,
        1.0,
    )
    .unwrap()
}

fn family() -> impl Strategy<Value = FactorMarketModel> {
    (0.2..2.0f64, 0.1..1.0f64, 0.05..0.5f64, -0.5..0.5f64, -0.3..0.3f64, -1.0..1.0f64)
        .prop_map(|(k, b, s, l0, l1, r)| ou_tanh(k, b, s, l0, l1, r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn families_pass_their_own_audit(m in family()) {
        let rep = audit_assumptions(&m, -4.0, 4.0, 401).unwrap();
        prop_assert!(rep.passed(), "{:?}", rep.violations);
        prop_assert!(rep.max_abs_lambda <= m.declared_thresholds().lambda_max * (1.0 + 1e-12));
    }

    #[test]
    fn value_surface_respects_bounds(m in family()) {
        let sol = solve(&m, &GridSpec::new(-3.0, 3.0, 61, 101).unwrap()).unwrap();
        let lmax = m.declared_thresholds().lambda_max;
        prop_assert!(sol.bound_violation(lmax) < 1e-6);
    }

    #[test]
    fn market_best_response_to_saddle_portfolio(
        m in family(),
        y in 0.05..5.0f64,
        z in -2.0..2.0f64,
        t in 0.0..0.99f64,
    ) {
        let sol = solve(&m, &GridSpec::new(-3.0, 3.0, 61, 101).unwrap()).unwrap();
        let f = ControlFields::new(&sol, &m, Anchor::new(1.0, 0.5, 0.0, 0.0).unwrap()).unwrap();
        let pi = f.optimal_pi(y, z, t).unwrap();
        let best = f.inner_max_eta(y, z, t, pi).unwrap();
        let star = f.optimal_eta(z, t).unwrap();
        prop_assert!((best.0 - star.0).abs() < 1e-10);
        prop_assert!((best.1 - star.1).abs() < 1e-10);
        // concave in eta: the quadratic coefficient y G is negative
        let node = Generator::new(&sol, &m).at_state(y, z, t).unwrap();
        prop_assert!(node.y * node.g < 0.0);
        // pi enters affinely with zero slope at the saddle distortion
        prop_assert!(node.pi_slope(star.0).abs() < 1e-12);
    }

    #[test]
    fn reduced_strategy_matches_markov_at_anchor(
        m in family(),
        x0 in -2.0..2.0f64,
        y0 in 0.05..3.0f64,
        z0 in -1.5..1.5f64,
    ) {
        let sol = solve(&m, &GridSpec::new(-3.0, 3.0, 61, 101).unwrap()).unwrap();
        let f = ControlFields::new(&sol, &m, Anchor::new(x0, y0, z0, 0.0).unwrap()).unwrap();
        let a = f.reduced_pi(x0, z0, 0.0).unwrap();
        let b = f.optimal_pi(y0, z0, 0.0).unwrap();
        prop_assert!((a - b).abs() <= 1e-13 * (1.0 + b.abs()));
    }

    #[test]
    fn mean_variance_closed_forms_agree(
        er in 0.05..0.95f64,
        spread in 0.01..2.0f64,
        theta in 0.05..10.0f64,
        x in -2.0..2.0f64,
    ) {
        let er2 = er * er + spread;
        let s = MeanVarianceSolution::new(x, theta, er, er2).unwrap();
        let (a, g) = optimal_a(x, theta, er, er2 - er * er).unwrap();
        prop_assert!((s.a_star - a).abs() <= 1e-12 * (1.0 + a.abs()));
        prop_assert!((s.a_star_via_phi(x) - a).abs() <= 1e-10 * (1.0 + a.abs()));
        prop_assert!((lagrange_gamma(a, x, er).unwrap() - g).abs() <= 1e-10 * (1.0 + g.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn objective_translation_and_monotonicity(beta in -3.0..3.0f64, seed in any::<u64>()) {
        let m = ou_tanh(1.0, 0.5, 0.2, 0.3, 0.1, 0.5);
        let sol = solve(&m, &GridSpec::new(-4.0, 4.0, 81, 51).unwrap()).unwrap();
        let f = ControlFields::new(&sol, &m, Anchor::new(1.0, 0.5, 0.0, 0.0).unwrap()).unwrap();
        let cfg = McConfig::new(64, 16, seed).unwrap();
        for measure in [Measure::P, Measure::Q] {
            let b = simulate_system(&f, PiControl::Saddle, EtaControl::Saddle, measure, &cfg).unwrap();
            let base = objective_from_bundle(&b, 0.0);
            let moved = objective_from_bundle(&b, beta);
            let j = |e: &mmv_core::sim::ObjectiveEstimate| e.self_normalized.unwrap_or(e.j).mean;
            prop_assert!((j(&moved) - j(&base) + beta).abs() <= 1e-12 * (1.0 + beta.abs()));
            // more terminal wealth on every path never raises the criterion
            if beta > 0.0 {
                prop_assert!(moved.j.mean <= base.j.mean);
            }
        }
    }
}
