use approx::assert_relative_eq;
use nodal_core::diagnostics::check_simon_seeded;
use nodal_core::*;
use proptest::prelude::*;

fn phi_strategy() -> impl Strategy<Value = PhiSpec> {
    prop_oneof![
        (1.2f64..5.0).prop_map(|p| PhiSpec::power(p).unwrap()),
        (1.2f64..3.0, 0.0f64..2.0).prop_map(|(p, dq)| PhiSpec::sum_of_powers(p, p + dq).unwrap()),
    ]
}

fn f_strategy() -> impl Strategy<Value = FSpec> {
    prop_oneof![
        (0.05f64..3.0, 0.1f64..10.0).prop_map(|(delta, d)| FSpec::power(delta, d).unwrap()),
        (0.1f64..10.0).prop_map(|d| FSpec::arctan(d).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn h_inverse_round_trip(phi in phi_strategy(), s in 1e-8f64..1e6) {
        let t = phi.h_inverse(s).unwrap();
        let back = phi.h_eval(t).unwrap();
        prop_assert!((back / s - 1.0).abs() <= 1e-10, "h(h^-1({s})) = {back}");
    }

    #[test]
    fn h_inverse_inside_bracket(phi in phi_strategy(), s in 1e-8f64..1e6) {
        let (lo, hi) = phi.h_inverse_bracket(s);
        let t = phi.h_inverse(s).unwrap();
        prop_assert!(lo <= t * (1.0 + 1e-12) && t <= hi * (1.0 + 1e-12), "{lo} <= {t} <= {hi}");
    }

    #[test]
    fn f_odd_and_primitive_even(f in f_strategy(), t in 0.0f64..20.0) {
        prop_assert_eq!(f.f_eval(-t), -f.f_eval(t));
        prop_assert!((f.F_eval(-t) - f.F_eval(t)).abs() <= 1e-14 * (1.0 + f.F_eval(t)));
        prop_assert!(f.F_eval(t) >= 0.0);
    }

    #[test]
    fn primitive_derivative_is_f(f in f_strategy(), t in 0.05f64..20.0) {
        let h = 1e-5 * t;
        let fd = (f.F_eval(t + h) - f.F_eval(t - h)) / (2.0 * h);
        prop_assert!((fd - f.f_eval(t)).abs() <= 1e-6 * (1.0 + f.f_eval(t)), "F' = {fd}, f = {}", f.f_eval(t));
    }

    #[test]
    fn phi_primitive_matches_definition(phi in phi_strategy(), t in 0.0f64..10.0) {
        // Phi(t) <= t h(t) since h is increasing
        let big = phi.Phi_eval(t).unwrap();
        let h = phi.h_eval(t).unwrap();
        prop_assert!(big >= 0.0 && big <= t * h * (1.0 + 1e-12));
        prop_assert!((phi.H_eval(t).unwrap() - (t * h - big)).abs() <= 1e-10 * (1.0 + t * h));
    }

    #[test]
    fn threshold_scales_with_radius(
        p in 1.5f64..4.0,
        frac in 0.1f64..0.9,
        alpha in 0.0f64..2.0,
        dg in 0.0f64..2.0,
        radius in 0.2f64..5.0,
    ) {
        let phi = PhiSpec::power(p).unwrap();
        let f = FSpec::power(frac * (p - 1.0), 1.0).unwrap();
        let gamma = alpha + dg;
        let one = lambda_threshold(&phi, &f, alpha, gamma, 1.0, 1.0).unwrap();
        let scaled = lambda_threshold(&phi, &f, alpha, gamma, radius, 1.0).unwrap();
        // pure powers: Lambda ~ R^-(gamma - alpha + p)
        let expect = one * radius.powf(-(gamma - alpha + p));
        prop_assert!((scaled / expect - 1.0).abs() <= 1e-12, "{scaled} vs {expect}");
    }

    #[test]
    fn first_zero_beyond_radius_below_threshold(
        p in 1.5f64..3.5,
        frac in 0.1f64..0.9,
        alpha in 0.0f64..1.5,
        dg in 0.0f64..1.5,
        shrink in 0.05f64..1.0,
    ) {
        let phi = PhiSpec::power(p).unwrap();
        let f = FSpec::power(frac * (p - 1.0), 1.0).unwrap();
        let gamma = alpha + dg;
        let lam = shrink * lambda_threshold(&phi, &f, alpha, gamma, 1.0, 1.0).unwrap();
        let params = ProblemParams::new(alpha, gamma, lam, 1.0, 1.0);
        let traj = integrate_trajectory(&params, &phi, &f, 1.0, Some(1), &SolverOptions::default()).unwrap();
        prop_assert!(zeros_of(&traj, 1).is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simon_inequality_holds(phi in phi_strategy(), dim in 1usize..=3, seed in any::<u64>()) {
        let rep = check_simon_seeded(&phi, dim, 2_000, seed);
        prop_assert!(rep.is_pass(), "{:?}", rep.checks);
    }
}

#[test]
fn arctan_primitive_at_one() {
    let f = FSpec::arctan(1.0).unwrap();
    let expect = std::f64::consts::FRAC_PI_4 - std::f64::consts::LN_2 / 2.0;
    assert_relative_eq!(f.F_eval(1.0), expect, max_relative = 1e-13);
}
