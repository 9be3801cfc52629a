//! Property tests for the schedule and bridge invariants.

use proptest::prelude::*;

use rdbm::bridge::{compute_coefficients, forward_sample, residual};
use rdbm::math::rel_err;
use rdbm::metrics::psnr;
use rdbm::rng::Stream;
use rdbm::sampler::reverse_coeffs;
use rdbm::schedule::{build_table, cumulative_theta, ScheduleFamily, ScheduleSpec};
use rdbm::tensor::TensorGrid;

fn arb_family() -> impl Strategy<Value = ScheduleFamily> {
    prop_oneof![
        Just(ScheduleFamily::Linear),
        Just(ScheduleFamily::Cosine),
        Just(ScheduleFamily::Sigmoid),
        Just(ScheduleFamily::Constant),
    ]
}

fn arb_spec() -> impl Strategy<Value = ScheduleSpec> {
    (arb_family(), 0.01f64..0.5, 0.5f64..3.0, 4usize..32).prop_map(
        |(family, theta_min, extra, steps)| ScheduleSpec {
            family,
            theta_min,
            theta_max: theta_min + extra,
            horizon: 1.0,
            steps,
            lambda: 0.5,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cumulative_is_additive_over_partitions(
        spec in arb_spec(),
        cuts in prop::collection::vec(0.05f64..0.95, 1..4),
    ) {
        let mut points: Vec<f64> = cuts;
        points.push(0.0);
        points.push(1.0);
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let whole = cumulative_theta(&spec, 0.0, 1.0).unwrap();
        let mut sum = 0.0;
        for pair in points.windows(2) {
            sum += cumulative_theta(&spec, pair[0], pair[1]).unwrap();
        }
        prop_assert!(rel_err(sum, whole) < 1e-12, "{sum} vs {whole}");
    }

    #[test]
    fn cumulative_is_monotone_in_upper_limit(
        spec in arb_spec(),
        s in 0.0f64..0.5,
        d1 in 0.0f64..0.25,
        d2 in 0.0f64..0.25,
    ) {
        let t1 = s + d1;
        let t2 = t1 + d2;
        let a = cumulative_theta(&spec, s, t1).unwrap();
        let b = cumulative_theta(&spec, s, t2).unwrap();
        prop_assert!(b >= a - 1e-13, "{b} < {a}");
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn forward_sample_endpoints_are_bit_exact(
        spec in arb_spec(),
        seed in 0u64..1000,
    ) {
        let table = build_table(&spec).unwrap();
        let coeffs = compute_coefficients(&table, spec.lambda).unwrap();
        let mut stream = Stream::named(seed, "prop.fwd");
        let x0 = TensorGrid::zeros(vec![5]).normal_like(&mut stream);
        let mu = TensorGrid::zeros(vec![5]).normal_like(&mut stream);
        let eps = TensorGrid::zeros(vec![5]).normal_like(&mut stream);
        let pi = residual(&x0, &mu, false).unwrap();
        let at0 = forward_sample(&x0, &mu, &pi, &coeffs, 0, &eps).unwrap();
        let at_n = forward_sample(&x0, &mu, &pi, &coeffs, spec.steps, &eps).unwrap();
        for k in 0..5 {
            prop_assert_eq!(at0.data()[k].to_bits(), x0.data()[k].to_bits());
            prop_assert_eq!(at_n.data()[k].to_bits(), mu.data()[k].to_bits());
        }
    }

    #[test]
    fn coefficient_structure_holds_for_positive_schedules(spec in arb_spec()) {
        let table = build_table(&spec).unwrap();
        let coeffs = compute_coefficients(&table, spec.lambda).unwrap();
        let n = coeffs.n_cells();
        prop_assert_eq!(coeffs.theta[0], 1.0);
        prop_assert_eq!(coeffs.theta[n], 0.0);
        prop_assert_eq!(coeffs.sigma[0], 0.0);
        prop_assert_eq!(coeffs.sigma[n], 0.0);
        for i in 1..=n {
            prop_assert!(coeffs.theta[i] < coeffs.theta[i - 1]);
            prop_assert!(coeffs.r[i] < coeffs.r[i - 1]);
            if i < n {
                prop_assert!(coeffs.sigma[i] > 0.0);
            }
            // Ratio consistency against Theta and Sigma.
            if i < n {
                let via = 2.0 * spec.lambda * coeffs.theta[i] * coeffs.theta[i]
                    / (coeffs.sigma[i] * coeffs.sigma[i]);
                prop_assert!(rel_err(coeffs.r[i], via) < 1e-9);
            }
        }
    }

    #[test]
    fn reverse_coeff_constraints_on_random_schedules(spec in arb_spec()) {
        let table = build_table(&spec).unwrap();
        let coeffs = compute_coefficients(&table, spec.lambda).unwrap();
        for i in 1..coeffs.n_cells() {
            let rc = reverse_coeffs(&coeffs, i).unwrap();
            prop_assert!(rel_err(rc.kappa * coeffs.theta[i] + rc.gamma, coeffs.theta[i - 1]) < 1e-12);
            let rhs = 1.0 - coeffs.theta[i - 1];
            prop_assert!((rc.kappa + rc.eta - rc.kappa * coeffs.theta[i] - rhs).abs()
                <= 1e-12 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn psnr_is_symmetric(seed in 0u64..500) {
        let mut stream = Stream::named(seed, "prop.psnr");
        let a = TensorGrid::zeros(vec![9]).normal_like(&mut stream);
        let b = TensorGrid::zeros(vec![9]).normal_like(&mut stream);
        prop_assert_eq!(
            psnr(&a, &b, 1.0).unwrap().to_bits(),
            psnr(&b, &a, 1.0).unwrap().to_bits()
        );
    }
}
