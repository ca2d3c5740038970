//! Property-based invariants across the numeric kernels.

use copoly::convolve::{solve_exact, solve_fft};
use copoly::logspace::{logsumexp, LogSum};
use copoly::partition::{quenched_log_z, ModelParams};
use copoly::renewal::{make_power_law, pinned_profile, renewal_mass};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_solver_matches_direct_solver(
        len in 64usize..512,
        alpha in 0.2f64..2.0,
        xi in 0.0f64..1.0,
    ) {
        // renewal-type kernel with sub-unit mass
        let mut kernel = vec![0.0; len + 1];
        for (g, slot) in kernel.iter_mut().enumerate().skip(1) {
            *slot = xi * (g as f64).powf(-(1.0 + alpha));
        }
        let norm: f64 = kernel.iter().sum();
        if norm > 1.0 {
            for v in kernel.iter_mut() {
                *v /= norm;
            }
        }
        let mut source = vec![0.0; len];
        source[0] = 1.0;
        let exact = solve_exact(&kernel, &source);
        let fft = solve_fft(&kernel, &source);
        for (a, b) in exact.iter().zip(fft.iter()) {
            prop_assert!((a - b).abs() <= 1e-11 * a.abs().max(1.0));
        }
    }

    #[test]
    fn streaming_log_sum_matches_pairwise(terms in prop::collection::vec(-300.0f64..300.0, 1..40)) {
        let mut acc = LogSum::new();
        let mut pair = f64::NEG_INFINITY;
        for &t in &terms {
            acc.push(t);
            pair = logsumexp(pair, t);
        }
        prop_assert!((acc.value() - pair).abs() < 1e-10);
    }

    #[test]
    fn pinning_at_full_strength_is_renewal_mass(
        alpha in 0.3f64..1.8,
        n in 16usize..200,
    ) {
        let law = make_power_law(alpha, 256).unwrap();
        let profile = pinned_profile(&law, 1.0, n).unwrap();
        let u = renewal_mass(&law, n).unwrap();
        for m in 0..=n {
            prop_assert!((profile[m] - u.u(m)).abs() <= 1e-10 * u.u(m).max(1e-12));
        }
    }

    #[test]
    fn quenched_log_z_monotone_in_asymmetry(
        lambda in 0.0f64..1.0,
        h_lo in 0.0f64..1.0,
        bump in 0.01f64..1.0,
        seed in 0u64..1000,
    ) {
        let law = make_power_law(0.5, 64).unwrap();
        let omega = copoly::disorder::sample(seed, 32, None);
        let lo = quenched_log_z(&law, &omega, &ModelParams::new(lambda, h_lo).unwrap(), 32)
            .unwrap()
            .log_z(32);
        let hi = quenched_log_z(
            &law,
            &omega,
            &ModelParams::new(lambda, h_lo + bump).unwrap(),
            32,
        )
        .unwrap()
        .log_z(32);
        prop_assert!(hi <= lo + 1e-12);
    }
}
