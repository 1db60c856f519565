//! Randomized invariants of the kernel primitives.

use num_complex::Complex64;
use proptest::prelude::*;
use viscoinv::commands::{identity_orders, identity_signals};
use viscoinv::kernel::{
    check_alikhanov, check_fourier_coercivity, discrete_convolve, CoercivityKernel, SampledSignal, SoeKernel,
};
use viscoinv::modal::{recover_kernel_laplace, simulate_mode, ModalLoad, ModalSystem};
use viscoinv::rational::log_space;

fn soe(max_modes: usize, weights: (f64, f64), log10_rates: (f64, f64)) -> impl Strategy<Value = SoeKernel> {
    prop::collection::vec((weights.0..weights.1, log10_rates.0..log10_rates.1), 1..=max_modes)
        .prop_map(|m| SoeKernel::new(m.iter().map(|p| p.0).collect(), m.iter().map(|p| 10f64.powf(p.1)).collect()).unwrap())
}

/// Positive, non-increasing step function: a start value and multiplicative drops.
fn step_kernel(n: usize) -> impl Strategy<Value = Vec<f64>> {
    (0.1f64..2.0, prop::collection::vec(prop::option::weighted(0.1, 0.2f64..1.0), n)).prop_map(|(v0, drops)| {
        let mut v = v0;
        drops
            .into_iter()
            .map(|d| {
                v *= d.unwrap_or(1.0);
                v
            })
            .collect()
    })
}

fn smooth_signal() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, 0.5f64..8.0, 0.0f64..6.3), 1..5)
}

fn sines(terms: &[(f64, f64, f64)], t: f64) -> f64 {
    terms.iter().map(|(a, f, p)| a * (f * t + p).sin()).sum()
}

fn symmetric_grid() -> Vec<f64> {
    let half = log_space(1e-3, 1e3, 200);
    half.iter().rev().map(|w| -w).chain(std::iter::once(0.0)).chain(half.iter().copied()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identity_residuals_are_second_order(k in soe(4, (0.01, 1.0), (-1.0, 1.0))) {
        let (w, q) = identity_signals();
        let orders = identity_orders(&k, &w, &q).unwrap();
        prop_assert!(!orders.is_empty());
        for p in orders {
            prop_assert!(p >= 1.9, "observed order {p}");
        }
    }

    #[test]
    fn convolution_is_linear_in_the_signal(
        k in soe(3, (0.1, 2.0), (-1.0, 1.0)),
        a in smooth_signal(),
        b in smooth_signal(),
        c in -3.0f64..3.0,
    ) {
        let dt = 0.01;
        let fa = SampledSignal::from_fn(dt, 150, |x| sines(&a, x)).unwrap();
        let fb = SampledSignal::from_fn(dt, 150, |x| sines(&b, x)).unwrap();
        let sum = SampledSignal::from_fn(dt, 150, |x| sines(&a, x) + c * sines(&b, x)).unwrap();
        let ga = discrete_convolve(&k, &fa).unwrap();
        let gb = discrete_convolve(&k, &fb).unwrap();
        let gs = discrete_convolve(&k, &sum).unwrap();
        prop_assert_eq!(gs.values()[0], 0.0);
        for n in 0..150 {
            let want = ga.values()[n] + c * gb.values()[n];
            prop_assert!((gs.values()[n] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alikhanov_bound_holds_for_monotone_kernels(kv in step_kernel(200), terms in smooth_signal()) {
        let dt = 0.01;
        let k = SampledSignal::new(dt, kv).unwrap();
        let w = SampledSignal::from_fn(dt, 200, |t| sines(&terms, t)).unwrap();
        let gap = check_alikhanov(&k, &w).unwrap();
        prop_assert!(gap >= -1e-10, "gap {gap}");
    }

    #[test]
    fn positive_soe_kernels_are_coercive(k in soe(4, (1e-3, 1.0), (-2.0, 3.0)), delta in 0.1f64..2.0) {
        let rep = check_fourier_coercivity(CoercivityKernel::Soe(&k), delta, &symmetric_grid()).unwrap();
        prop_assert!(rep.gamma_lower > 0.0);
        prop_assert!(rep.min_quadratic_form > 0.0);
        prop_assert!(rep.passed);
    }
}

proptest! {
    // each case integrates 2e5 steps
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn modal_round_trip_recovers_the_kernel(k in soe(3, (0.5, 1.5), (-0.3, 0.3))) {
        let sys = ModalSystem {
            eigenvalue: 1.0,
            amplitude: 1.0,
            gain: 1.0,
            load: ModalLoad::Pulse { width: 1.0 },
            kernel: k.clone(),
        };
        let y = simulate_mode(&sys, 1e-3, 200.0).unwrap();
        for p in recover_kernel_laplace(&y, &sys, &[0.5, 1.0, 2.0, 5.0]).unwrap() {
            let truth = k.laplace(Complex64::new(p.s, 0.0)).re;
            let v = p.value.expect("well-conditioned point");
            prop_assert!(((v - truth) / truth).abs() < 1e-3, "s = {}: {v} vs {truth}", p.s);
        }
    }
}
