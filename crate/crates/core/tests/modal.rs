use num_complex::Complex64;
use viscoinv::kernel::SoeKernel;
use viscoinv::modal::*;

fn system(kernel: SoeKernel) -> ModalSystem {
    ModalSystem {
        eigenvalue: 1.0,
        amplitude: 1.5,
        gain: 0.8,
        load: ModalLoad::Pulse { width: 1.0 },
        kernel,
    }
}

/// Undamped response to the cosine pulse with frequency `ω`, for `t ≥ width`.
fn pulse_response(sys: &ModalSystem, omega: f64, t: f64) -> f64 {
    let ModalLoad::Pulse { width: w } = sys.load else { unreachable!() };
    let a = 2.0 * std::f64::consts::PI / w;
    let i = Complex64::i();
    let integral = (1.0 - (-i * omega * w).exp()) / (i * w) * (a * a / (omega * (a * a - omega * omega)));
    sys.gain * sys.amplitude / omega * ((i * omega * t).exp() * integral).im
}

fn max_rel_error(y: &[f64], dt: f64, from: f64, truth: impl Fn(f64) -> f64) -> f64 {
    let start = (from / dt).ceil() as usize;
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    (start..y.len()).map(|n| (y[n] - truth(n as f64 * dt)).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn zero_load_gives_zero_response() {
    let mut sys = system(SoeKernel::new(vec![0.5], vec![2.0]).unwrap());
    sys.load = ModalLoad::Zero;
    let y = simulate_mode(&sys, 0.01, 5.0).unwrap();
    assert_eq!(y.len(), 501);
    assert!(y.values().iter().all(|v| *v == 0.0));
}

#[test]
fn undamped_pulse_response_converges_at_second_order() {
    let sys = system(SoeKernel::zero());
    let errs: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&dt| {
            let y = simulate_mode(&sys, dt, 20.0).unwrap();
            max_rel_error(y.values(), dt, 1.0, |t| pulse_response(&sys, 1.0, t))
        })
        .collect();
    assert!(errs[2] < 1e-3, "{errs:?}");
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order > 1.8, "{errs:?}");
    }
}

#[test]
fn constant_kernel_stiffens_the_mode() {
    // k ≡ c and u(0) = 0 give λ c u, i.e. eigenvalue λ(1 + c)
    let c = 0.6;
    let sys = system(SoeKernel::constant(c));
    let omega = (sys.eigenvalue * (1.0 + c)).sqrt();
    let dt = 0.002;
    let y = simulate_mode(&sys, dt, 20.0).unwrap();
    let err = max_rel_error(y.values(), dt, 1.0, |t| pulse_response(&sys, omega, t));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn recovers_exponential_kernel_transform() {
    let sys = system(SoeKernel::new(vec![1.0], vec![1.0]).unwrap());
    let y = simulate_mode(&sys, 1e-3, 200.0).unwrap();
    let rec = recover_kernel_laplace(&y, &sys, &[0.5, 1.0, 2.0, 5.0]).unwrap();
    for p in rec {
        let want = 1.0 / (p.s + 1.0);
        let got = p.value.unwrap();
        assert!(((got - want) / want).abs() < 1e-3, "s = {}: {got} vs {want}", p.s);
        assert!(p.value_tail_bound < 1e-12);
    }
}

#[test]
fn zero_kernel_recovers_zero() {
    let sys = system(SoeKernel::zero());
    let y = simulate_mode(&sys, 1e-3, 200.0).unwrap();
    for p in recover_kernel_laplace(&y, &sys, &[0.5, 1.0, 2.0, 5.0]).unwrap() {
        assert!(p.value.unwrap().abs() < 1e-3, "s = {}: {:?}", p.s, p.value);
    }
}

#[test]
fn soe_round_trip_and_injectivity() {
    let s_points = [0.3, 0.7, 1.5, 3.0];
    let k1 = SoeKernel::new(vec![0.4, 0.2], vec![0.5, 3.0]).unwrap();
    let k2 = SoeKernel::new(vec![0.4, 0.2], vec![0.6, 3.0]).unwrap();
    let mut errs = Vec::new();
    let mut values = Vec::new();
    for k in [&k1, &k2] {
        let sys = system(k.clone());
        let y = simulate_mode(&sys, 1e-3, 200.0).unwrap();
        let rec = recover_kernel_laplace(&y, &sys, &s_points).unwrap();
        let mut err = 0.0_f64;
        for p in &rec {
            let want = k.laplace(Complex64::new(p.s, 0.0)).re;
            err = err.max((p.value.unwrap() - want).abs());
            assert!(((p.value.unwrap() - want) / want).abs() < 1e-3, "s = {}", p.s);
        }
        errs.push(err);
        values.push(rec.iter().map(|p| p.value.unwrap()).collect::<Vec<_>>());
    }
    let floor = errs.iter().fold(0.0_f64, |m, e| m.max(*e));
    let sep = values[0].iter().zip(&values[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(sep >= 10.0 * floor, "separation {sep:e}, floor {floor:e}");
}

#[test]
fn recovery_error_shrinks_under_refinement() {
    let k = SoeKernel::new(vec![0.7], vec![1.5]).unwrap();
    let sys = system(k.clone());
    let err_at = |dt: f64, t: f64| {
        let y = simulate_mode(&sys, dt, t).unwrap();
        recover_kernel_laplace(&y, &sys, &[0.5, 1.0, 2.0])
            .unwrap()
            .iter()
            .map(|p| (p.value.unwrap() - k.laplace(Complex64::new(p.s, 0.0)).re).abs())
            .fold(0.0, f64::max)
    };
    let dt_ladder: Vec<f64> = [4e-3, 2e-3, 1e-3].iter().map(|&dt| err_at(dt, 100.0)).collect();
    let t_ladder: Vec<f64> = [10.0, 20.0, 40.0].iter().map(|&t| err_at(2e-3, t)).collect();
    for ladder in [&dt_ladder, &t_ladder] {
        for w in ladder.windows(2) {
            assert!(w[1] <= 1.2 * w[0], "{ladder:?}");
        }
    }
    assert!(dt_ladder[2] < dt_ladder[0]);
}

#[test]
fn ill_conditioned_points_are_skipped() {
    let sys = system(SoeKernel::zero());
    let mut quiet = sys.clone();
    quiet.load = ModalLoad::Zero;
    let y = simulate_mode(&quiet, 0.01, 10.0).unwrap();
    let rec = recover_kernel_laplace(&y, &sys, &[1.0]).unwrap();
    assert!(rec[0].value.is_none());
    assert!(recover_kernel_laplace(&y, &sys, &[0.0]).is_err());
    assert!(recover_kernel_laplace(&y, &sys, &[-1.0]).is_err());
}

#[test]
fn invalid_systems_are_rejected() {
    let mut sys = system(SoeKernel::zero());
    sys.eigenvalue = 0.0;
    assert!(simulate_mode(&sys, 0.01, 1.0).is_err());
    let mut sys = system(SoeKernel::zero());
    sys.load = ModalLoad::Pulse { width: -1.0 };
    assert!(simulate_mode(&sys, 0.01, 1.0).is_err());
}
