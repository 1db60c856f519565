use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viscoinv::adjoint::*;
use viscoinv::fem::*;
use viscoinv::kernel::SoeKernel;
use viscoinv::linalg::dot;
use viscoinv::solver::*;

fn desk() -> (BeamAssembly, LinearSystem) {
    let mesh = build_mesh(1.0, 0.1, 0.04, 12, 2, 1).unwrap();
    let asm = assemble(&mesh, &MaterialParams::default()).unwrap();
    let sys = LinearSystem::from_assembly(&asm);
    (asm, sys)
}

fn random_kernel(rng: &mut ChaCha8Rng, m: usize) -> SoeKernel {
    let w = (0..m).map(|_| rng.random_range(0.01..0.5)).collect();
    let l = (0..m).map(|_| rng.random_range(0.1_f64..60.0)).collect();
    SoeKernel::new(w, l).unwrap()
}

/// `J = ½ Δt Σ |yⁿ − dⁿ|²` and its seeds.
fn misfit(traj: &TrajectoryRecord, data: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let dt = traj.config.dt();
    let mut j = 0.0;
    let seeds = traj
        .observations
        .iter()
        .zip(data)
        .map(|(y, d)| {
            y.iter()
                .zip(d)
                .map(|(a, b)| {
                    j += 0.5 * dt * (a - b) * (a - b);
                    dt * (a - b)
                })
                .collect()
        })
        .collect();
    (j, seeds)
}

struct Setup {
    sys: LinearSystem,
    forcing: Forcing,
    cfg: SolverConfig,
    data: Vec<Vec<f64>>,
}

impl Setup {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let (asm, sys) = desk();
        let cfg = SolverConfig::new(0.8, 20).unwrap();
        let forcing = Forcing::from_load(&asm, &LoadSpec::bending(1.0, 0.5), &cfg);
        let truth = KernelPair::new(random_kernel(rng, 3), random_kernel(rng, 2));
        let clean = simulate(&sys, &truth, &forcing, &cfg).unwrap();
        let data = clean
            .observations
            .iter()
            .map(|y| y.iter().map(|v| v * (1.0 + 0.05 * rng.random_range(-1.0..1.0))).collect())
            .collect();
        Setup {
            sys,
            forcing,
            cfg,
            data,
        }
    }

    fn objective(&self, theta: &ThetaVector) -> f64 {
        let k = theta.kernels().unwrap();
        let tr = simulate(&self.sys, &k, &self.forcing, &self.cfg).unwrap();
        misfit(&tr, &self.data).0
    }

    fn gradient(&self, theta: &ThetaVector) -> Vec<f64> {
        let k = theta.kernels().unwrap();
        let tr = solve_forward(&self.sys, &k, &self.forcing, &self.cfg).unwrap();
        let (_, seeds) = misfit(&tr, &self.data);
        let adj = adjoint_sweep(&tr, &seeds, &self.sys, &self.forcing).unwrap();
        theta.pull_back(&adj.dev, &adj.trace).unwrap()
    }
}

fn fd_gradient(f: impl Fn(&ThetaVector) -> f64, theta: &ThetaVector) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + theta.values[i].abs());
            let mut p = theta.clone();
            p.values[i] += h;
            let mut m = theta.clone();
            m.values[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// Fourth-order central differences, `h = 1e-3 (1 + |θ_i|)`.
fn fd4_gradient(f: impl Fn(&ThetaVector) -> f64, theta: &ThetaVector) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let h = 1e-3 * (1.0 + theta.values[i].abs());
            let at = |k: f64| {
                let mut p = theta.clone();
                p.values[i] += k * h;
                f(&p)
            };
            (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h)
        })
        .collect()
}

fn log_uniform_kernel(rng: &mut ChaCha8Rng, m: usize) -> SoeKernel {
    let w = (0..m).map(|_| rng.random_range(0.01..0.3)).collect();
    let l = (0..m).map(|_| 10f64.powf(rng.random_range(-1.0..2.0))).collect();
    SoeKernel::new(w, l).unwrap()
}

#[test]
fn zero_seeds_give_zero_adjoint() {
    let (asm, sys) = desk();
    let cfg = SolverConfig::new(0.8, 20).unwrap();
    let forcing = Forcing::from_load(&asm, &LoadSpec::bending(1.0, 0.5), &cfg);
    let k = KernelPair::shared(SoeKernel::new(vec![0.3, 0.1], vec![1.0, 10.0]).unwrap());
    let tr = solve_forward(&sys, &k, &forcing, &cfg).unwrap();
    let seeds = vec![vec![0.0; 3]; cfg.n_steps + 1];
    let adj = adjoint_sweep(&tr, &seeds, &sys, &forcing).unwrap();
    assert!(adj.multipliers.iter().flatten().all(|&x| x == 0.0));
    assert!(adj.dev.weights.iter().chain(&adj.dev.rates).all(|&x| x == 0.0));
    assert!(adj.load.iter().all(|&x| x == 0.0));
}

#[test]
fn adjoint_is_transpose_of_load_to_observation_map() {
    // y = A ℓ is linear in the load samples for fixed kernels
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (asm, sys) = desk();
    let cfg = SolverConfig::new(0.8, 20).unwrap();
    let shape = asm.load_shape(LoadKind::Bending).to_vec();
    for kernels in [
        KernelPair::zero(),
        KernelPair::new(random_kernel(&mut rng, 4), random_kernel(&mut rng, 2)),
    ] {
        let profile: Vec<f64> = (0..=cfg.n_steps).map(|_| rng.random_range(-1.0..1.0)).collect();
        let forcing = Forcing::new(shape.clone(), profile.clone());
        let tr = solve_forward(&sys, &kernels, &forcing, &cfg).unwrap();
        let r: Vec<Vec<f64>> = (0..=cfg.n_steps)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let lhs: f64 = tr.observations.iter().zip(&r).map(|(y, r)| dot(y, r)).sum();
        let adj = adjoint_sweep(&tr, &r, &sys, &forcing).unwrap();
        let rhs = dot(&adj.load, &profile);
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
    }
}

#[test]
fn impulse_at_final_step_matches_finite_differences() {
    let (asm, sys) = desk();
    let cfg = SolverConfig::new(0.8, 20).unwrap();
    let forcing = Forcing::from_load(&asm, &LoadSpec::bending(1.0, 0.5), &cfg);
    let th = ThetaVector::split(&KernelPair::new(
        SoeKernel::new(vec![0.2, 0.1], vec![0.5, 20.0]).unwrap(),
        SoeKernel::new(vec![0.3], vec![2.0]).unwrap(),
    ));
    // J = y_1 at the last step
    let f = |t: &ThetaVector| {
        let tr = simulate(&sys, &t.kernels().unwrap(), &forcing, &cfg).unwrap();
        tr.observations[cfg.n_steps][1]
    };
    let tr = solve_forward(&sys, &th.kernels().unwrap(), &forcing, &cfg).unwrap();
    let mut seeds = vec![vec![0.0; 3]; cfg.n_steps + 1];
    seeds[cfg.n_steps][1] = 1.0;
    let adj = adjoint_sweep(&tr, &seeds, &sys, &forcing).unwrap();
    let g = th.pull_back(&adj.dev, &adj.trace).unwrap();
    let fd = fd_gradient(f, &th);
    let cos = dot(&g, &fd) / (dot(&g, &g) * dot(&fd, &fd)).sqrt();
    assert!(cos > 1.0 - 1e-8, "{cos}");
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let setup = Setup::new(&mut rng);
    let mut worst = 0.0_f64;
    for draw in 0..20 {
        let th = if draw % 2 == 0 {
            ThetaVector::split(&KernelPair::new(
                log_uniform_kernel(&mut rng, 3),
                log_uniform_kernel(&mut rng, 2),
            ))
        } else {
            ThetaVector::shared(&log_uniform_kernel(&mut rng, 3))
        };
        let g = setup.gradient(&th);
        let fd = fd4_gradient(|t| setup.objective(t), &th);
        for (a, b) in g.iter().zip(&fd) {
            worst = worst.max((a - b).abs() / b.abs());
        }
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn two_point_differences_agree_to_their_noise_floor() {
    // with h = 1e-6 (1 + |θ|) the solver's ~1e-12 relative round-off
    // dominates; the check is scaled by the largest component
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let setup = Setup::new(&mut rng);
    let th = ThetaVector::split(&KernelPair::new(log_uniform_kernel(&mut rng, 3), log_uniform_kernel(&mut rng, 2)));
    let g = setup.gradient(&th);
    let fd = fd_gradient(|t| setup.objective(t), &th);
    let scale = fd.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let worst = g.iter().zip(&fd).map(|(a, b)| (a - b).abs() / scale).fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst:e}");
}

#[test]
fn gradient_matches_fourth_order_differences_per_coordinate() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let setup = Setup::new(&mut rng);
    let mut worst = 0.0_f64;
    for _ in 0..3 {
        let th = ThetaVector::split(&KernelPair::new(
            log_uniform_kernel(&mut rng, 8),
            log_uniform_kernel(&mut rng, 8),
        ));
        let g = setup.gradient(&th);
        let fd = fd4_gradient(|t| setup.objective(t), &th);
        for (a, b) in g.iter().zip(&fd) {
            worst = worst.max((a - b).abs() / b.abs());
        }
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn tangent_and_adjoint_pairings_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (asm, sys) = desk();
    let cfg = SolverConfig::new(0.8, 20).unwrap();
    let forcing = Forcing::from_load(&asm, &LoadSpec::bending(1.0, 0.5), &cfg);
    let th = ThetaVector::split(&KernelPair::new(random_kernel(&mut rng, 4), random_kernel(&mut rng, 3)));
    let tr = solve_forward(&sys, &th.kernels().unwrap(), &forcing, &cfg).unwrap();
    for _ in 0..5 {
        let d: Vec<f64> = (0..th.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<Vec<f64>> = (0..=cfg.n_steps)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (dd, dt) = th.push_forward(&d).unwrap();
        let dy = tangent_linear(&tr, &sys, &dd, &dt).unwrap();
        let lhs: f64 = dy.iter().zip(&r).map(|(a, b)| dot(a, b)).sum();
        let adj = adjoint_sweep(&tr, &r, &sys, &forcing).unwrap();
        let rhs = dot(&th.pull_back(&adj.dev, &adj.trace).unwrap(), &d);
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
    }
}

#[test]
fn empty_measurement_window_gives_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let setup = Setup::new(&mut rng);
    let th = ThetaVector::shared(&random_kernel(&mut rng, 3));
    let tr = solve_forward(&setup.sys, &th.kernels().unwrap(), &setup.forcing, &setup.cfg).unwrap();
    // only y⁰ = 0 is measured, which no parameter can change
    let mut seeds = vec![vec![0.0; 3]; setup.cfg.n_steps + 1];
    seeds[0] = vec![1.0, -2.0, 0.5];
    let adj = adjoint_sweep(&tr, &seeds, &setup.sys, &setup.forcing).unwrap();
    let g = th.pull_back(&adj.dev, &adj.trace).unwrap();
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn discrete_gradient_converges_to_volume_pairing() {
    // dJ/dw_k = ∫ e^{−λ_k s} G(s) ds in the limit Δt → 0
    let (asm, sys) = desk();
    let k = SoeKernel::new(vec![0.4, 0.2], vec![1.5, 8.0]).unwrap();
    let kernels = KernelPair::new(k, SoeKernel::zero());
    let spec = LoadSpec::bending(1.0, 0.8);
    let gap = |n: usize| {
        let cfg = SolverConfig::new(2.0, n).unwrap();
        let forcing = Forcing::from_load(&asm, &spec, &cfg);
        let tr = solve_forward(&sys, &kernels, &forcing, &cfg).unwrap();
        // J = ½ ∫ y₁² dt
        let seeds: Vec<Vec<f64>> = tr.observations.iter().map(|y| vec![0.0, cfg.dt() * y[1], 0.0]).collect();
        let adj = adjoint_sweep(&tr, &seeds, &sys, &forcing).unwrap();
        let g = kernel_gradient_function(&tr, &adj, &sys.dev).unwrap();
        let cont = pair_with_kernel_gradient(&g, &cfg, |s| (-1.5 * s).exp());
        ((adj.dev.weights[0] - cont) / adj.dev.weights[0]).abs()
    };
    let (g1, g2, g3) = (gap(50), gap(100), gap(200));
    assert!(g1 < 0.2, "{g1}");
    assert!((g1 / g2).log2() >= 0.9 && (g2 / g3).log2() >= 0.9, "{g1} {g2} {g3}");
}

#[test]
fn incomplete_trajectory_is_rejected() {
    let (asm, sys) = desk();
    let cfg = SolverConfig::new(0.8, 20).unwrap();
    let forcing = Forcing::from_load(&asm, &LoadSpec::bending(1.0, 0.5), &cfg);
    let tr = simulate(&sys, &KernelPair::zero(), &forcing, &cfg).unwrap();
    let seeds = vec![vec![0.0; 3]; cfg.n_steps + 1];
    assert!(adjoint_sweep(&tr, &seeds, &sys, &forcing).is_err());
}

