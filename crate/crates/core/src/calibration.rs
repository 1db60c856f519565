//! Kernel calibration from noisy tip observations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{adjoint_sweep, KernelGradient, ThetaLayout, ThetaVector};
use crate::error::{Error, Result};
use crate::fem::{BeamAssembly, LoadSpec};
use crate::kernel::SoeKernel;
use crate::linalg::CsrMatrix;
use crate::optim::{lbfgs_minimize, IterationRecord, OptimizerSettings, Termination};
use crate::solver::{simulate, solve_forward, Forcing, KernelPair, LinearSystem, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// one kernel for both parts, `J = ½ Δt Σ |y − d|²`
    SingleKernel,
    /// separate kernels, `J = Σ_e ω_e ½ ‖y_e − d_e‖² / ‖d_e‖²`
    TwoKernel,
}

/// `γ · ½ ∫₀ᵀ k(t)² dt` per kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Regularization {
    pub gamma_dev: f64,
    pub gamma_trace: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// standard deviation as a fraction of `max_t |signal|`, per component
    pub level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec { level: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level.is_finite() && self.level >= 0.0) {
            return Err(Error::invalid(format!("noise level {} must be non-negative", self.level)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Excitation {
    pub load: LoadSpec,
    pub weight: f64,
    pub forcing: Forcing,
    /// `dⁿ` for `n = 0..=n_meas`, one row per step
    pub measurements: Vec<Vec<f64>>,
}

/// A calibration problem on a fixed assembly and time grid.
#[derive(Clone, Debug)]
pub struct CalibrationProblem {
    pub kind: ObjectiveKind,
    pub config: SolverConfig,
    /// last measured step
    pub n_meas: usize,
    pub excitations: Vec<Excitation>,
    pub regularization: Regularization,
    /// operators of a run; for a shared kernel the trace operator is merged
    /// into the deviatoric one
    system: LinearSystem,
}

impl CalibrationProblem {
    /// Builds a problem without measurements; `loads` pairs a load with
    /// its misfit weight. Fill measurements with [`synthesize_measurements`]
    /// or [`CalibrationProblem::set_measurements`].
    pub fn new(
        asm: &BeamAssembly,
        config: SolverConfig,
        t_meas: f64,
        kind: ObjectiveKind,
        loads: &[(LoadSpec, f64)],
    ) -> Result<Self> {
        config.validate()?;
        let dt = config.dt();
        let n_meas = (t_meas / dt).round() as usize;
        if (n_meas as f64 * dt - t_meas).abs() > 1e-9 * dt || n_meas > config.n_steps {
            return Err(Error::invalid(format!(
                "t_meas = {t_meas} must be a grid time in [0, {}]",
                config.t_final
            )));
        }
        if loads.is_empty() {
            return Err(Error::invalid("at least one excitation is required"));
        }
        let full = LinearSystem::from_assembly(asm);
        let system = match kind {
            ObjectiveKind::SingleKernel => {
                let n = full.dim();
                LinearSystem {
                    dev: CsrMatrix::linear_combination(&[(1.0, &full.dev), (1.0, &full.trace)]),
                    trace: CsrMatrix::zeros(n, n),
                    ..full
                }
            }
            ObjectiveKind::TwoKernel => full,
        };
        let excitations = loads
            .iter()
            .map(|(load, weight)| Excitation {
                load: *load,
                weight: *weight,
                forcing: Forcing::from_load(asm, load, &config),
                measurements: Vec::new(),
            })
            .collect();
        Ok(CalibrationProblem {
            kind,
            config,
            n_meas,
            excitations,
            regularization: Regularization::default(),
            system,
        })
    }

    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn t_meas(&self) -> f64 {
        self.config.time(self.n_meas)
    }

    /// Grid of the measured window `[0, t_meas]`.
    pub fn meas_config(&self) -> SolverConfig {
        SolverConfig {
            t_final: self.t_meas(),
            n_steps: self.n_meas,
            ..self.config
        }
    }

    /// Grid the runs use; one step past `t = 0` when the window is empty.
    fn run_config(&self) -> SolverConfig {
        let n = self.n_meas.max(1);
        SolverConfig {
            t_final: self.config.time(n),
            n_steps: n,
            ..self.config
        }
    }

    pub fn layout(&self, dev_modes: usize, trace_modes: usize) -> ThetaLayout {
        match self.kind {
            ObjectiveKind::SingleKernel => ThetaLayout::Shared { modes: dev_modes },
            ObjectiveKind::TwoKernel => ThetaLayout::Split { trace_modes, dev_modes },
        }
    }

    /// Parameters of a starting guess in this problem's layout.
    pub fn theta_of(&self, kernels: &KernelPair) -> ThetaVector {
        match self.kind {
            ObjectiveKind::SingleKernel => ThetaVector::shared(&kernels.dev),
            ObjectiveKind::TwoKernel => ThetaVector::split(kernels),
        }
    }

    pub fn set_measurements(&mut self, data: Vec<Vec<Vec<f64>>>) -> Result<()> {
        if data.len() != self.excitations.len() {
            return Err(Error::invalid("one measurement series per excitation is required"));
        }
        for d in &data {
            if d.len() != self.n_meas + 1 || d.iter().any(|r| r.len() != self.system.n_obs()) {
                return Err(Error::invalid(format!(
                    "measurements must have {} rows of {} values",
                    self.n_meas + 1,
                    self.system.n_obs()
                )));
            }
        }
        for (e, d) in self.excitations.iter_mut().zip(data) {
            e.measurements = d;
        }
        Ok(())
    }

    fn check_ready(&self) -> Result<()> {
        if self.excitations.iter().any(|e| e.measurements.is_empty()) {
            return Err(Error::invalid("measurements have not been set"));
        }
        Ok(())
    }

    /// Kernels of a run in this problem's operator convention.
    fn run_kernels(&self, theta: &ThetaVector) -> Result<KernelPair> {
        let k = theta.kernels()?;
        Ok(match self.kind {
            ObjectiveKind::SingleKernel => KernelPair::new(k.dev, SoeKernel::zero()),
            ObjectiveKind::TwoKernel => k,
        })
    }

    fn excitation_forcing(&self, e: &Excitation, config: &SolverConfig) -> Forcing {
        Forcing::new(e.forcing.shape.clone(), e.forcing.profile[..=config.n_steps].to_vec())
    }

    /// Observations `Obs uⁿ` over `[0, T]` for every excitation.
    pub fn predict(&self, theta: &ThetaVector) -> Result<Vec<Vec<Vec<f64>>>> {
        let kernels = self.run_kernels(theta)?;
        self.excitations
            .par_iter()
            .map(|e| Ok(simulate(&self.system, &kernels, &e.forcing, &self.config)?.observations))
            .collect()
    }

    /// Misfit of one excitation and its seeds `∂/∂yⁿ`.
    fn misfit(&self, e: &Excitation, y: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let scale = match self.kind {
            ObjectiveKind::SingleKernel => e.weight * self.config.dt(),
            ObjectiveKind::TwoKernel => {
                let norm: f64 = e.measurements.iter().flatten().map(|d| d * d).sum();
                e.weight / norm
            }
        };
        let mut j = 0.0;
        let mut seeds: Vec<Vec<f64>> = y
            .iter()
            .zip(&e.measurements)
            .map(|(yn, dn)| {
                yn.iter()
                    .zip(dn)
                    .map(|(a, b)| {
                        let r = a - b;
                        j += 0.5 * scale * r * r;
                        scale * r
                    })
                    .collect()
            })
            .collect();
        seeds.resize(y.len(), vec![0.0; self.system.n_obs()]);
        (j, seeds)
    }

    fn regularization_value(&self, k: &KernelPair) -> f64 {
        let t = self.config.t_final;
        let r = self.regularization;
        let mut v = 0.0;
        if r.gamma_dev != 0.0 {
            v += r.gamma_dev * l2_energy(&k.dev, t).0;
        }
        if r.gamma_trace != 0.0 && self.kind == ObjectiveKind::TwoKernel {
            v += r.gamma_trace * l2_energy(&k.trace, t).0;
        }
        v
    }
}

/// `½ ∫₀ᵀ k² dt` and its derivatives with respect to weights and rates.
fn l2_energy(k: &SoeKernel, t: f64) -> (f64, KernelGradient) {
    let (w, l) = (k.weights(), k.rates());
    let m = w.len();
    let mut g = KernelGradient::zeros(m);
    let mut v = 0.0;
    for i in 0..m {
        for j in 0..m {
            let (e, de) = exp_integral(l[i] + l[j], t);
            v += 0.5 * w[i] * w[j] * e;
            g.weights[i] += w[j] * e;
            g.rates[i] += w[i] * w[j] * de;
        }
    }
    (v, g)
}

/// `E(x) = ∫₀ᵀ e^{−xt} dt` and `E'(x)`.
fn exp_integral(x: f64, t: f64) -> (f64, f64) {
    let z = x * t;
    if z < 0.1 {
        // E = T Σ (−z)^k/(k+1)!, E' = −T² Σ (−z)^k (k+1)/(k+2)!
        let (mut e, mut de, mut p, mut fact) = (0.0, 0.0, 1.0, 1.0);
        for k in 0..20 {
            fact *= (k + 1) as f64;
            e += p / fact;
            de -= p * (k + 1) as f64 / (fact * (k + 2) as f64);
            p *= -z;
        }
        (t * e, t * t * de)
    } else {
        let e = -(-z).exp_m1() / x;
        (e, (t * (-z).exp() - e) / x)
    }
}

/// Objective value split by source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    /// weighted misfit of every excitation
    pub misfits: Vec<f64>,
    pub regularization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub grad: Vec<f64>,
    pub objective: ObjectiveBreakdown,
}

pub fn evaluate_objective(theta: &ThetaVector, problem: &CalibrationProblem) -> Result<ObjectiveBreakdown> {
    problem.check_ready()?;
    let kernels = problem.run_kernels(theta)?;
    let cfg = problem.run_config();
    let misfits = problem
        .excitations
        .par_iter()
        .map(|e| {
            let f = problem.excitation_forcing(e, &cfg);
            let tr = simulate(&problem.system, &kernels, &f, &cfg)?;
            Ok(problem.misfit(e, &tr.observations).0)
        })
        .collect::<Result<Vec<f64>>>()?;
    let regularization = problem.regularization_value(&theta.kernels()?);
    Ok(ObjectiveBreakdown {
        total: misfits.iter().sum::<f64>() + regularization,
        misfits,
        regularization,
    })
}

pub fn gradient(theta: &ThetaVector, problem: &CalibrationProblem) -> Result<GradientReport> {
    problem.check_ready()?;
    let kernels = problem.run_kernels(theta)?;
    let cfg = problem.run_config();
    let parts = problem
        .excitations
        .par_iter()
        .map(|e| {
            let f = problem.excitation_forcing(e, &cfg);
            let tr = solve_forward(&problem.system, &kernels, &f, &cfg)?;
            let (j, seeds) = problem.misfit(e, &tr.observations);
            let adj = adjoint_sweep(&tr, &seeds, &problem.system, &f)?;
            Ok((j, adj.dev, adj.trace))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut misfits = Vec::with_capacity(parts.len());
    let mut g_dev = KernelGradient::zeros(kernels.dev.num_modes());
    let mut g_tr = KernelGradient::zeros(kernels.trace.num_modes());
    for (j, d, t) in &parts {
        misfits.push(*j);
        g_dev.add_scaled(1.0, d);
        g_tr.add_scaled(1.0, t);
    }
    let own = theta.kernels()?;
    let t_final = problem.config.t_final;
    let r = problem.regularization;
    if r.gamma_dev != 0.0 {
        g_dev.add_scaled(r.gamma_dev, &l2_energy(&own.dev, t_final).1);
    }
    let grad = match problem.kind {
        ObjectiveKind::SingleKernel => theta.pull_back(&g_dev, &KernelGradient::zeros(g_dev.len()))?,
        ObjectiveKind::TwoKernel => {
            if r.gamma_trace != 0.0 {
                g_tr.add_scaled(r.gamma_trace, &l2_energy(&own.trace, t_final).1);
            }
            theta.pull_back(&g_dev, &g_tr)?
        }
    };
    let regularization = problem.regularization_value(&own);
    Ok(GradientReport {
        grad,
        objective: ObjectiveBreakdown {
            total: misfits.iter().sum::<f64>() + regularization,
            misfits,
            regularization,
        },
    })
}

/// Clean observations on `[0, t_meas]` plus seeded Gaussian noise with
/// standard deviation `level · max_n |yⁿ_c|` for each component `c`.
pub fn synthesize_measurements(truth: &KernelPair, problem: &CalibrationProblem, noise: &NoiseSpec) -> Result<Vec<Vec<Vec<f64>>>> {
    noise.validate()?;
    let cfg = problem.run_config();
    let kernels = match problem.kind {
        ObjectiveKind::SingleKernel => KernelPair::new(truth.dev.clone(), SoeKernel::zero()),
        ObjectiveKind::TwoKernel => truth.clone(),
    };
    let clean = problem
        .excitations
        .par_iter()
        .map(|e| {
            let f = problem.excitation_forcing(e, &cfg);
            let mut y = simulate(&problem.system, &kernels, &f, &cfg)?.observations;
            y.truncate(problem.n_meas + 1);
            Ok(y)
        })
        .collect::<Result<Vec<_>>>()?;
    if noise.level == 0.0 {
        return Ok(clean);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let std_normal = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(clean
        .into_iter()
        .map(|series| {
            let n_obs = series.first().map_or(0, |r| r.len());
            let sigma: Vec<f64> = (0..n_obs)
                .map(|c| noise.level * series.iter().fold(0.0_f64, |m, r| m.max(r[c].abs())))
                .collect();
            series
                .into_iter()
                .map(|row| {
                    row.iter()
                        .zip(&sigma)
                        .map(|(y, s)| y + s * std_normal.sample(&mut rng))
                        .collect()
                })
                .collect()
        })
        .collect())
}

/// `∫_{Δt}^{t_meas} |k_pred − k_true| dt` by the trapezoidal rule on the
/// grid `Δt, 2Δt, …`.
pub fn kernel_l1_error(predicted: &SoeKernel, truth: impl Fn(f64) -> f64, dt: f64, t_meas: f64) -> Result<f64> {
    if !(dt > 0.0 && t_meas >= dt) {
        return Err(Error::invalid(format!("need 0 < dt ≤ t_meas, got dt = {dt}, t_meas = {t_meas}")));
    }
    let n = ((t_meas - dt) / dt).round() as usize;
    let h = (t_meas - dt) / n.max(1) as f64;
    if n == 0 {
        return Ok(0.0);
    }
    let diff = |t: f64| (predicted.eval(t) - truth(t)).abs();
    let mut acc = 0.5 * (diff(dt) + diff(t_meas));
    for i in 1..n {
        acc += diff(dt + i as f64 * h);
    }
    Ok(acc * h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub theta: ThetaVector,
    pub kernels: KernelPair,
    /// loss at the start and after each accepted iteration
    pub loss_history: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    pub final_objective: ObjectiveBreakdown,
    /// L¹ error on `[Δt, t_meas]` of `(dev, trace)` when the truth is known
    pub kernel_l1_error: Option<(f64, f64)>,
    pub times: Vec<f64>,
    /// observations over `[0, T]` per excitation
    pub predicted: Vec<Vec<Vec<f64>>>,
}

pub fn lbfgs_minimize_problem(
    problem: &CalibrationProblem,
    initial: &ThetaVector,
    settings: &OptimizerSettings,
    truth: Option<&KernelPair>,
) -> Result<CalibrationResult> {
    let layout = initial.layout;
    let run = lbfgs_minimize(
        |x| {
            let th = ThetaVector::new(layout, x.to_vec())?;
            let rep = gradient(&th, problem)?;
            Ok((rep.objective.total, rep.grad))
        },
        &initial.values,
        settings,
    )?;
    let theta = ThetaVector::new(layout, run.x)?;
    let kernels = theta.kernels()?;
    let final_objective = evaluate_objective(&theta, problem)?;
    let dt = problem.config.dt();
    let t_meas = problem.t_meas();
    let kernel_l1_error = match truth {
        Some(t) => Some((
            kernel_l1_error(&kernels.dev, |s| t.dev.eval(s), dt, t_meas)?,
            kernel_l1_error(&kernels.trace, |s| t.trace.eval(s), dt, t_meas)?,
        )),
        None => None,
    };
    Ok(CalibrationResult {
        predicted: problem.predict(&theta)?,
        theta,
        kernels,
        loss_history: run.history,
        iterations: run.iterations,
        termination: run.termination,
        final_objective,
        kernel_l1_error,
        times: problem.config.times(),
    })
}

/// Adjoint gradient next to a fourth-order central difference
/// `(8(J(+h) − J(−h)) − (J(+2h) − J(−2h))) / 12h` with `h = step·(1+|θ_i|)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub analytic: Vec<f64>,
    pub finite_difference: Vec<f64>,
    /// `|analytic − fd| / |fd|` per coordinate
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
}

pub fn check_gradient(theta: &ThetaVector, problem: &CalibrationProblem, step: f64) -> Result<GradientCheck> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!("difference step {step} must be positive")));
    }
    let analytic = gradient(theta, problem)?.grad;
    let at = |i: usize, k: f64, h: f64| -> Result<f64> {
        let mut v = theta.values.clone();
        v[i] += k * h;
        Ok(evaluate_objective(&ThetaVector::new(theta.layout, v)?, problem)?.total)
    };
    let finite_difference = (0..theta.values.len())
        .map(|i| {
            let h = step * (1.0 + theta.values[i].abs());
            Ok((8.0 * (at(i, 1.0, h)? - at(i, -1.0, h)?) - (at(i, 2.0, h)? - at(i, -2.0, h)?)) / (12.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    let relative_errors: Vec<f64> = analytic
        .iter()
        .zip(&finite_difference)
        .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() / b.abs() })
        .collect();
    let max_relative_error = relative_errors.iter().fold(0.0, |m: f64, e| m.max(*e));
    Ok(GradientCheck {
        analytic,
        finite_difference,
        relative_errors,
        max_relative_error,
    })
}

/// Random kernel with weights uniform in `[0.01, 0.3]` and rates
/// log-uniform in `[0.1, 100]`.
pub fn random_kernel(rng: &mut impl rand::Rng, modes: usize) -> Result<SoeKernel> {
    let w = (0..modes).map(|_| rng.random_range(0.01..0.3)).collect();
    let l = (0..modes).map(|_| 10f64.powf(rng.random_range(-1.0..2.0))).collect();
    SoeKernel::new(w, l)
}
