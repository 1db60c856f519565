//! Newmark time stepping of `M a + K u + K_dev (k_dev * v) + K_tr (k_tr * v) = ℓ(t) f`
//! with the convolutions carried by exponential recurrences.
//!
//! For a mode `w e^{−λt}` the history `q(t) = ∫₀ᵗ e^{−λ(t−s)} v(s) ds` is
//! advanced exactly for piecewise-linear `v`:
//! `q' = e q + α v' + β v` with `e = e^{−λΔt}`. The implicit part `α v'` is
//! folded into the effective matrix, so each step costs one triangular
//! solve pair with a matrix factored once per run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{BeamAssembly, LoadSpec};
use crate::kernel::SoeKernel;
use crate::linalg::{BandCholesky, CsrMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub t_final: f64,
    pub n_steps: usize,
    #[serde(default = "default_beta")]
    pub newmark_beta: f64,
    #[serde(default = "default_gamma")]
    pub newmark_gamma: f64,
}

fn default_beta() -> f64 {
    0.25
}

fn default_gamma() -> f64 {
    0.5
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            t_final: 4.0,
            n_steps: 100,
            newmark_beta: 0.25,
            newmark_gamma: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        let c = SolverConfig {
            t_final,
            n_steps,
            ..Default::default()
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::invalid(format!("T = {} must be positive", self.t_final)));
        }
        if !(0.0..=0.5).contains(&self.newmark_beta) {
            return Err(Error::invalid(format!("Newmark β = {} outside [0, 0.5]", self.newmark_beta)));
        }
        if !(0.0..=1.0).contains(&self.newmark_gamma) {
            return Err(Error::invalid(format!("Newmark γ = {} outside [0, 1]", self.newmark_gamma)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.t_final / self.n_steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|n| self.time(n)).collect()
    }
}

/// The operators a run needs; free-DOF matrices of a clamped beam or any
/// other symmetric system.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub dev: CsrMatrix,
    pub trace: CsrMatrix,
    /// rows map displacements to observed quantities
    pub obs: CsrMatrix,
}

impl LinearSystem {
    pub fn from_assembly(asm: &BeamAssembly) -> Self {
        let (dev, trace) = asm.viscous_operators();
        LinearSystem {
            mass: asm.mass.clone(),
            stiffness: asm.stiffness.clone(),
            dev,
            trace,
            obs: asm.obs.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mass.n_rows()
    }

    pub fn n_obs(&self) -> usize {
        self.obs.n_rows()
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        for (name, m) in [
            ("mass", &self.mass),
            ("stiffness", &self.stiffness),
            ("dev", &self.dev),
            ("trace", &self.trace),
        ] {
            if m.n_rows() != n || m.n_cols() != n {
                return Err(Error::invalid(format!("{name} matrix is not {n}×{n}")));
            }
        }
        if self.obs.n_cols() != n {
            return Err(Error::invalid("observation matrix has the wrong width"));
        }
        Ok(())
    }
}

/// `f(t_n) = profile[n] · shape`
#[derive(Clone, Debug, PartialEq)]
pub struct Forcing {
    pub shape: Vec<f64>,
    pub profile: Vec<f64>,
}

impl Forcing {
    pub fn new(shape: Vec<f64>, profile: Vec<f64>) -> Self {
        Forcing { shape, profile }
    }

    pub fn from_load(asm: &BeamAssembly, spec: &LoadSpec, config: &SolverConfig) -> Self {
        Forcing {
            shape: asm.load_shape(spec.kind).to_vec(),
            profile: config.times().iter().map(|&t| spec.profile(t)).collect(),
        }
    }
}

/// Kernel acting through `K_dev` and kernel acting through `K_tr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelPair {
    pub dev: SoeKernel,
    pub trace: SoeKernel,
}

impl KernelPair {
    pub fn new(dev: SoeKernel, trace: SoeKernel) -> Self {
        KernelPair { dev, trace }
    }

    /// The same kernel for both parts.
    pub fn shared(k: SoeKernel) -> Self {
        KernelPair {
            dev: k.clone(),
            trace: k,
        }
    }

    pub fn zero() -> Self {
        Self::shared(SoeKernel::zero())
    }
}

/// `φ_α(x) = (x − 1 + e^{−x}) / x²`
pub(crate) fn phi_alpha(x: f64) -> f64 {
    if x < 0.5 {
        series(x, |j| alt(j) / factorial(j + 2))
    } else {
        (x - 1.0 + (-x).exp()) / (x * x)
    }
}

/// `φ_β(x) = (1 − e^{−x}(1 + x)) / x²`
pub(crate) fn phi_beta(x: f64) -> f64 {
    if x < 0.5 {
        series(x, |j| alt(j) * (j + 1) as f64 / factorial(j + 2))
    } else {
        (1.0 - (-x).exp() * (1.0 + x)) / (x * x)
    }
}

pub(crate) fn phi_alpha_prime(x: f64) -> f64 {
    if x < 0.5 {
        series(x, |j| -alt(j) * (j + 1) as f64 / factorial(j + 3))
    } else {
        let e = (-x).exp();
        (1.0 - e) / (x * x) - 2.0 * (x - 1.0 + e) / (x * x * x)
    }
}

pub(crate) fn phi_beta_prime(x: f64) -> f64 {
    if x < 0.5 {
        series(x, |j| -alt(j) * ((j + 1) * (j + 2)) as f64 / factorial(j + 3))
    } else {
        let e = (-x).exp();
        e / x - 2.0 * (1.0 - e * (1.0 + x)) / (x * x * x)
    }
}

fn series(x: f64, coef: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut p = 1.0;
    for j in 0..24 {
        acc += coef(j) * p;
        p *= x;
    }
    acc
}

fn alt(j: usize) -> f64 {
    if j % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

/// Recurrence coefficients of one mode: `q' = e q + α v' + β v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeStep {
    pub decay: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ModeStep {
    pub fn new(rate: f64, dt: f64) -> Self {
        let x = rate * dt;
        ModeStep {
            decay: (-x).exp(),
            alpha: dt * phi_alpha(x),
            beta: dt * phi_beta(x),
        }
    }

    /// `(de/dλ, dα/dλ, dβ/dλ)`
    pub fn rate_derivatives(rate: f64, dt: f64) -> (f64, f64, f64) {
        let x = rate * dt;
        (-dt * (-x).exp(), dt * dt * phi_alpha_prime(x), dt * dt * phi_beta_prime(x))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct KernelSteps {
    pub weights: Vec<f64>,
    pub modes: Vec<ModeStep>,
    /// `Σ w α`
    pub implicit: f64,
    /// `Σ w β`
    pub explicit: f64,
}

impl KernelSteps {
    pub fn new(k: &SoeKernel, dt: f64) -> Self {
        let modes: Vec<ModeStep> = k.rates().iter().map(|&l| ModeStep::new(l, dt)).collect();
        let weights = k.weights().to_vec();
        let implicit = weights.iter().zip(&modes).map(|(w, m)| w * m.alpha).sum();
        let explicit = weights.iter().zip(&modes).map(|(w, m)| w * m.beta).sum();
        KernelSteps {
            weights,
            modes,
            implicit,
            explicit,
        }
    }

    /// `Σ w_k e_k q_k + A v_pred + B v`
    fn history(&self, q: &[Vec<f64>], v_pred: &[f64], v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.implicit * v_pred[i] + self.explicit * v[i];
        }
        for ((w, m), qk) in self.weights.iter().zip(&self.modes).zip(q) {
            let c = w * m.decay;
            if c != 0.0 {
                for (o, x) in out.iter_mut().zip(qk) {
                    *o += c * x;
                }
            }
        }
    }

    fn advance(&self, q: &mut [Vec<f64>], v_new: &[f64], v: &[f64]) {
        for (m, qk) in self.modes.iter().zip(q.iter_mut()) {
            for ((x, vn), vo) in qk.iter_mut().zip(v_new).zip(v) {
                *x = m.decay * *x + m.alpha * vn + m.beta * vo;
            }
        }
    }
}

/// Velocity histories `q_k` of every mode of both kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub dev: Vec<Vec<f64>>,
    pub trace: Vec<Vec<f64>>,
}

impl MemoryState {
    pub fn zeros(kernels: &KernelPair, dim: usize) -> Self {
        MemoryState {
            dev: vec![vec![0.0; dim]; kernels.dev.num_modes()],
            trace: vec![vec![0.0; dim]; kernels.trace.num_modes()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    pub memory: MemoryState,
}

/// Per-step energies. `memory` is the energy held by the convolution
/// terms, `½ Σ_k w_k q_kᵀ K_op q_k` summed over both kernels (each mode is a
/// Maxwell element with spring `w_k K_op`). With nonnegative weights and rates
/// the continuous `total` is non-increasing once the load is off.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub kinetic: Vec<f64>,
    pub elastic: Vec<f64>,
    pub memory: Vec<f64>,
    pub total: Vec<f64>,
}

impl EnergyTrace {
    fn push(&mut self, system: &LinearSystem, kernels: &KernelPair, s: &StepState) {
        let k = 0.5 * system.mass.bilinear(&s.v, &s.v);
        let e = 0.5 * system.stiffness.bilinear(&s.u, &s.u);
        let mut m = 0.0;
        for (kern, op, q) in [
            (&kernels.dev, &system.dev, &s.memory.dev),
            (&kernels.trace, &system.trace, &s.memory.trace),
        ] {
            for (w, qk) in kern.weights().iter().zip(q) {
                m += 0.5 * w * op.bilinear(qk, qk);
            }
        }
        self.kinetic.push(k);
        self.elastic.push(e);
        self.memory.push(m);
        self.total.push(k + e + m);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub config: SolverConfig,
    pub kernels: KernelPair,
    pub times: Vec<f64>,
    /// `Obs · uⁿ`
    pub observations: Vec<Vec<f64>>,
    /// every state, or empty when only observations were requested
    pub states: Vec<StepState>,
    pub energy: EnergyTrace,
}

impl TrajectoryRecord {
    pub fn is_complete(&self) -> bool {
        self.states.len() == self.config.n_steps + 1
    }

    /// Observation component `i` over time.
    pub fn observed_component(&self, i: usize) -> Vec<f64> {
        self.observations.iter().map(|y| y[i]).collect()
    }
}

/// A factored integrator for fixed system, kernels, and step size.
pub struct Integrator<'a> {
    system: &'a LinearSystem,
    config: SolverConfig,
    pub(crate) dev: KernelSteps,
    pub(crate) trace: KernelSteps,
    pub(crate) effective: BandCholesky,
}

impl<'a> Integrator<'a> {
    pub fn new(system: &'a LinearSystem, kernels: &KernelPair, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        system.validate()?;
        let dt = config.dt();
        let (beta, gamma) = (config.newmark_beta, config.newmark_gamma);
        let dev = KernelSteps::new(&kernels.dev, dt);
        let trace = KernelSteps::new(&kernels.trace, dt);
        let s = CsrMatrix::linear_combination(&[
            (1.0, &system.mass),
            (beta * dt * dt, &system.stiffness),
            (gamma * dt * dev.implicit, &system.dev),
            (gamma * dt * trace.implicit, &system.trace),
        ]);
        let effective = BandCholesky::factor(&s)?;
        Ok(Integrator {
            system,
            config: *config,
            dev,
            trace,
            effective,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn initial_state(&self, kernels: &KernelPair, forcing: &Forcing) -> Result<StepState> {
        let n = self.system.dim();
        let l0 = forcing.profile.first().copied().unwrap_or(0.0);
        let a = if l0 != 0.0 {
            let f: Vec<f64> = forcing.shape.iter().map(|g| l0 * g).collect();
            BandCholesky::factor(&self.system.mass)?.solve(&f)
        } else {
            vec![0.0; n]
        };
        Ok(StepState {
            u: vec![0.0; n],
            v: vec![0.0; n],
            a,
            memory: MemoryState::zeros(kernels, n),
        })
    }

    /// Advances one step; `load` is `ℓ(t_{n+1})`.
    pub fn step(&self, s: &StepState, load: f64, shape: &[f64]) -> StepState {
        let n = self.system.dim();
        let dt = self.config.dt();
        let (beta, gamma) = (self.config.newmark_beta, self.config.newmark_gamma);
        let mut u_pred = vec![0.0; n];
        let mut v_pred = vec![0.0; n];
        for i in 0..n {
            u_pred[i] = s.u[i] + dt * s.v[i] + dt * dt * (0.5 - beta) * s.a[i];
            v_pred[i] = s.v[i] + dt * (1.0 - gamma) * s.a[i];
        }
        let mut rhs: Vec<f64> = shape.iter().map(|g| load * g).collect();
        self.system.stiffness.mul_vec_add(-1.0, &u_pred, &mut rhs);
        let mut hist = vec![0.0; n];
        if !self.dev.weights.is_empty() {
            self.dev.history(&s.memory.dev, &v_pred, &s.v, &mut hist);
            self.system.dev.mul_vec_add(-1.0, &hist, &mut rhs);
        }
        if !self.trace.weights.is_empty() {
            self.trace.history(&s.memory.trace, &v_pred, &s.v, &mut hist);
            self.system.trace.mul_vec_add(-1.0, &hist, &mut rhs);
        }
        self.effective.solve_in_place(&mut rhs);
        let a = rhs;
        let mut u = u_pred;
        let mut v = v_pred;
        for i in 0..n {
            u[i] += beta * dt * dt * a[i];
            v[i] += gamma * dt * a[i];
        }
        let mut memory = s.memory.clone();
        self.dev.advance(&mut memory.dev, &v, &s.v);
        self.trace.advance(&mut memory.trace, &v, &s.v);
        StepState { u, v, a, memory }
    }
}

/// Runs all steps and keeps every state (needed by the adjoint sweep).
pub fn solve_forward(
    system: &LinearSystem,
    kernels: &KernelPair,
    forcing: &Forcing,
    config: &SolverConfig,
) -> Result<TrajectoryRecord> {
    run(system, kernels, forcing, config, true)
}

/// Runs all steps keeping only observations and energies.
pub fn simulate(
    system: &LinearSystem,
    kernels: &KernelPair,
    forcing: &Forcing,
    config: &SolverConfig,
) -> Result<TrajectoryRecord> {
    run(system, kernels, forcing, config, false)
}

fn run(
    system: &LinearSystem,
    kernels: &KernelPair,
    forcing: &Forcing,
    config: &SolverConfig,
    keep_states: bool,
) -> Result<TrajectoryRecord> {
    if forcing.profile.len() != config.n_steps + 1 {
        return Err(Error::invalid(format!(
            "load profile has {} samples, {} expected",
            forcing.profile.len(),
            config.n_steps + 1
        )));
    }
    if forcing.shape.len() != system.dim() {
        return Err(Error::invalid("load shape does not match the system size"));
    }
    let integ = Integrator::new(system, kernels, config)?;
    let mut state = integ.initial_state(kernels, forcing)?;
    let mut observations = Vec::with_capacity(config.n_steps + 1);
    let mut energy = EnergyTrace::default();
    let mut states = Vec::new();
    observations.push(system.obs.apply(&state.u));
    energy.push(system, kernels, &state);
    for n in 0..config.n_steps {
        let next = integ.step(&state, forcing.profile[n + 1], &forcing.shape);
        if keep_states {
            states.push(std::mem::replace(&mut state, next));
        } else {
            state = next;
        }
        observations.push(system.obs.apply(&state.u));
        energy.push(system, kernels, &state);
    }
    if keep_states {
        states.push(state);
    }
    Ok(TrajectoryRecord {
        config: *config,
        kernels: kernels.clone(),
        times: config.times(),
        observations,
        states,
        energy,
    })
}

/// Energies of a stored trajectory: kinetic `½ vᵀMv`, elastic `½ uᵀKu`, and
/// the memory part, using the kernels the trajectory was run with.
pub fn energy_monitor(traj: &TrajectoryRecord, system: &LinearSystem) -> Result<EnergyTrace> {
    if !traj.is_complete() {
        return Err(Error::IncompleteTrajectory {
            expected: traj.config.n_steps + 1,
            found: traj.states.len(),
        });
    }
    let mut e = EnergyTrace::default();
    for s in &traj.states {
        e.push(system, &traj.kernels, s);
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recurrence_coefficients_match_closed_form() {
        for x in [1e-8_f64, 1e-6] {
            assert_relative_eq!(phi_alpha(x), 0.5 - x / 6.0 + x * x / 24.0, max_relative = 1e-14);
            assert_relative_eq!(phi_beta(x), 0.5 - x / 3.0 + x * x / 8.0, max_relative = 1e-14);
        }
        for x in [1e-2, 0.1, 0.49, 0.51, 2.0, 50.0] {
            let e = (-x as f64).exp();
            let pa = (x - 1.0 + e) / (x * x);
            let pb = (1.0 - e * (1.0 + x)) / (x * x);
            let tol = if x < 0.05 { 1e-11 } else { 1e-13 };
            assert_relative_eq!(phi_alpha(x), pa, max_relative = tol);
            assert_relative_eq!(phi_beta(x), pb, max_relative = tol);
        }
        assert_eq!(phi_alpha(0.0), 0.5);
        assert_eq!(phi_beta(0.0), 0.5);
    }

    #[test]
    fn recurrence_derivatives_match_differences() {
        for x in [0.0, 0.05, 0.3, 0.5, 0.7, 3.0, 40.0] {
            let h = 1e-6;
            let lo = if x == 0.0 { 0.0 } else { x - h };
            let da = (phi_alpha(x + h) - phi_alpha(lo)) / (x + h - lo);
            let db = (phi_beta(x + h) - phi_beta(lo)) / (x + h - lo);
            assert!((phi_alpha_prime(x) - da).abs() < 1e-6, "{x}");
            assert!((phi_beta_prime(x) - db).abs() < 1e-6, "{x}");
        }
        assert_relative_eq!(phi_alpha_prime(0.0), -1.0 / 6.0);
        assert_relative_eq!(phi_beta_prime(0.0), -1.0 / 3.0);
    }

    #[test]
    fn exact_for_linear_velocity() {
        // v(t) = 1 + 2t: q(t) = ∫ e^{−λ(t−s)} (1 + 2s) ds
        let (lambda, dt) = (1.7, 0.3);
        let m = ModeStep::new(lambda, dt);
        let exact = |t: f64| {
            let e = (-lambda * t).exp();
            (1.0 - e) / lambda + 2.0 * (t / lambda - (1.0 - e) / (lambda * lambda))
        };
        let mut q = 0.0;
        for n in 0..5 {
            let (t0, t1) = (n as f64 * dt, (n + 1) as f64 * dt);
            q = m.decay * q + m.alpha * (1.0 + 2.0 * t1) + m.beta * (1.0 + 2.0 * t0);
            assert_relative_eq!(q, exact(t1), max_relative = 1e-13);
        }
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(SolverConfig::new(1.0, 0).is_err());
        assert!(SolverConfig::new(-1.0, 10).is_err());
        let mut c = SolverConfig::default();
        c.newmark_beta = 0.7;
        assert!(c.validate().is_err());
        assert_eq!(SolverConfig::default().dt(), 0.04);
        assert_eq!(SolverConfig::default().time(20), 0.8);
    }
}
