//! Discrete adjoint of the Newmark recurrence scheme.
//!
//! [`adjoint_sweep`] runs the transpose of [`Integrator::step`] backwards in
//! time. Given seeds `∂J/∂yⁿ` it returns the multipliers of every step's
//! linear solve and the exact derivatives of `J` with respect to the weights
//! and rates of both kernels and the load samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SoeKernel;
use crate::linalg::{dot, BandCholesky, CsrMatrix};
use crate::solver::{Forcing, Integrator, KernelPair, KernelSteps, LinearSystem, ModeStep, SolverConfig, TrajectoryRecord};

/// How a parameter vector maps to kernels. Rates are `λ = s²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaLayout {
    /// one kernel for both parts: `(w₁..w_m, s₁..s_m)`
    Shared { modes: usize },
    /// `(w_tr, s_tr, w_ε, s_ε)`, each block as long as its kernel
    Split { trace_modes: usize, dev_modes: usize },
}

impl ThetaLayout {
    pub fn len(&self) -> usize {
        match *self {
            ThetaLayout::Shared { modes } => 2 * modes,
            ThetaLayout::Split { trace_modes, dev_modes } => 2 * (trace_modes + dev_modes),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub layout: ThetaLayout,
    pub values: Vec<f64>,
}

fn encode(k: &SoeKernel, out: &mut Vec<f64>) {
    out.extend_from_slice(k.weights());
    out.extend(k.rates().iter().map(|l| l.sqrt()));
}

fn decode(block: &[f64]) -> Result<SoeKernel> {
    let m = block.len() / 2;
    SoeKernel::new(block[..m].to_vec(), block[m..].iter().map(|s| s * s).collect())
}

impl ThetaVector {
    pub fn new(layout: ThetaLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("parameter vector has non-finite entries"));
        }
        Ok(ThetaVector { layout, values })
    }

    pub fn shared(k: &SoeKernel) -> Self {
        let mut values = Vec::with_capacity(2 * k.num_modes());
        encode(k, &mut values);
        ThetaVector {
            layout: ThetaLayout::Shared { modes: k.num_modes() },
            values,
        }
    }

    pub fn split(kernels: &KernelPair) -> Self {
        let mut values = Vec::new();
        encode(&kernels.trace, &mut values);
        encode(&kernels.dev, &mut values);
        ThetaVector {
            layout: ThetaLayout::Split {
                trace_modes: kernels.trace.num_modes(),
                dev_modes: kernels.dev.num_modes(),
            },
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn kernels(&self) -> Result<KernelPair> {
        match self.layout {
            ThetaLayout::Shared { .. } => Ok(KernelPair::shared(decode(&self.values)?)),
            ThetaLayout::Split { trace_modes, .. } => {
                let (tr, dev) = self.values.split_at(2 * trace_modes);
                Ok(KernelPair::new(decode(dev)?, decode(tr)?))
            }
        }
    }

    /// Chain rule from kernel-parameter derivatives onto θ. For the shared
    /// layout the two families' derivatives are summed.
    pub fn pull_back(&self, dev: &KernelGradient, trace: &KernelGradient) -> Result<Vec<f64>> {
        let block = |s: &[f64], g: &KernelGradient, out: &mut Vec<f64>| {
            out.extend_from_slice(&g.weights);
            out.extend(s.iter().zip(&g.rates).map(|(s, gl)| 2.0 * s * gl));
        };
        let mut out = Vec::with_capacity(self.len());
        match self.layout {
            ThetaLayout::Shared { modes } => {
                if dev.len() != modes || trace.len() != modes {
                    return Err(Error::invalid("kernel gradient does not match the shared layout"));
                }
                let sum = dev.added(trace);
                block(&self.values[modes..], &sum, &mut out);
            }
            ThetaLayout::Split { trace_modes, dev_modes } => {
                if dev.len() != dev_modes || trace.len() != trace_modes {
                    return Err(Error::invalid("kernel gradient does not match the split layout"));
                }
                let (tr, de) = self.values.split_at(2 * trace_modes);
                block(&tr[trace_modes..], trace, &mut out);
                block(&de[dev_modes..], dev, &mut out);
            }
        }
        Ok(out)
    }

    /// Pushes a θ direction forward onto `(δw, δλ)` of both kernels.
    pub fn push_forward(&self, dtheta: &[f64]) -> Result<(KernelGradient, KernelGradient)> {
        if dtheta.len() != self.len() {
            return Err(Error::invalid("direction length does not match θ"));
        }
        let block = |s: &[f64], d: &[f64]| {
            let m = s.len();
            KernelGradient {
                weights: d[..m].to_vec(),
                rates: s.iter().zip(&d[m..]).map(|(s, ds)| 2.0 * s * ds).collect(),
            }
        };
        match self.layout {
            ThetaLayout::Shared { modes } => {
                let g = block(&self.values[modes..], dtheta);
                Ok((g.clone(), g))
            }
            ThetaLayout::Split { trace_modes, dev_modes } => {
                let n = 2 * trace_modes;
                let tr = block(&self.values[trace_modes..n], &dtheta[..n]);
                let de = block(&self.values[n + dev_modes..], &dtheta[n..]);
                Ok((de, tr))
            }
        }
    }
}

/// Derivatives (or directions) with respect to one kernel's weights and rates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelGradient {
    pub weights: Vec<f64>,
    pub rates: Vec<f64>,
}

impl KernelGradient {
    pub fn zeros(modes: usize) -> Self {
        KernelGradient {
            weights: vec![0.0; modes],
            rates: vec![0.0; modes],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn added(&self, other: &KernelGradient) -> KernelGradient {
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        KernelGradient {
            weights: add(&self.weights, &other.weights),
            rates: add(&self.rates, &other.rates),
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.weights.iter_mut().chain(self.rates.iter_mut()).for_each(|x| *x *= c);
    }

    pub fn add_scaled(&mut self, c: f64, other: &KernelGradient) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += c * b;
        }
        for (a, b) in self.rates.iter_mut().zip(&other.rates) {
            *a += c * b;
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdjointTrajectory {
    /// `pⁿ`: multiplier of the linear solve producing `aⁿ` (`p⁰` belongs to
    /// the initial `M a⁰ = ℓ₀ f`)
    pub multipliers: Vec<Vec<f64>>,
    pub dev: KernelGradient,
    pub trace: KernelGradient,
    /// `∂J/∂ℓₙ`
    pub load: Vec<f64>,
}

fn mode_derivs(k: &SoeKernel, dt: f64) -> Vec<(f64, f64, f64)> {
    k.rates().iter().map(|&l| ModeStep::rate_derivatives(l, dt)).collect()
}

fn obs_transpose_apply(obs: &CsrMatrix, seed: &[f64], out: &mut [f64]) {
    for (r, &c) in seed.iter().enumerate() {
        if c != 0.0 {
            for (j, x) in obs.row(r) {
                out[j] += c * x;
            }
        }
    }
}

/// Reverse sweep through a stored trajectory. `seeds[n]` is `∂J/∂yⁿ`.
pub fn adjoint_sweep(
    traj: &TrajectoryRecord,
    seeds: &[Vec<f64>],
    system: &LinearSystem,
    forcing: &Forcing,
) -> Result<AdjointTrajectory> {
    let config = &traj.config;
    let n_steps = config.n_steps;
    if !traj.is_complete() {
        return Err(Error::IncompleteTrajectory {
            expected: n_steps + 1,
            found: traj.states.len(),
        });
    }
    if seeds.len() != n_steps + 1 || seeds.iter().any(|s| s.len() != system.n_obs()) {
        return Err(Error::invalid("adjoint seeds must cover every step and observation"));
    }
    let kernels = &traj.kernels;
    let integ = Integrator::new(system, kernels, config)?;
    let n = system.dim();
    let dt = config.dt();
    let (beta, gamma) = (config.newmark_beta, config.newmark_gamma);

    struct Family<'k> {
        steps: &'k KernelSteps,
        derivs: Vec<(f64, f64, f64)>,
        op: &'k CsrMatrix,
        qbar: Vec<Vec<f64>>,
        grad: KernelGradient,
        z: Vec<f64>,
    }
    let mut fams = [
        Family {
            steps: &integ.dev,
            derivs: mode_derivs(&kernels.dev, dt),
            op: &system.dev,
            qbar: vec![vec![0.0; n]; kernels.dev.num_modes()],
            grad: KernelGradient::zeros(kernels.dev.num_modes()),
            z: vec![0.0; n],
        },
        Family {
            steps: &integ.trace,
            derivs: mode_derivs(&kernels.trace, dt),
            op: &system.trace,
            qbar: vec![vec![0.0; n]; kernels.trace.num_modes()],
            grad: KernelGradient::zeros(kernels.trace.num_modes()),
            z: vec![0.0; n],
        },
    ];

    let mut multipliers = vec![vec![0.0; n]; n_steps + 1];
    let mut load = vec![0.0; n_steps + 1];
    let mut ubar = vec![0.0; n];
    let mut vbar = vec![0.0; n];
    let mut abar = vec![0.0; n];
    obs_transpose_apply(&system.obs, &seeds[n_steps], &mut ubar);

    for step in (0..n_steps).rev() {
        let s0 = &traj.states[step];
        let s1 = &traj.states[step + 1];
        let mut vbar_old = vec![0.0; n];
        // q' = e q + α v' + β v
        for (f, fam) in fams.iter_mut().enumerate() {
            let q0 = if f == 0 { &s0.memory.dev } else { &s0.memory.trace };
            for (k, qb) in fam.qbar.iter_mut().enumerate() {
                let m = &fam.steps.modes[k];
                let (de, da, db) = fam.derivs[k];
                if qb.iter().all(|&x| x == 0.0) {
                    continue;
                }
                fam.grad.rates[k] += de * dot(qb, &q0[k]) + da * dot(qb, &s1.v) + db * dot(qb, &s0.v);
                for i in 0..n {
                    vbar[i] += m.alpha * qb[i];
                    vbar_old[i] += m.beta * qb[i];
                    qb[i] *= m.decay;
                }
            }
        }
        // u' = ũ + βΔt² a', v' = ṽ + γΔt a'
        for i in 0..n {
            abar[i] += gamma * dt * vbar[i] + beta * dt * dt * ubar[i];
        }
        integ.effective.solve_in_place(&mut abar);
        let rbar = std::mem::replace(&mut abar, vec![0.0; n]);
        load[step + 1] += dot(&forcing.shape, &rbar);

        // r = ℓ f − K ũ − Σ K_f h_f
        let mut ubar_p = ubar;
        system.stiffness.mul_vec_add(-1.0, &rbar, &mut ubar_p);
        let mut vbar_p = vbar;
        for (f, fam) in fams.iter_mut().enumerate() {
            if fam.steps.weights.is_empty() {
                continue;
            }
            let q0 = if f == 0 { &s0.memory.dev } else { &s0.memory.trace };
            fam.z.iter_mut().for_each(|x| *x = 0.0);
            fam.op.mul_vec_add(1.0, &rbar, &mut fam.z);
            let z = &fam.z;
            let zv1 = dot(z, &s1.v);
            let zv0 = dot(z, &s0.v);
            for k in 0..fam.steps.modes.len() {
                let m = &fam.steps.modes[k];
                let w = fam.steps.weights[k];
                let (de, da, db) = fam.derivs[k];
                let zq = dot(z, &q0[k]);
                fam.grad.weights[k] -= m.alpha * zv1 + m.beta * zv0 + m.decay * zq;
                fam.grad.rates[k] -= w * (de * zq + da * zv1 + db * zv0);
                let c = w * m.decay;
                if c != 0.0 {
                    for (qb, zi) in fam.qbar[k].iter_mut().zip(z) {
                        *qb -= c * zi;
                    }
                }
            }
            let (a_f, b_f) = (fam.steps.implicit, fam.steps.explicit);
            for i in 0..n {
                vbar_p[i] -= a_f * z[i];
                vbar_old[i] -= b_f * z[i];
            }
        }
        multipliers[step + 1] = rbar;

        // ũ = u + Δt v + Δt²(½−β) a, ṽ = v + Δt(1−γ) a
        for i in 0..n {
            vbar_old[i] += dt * ubar_p[i] + vbar_p[i];
            abar[i] = dt * dt * (0.5 - beta) * ubar_p[i] + dt * (1.0 - gamma) * vbar_p[i];
        }
        ubar = ubar_p;
        vbar = vbar_old;
        obs_transpose_apply(&system.obs, &seeds[step], &mut ubar);
    }

    if abar.iter().any(|&x| x != 0.0) {
        let p0 = BandCholesky::factor(&system.mass)?.solve(&abar);
        load[0] = dot(&forcing.shape, &p0);
        multipliers[0] = p0;
    }
    let [dev, trace] = fams;
    Ok(AdjointTrajectory {
        multipliers,
        dev: dev.grad,
        trace: trace.grad,
        load,
    })
}

/// Forward-mode derivative of the observations along a direction
/// `(δw, δλ)` of each kernel, linearized about `traj`.
pub fn tangent_linear(
    traj: &TrajectoryRecord,
    system: &LinearSystem,
    dir_dev: &KernelGradient,
    dir_trace: &KernelGradient,
) -> Result<Vec<Vec<f64>>> {
    let config = &traj.config;
    let n_steps = config.n_steps;
    if !traj.is_complete() {
        return Err(Error::IncompleteTrajectory {
            expected: n_steps + 1,
            found: traj.states.len(),
        });
    }
    let kernels = &traj.kernels;
    if dir_dev.len() != kernels.dev.num_modes() || dir_trace.len() != kernels.trace.num_modes() {
        return Err(Error::invalid("direction does not match the kernels"));
    }
    let integ = Integrator::new(system, kernels, config)?;
    let n = system.dim();
    let dt = config.dt();
    let (beta, gamma) = (config.newmark_beta, config.newmark_gamma);

    // per mode: (δ(w e), δα, δβ, δe) and per family (δA, δB)
    let fam_data = |steps: &KernelSteps, k: &SoeKernel, dir: &KernelGradient| {
        let derivs = mode_derivs(k, dt);
        let mut modes = Vec::with_capacity(derivs.len());
        let (mut da_f, mut db_f) = (0.0, 0.0);
        for (j, (de, da, db)) in derivs.into_iter().enumerate() {
            let m = &steps.modes[j];
            let w = steps.weights[j];
            let (dw, dl) = (dir.weights[j], dir.rates[j]);
            let (d_e, d_a, d_b) = (de * dl, da * dl, db * dl);
            modes.push((dw * m.decay + w * d_e, d_a, d_b, d_e));
            da_f += dw * m.alpha + w * d_a;
            db_f += dw * m.beta + w * d_b;
        }
        (modes, da_f, db_f)
    };
    let fams = [
        (&integ.dev, &system.dev, fam_data(&integ.dev, &kernels.dev, dir_dev)),
        (&integ.trace, &system.trace, fam_data(&integ.trace, &kernels.trace, dir_trace)),
    ];

    let mut du = vec![0.0; n];
    let mut dv = vec![0.0; n];
    let mut da = vec![0.0; n];
    let mut dq: Vec<Vec<Vec<f64>>> = fams.iter().map(|(s, _, _)| vec![vec![0.0; n]; s.modes.len()]).collect();
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(vec![0.0; system.n_obs()]);
    for step in 0..n_steps {
        let s0 = &traj.states[step];
        let s1 = &traj.states[step + 1];
        let mut du_p = vec![0.0; n];
        let mut dv_p = vec![0.0; n];
        let mut v_p = vec![0.0; n];
        for i in 0..n {
            du_p[i] = du[i] + dt * dv[i] + dt * dt * (0.5 - beta) * da[i];
            dv_p[i] = dv[i] + dt * (1.0 - gamma) * da[i];
            v_p[i] = s0.v[i] + dt * (1.0 - gamma) * s0.a[i];
        }
        let mut rhs = vec![0.0; n];
        system.stiffness.mul_vec_add(-1.0, &du_p, &mut rhs);
        for (f, (steps, op, (modes, d_af, d_bf))) in fams.iter().enumerate() {
            if steps.weights.is_empty() {
                continue;
            }
            let q0 = if f == 0 { &s0.memory.dev } else { &s0.memory.trace };
            let mut dh = vec![0.0; n];
            for i in 0..n {
                dh[i] = d_af * v_p[i] + steps.implicit * dv_p[i] + d_bf * s0.v[i] + steps.explicit * dv[i]
                    // δS a' moved to the right-hand side
                    + gamma * dt * d_af * s1.a[i];
            }
            for (k, (dwe, _, _, _)) in modes.iter().enumerate() {
                let c = steps.weights[k] * steps.modes[k].decay;
                for i in 0..n {
                    dh[i] += dwe * q0[k][i] + c * dq[f][k][i];
                }
            }
            op.mul_vec_add(-1.0, &dh, &mut rhs);
        }
        integ.effective.solve_in_place(&mut rhs);
        let da_new = rhs;
        for i in 0..n {
            du[i] = du_p[i] + beta * dt * dt * da_new[i];
        }
        let mut dv_new = vec![0.0; n];
        for i in 0..n {
            dv_new[i] = dv_p[i] + gamma * dt * da_new[i];
        }
        for (f, (steps, _, (modes, _, _))) in fams.iter().enumerate() {
            let q0 = if f == 0 { &s0.memory.dev } else { &s0.memory.trace };
            for (k, (_, d_a, d_b, d_e)) in modes.iter().enumerate() {
                let m = &steps.modes[k];
                for i in 0..n {
                    dq[f][k][i] = d_e * q0[k][i]
                        + m.decay * dq[f][k][i]
                        + d_a * s1.v[i]
                        + m.alpha * dv_new[i]
                        + d_b * s0.v[i]
                        + m.beta * dv[i];
                }
            }
        }
        dv = dv_new;
        da = da_new;
        out.push(system.obs.apply(&du));
    }
    Ok(out)
}

/// `G(s_j)`, `s_j = jΔt`: the derivative of `J` with respect to the kernel
/// value at lag `s`, `G(s) = −∫_s^T p(t)ᵀ K_op v(t − s) dt`, by the
/// trapezoidal rule with `p(tₙ) = pⁿ/Δt`. `op` is the operator the kernel
/// acts through.
pub fn kernel_gradient_function(traj: &TrajectoryRecord, adj: &AdjointTrajectory, op: &CsrMatrix) -> Result<Vec<f64>> {
    let n_steps = traj.config.n_steps;
    if !traj.is_complete() {
        return Err(Error::IncompleteTrajectory {
            expected: n_steps + 1,
            found: traj.states.len(),
        });
    }
    let kv: Vec<Vec<f64>> = traj.states.iter().map(|s| op.apply(&s.v)).collect();
    let mut g = vec![0.0; n_steps + 1];
    for (j, gj) in g.iter_mut().enumerate() {
        let mut acc = 0.0;
        for n in j..=n_steps {
            let w = if n == j || n == n_steps { 0.5 } else { 1.0 };
            acc += w * dot(&adj.multipliers[n], &kv[n - j]);
        }
        // p = multiplier/Δt cancels the quadrature Δt
        *gj = -acc;
    }
    Ok(g)
}

/// `∫₀ᵀ h(s) G(s) ds` by the trapezoidal rule on the step grid.
pub fn pair_with_kernel_gradient(g: &[f64], config: &SolverConfig, h: impl Fn(f64) -> f64) -> f64 {
    let n = g.len() - 1;
    let dt = config.dt();
    g.iter()
        .enumerate()
        .map(|(j, gj)| {
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            w * dt * gj * h(config.time(j))
        })
        .sum()
}
