//! Scalar eigenmode model `u'' + λu + λ k∗u' = ℓ(t) f` and recovery of `k`
//! from its Laplace transform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{SampledSignal, SoeKernel};
use crate::linalg::CsrMatrix;
use crate::solver::{simulate, Forcing, KernelPair, LinearSystem, SolverConfig};

/// Time profile `ℓ(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModalLoad {
    /// `t / t_load` up to `t_load`, zero afterwards
    Ramp { t_load: f64 },
    /// `(1 − cos(2πt/width)) / width` on `[0, width]`; unit area
    Pulse { width: f64 },
    Zero,
}

impl ModalLoad {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            ModalLoad::Ramp { t_load } if t >= 0.0 && t < t_load => t / t_load,
            ModalLoad::Pulse { width } if t >= 0.0 && t < width => {
                (1.0 - (2.0 * std::f64::consts::PI * t / width).cos()) / width
            }
            _ => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ModalLoad::Ramp { t_load: w } | ModalLoad::Pulse { width: w } if !(w > 0.0 && w.is_finite()) => {
                Err(Error::invalid(format!("load duration {w} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalSystem {
    /// `λ_i > 0`
    pub eigenvalue: f64,
    /// `f_i`
    pub amplitude: f64,
    /// `Bφ_i`
    pub gain: f64,
    pub load: ModalLoad,
    pub kernel: SoeKernel,
}

impl ModalSystem {
    pub fn validate(&self) -> Result<()> {
        if !(self.eigenvalue > 0.0 && self.eigenvalue.is_finite()) {
            return Err(Error::invalid(format!("eigenvalue {} must be positive", self.eigenvalue)));
        }
        if !(self.amplitude.is_finite() && self.gain.is_finite()) {
            return Err(Error::invalid("amplitude and gain must be finite"));
        }
        self.load.validate()
    }

    /// Samples per undamped period `2π/√λ`; the response is resolved when
    /// this is well above 10.
    pub fn steps_per_period(&self, dt: f64) -> f64 {
        2.0 * std::f64::consts::PI / (self.eigenvalue.sqrt() * dt)
    }

    fn linear_system(&self) -> LinearSystem {
        let one = |v: f64| CsrMatrix::from_dense(&[vec![v]]);
        LinearSystem {
            mass: one(1.0),
            stiffness: one(self.eigenvalue),
            dev: one(self.eigenvalue),
            trace: one(0.0),
            obs: one(self.gain),
        }
    }
}

/// Observation `y(t_n) = Bφ u(t_n)` for `n = 0..=round(T/dt)`.
pub fn simulate_mode(sys: &ModalSystem, dt: f64, t_final: f64) -> Result<SampledSignal> {
    sys.validate()?;
    let n_steps = (t_final / dt).round() as usize;
    let config = SolverConfig::new(n_steps as f64 * dt, n_steps)?;
    let forcing = Forcing::new(
        vec![sys.amplitude],
        config.times().iter().map(|&t| sys.load.value(t)).collect(),
    );
    let kernels = KernelPair::new(sys.kernel.clone(), SoeKernel::zero());
    let traj = simulate(&sys.linear_system(), &kernels, &forcing, &config)?;
    SampledSignal::new(dt, traj.observations.into_iter().map(|y| y[0]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacePoint {
    pub s: f64,
    /// recovered `Lk(s)`; `None` when `|Ly(s)|` is below the conditioning
    /// threshold
    pub value: Option<f64>,
    /// truncated transform `∫₀ᵀ y e^{−st} dt`
    pub ly: f64,
    /// `|y(T)| e^{−sT} / s`, the bound used for the missing tail of `Ly`
    pub tail_bound: f64,
    /// that bound carried through to `Lk(s)` to first order
    pub value_tail_bound: f64,
}

/// `|Ly(s)|` below this fraction of `∫₀ᵀ |y| dt` skips the point.
pub const LAPLACE_CONDITIONING: f64 = 1e-10;

/// `Lk(s) = (f Bφ Lℓ(s) / Ly(s) − s² − λ) / (λ s)` from trapezoidal
/// transforms of `y` and `ℓ` on `[0, T]`. The kernel stored in `sys` is not
/// used.
pub fn recover_kernel_laplace(y: &SampledSignal, sys: &ModalSystem, s_points: &[f64]) -> Result<Vec<LaplacePoint>> {
    sys.validate()?;
    if let Some(s) = s_points.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!("Laplace point {s} must be positive")));
    }
    let dt = y.dt();
    let load = SampledSignal::from_fn(dt, y.len(), |t| sys.load.value(t))?;
    let t_final = y.time(y.len() - 1);
    let y_last = y.values().last().copied().unwrap_or(0.0).abs();
    let scale = trapezoid(y.values().iter().map(|v| v.abs()), dt);
    let lambda = sys.eigenvalue;
    Ok(s_points
        .iter()
        .map(|&s| {
            let ly = laplace_trapezoid(y, s);
            let ll = laplace_trapezoid(&load, s);
            let tail_bound = y_last * (-s * t_final).exp() / s;
            let forced = sys.amplitude * sys.gain * ll;
            let (value, value_tail_bound) = if ly.abs() > LAPLACE_CONDITIONING * scale {
                let v = (forced / ly - s * s - lambda) / (lambda * s);
                (Some(v), (forced / (ly * ly)).abs() * tail_bound / (lambda * s))
            } else {
                (None, f64::INFINITY)
            };
            LaplacePoint {
                s,
                value,
                ly,
                tail_bound,
                value_tail_bound,
            }
        })
        .collect())
}

fn laplace_trapezoid(f: &SampledSignal, s: f64) -> f64 {
    let dt = f.dt();
    trapezoid(f.values().iter().enumerate().map(|(n, v)| v * (-s * n as f64 * dt).exp()), dt)
}

fn trapezoid(values: impl ExactSizeIterator<Item = f64>, dt: f64) -> f64 {
    let last = values.len().saturating_sub(1);
    dt * values
        .enumerate()
        .map(|(n, v)| if n == 0 || n == last { 0.5 * v } else { v })
        .sum::<f64>()
}
