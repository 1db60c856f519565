//! Scalar memory kernels and checks of the inequalities they must satisfy.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `k(t) = Σ w_k exp(−λ_k t)`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SoeKernelRepr", into = "SoeKernelRepr")]
pub struct SoeKernel {
    weights: Vec<f64>,
    rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SoeKernelRepr {
    weights: Vec<f64>,
    rates: Vec<f64>,
}

impl TryFrom<SoeKernelRepr> for SoeKernel {
    type Error = Error;
    fn try_from(r: SoeKernelRepr) -> Result<Self> {
        SoeKernel::new(r.weights, r.rates)
    }
}

impl From<SoeKernel> for SoeKernelRepr {
    fn from(k: SoeKernel) -> Self {
        SoeKernelRepr {
            weights: k.weights,
            rates: k.rates,
        }
    }
}

impl SoeKernel {
    pub fn new(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("an exponential-sum kernel needs at least one mode"));
        }
        if weights.len() != rates.len() {
            return Err(Error::invalid(format!(
                "{} weights but {} rates",
                weights.len(),
                rates.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::invalid(format!("non-finite weight {w}")));
        }
        if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::invalid(format!("rate {r} must be finite and non-negative")));
        }
        Ok(SoeKernel { weights, rates })
    }

    /// The kernel that vanishes identically.
    pub fn zero() -> Self {
        SoeKernel {
            weights: vec![0.0],
            rates: vec![0.0],
        }
    }

    pub fn constant(c: f64) -> Self {
        SoeKernel {
            weights: vec![c],
            rates: vec![0.0],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn num_modes(&self) -> usize {
        self.weights.len()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }

    pub fn modes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.weights.iter().copied().zip(self.rates.iter().copied())
    }

    pub fn evaluate(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::invalid(format!("kernel evaluated at t = {t}")));
        }
        Ok(self.eval(t))
    }

    /// Unchecked evaluation for `t ≥ 0`.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.modes().map(|(w, l)| w * (-l * t).exp()).sum()
    }

    /// Laplace transform `Σ w_k / (s + λ_k)`.
    pub fn laplace(&self, s: Complex64) -> Complex64 {
        self.modes().map(|(w, l)| w / (s + l)).sum()
    }

    /// Real part of the Fourier transform `∫₀^∞ k(t) e^{−iωt} dt`;
    /// `+∞` at `ω = 0` when a mode has zero rate.
    pub fn fourier_real(&self, omega: f64) -> f64 {
        let mut acc = 0.0;
        for (w, l) in self.modes() {
            if l == 0.0 {
                if omega == 0.0 && w != 0.0 {
                    return f64::INFINITY.copysign(w);
                }
            } else {
                acc += w * l / (l * l + omega * omega);
            }
        }
        acc
    }
}

/// `g_α(t) = t^{α−1} / Γ(α)`, the Abel kernel with Laplace transform `s^{−α}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionalKernel {
    alpha: f64,
}

impl FractionalKernel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("fractional order {alpha} outside (0, 1]")));
        }
        Ok(FractionalKernel { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn evaluate(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::invalid(format!("kernel evaluated at t = {t}")));
        }
        if t == 0.0 {
            if self.alpha == 1.0 {
                return Ok(1.0);
            }
            return Err(Error::invalid(
                "fractional kernel is singular at t = 0; sample from t ≥ dt",
            ));
        }
        Ok(t.powf(self.alpha - 1.0) / statrs::function::gamma::gamma(self.alpha))
    }

    pub fn laplace(&self, s: f64) -> f64 {
        s.powf(-self.alpha)
    }

    pub fn fourier_real(&self, omega: f64) -> f64 {
        if omega == 0.0 {
            return f64::INFINITY;
        }
        (self.alpha * std::f64::consts::FRAC_PI_2).cos() * omega.abs().powf(-self.alpha)
    }
}

/// Uniformly sampled scalar signal, `values[n] ≈ f(n dt)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledSignal {
    dt: f64,
    values: Vec<f64>,
}

impl SampledSignal {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("sample spacing {dt} must be positive")));
        }
        if values.is_empty() {
            return Err(Error::invalid("a sampled signal needs at least one value"));
        }
        Ok(SampledSignal { dt, values })
    }

    pub fn from_fn(dt: f64, len: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(dt, (0..len).map(|n| f(n as f64 * dt)).collect())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// A kernel that can be sampled on a uniform grid starting at `t = 0`.
pub trait KernelSource {
    fn samples(&self, dt: f64, len: usize) -> Result<Vec<f64>>;
}

impl KernelSource for SoeKernel {
    fn samples(&self, dt: f64, len: usize) -> Result<Vec<f64>> {
        Ok((0..len).map(|n| self.eval(n as f64 * dt)).collect())
    }
}

impl KernelSource for SampledSignal {
    fn samples(&self, dt: f64, len: usize) -> Result<Vec<f64>> {
        check_dt(self.dt, dt)?;
        if self.values.len() < len {
            return Err(Error::invalid(format!(
                "kernel has {} samples, {len} needed",
                self.values.len()
            )));
        }
        Ok(self.values[..len].to_vec())
    }
}

fn check_dt(expected: f64, actual: f64) -> Result<()> {
    if (expected - actual).abs() > 1e-12 * expected.abs().max(actual.abs()) {
        return Err(Error::DtMismatch { expected, actual });
    }
    Ok(())
}

fn convolve_samples(k: &[f64], f: &[f64], dt: f64) -> Vec<f64> {
    let n = f.len();
    let mut g = vec![0.0; n];
    for (m, gm) in g.iter_mut().enumerate().skip(1) {
        let mut s = 0.5 * (k[m] * f[0] + k[0] * f[m]);
        for j in 1..m {
            s += k[m - j] * f[j];
        }
        *gm = dt * s;
    }
    g
}

/// `(k * f)(n dt)` by the trapezoidal rule on `[0, n dt]`; `g[0] = 0`.
pub fn discrete_convolve(k: &dyn KernelSource, f: &SampledSignal) -> Result<SampledSignal> {
    let ks = k.samples(f.dt, f.len())?;
    SampledSignal::new(f.dt, convolve_samples(&ks, &f.values, f.dt))
}

/// Second-order finite-difference derivative (one-sided at the ends).
fn derivative(v: &[f64], dt: f64) -> Vec<f64> {
    let n = v.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - v[i - 1]) / (2.0 * dt);
    }
    // third-order one-sided ends: the end values enter the trapezoid sums
    // with weight dt/2, so a second-order end stencil would add an
    // O(dt³) term with a large constant on top of the O(dt²) residual
    if n >= 4 {
        d[0] = (-11.0 * v[0] + 18.0 * v[1] - 9.0 * v[2] + 2.0 * v[3]) / (6.0 * dt);
        d[n - 1] = (11.0 * v[n - 1] - 18.0 * v[n - 2] + 9.0 * v[n - 3] - 2.0 * v[n - 4]) / (6.0 * dt);
    } else {
        d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt);
        d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dt);
    }
    d
}

fn trapezoid(v: &[f64], dt: f64) -> f64 {
    match v.len() {
        0 | 1 => 0.0,
        n => dt * (0.5 * (v[0] + v[n - 1]) + v[1..n - 1].iter().sum::<f64>()),
    }
}

/// Discrete residuals of the Leibniz rule, integration by parts, and the
/// transposition identity for the convolution on the half-line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvolutionIdentityReport {
    pub dt: f64,
    /// `max |(k*w)_t − k*w_t − k(t) w(0)|` over interior grid points
    pub leibniz: f64,
    /// `∫ w_t(t) q(T−t) − ∫ w(t) q_t(T−t) − w(T)q(0) + w(0)q(T)`, signed
    pub integration_by_parts: f64,
    /// `∫ (k*w)(t) q(T−t) − ∫ w(t) (k*q)(T−t)`, signed
    pub transposition: f64,
    /// largest residual divided by `dt²`
    pub constant: f64,
}

impl ConvolutionIdentityReport {
    pub fn max_residual(&self) -> f64 {
        self.leibniz.max(self.integration_by_parts.abs()).max(self.transposition.abs())
    }
}

pub fn verify_convolution_identities(
    k: &SoeKernel,
    w: &SampledSignal,
    q: &SampledSignal,
) -> Result<ConvolutionIdentityReport> {
    check_dt(w.dt, q.dt)?;
    if w.len() < 3 || w.len() != q.len() {
        return Err(Error::invalid(
            "identity check needs two signals of equal length ≥ 3",
        ));
    }
    let dt = w.dt;
    let n = w.len();
    let ks = k.samples(dt, n)?;
    let wv = &w.values;
    let qv = &q.values;

    let kw = convolve_samples(&ks, wv, dt);
    let dkw = derivative(&kw, dt);
    let wt = derivative(wv, dt);
    let kwt = convolve_samples(&ks, &wt, dt);
    let leibniz = (1..n - 1)
        .map(|i| (dkw[i] - kwt[i] - ks[i] * wv[0]).abs())
        .fold(0.0, f64::max);

    let qt = derivative(qv, dt);
    let rev = |v: &[f64]| v.iter().rev().copied().collect::<Vec<_>>();
    let (q_rev, qt_rev) = (rev(qv), rev(&qt));
    let lhs: Vec<f64> = wt.iter().zip(&q_rev).map(|(a, b)| a * b).collect();
    let rhs: Vec<f64> = wv.iter().zip(&qt_rev).map(|(a, b)| a * b).collect();
    let ibp = trapezoid(&lhs, dt) - trapezoid(&rhs, dt) - wv[n - 1] * qv[0] + wv[0] * qv[n - 1];

    let kq = convolve_samples(&ks, qv, dt);
    let kq_rev = rev(&kq);
    let lhs: Vec<f64> = kw.iter().zip(&q_rev).map(|(a, b)| a * b).collect();
    let rhs: Vec<f64> = wv.iter().zip(&kq_rev).map(|(a, b)| a * b).collect();
    let transposition = trapezoid(&lhs, dt) - trapezoid(&rhs, dt);

    let report = ConvolutionIdentityReport {
        dt,
        leibniz,
        integration_by_parts: ibp,
        transposition,
        constant: 0.0,
    };
    Ok(ConvolutionIdentityReport {
        constant: report.max_residual() / (dt * dt),
        ..report
    })
}

/// Discrete form of `∫⟨w, k*w_t⟩ − ½(k*‖w‖²)(T) + ½∫k·‖w(0)‖²`.
///
/// Both sides use the same backward-difference convolution quadrature
/// `(k*w_t)(t_n) ≈ Σ_{j≤n} k_{n−j} (w_j − w_{j−1})`, for which the bound holds
/// exactly whenever the samples of `k` are non-negative and non-increasing.
pub fn check_alikhanov(k: &SampledSignal, w: &SampledSignal) -> Result<f64> {
    check_dt(k.dt, w.dt)?;
    let kv = &k.values;
    let wv = &w.values;
    if kv.len() < wv.len() {
        return Err(Error::invalid("kernel shorter than the test signal"));
    }
    if let Some(v) = kv.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::KernelPrecondition(format!("kernel sample {v} is negative")));
    }
    if kv.windows(2).any(|p| p[1] > p[0]) {
        return Err(Error::KernelPrecondition("kernel samples increase".into()));
    }
    let dt = w.dt;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for n in 1..wv.len() {
        let mut conv = 0.0;
        let mut conv_sq = 0.0;
        for j in 1..=n {
            conv += kv[n - j] * (wv[j] - wv[j - 1]);
            conv_sq += kv[n - j] * (wv[j] * wv[j] - wv[j - 1] * wv[j - 1]);
        }
        lhs += wv[n] * conv;
        rhs += 0.5 * conv_sq;
    }
    Ok(dt * (lhs - rhs))
}

#[derive(Clone, Copy, Debug)]
pub enum CoercivityKernel<'a> {
    Soe(&'a SoeKernel),
    Fractional(&'a FractionalKernel),
}

impl CoercivityKernel<'_> {
    fn fourier_real(&self, omega: f64) -> f64 {
        match self {
            CoercivityKernel::Soe(k) => k.fourier_real(omega),
            CoercivityKernel::Fractional(k) => k.fourier_real(omega),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoercivityReport {
    /// smallest `Re(F k)(ω)` on the grid: the quadratic form `∫ (k*y) y` per
    /// unit spectral energy
    pub min_quadratic_form: f64,
    /// largest `γ ≥ 0` with `Re(F k)(ω) ≥ γ (1+ω²)^{−δ/2}` on the grid
    pub gamma_lower: f64,
    pub delta: f64,
    pub passed: bool,
}

pub fn check_fourier_coercivity(
    kernel: CoercivityKernel<'_>,
    delta: f64,
    grid: &[f64],
) -> Result<CoercivityReport> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta = {delta} must be positive")));
    }
    if grid.is_empty() || grid.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("frequency grid must be finite and non-empty"));
    }
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let scale = sorted.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let symmetric = sorted
        .iter()
        .zip(sorted.iter().rev())
        .all(|(a, b)| (a + b).abs() <= 1e-12 * scale.max(1.0));
    if !symmetric {
        return Err(Error::invalid("frequency grid is not symmetric about 0"));
    }

    let mut min_form = f64::INFINITY;
    let mut min_ratio = f64::INFINITY;
    let mut max_form: f64 = 0.0;
    for &omega in grid {
        let re = kernel.fourier_real(omega);
        if re.is_infinite() && re > 0.0 {
            continue;
        }
        min_form = min_form.min(re);
        max_form = max_form.max(re.abs());
        min_ratio = min_ratio.min(re * (1.0 + omega * omega).powf(0.5 * delta));
    }
    let tol = 1e-12 * max_form;
    Ok(CoercivityReport {
        min_quadratic_form: min_form,
        gamma_lower: min_ratio.max(0.0),
        delta,
        passed: min_form >= -tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn soe_closed_form() {
        let k = SoeKernel::new(vec![1.0], vec![0.0]).unwrap();
        assert_eq!(k.evaluate(5.0).unwrap(), 1.0);
        let k = SoeKernel::new(vec![2.0, -1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(k.evaluate(0.0).unwrap(), 1.0);
        assert!(k.evaluate(f64::NAN).is_err());
        assert!(k.evaluate(f64::INFINITY).is_err());
    }

    #[test]
    fn soe_rejects_bad_modes() {
        assert!(SoeKernel::new(vec![], vec![]).is_err());
        assert!(SoeKernel::new(vec![1.0], vec![-1.0]).is_err());
        assert!(SoeKernel::new(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(SoeKernel::new(vec![1.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn soe_json_uses_weights_and_rates() {
        let k = SoeKernel::new(vec![0.5, 1.5], vec![2.0, 0.0]).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(s, r#"{"weights":[0.5,1.5],"rates":[2.0,0.0]}"#);
        let back: SoeKernel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
        assert!(serde_json::from_str::<SoeKernel>(r#"{"weights":[1],"rates":[-2]}"#).is_err());
    }

    #[test]
    fn fractional_kernel_is_singular_at_zero() {
        let g = FractionalKernel::new(0.7).unwrap();
        assert!(g.evaluate(0.0).is_err());
        // 1/Γ(0.7), Γ(0.7) = 1.298055332647558
        assert_relative_eq!(g.evaluate(1.0).unwrap(), 1.0 / 1.298_055_332_647_558, epsilon = 1e-12);
        assert!(g.evaluate(1e-3).unwrap() > 0.0);
        assert_eq!(FractionalKernel::new(1.0).unwrap().evaluate(0.0).unwrap(), 1.0);
        assert!(FractionalKernel::new(0.0).is_err());
        assert!(FractionalKernel::new(1.5).is_err());
    }

    #[test]
    fn convolution_trivial_cases() {
        let f = SampledSignal::from_fn(0.1, 11, |_| 1.0).unwrap();
        let g = discrete_convolve(&SoeKernel::zero(), &f).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        let g = discrete_convolve(&SoeKernel::constant(1.0), &f).unwrap();
        assert_eq!(g.values()[0], 0.0);
        assert_relative_eq!(g.values()[10], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn convolution_of_exponentials_is_second_order() {
        // (e^{-t} * cos)(t) = (cos t + sin t − e^{-t}) / 2
        let k = SoeKernel::new(vec![1.0], vec![1.0]).unwrap();
        let err = |dt: f64| {
            let n = (2.0 / dt).round() as usize + 1;
            let f = SampledSignal::from_fn(dt, n, f64::cos).unwrap();
            let g = discrete_convolve(&k, &f).unwrap();
            g.values()
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let t = i as f64 * dt;
                    (v - 0.5 * (t.cos() + t.sin() - (-t).exp())).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e1 < 1e-4);
        assert!((e1 / e2).log2() > 1.9);
    }

    #[test]
    fn convolution_rejects_dt_mismatch() {
        let k = SampledSignal::new(0.2, vec![1.0; 5]).unwrap();
        let f = SampledSignal::new(0.1, vec![1.0; 5]).unwrap();
        assert!(matches!(discrete_convolve(&k, &f), Err(Error::DtMismatch { .. })));
    }

    #[test]
    fn identities_vanish_for_zero_kernel() {
        let dt = 0.01;
        let w = SampledSignal::from_fn(dt, 101, |t| t * t).unwrap();
        let q = SampledSignal::from_fn(dt, 101, |t| t * t).unwrap();
        let r = verify_convolution_identities(&SoeKernel::zero(), &w, &q).unwrap();
        assert_eq!(r.leibniz, 0.0);
        assert_eq!(r.transposition, 0.0);
        // quadratic signals make the finite differences exact
        assert!(r.integration_by_parts.abs() < 1e-12);
    }

    #[test]
    fn leibniz_rule_for_exponential_and_ramp() {
        let dt = 1e-3;
        let k = SoeKernel::new(vec![1.0], vec![1.0]).unwrap();
        let w = SampledSignal::from_fn(dt, 1001, |t| t).unwrap();
        let r = verify_convolution_identities(&k, &w, &w).unwrap();
        assert!(r.leibniz < 1e-4, "{r:?}");
    }

    #[test]
    fn transposition_with_sines() {
        let dt = 1e-3;
        let k = SoeKernel::new(vec![1.0], vec![1.0]).unwrap();
        let w = SampledSignal::from_fn(dt, 1001, f64::sin).unwrap();
        let r = verify_convolution_identities(&k, &w, &w).unwrap();
        assert!(r.transposition.abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn alikhanov_degenerate_cases() {
        let dt = 0.01;
        let w = SampledSignal::from_fn(dt, 50, |t| t.sin()).unwrap();
        let zero = SampledSignal::new(dt, vec![0.0; 50]).unwrap();
        assert_eq!(check_alikhanov(&zero, &w).unwrap(), 0.0);
        let k = SampledSignal::from_fn(dt, 50, |t| (-t).exp()).unwrap();
        let c = SampledSignal::new(dt, vec![2.5; 50]).unwrap();
        assert!(check_alikhanov(&k, &c).unwrap().abs() < 1e-14);
        let bad = SampledSignal::from_fn(dt, 50, |t| t).unwrap();
        assert!(matches!(check_alikhanov(&bad, &w), Err(Error::KernelPrecondition(_))));
    }

    #[test]
    fn fourier_coercivity_single_mode() {
        let k = SoeKernel::new(vec![1.0], vec![1.0]).unwrap();
        let grid: Vec<f64> = (-50..=50).map(|i| i as f64 * 0.37).collect();
        let r = check_fourier_coercivity(CoercivityKernel::Soe(&k), 2.0, &grid).unwrap();
        assert_relative_eq!(r.gamma_lower, 1.0, epsilon = 1e-14);
        assert!(r.passed);
        assert!(check_fourier_coercivity(CoercivityKernel::Soe(&k), 0.0, &grid).is_err());
        assert!(check_fourier_coercivity(CoercivityKernel::Soe(&k), 1.0, &[0.5, 1.0]).is_err());
    }

    #[test]
    fn fourier_coercivity_fractional_matches_grid_minimum() {
        let g = FractionalKernel::new(0.7).unwrap();
        let mut grid: Vec<f64> = (0..=300).map(|i| 10f64.powf(3.0 * i as f64 / 300.0)).collect();
        grid.extend(grid.clone().iter().map(|w| -w));
        let r = check_fourier_coercivity(CoercivityKernel::Fractional(&g), 0.7, &grid).unwrap();
        let c = (0.35 * std::f64::consts::PI).cos();
        let brute = grid
            .iter()
            .map(|w| c * w.abs().powf(-0.7) * (1.0 + w * w).powf(0.35))
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(r.gamma_lower, brute, max_relative = 1e-14);
        assert!(r.gamma_lower >= c);
        assert!(r.passed);
    }
}
