//! Rational Laplace-domain representations of memory kernels.
//!
//! Kernels enter the solver as exponential sums, whose Laplace transforms are
//! rational with simple poles on the negative real axis. This module fits such
//! transforms with the AAA algorithm, converts barycentric fits to
//! pole/residue form, and carries out the algebra that folds a
//! stress-relaxation kernel into two strain-rate kernels.

use nalgebra::{DMatrix, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{FractionalKernel, SoeKernel};

/// Poles with `|Im p| / |Re p|` below this are treated as real.
pub const REAL_POLE_RATIO: f64 = 1e-8;

/// Largest number of poles produced by the reduction algebra.
pub const MAX_REDUCED_DEGREE: usize = 64;

/// `F(s) = c + Σ r_j / (s − p_j)`
#[derive(Clone, Debug, PartialEq)]
pub struct RationalLaplace {
    poles: Vec<Complex64>,
    residues: Vec<Complex64>,
    constant: f64,
}

#[derive(Serialize, Deserialize)]
struct RationalRepr {
    poles_re: Vec<f64>,
    poles_im: Vec<f64>,
    residues_re: Vec<f64>,
    residues_im: Vec<f64>,
    constant: f64,
}

impl Serialize for RationalLaplace {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        RationalRepr {
            poles_re: self.poles.iter().map(|p| p.re).collect(),
            poles_im: self.poles.iter().map(|p| p.im).collect(),
            residues_re: self.residues.iter().map(|r| r.re).collect(),
            residues_im: self.residues.iter().map(|r| r.im).collect(),
            constant: self.constant,
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for RationalLaplace {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let r = RationalRepr::deserialize(de)?;
        let n = r.poles_re.len();
        if r.poles_im.len() != n || r.residues_re.len() != n || r.residues_im.len() != n {
            return Err(serde::de::Error::custom("pole and residue arrays differ in length"));
        }
        let poles = r.poles_re.iter().zip(&r.poles_im).map(|(&a, &b)| Complex64::new(a, b));
        let res = r.residues_re.iter().zip(&r.residues_im).map(|(&a, &b)| Complex64::new(a, b));
        RationalLaplace::new(poles.collect(), res.collect(), r.constant).map_err(serde::de::Error::custom)
    }
}

impl RationalLaplace {
    pub fn new(poles: Vec<Complex64>, residues: Vec<Complex64>, constant: f64) -> Result<Self> {
        if poles.len() != residues.len() {
            return Err(Error::invalid(format!(
                "{} poles but {} residues",
                poles.len(),
                residues.len()
            )));
        }
        if poles.iter().chain(&residues).any(|z| !(z.re.is_finite() && z.im.is_finite()))
            || !constant.is_finite()
        {
            return Err(Error::invalid("non-finite pole, residue, or constant"));
        }
        let r = RationalLaplace {
            poles,
            residues,
            constant,
        };
        r.check_conjugate_symmetry()?;
        Ok(r)
    }

    pub fn zero() -> Self {
        RationalLaplace {
            poles: Vec::new(),
            residues: Vec::new(),
            constant: 0.0,
        }
    }

    pub fn from_soe(k: &SoeKernel) -> Self {
        let mut poles = Vec::new();
        let mut residues = Vec::new();
        for (w, l) in k.modes() {
            if w != 0.0 {
                poles.push(Complex64::new(-l, 0.0));
                residues.push(Complex64::new(w, 0.0));
            }
        }
        RationalLaplace {
            poles,
            residues,
            constant: 0.0,
        }
    }

    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    pub fn residues(&self) -> &[Complex64] {
        &self.residues
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn degree(&self) -> usize {
        self.poles.len()
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.residues.iter().all(|r| r.norm() == 0.0)
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        let mut acc = Complex64::new(self.constant, 0.0);
        for (p, r) in self.poles.iter().zip(&self.residues) {
            acc += r / (s - p);
        }
        acc
    }

    pub fn eval_real(&self, s: f64) -> f64 {
        self.eval(Complex64::new(s, 0.0)).re
    }

    fn derivative(&self, s: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (p, r) in self.poles.iter().zip(&self.residues) {
            let d = s - p;
            acc -= r / (d * d);
        }
        acc
    }

    fn check_conjugate_symmetry(&self) -> Result<()> {
        let scale = self.poles.iter().fold(1.0f64, |m, p| m.max(p.norm()));
        let rscale = self.residues.iter().fold(0.0f64, |m, r| m.max(r.norm())).max(1e-300);
        for (i, p) in self.poles.iter().enumerate() {
            if p.im.abs() <= REAL_POLE_RATIO * p.re.abs() {
                continue;
            }
            let partner = self.poles.iter().enumerate().any(|(j, q)| {
                j != i
                    && (q - p.conj()).norm() <= 1e-10 * scale
                    && (self.residues[j] - self.residues[i].conj()).norm() <= 1e-8 * rscale
            });
            if !partner {
                return Err(Error::invalid(format!(
                    "complex pole {p} has no conjugate partner; the kernel would not be real"
                )));
            }
        }
        Ok(())
    }

    /// Converts to `Σ w_k e^{−λ_k t}` with `w_k = r_k`, `λ_k = −p_k`.
    ///
    /// Near-real conjugate pairs are merged into a single real mode; a
    /// constant with `|c| > constant_tol` (an instantaneous `c δ(t)` term) is
    /// rejected.
    pub fn to_soe(&self, constant_tol: f64) -> Result<SoeKernel> {
        if self.constant.abs() > constant_tol {
            return Err(Error::invalid(format!(
                "constant term {} has no exponential-sum representation",
                self.constant
            )));
        }
        let scale = self.poles.iter().fold(0.0f64, |m, p| m.max(p.norm()));
        let mut modes: Vec<(f64, f64)> = Vec::new();
        for (p, r) in self.poles.iter().zip(&self.residues) {
            if p.im.abs() > REAL_POLE_RATIO * p.re.abs() {
                return Err(Error::ComplexPole { re: p.re, im: p.im });
            }
            let rate = if p.re.abs() <= 1e-12 * scale.max(1.0) { 0.0 } else { -p.re };
            if rate < 0.0 {
                return Err(Error::UnstablePole { re: p.re, im: p.im });
            }
            match modes.iter_mut().find(|(_, l)| *l == rate) {
                Some(m) => m.0 += r.re,
                None => modes.push((r.re, rate)),
            }
        }
        if modes.is_empty() {
            return Ok(SoeKernel::zero());
        }
        modes.sort_by(|a, b| a.1.total_cmp(&b.1));
        SoeKernel::new(modes.iter().map(|m| m.0).collect(), modes.iter().map(|m| m.1).collect())
    }
}

/// `r(z) = Σ β_j f_j / (z − z_j) / Σ β_j / (z − z_j)`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarycentricFit {
    pub support: Vec<f64>,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    /// max relative error over the sample set
    pub max_rel_error: f64,
}

impl BarycentricFit {
    pub fn degree(&self) -> usize {
        self.support.len() - 1
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = Complex64::new(0.0, 0.0);
        for ((&zj, &fj), &bj) in self.support.iter().zip(&self.values).zip(&self.weights) {
            let d = z - zj;
            if d.norm() == 0.0 {
                return Complex64::new(fj, 0.0);
            }
            let c = bj / d;
            num += c * fj;
            den += c;
        }
        num / den
    }

    pub fn eval_real(&self, z: f64) -> f64 {
        self.eval(Complex64::new(z, 0.0)).re
    }
}

/// Log-spaced points in `[lo, hi]`.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Greedy AAA fit of real samples `(s, F(s))` on the positive axis.
///
/// `max_degree` bounds the number of poles, so at most `max_degree + 1`
/// support points are used. Errors are measured relative to `|F(s)|`, and the
/// least-squares problem is weighted the same way.
pub fn aaa_fit(samples: &[(f64, f64)], tol: f64, max_degree: usize) -> Result<BarycentricFit> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance {tol} must be positive")));
    }
    if samples.iter().any(|(s, f)| !(s.is_finite() && *s > 0.0 && f.is_finite())) {
        return Err(Error::invalid("AAA samples must be finite with positive abscissae"));
    }
    let mut zs: Vec<f64> = samples.iter().map(|p| p.0).collect();
    zs.sort_by(f64::total_cmp);
    zs.dedup();
    if zs.len() < 2 || zs.len() != samples.len() {
        return Err(Error::invalid("AAA needs at least two distinct sample points"));
    }

    let z: Vec<f64> = samples.iter().map(|p| p.0).collect();
    let f: Vec<f64> = samples.iter().map(|p| p.1).collect();
    let m_total = z.len();
    let fmax = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let denom: Vec<f64> = f.iter().map(|v| v.abs().max(1e-14 * fmax).max(1e-300)).collect();

    let mut support: Vec<usize> = Vec::new();
    let mut is_support = vec![false; m_total];
    let mut weights: Vec<f64> = Vec::new();
    let mean = f.iter().sum::<f64>() / m_total as f64;
    let mut approx = vec![mean; m_total];

    loop {
        let (mut worst, mut j_worst) = (0.0f64, usize::MAX);
        for i in 0..m_total {
            if is_support[i] {
                continue;
            }
            let e = (f[i] - approx[i]).abs() / denom[i];
            if j_worst == usize::MAX || e > worst {
                worst = e;
                j_worst = i;
            }
        }
        if !support.is_empty() && (worst <= tol || support.len() > max_degree) {
            break;
        }
        if j_worst == usize::MAX {
            break;
        }
        support.push(j_worst);
        is_support[j_worst] = true;

        let rows: Vec<usize> = (0..m_total).filter(|&i| !is_support[i]).collect();
        let cols = support.len();
        if rows.is_empty() {
            weights = vec![1.0; cols];
            approx = f.clone();
            break;
        }
        let n_rows = rows.len().max(cols);
        let mut loewner = DMatrix::<f64>::zeros(n_rows, cols);
        for (r, &i) in rows.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                loewner[(r, c)] = (f[i] - f[j]) / (z[i] - z[j]) / denom[i];
            }
        }
        let svd = SVD::try_new(loewner, false, true, f64::EPSILON, 500)
            .ok_or_else(|| Error::Svd("no convergence on the Loewner matrix".into()))?;
        let v_t = svd
            .v_t
            .as_ref()
            .ok_or_else(|| Error::Svd("right singular vectors missing".into()))?;
        let k_min = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .ok_or_else(|| Error::Svd("empty spectrum".into()))?;
        weights = v_t.row(k_min).iter().copied().collect();
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Svd("non-finite barycentric weights".into()));
        }

        for i in 0..m_total {
            approx[i] = if is_support[i] {
                f[i]
            } else {
                let mut num = 0.0;
                let mut den = 0.0;
                for (c, &j) in support.iter().enumerate() {
                    let t = weights[c] / (z[i] - z[j]);
                    num += t * f[j];
                    den += t;
                }
                num / den
            };
        }
    }

    let max_rel_error = (0..m_total)
        .map(|i| (f[i] - approx[i]).abs() / denom[i])
        .fold(0.0, f64::max);
    Ok(BarycentricFit {
        support: support.iter().map(|&j| z[j]).collect(),
        values: support.iter().map(|&j| f[j]).collect(),
        weights,
        max_rel_error,
    })
}

/// Poles from the generalized eigenvalues of the arrow pencil
/// `([0 βᵀ; 1 diag(z)], diag(0, 1, …, 1))`, residues from `N(p) / D'(p)`.
pub fn to_pole_residue(fit: &BarycentricFit) -> Result<RationalLaplace> {
    let m = fit.support.len();
    if m == 0 || fit.weights.len() != m || fit.values.len() != m {
        return Err(Error::invalid("malformed barycentric fit"));
    }
    if fit.weights.iter().all(|&w| w == 0.0) {
        return Err(Error::invalid("barycentric weights are all zero"));
    }
    let sum_w: f64 = fit.weights.iter().sum();
    let wscale = fit.weights.iter().fold(0.0f64, |a, w| a.max(w.abs()));
    if sum_w.abs() <= 1e-14 * wscale {
        return Err(Error::invalid("barycentric fit is not proper (pole at infinity)"));
    }
    let constant = fit.weights.iter().zip(&fit.values).map(|(w, f)| w * f).sum::<f64>() / sum_w;
    if m == 1 {
        return RationalLaplace::new(Vec::new(), Vec::new(), constant);
    }

    let zmax = fit.support.iter().fold(0.0f64, |a, z| a.max(z.abs()));
    let den_at = |x: f64| -> f64 {
        fit.support
            .iter()
            .zip(&fit.weights)
            .map(|(z, w)| w / (x - z))
            .sum()
    };
    // shift away from the support set and from any pole
    let mut shift = 2.0 * zmax + 1.0;
    for _ in 0..8 {
        if den_at(shift).abs() > 1e-8 * wscale / (shift + zmax) {
            break;
        }
        shift *= 1.618;
    }

    let n = m + 1;
    let mut pencil = DMatrix::<f64>::zeros(n, n);
    for j in 0..m {
        pencil[(0, j + 1)] = fit.weights[j];
        pencil[(j + 1, 0)] = 1.0;
        pencil[(j + 1, j + 1)] = fit.support[j] - shift;
    }
    let lu = pencil.lu();
    let mut b = DMatrix::<f64>::identity(n, n);
    b[(0, 0)] = 0.0;
    let c = lu
        .solve(&b)
        .ok_or_else(|| Error::Eigen("shifted arrow pencil is singular".into()))?;
    let mut mus: Vec<Complex64> = c.complex_eigenvalues().iter().copied().collect();
    mus.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let mu_max = mus.first().map_or(0.0, |z| z.norm());
    let poles: Vec<Complex64> = mus
        .iter()
        .take(m - 1)
        .filter(|mu| mu.norm() > 1e-14 * mu_max)
        .map(|mu| Complex64::new(shift, 0.0) + 1.0 / mu)
        .collect();
    if poles.iter().any(|p| !(p.re.is_finite() && p.im.is_finite())) {
        return Err(Error::Eigen("non-finite pole".into()));
    }
    let den_c = |x: Complex64| -> (Complex64, Complex64) {
        let mut d = Complex64::new(0.0, 0.0);
        let mut dd = Complex64::new(0.0, 0.0);
        for (&zj, &wj) in fit.support.iter().zip(&fit.weights) {
            let t = 1.0 / (x - zj);
            d += wj * t;
            dd -= wj * t * t;
        }
        (d, dd)
    };
    let poles: Vec<Complex64> = poles
        .into_iter()
        .map(|mut p| {
            // Newton on the barycentric denominator
            for _ in 0..4 {
                let (d, dd) = den_c(p);
                if dd.norm() == 0.0 {
                    break;
                }
                let next = p - d / dd;
                if den_c(next).0.norm() < d.norm() {
                    p = next;
                } else {
                    break;
                }
            }
            if p.im.abs() <= 1e-14 * p.norm() {
                p.im = 0.0;
            }
            p
        })
        .collect();

    let residues = poles
        .iter()
        .map(|&p| {
            let mut num = Complex64::new(0.0, 0.0);
            let mut dden = Complex64::new(0.0, 0.0);
            for ((&zj, &fj), &wj) in fit.support.iter().zip(&fit.values).zip(&fit.weights) {
                let d = p - zj;
                num += wj * fj / d;
                dden -= wj / (d * d);
            }
            num / dden
        })
        .collect::<Vec<_>>();
    for p in &poles {
        if p.re > 1e-12 * zmax && p.im.abs() <= REAL_POLE_RATIO * p.re.abs() {
            return Err(Error::UnstablePole { re: p.re, im: p.im });
        }
    }
    RationalLaplace::new(poles, residues, constant)
}

/// Diagnostics of an exponential-sum fit of a fractional kernel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FractionalSoeFit {
    pub alpha: f64,
    pub kernel: SoeKernel,
    pub rational: RationalLaplace,
    /// relative error of the barycentric fit on the sample set
    pub laplace_rel_error: f64,
    /// max relative error of `Σ w/(s+λ)` against `s^{−α}` on the sample set
    pub soe_laplace_rel_error: f64,
    /// constant term dropped from the rational fit (an instantaneous term)
    pub dropped_constant: f64,
}

/// Exponential-sum surrogate of `t^{α−1}/Γ(α)` from an AAA fit of `s^{−α}`.
pub fn fit_fractional_soe(
    alpha: f64,
    s_range: (f64, f64),
    n_samples: usize,
    tol: f64,
    max_modes: usize,
) -> Result<FractionalSoeFit> {
    let g = FractionalKernel::new(alpha)?;
    let (lo, hi) = s_range;
    if !(lo > 0.0 && hi > lo) || n_samples < 2 {
        return Err(Error::invalid("need 0 < s_min < s_max and at least two samples"));
    }
    let samples: Vec<(f64, f64)> = log_space(lo, hi, n_samples)
        .into_iter()
        .map(|s| (s, g.laplace(s)))
        .collect();
    let fit = aaa_fit(&samples, tol, max_modes)?;
    let rational = to_pole_residue(&fit)?;
    let stripped = RationalLaplace {
        constant: 0.0,
        ..rational.clone()
    };
    let kernel = stripped.to_soe(0.0)?;
    let soe_laplace_rel_error = samples
        .iter()
        .map(|&(s, f)| ((kernel.laplace(Complex64::new(s, 0.0)).re - f) / f).abs())
        .fold(0.0, f64::max);
    Ok(FractionalSoeFit {
        alpha,
        kernel,
        laplace_rel_error: fit.max_rel_error,
        soe_laplace_rel_error,
        dropped_constant: rational.constant,
        rational,
    })
}

pub fn soe_from_fractional(
    alpha: f64,
    s_range: (f64, f64),
    n_samples: usize,
    tol: f64,
    max_modes: usize,
) -> Result<SoeKernel> {
    fit_fractional_soe(alpha, s_range, n_samples, tol, max_modes).map(|f| f.kernel)
}

/// Default sampling of the Laplace axis: 400 log-spaced points in `[1e−3, 1e3]`.
pub const DEFAULT_S_RANGE: (f64, f64) = (1e-3, 1e3);
pub const DEFAULT_S_SAMPLES: usize = 400;

/// `(k̂_ε − 2μ k̂_σ) / (1 + s k̂_σ)` and `(k̂_trε − λ k̂_σ) / (1 + s k̂_σ)`: the
/// two strain-rate kernels equivalent to a stress-relaxation law with
/// kernels `(k_σ, k_ε, k_trε)`.
pub fn reduce_kernels(
    k_sigma: &RationalLaplace,
    k_eps: &RationalLaplace,
    k_treps: &RationalLaplace,
    mu: f64,
    lambda: f64,
) -> Result<(RationalLaplace, RationalLaplace)> {
    Ok((
        fold_relaxation(k_sigma, k_eps, 2.0 * mu)?,
        fold_relaxation(k_sigma, k_treps, lambda)?,
    ))
}

/// `(k̂ − c k̂_σ) / (1 + s k̂_σ)`
pub fn fold_relaxation(
    k_sigma: &RationalLaplace,
    k: &RationalLaplace,
    coef: f64,
) -> Result<RationalLaplace> {
    if k_sigma.is_zero() {
        return Ok(k.clone());
    }
    let denom = RelaxationDenominator::new(k_sigma)?;
    let zeros = denom.zeros()?;
    let mut candidates = zeros;
    candidates.extend_from_slice(k.poles());
    // poles of k̂_σ at the origin are not cancelled by the denominator
    candidates.extend(k_sigma.poles().iter().filter(|p| p.norm() == 0.0));
    let eval = |s: Complex64| (k.eval(s) - coef * k_sigma.eval(s)) / denom.eval(s);
    let constant = if k_sigma.constant != 0.0 {
        0.0
    } else {
        (k.constant - coef * k_sigma.constant) / denom.at_infinity()
    };
    let excluded: Vec<Complex64> = k_sigma.poles().iter().copied().filter(|p| p.norm() != 0.0).collect();
    let magnitude =
        |s: Complex64| (k.eval(s).norm() + coef.abs() * k_sigma.eval(s).norm()) / denom.eval(s).norm();
    let out = assemble_from_candidates(&eval, &magnitude, candidates, &excluded, constant)?;
    verify_identity(&out, &eval, &magnitude)?;
    Ok(out)
}

/// The intermediate trace kernel from the four-kernel deviatoric/hydrostatic
/// law:
/// `(1/(d(1 + s k̂_trσ))) [(2μ + dλ)(k̂_σ − k̂_trσ) + k̂_trε (1 + s k̂_σ)]`.
pub fn reduce_trace_intermediate(
    k_sigma: &RationalLaplace,
    k_trsigma: &RationalLaplace,
    k_treps: &RationalLaplace,
    mu: f64,
    lambda: f64,
    dim: usize,
) -> Result<RationalLaplace> {
    for k in [k_sigma, k_trsigma, k_treps] {
        if k.constant != 0.0 {
            return Err(Error::invalid(
                "intermediate trace reduction needs strictly proper kernel transforms",
            ));
        }
    }
    let d = dim as f64;
    let bulk = 2.0 * mu + d * lambda;
    let denom = RelaxationDenominator::new(k_trsigma)?;
    let mut candidates = denom.zeros()?;
    candidates.extend_from_slice(k_sigma.poles());
    candidates.extend_from_slice(k_treps.poles());
    candidates.extend(k_trsigma.poles().iter().filter(|p| p.norm() == 0.0));
    let eval = |s: Complex64| {
        let num = bulk * (k_sigma.eval(s) - k_trsigma.eval(s)) + k_treps.eval(s) * (1.0 + s * k_sigma.eval(s));
        num / (d * denom.eval(s))
    };
    let excluded: Vec<Complex64> = k_trsigma.poles().iter().copied().filter(|p| p.norm() != 0.0).collect();
    let magnitude = |s: Complex64| {
        let num = bulk.abs() * (k_sigma.eval(s).norm() + k_trsigma.eval(s).norm())
            + k_treps.eval(s).norm() * (1.0 + s * k_sigma.eval(s)).norm();
        num / (d * denom.eval(s).norm())
    };
    let out = assemble_from_candidates(&eval, &magnitude, candidates, &excluded, 0.0)?;
    verify_identity(&out, &eval, &magnitude)?;
    Ok(out)
}

/// `g(s) = 1 + s k̂(s) = c₀ + c₁ s + Σ ρ_j / (s − p_j)` with `ρ_j = r_j p_j`.
struct RelaxationDenominator {
    c0: f64,
    c1: f64,
    poles: Vec<Complex64>,
    rho: Vec<Complex64>,
}

impl RelaxationDenominator {
    fn new(k: &RationalLaplace) -> Result<Self> {
        let mut c0 = Complex64::new(1.0, 0.0);
        let mut poles = Vec::new();
        let mut rho = Vec::new();
        for (p, r) in k.poles.iter().zip(&k.residues) {
            c0 += r;
            if p.norm() != 0.0 {
                poles.push(*p);
                rho.push(r * p);
            }
        }
        if poles.len() + 1 > MAX_REDUCED_DEGREE {
            return Err(Error::invalid(format!(
                "reduction degree exceeds {MAX_REDUCED_DEGREE}"
            )));
        }
        Ok(RelaxationDenominator {
            c0: c0.re,
            c1: k.constant,
            poles,
            rho,
        })
    }

    fn eval(&self, s: Complex64) -> Complex64 {
        let mut acc = Complex64::new(self.c0, 0.0) + self.c1 * s;
        for (p, r) in self.poles.iter().zip(&self.rho) {
            acc += r / (s - p);
        }
        acc
    }

    fn derivative(&self, s: Complex64) -> Complex64 {
        let mut acc = Complex64::new(self.c1, 0.0);
        for (p, r) in self.poles.iter().zip(&self.rho) {
            let d = s - p;
            acc -= r / (d * d);
        }
        acc
    }

    fn at_infinity(&self) -> f64 {
        self.c0
    }

    /// Zeros from an arrowhead eigenproblem, polished by Newton steps.
    fn zeros(&self) -> Result<Vec<Complex64>> {
        let m = self.poles.len();
        let mut raw: Vec<Complex64> = if self.c1 != 0.0 {
            // [diag(p) 1; −ρᵀ/c₁ −c₀/c₁]
            let mut a = DMatrix::<Complex64>::zeros(m + 1, m + 1);
            for j in 0..m {
                a[(j, j)] = self.poles[j];
                a[(j, m)] = Complex64::new(1.0, 0.0);
                a[(m, j)] = -self.rho[j] / self.c1;
            }
            a[(m, m)] = Complex64::new(-self.c0 / self.c1, 0.0);
            complex_eigenvalues(a)?
        } else {
            if m == 0 {
                return Ok(Vec::new());
            }
            let scale = 1.0 + self.rho.iter().zip(&self.poles).map(|(r, p)| (r / p).norm()).sum::<f64>();
            if self.c0.abs() <= 1e-13 * scale {
                return Err(Error::IllConditioned(scale / self.c0.abs().max(f64::MIN_POSITIVE)));
            }
            // diag(p) − ρ 1ᵀ / c₀
            let mut a = DMatrix::<Complex64>::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    a[(i, j)] = -self.rho[i] / self.c0;
                }
                a[(i, i)] += self.poles[i];
            }
            complex_eigenvalues(a)?
        };
        for z in raw.iter_mut() {
            for _ in 0..6 {
                let g = self.eval(*z);
                let dg = self.derivative(*z);
                if dg.norm() == 0.0 {
                    break;
                }
                let step = g / dg;
                let next = *z - step;
                if self.eval(next).norm() < g.norm() {
                    *z = next;
                } else {
                    break;
                }
            }
            if z.im.abs() <= 1e-12 * z.norm() {
                z.im = 0.0;
            }
        }
        for z in &raw {
            if z.re >= 0.0 {
                return Err(Error::UnstablePole { re: z.re, im: z.im });
            }
        }
        Ok(raw)
    }
}

fn complex_eigenvalues(a: DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    if a.iter().all(|z| z.im == 0.0) {
        let re = a.map(|z| z.re);
        return Ok(re.complex_eigenvalues().iter().copied().collect());
    }
    a.eigenvalues()
        .map(|v| v.iter().copied().collect())
        .ok_or_else(|| Error::Eigen("complex Schur decomposition failed".into()))
}

/// Builds `c + Σ r_j/(s − p_j)` for a function known to be rational with
/// simple poles inside `candidates`; residues come from trapezoidal contour
/// integrals on small circles, which converge geometrically. Candidates whose
/// residue cancels to round-off are dropped.
fn assemble_from_candidates(
    eval: &dyn Fn(Complex64) -> Complex64,
    magnitude: &dyn Fn(Complex64) -> f64,
    candidates: Vec<Complex64>,
    excluded: &[Complex64],
    constant: f64,
) -> Result<RationalLaplace> {
    let mut pts: Vec<Complex64> = Vec::new();
    for c in candidates {
        let tol = 1e-12 * c.norm().max(1e-300);
        if excluded.iter().any(|e| (e - c).norm() <= tol) {
            continue;
        }
        if pts.iter().any(|p| (p - c).norm() <= tol) {
            continue;
        }
        pts.push(c);
    }
    if pts.len() > MAX_REDUCED_DEGREE {
        return Err(Error::invalid(format!(
            "reduction degree {} exceeds {MAX_REDUCED_DEGREE}",
            pts.len()
        )));
    }
    let mut poles = Vec::new();
    let mut residues = Vec::new();
    for (i, &p) in pts.iter().enumerate() {
        let nearest = pts
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| (q - p).norm())
            .chain(excluded.iter().map(|q| (q - p).norm()))
            .fold(f64::INFINITY, f64::min);
        let radius = if nearest.is_finite() {
            0.25 * nearest
        } else {
            0.25 * p.norm().max(1.0)
        };
        let n = 64;
        let mut res = Complex64::new(0.0, 0.0);
        let mut second = Complex64::new(0.0, 0.0);
        let mut local: f64 = 0.0;
        for k in 0..n {
            let e = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n as f64);
            let v = eval(p + radius * e);
            local = local.max(v.norm().max(magnitude(p + radius * e)) * radius);
            res += v * e;
            second += v * e * e;
        }
        res *= radius / n as f64;
        second *= radius * radius / n as f64;
        if !(res.re.is_finite() && res.im.is_finite()) {
            return Err(Error::IllConditioned(f64::INFINITY));
        }
        if res.norm() <= 1e-10 * local {
            continue;
        }
        if second.norm() > 1e-6 * res.norm() * radius.max(1.0) && second.norm() > 1e-9 * local * radius {
            // Laurent coefficient of (s − p)^{-2} present: not a simple pole
            return Err(Error::IllConditioned(second.norm() / res.norm()));
        }
        let mut r = res;
        if p.im == 0.0 {
            r.im = 0.0;
        }
        poles.push(p);
        residues.push(r);
    }
    RationalLaplace::new(poles, residues, constant)
}

/// Compares against the defining expression at probe points; `magnitude`
/// bounds the size of the terms that cancel in it.
fn verify_identity(
    out: &RationalLaplace,
    eval: &dyn Fn(Complex64) -> Complex64,
    magnitude: &dyn Fn(Complex64) -> f64,
) -> Result<()> {
    let mut worst: f64 = 0.0;
    for s in log_space(1e-2, 1e2, 17) {
        for z in [Complex64::new(s, 0.0), Complex64::new(s, s)] {
            let want = eval(z);
            let got = out.eval(z);
            let scale = want.norm().max(1e-9 * magnitude(z)).max(1e-300);
            worst = worst.max((got - want).norm() / scale);
        }
    }
    if worst > 1e-6 {
        return Err(Error::IllConditioned(worst));
    }
    Ok(())
}

impl RationalLaplace {
    /// Newton-polished zero set is an internal detail; exposed for tests.
    #[doc(hidden)]
    pub fn relaxation_zeros(&self) -> Result<Vec<Complex64>> {
        RelaxationDenominator::new(self)?.zeros()
    }

    #[doc(hidden)]
    pub fn derivative_at(&self, s: Complex64) -> Complex64 {
        self.derivative(s)
    }
}

/// Outcome of reducing `(k_σ, k_ε, k_trε)` to two strain-rate kernels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReductionReport {
    pub dev: RationalLaplace,
    pub trace: RationalLaplace,
    /// worst relative residual of `k̃ (1 + s k̂_σ) = k̂ − c k̂_σ` over the
    /// sample points, for `(dev, trace)`
    pub identity_error: (f64, f64),
    /// `max |u₁ − u₂| / max |u₁|` between the three-kernel and the reduced
    /// scalar oscillator, for `(dev, trace)`
    pub ode_error: (f64, f64),
}

/// Time grid and load of the scalar oscillator comparison.
pub struct ReductionOde<'a> {
    pub load: &'a dyn Fn(f64) -> f64,
    pub t_final: f64,
    pub n_steps: usize,
    pub substeps: usize,
}

/// Reduces the kernels and checks the result twice: pointwise in the
/// Laplace domain at `s_points`, and by integrating the scalar oscillator
/// with the original law and with the reduced one (stiffness `2μ` for the
/// deviatoric pair, `λ` for the trace pair).
pub fn check_reduction(
    k_sigma: &SoeKernel,
    k_eps: &SoeKernel,
    k_treps: &SoeKernel,
    mu: f64,
    lambda: f64,
    s_points: &[f64],
    ode: &ReductionOde<'_>,
) -> Result<ReductionReport> {
    let ks = RationalLaplace::from_soe(k_sigma);
    let (dev, trace) = reduce_kernels(&ks, &RationalLaplace::from_soe(k_eps), &RationalLaplace::from_soe(k_treps), mu, lambda)?;
    let identity = |red: &RationalLaplace, k: &SoeKernel, c: f64| {
        s_points.iter().fold(0.0f64, |worst, &s| {
            let z = Complex64::new(s, 0.0);
            let g = 1.0 + z * ks.eval(z);
            let want = k.laplace(z) - c * ks.eval(z);
            let scale = (k.laplace(z).norm() + c.abs() * ks.eval(z).norm()).max(1e-300);
            worst.max((red.eval(z) * g - want).norm() / scale)
        })
    };
    let ode_gap = |red: &RationalLaplace, k: &SoeKernel, c: f64| -> Result<f64> {
        let u1 = integrate_scalar_three_kernel(k_sigma, k, c, ode.load, ode.t_final, ode.n_steps, ode.substeps);
        let u2 = integrate_scalar_two_kernel(&red.to_soe(0.0)?, c, ode.load, ode.t_final, ode.n_steps, ode.substeps);
        let scale = u1.iter().fold(0.0f64, |m, u| m.max(u.abs())).max(1e-300);
        Ok(u1.iter().zip(&u2).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale)
    };
    Ok(ReductionReport {
        identity_error: (identity(&dev, k_eps, 2.0 * mu), identity(&trace, k_treps, lambda)),
        ode_error: (ode_gap(&dev, k_eps, 2.0 * mu)?, ode_gap(&trace, k_treps, lambda)?),
        dev,
        trace,
    })
}

/// Scalar analogue of the three-kernel law driving a unit-mass oscillator:
/// `u'' + σ = f`, `σ + (k_σ * σ)' = c u + k * u'`, zero initial data.
/// Returns `u` at `n_steps + 1` uniform times on `[0, t_final]` (classical
/// RK4 with `substeps` internal steps per output step).
pub fn integrate_scalar_three_kernel(
    k_sigma: &SoeKernel,
    k: &SoeKernel,
    stiffness: f64,
    load: &dyn Fn(f64) -> f64,
    t_final: f64,
    n_steps: usize,
    substeps: usize,
) -> Vec<f64> {
    let (a, b): (Vec<f64>, Vec<f64>) = k_sigma.modes().unzip();
    let (w, l): (Vec<f64>, Vec<f64>) = k.modes().unzip();
    let (na, nw) = (a.len(), w.len());
    let denom = 1.0 + a.iter().sum::<f64>();
    // state: [u, v, q_1..q_nw, p_1..p_na]
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (u, v) = (y[0], y[1]);
        let q = &y[2..2 + nw];
        let p = &y[2 + nw..];
        let mut sigma = stiffness * u;
        sigma += w.iter().zip(q).map(|(w, q)| w * q).sum::<f64>();
        sigma += (0..na).map(|j| a[j] * b[j] * p[j]).sum::<f64>();
        sigma /= denom;
        dy[0] = v;
        dy[1] = load(t) - sigma;
        for i in 0..nw {
            dy[2 + i] = v - l[i] * q[i];
        }
        for j in 0..na {
            dy[2 + nw + j] = sigma - b[j] * p[j];
        }
    };
    rk4(&rhs, 2 + nw + na, t_final, n_steps, substeps)
}

/// Scalar two-kernel law: `u'' + c u + k * u' = f`, zero initial data.
pub fn integrate_scalar_two_kernel(
    k: &SoeKernel,
    stiffness: f64,
    load: &dyn Fn(f64) -> f64,
    t_final: f64,
    n_steps: usize,
    substeps: usize,
) -> Vec<f64> {
    let (w, l): (Vec<f64>, Vec<f64>) = k.modes().unzip();
    let nw = w.len();
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (u, v) = (y[0], y[1]);
        let sigma = stiffness * u + (0..nw).map(|i| w[i] * y[2 + i]).sum::<f64>();
        dy[0] = v;
        dy[1] = load(t) - sigma;
        for i in 0..nw {
            dy[2 + i] = v - l[i] * y[2 + i];
        }
    };
    rk4(&rhs, 2 + nw, t_final, n_steps, substeps)
}

fn rk4(
    rhs: &dyn Fn(f64, &[f64], &mut [f64]),
    dim: usize,
    t_final: f64,
    n_steps: usize,
    substeps: usize,
) -> Vec<f64> {
    let h = t_final / (n_steps * substeps) as f64;
    let mut y = vec![0.0; dim];
    let mut out = vec![0.0; n_steps + 1];
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut step = 0usize;
    for (n, slot) in out.iter_mut().enumerate().skip(1) {
        for _ in 0..substeps {
            let t = step as f64 * h;
            rhs(t, &y, &mut k1);
            for i in 0..dim {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            rhs(t + 0.5 * h, &tmp, &mut k2);
            for i in 0..dim {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            rhs(t + 0.5 * h, &tmp, &mut k3);
            for i in 0..dim {
                tmp[i] = y[i] + h * k3[i];
            }
            rhs(t + h, &tmp, &mut k4);
            for i in 0..dim {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            step += 1;
        }
        debug_assert_eq!(step, n * substeps);
        *slot = y[0];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn samples(f: impl Fn(f64) -> f64, n: usize) -> Vec<(f64, f64)> {
        log_space(1e-3, 1e3, n).into_iter().map(|s| (s, f(s))).collect()
    }

    #[test]
    fn aaa_recovers_first_order_rational() {
        let fit = aaa_fit(&samples(|s| 1.0 / (s + 1.0), 100), 1e-12, 20).unwrap();
        assert_eq!(fit.support.len(), 2);
        assert!(fit.max_rel_error < 1e-13, "{}", fit.max_rel_error);
        let r = to_pole_residue(&fit).unwrap();
        assert_eq!(r.degree(), 1);
        assert_relative_eq!(r.poles()[0].re, -1.0, epsilon = 1e-12);
        assert_relative_eq!(r.residues()[0].re, 1.0, epsilon = 1e-12);
        assert!(r.constant().abs() < 1e-12);
    }

    #[test]
    fn aaa_constant_is_degree_zero() {
        let fit = aaa_fit(&samples(|_| 3.5, 50), 1e-12, 20).unwrap();
        assert_eq!(fit.degree(), 0);
        assert!(fit.max_rel_error < 1e-15);
        let r = to_pole_residue(&fit).unwrap();
        assert_eq!(r.degree(), 0);
        assert_eq!(r.constant(), 3.5);
    }

    #[test]
    fn aaa_partial_fractions_with_constant() {
        let fit = aaa_fit(&samples(|s| (s + 2.0) / (s + 1.0), 100), 1e-13, 10).unwrap();
        let r = to_pole_residue(&fit).unwrap();
        assert_eq!(r.degree(), 1);
        assert_relative_eq!(r.constant(), 1.0, epsilon = 1e-11);
        assert_relative_eq!(r.poles()[0].re, -1.0, epsilon = 1e-11);
        assert_relative_eq!(r.residues()[0].re, 1.0, epsilon = 1e-11);
    }

    #[test]
    fn aaa_rejects_degenerate_input() {
        assert!(aaa_fit(&[(1.0, 1.0)], 1e-9, 5).is_err());
        assert!(aaa_fit(&[(1.0, 1.0), (1.0, 2.0)], 1e-9, 5).is_err());
        assert!(aaa_fit(&[(-1.0, 1.0), (1.0, 2.0)], 1e-9, 5).is_err());
        assert!(aaa_fit(&[(1.0, 1.0), (2.0, 2.0)], 0.0, 5).is_err());
    }

    #[test]
    fn fractional_order_one_is_constant_kernel() {
        let k = soe_from_fractional(1.0, DEFAULT_S_RANGE, DEFAULT_S_SAMPLES, 1e-12, 22).unwrap();
        assert_eq!(k.num_modes(), 1);
        assert_relative_eq!(k.weights()[0], 1.0, epsilon = 1e-10);
        assert_eq!(k.rates()[0], 0.0);
    }

    #[test]
    fn rational_json_layout() {
        let r = RationalLaplace::new(vec![c(-1.0)], vec![c(2.0)], 0.5).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(
            s,
            r#"{"poles_re":[-1.0],"poles_im":[0.0],"residues_re":[2.0],"residues_im":[0.0],"constant":0.5}"#
        );
        let back: RationalLaplace = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn unpaired_complex_pole_is_rejected() {
        let p = Complex64::new(-1.0, 2.0);
        assert!(RationalLaplace::new(vec![p], vec![c(1.0)], 0.0).is_err());
        let ok = RationalLaplace::new(vec![p, p.conj()], vec![Complex64::new(1.0, 0.5), Complex64::new(1.0, -0.5)], 0.0);
        assert!(ok.is_ok());
        assert!(matches!(ok.unwrap().to_soe(0.0), Err(Error::ComplexPole { .. })));
    }

    #[test]
    fn to_soe_merges_near_real_pairs_and_rejects_growth() {
        let p = Complex64::new(-2.0, 1e-10);
        let r = RationalLaplace::new(vec![p, p.conj()], vec![c(0.75), c(0.75)], 0.0).unwrap();
        let k = r.to_soe(0.0).unwrap();
        assert_eq!(k.num_modes(), 1);
        assert_eq!(k.weights()[0], 1.5);
        assert_eq!(k.rates()[0], 2.0);
        let bad = RationalLaplace::new(vec![c(0.5)], vec![c(1.0)], 0.0).unwrap();
        assert!(matches!(bad.to_soe(0.0), Err(Error::UnstablePole { .. })));
        let delta = RationalLaplace::new(vec![], vec![], 1.0).unwrap();
        assert!(delta.to_soe(1e-12).is_err());
    }

    #[test]
    fn reduction_with_zero_relaxation_is_identity() {
        let ke = RationalLaplace::from_soe(&SoeKernel::new(vec![1.0, 2.0], vec![0.5, 3.0]).unwrap());
        let kt = RationalLaplace::from_soe(&SoeKernel::new(vec![0.3], vec![1.5]).unwrap());
        let (a, b) = reduce_kernels(&RationalLaplace::zero(), &ke, &kt, 1.0, 0.5).unwrap();
        assert_eq!(a, ke);
        assert_eq!(b, kt);
    }

    #[test]
    fn proportional_kernels_cancel() {
        let mu = 1.3;
        let lambda = 0.7;
        let ks = SoeKernel::new(vec![0.4, 0.2], vec![1.0, 5.0]).unwrap();
        let ke = SoeKernel::new(vec![0.4 * 2.0 * mu, 0.2 * 2.0 * mu], vec![1.0, 5.0]).unwrap();
        let kt = SoeKernel::new(vec![0.4 * lambda, 0.2 * lambda], vec![1.0, 5.0]).unwrap();
        let (a, b) = reduce_kernels(
            &RationalLaplace::from_soe(&ks),
            &RationalLaplace::from_soe(&ke),
            &RationalLaplace::from_soe(&kt),
            mu,
            lambda,
        )
        .unwrap();
        assert!(a.is_zero() && a.degree() == 0, "{a:?}");
        assert!(b.is_zero() && b.degree() == 0, "{b:?}");
    }

    #[test]
    fn reduction_identity_single_modes() {
        let ks = RationalLaplace::new(vec![c(-1.0)], vec![c(1.0)], 0.0).unwrap();
        let ke = RationalLaplace::new(vec![c(-2.0)], vec![c(2.0)], 0.0).unwrap();
        let (mu, lambda) = (1.0, 0.5);
        let (red, _) = reduce_kernels(&ks, &ke, &RationalLaplace::zero(), mu, lambda).unwrap();
        let mut seed = 7u64;
        for _ in 0..20 {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let s = c(0.01 + 10.0 * (seed >> 11) as f64 / (1u64 << 53) as f64);
            let lhs = red.eval(s) * (1.0 + s * ks.eval(s));
            let rhs = ke.eval(s) - 2.0 * mu * ks.eval(s);
            assert!((lhs - rhs).norm() < 1e-10);
        }
        // 1 + s/(s+1) = (2s+1)/(s+1) vanishes at s = −1/2
        assert!(red.poles().iter().any(|p| (p.re + 0.5).abs() < 1e-12));
    }

    #[test]
    fn relaxation_with_constant_term() {
        // k̂_σ = 0.1 + 1/(s+2): g(s) = 1 + 0.1 s + s/(s+2)
        let ks = RationalLaplace::new(vec![c(-2.0)], vec![c(1.0)], 0.1).unwrap();
        let k = RationalLaplace::new(vec![c(-3.0)], vec![c(1.5)], 0.0).unwrap();
        let red = fold_relaxation(&ks, &k, 0.8).unwrap();
        for s in [0.1, 1.0, 7.0] {
            let s = Complex64::new(s, 0.3 * s);
            let lhs = red.eval(s) * (1.0 + s * ks.eval(s));
            let rhs = k.eval(s) - 0.8 * ks.eval(s);
            assert!((lhs - rhs).norm() < 1e-10 * rhs.norm());
        }
    }

    #[test]
    fn trace_intermediate_satisfies_definition() {
        let ks = RationalLaplace::from_soe(&SoeKernel::new(vec![0.3, 0.1], vec![0.5, 4.0]).unwrap());
        let kts = RationalLaplace::from_soe(&SoeKernel::new(vec![0.2], vec![2.0]).unwrap());
        let kte = RationalLaplace::from_soe(&SoeKernel::new(vec![0.7, 0.4], vec![1.0, 8.0]).unwrap());
        let (mu, lambda, d) = (1.2, 0.9, 3usize);
        let out = reduce_trace_intermediate(&ks, &kts, &kte, mu, lambda, d).unwrap();
        for s in log_space(0.05, 50.0, 25) {
            let s = c(s);
            let lhs = out.eval(s) * 3.0 * (1.0 + s * kts.eval(s));
            let rhs = (2.0 * mu + 3.0 * lambda) * (ks.eval(s) - kts.eval(s)) + kte.eval(s) * (1.0 + s * ks.eval(s));
            assert!((lhs - rhs).norm() <= 1e-9 * rhs.norm().max(1e-12), "{lhs} vs {rhs}");
        }
    }
}
