//! Limited-memory BFGS with a strong Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, norm_inf};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub memory: usize,
    pub max_iters: usize,
    pub c1: f64,
    pub c2: f64,
    /// stop when `‖g‖∞ ≤ grad_tol`
    pub grad_tol: f64,
    /// objective evaluations allowed per line search
    pub max_line_search: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            memory: 10,
            max_iters: 14,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-12,
            max_line_search: 25,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::invalid(format!(
                "Wolfe constants need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if self.memory == 0 {
            return Err(Error::invalid("LBFGS memory must be at least 1"));
        }
        if self.max_line_search == 0 {
            return Err(Error::invalid("line search needs at least one trial"));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::invalid("gradient tolerance must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailure,
    /// the step no longer changes `x` or `f`
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub evaluations: usize,
    /// both Wolfe conditions held for the accepted step
    pub wolfe: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    /// `f` at the start and after every accepted iteration
    pub history: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    pub evaluations: usize,
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    /// directional derivative `gᵀp`
    d: f64,
}

/// Minimizes `f`. Evaluation errors inside a line search count as `f = ∞`
/// (the step is shortened); an error at `x0` is returned.
pub fn lbfgs_minimize<F>(mut f: F, x0: &[f64], settings: &OptimizerSettings) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    settings.validate()?;
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("objective is not finite at the initial point"));
    }
    let mut evaluations = 1;
    let mut history = vec![fx];
    let mut iterations = Vec::new();
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut termination = Termination::MaxIterations;

    for it in 0..settings.max_iters {
        if norm_inf(&g) <= settings.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut p = two_loop(&g, &pairs);
        let mut d0 = dot(&g, &p);
        if !(d0 < 0.0) {
            // not a descent direction: restart from steepest descent
            pairs.clear();
            p = g.iter().map(|v| -v).collect();
            d0 = -dot(&g, &g);
        }
        // without curvature pairs the first trial moves the largest
        // coordinate by one unit
        let alpha0 = if pairs.is_empty() { 1.0 / norm_inf(&p) } else { 1.0 };

        let mut evals = 0;
        let mut eval = |alpha: f64| -> Point {
            evals += 1;
            let mut xt = x.clone();
            axpy(alpha, &p, &mut xt);
            match f(&xt) {
                Ok((ft, gt)) if ft.is_finite() && gt.iter().all(|v| v.is_finite()) => {
                    let d = dot(&gt, &p);
                    Point { alpha, f: ft, g: gt, d }
                }
                _ => Point {
                    alpha,
                    f: f64::INFINITY,
                    g: Vec::new(),
                    d: f64::NAN,
                },
            }
        };
        let start = Point {
            alpha: 0.0,
            f: fx,
            g: g.clone(),
            d: d0,
        };
        let found = strong_wolfe(&mut eval, &start, alpha0, settings);
        evaluations += evals;
        let Some(next) = found else {
            termination = Termination::LineSearchFailure;
            break;
        };
        let wolfe = next.f <= fx + settings.c1 * next.alpha * d0 && next.d.abs() <= settings.c2 * d0.abs();
        let s: Vec<f64> = p.iter().map(|v| next.alpha * v).collect();
        let y: Vec<f64> = next.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let stalled = next.f >= fx && norm2(&s) <= f64::EPSILON * norm2(&x).max(1.0);
        axpy(1.0, &s, &mut x);
        fx = next.f;
        g = next.g;
        if sy > 1e-300 {
            pairs.push_back((s, y, 1.0 / sy));
            if pairs.len() > settings.memory {
                pairs.pop_front();
            }
        }
        history.push(fx);
        iterations.push(IterationRecord {
            iteration: it + 1,
            loss: fx,
            grad_norm: norm2(&g),
            step: next.alpha,
            evaluations: evals,
            wolfe,
        });
        if stalled {
            termination = Termination::Stalled;
            break;
        }
    }
    if termination == Termination::MaxIterations && norm_inf(&g) <= settings.grad_tol {
        termination = Termination::GradientTolerance;
    }
    Ok(LbfgsResult {
        x,
        f: fx,
        grad: g,
        history,
        iterations,
        termination,
        evaluations,
    })
}

/// `−H g` by the two-loop recursion with `H₀ = (sᵀy / yᵀy) I`.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        axpy(-a, y, &mut q);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        axpy(a - b, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Bracketing phase followed by zoom; `None` if no acceptable step was
/// found within the trial budget.
fn strong_wolfe(eval: &mut impl FnMut(f64) -> Point, start: &Point, alpha0: f64, s: &OptimizerSettings) -> Option<Point> {
    let (f0, d0) = (start.f, start.d);
    let armijo = |p: &Point| p.f <= f0 + s.c1 * p.alpha * d0;
    let curvature = |p: &Point| p.d.abs() <= -s.c2 * d0;
    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        g: start.g.clone(),
        d: d0,
    };
    let mut alpha = alpha0;
    let mut trials = 0;
    while trials < s.max_line_search {
        let cur = eval(alpha);
        trials += 1;
        if !cur.f.is_finite() {
            // infeasible trial: treat as overshoot
            return zoom(eval, start, prev, cur, s, trials);
        }
        if !armijo(&cur) || (trials > 1 && cur.f >= prev.f) {
            return zoom(eval, start, prev, cur, s, trials);
        }
        if curvature(&cur) {
            return Some(cur);
        }
        if cur.d >= 0.0 {
            return zoom(eval, start, cur, prev, s, trials);
        }
        prev = cur;
        alpha *= 2.0;
    }
    None
}

fn zoom(
    eval: &mut impl FnMut(f64) -> Point,
    start: &Point,
    mut lo: Point,
    mut hi: Point,
    s: &OptimizerSettings,
    mut trials: usize,
) -> Option<Point> {
    let (f0, d0) = (start.f, start.d);
    while trials < s.max_line_search {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        if b - a <= 1e-16 * b.max(1e-300) {
            break;
        }
        let mut alpha = if hi.f.is_finite() && hi.d.is_finite() {
            cubic_min(&lo, &hi)
        } else {
            f64::NAN
        };
        let margin = 0.1 * (b - a);
        if !(alpha.is_finite() && alpha > a + margin && alpha < b - margin) {
            alpha = 0.5 * (a + b);
        }
        let cur = eval(alpha);
        trials += 1;
        if !cur.f.is_finite() || cur.f > f0 + s.c1 * alpha * d0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.d.abs() <= -s.c2 * d0 {
                return Some(cur);
            }
            if cur.d * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // best point with sufficient decrease, even if curvature failed
    if lo.alpha > 0.0 && lo.f <= f0 + s.c1 * lo.alpha * d0 {
        return Some(lo);
    }
    None
}

/// Minimizer of the cubic interpolating `f` and `f'` at two points.
fn cubic_min(p: &Point, q: &Point) -> f64 {
    let d1 = p.d + q.d - 3.0 * (p.f - q.f) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.d * q.d;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (q.alpha - p.alpha).signum() * disc.sqrt();
    q.alpha - (q.alpha - p.alpha) * (q.d + d2 - d1) / (q.d - p.d + 2.0 * d2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_recovers_quadratic_minimum() {
        // f = (α − 0.3)², f' = 2(α − 0.3)
        let pt = |a: f64| Point {
            alpha: a,
            f: (a - 0.3) * (a - 0.3),
            g: vec![],
            d: 2.0 * (a - 0.3),
        };
        assert!((cubic_min(&pt(0.0), &pt(1.0)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn invalid_wolfe_constants_are_rejected() {
        let s = OptimizerSettings {
            c1: 0.9,
            c2: 0.5,
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }
}
