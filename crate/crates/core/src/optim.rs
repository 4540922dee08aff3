//! Dense BFGS with a backtracking Armijo line search.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when `‖∇f‖∞ ≤ grad_tol · max(1, |f|)`.
    pub grad_tol: f64,
    /// Stop as soon as `f ≤ target`.
    pub target: Option<f64>,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-8,
            target: None,
            c1: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    TargetReached,
    IterationLimit,
    /// The objective stopped changing at machine precision.
    Stagnation,
    /// No step satisfied the sufficient-decrease condition, even along the
    /// steepest-descent direction.
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl BfgsResult {
    /// True when the run ended on a line-search failure.
    pub fn degraded(&self) -> bool {
        self.termination == Termination::LineSearchFailure
    }
}

/// Minimizes `objective`, which returns the value and gradient at a point.
///
/// Every accepted iterate decreases the objective, so the returned point is
/// never worse than `x0`. Errors from the objective are propagated.
pub fn bfgs<F>(mut objective: F, x0: DVector<f64>, opts: &BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = objective(&x)?;
    let mut evaluations = 1;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh_h = true;
    let mut iterations = 0;
    let mut stagnant = 0;

    let termination = loop {
        let gi = g.amax();
        if opts.target.is_some_and(|t| f <= t) {
            break Termination::TargetReached;
        }
        if n == 0 || gi <= opts.grad_tol * f.abs().max(1.0) {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break Termination::IterationLimit;
        }

        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h.fill_with_identity();
            fresh_h = true;
            d = -g.clone();
            slope = g.dot(&d);
        }
        if fresh_h {
            // Unit steps along a raw gradient can be wildly out of scale.
            let scale = 1.0 / d.amax().max(1.0);
            d *= scale;
            slope *= scale;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial = &x + &d * t;
            let (ft, gt) = objective(&trial)?;
            evaluations += 1;
            if ft.is_finite() && ft <= f + opts.c1 * t * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if fresh_h {
                break Termination::LineSearchFailure;
            }
            h.fill_with_identity();
            fresh_h = true;
            continue;
        };
        iterations += 1;

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh_h {
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ, expanded.
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh_h = false;
        }

        stagnant = if (f - f_new).abs() <= 1e-15 * f.abs() { stagnant + 1 } else { 0 };
        x = x_new;
        f = f_new;
        g = g_new;
        if stagnant >= 5 {
            break Termination::Stagnation;
        }
    };

    Ok(BfgsResult {
        grad_inf_norm: g.amax(),
        x,
        f,
        iterations,
        evaluations,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let obj = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            Ok((f, g))
        };
        let r = bfgs(obj, DVector::from_vec(vec![-1.2, 1.0]), &BfgsOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn zero_start_returns_immediately() {
        let obj = |x: &DVector<f64>| Ok((x.norm_squared(), x * 2.0));
        let opts = BfgsOptions {
            target: Some(1e-6),
            ..Default::default()
        };
        let r = bfgs(obj, DVector::zeros(3), &opts).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.f, 0.0);
    }

    #[test]
    fn quadratic_descends() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let obj = |x: &DVector<f64>| Ok((0.5 * x.dot(&(&a * x)) - x[0], &a * x - DVector::from_vec(vec![1.0, 0.0])));
        let r = bfgs(obj, DVector::from_vec(vec![4.0, -3.0]), &BfgsOptions::default()).unwrap();
        assert!((r.x[0] - 0.4).abs() < 1e-8 && (r.x[1] + 0.2).abs() < 1e-8);
    }
}
