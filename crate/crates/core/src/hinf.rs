//! H∞ norm computation and singular-value sweeps.
//!
//! The norm uses the level-set iteration on the Hamiltonian matrix
//! associated with `γ`: imaginary-axis eigenvalues of that matrix are exactly
//! the frequencies where some singular value crosses `γ`. Each iteration
//! raises a lower bound by evaluating `σ_max` at midpoints between crossings
//! until the Hamiltonian at `(1 + 2·rel_tol)` times the bound has no
//! imaginary-axis eigenvalues, which certifies the upper bound.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, logspace, sigma_max, singular_values, spectral_norm, CMatrix, I};
use crate::lti::{eval_transfer, lower_lft, FeedbackSign, PlantResponse};
use crate::statespace::StateSpace;

pub use crate::linalg::spectral_abscissa;

/// Outcome of an H∞ norm computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HinfResult {
    pub norm: f64,
    pub peak_omega: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl HinfResult {
    /// Result for an unstable or ill-posed system. The norm is infinite and
    /// serializes as `null`.
    pub fn unbounded() -> Self {
        Self {
            norm: f64::INFINITY,
            peak_omega: f64::NAN,
            iterations: 0,
            converged: true,
        }
    }
}

/// Anything that can be evaluated on the imaginary axis.
pub trait FrequencyResponse: Sync {
    fn response(&self, omega: f64) -> Result<CMatrix>;
}

impl FrequencyResponse for StateSpace {
    fn response(&self, omega: f64) -> Result<CMatrix> {
        eval_transfer(self, I * omega)
    }
}

/// The closed loop `P ⋆ K` evaluated through the plant blocks.
pub struct ClosedLoopResponse<'a> {
    pub plant: &'a dyn PlantResponse,
    pub controller: &'a StateSpace,
    pub sign: FeedbackSign,
}

impl FrequencyResponse for ClosedLoopResponse<'_> {
    fn response(&self, omega: f64) -> Result<CMatrix> {
        let pe: Arc<_> = self.plant.evaluate(omega)?;
        let k = eval_transfer(self.controller, I * omega)?;
        lower_lft(&pe, &k, self.sign)
    }
}

/// One row of a singular-value sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaRow {
    pub omega: f64,
    /// Descending.
    pub sigma: Vec<f64>,
}

/// Full singular-value vectors at every grid frequency, evaluated in
/// parallel.
pub fn sigma_sweep<R: FrequencyResponse + ?Sized>(system: &R, grid: &[f64]) -> Result<Vec<SigmaRow>> {
    if grid.is_empty() {
        return Err(Error::Dimension("frequency grid is empty".into()));
    }
    grid.par_iter()
        .map(|&omega| {
            Ok(SigmaRow {
                omega,
                sigma: singular_values(&system.response(omega)?),
            })
        })
        .collect()
}

fn sigma_at(ss: &StateSpace, omega: f64) -> Result<f64> {
    Ok(sigma_max(&eval_transfer(ss, I * omega)?))
}

/// Positive imaginary parts of the (numerically) purely imaginary
/// eigenvalues of the `γ`-Hamiltonian, ascending.
fn crossing_frequencies(ss: &StateSpace, gamma: f64) -> Result<Vec<f64>> {
    let (a, b, c, d) = (ss.a(), ss.b(), ss.c(), ss.d());
    let n = a.nrows();
    let m = b.ncols();
    let r = DMatrix::identity(m, m) * (gamma * gamma) - d.transpose() * d;
    let r_inv = r
        .cholesky()
        .ok_or_else(|| Error::Certificate("γ²I - DᵀD is not positive definite".into()))?
        .inverse();
    let ah = a + b * &r_inv * d.transpose() * c;
    let p = c.nrows();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&ah);
    h.view_mut((0, n), (n, n)).copy_from(&(b * &r_inv * b.transpose()));
    let mid = DMatrix::identity(p, p) + d * &r_inv * d.transpose();
    h.view_mut((n, 0), (n, n)).copy_from(&(-(c.transpose() * mid * c)));
    h.view_mut((n, n), (n, n)).copy_from(&(-ah.transpose()));
    let scale = spectral_norm(&h).max(1.0);
    let mut out: Vec<f64> = eigenvalues(&h)?
        .into_iter()
        .filter(|z| z.im >= 0.0 && z.re.abs() <= 1e-7 * scale.max(z.norm()))
        .map(|z| z.im)
        .collect();
    out.sort_by(|x, y| x.total_cmp(y));
    out.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
    Ok(out)
}

/// H∞ norm of a stable realization to relative accuracy `rel_tol`.
pub fn hinf_norm(ss: &StateSpace, rel_tol: f64) -> Result<HinfResult> {
    let rel_tol = rel_tol.max(1e-14);
    let d_norm = spectral_norm(ss.d());
    if ss.states() == 0 {
        return Ok(HinfResult {
            norm: d_norm,
            peak_omega: f64::INFINITY,
            iterations: 0,
            converged: true,
        });
    }
    let abscissa = spectral_abscissa(ss.a())?;
    if !(abscissa < 0.0) {
        return Err(Error::Unstable { abscissa });
    }
    // Initial lower bound: zero frequency, the pole frequencies and infinity.
    let mut best = (d_norm, f64::INFINITY);
    let mut candidates = vec![0.0];
    for z in eigenvalues(ss.a())? {
        candidates.push(z.im.abs());
        candidates.push(z.norm());
    }
    for w in candidates {
        let s = sigma_at(ss, w)?;
        if s > best.0 {
            best = (s, w);
        }
    }
    if best.0 == 0.0 {
        return Ok(HinfResult {
            norm: 0.0,
            peak_omega: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 100 {
        iterations += 1;
        let gamma = (1.0 + rel_tol) * best.0;
        let mut crossings = crossing_frequencies(ss, gamma)?;
        if crossings.is_empty() {
            converged = true;
            break;
        }
        if crossings[0] > 0.0 {
            crossings.insert(0, 0.0);
        }
        let mids: Vec<f64> = crossings.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let mut improved = false;
        for (w, s) in mids.iter().zip(mids.iter().map(|&w| sigma_at(ss, w))) {
            let s = s?;
            if s > best.0 {
                best = (s, *w);
                improved = true;
            }
        }
        if !improved {
            // Crossings reported by rounding noise near a flat peak; the
            // lower bound is already within the eigenvalue accuracy.
            converged = crossings.len() <= 2;
            break;
        }
    }
    // The certified bound is reached; polish the peak location locally.
    if best.1.is_finite() && best.1 > 0.0 {
        let (w, v, _) = golden_max(ss, (best.1 / 1.02).ln(), (best.1 * 1.02).ln())?;
        if v > best.0 {
            best = (v, w);
        }
    }
    Ok(HinfResult {
        norm: best.0,
        peak_omega: best.1,
        iterations,
        converged,
    })
}

/// Largest `σ_max` over a log-spaced grid on `[lo, hi]`, with the highest
/// local maxima refined by golden-section search between their grid
/// neighbours.
///
/// This is a lower bound on the H∞ norm; it is the validation route when
/// the dense Hamiltonian is too large to factor.
pub fn grid_peak<R: FrequencyResponse + ?Sized>(system: &R, lo: f64, hi: f64, count: usize) -> Result<HinfResult> {
    let grid = logspace(lo, hi, count.max(3));
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&w| system.response(w).map(|m| sigma_max(&m)))
        .collect::<Result<_>>()?;
    let n = grid.len();
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best = (f64::NEG_INFINITY, grid[0]);
    let mut iterations = 0;
    for i in 0..n {
        let left = if i > 0 { values[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < n { values[i + 1] } else { f64::NEG_INFINITY };
        if values[i] > best.0 {
            best = (values[i], grid[i]);
        }
        // Only peaks within 5% of the grid maximum can overtake it.
        let candidate = values[i] >= 0.95 * top && values[i] >= left && values[i] >= right;
        if candidate && i > 0 && i + 1 < n {
            let (w, s, it) = golden_max(system, grid[i - 1].ln(), grid[i + 1].ln())?;
            iterations += it;
            if s > best.0 {
                best = (s, w);
            }
        }
    }
    Ok(HinfResult {
        norm: best.0,
        peak_omega: best.1,
        iterations,
        converged: false,
    })
}

fn golden_max<R: FrequencyResponse + ?Sized>(system: &R, mut a: f64, mut b: f64) -> Result<(f64, f64, usize)> {
    let f = |x: f64| system.response(x.exp()).map(|m| sigma_max(&m));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    let mut it = 0;
    while (b - a) > 1e-10 * (1.0 + a.abs()) && it < 200 {
        it += 1;
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 >= f2 { (x1.exp(), f1, it) } else { (x2.exp(), f2, it) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ss(a: &[f64], b: &[f64], c: &[f64], d: &[f64], n: usize, m: usize, p: usize) -> StateSpace {
        StateSpace::new(
            DMatrix::from_row_slice(n, n, a),
            DMatrix::from_row_slice(n, m, b),
            DMatrix::from_row_slice(p, n, c),
            DMatrix::from_row_slice(p, m, d),
        )
        .unwrap()
    }

    #[test]
    fn first_order_lag_sweep() {
        let g = ss(&[-1.0], &[1.0], &[1.0], &[0.0], 1, 1, 1);
        let rows = sigma_sweep(&g, &[0.0, 1.0, 10.0]).unwrap();
        let expect = [1.0, 0.5f64.sqrt(), 1.0 / 101f64.sqrt()];
        for (r, e) in rows.iter().zip(expect) {
            assert!((r.sigma[0] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn static_gain_sweep() {
        let g = StateSpace::static_gain(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]));
        for r in sigma_sweep(&g, &[0.0, 0.3, 7.0]).unwrap() {
            assert!((r.sigma[0] - 3.0).abs() < 1e-15 && (r.sigma[1] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn first_order_lag_norm() {
        let g = ss(&[-1.0], &[1.0], &[1.0], &[0.0], 1, 1, 1);
        let r = hinf_norm(&g, 1e-6).unwrap();
        assert!((r.norm - 1.0).abs() < 1e-6);
        assert_eq!(r.peak_omega, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn lightly_damped_resonance() {
        let g = ss(&[0.0, 1.0, -1.0, -0.1], &[0.0, 1.0], &[1.0, 0.0], &[0.0], 2, 1, 1);
        let r = hinf_norm(&g, 1e-6).unwrap();
        // |G(iω)|⁻² = (1-ω²)² + 0.01ω², minimized at ω² = 1 - 0.005.
        let w2: f64 = 0.995;
        let exact = 1.0 / ((1.0 - w2).powi(2) + 0.01 * w2).sqrt();
        assert!((r.norm - exact).abs() / exact < 1e-6);
        assert!((r.peak_omega - w2.sqrt()).abs() < 1e-2);
    }

    #[test]
    fn no_input_gives_feedthrough_norm() {
        let g = ss(&[-2.0], &[0.0], &[1.0], &[0.4], 1, 1, 1);
        assert!((hinf_norm(&g, 1e-8).unwrap().norm - 0.4).abs() < 1e-15);
    }

    #[test]
    fn unstable_rejected() {
        let g = ss(&[1.0], &[1.0], &[1.0], &[0.0], 1, 1, 1);
        assert!(matches!(hinf_norm(&g, 1e-6), Err(Error::Unstable { .. })));
    }

    #[test]
    fn abscissa_examples() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(spectral_abscissa(&rot).unwrap().abs() < 1e-15);
        assert_eq!(spectral_abscissa(&(-DMatrix::<f64>::identity(3, 3))).unwrap(), -1.0);
    }

    #[test]
    fn grid_peak_close_to_norm() {
        let g = ss(&[0.0, 1.0, -1.0, -0.1], &[0.0, 1.0], &[1.0, 0.0], &[0.0], 2, 1, 1);
        let exact = hinf_norm(&g, 1e-8).unwrap().norm;
        let approx = grid_peak(&g, 1e-2, 1e2, 200).unwrap().norm;
        assert!(approx <= exact * (1.0 + 1e-8) && approx >= exact * (1.0 - 1e-8));
    }
}
