//! The sample-based loss and its gradient with respect to the controller
//! parameters.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{svd_sorted, to_complex, CMatrix, I};
use crate::lti::{lower_lft, lu_solve, FeedbackSign, PlantResponse};
use crate::ph::{theta_to_controller, unpack_parameters, upper_to_vec, ThetaVector, DEFAULT_Q_SHIFT};
use crate::statespace::StateSpace;

/// Everything the loss depends on besides `θ`.
#[derive(Clone, Copy)]
pub struct LossProblem<'a> {
    pub plant: &'a dyn PlantResponse,
    pub samples: &'a [f64],
    pub gamma: f64,
    pub sign: FeedbackSign,
    pub q_shift: f64,
}

impl<'a> LossProblem<'a> {
    pub fn new(plant: &'a dyn PlantResponse, samples: &'a [f64], gamma: f64) -> Self {
        Self {
            plant,
            samples,
            gamma,
            sign: FeedbackSign::Negative,
            q_shift: DEFAULT_Q_SHIFT,
        }
    }

    fn check(&self, theta: &ThetaVector) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Dimension(format!("γ must be positive, got {}", self.gamma)));
        }
        let dims = self.plant.dims();
        if dims.m != dims.p2 || theta.layout().ports() != dims.m {
            return Err(Error::Dimension(format!(
                "controller has {} ports, plant loop is {}x{}",
                theta.layout().ports(),
                dims.m,
                dims.p2
            )));
        }
        Ok(())
    }

    pub fn value(&self, theta: &ThetaVector) -> Result<f64> {
        self.check(theta)?;
        let ctrl = theta_to_controller(theta, self.q_shift).to_state_space();
        self.samples
            .par_iter()
            .map(|&w| self.sample(&ctrl, w, false).map(|(v, _)| v))
            .sum()
    }

    pub fn value_and_gradient(&self, theta: &ThetaVector) -> Result<(f64, DVector<f64>)> {
        self.check(theta)?;
        let ph = theta_to_controller(theta, self.q_shift);
        let ctrl = ph.to_state_space();
        let (k, p) = (ctrl.states(), ctrl.inputs());
        let zero = || RealizationGradient::zeros(k, p);
        let (value, g) = self
            .samples
            .par_iter()
            .map(|&w| self.sample(&ctrl, w, true).map(|(v, g)| (v, g.unwrap_or_else(zero))))
            .try_reduce(|| (0.0, zero()), |a, b| Ok((a.0 + b.0, a.1.add(b.1))))?;
        Ok((value, chain_to_theta(theta, &g, self.q_shift)))
    }

    /// Loss contribution of one sample and, on request, the gradient of that
    /// contribution with respect to `(A_K, B_K, C_K, D_K)`.
    fn sample(&self, ctrl: &StateSpace, omega: f64, want_grad: bool) -> Result<(f64, Option<RealizationGradient>)> {
        let gamma = self.gamma;
        let pe = self.plant.evaluate(omega)?;
        let (k, p) = (ctrl.states(), ctrl.inputs());
        let s = I * omega;
        // Resolvent (sI - A_K)⁻¹ via one LU solve.
        let mut shifted = to_complex(ctrl.a()).map(|z| -z);
        for i in 0..k {
            shifted[(i, i)] += s;
        }
        let res = lu_solve(shifted, &CMatrix::identity(k, k)).ok_or(Error::PoleAtSample { s })?;
        let ck = to_complex(ctrl.c());
        let x = &res * to_complex(ctrl.b());
        let kw = &ck * &x + to_complex(ctrl.d());
        let t = lower_lft(&pe, &kw, self.sign)?;
        let svd = svd_sorted(&t);
        let active = svd.sigma.len().min(pe.p11.nrows()).min(pe.p11.ncols());
        let mut value = 0.0;
        let mut weights = Vec::new();
        for j in 0..active {
            let excess = svd.sigma[j] - gamma;
            if excess > 0.0 {
                value += excess * excess / gamma;
                weights.push((j, 2.0 * excess / gamma));
            }
        }
        if !want_grad || weights.is_empty() {
            return Ok((value, None));
        }
        // dT = σ L dK R with L = P12 (I - σ K P22)⁻¹ and R = (I - σ P22 K)⁻¹ P21.
        let sig = Complex::new(self.sign.factor(), 0.0);
        let m = kw.nrows();
        let lhs_l = CMatrix::identity(m, m) - &kw * &pe.p22 * sig;
        let l = lu_solve(lhs_l.transpose(), &pe.p12.transpose())
            .ok_or(Error::IllPosed { omega: Some(omega) })?
            .transpose();
        let lhs_r = CMatrix::identity(p, p) - &pe.p22 * &kw * sig;
        let r = lu_solve(lhs_r, &pe.p21).ok_or(Error::IllPosed { omega: Some(omega) })?;
        let mut gamma_k = CMatrix::zeros(m, p);
        for (j, c) in weights {
            let a = l.adjoint() * svd.u.column(j);
            let b = &r * svd.v.column(j);
            gamma_k += a * b.adjoint() * (sig * c);
        }
        let y = &ck * &res;
        let g = RealizationGradient {
            a: (y.adjoint() * &gamma_k * x.adjoint()).map(|z| z.re),
            b: (y.adjoint() * &gamma_k).map(|z| z.re),
            c: (&gamma_k * x.adjoint()).map(|z| z.re),
            d: gamma_k.map(|z| z.re),
        };
        Ok((value, Some(g)))
    }
}

/// Gradient of a scalar with respect to the four realization matrices.
#[derive(Debug, Clone)]
pub(crate) struct RealizationGradient {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl RealizationGradient {
    fn zeros(k: usize, p: usize) -> Self {
        Self {
            a: DMatrix::zeros(k, k),
            b: DMatrix::zeros(k, p),
            c: DMatrix::zeros(p, k),
            d: DMatrix::zeros(p, p),
        }
    }

    fn add(mut self, o: Self) -> Self {
        self.a += o.a;
        self.b += o.b;
        self.c += o.c;
        self.d += o.d;
        self
    }
}

/// Pulls a realization gradient back through
/// `A = (J-R)Q, B = G-F, C = (G+F)ᵀQ, D = S-N` and the parameter maps.
fn chain_to_theta(theta: &ThetaVector, g: &RealizationGradient, q_shift: f64) -> DVector<f64> {
    let layout = theta.layout();
    let (k, p) = (layout.order(), layout.ports());
    let f = unpack_parameters(theta);
    let q = &f.q + DMatrix::identity(k, k) * q_shift;
    let w = &f.w;
    let r = w.view((0, 0), (k, k));
    let ff = w.view((0, k), (k, p));
    let jr = &f.j - r;
    let gpf = &f.g + ff;

    let ga_qt = &g.a * q.transpose();
    let g_j = &ga_qt;
    let g_r = -&ga_qt;
    let g_q = jr.transpose() * &g.a + &gpf * &g.c;
    let q_gct = &q * g.c.transpose();
    let g_g = &g.b + &q_gct;
    let g_f = -&g.b + &q_gct;
    let g_s = &g.d;
    let g_n = -&g.d;

    let mut g_w = DMatrix::zeros(k + p, k + p);
    g_w.view_mut((0, 0), (k, k)).copy_from(&g_r);
    g_w.view_mut((0, k), (k, p)).copy_from(&g_f);
    g_w.view_mut((k, k), (p, p)).copy_from(g_s);
    let g_uw = &f.w_factor * (&g_w + g_w.transpose());
    let g_uq = &f.q_factor * (&g_q + g_q.transpose());
    let g_vj = g_j.transpose() - g_j;
    let g_vn = g_n.transpose() - &g_n;

    let mut out = Vec::with_capacity(layout.len());
    out.extend(crate::ph::strict_upper_to_vec(&g_vj));
    out.extend(upper_to_vec(&g_uw));
    out.extend(upper_to_vec(&g_uq));
    out.extend(g_g.iter().copied());
    out.extend(crate::ph::strict_upper_to_vec(&g_vn));
    DVector::from_vec(out)
}

/// Sample-based loss with negative feedback and the default `Q` shift.
pub fn loss(gamma: f64, plant: &dyn PlantResponse, theta: &ThetaVector, samples: &[f64]) -> Result<f64> {
    LossProblem::new(plant, samples, gamma).value(theta)
}

/// Gradient of [`loss`] with respect to `θ`.
pub fn loss_gradient(gamma: f64, plant: &dyn PlantResponse, theta: &ThetaVector, samples: &[f64]) -> Result<DVector<f64>> {
    LossProblem::new(plant, samples, gamma)
        .value_and_gradient(theta)
        .map(|(_, g)| g)
}
