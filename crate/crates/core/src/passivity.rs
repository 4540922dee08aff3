//! Passivity certificates, Popov-function sweeps and C-only passivation.
//!
//! A square stable system is passive when its Popov function
//! `Φ(iω) = K(iω)ᴴ + K(iω)` is positive semidefinite on the whole imaginary
//! axis. With `D + Dᵀ ≻ 0` this is decided exactly by the Hamiltonian matrix
//! of the positive-real Riccati equation: its imaginary-axis eigenvalues are
//! the frequencies where `Φ` becomes singular, and the sign of `Φ` between
//! them is constant.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    eigenvalues, herm_eigen, herm_eigenvalues, logspace, lyapunov, min_sym_eigenvalue, pivoted_psd_factor,
    spectral_abscissa, spectral_norm, to_complex, CMatrix, C64, I,
};
use crate::lti::{eval_transfer, lu_solve};
use crate::optim::{bfgs, BfgsOptions};
use crate::statespace::StateSpace;

/// How a certificate was decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassivityMethod {
    PopovSweep,
    HamiltonianTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassivityCertificate {
    pub passive: bool,
    /// Most negative Popov eigenvalue encountered.
    pub min_popov_eig: f64,
    /// Frequency at which `min_popov_eig` was found; absent when it is the
    /// high-frequency limit `D + Dᵀ`.
    pub witness_omega: Option<f64>,
    pub kyp_feasible: bool,
    pub method: PassivityMethod,
}

/// Default passivity tolerance `10⁻⁸ · max(1, ‖D + Dᵀ‖₂)`.
pub fn passivity_tolerance(d: &DMatrix<f64>) -> f64 {
    1e-8 * spectral_norm(&(d + d.transpose())).max(1.0)
}

/// Popov eigenvalues at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct PopovRow {
    pub omega: f64,
    /// Ascending.
    pub eigs: Vec<f64>,
}

fn require_square(k: &StateSpace) -> Result<()> {
    if k.inputs() != k.outputs() {
        return Err(Error::Dimension(format!(
            "passivity needs a square system, got {} outputs and {} inputs",
            k.outputs(),
            k.inputs()
        )));
    }
    Ok(())
}

fn popov_matrix(kw: &CMatrix) -> CMatrix {
    kw.adjoint() + kw
}

/// Eigenvalues of `Φ(iω)` at every grid frequency.
pub fn popov_sweep(k: &StateSpace, grid: &[f64]) -> Result<Vec<PopovRow>> {
    require_square(k)?;
    grid.par_iter()
        .map(|&omega| {
            let kw = eval_transfer(k, I * omega)?;
            Ok(PopovRow {
                omega,
                eigs: herm_eigenvalues(&popov_matrix(&kw)),
            })
        })
        .collect()
}

fn min_popov_at(k: &StateSpace, omega: f64) -> Result<f64> {
    let kw = eval_transfer(k, I * omega)?;
    Ok(herm_eigenvalues(&popov_matrix(&kw))[0])
}

/// Minimum over a grid, as `(value, omega)`.
fn sweep_minimum(k: &StateSpace, grid: &[f64]) -> Result<(f64, f64)> {
    let rows = popov_sweep(k, grid)?;
    Ok(rows
        .iter()
        .map(|r| (r.eigs[0], r.omega))
        .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a }))
}

const SWEEP_LO: f64 = 1e-4;
const SWEEP_HI: f64 = 1e4;
const SWEEP_POINTS: usize = 10_000;

/// Decides passivity of a realization.
///
/// Routes: the `D + Dᵀ` gate, then the Hamiltonian imaginary-axis test when
/// `D + Dᵀ ≻ 0` and `A` is stable. When `D + Dᵀ` is singular, or `A` has
/// eigenvalues on the imaginary axis, a dense Popov sweep decides instead,
/// together with a residue check at the imaginary poles.
pub fn kyp_check(k: &StateSpace, tol: f64) -> Result<PassivityCertificate> {
    require_square(k)?;
    let r0 = k.d() + k.d().transpose();
    let d_min = if r0.nrows() == 0 { 0.0 } else { min_sym_eigenvalue(&r0) };
    let fail = |min: f64, witness: Option<f64>, method| PassivityCertificate {
        passive: false,
        min_popov_eig: min,
        witness_omega: witness,
        kyp_feasible: false,
        method,
    };
    if d_min < -tol {
        return Ok(fail(d_min, None, PassivityMethod::HamiltonianTest));
    }
    if k.states() == 0 {
        return Ok(PassivityCertificate {
            passive: true,
            min_popov_eig: d_min,
            witness_omega: None,
            kyp_feasible: true,
            method: PassivityMethod::HamiltonianTest,
        });
    }

    let poles = eigenvalues(k.a())?;
    let abscissa = poles.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let axis_tol = 1e-8;
    if abscissa > axis_tol {
        let grid = logspace(SWEEP_LO, SWEEP_HI, 200);
        let (min, w) = sweep_minimum(k, &grid)?;
        return Ok(fail(min.min(d_min), Some(w), PassivityMethod::PopovSweep));
    }
    let axis_poles: Vec<C64> = poles.iter().copied().filter(|z| z.re.abs() <= axis_tol).collect();
    if !axis_poles.is_empty() {
        return axis_pole_check(k, &axis_poles, d_min, tol);
    }
    if d_min <= tol {
        let mut grid = logspace(SWEEP_LO, SWEEP_HI, SWEEP_POINTS);
        grid.insert(0, 0.0);
        let (min, w) = sweep_minimum(k, &grid)?;
        let (min, witness) = if d_min < min { (d_min, None) } else { (min, Some(w)) };
        let passive = min >= -tol;
        return Ok(PassivityCertificate {
            passive,
            min_popov_eig: min,
            witness_omega: witness,
            kyp_feasible: passive,
            method: PassivityMethod::PopovSweep,
        });
    }

    let crossings = popov_crossings(k, &r0)?;
    let mut probes = vec![0.0];
    let mut prev = 0.0;
    for &w in &crossings {
        probes.push(w);
        probes.push(0.5 * (prev + w));
        prev = w;
    }
    if let Some(&last) = crossings.last() {
        probes.push(2.0 * last + 1.0);
    }
    let mut min = (d_min, None);
    for w in probes {
        let v = min_popov_at(k, w)?;
        if v < min.0 {
            min = (v, Some(w));
        }
    }
    let passive = min.0 >= -tol;
    Ok(PassivityCertificate {
        passive,
        min_popov_eig: min.0,
        witness_omega: min.1,
        kyp_feasible: passive,
        method: PassivityMethod::HamiltonianTest,
    })
}

/// Nonnegative frequencies where `Φ(iω)` is singular, from the imaginary-axis
/// eigenvalues of the positive-real Hamiltonian.
fn popov_crossings(k: &StateSpace, r0: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (a, b, c) = (k.a(), k.b(), k.c());
    let n = a.nrows();
    let r_inv = r0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Certificate("D + Dᵀ is not positive definite".into()))?
        .inverse();
    let ah = a - b * &r_inv * c;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&ah);
    h.view_mut((0, n), (n, n)).copy_from(&(-(b * &r_inv * b.transpose())));
    h.view_mut((n, 0), (n, n)).copy_from(&(c.transpose() * &r_inv * c));
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

/// Passivity with poles on the imaginary axis: residues there must be
/// Hermitian positive semidefinite, and the Popov function must be
/// nonnegative away from the poles.
fn axis_pole_check(k: &StateSpace, axis_poles: &[C64], d_min: f64, tol: f64) -> Result<PassivityCertificate> {
    let n = k.states();
    let (b, c) = (to_complex(k.b()), to_complex(k.c()));
    let mut worst = (d_min, None);
    for &p in axis_poles {
        let lam = Complex::new(0.0, p.im);
        let shifted = to_complex(k.a()) - CMatrix::identity(n, n) * lam;
        let svd = shifted.svd(true, true);
        let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
            return Err(Error::Certificate("SVD without singular vectors".into()));
        };
        let idx = (0..n)
            .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
            .unwrap_or(0);
        let right = vt.row(idx).adjoint();
        let left = u.column(idx).into_owned();
        let scale = left.dotc(&right);
        if scale.norm() < 1e-12 {
            return Err(Error::Certificate(format!("imaginary pole at {p} is not semisimple")));
        }
        let residue = (&c * &right) * (left.adjoint() * &b) / scale;
        let herm_defect = (&residue - residue.adjoint()).norm();
        let eig = herm_eigenvalues(&((&residue + residue.adjoint()) * Complex::new(0.5, 0.0)))[0];
        let bad = herm_defect > 1e-6 * residue.norm().max(1.0);
        let value = if bad { f64::NEG_INFINITY } else { eig };
        if value < worst.0 {
            worst = (value, Some(p.im.abs()));
        }
    }
    let pole_freqs: Vec<f64> = axis_poles.iter().map(|z| z.im.abs()).collect();
    let grid: Vec<f64> = logspace(SWEEP_LO, SWEEP_HI, SWEEP_POINTS)
        .into_iter()
        .filter(|w| pole_freqs.iter().all(|p| (w - p).abs() > 1e-6 * (1.0 + p)))
        .collect();
    let (min, w) = sweep_minimum(k, &grid)?;
    if min < worst.0 {
        worst = (min, Some(w));
    }
    let passive = worst.0 >= -tol;
    Ok(PassivityCertificate {
        passive,
        min_popov_eig: worst.0,
        witness_omega: worst.1,
        kyp_feasible: passive,
        method: PassivityMethod::PopovSweep,
    })
}

/// Factor `L_c` of the controllability Gramian, `P_c = L_c L_cᵀ`, where
/// `A P_c + P_c Aᵀ + B Bᵀ = 0`.
///
/// `L_c` is lower triangular when `P_c` is positive definite; for an
/// unreachable pair it is a row permutation of a lower-triangular,
/// rank-revealing factor.
pub fn controllability_gramian_cholesky(k: &StateSpace) -> Result<DMatrix<f64>> {
    let abscissa = spectral_abscissa(k.a())?;
    if !(abscissa < 0.0) {
        return Err(Error::Unstable { abscissa });
    }
    let bb = k.b() * k.b().transpose();
    let p = lyapunov(k.a(), &bb)?;
    let p = (&p + p.transpose()) * 0.5;
    if let Some(ch) = p.clone().cholesky() {
        let l = ch.unpack();
        if l.iter().all(|v| v.is_finite()) {
            return Ok(l);
        }
    }
    let tol = 1e-12 * p.amax().max(f64::MIN_POSITIVE);
    pivoted_psd_factor(&p, tol).ok_or_else(|| Error::Certificate("Gramian is not positive semidefinite".into()))
}

#[derive(Debug, Clone)]
pub struct PassivationConfig {
    /// Popov eigenvalues are pushed above this level on the grid, relative
    /// to `max(1, ‖D + Dᵀ‖₂)`.
    pub margin: f64,
    pub rho_initial: f64,
    pub rho_growth: f64,
    pub max_rounds: usize,
    pub max_iter: usize,
}

impl Default for PassivationConfig {
    fn default() -> Self {
        Self {
            margin: 1e-6,
            rho_initial: 1e2,
            rho_growth: 10.0,
            max_rounds: 16,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PassivationResult {
    pub controller: StateSpace,
    /// `‖Ξ‖_F`.
    pub perturbation_norm: f64,
    pub xi: DMatrix<f64>,
    pub certificate: PassivityCertificate,
    pub rounds: usize,
}

/// Per-frequency data for the penalty: `Φ₀(iω)` and `L_c X(iω)` with
/// `X(iω) = (iωI - A)⁻¹ B`, so that `Φ_Ξ = Φ₀ + ΞLX + (ΞLX)ᴴ`.
struct PopovSample {
    phi0: CMatrix,
    lx: CMatrix,
}

fn popov_sample(k: &StateSpace, l: &CMatrix, omega: f64) -> Result<PopovSample> {
    let n = k.states();
    let s = I * omega;
    let mut m = to_complex(k.a()).map(|z| -z);
    for i in 0..n {
        m[(i, i)] += s;
    }
    let x = lu_solve(m, &to_complex(k.b())).ok_or(Error::PoleAtSample { s })?;
    let kw = to_complex(k.c()) * &x + to_complex(k.d());
    Ok(PopovSample {
        phi0: popov_matrix(&kw),
        lx: l * x,
    })
}

/// Smallest C-only perturbation `C̃ = C + Ξ L_c` making the controller
/// passive, found by a penalty method.
///
/// Minimizes `‖Ξ‖_F² + ρ Σ_ω Σ_j [margin - λ_j(Φ_Ξ(iω))]₊²` over the grid,
/// raising `ρ` while the grid is violated and adding the witness frequency
/// of a failed certificate to the grid, until [`kyp_check`] passes.
pub fn passivity_enforce(k: &StateSpace, grid: &[f64], config: &PassivationConfig) -> Result<PassivationResult> {
    require_square(k)?;
    let tol = passivity_tolerance(k.d());
    let r0 = k.d() + k.d().transpose();
    let d_min = if r0.nrows() == 0 { 0.0 } else { min_sym_eigenvalue(&r0) };
    if d_min < -tol {
        return Err(Error::Infeasible(format!(
            "D + Dᵀ has eigenvalue {d_min:e}; perturbing C cannot make the system passive"
        )));
    }
    let cert = kyp_check(k, tol)?;
    let (m, n) = (k.outputs(), k.states());
    if cert.passive {
        return Ok(PassivationResult {
            controller: k.clone(),
            perturbation_norm: 0.0,
            xi: DMatrix::zeros(m, n),
            certificate: cert,
            rounds: 0,
        });
    }
    let lc = controllability_gramian_cholesky(k)?;
    let lc_c = to_complex(&lc);
    let margin = config.margin * spectral_norm(&r0).max(1.0);

    let mut freqs: Vec<f64> = grid.to_vec();
    freqs.push(0.0);
    if let Some(w) = cert.witness_omega {
        freqs.push(w);
    }
    freqs.sort_by(|a, b| a.total_cmp(b));
    freqs.dedup();
    let mut samples: Vec<PopovSample> = freqs
        .par_iter()
        .map(|&w| popov_sample(k, &lc_c, w))
        .collect::<Result<_>>()?;

    let mut rho = config.rho_initial;
    let mut xi = DVector::<f64>::zeros(m * n);
    let opts = BfgsOptions {
        max_iter: config.max_iter,
        grad_tol: 1e-12,
        ..Default::default()
    };
    for round in 1..=config.max_rounds {
        let objective = |v: &DVector<f64>| {
            let xi_m = DMatrix::from_column_slice(m, n, v.as_slice());
            let xi_c = to_complex(&xi_m);
            let (pen, grad) = samples
                .par_iter()
                .map(|smp| {
                    let delta = &xi_c * &smp.lx;
                    let phi = &smp.phi0 + &delta + delta.adjoint();
                    let (vals, vecs) = herm_eigen(&phi);
                    let mut pen = 0.0;
                    let mut grad = DMatrix::<f64>::zeros(m, n);
                    for (j, &lam) in vals.iter().enumerate() {
                        let viol = margin - lam;
                        if viol <= 0.0 {
                            continue;
                        }
                        pen += viol * viol;
                        let v = vecs.column(j);
                        let y = &smp.lx * v;
                        // dλ/dΞ = 2 Re(conj(v) yᵀ)
                        let dl = (v.map(|z| z.conj()) * y.transpose()).map(|z| 2.0 * z.re);
                        grad -= dl * (2.0 * viol);
                    }
                    (pen, grad)
                })
                .reduce(|| (0.0, DMatrix::zeros(m, n)), |a, b| (a.0 + b.0, a.1 + b.1));
            let f = xi_m.norm_squared() + rho * pen;
            let g = xi_m * 2.0 + grad * rho;
            Ok((f, DVector::from_column_slice(g.as_slice())))
        };
        let res = bfgs(objective, xi.clone(), &opts)?;
        xi = res.x;
        let xi_m = DMatrix::from_column_slice(m, n, xi.as_slice());
        let grid_min = samples
            .iter()
            .map(|smp| {
                let delta = to_complex(&xi_m) * &smp.lx;
                herm_eigenvalues(&(&smp.phi0 + &delta + delta.adjoint()))[0]
            })
            .fold(f64::INFINITY, f64::min);
        let candidate = k.with_c(k.c() + &xi_m * &lc)?;
        log::debug!("passivation round {round}: rho {rho:e}, grid min {grid_min:e}, |Xi| {:e}", xi_m.norm());
        if grid_min < 0.0 {
            rho *= config.rho_growth;
            continue;
        }
        let cert = kyp_check(&candidate, tol)?;
        if cert.passive {
            return Ok(PassivationResult {
                controller: candidate,
                perturbation_norm: xi_m.norm(),
                xi: xi_m,
                certificate: cert,
                rounds: round,
            });
        }
        if let Some(w) = cert.witness_omega {
            for w in [w, w * 0.999, w * 1.001] {
                if !freqs.contains(&w) {
                    freqs.push(w);
                    samples.push(popov_sample(k, &lc_c, w)?);
                }
            }
        } else {
            rho *= config.rho_growth;
        }
    }
    Err(Error::Infeasible(format!(
        "passivation did not certify within {} rounds",
        config.max_rounds
    )))
}
