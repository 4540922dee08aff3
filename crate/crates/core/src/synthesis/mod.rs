//! Fixed-order port-Hamiltonian H∞ synthesis by bisection over the
//! performance level `γ`.
//!
//! For each trial level the sample-based loss
//! `(1/γ) Σ_i Σ_j [σ_j(T(iω_i)) - γ]₊²` is minimized over the controller
//! parameters with BFGS. A level is accepted when the minimum drops below
//! `eps2`, and the interval `[γ_l, γ_u]` is halved until its relative width
//! is below `eps1`.

mod loss;
mod samples;

use std::time::Instant;

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hinf::{grid_peak, hinf_norm, ClosedLoopResponse, HinfResult};
use crate::lti::{closed_loop_matrix, closed_loop_statespace, FeedbackSign, PlantResponse};
use crate::optim::{bfgs, BfgsOptions};
use crate::passivity::{kyp_check, passivity_tolerance, PassivityCertificate};
use crate::ph::{theta_to_controller, PhForm, ThetaLayout, ThetaVector, DEFAULT_Q_SHIFT};
use crate::statespace::StateSpace;

pub use loss::{loss, loss_gradient, LossProblem};
pub use samples::{closed_loop_sigma_max, update_samples, SampleOrigin, SampleSet, SamplingConfig};

#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    /// Controller order `k`.
    pub order: usize,
    /// Initial upper bound; derived from the initial controller when absent.
    pub gamma_u: Option<f64>,
    pub eps1: f64,
    pub eps2: f64,
    pub max_bfgs_iter: usize,
    pub initial_samples: usize,
    pub sampling: SamplingConfig,
    pub seed: u64,
    pub sign: FeedbackSign,
    pub q_shift: f64,
    /// How often an unreachable `γ_u` is doubled before giving up.
    pub max_gamma_doublings: usize,
    /// Plants up to this order are validated with the Hamiltonian method,
    /// larger ones on a refined frequency grid.
    pub exact_validation_limit: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            order: 1,
            gamma_u: None,
            eps1: 1e-2,
            eps2: 1e-6,
            max_bfgs_iter: 500,
            initial_samples: 100,
            sampling: SamplingConfig::default(),
            seed: 0,
            sign: FeedbackSign::Negative,
            q_shift: DEFAULT_Q_SHIFT,
            max_gamma_doublings: 10,
            exact_validation_limit: 200,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Initialization(msg));
        if self.order == 0 {
            return bad("controller order must be at least 1".into());
        }
        if !(self.eps1 > 0.0 && self.eps2 > 0.0) {
            return bad(format!("tolerances must be positive (eps1 {}, eps2 {})", self.eps1, self.eps2));
        }
        if !(self.sampling.omega_min > 0.0 && self.sampling.omega_min < self.sampling.omega_max) {
            return bad(format!(
                "invalid frequency range [{}, {}]",
                self.sampling.omega_min, self.sampling.omega_max
            ));
        }
        if self.initial_samples == 0 {
            return bad("initial sample count must be positive".into());
        }
        if let Some(g) = self.gamma_u {
            if !(g > 0.0) {
                return bad(format!("gamma_u must be positive, got {g}"));
            }
        }
        Ok(())
    }
}

/// Result of one inner minimization.
#[derive(Debug, Clone)]
pub struct Minimization {
    pub theta: ThetaVector,
    pub alpha: f64,
    pub iterations: usize,
    pub degraded: bool,
}

/// Minimizes the loss at a fixed `γ` from `theta0` with BFGS.
///
/// Stops when the gradient is small, when the loss is below `eps2 / 4`, or
/// after `budget` iterations. Objective failures are reported together with
/// the parameter vector at which they occurred.
pub fn minimize_loss(problem: &LossProblem<'_>, theta0: &ThetaVector, budget: usize, eps2: f64) -> Result<Minimization> {
    let layout = theta0.layout();
    let gamma = problem.gamma;
    let objective = |x: &DVector<f64>| {
        let theta = ThetaVector::new(layout, x.clone())?;
        problem.value_and_gradient(&theta).map_err(|e| Error::Optimization {
            gamma,
            theta: x.as_slice().to_vec(),
            source: Box::new(e),
        })
    };
    let opts = BfgsOptions {
        max_iter: budget,
        target: Some(eps2 / 4.0),
        ..Default::default()
    };
    let res = bfgs(objective, theta0.data().clone(), &opts)?;
    Ok(Minimization {
        theta: ThetaVector::new(layout, res.x.clone())?,
        alpha: res.f,
        iterations: res.iterations,
        degraded: res.degraded(),
    })
}

/// Random initial parameters: triangular factors of `W` and `Q` equal to the
/// identity plus Gaussian noise of scale 0.1, all other blocks Gaussian with
/// scale 0.1.
pub fn initial_theta(layout: ThetaLayout, seed: u64) -> ThetaVector {
    let mut rng = StdRng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let mut data: Vec<f64> = (0..layout.len()).map(|_| noise.sample(&mut rng)).collect();
    let ranges = layout.ranges();
    for (block, dim) in [(1, layout.order() + layout.ports()), (2, layout.order())] {
        let start = ranges[block].start;
        // Row-major upper triangle: row i holds dim - i entries, diagonal first.
        let mut offset = start;
        for i in 0..dim {
            data[offset] += 1.0;
            offset += dim - i;
        }
    }
    ThetaVector::new(layout, DVector::from_vec(data)).expect("layout length")
}

/// One bisection step.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub gamma: f64,
    pub alpha: f64,
    pub accepted: bool,
    pub gamma_l: f64,
    pub gamma_u: f64,
    pub samples: usize,
    pub bfgs_iterations: usize,
    pub degraded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMethod {
    /// Hamiltonian level-set iteration on the closed-loop realization.
    Hamiltonian,
    /// Largest value on a refined frequency grid (a lower bound).
    Grid,
    /// Largest value over the frequencies of a tabulated plant.
    Samples,
}

/// Post-hoc check of a controller against the plant.
#[derive(Debug, Clone, Serialize)]
pub struct ClosedLoopValidation {
    pub hinf: HinfResult,
    pub method: ValidationMethod,
    /// Only available when the plant has a state-space model.
    pub spectral_abscissa: Option<f64>,
    pub well_posed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisReport {
    pub theta: Vec<f64>,
    #[serde(skip)]
    pub controller: PhForm,
    pub gamma_l: f64,
    pub gamma_u: f64,
    /// Initial upper bound after any doubling.
    pub gamma_u_initial: f64,
    pub history: Vec<IterationRecord>,
    pub validation: ClosedLoopValidation,
    pub passivity: PassivityCertificate,
    pub samples: usize,
    /// Plant factorizations during the bisection, excluding validation.
    pub synthesis_factorizations: usize,
    /// Plant factorizations including validation.
    pub plant_factorizations: usize,
    pub runtime_seconds: f64,
}

/// Checks a controller against the plant: H∞ norm of the closed loop and,
/// for models, the spectral abscissa of the closed-loop matrix.
pub fn validate_closed_loop(
    plant: &dyn PlantResponse,
    ctrl: &StateSpace,
    sign: FeedbackSign,
    sampling: &SamplingConfig,
    exact_limit: usize,
) -> Result<ClosedLoopValidation> {
    if let Some(model) = plant.model() {
        let pp = model.partitioned();
        let method = if model.states() <= exact_limit {
            ValidationMethod::Hamiltonian
        } else {
            ValidationMethod::Grid
        };
        let acl = match closed_loop_matrix(&pp, ctrl, sign) {
            Ok(acl) => acl,
            Err(Error::IllPosed { .. }) => {
                return Ok(ClosedLoopValidation {
                    hinf: HinfResult::unbounded(),
                    method,
                    spectral_abscissa: None,
                    well_posed: false,
                })
            }
            Err(e) => return Err(e),
        };
        let abscissa = crate::linalg::spectral_abscissa(&acl)?;
        let hinf = if abscissa >= 0.0 {
            HinfResult::unbounded()
        } else if method == ValidationMethod::Hamiltonian {
            let cl = closed_loop_statespace(&pp, ctrl, sign)?;
            match hinf_norm(&cl, 1e-6) {
                Err(Error::Unstable { .. }) => HinfResult::unbounded(),
                other => other?,
            }
        } else {
            let resp = ClosedLoopResponse {
                plant,
                controller: ctrl,
                sign,
            };
            let count = (4 * sampling.audit_points).max(1000);
            grid_peak(&resp, sampling.omega_min, sampling.omega_max, count)?
        };
        return Ok(ClosedLoopValidation {
            hinf,
            method,
            spectral_abscissa: Some(abscissa),
            well_posed: true,
        });
    }
    let grid = plant.grid(0.0, f64::INFINITY, usize::MAX);
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for w in grid {
        let v = closed_loop_sigma_max(plant, ctrl, sign, w)?;
        if v > best.0 {
            best = (v, w);
        }
    }
    Ok(ClosedLoopValidation {
        hinf: HinfResult {
            norm: best.0,
            peak_omega: best.1,
            iterations: 0,
            converged: false,
        },
        method: ValidationMethod::Samples,
        spectral_abscissa: None,
        well_posed: true,
    })
}

fn audit_peak(plant: &dyn PlantResponse, ctrl: &StateSpace, sign: FeedbackSign, cfg: &SamplingConfig) -> Result<f64> {
    use rayon::prelude::*;
    let grid = plant.grid(cfg.omega_min, cfg.omega_max, cfg.audit_points);
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&w| closed_loop_sigma_max(plant, ctrl, sign, w))
        .collect::<Result<_>>()?;
    Ok(values.into_iter().fold(0.0, f64::max))
}

/// Runs the bisection synthesis and validates the resulting controller.
pub fn sobsyn(plant: &dyn PlantResponse, config: &SynthesisConfig) -> Result<SynthesisReport> {
    config.validate()?;
    let start = Instant::now();
    let dims = plant.dims();
    if dims.m != dims.p2 {
        return Err(Error::Dimension(format!(
            "plant loop is {}x{}; a port-Hamiltonian controller needs a square loop",
            dims.m, dims.p2
        )));
    }
    let layout = ThetaLayout::new(config.order, dims.m);
    let sign = config.sign;
    let ctrl_of = |theta: &ThetaVector| theta_to_controller(theta, config.q_shift).to_state_space();

    let theta0 = initial_theta(layout, config.seed);
    let s = &config.sampling;
    let mut samples = SampleSet::new(plant.grid(s.omega_min, s.omega_max, config.initial_samples))
        .ok_or_else(|| Error::Initialization("plant offers no frequencies in the sample range".into()))?;

    let mut gamma_u = match config.gamma_u {
        Some(g) => g,
        None => 1.1 * audit_peak(plant, &ctrl_of(&theta0), sign, s)?,
    };
    if !(gamma_u > 0.0 && gamma_u.is_finite()) {
        return Err(Error::Initialization(format!("initial upper bound {gamma_u} is not usable")));
    }

    // Make sure γ_u is attainable before bisecting below it.
    let mut theta = theta0;
    let mut doublings = 0;
    let best = loop {
        update_samples(&mut samples, plant, &ctrl_of(&theta), sign, gamma_u, s)?;
        let problem = LossProblem {
            plant,
            samples: samples.points(),
            gamma: gamma_u,
            sign,
            q_shift: config.q_shift,
        };
        let min = minimize_loss(&problem, &theta, config.max_bfgs_iter, config.eps2)?;
        log::info!("gamma_u {gamma_u:.6e}: alpha {:.3e} after {} iterations", min.alpha, min.iterations);
        if min.alpha <= config.eps2 {
            theta = min.theta.clone();
            break min.theta;
        }
        if doublings == config.max_gamma_doublings {
            return Err(Error::Initialization(format!(
                "loss stays at {:.3e} > eps2 even at gamma_u = {gamma_u:e}",
                min.alpha
            )));
        }
        doublings += 1;
        gamma_u *= 2.0;
    };
    let gamma_u_initial = gamma_u;
    let mut best = best;
    let mut gamma_l = 0.0;
    let mut history = Vec::new();

    while (gamma_u - gamma_l) / (gamma_u + gamma_l) > config.eps1 {
        let gamma = 0.5 * (gamma_u + gamma_l);
        update_samples(&mut samples, plant, &ctrl_of(&theta), sign, gamma, s)?;
        let problem = LossProblem {
            plant,
            samples: samples.points(),
            gamma,
            sign,
            q_shift: config.q_shift,
        };
        let min = minimize_loss(&problem, &theta, config.max_bfgs_iter, config.eps2)?;
        let accepted = min.alpha <= config.eps2;
        if accepted {
            gamma_u = gamma;
            best = min.theta.clone();
        } else {
            gamma_l = gamma;
        }
        log::info!(
            "gamma {gamma:.6e}: alpha {:.3e}, {} samples, {} iterations, {}",
            min.alpha,
            samples.len(),
            min.iterations,
            if accepted { "accepted" } else { "rejected" }
        );
        history.push(IterationRecord {
            gamma,
            alpha: min.alpha,
            accepted,
            gamma_l,
            gamma_u,
            samples: samples.len(),
            bfgs_iterations: min.iterations,
            degraded: min.degraded,
        });
        theta = min.theta;
    }

    let synthesis_factorizations = plant.factorizations();
    let controller = theta_to_controller(&best, config.q_shift);
    let ctrl_ss = controller.to_state_space();
    let validation = validate_closed_loop(plant, &ctrl_ss, sign, s, config.exact_validation_limit)?;
    let passivity = kyp_check(&ctrl_ss, passivity_tolerance(ctrl_ss.d()))?;
    Ok(SynthesisReport {
        theta: best.data().as_slice().to_vec(),
        controller,
        gamma_l,
        gamma_u,
        gamma_u_initial,
        history,
        validation,
        passivity,
        samples: samples.len(),
        synthesis_factorizations,
        plant_factorizations: plant.factorizations(),
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}
