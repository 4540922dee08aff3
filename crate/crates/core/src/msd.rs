//! Scalable mass-spring-damper chain in port-Hamiltonian form.
//!
//! Masses are connected in a line by springs and parallel dampers, and the
//! first mass is additionally tied to the ground. The state interleaves
//! momentum and position per mass, `x = (p₁, q₁, p₂, q₂, …)`, with energy
//! `H = Σ pᵢ²/(2m) + ½ qᵀ K q`. Control forces act on the io masses and the
//! measured outputs are their velocities.
//!
//! The performance channel has a disturbance force at every io mass and
//! measurement noise of weight `η` on every measured output. The
//! performance output stacks the io-mass velocities and the control effort
//! weighted by `β`, so `w` and `z` both have `2m` entries for `m` io masses.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ph::{PhForm, PhPlant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MSDConfig {
    pub n_masses: usize,
    pub mass: f64,
    pub spring: f64,
    pub damper: f64,
    /// 1-based indices of the masses carrying control inputs and sensors.
    pub io_masses: Vec<usize>,
    /// Weight of the control effort in the performance output.
    pub beta: f64,
    /// Weight of the measurement noise.
    pub eta: f64,
}

impl MSDConfig {
    /// Default chain with `n_masses` masses, io at the first two (or the only
    /// one).
    pub fn new(n_masses: usize) -> Self {
        Self {
            n_masses,
            mass: 4.0,
            spring: 4.0,
            damper: 1.0,
            io_masses: (1..=n_masses.min(2)).collect(),
            beta: 0.4,
            eta: 0.4,
        }
    }

    pub fn states(&self) -> usize {
        2 * self.n_masses
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Dimension(msg));
        if self.n_masses == 0 {
            return bad("the chain needs at least one mass".into());
        }
        if !(self.mass > 0.0 && self.spring > 0.0 && self.damper >= 0.0) {
            return bad(format!(
                "need mass > 0, spring > 0, damper >= 0 (got {}, {}, {})",
                self.mass, self.spring, self.damper
            ));
        }
        if self.io_masses.is_empty() {
            return bad("at least one io mass is required".into());
        }
        for (i, &idx) in self.io_masses.iter().enumerate() {
            if idx == 0 || idx > self.n_masses {
                return bad(format!("io mass {idx} is outside 1..={}", self.n_masses));
            }
            if self.io_masses[..i].contains(&idx) {
                return bad(format!("io mass {idx} is listed twice"));
            }
        }
        Ok(())
    }
}

/// Tridiagonal chain Laplacian with a ground link at the first mass.
fn chain_matrix(n: usize, c: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    m[(0, 0)] += c;
    for i in 0..n.saturating_sub(1) {
        m[(i, i)] += c;
        m[(i + 1, i + 1)] += c;
        m[(i, i + 1)] -= c;
        m[(i + 1, i)] -= c;
    }
    m
}

pub fn msd_plant(cfg: &MSDConfig) -> Result<PhPlant> {
    cfg.validate()?;
    let nm = cfg.n_masses;
    let n = 2 * nm;
    let m = cfg.io_masses.len();
    let p = |i: usize| 2 * i;
    let q = |i: usize| 2 * i + 1;

    let mut j = DMatrix::zeros(n, n);
    for i in 0..nm {
        j[(p(i), q(i))] = -1.0;
        j[(q(i), p(i))] = 1.0;
    }
    let stiffness = chain_matrix(nm, cfg.spring);
    let damping = chain_matrix(nm, cfg.damper);
    let mut r = DMatrix::zeros(n, n);
    let mut qm = DMatrix::zeros(n, n);
    for a in 0..nm {
        qm[(p(a), p(a))] = 1.0 / cfg.mass;
        for b in 0..nm {
            r[(p(a), p(b))] = damping[(a, b)];
            qm[(q(a), q(b))] = stiffness[(a, b)];
        }
    }
    let mut g = DMatrix::zeros(n, m);
    for (col, &idx) in cfg.io_masses.iter().enumerate() {
        g[(p(idx - 1), col)] = 1.0;
    }
    let ph = PhForm::new(
        j,
        r,
        qm,
        g,
        DMatrix::zeros(n, m),
        DMatrix::zeros(m, m),
        DMatrix::zeros(m, m),
    )?;

    let (m1, p1) = (2 * m, 2 * m);
    let mut b1 = DMatrix::zeros(n, m1);
    b1.view_mut((0, 0), (n, m)).copy_from(ph.g());
    let mut c1 = DMatrix::zeros(p1, n);
    c1.view_mut((0, 0), (m, n)).copy_from(&(ph.g().transpose() * ph.q()));
    let d11 = DMatrix::zeros(p1, m1);
    let mut d12 = DMatrix::zeros(p1, m);
    let mut d21 = DMatrix::zeros(m, m1);
    for i in 0..m {
        d12[(m + i, i)] = cfg.beta;
        d21[(i, m + i)] = cfg.eta;
    }
    PhPlant::new(ph, b1, c1, d11, d12, d21)
}
