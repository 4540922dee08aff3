//! Port-Hamiltonian realizations and the unconstrained parameterization of
//! port-Hamiltonian controllers.
//!
//! A realization `(J, R, Q, G, F, S, N)` defines the system
//!
//! ```text
//! ẋ = (J - R) Q x + (G - F) u
//! y = (G + F)ᵀ Q x + (S - N) u
//! ```
//!
//! and is port-Hamiltonian when `J` and `N` are skew-symmetric, the
//! passivity matrix `W = [[R, F], [Fᵀ, S]]` is positive semidefinite and `Q`
//! is positive definite.
//!
//! Controllers of order `k` with `p` ports are parameterized by a flat vector
//! whose blocks fill a strictly upper triangle (skew parts), upper triangles
//! (Cholesky-like factors of `W` and `Q`) and a column-major `k x p` block
//! (`G`). Every parameter vector maps to a valid port-Hamiltonian controller,
//! so the synthesis never has to enforce constraints explicitly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{min_sym_eigenvalue, psd_upper_cholesky, spectral_norm};
use crate::statespace::StateSpace;

/// Diagonal shift added to `Q` when building a controller from parameters.
pub const DEFAULT_Q_SHIFT: f64 = 1e-8;

/// Numerical tolerances for structural checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceSet {
    /// Skew-symmetry and symmetry defects, relative to `max(1, ‖·‖_F)`.
    pub structural: f64,
    /// Allowed negative eigenvalue of `W`, relative to `‖W‖₂`.
    pub psd: f64,
    /// Required smallest eigenvalue of `Q`.
    pub pd: f64,
    /// Round-trip reconstruction tolerance.
    pub round_trip: f64,
}

impl Default for ToleranceSet {
    fn default() -> Self {
        Self {
            structural: 1e-12,
            psd: 1e-8,
            pd: 1e-10,
            round_trip: 1e-8,
        }
    }
}

/// Result of a single structural check.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCheck {
    pub name: &'static str,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Converts a failing report into a validation error naming the
    /// offending constraints.
    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            return Ok(());
        }
        let msg = self
            .failures()
            .map(|c| format!("{} (measured {:e}, threshold {:e})", c.name, c.measured, c.threshold))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::Validation(msg))
    }
}

pub const CHECK_J_SKEW: &str = "J skewness";
pub const CHECK_N_SKEW: &str = "N skewness";
pub const CHECK_W_SYM: &str = "W symmetry";
pub const CHECK_W_PSD: &str = "W positive semidefiniteness";
pub const CHECK_Q_SYM: &str = "Q symmetry";
pub const CHECK_Q_PD: &str = "Q positive definiteness";

/// A port-Hamiltonian realization `(J, R, Q, G, F, S, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhForm {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    q: DMatrix<f64>,
    g: DMatrix<f64>,
    f: DMatrix<f64>,
    s: DMatrix<f64>,
    n: DMatrix<f64>,
}

fn expect_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

impl PhForm {
    /// Builds a realization after checking block dimensions. Structural
    /// constraints are checked separately by [`PhForm::validate`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        j: DMatrix<f64>,
        r: DMatrix<f64>,
        q: DMatrix<f64>,
        g: DMatrix<f64>,
        f: DMatrix<f64>,
        s: DMatrix<f64>,
        n: DMatrix<f64>,
    ) -> Result<Self> {
        let states = j.nrows();
        let ports = g.ncols();
        expect_shape("J", &j, states, states)?;
        expect_shape("R", &r, states, states)?;
        expect_shape("Q", &q, states, states)?;
        expect_shape("G", &g, states, ports)?;
        expect_shape("F", &f, states, ports)?;
        expect_shape("S", &s, ports, ports)?;
        expect_shape("N", &n, ports, ports)?;
        Ok(Self { j, r, q, g, f, s, n })
    }

    pub fn j(&self) -> &DMatrix<f64> {
        &self.j
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }
    pub fn n(&self) -> &DMatrix<f64> {
        &self.n
    }

    pub fn states(&self) -> usize {
        self.j.nrows()
    }

    pub fn ports(&self) -> usize {
        self.g.ncols()
    }

    /// The passivity matrix `[[R, F], [Fᵀ, S]]`.
    pub fn passivity_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.states(), self.ports());
        let mut w = DMatrix::zeros(n + m, n + m);
        w.view_mut((0, 0), (n, n)).copy_from(&self.r);
        w.view_mut((0, n), (n, m)).copy_from(&self.f);
        w.view_mut((n, 0), (m, n)).copy_from(&self.f.transpose());
        w.view_mut((n, n), (m, m)).copy_from(&self.s);
        w
    }

    pub fn validate(&self, tol: &ToleranceSet) -> ValidationReport {
        let rel = |m: &DMatrix<f64>| tol.structural * m.norm().max(1.0);
        let mut checks = Vec::with_capacity(6);

        let mut skew = |name, m: &DMatrix<f64>| {
            let measured = (m + m.transpose()).norm();
            let threshold = rel(m);
            checks.push(ConstraintCheck {
                name,
                measured,
                threshold,
                passed: measured <= threshold,
            });
        };
        skew(CHECK_J_SKEW, &self.j);
        skew(CHECK_N_SKEW, &self.n);

        let w = self.passivity_matrix();
        let w_sym = (&w - w.transpose()).norm();
        checks.push(ConstraintCheck {
            name: CHECK_W_SYM,
            measured: w_sym,
            threshold: rel(&w),
            passed: w_sym <= rel(&w),
        });
        let w_min = min_sym_eigenvalue(&w);
        let w_thresh = -tol.psd * spectral_norm(&w);
        checks.push(ConstraintCheck {
            name: CHECK_W_PSD,
            measured: w_min,
            threshold: w_thresh,
            passed: w_min >= w_thresh,
        });

        let q_sym = (&self.q - self.q.transpose()).norm();
        checks.push(ConstraintCheck {
            name: CHECK_Q_SYM,
            measured: q_sym,
            threshold: rel(&self.q),
            passed: q_sym <= rel(&self.q),
        });
        let q_min = min_sym_eigenvalue(&self.q);
        checks.push(ConstraintCheck {
            name: CHECK_Q_PD,
            measured: q_min,
            threshold: tol.pd,
            passed: q_min >= tol.pd,
        });
        ValidationReport { checks }
    }

    /// `A = (J - R)Q`, `B = G - F`, `C = (G + F)ᵀQ`, `D = S - N`.
    pub fn to_state_space(&self) -> StateSpace {
        let a = (&self.j - &self.r) * &self.q;
        let b = &self.g - &self.f;
        let c = (&self.g + &self.f).transpose() * &self.q;
        let d = &self.s - &self.n;
        StateSpace::new(a, b, c, d).expect("port-Hamiltonian blocks are dimension-consistent")
    }

    /// Stored energy `½ xᵀQx`.
    pub fn hamiltonian(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.states() {
            return Err(Error::Dimension(format!(
                "state vector has length {}, expected {}",
                x.len(),
                self.states()
            )));
        }
        Ok(0.5 * x.dot(&(&self.q * x)))
    }

    /// Largest absolute entrywise difference over all seven blocks.
    pub fn max_abs_diff(&self, other: &PhForm) -> f64 {
        let pairs = [
            (&self.j, &other.j),
            (&self.r, &other.r),
            (&self.q, &other.q),
            (&self.g, &other.g),
            (&self.f, &other.f),
            (&self.s, &other.s),
            (&self.n, &other.n),
        ];
        pairs
            .iter()
            .map(|(a, b)| {
                if a.shape() != b.shape() {
                    f64::INFINITY
                } else {
                    (*a - *b).amax()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Frobenius distance summed over all seven blocks.
    pub fn frobenius_distance(&self, other: &PhForm) -> f64 {
        let pairs = [
            (&self.j, &other.j),
            (&self.r, &other.r),
            (&self.q, &other.q),
            (&self.g, &other.g),
            (&self.f, &other.f),
            (&self.s, &other.s),
            (&self.n, &other.n),
        ];
        pairs
            .iter()
            .map(|(a, b)| (*a - *b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

/// Convenience wrapper: structural check with the given tolerances.
pub fn validate_ph_form(ph: &PhForm, tol: &ToleranceSet) -> ValidationReport {
    ph.validate(tol)
}

/// `ph_to_statespace` from the module contract.
pub fn ph_to_statespace(ph: &PhForm) -> StateSpace {
    ph.to_state_space()
}

pub fn hamiltonian_value(ph: &PhForm, x: &DVector<f64>) -> Result<f64> {
    ph.hamiltonian(x)
}

/// A plant whose control-input to measured-output channel is
/// port-Hamiltonian, with unstructured performance channels.
///
/// ```text
/// ẋ = (J - R)Q x + B1 w + (G - F) u
/// z = C1 x + D11 w + D12 u
/// y = (G + F)ᵀQ x + D21 w + (S - N) u
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct PhPlant {
    ph: PhForm,
    b1: DMatrix<f64>,
    c1: DMatrix<f64>,
    d11: DMatrix<f64>,
    d12: DMatrix<f64>,
    d21: DMatrix<f64>,
}

/// The plant as an unstructured two-port realization.
#[derive(Debug, Clone)]
pub struct PartitionedPlant {
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub d11: DMatrix<f64>,
    pub d12: DMatrix<f64>,
    pub d21: DMatrix<f64>,
    pub d22: DMatrix<f64>,
}

impl PartitionedPlant {
    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    /// The full plant `[w; u] -> [z; y]` as one realization.
    pub fn to_state_space(&self) -> StateSpace {
        let (n, m1, m) = (self.states(), self.b1.ncols(), self.b2.ncols());
        let (p1, p2) = (self.c1.nrows(), self.c2.nrows());
        let mut b = DMatrix::zeros(n, m1 + m);
        b.view_mut((0, 0), (n, m1)).copy_from(&self.b1);
        b.view_mut((0, m1), (n, m)).copy_from(&self.b2);
        let mut c = DMatrix::zeros(p1 + p2, n);
        c.view_mut((0, 0), (p1, n)).copy_from(&self.c1);
        c.view_mut((p1, 0), (p2, n)).copy_from(&self.c2);
        let mut d = DMatrix::zeros(p1 + p2, m1 + m);
        d.view_mut((0, 0), (p1, m1)).copy_from(&self.d11);
        d.view_mut((0, m1), (p1, m)).copy_from(&self.d12);
        d.view_mut((p1, 0), (p2, m1)).copy_from(&self.d21);
        d.view_mut((p1, m1), (p2, m)).copy_from(&self.d22);
        StateSpace::new(self.a.clone(), b, c, d).expect("partition blocks are consistent")
    }
}

impl PhPlant {
    /// Builds a plant, checking block dimensions and the port-Hamiltonian
    /// constraints of the `u -> y` channel with default tolerances.
    pub fn new(
        ph: PhForm,
        b1: DMatrix<f64>,
        c1: DMatrix<f64>,
        d11: DMatrix<f64>,
        d12: DMatrix<f64>,
        d21: DMatrix<f64>,
    ) -> Result<Self> {
        let plant = Self::new_unchecked(ph, b1, c1, d11, d12, d21)?;
        plant.ph.validate(&ToleranceSet::default()).into_result()?;
        Ok(plant)
    }

    /// Dimension checks only.
    pub fn new_unchecked(
        ph: PhForm,
        b1: DMatrix<f64>,
        c1: DMatrix<f64>,
        d11: DMatrix<f64>,
        d12: DMatrix<f64>,
        d21: DMatrix<f64>,
    ) -> Result<Self> {
        let n = ph.states();
        let m = ph.ports();
        let m1 = b1.ncols();
        let p1 = c1.nrows();
        expect_shape("B1", &b1, n, m1)?;
        expect_shape("C1", &c1, p1, n)?;
        expect_shape("D11", &d11, p1, m1)?;
        expect_shape("D12", &d12, p1, m)?;
        expect_shape("D21", &d21, m, m1)?;
        Ok(Self { ph, b1, c1, d11, d12, d21 })
    }

    pub fn ph(&self) -> &PhForm {
        &self.ph
    }
    pub fn b1(&self) -> &DMatrix<f64> {
        &self.b1
    }
    pub fn c1(&self) -> &DMatrix<f64> {
        &self.c1
    }
    pub fn d11(&self) -> &DMatrix<f64> {
        &self.d11
    }
    pub fn d12(&self) -> &DMatrix<f64> {
        &self.d12
    }
    pub fn d21(&self) -> &DMatrix<f64> {
        &self.d21
    }

    pub fn states(&self) -> usize {
        self.ph.states()
    }
    /// Disturbance inputs `m₁`.
    pub fn disturbances(&self) -> usize {
        self.b1.ncols()
    }
    /// Performance outputs `p₁`.
    pub fn performance_outputs(&self) -> usize {
        self.c1.nrows()
    }
    /// Control inputs / measured outputs `m = p₂`.
    pub fn ports(&self) -> usize {
        self.ph.ports()
    }

    pub fn partitioned(&self) -> PartitionedPlant {
        let ss = self.ph.to_state_space();
        PartitionedPlant {
            a: ss.a().clone(),
            b1: self.b1.clone(),
            b2: ss.b().clone(),
            c1: self.c1.clone(),
            c2: ss.c().clone(),
            d11: self.d11.clone(),
            d12: self.d12.clone(),
            d21: self.d21.clone(),
            d22: ss.d().clone(),
        }
    }
}

/// Block layout of a controller parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaLayout {
    order: usize,
    ports: usize,
}

fn tri(n: usize) -> usize {
    n * (n + 1) / 2
}

fn strict_tri(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

impl ThetaLayout {
    pub fn new(order: usize, ports: usize) -> Self {
        Self { order, ports }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn ports(&self) -> usize {
        self.ports
    }

    pub fn len_j(&self) -> usize {
        strict_tri(self.order)
    }
    pub fn len_w(&self) -> usize {
        tri(self.order + self.ports)
    }
    pub fn len_q(&self) -> usize {
        tri(self.order)
    }
    pub fn len_g(&self) -> usize {
        self.order * self.ports
    }
    pub fn len_n(&self) -> usize {
        strict_tri(self.ports)
    }

    pub fn len(&self) -> usize {
        self.len_j() + self.len_w() + self.len_q() + self.len_g() + self.len_n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index ranges of the `(J, W, Q, G, N)` blocks, in that order.
    pub fn ranges(&self) -> [std::ops::Range<usize>; 5] {
        let lens = [self.len_j(), self.len_w(), self.len_q(), self.len_g(), self.len_n()];
        let mut start = 0;
        lens.map(|l| {
            let r = start..start + l;
            start += l;
            r
        })
    }
}

/// A controller parameter vector together with its block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    layout: ThetaLayout,
    data: DVector<f64>,
}

impl ThetaVector {
    pub fn new(layout: ThetaLayout, data: DVector<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::ThetaLength {
                got: data.len(),
                expected: layout.len(),
                order: layout.order,
                ports: layout.ports,
            });
        }
        Ok(Self { layout, data })
    }

    pub fn zeros(layout: ThetaLayout) -> Self {
        Self {
            layout,
            data: DVector::zeros(layout.len()),
        }
    }

    pub fn layout(&self) -> ThetaLayout {
        self.layout
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_data(self) -> DVector<f64> {
        self.data
    }

    pub fn block(&self, idx: usize) -> &[f64] {
        let r = self.layout.ranges()[idx].clone();
        &self.data.as_slice()[r]
    }

    pub fn theta_j(&self) -> &[f64] {
        self.block(0)
    }
    pub fn theta_w(&self) -> &[f64] {
        self.block(1)
    }
    pub fn theta_q(&self) -> &[f64] {
        self.block(2)
    }
    pub fn theta_g(&self) -> &[f64] {
        self.block(3)
    }
    pub fn theta_n(&self) -> &[f64] {
        self.block(4)
    }
}

/// Fills the upper triangle (diagonal included) row by row.
pub fn vec_to_upper(v: &[f64], dim: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), tri(dim));
    let mut m = DMatrix::zeros(dim, dim);
    let mut it = v.iter();
    for i in 0..dim {
        for j in i..dim {
            m[(i, j)] = *it.next().unwrap();
        }
    }
    m
}

/// Fills the strictly upper triangle row by row.
pub fn vec_to_strict_upper(v: &[f64], dim: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), strict_tri(dim));
    let mut m = DMatrix::zeros(dim, dim);
    let mut it = v.iter();
    for i in 0..dim {
        for j in (i + 1)..dim {
            m[(i, j)] = *it.next().unwrap();
        }
    }
    m
}

pub fn upper_to_vec(m: &DMatrix<f64>) -> Vec<f64> {
    let dim = m.nrows();
    let mut v = Vec::with_capacity(tri(dim));
    for i in 0..dim {
        for j in i..dim {
            v.push(m[(i, j)]);
        }
    }
    v
}

pub fn strict_upper_to_vec(m: &DMatrix<f64>) -> Vec<f64> {
    let dim = m.nrows();
    let mut v = Vec::with_capacity(strict_tri(dim));
    for i in 0..dim {
        for j in (i + 1)..dim {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// The matrices defined directly by a parameter vector, plus the triangular
/// factors they were built from.
#[derive(Debug, Clone)]
pub struct ControllerFactors {
    pub j: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub w_factor: DMatrix<f64>,
    pub q_factor: DMatrix<f64>,
}

pub fn unpack_parameters(theta: &ThetaVector) -> ControllerFactors {
    let k = theta.layout.order;
    let p = theta.layout.ports;
    let vj = vec_to_strict_upper(theta.theta_j(), k);
    let uw = vec_to_upper(theta.theta_w(), k + p);
    let uq = vec_to_upper(theta.theta_q(), k);
    let vn = vec_to_strict_upper(theta.theta_n(), p);
    ControllerFactors {
        j: vj.transpose() - &vj,
        w: uw.tr_mul(&uw),
        q: uq.tr_mul(&uq),
        g: DMatrix::from_column_slice(k, p, theta.theta_g()),
        n: vn.transpose() - &vn,
        w_factor: uw,
        q_factor: uq,
    }
}

/// Builds the port-Hamiltonian controller for `theta`, with `Q` shifted by
/// `shift · I`.
pub fn theta_to_controller(theta: &ThetaVector, shift: f64) -> PhForm {
    let k = theta.layout.order;
    let p = theta.layout.ports;
    let ControllerFactors { j, w, q, g, n, .. } = unpack_parameters(theta);
    let r = w.view((0, 0), (k, k)).into_owned();
    let f = w.view((0, k), (k, p)).into_owned();
    let s = w.view((k, k), (p, p)).into_owned();
    let q = q + DMatrix::identity(k, k) * shift;
    PhForm { j, r, q, g, f, s, n }
}

/// Recovers a parameter vector for a valid port-Hamiltonian realization,
/// using upper Cholesky factors with nonnegative diagonal for `W` and `Q`.
pub fn controller_to_theta(ph: &PhForm) -> Result<ThetaVector> {
    let tol = ToleranceSet::default();
    let k = ph.states();
    let p = ph.ports();
    let w = ph.passivity_matrix();
    let w_min = min_sym_eigenvalue(&w);
    if w_min < -tol.psd * spectral_norm(&w) {
        return Err(Error::Certificate(format!(
            "W is indefinite (smallest eigenvalue {w_min:e})"
        )));
    }
    let q_min = min_sym_eigenvalue(ph.q());
    if q_min < tol.pd {
        return Err(Error::Certificate(format!(
            "Q is not positive definite (smallest eigenvalue {q_min:e})"
        )));
    }
    let uw = psd_upper_cholesky(&w, 1e-13)
        .ok_or_else(|| Error::Certificate("semidefinite factorization of W failed".into()))?;
    let uq = psd_upper_cholesky(ph.q(), 0.0)
        .ok_or_else(|| Error::Certificate("Cholesky factorization of Q failed".into()))?;

    let layout = ThetaLayout::new(k, p);
    let mut data = Vec::with_capacity(layout.len());
    // J = Vᵀ - V with V strictly upper, so V_ij = -J_ij above the diagonal.
    data.extend(strict_upper_to_vec(ph.j()).iter().map(|x| -x));
    data.extend(upper_to_vec(&uw));
    data.extend(upper_to_vec(&uq));
    data.extend(ph.g().iter().copied());
    data.extend(strict_upper_to_vec(ph.n()).iter().map(|x| -x));
    ThetaVector::new(layout, DVector::from_vec(data))
}
