//! Frequency-domain evaluation of plants, controllers and their feedback
//! interconnection, plus time-domain simulation.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use nalgebra::linalg::Hessenberg;
use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, to_complex, CMatrix, C64, I};
use crate::ph::{PartitionedPlant, PhForm, PhPlant};
use crate::statespace::StateSpace;

/// Sign convention of the controller loop.
///
/// `Positive`: `u = y_K`, `u_K = y`. `Negative`: `u = -y_K`, `u_K = y`,
/// the coupling under which two port-Hamiltonian systems interconnect
/// passively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeedbackSign {
    Positive,
    #[default]
    Negative,
}

impl FeedbackSign {
    pub fn factor(self) -> f64 {
        match self {
            FeedbackSign::Positive => 1.0,
            FeedbackSign::Negative => -1.0,
        }
    }
}

/// Solve `M x = rhs` by partial-pivoting LU, reporting `None` when `M` is
/// numerically singular.
pub(crate) fn lu_solve(m: CMatrix, rhs: &CMatrix) -> Option<CMatrix> {
    let n = m.nrows();
    if n == 0 {
        return Some(rhs.clone());
    }
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let lu = m.lu();
    let u = lu.u();
    let min_piv = (0..n).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    if !(min_piv > f64::EPSILON * scale * n as f64) {
        return None;
    }
    lu.solve(rhs)
}

fn shifted(a: &DMatrix<f64>, s: C64) -> CMatrix {
    let n = a.nrows();
    let mut m = to_complex(a).map(|z| -z);
    for i in 0..n {
        m[(i, i)] += s;
    }
    m
}

/// `C (sI - A)⁻¹ B + D`, via one LU factorization of `sI - A`.
pub fn eval_transfer(ss: &StateSpace, s: C64) -> Result<CMatrix> {
    let d = to_complex(ss.d());
    if ss.states() == 0 {
        return Ok(d);
    }
    let x = lu_solve(shifted(ss.a(), s), &to_complex(ss.b())).ok_or(Error::PoleAtSample { s })?;
    Ok(to_complex(ss.c()) * x + d)
}

/// The four blocks of the plant transfer matrix at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantEvaluation {
    pub omega: f64,
    pub p11: CMatrix,
    pub p12: CMatrix,
    pub p21: CMatrix,
    pub p22: CMatrix,
}

/// Block sizes of a two-port plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantDims {
    /// Disturbance inputs.
    pub m1: usize,
    /// Performance outputs.
    pub p1: usize,
    /// Control inputs.
    pub m: usize,
    /// Measured outputs.
    pub p2: usize,
}

/// Evaluates all four plant blocks at an arbitrary complex point, reusing a
/// single factorization of `sI - A`.
pub fn eval_plant(plant: &PhPlant, s: C64) -> Result<PlantEvaluation> {
    let pp = plant.partitioned();
    let n = pp.states();
    let (m1, m) = (pp.b1.ncols(), pp.b2.ncols());
    let mut b = DMatrix::zeros(n, m1 + m);
    b.view_mut((0, 0), (n, m1)).copy_from(&pp.b1);
    b.view_mut((0, m1), (n, m)).copy_from(&pp.b2);
    let x = lu_solve(shifted(&pp.a, s), &to_complex(&b)).ok_or(Error::PoleAtSample { s })?;
    let (x1, x2) = (x.columns(0, m1).into_owned(), x.columns(m1, m).into_owned());
    let (c1, c2) = (to_complex(&pp.c1), to_complex(&pp.c2));
    Ok(PlantEvaluation {
        omega: s.im,
        p11: &c1 * &x1 + to_complex(&pp.d11),
        p12: &c1 * &x2 + to_complex(&pp.d12),
        p21: &c2 * &x1 + to_complex(&pp.d21),
        p22: &c2 * &x2 + to_complex(&pp.d22),
    })
}

/// Source of plant frequency-response data on the imaginary axis.
///
/// Implemented by the state-space evaluator and by tabulated plant samples.
pub trait PlantResponse: Send + Sync {
    fn dims(&self) -> PlantDims;

    /// Plant blocks at `s = iω`.
    fn evaluate(&self, omega: f64) -> Result<Arc<PlantEvaluation>>;

    /// Frequencies available on `[lo, hi]`, about `count` of them. Models
    /// return a log-spaced grid; tabulated data returns a subset of its own
    /// frequencies.
    fn grid(&self, lo: f64, hi: f64, count: usize) -> Vec<f64>;

    /// Number of `(sI - A)` factorizations performed so far.
    fn factorizations(&self) -> usize {
        0
    }

    /// The underlying model, when one exists.
    fn model(&self) -> Option<&PhPlant> {
        None
    }
}

/// Cached plant evaluator on the imaginary axis. The state matrix is reduced
/// to upper Hessenberg form once, so each new frequency costs one O(n²)
/// Hessenberg solve instead of a dense factorization.
pub struct PlantEvaluator {
    plant: PhPlant,
    dims: PlantDims,
    h: DMatrix<f64>,
    b: CMatrix,
    c1: CMatrix,
    c2: CMatrix,
    d11: CMatrix,
    d12: CMatrix,
    d21: CMatrix,
    d22: CMatrix,
    cache: RwLock<HashMap<u64, Arc<PlantEvaluation>>>,
    factorizations: AtomicUsize,
}

impl PlantEvaluator {
    pub fn new(plant: &PhPlant) -> Self {
        let pp = plant.partitioned();
        let n = pp.states();
        let (m1, m) = (pp.b1.ncols(), pp.b2.ncols());
        let (q, h) = Hessenberg::new(pp.a.clone()).unpack();
        let mut b = DMatrix::zeros(n, m1 + m);
        b.view_mut((0, 0), (n, m1)).copy_from(&pp.b1);
        b.view_mut((0, m1), (n, m)).copy_from(&pp.b2);
        let b = q.transpose() * b;
        let c1 = &pp.c1 * &q;
        let c2 = &pp.c2 * &q;
        Self {
            plant: plant.clone(),
            dims: PlantDims {
                m1,
                p1: pp.c1.nrows(),
                m,
                p2: pp.c2.nrows(),
            },
            h,
            b: to_complex(&b),
            c1: to_complex(&c1),
            c2: to_complex(&c2),
            d11: to_complex(&pp.d11),
            d12: to_complex(&pp.d12),
            d21: to_complex(&pp.d21),
            d22: to_complex(&pp.d22),
            cache: RwLock::new(HashMap::new()),
            factorizations: AtomicUsize::new(0),
        }
    }

    pub fn plant(&self) -> &PhPlant {
        &self.plant
    }

    pub fn cached_points(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    fn compute(&self, omega: f64) -> Result<PlantEvaluation> {
        let s = I * omega;
        self.factorizations.fetch_add(1, Ordering::Relaxed);
        let x = hessenberg_solve(&self.h, s, &self.b).ok_or(Error::PoleAtSample { s })?;
        let PlantDims { m1, m, .. } = self.dims;
        let (x1, x2) = (x.columns(0, m1), x.columns(m1, m));
        Ok(PlantEvaluation {
            omega,
            p11: &self.c1 * x1 + &self.d11,
            p12: &self.c1 * x2 + &self.d12,
            p21: &self.c2 * x1 + &self.d21,
            p22: &self.c2 * x2 + &self.d22,
        })
    }
}

impl PlantResponse for PlantEvaluator {
    fn dims(&self) -> PlantDims {
        self.dims
    }

    fn evaluate(&self, omega: f64) -> Result<Arc<PlantEvaluation>> {
        let key = omega.to_bits();
        if let Some(hit) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let fresh = Arc::new(self.compute(omega)?);
        let mut cache = self.cache.write().expect("cache lock");
        Ok(Arc::clone(cache.entry(key).or_insert(fresh)))
    }

    fn grid(&self, lo: f64, hi: f64, count: usize) -> Vec<f64> {
        crate::linalg::logspace(lo, hi, count)
    }

    fn factorizations(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }

    fn model(&self) -> Option<&PhPlant> {
        Some(&self.plant)
    }
}

/// Solve `(sI - H) X = R` for upper Hessenberg `H` by Gaussian elimination
/// with adjacent-row pivoting. Returns `None` on a zero pivot.
pub fn hessenberg_solve(h: &DMatrix<f64>, s: C64, rhs: &CMatrix) -> Option<CMatrix> {
    let n = h.nrows();
    let r = rhs.ncols();
    if n == 0 {
        return Some(rhs.clone());
    }
    // Row-major working copy of the Hessenberg band and everything above.
    let mut m: Vec<C64> = vec![Complex::new(0.0, 0.0); n * n];
    let mut scale: f64 = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            let v = if i == j { s - h[(i, j)] } else { Complex::new(-h[(i, j)], 0.0) };
            scale = scale.max(v.norm());
            m[i * n + j] = v;
        }
    }
    let mut x: Vec<C64> = vec![Complex::new(0.0, 0.0); n * r];
    for i in 0..n {
        for c in 0..r {
            x[i * r + c] = rhs[(i, c)];
        }
    }
    let tiny = f64::EPSILON * scale * n as f64;
    for k in 0..n.saturating_sub(1) {
        let below = m[(k + 1) * n + k];
        if below.norm() > m[k * n + k].norm() {
            for j in k..n {
                m.swap(k * n + j, (k + 1) * n + j);
            }
            for c in 0..r {
                x.swap(k * r + c, (k + 1) * r + c);
            }
        }
        let piv = m[k * n + k];
        if !(piv.norm() > tiny) {
            return None;
        }
        let l = m[(k + 1) * n + k] / piv;
        if l.norm() != 0.0 {
            m[(k + 1) * n + k] = Complex::new(0.0, 0.0);
            for j in (k + 1)..n {
                let v = m[k * n + j];
                m[(k + 1) * n + j] -= l * v;
            }
            for c in 0..r {
                let v = x[k * r + c];
                x[(k + 1) * r + c] -= l * v;
            }
        }
    }
    if !(m[(n - 1) * n + (n - 1)].norm() > tiny) {
        return None;
    }
    for i in (0..n).rev() {
        let piv = m[i * n + i];
        for c in 0..r {
            let mut acc = x[i * r + c];
            for j in (i + 1)..n {
                acc -= m[i * n + j] * x[j * r + c];
            }
            x[i * r + c] = acc / piv;
        }
    }
    Some(CMatrix::from_row_slice(n, r, &x))
}

/// Closed-loop response `P11 + σ P12 K (I - σ P22 K)⁻¹ P21`, with `σ = ±1`
/// from the feedback sign.
pub fn lower_lft(pe: &PlantEvaluation, k: &CMatrix, sign: FeedbackSign) -> Result<CMatrix> {
    let sigma = Complex::new(sign.factor(), 0.0);
    let p = pe.p22.nrows();
    if k.shape() != (pe.p12.ncols(), p) {
        return Err(Error::Dimension(format!(
            "controller response is {}x{}, expected {}x{}",
            k.nrows(),
            k.ncols(),
            pe.p12.ncols(),
            p
        )));
    }
    let lhs = CMatrix::identity(p, p) - &pe.p22 * k * sigma;
    let z = lu_solve(lhs, &pe.p21).ok_or(Error::IllPosed { omega: Some(pe.omega) })?;
    Ok(&pe.p11 + &pe.p12 * k * z * sigma)
}

/// Block matrix `[[I, -σ D_K], [-D22, I]]` whose inverse appears in every
/// closed-loop formula.
fn well_posedness_matrix(d22: &DMatrix<f64>, dk: &DMatrix<f64>, sign: FeedbackSign) -> DMatrix<f64> {
    let (m, p) = (d22.ncols(), d22.nrows());
    let mut w = DMatrix::identity(m + p, m + p);
    w.view_mut((0, m), (m, p)).copy_from(&(dk * -sign.factor()));
    w.view_mut((m, 0), (p, m)).copy_from(&(-d22));
    w
}

fn check_controller(pp: &PartitionedPlant, ctrl: &StateSpace) -> Result<()> {
    if ctrl.inputs() != pp.c2.nrows() || ctrl.outputs() != pp.b2.ncols() {
        return Err(Error::Dimension(format!(
            "controller is {}x{}, plant loop needs {}x{}",
            ctrl.outputs(),
            ctrl.inputs(),
            pp.b2.ncols(),
            pp.c2.nrows()
        )));
    }
    Ok(())
}

/// Interconnection data shared by the closed-loop matrix and the closed-loop
/// realization: `[u; y] = M⁻¹ ([[0, σC_K], [C2, 0]] [x; x_K] + [0; D21] w)`.
struct LoopSolution {
    /// `M⁻¹ [[0, σC_K], [C2, 0]]`, (m + p) x (n + k)
    state_map: DMatrix<f64>,
    /// `M⁻¹ [0; D21]`, (m + p) x m1
    input_map: DMatrix<f64>,
}

fn solve_loop(pp: &PartitionedPlant, ctrl: &StateSpace, sign: FeedbackSign) -> Result<LoopSolution> {
    check_controller(pp, ctrl)?;
    let (n, k) = (pp.states(), ctrl.states());
    let (m, p, m1) = (pp.b2.ncols(), pp.c2.nrows(), pp.b1.ncols());
    let wp = well_posedness_matrix(&pp.d22, ctrl.d(), sign);
    let lu = wp.lu();
    if !lu.is_invertible() {
        return Err(Error::IllPosed { omega: None });
    }
    let mut rhs = DMatrix::zeros(m + p, n + k);
    rhs.view_mut((0, n), (m, k)).copy_from(&(ctrl.c() * sign.factor()));
    rhs.view_mut((m, 0), (p, n)).copy_from(&pp.c2);
    let mut rhs_w = DMatrix::zeros(m + p, m1);
    rhs_w.view_mut((m, 0), (p, m1)).copy_from(&pp.d21);
    let state_map = lu.solve(&rhs).ok_or(Error::IllPosed { omega: None })?;
    let input_map = lu.solve(&rhs_w).ok_or(Error::IllPosed { omega: None })?;
    if !(state_map.iter().chain(input_map.iter()).all(|v| v.is_finite())) {
        return Err(Error::IllPosed { omega: None });
    }
    Ok(LoopSolution { state_map, input_map })
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

/// State matrix of the plant/controller interconnection, in the coordinates
/// `(x, x_K)`.
pub fn closed_loop_matrix(pp: &PartitionedPlant, ctrl: &StateSpace, sign: FeedbackSign) -> Result<DMatrix<f64>> {
    let sol = solve_loop(pp, ctrl, sign)?;
    Ok(block_diag(&pp.a, ctrl.a()) + block_diag(&pp.b2, ctrl.b()) * sol.state_map)
}

/// Realization of the closed loop from `w` to `z`.
pub fn closed_loop_statespace(pp: &PartitionedPlant, ctrl: &StateSpace, sign: FeedbackSign) -> Result<StateSpace> {
    let sol = solve_loop(pp, ctrl, sign)?;
    let (n, k) = (pp.states(), ctrl.states());
    let (m, p1, m1) = (pp.b2.ncols(), pp.c1.nrows(), pp.b1.ncols());
    let bd = block_diag(&pp.b2, ctrl.b());
    let a = block_diag(&pp.a, ctrl.a()) + &bd * &sol.state_map;
    let mut b = DMatrix::zeros(n + k, m1);
    b.view_mut((0, 0), (n, m1)).copy_from(&pp.b1);
    let b = b + &bd * &sol.input_map;
    // z = C1 x + D11 w + D12 u, with u the first m rows of the loop solution.
    let mut c = DMatrix::zeros(p1, n + k);
    c.view_mut((0, 0), (p1, n)).copy_from(&pp.c1);
    let c = c + &pp.d12 * sol.state_map.rows(0, m);
    let d = &pp.d11 + &pp.d12 * sol.input_map.rows(0, m);
    StateSpace::new(a, b, c, d)
}

/// A matrix pencil `sE - M`.
#[derive(Debug, Clone)]
pub struct MatrixPencil {
    pub e: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

/// Eigenvalues of a regular pencil split into finite values and a count of
/// infinite ones.
#[derive(Debug, Clone)]
pub struct PencilSpectrum {
    pub finite: Vec<C64>,
    pub infinite: usize,
}

impl MatrixPencil {
    pub fn dim(&self) -> usize {
        self.e.nrows()
    }

    /// Generalized eigenvalues via the shift-and-invert transformation
    /// `(M - τE)⁻¹E`: an eigenvalue `ν` of the transformed matrix maps to
    /// `τ + 1/ν`, and `ν = 0` marks an infinite eigenvalue. `τ` is chosen
    /// to the right of the spectrum's bounding disc.
    pub fn eigenvalues(&self) -> Result<PencilSpectrum> {
        let n = self.dim();
        let norm_m = self.m.norm();
        let norm_e = self.e.norm().max(1e-300);
        let mut tau = 1.0 + norm_m / norm_e;
        let mut solved = None;
        for _ in 0..8 {
            let shifted = &self.m - &self.e * tau;
            let lu = shifted.lu();
            if let Some(t) = lu.solve(&self.e) {
                if t.iter().all(|v| v.is_finite()) {
                    solved = Some(t);
                    break;
                }
            }
            tau = tau * 1.7 + 0.31;
        }
        let t = solved.ok_or_else(|| Error::Certificate("pencil appears singular".into()))?;
        let nu = eigenvalues(&t)?;
        let nu_scale = nu.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let cut = 1e-10 * nu_scale.max(f64::MIN_POSITIVE);
        let mut finite = Vec::with_capacity(n);
        let mut infinite = 0;
        for z in nu {
            if z.norm() <= cut {
                infinite += 1;
            } else {
                finite.push(Complex::new(tau, 0.0) + Complex::new(1.0, 0.0) / z);
            }
        }
        Ok(PencilSpectrum { finite, infinite })
    }
}

/// The interconnection pencil of a port-Hamiltonian plant and controller with
/// the port variables kept as algebraic unknowns:
///
/// ```text
/// [ sI - (J-R)Q        0              -G+F      0     ]
/// [ 0            sI - (J_K-R_K)Q_K     0     -G_K+F_K ]
/// [ (G+F)ᵀQ            0              S-N       I     ]
/// [ 0            (G_K+F_K)ᵀQ_K        -I     S_K-N_K  ]
/// ```
pub fn closed_loop_pencil(plant: &PhPlant, ctrl: &PhForm) -> Result<MatrixPencil> {
    let p = plant.ph().to_state_space();
    let c = ctrl.to_state_space();
    let (n, k, m) = (p.states(), c.states(), p.inputs());
    if c.inputs() != m || c.outputs() != m {
        return Err(Error::Dimension(format!(
            "controller has {} ports, plant has {}",
            c.inputs(),
            m
        )));
    }
    let dim = n + k + 2 * m;
    let mut e = DMatrix::zeros(dim, dim);
    e.view_mut((0, 0), (n + k, n + k)).fill_with_identity();
    // M such that the printed pencil equals sE - M.
    let mut mm = DMatrix::zeros(dim, dim);
    mm.view_mut((0, 0), (n, n)).copy_from(p.a());
    mm.view_mut((n, n), (k, k)).copy_from(c.a());
    mm.view_mut((0, n + k), (n, m)).copy_from(p.b());
    mm.view_mut((n, n + k + m), (k, m)).copy_from(c.b());
    mm.view_mut((n + k, 0), (m, n)).copy_from(&(-p.c()));
    mm.view_mut((n + k, n + k), (m, m)).copy_from(&(-p.d()));
    mm.view_mut((n + k, n + k + m), (m, m)).copy_from(&(-DMatrix::<f64>::identity(m, m)));
    mm.view_mut((n + k + m, n), (m, k)).copy_from(&(-c.c()));
    mm.view_mut((n + k + m, n + k), (m, m)).fill_with_identity();
    mm.view_mut((n + k + m, n + k + m), (m, m)).copy_from(&(-c.d()));
    Ok(MatrixPencil { e, m: mm })
}

/// Sampled states and outputs at `t_j = j·dt`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

/// Fixed-step classical Runge-Kutta integration with zero-order-hold
/// input. `inputs[j]` is applied on `[t_j, t_{j+1})`; the result has
/// `inputs.len() + 1` samples, the last output using the last input.
pub fn simulate_lti(ss: &StateSpace, inputs: &[DVector<f64>], x0: &DVector<f64>, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::Dimension(format!("time step must be positive, got {dt}")));
    }
    if x0.len() != ss.states() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, expected {}",
            x0.len(),
            ss.states()
        )));
    }
    if let Some(u) = inputs.iter().find(|u| u.len() != ss.inputs()) {
        return Err(Error::Dimension(format!(
            "input sample has length {}, expected {}",
            u.len(),
            ss.inputs()
        )));
    }
    let (a, b, c, d) = (ss.a(), ss.b(), ss.c(), ss.d());
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut outputs = Vec::with_capacity(inputs.len() + 1);
    let mut x = x0.clone();
    for u in inputs {
        outputs.push(c * &x + d * u);
        states.push(x.clone());
        let bu = b * u;
        let f = |x: &DVector<f64>| a * x + &bu;
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (0.5 * dt)));
        let k3 = f(&(&x + &k2 * (0.5 * dt)));
        let k4 = f(&(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    let last_u = inputs.last().cloned().unwrap_or_else(|| DVector::zeros(ss.inputs()));
    outputs.push(c * &x + d * &last_u);
    states.push(x);
    Ok(Trajectory { states, outputs })
}

/// Trapezoidal approximation of `∫ yᵀu dt` along a zero-order-hold
/// trajectory produced by [`simulate_lti`].
pub fn supplied_energy(ss: &StateSpace, traj: &Trajectory, inputs: &[DVector<f64>], dt: f64) -> f64 {
    let (c, d) = (ss.c(), ss.d());
    inputs
        .iter()
        .enumerate()
        .map(|(j, u)| {
            let y0 = c * &traj.states[j] + d * u;
            let y1 = c * &traj.states[j + 1] + d * u;
            0.5 * dt * (y0.dot(u) + y1.dot(u))
        })
        .sum()
}
