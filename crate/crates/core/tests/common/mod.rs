//! Random system generators and reference evaluations shared by the
//! integration tests. The reference routines use plain dense algebra and
//! none of the library's evaluation code.

#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use rand::rngs::StdRng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use phsyn::ph::{theta_to_controller, ThetaLayout, ThetaVector, DEFAULT_Q_SHIFT};
use phsyn::{PhForm, PhPlant, StateSpace};

pub type C = Complex<f64>;
pub type CM = DMatrix<C>;

pub fn gaussian(rng: &mut StdRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random port-Hamiltonian realization with full-rank `W` and
/// well-conditioned `Q`.
pub fn random_ph(rng: &mut StdRng, n: usize, m: usize) -> PhForm {
    let v = gaussian(rng, n, n);
    let j = (&v - v.transpose()) * 0.5;
    let uw = gaussian(rng, n + m, n + m) / ((n + m) as f64).sqrt();
    let w = uw.tr_mul(&uw) + DMatrix::identity(n + m, n + m) * 0.05;
    let uq = gaussian(rng, n, n) / (n as f64).sqrt();
    let q = uq.tr_mul(&uq) + DMatrix::identity(n, n) * 0.2;
    let vn = gaussian(rng, m, m);
    let nn = (&vn - vn.transpose()) * 0.5;
    PhForm::new(
        j,
        w.view((0, 0), (n, n)).into_owned(),
        q,
        gaussian(rng, n, m),
        w.view((0, n), (n, m)).into_owned(),
        w.view((n, n), (m, m)).into_owned(),
        nn,
    )
    .unwrap()
}

pub fn random_plant(rng: &mut StdRng, n: usize, m: usize, m1: usize, p1: usize) -> PhPlant {
    let ph = random_ph(rng, n, m);
    PhPlant::new(
        ph,
        gaussian(rng, n, m1),
        gaussian(rng, p1, n),
        gaussian(rng, p1, m1) * 0.1,
        gaussian(rng, p1, m),
        gaussian(rng, m, m1),
    )
    .unwrap()
}

pub fn random_theta(rng: &mut StdRng, k: usize, p: usize) -> ThetaVector {
    let layout = ThetaLayout::new(k, p);
    let data: Vec<f64> = (0..layout.len()).map(|_| StandardNormal.sample(rng)).collect();
    ThetaVector::new(layout, DVector::from_vec(data)).unwrap()
}

pub fn random_controller(rng: &mut StdRng, k: usize, p: usize) -> PhForm {
    theta_to_controller(&random_theta(rng, k, p), DEFAULT_Q_SHIFT)
}

/// Stable system with a prescribed modal structure.
///
/// `A = V Λ V⁻¹` where `Λ` is block diagonal with real poles and lightly to
/// moderately damped complex pairs. The modal data are kept so that
/// [`ModalSystem::response`] can evaluate the transfer function in
/// `O(n·p·m)` without touching the dense realization.
pub struct ModalSystem {
    pub ss: StateSpace,
    /// Pole list: `(re, im)` with `im ≥ 0`; pairs occupy two states.
    poles: Vec<(f64, f64)>,
    bm: DMatrix<f64>,
    cm: DMatrix<f64>,
}

impl ModalSystem {
    pub fn random(rng: &mut StdRng, n: usize, m: usize, p: usize, min_damping: f64) -> Self {
        let mut poles = Vec::new();
        let mut states = 0;
        while states < n {
            let mag = 10f64.powf(rng.random_range(-1.5..1.5));
            if n - states >= 2 && rng.random_bool(0.6) {
                let zeta: f64 = rng.random_range(min_damping..0.7);
                poles.push((-zeta * mag, mag * (1.0 - zeta * zeta).sqrt()));
                states += 2;
            } else {
                poles.push((-mag, 0.0));
                states += 1;
            }
        }
        let mut lam = DMatrix::zeros(n, n);
        let mut i = 0;
        for &(re, im) in &poles {
            if im == 0.0 {
                lam[(i, i)] = re;
                i += 1;
            } else {
                lam[(i, i)] = re;
                lam[(i + 1, i + 1)] = re;
                lam[(i, i + 1)] = im;
                lam[(i + 1, i)] = -im;
                i += 2;
            }
        }
        let v = gaussian(rng, n, n) + DMatrix::identity(n, n) * 2.0;
        let vinv = v.clone().try_inverse().unwrap();
        let a = &v * &lam * &vinv;
        let bm = gaussian(rng, n, m);
        let cm = gaussian(rng, p, n);
        let d = gaussian(rng, p, m) * 0.1;
        let ss = StateSpace::new(a, &v * &bm, &cm * &vinv, d).unwrap();
        Self { ss, poles, bm, cm }
    }

    /// `C_m (iωI - Λ)⁻¹ B_m + D`, block by block.
    pub fn response(&self, omega: f64) -> CM {
        let s = C::new(0.0, omega);
        let (p, m) = (self.cm.nrows(), self.bm.ncols());
        let mut out = self.ss.d().map(|x| C::new(x, 0.0));
        let mut i = 0;
        for &(re, im) in &self.poles {
            if im == 0.0 {
                let g = C::new(1.0, 0.0) / (s - re);
                for r in 0..p {
                    for c in 0..m {
                        out[(r, c)] += self.cm[(r, i)] * g * self.bm[(i, c)];
                    }
                }
                i += 1;
            } else {
                // (sI - [[a, b], [-b, a]])⁻¹ = [[s-a, b], [-b, s-a]] / ((s-a)² + b²)
                let sa = s - re;
                let det = sa * sa + im * im;
                let inv = [[sa / det, C::new(im, 0.0) / det], [C::new(-im, 0.0) / det, sa / det]];
                for r in 0..p {
                    for c in 0..m {
                        let mut acc = C::new(0.0, 0.0);
                        for (x, row) in inv.iter().enumerate() {
                            for (y, val) in row.iter().enumerate() {
                                acc += self.cm[(r, i + x)] * val * self.bm[(i + y, c)];
                            }
                        }
                        out[(r, c)] += acc;
                    }
                }
                i += 2;
            }
        }
        out
    }

    pub fn pole_magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.poles.iter().map(|&(re, im)| (re * re + im * im).sqrt())
    }
}

pub fn complex(m: &DMatrix<f64>) -> CM {
    m.map(|x| C::new(x, 0.0))
}

/// `C (sI - A)⁻¹ B + D` with a dense complex LU solve.
pub fn dense_transfer(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>, s: C) -> CM {
    let n = a.nrows();
    let m = CM::from_diagonal_element(n, n, s) - complex(a);
    let x = m.lu().solve(&complex(b)).expect("pole at sample");
    complex(c) * x + complex(d)
}

pub fn ss_transfer(ss: &StateSpace, s: C) -> CM {
    dense_transfer(ss.a(), ss.b(), ss.c(), ss.d(), s)
}

pub fn sigma_max(m: &CM) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

pub fn singular_values_desc(m: &CM) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Golden-section maximization of `f` on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 > f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Maximum of `f` over a log-spaced grid on `[lo, hi]` plus `ω = 0`, with
/// the best `refine` local maxima polished by golden-section search.
pub fn refined_grid_max(f: impl Fn(f64) -> f64 + Sync, lo: f64, hi: f64, points: usize, refine: usize) -> f64 {
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| lo * (ratio * i as f64).exp()).collect();
    let vals: Vec<f64> = grid.iter().map(|&w| f(w)).collect();
    let mut best = f(0.0).max(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let mut peaks: Vec<usize> = (1..points - 1)
        .filter(|&i| vals[i] >= vals[i - 1] && vals[i] >= vals[i + 1])
        .collect();
    peaks.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    for &i in peaks.iter().take(refine) {
        let (_, v) = golden_max(&f, grid[i - 1], grid[i + 1], 80);
        best = best.max(v);
    }
    best
}

/// Greedy nearest matching distance between two eigenvalue lists.
pub fn match_distance(a: &[C], b: &[C]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&x, &y| a[x].re.total_cmp(&a[y].re).then(a[x].im.total_cmp(&a[y].im)));
    for &i in &order {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, z)| (j, (a[i] - z).norm()))
            .fold((usize::MAX, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        used[j] = true;
        worst = worst.max(d);
    }
    Some(worst)
}
