//! Dense linear-algebra helpers shared by the evaluation, norm and passivity
//! modules. Everything here works on `nalgebra` dynamic matrices.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen, SVD};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

pub(crate) const I: C64 = Complex { re: 0.0, im: 1.0 };

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex::new(x, 0.0))
}

/// Diagonal similarity scaling (Parlett-Reinsch with powers of two) that
/// reduces row/column norm imbalance before an eigenvalue computation.
pub fn balance(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut b = a.clone();
    if n < 2 {
        return b;
    }
    let radix = 2.0_f64;
    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < 100 {
        converged = true;
        sweeps += 1;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            let g = r / radix;
            while cc < g {
                f *= radix;
                cc *= radix * radix;
            }
            let g = r * radix;
            while cc > g {
                f /= radix;
                cc /= radix * radix;
            }
            if (cc + r) / f < 0.95 * s {
                converged = false;
                for j in 0..n {
                    b[(i, j)] /= f;
                }
                for j in 0..n {
                    b[(j, i)] *= f;
                }
            }
        }
    }
    b
}

/// Eigenvalues of a real square matrix (balanced, real Schur form).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<C64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!(
            "eigenvalues of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    match n {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![Complex::new(a[(0, 0)], 0.0)]),
        _ => {}
    }
    let b = balance(a);
    let schur = Schur::try_new(b, f64::EPSILON, 200 * n.max(10)).ok_or(Error::NoConvergence(n))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Maximum real part over the eigenvalues of `a`; `-inf` for an empty matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Eigen-decomposition of the Hermitian part of `m`, eigenvalues ascending
/// with matching eigenvector columns.
pub fn herm_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let h = (m + m.adjoint()) * Complex::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn herm_eigenvalues(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let h = (m + m.adjoint()) * Complex::new(0.5, 0.0);
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Singular values, descending.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn sigma_max(m: &CMatrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Thin SVD with singular values in descending order.
pub struct SortedSvd {
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

pub fn svd_sorted(m: &CMatrix) -> SortedSvd {
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = CMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = CMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)].conj());
    SortedSvd { u, sigma, v }
}

/// Factor a symmetric positive semidefinite matrix as `UᵀU` with `U` upper
/// triangular and a nonnegative diagonal, without pivoting. Pivots at or
/// below `tol` (relative to the largest diagonal entry) zero out the
/// corresponding row of `U`; a pivot below `-tol` means the matrix is
/// indefinite and `None` is returned.
pub fn psd_upper_cholesky(w: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let n = w.nrows();
    let w = (w + w.transpose()) * 0.5;
    let scale = (0..n).map(|i| w[(i, i)].abs()).fold(0.0, f64::max);
    let thresh = tol * scale.max(f64::MIN_POSITIVE);
    let mut u = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut d = w[(i, i)];
        for k in 0..i {
            d -= u[(k, i)] * u[(k, i)];
        }
        if d < -thresh {
            return None;
        }
        if d <= thresh {
            // Rank deficient direction: the remaining entries of this row
            // must vanish for an exact semidefinite factorization.
            for j in (i + 1)..n {
                let mut off = w[(i, j)];
                for k in 0..i {
                    off -= u[(k, i)] * u[(k, j)];
                }
                if off.abs() > thresh.sqrt() * scale.sqrt().max(1.0) {
                    return None;
                }
            }
            continue;
        }
        let p = d.sqrt();
        u[(i, i)] = p;
        for j in (i + 1)..n {
            let mut off = w[(i, j)];
            for k in 0..i {
                off -= u[(k, i)] * u[(k, j)];
            }
            u[(i, j)] = off / p;
        }
    }
    Some(u)
}

/// Factor a symmetric positive semidefinite matrix as `LLᵀ` using diagonal
/// pivoting. The returned `L` is a row permutation of a lower-triangular
/// matrix.
pub fn pivoted_psd_factor(p: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let n = p.nrows();
    let mut a = (p + p.transpose()) * 0.5;
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let thresh = tol * scale.max(f64::MIN_POSITIVE);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = DMatrix::zeros(n, n);
    for k in 0..n {
        let (piv, dmax) = (k..n)
            .map(|i| (i, a[(i, i)]))
            .fold((k, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        if dmax < -thresh {
            return None;
        }
        if dmax <= thresh {
            break;
        }
        if piv != k {
            a.swap_rows(k, piv);
            a.swap_columns(k, piv);
            l.swap_rows(k, piv);
            perm.swap(k, piv);
        }
        let d = a[(k, k)].sqrt();
        l[(k, k)] = d;
        for i in (k + 1)..n {
            l[(i, k)] = a[(i, k)] / d;
        }
        for j in (k + 1)..n {
            for i in (k + 1)..n {
                a[(i, j)] -= l[(i, k)] * l[(j, k)];
            }
        }
    }
    // Undo the permutation: P_orig = Πᵀ (L Lᵀ) Π.
    let mut out = DMatrix::zeros(n, n);
    for (row, &orig) in perm.iter().enumerate() {
        out.set_row(orig, &l.row(row));
    }
    Some(out)
}

/// Solve the upper-triangular system `(T + shift I) x = b` in place.
fn solve_upper_shifted(t: &CMatrix, shift: C64, b: &mut DVector<C64>) -> Result<()> {
    let n = t.nrows();
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in (i + 1)..n {
            acc -= t[(i, j)] * b[j];
        }
        let d = t[(i, i)] + shift;
        if d.norm() == 0.0 {
            return Err(Error::Certificate("singular triangular Sylvester system".into()));
        }
        b[i] = acc / d;
    }
    Ok(())
}

/// Solve the Lyapunov equation `A X + X Aᵀ + Q = 0` by the Bartels-Stewart
/// method on the complex Schur form of `A`. `Q` must be symmetric.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension("Lyapunov equation operands".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let schur = Schur::try_new(to_complex(a), f64::EPSILON, 200 * n.max(10))
        .ok_or(Error::NoConvergence(n))?;
    let (u, t) = schur.unpack();
    let qt = u.adjoint() * to_complex(q) * &u;
    // T Y + Y Tᴴ = -Q̃, columns from last to first.
    let mut y = CMatrix::zeros(n, n);
    for j in (0..n).rev() {
        let mut rhs: DVector<C64> = -qt.column(j).into_owned();
        for l in (j + 1)..n {
            let c = t[(j, l)].conj();
            rhs -= y.column(l) * c;
        }
        solve_upper_shifted(&t, t[(j, j)].conj(), &mut rhs)?;
        y.set_column(j, &rhs);
    }
    let x = &u * y * u.adjoint();
    let x = x.map(|z| z.re);
    Ok((&x + x.transpose()) * 0.5)
}

/// Greedy nearest-neighbour matching distance between two eigenvalue
/// multisets: the largest distance of a matched pair. `None` when the
/// multisets have different sizes.
pub fn eigenvalue_match_distance(a: &[C64], b: &[C64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut a: Vec<C64> = a.to_vec();
    let mut b: Vec<C64> = b.to_vec();
    let key = |z: &C64, w: &C64| z.re.total_cmp(&w.re).then(z.im.total_cmp(&w.im));
    a.sort_by(key);
    b.sort_by(key);
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for z in &a {
        let (idx, dist) = b
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, w)| (i, (z - w).norm()))
            .fold((usize::MAX, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        used[idx] = true;
        worst = worst.max(dist);
    }
    Some(worst)
}

/// `count` logarithmically spaced points on `[lo, hi]`.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}
