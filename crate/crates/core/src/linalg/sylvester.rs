//! Sylvester `A Pi + F = Pi S` and Lyapunov `A^T X + X A = -Q` solvers.
//!
//! The default path is a Bartels–Stewart solve on real Schur forms. Both
//! `A` and `S` are first split into decoupled diagonal blocks so that each
//! block pair is solved independently; pairs with a zero right-hand side are
//! skipped, their solution block being zero.

use nalgebra::DVector;

use super::blocks::{components, scatter, select};
use super::{
    ensure_finite, ensure_square, quasi_triangular_eigenvalues, real_schur, Complex64,
    Matrix, KRON_LIMIT, TOL_SPEC,
};
use crate::error::{Error, Result};

/// Residual tolerance used to reject a numerically bad block solve.
const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
struct Factor {
    idx: Vec<usize>,
    block: Matrix,
    q: Matrix,
    t: Matrix,
    /// (start, size) of the 1x1 and 2x2 diagonal blocks of `t`.
    parts: Vec<(usize, usize)>,
    eig: Vec<Complex64>,
}

fn diagonal_parts(t: &Matrix) -> Result<Vec<(usize, usize)>> {
    let n = t.nrows();
    let mut parts = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            if i + 2 < n && t[(i + 2, i + 1)] != 0.0 {
                return Err(Error::NumericalFailure(
                    "real Schur form has a diagonal block larger than 2x2".into(),
                ));
            }
            parts.push((i, 2));
            i += 2;
        } else {
            parts.push((i, 1));
            i += 1;
        }
    }
    Ok(parts)
}

fn factorize(m: &Matrix) -> Result<Vec<Factor>> {
    components(m)
        .into_iter()
        .map(|idx| {
            let block = select(m, &idx, &idx);
            let (q, t) = if idx.len() == 1 {
                (Matrix::identity(1, 1), block.clone())
            } else {
                real_schur(&block)?
            };
            let parts = diagonal_parts(&t)?;
            let eig = quasi_triangular_eigenvalues(&t);
            Ok(Factor { idx, block, q, t, parts, eig })
        })
        .collect()
}

/// Solves `t11 z - z t22 = r` for blocks of size at most 2.
fn solve_small(t11: &Matrix, t22: &Matrix, r: &Matrix) -> Result<Matrix> {
    let p = t11.nrows();
    let q = t22.nrows();
    let m = p * q;
    let mut k = Matrix::zeros(m, m);
    for j in 0..q {
        for i in 0..p {
            let row = i + p * j;
            for ii in 0..p {
                k[(row, ii + p * j)] += t11[(i, ii)];
            }
            for jj in 0..q {
                k[(row, i + p * jj)] -= t22[(jj, j)];
            }
        }
    }
    let rhs = DVector::from_column_slice(r.as_slice());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalFailure("singular diagonal block in Sylvester solve".into()))?;
    Ok(Matrix::from_column_slice(p, q, sol.as_slice()))
}

/// Solves `ta y - y ts = c` with both factors upper quasi-triangular.
fn quasi_triangular_solve(
    ta: &Matrix,
    pa: &[(usize, usize)],
    ts: &Matrix,
    ps: &[(usize, usize)],
    c: &Matrix,
) -> Result<Matrix> {
    let na = ta.nrows();
    let mut y = Matrix::zeros(na, ts.nrows());
    for &(cs, qn) in ps {
        let mut rhs = c.columns(cs, qn).clone_owned();
        if cs > 0 {
            rhs += y.columns(0, cs) * ts.view((0, cs), (cs, qn));
        }
        let tll = ts.view((cs, cs), (qn, qn)).clone_owned();
        for &(rs, pn) in pa.iter().rev() {
            let mut r = rhs.rows(rs, pn).clone_owned();
            let below = rs + pn;
            if below < na {
                r -= ta.view((rs, below), (pn, na - below)) * y.view((below, cs), (na - below, qn));
            }
            let tii = ta.view((rs, rs), (pn, pn)).clone_owned();
            let z = solve_small(&tii, &tll, &r)?;
            y.view_mut((rs, cs), (pn, qn)).copy_from(&z);
        }
    }
    Ok(y)
}

/// Prepared Sylvester solver for fixed `A` (n x n) and `S` (nu x nu).
///
/// Factorizations are computed once; `solve` can then be called for many
/// right-hand sides, as the nested series recursions do.
#[derive(Clone, Debug)]
pub struct SylvesterSolver {
    n: usize,
    nu: usize,
    a: Vec<Factor>,
    s: Vec<Factor>,
    separation: f64,
}

impl SylvesterSolver {
    pub fn new(a: &Matrix, s: &Matrix) -> Result<Self> {
        ensure_square(a, "A")?;
        ensure_square(s, "S")?;
        ensure_finite(a, "A")?;
        ensure_finite(s, "S")?;
        let fa = factorize(a)?;
        let fs = factorize(s)?;
        let mut separation = f64::INFINITY;
        for ca in &fa {
            for la in &ca.eig {
                for cs in &fs {
                    for ls in &cs.eig {
                        separation = separation.min((la - ls).norm());
                    }
                }
            }
        }
        if separation < TOL_SPEC {
            return Err(Error::SpectrumOverlap { separation, tol: TOL_SPEC });
        }
        Ok(Self { n: a.nrows(), nu: s.nrows(), a: fa, s: fs, separation })
    }

    /// Smallest distance between the spectra of `A` and `S`.
    pub fn separation(&self) -> f64 {
        self.separation
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.nu)
    }

    /// Returns `Pi` with `A Pi + F = Pi S`.
    pub fn solve(&self, f: &Matrix) -> Result<Matrix> {
        if f.shape() != (self.n, self.nu) {
            return Err(Error::DimensionMismatch(format!(
                "Sylvester rhs is {}x{}, expected {}x{}",
                f.nrows(),
                f.ncols(),
                self.n,
                self.nu
            )));
        }
        ensure_finite(f, "Sylvester rhs")?;
        let mut pi = Matrix::zeros(self.n, self.nu);
        for ca in &self.a {
            for cs in &self.s {
                let fb = select(f, &ca.idx, &cs.idx);
                if fb.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let c = -(ca.q.transpose() * &fb * &cs.q);
                let y = quasi_triangular_solve(&ca.t, &ca.parts, &cs.t, &cs.parts, &c)?;
                let block = &ca.q * y * cs.q.transpose();
                let res = (&ca.block * &block + &fb - &block * &cs.block).norm();
                let scale = ca.block.norm() * block.norm() + fb.norm() + block.norm() * cs.block.norm();
                if !(res <= RESIDUAL_TOL * scale) {
                    return Err(Error::NumericalFailure(format!(
                        "Sylvester block residual {res:.3e} exceeds tolerance"
                    )));
                }
                scatter(&mut pi, &ca.idx, &cs.idx, &block);
            }
        }
        Ok(pi)
    }
}

/// Solves `A Pi + F = Pi S` by Bartels–Stewart.
pub fn solve_sylvester(a: &Matrix, s: &Matrix, f: &Matrix) -> Result<Matrix> {
    SylvesterSolver::new(a, s)?.solve(f)
}

/// Solves `A Pi + F = Pi S` through the vectorized system
/// `(I (x) A - S^T (x) I) vec(Pi) = -vec(F)`. Intended for small problems and
/// as a reference.
pub fn solve_sylvester_kron(a: &Matrix, s: &Matrix, f: &Matrix) -> Result<Matrix> {
    solve_sylvester_kron_with_limit(a, s, f, KRON_LIMIT)
}

pub fn solve_sylvester_kron_with_limit(a: &Matrix, s: &Matrix, f: &Matrix, limit: usize) -> Result<Matrix> {
    ensure_square(a, "A")?;
    ensure_square(s, "S")?;
    let (n, nu) = (a.nrows(), s.nrows());
    if f.shape() != (n, nu) {
        return Err(Error::DimensionMismatch(format!(
            "Sylvester rhs is {}x{}, expected {n}x{nu}",
            f.nrows(),
            f.ncols()
        )));
    }
    let size = n * nu;
    if size > limit {
        return Err(Error::SizeLimitExceeded { size, limit });
    }
    let sa = super::spectrum(a)?;
    let ss = super::spectrum(s)?;
    let separation = sa.separation(&ss);
    if separation < TOL_SPEC {
        return Err(Error::SpectrumOverlap { separation, tol: TOL_SPEC });
    }
    let eye_nu = Matrix::identity(nu, nu);
    let eye_n = Matrix::identity(n, n);
    let k = eye_nu.kronecker(a) - s.transpose().kronecker(&eye_n);
    let rhs = -DVector::from_column_slice(f.as_slice());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalFailure("singular Kronecker system".into()))?;
    Ok(Matrix::from_column_slice(n, nu, sol.as_slice()))
}

/// Prepared solver for `A^T X + X A = -Q` with `A` Hurwitz.
#[derive(Clone, Debug)]
pub struct LyapunovSolver {
    inner: SylvesterSolver,
}

impl LyapunovSolver {
    pub fn new(a: &Matrix) -> Result<Self> {
        ensure_square(a, "A")?;
        let spec = super::spectrum(a)?;
        if spec.max_real() >= 0.0 {
            return Err(Error::NotHurwitz { max_real: spec.max_real() });
        }
        // A^T X + Q = X (-A)
        let inner = SylvesterSolver::new(&a.transpose(), &(-a))?;
        Ok(Self { inner })
    }

    pub fn solve(&self, q: &Matrix) -> Result<Matrix> {
        let asym = (q - q.transpose()).norm();
        if asym > 1e-8 * q.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::invalid("Lyapunov right-hand side must be symmetric"));
        }
        let x = self.inner.solve(q)?;
        Ok((&x + x.transpose()) * 0.5)
    }
}

/// Solves `A^T X + X A = -Q`; the result is symmetrized.
pub fn solve_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    LyapunovSolver::new(a)?.solve(q)
}
