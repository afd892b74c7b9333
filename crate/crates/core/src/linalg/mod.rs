//! Dense linear-algebra kernels: Sylvester and Lyapunov solvers, spectra,
//! ranks, least squares and definiteness tests.
//!
//! All routines are pure functions of their inputs.

pub mod blocks;
mod expm;
mod sylvester;

pub use expm::expm;
pub use sylvester::{
    solve_lyapunov, solve_sylvester, solve_sylvester_kron, solve_sylvester_kron_with_limit,
    LyapunovSolver, SylvesterSolver,
};

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type Complex64 = Complex<f64>;
pub type CMatrix = DMatrix<Complex64>;

/// Absolute eigenvalue separation below which two spectra count as overlapping.
pub const TOL_SPEC: f64 = 1e-10;
/// Singular values below `RANK_TOL * sigma_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Largest `n * nu` accepted by the Kronecker Sylvester solver.
pub const KRON_LIMIT: usize = 4000;

const SCHUR_MAX_ITER: usize = 100_000;

/// Eigenvalues of a real square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn max_real(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest distance between an eigenvalue of `self` and one of `other`.
    pub fn separation(&self, other: &Spectrum) -> f64 {
        let mut best = f64::INFINITY;
        for a in &self.eigenvalues {
            for b in &other.eigenvalues {
                best = best.min((a - b).norm());
            }
        }
        best
    }
}

/// Checks that every entry is finite.
pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

pub(crate) fn ensure_square(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() == m.ncols() && m.nrows() > 0 {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what} must be square and nonempty, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Real Schur factorization `m = q t q^T` with `t` quasi upper triangular.
pub(crate) fn real_schur(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("Schur decomposition did not converge".into()))?;
    Ok(schur.unpack())
}

/// Eigenvalues of the diagonal blocks of a quasi upper triangular matrix.
pub(crate) fn quasi_triangular_eigenvalues(t: &Matrix) -> Vec<Complex64> {
    let n = t.nrows();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let half_tr = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc >= 0.0 {
                let r = disc.sqrt();
                out.push(Complex64::new(half_tr + r, 0.0));
                out.push(Complex64::new(half_tr - r, 0.0));
            } else {
                let r = (-disc).sqrt();
                out.push(Complex64::new(half_tr, r));
                out.push(Complex64::new(half_tr, -r));
            }
            i += 2;
        } else {
            out.push(Complex64::new(t[(i, i)], 0.0));
            i += 1;
        }
    }
    out
}

/// Eigenvalues of a square matrix, computed block by block.
pub fn spectrum(a: &Matrix) -> Result<Spectrum> {
    ensure_square(a, "spectrum input")?;
    let mut eigenvalues = Vec::with_capacity(a.nrows());
    for comp in blocks::components(a) {
        if comp.len() == 1 {
            eigenvalues.push(Complex64::new(a[(comp[0], comp[0])], 0.0));
            continue;
        }
        let sub = blocks::select(a, &comp, &comp);
        let (_, t) = real_schur(&sub)?;
        eigenvalues.extend(quasi_triangular_eigenvalues(&t));
    }
    Ok(Spectrum { eigenvalues })
}

/// True iff every eigenvalue has real part `< -margin`.
pub fn is_hurwitz(a: &Matrix, margin: f64) -> Result<bool> {
    Ok(spectrum(a)?.max_real() < -margin)
}

fn sym_eigenvalues(a: &Matrix) -> Result<Vector> {
    ensure_square(a, "symmetric eigenvalue input")?;
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, SCHUR_MAX_ITER).ok_or_else(|| {
        Error::NumericalFailure("symmetric eigendecomposition did not converge".into())
    })?;
    Ok(eig.eigenvalues)
}

/// Smallest eigenvalue of `(a + a^T) / 2`.
pub fn min_eig_sym(a: &Matrix) -> Result<f64> {
    Ok(sym_eigenvalues(a)?.min())
}

/// Largest eigenvalue of `(a + a^T) / 2`.
pub fn max_eig_sym(a: &Matrix) -> Result<f64> {
    Ok(sym_eigenvalues(a)?.max())
}

pub(crate) fn singular_values(m: &Matrix) -> Result<Vector> {
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    Ok(svd.singular_values)
}

/// Number of singular values `>= rank_tol * sigma_max`.
pub fn numerical_rank(m: &Matrix, rank_tol: f64) -> Result<usize> {
    let sv = singular_values(m)?;
    let smax = sv.max();
    if smax <= 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s >= rank_tol * smax).count())
}

/// Least-squares solution of `m x = b` (columnwise), optionally ridge
/// regularized with diagonal weights `ridge` (penalty `sum_j ridge_j x_j^2`).
///
/// Without ridge the columns of `m` must be numerically independent.
pub fn least_squares(m: &Matrix, b: &Matrix, ridge: Option<&[f64]>) -> Result<Matrix> {
    least_squares_tol(m, b, ridge, RANK_TOL)
}

pub fn least_squares_tol(
    m: &Matrix,
    b: &Matrix,
    ridge: Option<&[f64]>,
    rank_tol: f64,
) -> Result<Matrix> {
    let (rows, cols) = m.shape();
    if b.nrows() != rows {
        return Err(Error::DimensionMismatch(format!(
            "least squares: design has {rows} rows, rhs has {}",
            b.nrows()
        )));
    }
    if cols == 0 {
        return Err(Error::invalid("least squares with zero unknowns"));
    }
    let (design, rhs) = match ridge {
        None => {
            let rank = if rows < cols { rows.min(numerical_rank(m, rank_tol)?) } else { numerical_rank(m, rank_tol)? };
            if rank < cols {
                return Err(Error::RankDeficient {
                    rank,
                    required: cols,
                    hint: " (consider a ridge penalty)",
                });
            }
            (m.clone(), b.clone())
        }
        Some(lambda) => {
            if lambda.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "ridge weights have length {}, expected {cols}",
                    lambda.len()
                )));
            }
            if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                return Err(Error::invalid("ridge weights must be positive and finite"));
            }
            // [m; sqrt(L)] x = [b; 0] has the ridge normal equations.
            let mut design = Matrix::zeros(rows + cols, cols);
            design.view_mut((0, 0), (rows, cols)).copy_from(m);
            for (j, l) in lambda.iter().enumerate() {
                design[(rows + j, j)] = l.sqrt();
            }
            let mut rhs = Matrix::zeros(rows + cols, b.ncols());
            rhs.view_mut((0, 0), (rows, b.ncols())).copy_from(b);
            (design, rhs)
        }
    };
    let qr = design.qr();
    let qtb = qr.q().transpose() * rhs;
    let r = qr.r();
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::NumericalFailure("triangular solve failed in least squares".into()))
}

/// Solves `(s I - a) x = b` for a complex shift, exploiting decoupled blocks.
pub fn shifted_solve(a: &Matrix, comps: &[Vec<usize>], s: Complex64, b: &Vector) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for comp in comps {
        if comp.iter().all(|&i| b[i] == 0.0) {
            continue;
        }
        let m = comp.len();
        let mut shifted = CMatrix::from_fn(m, m, |i, j| Complex64::new(-a[(comp[i], comp[j])], 0.0));
        for i in 0..m {
            shifted[(i, i)] += s;
        }
        let scale = shifted.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        let rhs = DVector::from_fn(m, |i, _| Complex64::new(b[comp[i]], 0.0));
        let lu = shifted.lu();
        let u = lu.u();
        let min_pivot = (0..m).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min);
        if min_pivot <= 1e-14 * scale {
            return Err(Error::SingularShift { re: s.re, im: s.im });
        }
        let sol = lu
            .solve(&rhs)
            .ok_or(Error::SingularShift { re: s.re, im: s.im })?;
        for (i, &ci) in comp.iter().enumerate() {
            x[ci] = sol[i];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hurwitz_scalar() {
        assert!(is_hurwitz(&Matrix::from_element(1, 1, -1.0), 0.0).unwrap());
        assert!(!is_hurwitz(&Matrix::from_element(1, 1, 0.5), 0.0).unwrap());
    }

    #[test]
    fn spectrum_of_rotation_generator() {
        // characteristic polynomial l^2 + 100
        let a = Matrix::from_row_slice(2, 2, &[0.0, 10.0, -10.0, 0.0]);
        let mut eig = spectrum(&a).unwrap().eigenvalues;
        eig.sort_by(|x, y| x.im.partial_cmp(&y.im).unwrap());
        assert_relative_eq!(eig[0].re, 0.0, epsilon = 1e-12);
        assert_relative_eq!(eig[0].im, -10.0, epsilon = 1e-12);
        assert_relative_eq!(eig[1].im, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn spectrum_dense_conjugate_closed() {
        let a = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, -3.0, 0.2, 1.0, 0.3, -1.0, -2.0]);
        let eig = spectrum(&a).unwrap().eigenvalues;
        assert_eq!(eig.len(), 3);
        for z in &eig {
            assert!(eig.iter().any(|w| (w - z.conj()).norm() < 1e-10));
        }
        let trace: f64 = eig.iter().map(|z| z.re).sum();
        assert_relative_eq!(trace, 1.0 + 0.2 - 2.0, epsilon = 1e-10);
    }

    #[test]
    fn rank_of_outer_product() {
        assert_eq!(numerical_rank(&Matrix::from_element(3, 3, 1.0), 1e-10).unwrap(), 1);
        assert_eq!(numerical_rank(&Matrix::identity(4, 4), 1e-10).unwrap(), 4);
        assert_eq!(numerical_rank(&Matrix::zeros(2, 3), 1e-10).unwrap(), 0);
    }

    #[test]
    fn min_eig_symmetrizes() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
        assert_relative_eq!(min_eig_sym(&a).unwrap(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(max_eig_sym(&a).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_identity() {
        let b = Matrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let x = least_squares(&Matrix::identity(3, 3), &b, None).unwrap();
        assert_relative_eq!(x, b, epsilon = 1e-14);
    }

    #[test]
    fn least_squares_mean_of_two_points() {
        let m = Matrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let b = Matrix::from_column_slice(2, 1, &[0.0, 2.0]);
        let x = least_squares(&m, &b, None).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn least_squares_exact_line() {
        let m = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let b = Matrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        // normal equations oracle: [[3,3],[3,5]] x = [6,8]
        let normal = Matrix::from_row_slice(2, 2, &[3.0, 3.0, 3.0, 5.0]);
        let expected = normal.lu().solve(&Matrix::from_column_slice(2, 1, &[6.0, 8.0])).unwrap();
        let x = least_squares(&m, &b, None).unwrap();
        assert_relative_eq!(x, expected, epsilon = 1e-12);
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[(1, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_rank_deficient_without_ridge() {
        let m = Matrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let b = Matrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(matches!(least_squares(&m, &b, None), Err(Error::RankDeficient { rank: 1, .. })));
        let x = least_squares(&m, &b, Some(&[1.0, 1.0])).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ridge_scalar_normal_equation() {
        let x = least_squares(
            &Matrix::from_element(1, 1, 1.0),
            &Matrix::from_element(1, 1, 2.0),
            Some(&[1.0]),
        )
        .unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn shifted_solve_matches_dense() {
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 2.0, -2.0, -1.0]);
        let comps = blocks::components(&a);
        let b = Vector::from_column_slice(&[1.0, 0.5]);
        let s = Complex64::new(0.3, 1.7);
        let x = shifted_solve(&a, &comps, s, &b).unwrap();
        // check (sI - a) x = b
        for i in 0..2 {
            let mut r = s * x[i];
            for j in 0..2 {
                r -= x[j] * a[(i, j)];
            }
            assert!((r - b[i]).norm() < 1e-13);
        }
        let z = Complex64::new(-1.0, 2.0);
        assert!(matches!(shifted_solve(&a, &comps, z, &b), Err(Error::SingularShift { .. })));
    }

    fn objective(m: &Matrix, b: &Matrix, x: &Matrix, ridge: Option<&[f64]>) -> f64 {
        let mut v = (m * x - b).norm_squared();
        if let Some(l) = ridge {
            for (j, lj) in l.iter().enumerate() {
                v += lj * x.row(j).norm_squared();
            }
        }
        v
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn least_squares_is_optimal(seed in 0u64..5000, rows in 4usize..12, cols in 1usize..4, use_ridge: bool) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
            let b = Matrix::from_fn(rows, 2, |_, _| rng.random_range(-1.0..1.0));
            let lambda: Vec<f64> = (0..cols).map(|_| rng.random_range(0.01..1.0)).collect();
            let ridge = if use_ridge { Some(lambda.as_slice()) } else { None };
            let x = least_squares(&m, &b, ridge).unwrap();
            let f0 = objective(&m, &b, &x, ridge);
            for _ in 0..20 {
                let d = Matrix::from_fn(cols, 2, |_, _| rng.random_range(-1.0..1.0));
                let d = d.normalize() * 1e-4;
                proptest::prop_assert!(objective(&m, &b, &(&x + d), ridge) >= f0 - 1e-15 * (1.0 + f0));
            }
        }
    }
}
