//! Basis-function approximation `C Pi(p) ~ Phi_N(p) Gamma` of the parametric
//! moment: model-based least squares, ridge regression and the snapshot
//! estimator.

mod dataset;

pub use dataset::{NoiseMeta, SnapshotDataset};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{least_squares, numerical_rank, Matrix, SylvesterSolver, RANK_TOL};
use crate::psys::{check_in_interval, validate_interval, ParametricLTI};
use crate::siggen::SignalGenerator;

/// A family of scalar basis functions `phi_1..phi_N` of the parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSet {
    /// Monomials `1, p, ..., p^(n-1)`, evaluated internally in the variable
    /// `t = (2p - lo - hi) / (hi - lo)` over `domain = [lo, hi]`.
    Polynomial { n: usize, domain: [f64; 2] },
    /// `exp(-(p - c_j)^2 / (2 s_j^2))`.
    GaussianRbf { centers: Vec<f64>, widths: Vec<f64> },
    /// `1, cos(2 pi p / T), sin(2 pi p / T), cos(4 pi p / T), ...`, `n` functions.
    Fourier { n: usize, base_period: f64 },
}

fn binom(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

impl BasisSet {
    pub fn polynomial(n: usize, domain: [f64; 2]) -> Result<Self> {
        let b = BasisSet::Polynomial { n, domain };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BasisSet::Polynomial { n, domain } => {
                if *n == 0 {
                    return Err(Error::invalid("polynomial basis needs n >= 1"));
                }
                validate_interval(*domain)
            }
            BasisSet::GaussianRbf { centers, widths } => {
                if centers.is_empty() || centers.len() != widths.len() {
                    return Err(Error::invalid("RBF basis needs equally many centers and widths"));
                }
                if widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) || centers.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid("RBF centers must be finite and widths positive"));
                }
                Ok(())
            }
            BasisSet::Fourier { n, base_period } => {
                if *n == 0 || !(*base_period > 0.0 && base_period.is_finite()) {
                    return Err(Error::invalid("Fourier basis needs n >= 1 and a positive period"));
                }
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BasisSet::Polynomial { n, .. } | BasisSet::Fourier { n, .. } => *n,
            BasisSet::GaussianRbf { centers, .. } => centers.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Phi_N(p)` in the user-facing (raw) basis.
    pub fn eval_raw(&self, p: f64) -> Vec<f64> {
        match self {
            BasisSet::Polynomial { n, .. } => (0..*n).map(|j| p.powi(j as i32)).collect(),
            _ => self.eval_internal(p),
        }
    }

    /// The numerically preferred basis; differs from the raw one only for
    /// polynomials (scaled variable).
    pub(crate) fn eval_internal(&self, p: f64) -> Vec<f64> {
        match self {
            BasisSet::Polynomial { n, domain } => {
                let t = (2.0 * p - domain[0] - domain[1]) / (domain[1] - domain[0]);
                (0..*n).map(|j| t.powi(j as i32)).collect()
            }
            BasisSet::GaussianRbf { centers, widths } => centers
                .iter()
                .zip(widths)
                .map(|(c, w)| (-(p - c) * (p - c) / (2.0 * w * w)).exp())
                .collect(),
            BasisSet::Fourier { n, base_period } => (0..*n)
                .map(|j| {
                    if j == 0 {
                        1.0
                    } else {
                        let m = j.div_ceil(2) as f64;
                        let arg = 2.0 * std::f64::consts::PI * m * p / base_period;
                        if j % 2 == 1 { arg.cos() } else { arg.sin() }
                    }
                })
                .collect(),
        }
    }

    /// `T` with `Phi_internal(p) = Phi_raw(p) T`, so raw weights are `T Gamma_internal`.
    pub(crate) fn raw_from_internal(&self) -> Matrix {
        match self {
            BasisSet::Polynomial { n, domain } => {
                let alpha = 2.0 / (domain[1] - domain[0]);
                let beta = -(domain[0] + domain[1]) / (domain[1] - domain[0]);
                Matrix::from_fn(*n, *n, |k, m| {
                    if k > m {
                        0.0
                    } else {
                        binom(m, k) * alpha.powi(k as i32) * beta.powi((m - k) as i32)
                    }
                })
            }
            _ => Matrix::identity(self.len(), self.len()),
        }
    }

    fn matrix(&self, params: &[f64], f: impl Fn(f64) -> Vec<f64>) -> Matrix {
        let mut m = Matrix::zeros(params.len(), self.len());
        for (k, &p) in params.iter().enumerate() {
            for (j, v) in f(p).into_iter().enumerate() {
                m[(k, j)] = v;
            }
        }
        m
    }

    pub(crate) fn interp_matrix_internal(&self, params: &[f64]) -> Matrix {
        self.matrix(params, |p| self.eval_internal(p))
    }
}

/// `Upsilon_K` with entries `phi_j(p_k)` in the raw basis.
pub fn interp_matrix(basis: &BasisSet, params: &[f64]) -> Matrix {
    basis.matrix(params, |p| basis.eval_raw(p))
}

fn check_distinct(params: &[f64]) -> Result<()> {
    if params.is_empty() {
        return Err(Error::invalid("no training parameters"));
    }
    for (i, p) in params.iter().enumerate() {
        if !p.is_finite() || params[..i].contains(p) {
            return Err(Error::invalid(format!("training parameters must be finite and distinct (got {p} twice)")));
        }
    }
    Ok(())
}

/// `K` equidistant points covering `[lo, hi]`.
pub fn equidistant(interval: [f64; 2], k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.5 * (interval[0] + interval[1])],
        _ => (0..k).map(|i| interval[0] + (interval[1] - interval[0]) * i as f64 / (k - 1) as f64).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    ModelBased { params: Vec<f64> },
    Ridge { params: Vec<f64>, lambda: Vec<f64> },
    DataDriven { window: [f64; 2], k: usize, h: usize },
}

/// Fitted weights `Gamma` (N x nu) for a basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    /// Weights for the raw basis (monomials in `p` for polynomials).
    #[serde(with = "crate::serde_mat")]
    pub gamma: Matrix,
    #[serde(with = "crate::serde_mat")]
    pub gamma_internal: Matrix,
    pub basis: BasisSet,
    pub provenance: Provenance,
    pub param_interval: [f64; 2],
}

impl WeightMatrix {
    fn from_internal(basis: &BasisSet, gamma_internal: Matrix, provenance: Provenance, iv: [f64; 2]) -> Self {
        let gamma = basis.raw_from_internal() * &gamma_internal;
        Self { gamma, gamma_internal, basis: basis.clone(), provenance, param_interval: iv }
    }

    pub fn nu(&self) -> usize {
        self.gamma.ncols()
    }

    /// `Phi_N(p) Gamma`, a `1 x nu` row.
    pub fn eval(&self, p: f64) -> Result<Matrix> {
        check_in_interval(self.param_interval, p)?;
        let phi = self.basis.eval_internal(p);
        Ok(Matrix::from_row_slice(1, phi.len(), &phi) * &self.gamma_internal)
    }
}

/// Free-function form of [`WeightMatrix::eval`].
pub fn eval_basis_moment(w: &WeightMatrix, p: f64) -> Result<Matrix> {
    w.eval(p)
}

/// Rows `C(p_k) Pi(p_k)` from exact Sylvester solves.
pub fn moment_samples(system: &ParametricLTI, gen: &SignalGenerator, params: &[f64]) -> Result<Matrix> {
    let mut r = Matrix::zeros(params.len(), gen.nu());
    for (k, &p) in params.iter().enumerate() {
        let row = exact_moment(system, gen, p)?;
        r.row_mut(k).copy_from(&row);
    }
    Ok(r)
}

/// `C(p) Pi(p)` with `Pi(p)` from the Sylvester equation.
pub fn exact_moment(system: &ParametricLTI, gen: &SignalGenerator, p: f64) -> Result<Matrix> {
    let (a, b, c) = system.eval(p)?;
    let pi = SylvesterSolver::new(&a, gen.s())?.solve(&(b * gen.l()))?;
    Ok(c * pi)
}

fn check_rank(m: &Matrix, required: usize) -> Result<()> {
    let rank = numerical_rank(m, RANK_TOL)?;
    if rank < required {
        return Err(Error::RankDeficient { rank, required, hint: " (consider a ridge penalty)" });
    }
    Ok(())
}

/// Least-squares weights from exact moments at `params`.
pub fn fit_model_based(
    system: &ParametricLTI,
    gen: &SignalGenerator,
    basis: &BasisSet,
    params: &[f64],
) -> Result<WeightMatrix> {
    basis.validate()?;
    check_distinct(params)?;
    let ups = basis.interp_matrix_internal(params);
    check_rank(&ups, basis.len())?;
    let r = moment_samples(system, gen, params)?;
    let g = least_squares(&ups, &r, None)?;
    Ok(WeightMatrix::from_internal(
        basis,
        g,
        Provenance::ModelBased { params: params.to_vec() },
        system.param_interval,
    ))
}

/// Ridge weights `(Y^T Y + Lambda)^{-1} Y^T R` in the raw basis.
pub fn fit_ridge(
    system: &ParametricLTI,
    gen: &SignalGenerator,
    basis: &BasisSet,
    params: &[f64],
    lambda: &[f64],
) -> Result<WeightMatrix> {
    basis.validate()?;
    check_distinct(params)?;
    let ups = interp_matrix(basis, params);
    let r = moment_samples(system, gen, params)?;
    let gamma = least_squares(&ups, &r, Some(lambda))?;
    let t = basis.raw_from_internal();
    let gamma_internal = t
        .solve_upper_triangular(&gamma)
        .ok_or_else(|| Error::NumericalFailure("basis transform is singular".into()))?;
    Ok(WeightMatrix {
        gamma,
        gamma_internal,
        basis: basis.clone(),
        provenance: Provenance::Ridge { params: params.to_vec(), lambda: lambda.to_vec() },
        param_interval: system.param_interval,
    })
}

/// Snapshot estimator of the weights.
///
/// The Kronecker-structured normal equations of `(Upsilon_K (x) U_i) vec(Gamma^T) = O`
/// factor by the mixed-product rule: first `R_hat = (U_i^+ Y)^T` per
/// parameter, then `Gamma = Upsilon_K^+ R_hat`.
pub fn fit_data_driven(data: &SnapshotDataset, basis: &BasisSet, param_interval: [f64; 2]) -> Result<WeightMatrix> {
    basis.validate()?;
    data.validate()?;
    check_distinct(&data.params)?;
    let (h, nu, k, n) = (data.h(), data.nu(), data.k(), basis.len());
    if h < nu {
        return Err(Error::WindowTooShort { h, nu });
    }
    if h * k < nu * n {
        return Err(Error::RankDeficient { rank: h * k, required: nu * n, hint: " (need h K >= nu N)" });
    }
    check_rank(&data.omega, nu)?;
    let ups = basis.interp_matrix_internal(&data.params);
    check_rank(&ups, n)?;
    let r_hat = least_squares(&data.omega, &data.outputs, None)?.transpose();
    let g = least_squares(&ups, &r_hat, None)?;
    let window = [data.times[0], data.times[h - 1]];
    Ok(WeightMatrix::from_internal(basis, g, Provenance::DataDriven { window, k, h }, param_interval))
}

/// Moment estimates `R_hat` (K x nu), one least-squares fit per parameter.
pub fn per_parameter_moments(data: &SnapshotDataset) -> Result<Matrix> {
    if data.h() < data.nu() {
        return Err(Error::WindowTooShort { h: data.h(), nu: data.nu() });
    }
    Ok(least_squares(&data.omega, &data.outputs, None)?.transpose())
}

/// Noiseless steady-state data `y_k(t) = R_k w(t)` for given moment rows.
pub fn synthetic_dataset(gen: &SignalGenerator, params: &[f64], moments: &Matrix, times: &[f64]) -> Result<SnapshotDataset> {
    if moments.shape() != (params.len(), gen.nu()) {
        return Err(Error::DimensionMismatch("moment rows must be K x nu".into()));
    }
    let omega = gen.omega_trajectory(times);
    let outputs = &omega * moments.transpose();
    SnapshotDataset::new(params.to_vec(), times.to_vec(), omega, outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psys::{benchmark, CoefficientFunction, Term};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).norm() / b.norm()
    }

    /// First-order system with moment exactly linear in p: A = -1, B = 1, C(p) = 1 + p.
    fn linear_moment_system() -> ParametricLTI {
        ParametricLTI::new(
            vec![Term::constant(Matrix::from_element(1, 1, -1.0))],
            vec![Term::constant(Matrix::from_element(1, 1, 1.0))],
            vec![
                Term::constant(Matrix::from_element(1, 1, 1.0)),
                Term::new(CoefficientFunction::linear(), Matrix::from_element(1, 1, 1.0)),
            ],
            [0.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn vandermonde() {
        let b2 = BasisSet::polynomial(2, [0.0, 1.0]).unwrap();
        assert_eq!(interp_matrix(&b2, &[0.0, 1.0]), Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));
        let b3 = BasisSet::polynomial(3, [0.0, 2.0]).unwrap();
        assert_eq!(
            interp_matrix(&b3, &[0.0, 1.0, 2.0]),
            Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 4.0])
        );
    }

    #[test]
    fn rbf_peak_and_fourier() {
        let b = BasisSet::GaussianRbf { centers: vec![0.2, 0.7], widths: vec![0.3, 0.3] };
        let m = interp_matrix(&b, &[0.2, 0.7]);
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(1, 1)], 1.0);
        let f = BasisSet::Fourier { n: 3, base_period: 4.0 };
        let v = f.eval_raw(1.0);
        assert_relative_eq!(v[0], 1.0);
        assert_relative_eq!(v[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(v[2], 1.0);
    }

    #[test]
    fn internal_to_raw_identity() {
        let b = BasisSet::polynomial(6, [0.1, 1.0]).unwrap();
        let t = b.raw_from_internal();
        for p in [0.1, 0.33, 0.9, 1.0] {
            let raw = Matrix::from_row_slice(1, 6, &b.eval_raw(p));
            let int = Matrix::from_row_slice(1, 6, &b.eval_internal(p));
            assert_relative_eq!(raw * &t, int, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_linear_fit() {
        let sys = linear_moment_system();
        let gen = SignalGenerator::from_frequencies(&[2.0], false).unwrap();
        let basis = BasisSet::polynomial(2, [0.0, 1.0]).unwrap();
        let w = fit_model_based(&sys, &gen, &basis, &[0.0, 1.0]).unwrap();
        for p in [0.0, 0.25, 0.8] {
            let exact = exact_moment(&sys, &gen, p).unwrap();
            assert!((w.eval(p).unwrap() - &exact).norm() <= 1e-10);
        }
        // raw weights: constant and linear parts of (1 + p) C Pi(0)
        let base = exact_moment(&sys, &gen, 0.0).unwrap();
        for row in 0..2 {
            assert!((w.gamma.rows(row, 1) - &base).norm() <= 1e-12);
        }
    }

    #[test]
    fn square_interpolation() {
        let sys = benchmark(2).unwrap();
        let gen = SignalGenerator::from_frequencies(&[10.0], true).unwrap();
        let basis = BasisSet::polynomial(4, sys.param_interval).unwrap();
        let params = [0.1, 0.4, 0.7, 1.0];
        let w = fit_model_based(&sys, &gen, &basis, &params).unwrap();
        let r = moment_samples(&sys, &gen, &params).unwrap();
        for (k, &p) in params.iter().enumerate() {
            let row = r.row(k).clone_owned();
            assert!((w.eval(p).unwrap() - &row).norm() <= 1e-10 * row.norm());
        }
    }

    #[test]
    fn held_out_error_below_training_level() {
        let sys = benchmark(2).unwrap();
        let gen = SignalGenerator::from_frequencies(&[1.0, 100.0], false).unwrap();
        let basis = BasisSet::polynomial(3, sys.param_interval).unwrap();
        let params = equidistant(sys.param_interval, 10);
        let w = fit_model_based(&sys, &gen, &basis, &params).unwrap();
        let train = params
            .iter()
            .map(|&p| rel(&w.eval(p).unwrap(), &exact_moment(&sys, &gen, p).unwrap()))
            .fold(0.0, f64::max);
        let held = rel(&w.eval(0.37).unwrap(), &exact_moment(&sys, &gen, 0.37).unwrap());
        assert!(held <= train, "held {held} train {train}");
    }

    #[test]
    fn ridge_limits() {
        let sys = benchmark(2).unwrap();
        let gen = SignalGenerator::from_frequencies(&[3.0], false).unwrap();
        let basis = BasisSet::polynomial(3, sys.param_interval).unwrap();
        let params = equidistant(sys.param_interval, 10);
        let ls = fit_model_based(&sys, &gen, &basis, &params).unwrap();
        let rr = fit_ridge(&sys, &gen, &basis, &params, &[1e-12; 3]).unwrap();
        assert!(rel(&rr.gamma, &ls.gamma) <= 1e-8);
        for p in [0.15, 0.5, 0.95] {
            assert!(rel(&rr.eval(p).unwrap(), &ls.eval(p).unwrap()) <= 1e-8);
        }
        // duplicated basis column: plain LS fails, ridge is finite
        let dup = BasisSet::GaussianRbf { centers: vec![0.5, 0.5], widths: vec![0.2, 0.2] };
        assert!(matches!(fit_model_based(&sys, &gen, &dup, &params), Err(Error::RankDeficient { .. })));
        let w = fit_ridge(&sys, &gen, &dup, &params, &[1.0, 1.0]).unwrap();
        assert!(w.gamma.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ridge_scalar_normal_equation() {
        let g = least_squares(&Matrix::from_element(1, 1, 1.0), &Matrix::from_element(1, 1, 2.0), Some(&[1.0])).unwrap();
        assert_relative_eq!(g[(0, 0)], 1.0);
    }

    #[test]
    fn constant_selector() {
        let basis = BasisSet::polynomial(3, [0.0, 1.0]).unwrap();
        let mut gi = Matrix::zeros(3, 2);
        gi[(0, 0)] = 2.0;
        gi[(0, 1)] = -1.0;
        let w = WeightMatrix::from_internal(&basis, gi, Provenance::ModelBased { params: vec![] }, [0.0, 1.0]);
        assert_eq!(w.eval(0.3).unwrap(), w.eval(0.9).unwrap());
        assert!(matches!(w.eval(2.0), Err(Error::ParameterOutOfRange { .. })));
    }

    fn steady_dataset(sys: &ParametricLTI, gen: &SignalGenerator, params: &[f64], h: usize) -> SnapshotDataset {
        let times: Vec<f64> = (0..h).map(|i| 3.0 + 0.037 * i as f64).collect();
        let r = moment_samples(sys, gen, params).unwrap();
        synthetic_dataset(gen, params, &r, &times).unwrap()
    }

    #[test]
    fn data_driven_recovers_model_based() {
        // C Pi(p) exactly linear in p
        let sys = linear_moment_system();
        let gen = SignalGenerator::from_frequencies(&[1.0, 4.0], true).unwrap();
        let basis = BasisSet::polynomial(2, sys.param_interval).unwrap();
        let params = equidistant(sys.param_interval, 5);
        let data = steady_dataset(&sys, &gen, &params, 12);
        let dd = fit_data_driven(&data, &basis, sys.param_interval).unwrap();
        let mb = fit_model_based(&sys, &gen, &basis, &params).unwrap();
        assert!((&dd.gamma - &mb.gamma).norm() <= 1e-8 * mb.gamma.norm());
    }

    #[test]
    fn window_length_boundary() {
        let sys = linear_moment_system();
        let gen = SignalGenerator::from_frequencies(&[1.0, 4.0], true).unwrap();
        let basis = BasisSet::polynomial(2, sys.param_interval).unwrap();
        let params = equidistant(sys.param_interval, 5);
        let ok = steady_dataset(&sys, &gen, &params, gen.nu());
        assert!(fit_data_driven(&ok, &basis, sys.param_interval).is_ok());
        let short = steady_dataset(&sys, &gen, &params, gen.nu() - 1);
        assert!(matches!(fit_data_driven(&short, &basis, sys.param_interval), Err(Error::WindowTooShort { h: 4, nu: 5 })));
    }

    fn kron_oracle(data: &SnapshotDataset, basis: &BasisSet) -> Matrix {
        let ups = basis.interp_matrix_internal(&data.params);
        let big = ups.kronecker(&data.omega);
        let o = DVector::from_column_slice(data.outputs.as_slice());
        let normal = big.transpose() * &big;
        let x = normal.cholesky().unwrap().solve(&(big.transpose() * o));
        // x = vec(Gamma^T), Gamma^T is nu x N
        Matrix::from_column_slice(data.nu(), basis.len(), x.as_slice()).transpose()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn kronecker_identity(seed in 0u64..1000, k in 3usize..7, extra in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gen = SignalGenerator::from_frequencies(&[1.0, 2.5], true).unwrap();
            let basis = BasisSet::polynomial(3, [0.0, 1.0]).unwrap();
            let params = equidistant([0.0, 1.0], k);
            let h = gen.nu() + extra + 2;
            let times: Vec<f64> = (0..h).map(|i| 0.3 * i as f64).collect();
            let omega = gen.omega_trajectory(&times);
            let outputs = Matrix::from_fn(h, k, |_, _| rng.random_range(-1.0..1.0));
            let data = SnapshotDataset::new(params, times, omega, outputs).unwrap();
            let w = fit_data_driven(&data, &basis, [0.0, 1.0]).unwrap();
            let oracle = kron_oracle(&data, &basis);
            prop_assert!((&w.gamma_internal - &oracle).norm() <= 1e-10 * oracle.norm().max(1.0));
        }

        #[test]
        fn model_based_is_optimal(seed in 0u64..1000) {
            let sys = benchmark(2).unwrap();
            let gen = SignalGenerator::from_frequencies(&[7.0], false).unwrap();
            let basis = BasisSet::polynomial(3, sys.param_interval).unwrap();
            let params = equidistant(sys.param_interval, 8);
            let w = fit_model_based(&sys, &gen, &basis, &params).unwrap();
            let r = moment_samples(&sys, &gen, &params).unwrap();
            let ups = interp_matrix(&basis, &params);
            let obj = |g: &Matrix| (&ups * g - &r).norm_squared();
            let f0 = obj(&w.gamma);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let d = Matrix::from_fn(3, gen.nu(), |_, _| rng.random_range(-1.0..1.0)).normalize() * 1e-4;
                prop_assert!(obj(&(&w.gamma + d)) >= f0 * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn monotone_refinement() {
        let sys = benchmark(2).unwrap();
        let gen = SignalGenerator::from_frequencies(&[1.0, 50.0], false).unwrap();
        let params = equidistant(sys.param_interval, 10);
        let r = moment_samples(&sys, &gen, &params).unwrap();
        let mut last = f64::INFINITY;
        for n in 1..=7 {
            let basis = BasisSet::polynomial(n, sys.param_interval).unwrap();
            let w = fit_model_based(&sys, &gen, &basis, &params).unwrap();
            let res = (interp_matrix(&basis, &params) * &w.gamma - &r).norm();
            assert!(res <= last * (1.0 + 1e-9) + 1e-14, "n={n} res={res} last={last}");
            last = res;
        }
    }

    #[test]
    fn noise_shrinks_with_window() {
        use rand_distr::{Distribution, Normal};
        let sys = linear_moment_system();
        let gen = SignalGenerator::from_frequencies(&[1.0, 4.0], true).unwrap();
        let basis = BasisSet::polynomial(2, sys.param_interval).unwrap();
        let params = equidistant(sys.param_interval, 5);
        let truth = fit_model_based(&sys, &gen, &basis, &params).unwrap();
        let normal = Normal::new(0.0, 1e-3).unwrap();
        let mut ratios = Vec::new();
        for trial in 0..20u64 {
            let mut errs = [0.0; 2];
            for (slot, h) in [16usize, 64].into_iter().enumerate() {
                let mut data = steady_dataset(&sys, &gen, &params, h);
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial * 7 + slot as u64);
                data.outputs.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
                let w = fit_data_driven(&data, &basis, sys.param_interval).unwrap();
                errs[slot] = (&w.gamma - &truth.gamma).norm();
            }
            ratios.push(errs[1] / errs[0]);
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (ratios[9] + ratios[10]);
        assert!(median <= 0.7, "median ratio {median}");
    }
}
