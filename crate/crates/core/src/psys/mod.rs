//! Affine-parametric SISO LTI systems `A(p), B(p), C(p)`, their frozen
//! realizations and the block-oscillator benchmark family.

mod coeff;

pub use coeff::CoefficientFunction;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, blocks, Complex64, Matrix, Vector};

/// One affine term `f(p) M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    #[serde(rename = "fn")]
    pub func: CoefficientFunction,
    #[serde(with = "crate::serde_mat")]
    pub matrix: Matrix,
}

impl Term {
    pub fn new(func: CoefficientFunction, matrix: Matrix) -> Self {
        Self { func, matrix }
    }

    pub fn constant(matrix: Matrix) -> Self {
        Self::new(CoefficientFunction::constant(1.0), matrix)
    }
}

fn sum_terms(terms: &[Term], p: f64, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for t in terms {
        let f = t.func.eval(p);
        if f != 0.0 {
            m += &t.matrix * f;
        }
    }
    m
}

/// `x' = A(p) x + B(p) u`, `y = C(p) x` with `A(p) = sum_i f_i(p) A_i`, etc.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricLTI {
    pub n: usize,
    #[serde(rename = "A_terms")]
    pub a_terms: Vec<Term>,
    #[serde(rename = "B_terms")]
    pub b_terms: Vec<Term>,
    #[serde(rename = "C_terms")]
    pub c_terms: Vec<Term>,
    pub param_interval: [f64; 2],
}

/// Slack on interval membership so that grids computed in floating point
/// do not fall off the endpoints.
pub(crate) fn interval_contains(iv: [f64; 2], p: f64) -> bool {
    let slack = 1e-12 * (iv[1] - iv[0]).abs().max(1.0);
    p.is_finite() && p >= iv[0] - slack && p <= iv[1] + slack
}

pub(crate) fn check_in_interval(iv: [f64; 2], p: f64) -> Result<()> {
    if interval_contains(iv, p) {
        Ok(())
    } else {
        Err(Error::ParameterOutOfRange { p, lo: iv[0], hi: iv[1] })
    }
}

pub(crate) fn validate_interval(iv: [f64; 2]) -> Result<()> {
    if iv[0].is_finite() && iv[1].is_finite() && iv[0] < iv[1] {
        Ok(())
    } else {
        Err(Error::invalid(format!("parameter interval [{}, {}] must be finite with lo < hi", iv[0], iv[1])))
    }
}

impl ParametricLTI {
    pub fn new(
        a_terms: Vec<Term>,
        b_terms: Vec<Term>,
        c_terms: Vec<Term>,
        param_interval: [f64; 2],
    ) -> Result<Self> {
        let n = a_terms.first().map(|t| t.matrix.nrows()).unwrap_or(0);
        let sys = Self { n, a_terms, b_terms, c_terms, param_interval };
        sys.validate()?;
        Ok(sys)
    }

    /// Checks dimensions, coefficient functions and the parameter interval.
    pub fn validate(&self) -> Result<()> {
        validate_interval(self.param_interval)?;
        if self.n == 0 {
            return Err(Error::invalid("state dimension must be positive"));
        }
        for (name, terms, shape) in [
            ("A", &self.a_terms, (self.n, self.n)),
            ("B", &self.b_terms, (self.n, 1)),
            ("C", &self.c_terms, (1, self.n)),
        ] {
            if terms.is_empty() {
                return Err(Error::invalid(format!("{name}_terms must not be empty")));
            }
            for (i, t) in terms.iter().enumerate() {
                t.func.validate()?;
                if t.matrix.shape() != shape {
                    return Err(Error::DimensionMismatch(format!(
                        "{name}_terms[{i}] is {}x{}, expected {}x{}",
                        t.matrix.nrows(),
                        t.matrix.ncols(),
                        shape.0,
                        shape.1
                    )));
                }
                linalg::ensure_finite(&t.matrix, name)?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sys: Self = serde_json::from_str(text)?;
        sys.validate()?;
        Ok(sys)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn check_param(&self, p: f64) -> Result<()> {
        check_in_interval(self.param_interval, p)
    }

    /// `(A(p), B(p), C(p))`.
    pub fn eval(&self, p: f64) -> Result<(Matrix, Matrix, Matrix)> {
        self.check_param(p)?;
        Ok(self.eval_unchecked(p))
    }

    pub(crate) fn eval_unchecked(&self, p: f64) -> (Matrix, Matrix, Matrix) {
        (
            sum_terms(&self.a_terms, p, self.n, self.n),
            sum_terms(&self.b_terms, p, self.n, 1),
            sum_terms(&self.c_terms, p, 1, self.n),
        )
    }

    pub fn realize(&self, p: f64) -> Result<StateSpace> {
        let (a, b, c) = self.eval(p)?;
        StateSpace::new(a, b, c)
    }

    /// `W(s, p) = C(p) (s I - A(p))^{-1} B(p)`.
    pub fn transfer(&self, p: f64, s: Complex64) -> Result<Complex64> {
        self.realize(p)?.transfer(s)
    }
}

/// A fixed SISO state-space realization with cached block structure.
#[derive(Clone, Debug)]
pub struct StateSpace {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    comps: Vec<Vec<usize>>,
}

impl StateSpace {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        linalg::ensure_square(&a, "A")?;
        let n = a.nrows();
        if b.shape() != (n, 1) || c.shape() != (1, n) {
            return Err(Error::DimensionMismatch(format!(
                "realization with A {n}x{n} needs B {n}x1 and C 1x{n}, got B {}x{} and C {}x{}",
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        let comps = blocks::components(&a);
        Ok(Self { a, b, c, comps })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn transfer(&self, s: Complex64) -> Result<Complex64> {
        let b = Vector::from_column_slice(self.b.as_slice());
        let x = linalg::shifted_solve(&self.a, &self.comps, s, &b)?;
        Ok(x.iter().enumerate().map(|(i, xi)| xi * self.c[(0, i)]).sum())
    }

    pub fn is_hurwitz(&self, margin: f64) -> Result<bool> {
        linalg::is_hurwitz(&self.a, margin)
    }
}

/// Quadratic supply rate `y Q(p) y + 2 u S(p) y + u R(p) u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipativitySpec {
    #[serde(rename = "Q_fn")]
    pub q_fn: CoefficientFunction,
    #[serde(rename = "S_fn")]
    pub s_fn: CoefficientFunction,
    #[serde(rename = "R_fn")]
    pub r_fn: CoefficientFunction,
}

impl DissipativitySpec {
    pub fn passivity() -> Self {
        Self {
            q_fn: CoefficientFunction::constant(0.0),
            s_fn: CoefficientFunction::constant(0.5),
            r_fn: CoefficientFunction::constant(0.0),
        }
    }

    pub fn l2_gain(gamma: f64) -> Self {
        Self {
            q_fn: CoefficientFunction::constant(-1.0),
            s_fn: CoefficientFunction::constant(0.0),
            r_fn: CoefficientFunction::constant(gamma * gamma),
        }
    }

    pub fn eval(&self, p: f64) -> (f64, f64, f64) {
        (self.q_fn.eval(p), self.s_fn.eval(p), self.r_fn.eval(p))
    }

    /// The dissipation matrix
    /// `[[A^T X + X A - C^T Q C, X B - C^T S], [B^T X - S C, -R]]`,
    /// which is negative semidefinite exactly when `X` certifies dissipativity.
    pub fn lmi(&self, p: f64, a: &Matrix, b: &Matrix, c: &Matrix, x: &Matrix) -> Matrix {
        let (q, s, r) = self.eval(p);
        let n = a.nrows();
        let mut m = Matrix::zeros(n + 1, n + 1);
        let top = a.transpose() * x + x * a - c.transpose() * c * q;
        m.view_mut((0, 0), (n, n)).copy_from(&top);
        let off = x * b - c.transpose() * s;
        m.view_mut((0, n), (n, 1)).copy_from(&off);
        m.view_mut((n, 0), (1, n)).copy_from(&off.transpose());
        m[(n, n)] = -r;
        m
    }
}

fn equidistant(range: [f64; 2], k: usize, i: usize) -> f64 {
    if k == 1 {
        range[0]
    } else {
        range[0] + (range[1] - range[0]) * i as f64 / (k - 1) as f64
    }
}

pub const BENCHMARK_A_RANGE: [f64; 2] = [-1000.0, -10.0];
pub const BENCHMARK_B_RANGE: [f64; 2] = [10.0, 1000.0];
pub const BENCHMARK_INTERVAL: [f64; 2] = [0.1, 1.0];

/// Block-oscillator family: `A(p) = A_0 + p A_1` with blocks
/// `[[0, b_i], [-b_i, 0]]` and `a_i I_2`, `B` blocks `(2, 0)^T`, `C` blocks `(1, 0)`.
pub fn make_benchmark(k: usize, a_range: [f64; 2], b_range: [f64; 2]) -> Result<ParametricLTI> {
    if k == 0 {
        return Err(Error::invalid("benchmark needs at least one block"));
    }
    let n = 2 * k;
    let mut a0 = Matrix::zeros(n, n);
    let mut a1 = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, 1);
    let mut c = Matrix::zeros(1, n);
    for i in 0..k {
        let (ai, bi) = (equidistant(a_range, k, i), equidistant(b_range, k, i));
        let j = 2 * i;
        a0[(j, j + 1)] = bi;
        a0[(j + 1, j)] = -bi;
        a1[(j, j)] = ai;
        a1[(j + 1, j + 1)] = ai;
        b[(j, 0)] = 2.0;
        c[(0, j)] = 1.0;
    }
    ParametricLTI::new(
        vec![Term::constant(a0), Term::new(CoefficientFunction::linear(), a1)],
        vec![Term::constant(b)],
        vec![Term::constant(c)],
        BENCHMARK_INTERVAL,
    )
}

/// The benchmark with its default coefficient ranges.
pub fn benchmark(k: usize) -> Result<ParametricLTI> {
    make_benchmark(k, BENCHMARK_A_RANGE, BENCHMARK_B_RANGE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub p: f64,
    pub max_real: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub margin: f64,
    pub points: Vec<StabilityPoint>,
    pub pass: bool,
    pub warnings: Vec<String>,
}

/// Largest real eigenvalue part of `A(p)` at every grid point.
pub fn check_stability_grid(system: &ParametricLTI, grid: &[f64], margin: f64) -> Result<StabilityReport> {
    let mut warnings = Vec::new();
    if grid.is_empty() {
        let w = "empty parameter grid: stability check is vacuous".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    let mut points = Vec::with_capacity(grid.len());
    for &p in grid {
        let (a, _, _) = system.eval(p)?;
        let max_real = linalg::spectrum(&a)?.max_real();
        points.push(StabilityPoint { p, max_real, pass: max_real <= -margin });
    }
    let pass = points.iter().all(|pt| pt.pass);
    Ok(StabilityReport { margin, points, pass, warnings })
}
