//! Power-series approximation of the parametric moment and of a Lyapunov
//! certificate around an expansion point `p0`.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{LyapunovSolver, Matrix, SylvesterSolver};
use crate::psys::{ParametricLTI, Term};
use crate::siggen::SignalGenerator;

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_CENTER: f64 = 0.55;

/// Taylor coefficients of `A(p), B(p), C(p)` in powers of `p - p0`.
#[derive(Clone, Debug)]
pub struct TaylorTables {
    pub p0: f64,
    pub a: Vec<Matrix>,
    pub b: Vec<Matrix>,
    pub c: Vec<Matrix>,
}

fn expand(terms: &[Term], p0: f64, order: usize) -> Result<Vec<Matrix>> {
    let (r, c) = terms[0].matrix.shape();
    let mut out = vec![Matrix::zeros(r, c); order + 1];
    for t in terms {
        let coeffs = t.func.taylor(p0, order)?;
        for (j, cj) in coeffs.into_iter().enumerate() {
            if cj != 0.0 {
                out[j] += &t.matrix * cj;
            }
        }
    }
    Ok(out)
}

pub fn taylor_tables(system: &ParametricLTI, p0: f64, order: usize) -> Result<TaylorTables> {
    Ok(TaylorTables {
        p0,
        a: expand(&system.a_terms, p0, order)?,
        b: expand(&system.b_terms, p0, order)?,
        c: expand(&system.c_terms, p0, order)?,
    })
}

fn is_zero(m: &Matrix) -> bool {
    m.iter().all(|&v| v == 0.0)
}

fn horner(coeffs: &[Matrix], dp: f64) -> Matrix {
    let mut acc = coeffs.last().expect("nonempty series").clone();
    for c in coeffs.iter().rev().skip(1) {
        acc *= dp;
        acc += c;
    }
    acc
}

/// Truncated series `Pi_N(p) = sum_j (p - p0)^j Pi_j`.
#[derive(Debug, Serialize, Deserialize)]
pub struct MomentSeries {
    #[serde(rename = "p0")]
    pub expansion_point: f64,
    #[serde(rename = "coeffs", with = "crate::serde_mat::vec")]
    pub coeffs: Vec<Matrix>,
    pub generator: SignalGenerator,
    #[serde(skip)]
    warned: AtomicBool,
}

impl Clone for MomentSeries {
    fn clone(&self) -> Self {
        Self {
            expansion_point: self.expansion_point,
            coeffs: self.coeffs.clone(),
            generator: self.generator.clone(),
            warned: AtomicBool::new(self.warned.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for MomentSeries {
    fn eq(&self, other: &Self) -> bool {
        self.expansion_point == other.expansion_point
            && self.coeffs == other.coeffs
            && self.generator == other.generator
    }
}

#[derive(Serialize)]
struct SeriesHeader<'a> {
    #[serde(rename = "N")]
    n: usize,
    #[serde(flatten)]
    series: &'a MomentSeries,
}

impl MomentSeries {
    pub fn new(expansion_point: f64, coeffs: Vec<Matrix>, generator: SignalGenerator) -> Result<Self> {
        let first = coeffs.first().ok_or_else(|| Error::invalid("series needs at least one coefficient"))?;
        let shape = first.shape();
        if shape.1 != generator.nu() || coeffs.iter().any(|c| c.shape() != shape) {
            return Err(Error::DimensionMismatch("series coefficients must all be n x nu".into()));
        }
        Ok(Self { expansion_point, coeffs, generator, warned: AtomicBool::new(false) })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn n(&self) -> usize {
        self.coeffs[0].nrows()
    }

    /// Copy truncated to the first `order` coefficients.
    pub fn truncated(&self, order: usize) -> Result<Self> {
        if order == 0 || order > self.order() {
            return Err(Error::invalid(format!("cannot truncate a series of order {} to {order}", self.order())));
        }
        Self::new(self.expansion_point, self.coeffs[..order].to_vec(), self.generator.clone())
    }

    /// `Pi_N(p)`.
    pub fn eval_pi(&self, p: f64) -> Matrix {
        horner(&self.coeffs, p - self.expansion_point)
    }

    fn warn_radius(&self, system: &ParametricLTI, p: f64) {
        let [lo, hi] = system.param_interval;
        if (p - self.expansion_point).abs() > 0.25 * (hi - lo) && !self.warned.swap(true, Ordering::Relaxed) {
            log::warn!(
                "series centered at {} evaluated at p = {p}, beyond half the interval radius; accuracy may degrade",
                self.expansion_point
            );
        }
    }

    /// `C(p) Pi_N(p)`, a `1 x nu` row.
    pub fn eval_moment(&self, system: &ParametricLTI, p: f64) -> Result<Matrix> {
        let (_, _, c) = system.eval(p)?;
        if c.ncols() != self.n() {
            return Err(Error::DimensionMismatch("series and system state dimensions differ".into()));
        }
        self.warn_radius(system, p);
        Ok(c * self.eval_pi(p))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&SeriesHeader { n: self.order(), series: self })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        Self::new(s.expansion_point, s.coeffs, s.generator)
    }
}

/// `C(p) Pi_N(p)`; free-function form of [`MomentSeries::eval_moment`].
pub fn eval_moment_series(ms: &MomentSeries, system: &ParametricLTI, p: f64) -> Result<Matrix> {
    ms.eval_moment(system, p)
}

/// Solves the nested Sylvester equations
/// `Pi_j S = A_0 Pi_j + sum_{k=1..j} A_k Pi_{j-k} + B_j L` for `j < order`.
pub fn nested_sylvester(system: &ParametricLTI, gen: &SignalGenerator, p0: f64, order: usize) -> Result<MomentSeries> {
    if order == 0 {
        return Err(Error::invalid("series order must be at least 1"));
    }
    let tabs = taylor_tables(system, p0, order - 1)?;
    let solver = SylvesterSolver::new(&tabs.a[0], gen.s())?;
    let mut coeffs: Vec<Matrix> = Vec::with_capacity(order);
    for j in 0..order {
        let mut f = &tabs.b[j] * gen.l();
        for k in 1..=j {
            if !is_zero(&tabs.a[k]) {
                f += &tabs.a[k] * &coeffs[j - k];
            }
        }
        coeffs.push(solver.solve(&f)?);
    }
    MomentSeries::new(p0, coeffs, gen.clone())
}

/// Truncated series `X_N(p) = sum_j (p - p0)^j X_j` of a Lyapunov certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSeries {
    #[serde(rename = "p0")]
    pub expansion_point: f64,
    #[serde(with = "crate::serde_mat::vec")]
    pub coeffs: Vec<Matrix>,
    #[serde(rename = "Q", with = "crate::serde_mat")]
    pub q: Matrix,
}

impl LyapunovSeries {
    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, p: f64) -> Matrix {
        horner(&self.coeffs, p - self.expansion_point)
    }
}

/// Solves `A_0^T X_j + X_j A_0 = -sum_{k=1..j} (A_k^T X_{j-k} + X_{j-k} A_k)`
/// with `X_0` solving the Lyapunov equation for `Q`.
pub fn nested_lyapunov(system: &ParametricLTI, p0: f64, order: usize, q: &Matrix) -> Result<LyapunovSeries> {
    if order == 0 {
        return Err(Error::invalid("series order must be at least 1"));
    }
    if q.shape() != (system.n, system.n) {
        return Err(Error::DimensionMismatch(format!("Q must be {0}x{0}", system.n)));
    }
    let tabs = taylor_tables(system, p0, order - 1)?;
    let solver = LyapunovSolver::new(&tabs.a[0])?;
    let mut coeffs: Vec<Matrix> = Vec::with_capacity(order);
    coeffs.push(solver.solve(q)?);
    for j in 1..order {
        let mut rhs = Matrix::zeros(system.n, system.n);
        for k in 1..=j {
            if !is_zero(&tabs.a[k]) {
                let prod = tabs.a[k].transpose() * &coeffs[j - k];
                rhs += &prod + prod.transpose();
            }
        }
        coeffs.push(solver.solve(&rhs)?);
    }
    Ok(LyapunovSeries { expansion_point: p0, coeffs, q: q.clone() })
}
