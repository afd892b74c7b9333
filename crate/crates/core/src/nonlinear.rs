//! Data-driven moment matching for nonlinear parametric systems: a small
//! term language for plants, RBF regression of the steady-state output map
//! `kappa(w, p)` and the reduced model driven by it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_hurwitz, least_squares, spectrum, Matrix, Vector};
use crate::moment_basis::{BasisSet, SnapshotDataset};
use crate::psys::{check_in_interval, validate_interval, CoefficientFunction};
use crate::siggen::SignalGenerator;
use crate::sim::Plant;

/// One additive term of a state derivative or of the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NlTerm {
    /// `c(p) x_i`
    State { index: usize, coeff: CoefficientFunction },
    /// `c(p) u`
    Input { coeff: CoefficientFunction },
    /// `c(p) x_i1 x_i2 (x_i3)`, degree 2 or 3.
    Monomial { indices: Vec<usize>, coeff: CoefficientFunction },
    /// `c(p) clamp(x_i, -level, level)`
    Saturation { index: usize, level: f64, coeff: CoefficientFunction },
}

impl NlTerm {
    pub fn state(index: usize, c: f64) -> Self {
        NlTerm::State { index, coeff: CoefficientFunction::constant(c) }
    }

    pub fn input(c: f64) -> Self {
        NlTerm::Input { coeff: CoefficientFunction::constant(c) }
    }

    pub fn monomial(indices: &[usize], c: f64) -> Self {
        NlTerm::Monomial { indices: indices.to_vec(), coeff: CoefficientFunction::constant(c) }
    }

    fn coeff(&self) -> &CoefficientFunction {
        match self {
            NlTerm::State { coeff, .. }
            | NlTerm::Input { coeff }
            | NlTerm::Monomial { coeff, .. }
            | NlTerm::Saturation { coeff, .. } => coeff,
        }
    }

    fn validate(&self, n: usize, allow_input: bool) -> Result<()> {
        self.coeff().validate()?;
        match self {
            NlTerm::State { index, .. } if *index >= n => Err(Error::invalid(format!("state index {index} out of range"))),
            NlTerm::Input { .. } if !allow_input => Err(Error::invalid("the output map cannot depend on u")),
            NlTerm::Monomial { indices, .. } => {
                if !(2..=3).contains(&indices.len()) {
                    return Err(Error::invalid("monomials must have degree 2 or 3"));
                }
                if indices.iter().any(|&i| i >= n) {
                    return Err(Error::invalid("monomial index out of range"));
                }
                Ok(())
            }
            NlTerm::Saturation { index, level, .. } => {
                if *index >= n {
                    return Err(Error::invalid(format!("state index {index} out of range")));
                }
                if !(*level > 0.0 && level.is_finite()) {
                    return Err(Error::invalid("saturation level must be positive"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// `x' = f(x, u, p)`, `y = h(x, p)` with every term vanishing at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearParametricSystem {
    pub n: usize,
    pub f: Vec<Vec<NlTerm>>,
    pub h: Vec<NlTerm>,
    pub param_interval: [f64; 2],
}

#[derive(Clone, Debug)]
enum Frozen {
    State(usize, f64),
    Input(f64),
    Monomial(Vec<usize>, f64),
    Saturation(usize, f64, f64),
}

impl Frozen {
    fn new(t: &NlTerm, p: f64) -> Self {
        let c = t.coeff().eval(p);
        match t {
            NlTerm::State { index, .. } => Frozen::State(*index, c),
            NlTerm::Input { .. } => Frozen::Input(c),
            NlTerm::Monomial { indices, .. } => Frozen::Monomial(indices.clone(), c),
            NlTerm::Saturation { index, level, .. } => Frozen::Saturation(*index, *level, c),
        }
    }

    fn eval(&self, x: &[f64], u: f64) -> f64 {
        match self {
            Frozen::State(i, c) => c * x[*i],
            Frozen::Input(c) => c * u,
            Frozen::Monomial(idx, c) => c * idx.iter().map(|&i| x[i]).product::<f64>(),
            Frozen::Saturation(i, l, c) => c * x[*i].clamp(-l, *l),
        }
    }

    /// Derivative at the origin with respect to `x_j`.
    fn slope_at_origin(&self, j: usize) -> f64 {
        match self {
            Frozen::State(i, c) | Frozen::Saturation(i, _, c) if *i == j => *c,
            _ => 0.0,
        }
    }
}

/// The plant frozen at one parameter value.
pub struct NonlinearPlant {
    f: Vec<Vec<Frozen>>,
    h: Vec<Frozen>,
}

impl Plant for NonlinearPlant {
    fn n(&self) -> usize {
        self.f.len()
    }

    fn rhs(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        for (d, row) in dx.iter_mut().zip(&self.f) {
            *d = row.iter().map(|t| t.eval(x, u)).sum();
        }
    }

    fn output(&self, x: &[f64]) -> f64 {
        self.h.iter().map(|t| t.eval(x, 0.0)).sum()
    }
}

impl NonlinearParametricSystem {
    pub fn validate(&self) -> Result<()> {
        validate_interval(self.param_interval)?;
        if self.n == 0 || self.f.len() != self.n {
            return Err(Error::DimensionMismatch(format!("f has {} rows for n = {}", self.f.len(), self.n)));
        }
        for t in self.f.iter().flatten() {
            t.validate(self.n, true)?;
        }
        for t in &self.h {
            t.validate(self.n, false)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn at(&self, p: f64) -> Result<NonlinearPlant> {
        check_in_interval(self.param_interval, p)?;
        Ok(NonlinearPlant {
            f: self.f.iter().map(|row| row.iter().map(|t| Frozen::new(t, p)).collect()).collect(),
            h: self.h.iter().map(|t| Frozen::new(t, p)).collect(),
        })
    }

    pub fn eval_f(&self, x: &[f64], u: f64, p: f64) -> Result<Vec<f64>> {
        let plant = self.at(p)?;
        let mut dx = vec![0.0; self.n];
        plant.rhs(x, u, &mut dx);
        Ok(dx)
    }

    pub fn eval_h(&self, x: &[f64], p: f64) -> Result<f64> {
        Ok(self.at(p)?.output(x))
    }

    /// `df/dx` at the origin.
    pub fn jacobian_at_origin(&self, p: f64) -> Result<Matrix> {
        let plant = self.at(p)?;
        Ok(Matrix::from_fn(self.n, self.n, |i, j| plant.f[i].iter().map(|t| t.slope_at_origin(j)).sum()))
    }

    /// Checks `f(0,0,p) = 0`, `h(0,p) = 0` and a Hurwitz linearization on `grid`.
    pub fn check_assumptions(&self, grid: &[f64]) -> Result<()> {
        let zero = vec![0.0; self.n];
        for &p in grid {
            let f0 = self.eval_f(&zero, 0.0, p)?;
            if f0.iter().any(|v| *v != 0.0) || self.eval_h(&zero, p)? != 0.0 {
                return Err(Error::invalid(format!("origin is not an equilibrium at p = {p}")));
            }
            let j = self.jacobian_at_origin(p)?;
            if !is_hurwitz(&j, 0.0)? {
                return Err(Error::NotHurwitz { max_real: spectrum(&j)?.max_real() });
            }
        }
        Ok(())
    }
}

/// Six-state cascade of damped Duffing oscillators with a cubic output.
pub fn make_nl_benchmark(param_interval: [f64; 2]) -> Result<NonlinearParametricSystem> {
    let stiff = |index, base: f64, slope: f64| NlTerm::State {
        index,
        coeff: CoefficientFunction::Polynomial { coeffs: vec![-base, -slope] },
    };
    let f = vec![
        vec![NlTerm::state(1, 1.0)],
        vec![stiff(0, 1.0, 1.0), NlTerm::state(1, -0.5), NlTerm::monomial(&[0, 0, 0], -0.3), NlTerm::input(1.0)],
        vec![NlTerm::state(3, 1.0)],
        vec![NlTerm::state(2, -2.0), NlTerm::state(3, -0.6), NlTerm::monomial(&[2, 2, 2], -0.2), NlTerm::state(0, 0.8)],
        vec![NlTerm::state(5, 1.0)],
        vec![NlTerm::state(4, -3.0), NlTerm::state(5, -0.8), NlTerm::state(2, 1.0)],
    ];
    let h = vec![NlTerm::state(4, 1.0), NlTerm::monomial(&[4, 4, 4], 0.1)];
    let sys = NonlinearParametricSystem { n: 6, f, h, param_interval };
    sys.validate()?;
    Ok(sys)
}

pub const NL_BENCHMARK_INTERVAL: [f64; 2] = [0.5, 2.0];

/// Basis functions `eta_j(w, p)` of the joint generator-state/parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearBasisSet {
    /// `exp(-|z - c_j|^2 / (2 s_j^2))` with `z` the standardized `(w, p)`.
    GaussianRbf {
        centers: Vec<Vec<f64>>,
        widths: Vec<f64>,
        mean: Vec<f64>,
        scale: Vec<f64>,
        seed: u64,
        sampling_box: Vec<[f64; 2]>,
    },
    /// `phi_j(p) w_l` for every basis function and generator coordinate.
    ParamTimesState { basis: BasisSet, nu: usize },
}

impl NonlinearBasisSet {
    /// Standardizes the training samples `(w(t), p_k)` and draws `n` centers
    /// uniformly from `[2 min - max, 2 max - min]` per coordinate.
    pub fn rbf_from_data(data: &SnapshotDataset, n: usize, width: f64, seed: u64) -> Result<Self> {
        data.validate()?;
        if n == 0 || !(width > 0.0 && width.is_finite()) {
            return Err(Error::invalid("RBF basis needs n >= 1 and a positive width"));
        }
        let d = data.nu() + 1;
        let samples: Vec<Vec<f64>> = data
            .params
            .iter()
            .flat_map(|&p| {
                (0..data.h()).map(move |i| {
                    let mut z: Vec<f64> = data.omega.row(i).iter().copied().collect();
                    z.push(p);
                    z
                })
            })
            .collect();
        let count = samples.len() as f64;
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for j in 0..d {
            mean[j] = samples.iter().map(|z| z[j]).sum::<f64>() / count;
            let var = samples.iter().map(|z| (z[j] - mean[j]).powi(2)).sum::<f64>() / count;
            // constant coordinates keep unit scale
            scale[j] = if var.sqrt() > 1e-12 * mean[j].abs().max(1.0) { var.sqrt() } else { 1.0 };
        }
        let sampling_box: Vec<[f64; 2]> = (0..d)
            .map(|j| {
                let (lo, hi) = samples
                    .iter()
                    .map(|z| (z[j] - mean[j]) / scale[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                [2.0 * lo - hi, 2.0 * hi - lo]
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..n)
            .map(|_| {
                sampling_box
                    .iter()
                    .map(|&[lo, hi]| if hi > lo { rng.random_range(lo..hi) } else { lo })
                    .collect()
            })
            .collect();
        Ok(NonlinearBasisSet::GaussianRbf { centers, widths: vec![width; n], mean, scale, seed, sampling_box })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NonlinearBasisSet::GaussianRbf { centers, widths, mean, scale, sampling_box, .. } => {
                let d = mean.len();
                if centers.is_empty() || centers.len() != widths.len() {
                    return Err(Error::invalid("RBF basis needs equally many centers and widths"));
                }
                if scale.len() != d || sampling_box.len() != d || centers.iter().any(|c| c.len() != d) {
                    return Err(Error::DimensionMismatch("RBF coordinates disagree in dimension".into()));
                }
                if widths.iter().chain(scale).any(|w| !(*w > 0.0 && w.is_finite())) {
                    return Err(Error::invalid("RBF widths and scales must be positive"));
                }
                Ok(())
            }
            NonlinearBasisSet::ParamTimesState { basis, nu } => {
                if *nu == 0 {
                    return Err(Error::invalid("nu must be positive"));
                }
                basis.validate()
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NonlinearBasisSet::GaussianRbf { centers, .. } => centers.len(),
            NonlinearBasisSet::ParamTimesState { basis, nu } => basis.len() * nu,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Generator dimension the basis expects.
    pub fn nu(&self) -> usize {
        match self {
            NonlinearBasisSet::GaussianRbf { mean, .. } => mean.len() - 1,
            NonlinearBasisSet::ParamTimesState { nu, .. } => *nu,
        }
    }

    /// The row `H_N(w, p)`.
    pub fn eval(&self, omega: &[f64], p: f64) -> Vec<f64> {
        match self {
            NonlinearBasisSet::GaussianRbf { centers, widths, mean, scale, .. } => {
                let z: Vec<f64> = omega
                    .iter()
                    .chain(std::iter::once(&p))
                    .enumerate()
                    .map(|(j, v)| (v - mean[j]) / scale[j])
                    .collect();
                centers
                    .iter()
                    .zip(widths)
                    .map(|(c, s)| {
                        let d2: f64 = c.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                        (-d2 / (2.0 * s * s)).exp()
                    })
                    .collect()
            }
            NonlinearBasisSet::ParamTimesState { basis, .. } => {
                let phi = basis.eval_raw(p);
                phi.iter().flat_map(|f| omega.iter().map(move |w| f * w)).collect()
            }
        }
    }

    /// Center `j` mapped back to raw `(w, p)` coordinates.
    pub fn center_raw(&self, j: usize) -> Option<(Vec<f64>, f64)> {
        match self {
            NonlinearBasisSet::GaussianRbf { centers, mean, scale, .. } => {
                let raw: Vec<f64> = centers[j].iter().enumerate().map(|(i, c)| mean[i] + scale[i] * c).collect();
                let (w, p) = raw.split_at(raw.len() - 1);
                Some((w.to_vec(), p[0]))
            }
            NonlinearBasisSet::ParamTimesState { .. } => None,
        }
    }

    /// Whether `(w, p)` lies inside the center sampling box.
    pub fn in_trust_region(&self, omega: &[f64], p: f64) -> bool {
        match self {
            NonlinearBasisSet::GaussianRbf { mean, scale, sampling_box, .. } => omega
                .iter()
                .chain(std::iter::once(&p))
                .enumerate()
                .all(|(j, v)| {
                    let z = (v - mean[j]) / scale[j];
                    z >= sampling_box[j][0] - 1e-12 && z <= sampling_box[j][1] + 1e-12
                }),
            NonlinearBasisSet::ParamTimesState { .. } => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlProvenance {
    pub window: [f64; 2],
    pub k: usize,
    pub h: usize,
}

/// Fitted weights `Theta` with their basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearWeightVector {
    pub theta: Vec<f64>,
    pub basis: NonlinearBasisSet,
    pub provenance: NlProvenance,
}

impl NonlinearWeightVector {
    pub fn eval(&self, omega: &[f64], p: f64) -> f64 {
        eval_nonlinear_moment(&self.theta, &self.basis, omega, p)
    }
}

/// `H_N(w, p) Theta`.
pub fn eval_nonlinear_moment(theta: &[f64], basis: &NonlinearBasisSet, omega: &[f64], p: f64) -> f64 {
    basis.eval(omega, p).iter().zip(theta).map(|(a, b)| a * b).sum()
}

/// Stacked regression matrix over all window samples and parameters.
pub fn regression_matrix(data: &SnapshotDataset, basis: &NonlinearBasisSet) -> Matrix {
    let (h, k, n) = (data.h(), data.k(), basis.len());
    let mut r = Matrix::zeros(h * k, n);
    for (kk, &p) in data.params.iter().enumerate() {
        for i in 0..h {
            let w: Vec<f64> = data.omega.row(i).iter().copied().collect();
            for (j, v) in basis.eval(&w, p).into_iter().enumerate() {
                r[(kk * h + i, j)] = v;
            }
        }
    }
    r
}

/// Least-squares fit of `Theta` to the stacked window outputs.
pub fn fit_nonlinear_moment(data: &SnapshotDataset, basis: &NonlinearBasisSet, ridge: Option<f64>) -> Result<NonlinearWeightVector> {
    data.validate()?;
    basis.validate()?;
    let (h, nu, k, n) = (data.h(), data.nu(), data.k(), basis.len());
    if basis.nu() != nu {
        return Err(Error::DimensionMismatch(format!("basis expects nu = {}, data has {nu}", basis.nu())));
    }
    if h < nu {
        return Err(Error::WindowTooShort { h, nu });
    }
    if h * k < n && ridge.is_none() {
        return Err(Error::RankDeficient { rank: h * k, required: n, hint: " (need h K >= N)" });
    }
    let r = regression_matrix(data, basis);
    let m = Matrix::from_fn(h * k, 1, |row, _| data.outputs[(row % h, row / h)]);
    let lambda = ridge.map(|l| vec![l; n]);
    let theta = least_squares(&r, &m, lambda.as_deref())?;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite regression weights".into()));
    }
    Ok(NonlinearWeightVector {
        theta: theta.iter().copied().collect(),
        basis: basis.clone(),
        provenance: NlProvenance { window: [data.times[0], data.times[h - 1]], k, h },
    })
}

/// Gain `delta` of the reduced model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaMap {
    Constant { delta: Vec<f64> },
    /// Piecewise-linear in `p` between the table rows.
    Table { params: Vec<f64>, values: Vec<Vec<f64>> },
}

impl DeltaMap {
    /// `delta = gamma (1, ..., 1)`.
    pub fn uniform(nu: usize, gamma: f64) -> Self {
        DeltaMap::Constant { delta: vec![gamma; nu] }
    }

    pub fn eval(&self, p: f64) -> Vec<f64> {
        match self {
            DeltaMap::Constant { delta } => delta.clone(),
            DeltaMap::Table { params, values } => {
                let k = params.partition_point(|&q| q < p);
                if k == 0 {
                    return values[0].clone();
                }
                if k == params.len() {
                    return values[k - 1].clone();
                }
                let s = (p - params[k - 1]) / (params[k] - params[k - 1]);
                values[k - 1].iter().zip(&values[k]).map(|(a, b)| a + s * (b - a)).collect()
            }
        }
    }

    fn rows(&self) -> Vec<&[f64]> {
        match self {
            DeltaMap::Constant { delta } => vec![delta],
            DeltaMap::Table { values, .. } => values.iter().map(|v| v.as_slice()).collect(),
        }
    }
}

/// `S - delta L`.
pub fn closed_loop(gen: &SignalGenerator, delta: &[f64]) -> Matrix {
    gen.s() - Matrix::from_column_slice(delta.len(), 1, delta) * gen.l()
}

/// `xi' = (S - delta L) xi + delta u`, `psi = kappa~(xi, p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearRom {
    pub generator: SignalGenerator,
    pub delta: DeltaMap,
    pub weights: NonlinearWeightVector,
}

pub fn assemble_nonlinear_rom(gen: &SignalGenerator, delta: DeltaMap, weights: NonlinearWeightVector) -> Result<NonlinearRom> {
    let nu = gen.nu();
    if weights.basis.nu() != nu {
        return Err(Error::DimensionMismatch(format!("weights expect nu = {}, generator has {nu}", weights.basis.nu())));
    }
    if let DeltaMap::Table { params, values } = &delta {
        if params.is_empty() || params.len() != values.len() || params.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("delta table needs increasing parameters, one row each"));
        }
    }
    for row in delta.rows() {
        if row.len() != nu {
            return Err(Error::DimensionMismatch(format!("delta has {} entries, expected {nu}", row.len())));
        }
        let f = closed_loop(gen, row);
        if !is_hurwitz(&f, 0.0)? {
            return Err(Error::NotHurwitz { max_real: spectrum(&f)?.max_real() });
        }
    }
    Ok(NonlinearRom { generator: gen.clone(), delta, weights })
}

/// The reduced model frozen at one parameter value.
pub struct NonlinearRomPlant<'a> {
    f: Matrix,
    delta: Vector,
    weights: &'a NonlinearWeightVector,
    p: f64,
}

impl NonlinearRom {
    pub fn at(&self, p: f64) -> NonlinearRomPlant<'_> {
        let delta = self.delta.eval(p);
        NonlinearRomPlant {
            f: closed_loop(&self.generator, &delta),
            delta: Vector::from_vec(delta),
            weights: &self.weights,
            p,
        }
    }

    /// Largest real part of `sigma(S - delta(p) L)`.
    pub fn max_real(&self, p: f64) -> Result<f64> {
        Ok(spectrum(&closed_loop(&self.generator, &self.delta.eval(p)))?.max_real())
    }
}

impl Plant for NonlinearRomPlant<'_> {
    fn n(&self) -> usize {
        self.delta.len()
    }

    fn rhs(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        for (i, d) in dx.iter_mut().enumerate() {
            *d = (0..x.len()).map(|j| self.f[(i, j)] * x[j]).sum::<f64>() + self.delta[i] * u;
        }
    }

    fn output(&self, x: &[f64]) -> f64 {
        self.weights.eval(x, self.p)
    }
}
