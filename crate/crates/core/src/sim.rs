//! Simulation of plants driven by a signal generator, snapshot-window
//! extraction and output-noise injection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{blocks, expm, Matrix};
use crate::moment_basis::{NoiseMeta, SnapshotDataset};
use crate::nonlinear::NonlinearParametricSystem;
use crate::psys::ParametricLTI;
use crate::siggen::SignalGenerator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rk4,
    /// Exact discretization of a linear plant through the matrix exponential
    /// of the plant-generator interconnection.
    ExpmExact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub method: Method,
    #[serde(default = "one")]
    pub record_stride: usize,
    /// Record exactly at these times instead of on the stride grid.
    #[serde(default)]
    pub sample_times: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 1e-3, t_end: 20.0, method: Method::ExpmExact, record_stride: 1, sample_times: None }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        if !(self.t_end >= self.dt) || !self.t_end.is_finite() {
            return Err(Error::invalid("t_end must be at least dt"));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record_stride must be positive"));
        }
        if let Some(ts) = &self.sample_times {
            if ts.is_empty() {
                return Err(Error::invalid("sample_times must not be empty"));
            }
            if ts.windows(2).any(|w| w[1] <= w[0]) || ts[0] < 0.0 || *ts.last().unwrap() > self.t_end * (1.0 + 1e-12) {
                return Err(Error::invalid("sample_times must be increasing within [0, t_end]"));
            }
        }
        Ok(())
    }

    fn record_times(&self) -> Vec<f64> {
        if let Some(ts) = &self.sample_times {
            return ts.clone();
        }
        let steps = (self.t_end / self.dt).round() as usize;
        (0..=steps)
            .step_by(self.record_stride)
            .map(|k| k as f64 * self.dt)
            .collect()
    }
}

/// A plant frozen at a parameter value.
pub trait Plant {
    fn n(&self) -> usize;
    fn rhs(&self, x: &[f64], u: f64, dx: &mut [f64]);
    fn output(&self, x: &[f64]) -> f64;
}

/// Linear plant with a row-sparse copy of `A` for fast products.
pub struct LinearPlant {
    a: Matrix,
    rows: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl LinearPlant {
    pub fn new(a: Matrix, b: &Matrix, c: &Matrix) -> Self {
        let rows = (0..a.nrows())
            .map(|i| (0..a.ncols()).filter(|&j| a[(i, j)] != 0.0).map(|j| (j, a[(i, j)])).collect())
            .collect();
        Self { a, rows, b: b.iter().copied().collect(), c: c.iter().copied().collect() }
    }

    pub fn from_system(system: &ParametricLTI, p: f64) -> Result<Self> {
        let (a, b, c) = system.eval(p)?;
        Ok(Self::new(a, &b, &c))
    }
}

impl Plant for LinearPlant {
    fn n(&self) -> usize {
        self.b.len()
    }

    fn rhs(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            dx[i] = row.iter().map(|&(j, v)| v * x[j]).sum::<f64>() + self.b[i] * u;
        }
    }

    fn output(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }
}

/// Either kind of full-order model.
#[derive(Clone, Copy)]
pub enum Model<'a> {
    Linear(&'a ParametricLTI),
    Nonlinear(&'a NonlinearParametricSystem),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Row `k` is the state at `times[k]`.
    #[serde(with = "crate::serde_mat")]
    pub states: Matrix,
    pub outputs: Vec<f64>,
    pub param: f64,
}

impl Trajectory {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.states.ncols()).map(|i| format!("x{i}")));
        header.push("y".into());
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut rec = vec![format!("{t:?}")];
            rec.extend(self.states.row(k).iter().map(|v| format!("{v:?}")));
            rec.push(format!("{:?}", self.outputs[k]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn rk4_step(plant: &dyn Plant, gen: &SignalGenerator, t: f64, h: f64, x: &mut [f64], work: &mut [Vec<f64>; 5]) {
    let n = x.len();
    let [k1, k2, k3, k4, tmp] = work;
    let u0 = gen.input_at(t);
    let um = gen.input_at(t + 0.5 * h);
    let u1 = gen.input_at(t + h);
    plant.rhs(x, u0, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    plant.rhs(tmp, um, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    plant.rhs(tmp, um, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    plant.rhs(tmp, u1, k4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// RK4 integration with steps of at most `cfg.dt`, landing exactly on every
/// recorded time.
pub fn simulate_rk4(plant: &dyn Plant, gen: &SignalGenerator, x0: &[f64], cfg: &SimConfig, param: f64) -> Result<Trajectory> {
    cfg.validate()?;
    let n = plant.n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, plant has {n} states", x0.len())));
    }
    let rec = cfg.record_times();
    let mut x = x0.to_vec();
    let mut work: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut states = Matrix::zeros(rec.len(), n);
    let mut outputs = Vec::with_capacity(rec.len());
    let mut t = 0.0;
    for (k, &tr) in rec.iter().enumerate() {
        let span = tr - t;
        if span > 0.0 {
            let steps = (span / cfg.dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for s in 0..steps {
                rk4_step(plant, gen, t + s as f64 * h, h, &mut x, &mut work);
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { t: tr });
            }
            t = tr;
        }
        states.row_mut(k).copy_from_slice(&x);
        outputs.push(plant.output(&x));
    }
    Ok(Trajectory { times: rec, states, outputs, param })
}

/// Exact one-step map `x(t + d) = Phi x(t) + Gamma w(t)` of a linear plant
/// driven by `u = L w`.
struct Propagator {
    delta: f64,
    phi: Vec<(Vec<usize>, Matrix)>,
    gamma: Matrix,
}

fn gen_blocks(gen: &SignalGenerator) -> Vec<Vec<usize>> {
    blocks::components(gen.s())
}

impl Propagator {
    fn new(a: &Matrix, comps: &[Vec<usize>], b: &[f64], gen: &SignalGenerator, gblocks: &[Vec<usize>], delta: f64) -> Result<Self> {
        let n = a.nrows();
        let nu = gen.nu();
        let mut phi = Vec::with_capacity(comps.len());
        let mut gamma = Matrix::zeros(n, nu);
        for comp in comps {
            let ac = blocks::select(a, comp, comp);
            let nc = comp.len();
            let b_c: Vec<f64> = comp.iter().map(|&i| b[i]).collect();
            let mut phi_c: Option<Matrix> = None;
            if b_c.iter().any(|&v| v != 0.0) {
                for gb in gblocks {
                    let nd = gb.len();
                    let l_d: Vec<f64> = gb.iter().map(|&j| gen.l()[(0, j)]).collect();
                    if l_d.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    // [[A_c, B_c L_d], [0, S_d]] * delta
                    let mut m = Matrix::zeros(nc + nd, nc + nd);
                    m.view_mut((0, 0), (nc, nc)).copy_from(&(&ac * delta));
                    for i in 0..nc {
                        for j in 0..nd {
                            m[(i, nc + j)] = b_c[i] * l_d[j] * delta;
                        }
                    }
                    let sd = blocks::select(gen.s(), gb, gb);
                    m.view_mut((nc, nc), (nd, nd)).copy_from(&(sd * delta));
                    let e = expm(&m)?;
                    let g = e.view((0, nc), (nc, nd)).clone_owned();
                    blocks::scatter(&mut gamma, comp, gb, &g);
                    if phi_c.is_none() {
                        phi_c = Some(e.view((0, 0), (nc, nc)).clone_owned());
                    }
                }
            }
            let phi_c = match phi_c {
                Some(p) => p,
                None => expm(&(&ac * delta))?,
            };
            phi.push((comp.clone(), phi_c));
        }
        Ok(Self { delta, phi, gamma })
    }

    fn apply(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        for (comp, m) in &self.phi {
            for (i, &ci) in comp.iter().enumerate() {
                let mut acc = 0.0;
                for (j, &cj) in comp.iter().enumerate() {
                    acc += m[(i, j)] * x[cj];
                }
                out[ci] = acc;
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, wj) in w.iter().enumerate() {
                let g = self.gamma[(i, j)];
                if g != 0.0 {
                    acc += g * wj;
                }
            }
            *o += acc;
        }
    }
}

/// Exact simulation of a linear plant; jumps directly between recorded
/// times, caching one propagator per distinct step length.
pub fn simulate_exact(plant: &LinearPlant, gen: &SignalGenerator, x0: &[f64], cfg: &SimConfig, param: f64) -> Result<Trajectory> {
    cfg.validate()?;
    let n = plant.n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, plant has {n} states", x0.len())));
    }
    let comps = blocks::components(&plant.a);
    let gblocks = gen_blocks(gen);
    let rec = cfg.record_times();
    let mut cache: Vec<Propagator> = Vec::new();
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut states = Matrix::zeros(rec.len(), n);
    let mut outputs = Vec::with_capacity(rec.len());
    let mut t = 0.0;
    for (k, &tr) in rec.iter().enumerate() {
        let delta = tr - t;
        if delta > 0.0 {
            let idx = match cache.iter().position(|p| (p.delta - delta).abs() <= 1e-12 * delta) {
                Some(i) => i,
                None => {
                    cache.push(Propagator::new(&plant.a, &comps, &plant.b, gen, &gblocks, delta)?);
                    cache.len() - 1
                }
            };
            let w = gen.omega_at(t);
            cache[idx].apply(&x, &w, &mut next);
            std::mem::swap(&mut x, &mut next);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { t: tr });
            }
            t = tr;
        }
        states.row_mut(k).copy_from_slice(&x);
        outputs.push(plant.output(&x));
    }
    Ok(Trajectory { times: rec, states, outputs, param })
}

/// Simulates the plant at `p` driven by `u = L w(t)`; `x0` defaults to zero.
pub fn simulate_interconnection(
    model: Model<'_>,
    gen: &SignalGenerator,
    p: f64,
    x0: Option<&[f64]>,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    match model {
        Model::Linear(sys) => {
            let plant = LinearPlant::from_system(sys, p)?;
            let zero = vec![0.0; plant.n()];
            let x0 = x0.unwrap_or(&zero);
            match cfg.method {
                Method::Rk4 => simulate_rk4(&plant, gen, x0, cfg, p),
                Method::ExpmExact => simulate_exact(&plant, gen, x0, cfg, p),
            }
        }
        Model::Nonlinear(sys) => {
            if cfg.method == Method::ExpmExact {
                return Err(Error::invalid("the exact stepper applies to linear systems only"));
            }
            let plant = sys.at(p)?;
            let zero = vec![0.0; plant.n()];
            simulate_rk4(&plant, gen, x0.unwrap_or(&zero), cfg, p)
        }
    }
}

/// `h` equidistant times spanning `[t_start, t_end]`.
pub fn window_times(t_start: f64, t_end: f64, h: usize) -> Vec<f64> {
    if h == 1 {
        return vec![t_end];
    }
    (0..h).map(|i| t_start + (t_end - t_start) * i as f64 / (h - 1) as f64).collect()
}

/// One resampled window: times, `w(t)` rows and outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub times: Vec<f64>,
    pub omega: Matrix,
    pub outputs: Vec<f64>,
}

/// Resamples the trajectory output at `h` equidistant window times, linearly
/// interpolating between recorded samples.
pub fn extract_window(traj: &Trajectory, gen: &SignalGenerator, t_start: f64, t_end: f64, h: usize) -> Result<Window> {
    if h < gen.nu() {
        return Err(Error::WindowTooShort { h, nu: gen.nu() });
    }
    let (t_min, t_max) = (traj.times[0], *traj.times.last().unwrap());
    let tol = 1e-9 * t_max.abs().max(1.0);
    if !(t_start <= t_end) || t_start < t_min - tol || t_end > t_max + tol {
        return Err(Error::WindowOutsideTrajectory { t_start, t_end, t_min, t_max });
    }
    let times = window_times(t_start, t_end, h);
    let outputs = times
        .iter()
        .map(|&t| {
            let k = traj.times.partition_point(|&r| r < t - tol);
            if k < traj.times.len() && (traj.times[k] - t).abs() <= tol {
                traj.outputs[k]
            } else {
                let k = k.clamp(1, traj.times.len() - 1);
                let (t0, t1) = (traj.times[k - 1], traj.times[k]);
                let (y0, y1) = (traj.outputs[k - 1], traj.outputs[k]);
                y0 + (y1 - y0) * (t - t0) / (t1 - t0)
            }
        })
        .collect();
    Ok(Window { omega: gen.omega_trajectory(&times), times, outputs })
}

/// Simulates every parameter and stacks the window outputs into a dataset.
/// The simulations record exactly at the window times.
pub fn collect_dataset(
    model: Model<'_>,
    gen: &SignalGenerator,
    params: &[f64],
    window: [f64; 2],
    h: usize,
    cfg: &SimConfig,
) -> Result<SnapshotDataset> {
    let times = window_times(window[0], window[1], h);
    if h >= 2 {
        gen.check_sampling_period(times[1] - times[0])?;
    }
    let mut sim_cfg = cfg.clone();
    sim_cfg.t_end = sim_cfg.t_end.max(window[1]);
    sim_cfg.sample_times = Some(times.clone());
    let columns: Vec<Result<Vec<f64>>> = params
        .par_iter()
        .map(|&p| {
            let traj = simulate_interconnection(model, gen, p, None, &sim_cfg)?;
            Ok(extract_window(&traj, gen, window[0], window[1], h)?.outputs)
        })
        .collect();
    let mut outputs = Matrix::zeros(h, params.len());
    for (k, col) in columns.into_iter().enumerate() {
        for (i, y) in col?.into_iter().enumerate() {
            outputs[(i, k)] = y;
        }
    }
    let omega = gen.omega_trajectory(&times);
    SnapshotDataset::new(params.to_vec(), times, omega, outputs)
}

/// Adds i.i.d. `N(0, std^2)` noise to the outputs only.
pub fn add_output_noise(data: &SnapshotDataset, std: f64, seed: u64) -> Result<SnapshotDataset> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::invalid("noise std must be nonnegative"));
    }
    let mut out = data.clone();
    if std > 0.0 {
        let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // column-major: parameter by parameter, time ascending
        for v in out.outputs.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    out.noise_meta = Some(NoiseMeta { std, seed });
    Ok(out)
}
