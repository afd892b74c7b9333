//! Experiment configuration: one JSON document with the sections
//! `system`, `generator`, `reduction`, `data`, `verification` and
//! `evaluation`. Missing fields are filled from per-method defaults before
//! strict deserialization.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::FreqGrid;
use crate::moment_basis::equidistant;
use crate::nonlinear::{make_nl_benchmark, NonlinearParametricSystem, NL_BENCHMARK_INTERVAL};
use crate::psys::{make_benchmark, ParametricLTI, BENCHMARK_A_RANGE, BENCHMARK_B_RANGE};
use crate::siggen::{log_grid, SignalGenerator};
use crate::sim::{Method, SimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMethod {
    /// Nested Sylvester series around a center.
    Series,
    /// Basis-function weights fitted to exact moments.
    Basis,
    /// Basis-function weights estimated from simulated snapshots.
    Data,
    /// RBF regression of the nonlinear moment from snapshots.
    Nl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSection {
    Benchmark { k: usize, a_range: [f64; 2], b_range: [f64; 2] },
    File { path: String },
    NlBenchmark { param_interval: [f64; 2] },
    NlFile { path: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    /// Explicit frequencies; when absent, `count` log-spaced values on
    /// `[10^lo_exp, 10^hi_exp]`.
    pub freqs: Option<Vec<f64>>,
    pub lo_exp: f64,
    pub hi_exp: f64,
    pub count: usize,
    pub include_zero: bool,
    /// Scales the default `w(0)`.
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainSection {
    /// Certificate-based gain; `certificate` is `series` (nested Lyapunov,
    /// `Q = I`) or `lyapunov` (pointwise solve, `Q = I`).
    Preserving { certificate: String, epsilon: f64 },
    /// Poles at `-zeta w +- i w`.
    Mirrored { zeta: f64 },
    Damped { gamma: f64 },
    Placed { poles: Vec<f64> },
    Constant { g: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSection {
    pub method: ReductionMethod,
    /// Series truncation orders reported; the model uses the largest.
    pub orders: Vec<usize>,
    pub center: f64,
    /// Number of polynomial basis functions.
    pub basis_order: usize,
    pub gain: GainSection,
    /// Nonlinear: number of RBFs, common width, center seed, ridge weight.
    pub rbf: usize,
    pub width: f64,
    pub seed: u64,
    pub ridge: Option<f64>,
    /// Nonlinear: `delta = gamma (1, ..., 1)`.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Number of equidistant training parameters.
    pub k: usize,
    pub window: [f64; 2],
    pub h: usize,
    pub dt: f64,
    pub t_end: f64,
    pub method: Method,
    pub noise_std: f64,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationSection {
    pub grid: usize,
    pub stability_margin: f64,
    /// Parameters at which interpolation at `sigma(S)` is checked.
    pub moment_matching: Vec<f64>,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub p_grid: usize,
    pub h2_params: Vec<f64>,
    pub freq_grid: FreqGrid,
    pub bode_params: Vec<f64>,
    pub bode_points: usize,
    /// Nonlinear: held-out parameters for the output comparison.
    pub heldout: Vec<f64>,
    pub gnuplot: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemSection,
    pub generator: GeneratorSection,
    pub reduction: ReductionSection,
    pub data: DataSection,
    pub verification: VerificationSection,
    pub evaluation: EvaluationSection,
}

fn base_defaults() -> Value {
    json!({
        "name": "experiment",
        "system": {"kind": "benchmark", "k": 500, "a_range": BENCHMARK_A_RANGE, "b_range": BENCHMARK_B_RANGE},
        "generator": {"freqs": null, "lo_exp": 0.0, "hi_exp": 3.1, "count": 50, "include_zero": false, "amplitude": 1.0},
        "reduction": {
            "method": "series",
            "orders": [1, 2, 3, 4],
            "center": 0.55,
            "basis_order": 6,
            "gain": {"kind": "preserving", "certificate": "series", "epsilon": 1e-14},
            "rbf": 40,
            "width": 1.0,
            "seed": 0,
            "ridge": null,
            "delta": 1.0
        },
        "data": {
            "k": 10, "window": [17.38, 20.0], "h": 64, "dt": 1e-3, "t_end": 20.0,
            "method": "expm-exact", "noise_std": 0.0, "noise_seed": 0
        },
        "verification": {"grid": 50, "stability_margin": 0.0, "moment_matching": [0.1, 0.55, 1.0], "tol": 1e-8},
        "evaluation": {
            "p_grid": 200,
            "h2_params": [0.1, 0.2, 0.3, 0.35, 0.4, 0.5, 0.55, 0.6, 0.7, 0.75, 0.8, 0.9, 1.0],
            "freq_grid": {"lo": 0.1, "hi": 1e4, "points": 1000},
            "bode_params": [0.1, 0.2, 0.4, 1.0],
            "bode_points": 400,
            "heldout": [],
            "gnuplot": false
        }
    })
}

fn method_defaults(method: ReductionMethod) -> Value {
    match method {
        ReductionMethod::Series => json!({}),
        ReductionMethod::Basis | ReductionMethod::Data => json!({
            "generator": {"count": 16},
            "reduction": {"gain": {"kind": "mirrored", "zeta": 0.2}}
        }),
        ReductionMethod::Nl => json!({
            "system": {"kind": "nl_benchmark", "param_interval": NL_BENCHMARK_INTERVAL},
            "generator": {"freqs": [0.6], "amplitude": 0.3},
            "reduction": {"delta": 0.6},
            "data": {"k": 9, "window": [148.67, 200.0], "h": 440, "dt": 1e-2, "t_end": 200.0, "method": "rk4"},
            "verification": {"moment_matching": []},
            "evaluation": {"h2_params": [], "bode_params": [], "heldout": [0.8, 1.7]}
        }),
    }
}

/// Overlays `top` on `base`; objects merge key by key, everything else
/// replaces. A `kind` change in a tagged object replaces the whole object.
fn merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            if let (Some(bk), Some(tk)) = (b.get("kind"), t.get("kind")) {
                if bk != tk {
                    *b = t.clone();
                    return;
                }
            }
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, t) => *b = t.clone(),
    }
}

impl ExperimentConfig {
    /// Parses a user document, fills defaults and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| Error::config("$", e.to_string()))?;
        Self::from_value(&user)
    }

    pub fn from_value(user: &Value) -> Result<Self> {
        if !user.is_object() {
            return Err(Error::config("$", "configuration must be a JSON object"));
        }
        let method = match user.pointer("/reduction/method") {
            None => ReductionMethod::Series,
            Some(m) => serde_json::from_value(m.clone()).map_err(|e| Error::config("reduction.method", e.to_string()))?,
        };
        let mut merged = base_defaults();
        merge(&mut merged, &method_defaults(method));
        merge(&mut merged, user);
        let cfg: Self = serde_path_to_error::deserialize(merged).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn defaults(method: ReductionMethod) -> Self {
        Self::from_value(&json!({"reduction": {"method": method}})).expect("built-in defaults are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.reduction;
        let nl_system = matches!(self.system, SystemSection::NlBenchmark { .. } | SystemSection::NlFile { .. });
        if (r.method == ReductionMethod::Nl) != nl_system {
            return Err(Error::config("system.kind", "nonlinear systems go with reduction.method = nl and vice versa"));
        }
        if let SystemSection::Benchmark { k, .. } = self.system {
            if k == 0 {
                return Err(Error::config("system.k", "must be positive"));
            }
        }
        let g = &self.generator;
        if g.freqs.is_none() && g.count == 0 {
            return Err(Error::config("generator.count", "must be positive"));
        }
        if !(g.amplitude > 0.0 && g.amplitude.is_finite()) {
            return Err(Error::config("generator.amplitude", "must be positive"));
        }
        if r.method == ReductionMethod::Series && (r.orders.is_empty() || r.orders.contains(&0)) {
            return Err(Error::config("reduction.orders", "needs at least one positive order"));
        }
        if matches!(r.method, ReductionMethod::Basis | ReductionMethod::Data) {
            if r.basis_order == 0 {
                return Err(Error::config("reduction.basis_order", "must be positive"));
            }
            if matches!(r.gain, GainSection::Preserving { .. }) {
                return Err(Error::config("reduction.gain", "the preserving gain needs Pi(p), which a basis moment map lacks"));
            }
        }
        if let GainSection::Preserving { certificate, epsilon } = &r.gain {
            if certificate != "series" && certificate != "lyapunov" {
                return Err(Error::config("reduction.gain.certificate", "expected 'series' or 'lyapunov'"));
            }
            if !(*epsilon >= 0.0) {
                return Err(Error::config("reduction.gain.epsilon", "must be nonnegative"));
            }
        }
        if r.method == ReductionMethod::Nl {
            if r.rbf == 0 || !(r.width > 0.0) {
                return Err(Error::config("reduction.rbf", "needs at least one RBF and a positive width"));
            }
            if !(r.delta > 0.0) {
                return Err(Error::config("reduction.delta", "must be positive"));
            }
        }
        let d = &self.data;
        if matches!(r.method, ReductionMethod::Data | ReductionMethod::Nl) {
            if d.k == 0 {
                return Err(Error::config("data.k", "must be positive"));
            }
            if !(d.window[1] > d.window[0] && d.window[0] >= 0.0) {
                return Err(Error::config("data.window", "needs 0 <= start < end"));
            }
            if !(d.noise_std >= 0.0) {
                return Err(Error::config("data.noise_std", "must be nonnegative"));
            }
            self.sim_config().validate().map_err(|e| Error::config("data", e.to_string()))?;
        }
        if r.method == ReductionMethod::Basis && d.k == 0 {
            return Err(Error::config("data.k", "must be positive"));
        }
        if self.verification.grid == 0 {
            return Err(Error::config("verification.grid", "must be positive"));
        }
        if self.evaluation.p_grid == 0 {
            return Err(Error::config("evaluation.p_grid", "must be positive"));
        }
        self.evaluation.freq_grid.validate().map_err(|e| Error::config("evaluation.freq_grid", e.to_string()))?;
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical_json(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        Ok(serde_json::to_string_pretty(&v)?)
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }

    pub fn generator(&self) -> Result<SignalGenerator> {
        let g = &self.generator;
        let freqs = match &g.freqs {
            Some(f) => f.clone(),
            None => log_grid(g.lo_exp, g.hi_exp, g.count)?,
        };
        let gen = SignalGenerator::from_frequencies(&freqs, g.include_zero)?;
        if g.amplitude != 1.0 {
            gen.scale_omega0(g.amplitude)
        } else {
            Ok(gen)
        }
    }

    pub fn linear_system(&self) -> Result<ParametricLTI> {
        match &self.system {
            SystemSection::Benchmark { k, a_range, b_range } => make_benchmark(*k, *a_range, *b_range),
            SystemSection::File { path } => ParametricLTI::from_json(&std::fs::read_to_string(path)?),
            _ => Err(Error::config("system.kind", "expected a linear system")),
        }
    }

    pub fn nonlinear_system(&self) -> Result<NonlinearParametricSystem> {
        match &self.system {
            SystemSection::NlBenchmark { param_interval } => make_nl_benchmark(*param_interval),
            SystemSection::NlFile { path } => NonlinearParametricSystem::from_json(&std::fs::read_to_string(path)?),
            _ => Err(Error::config("system.kind", "expected a nonlinear system")),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig { dt: self.data.dt, t_end: self.data.t_end, method: self.data.method, record_stride: 1, sample_times: None }
    }

    pub fn training_params(&self, interval: [f64; 2]) -> Vec<f64> {
        equidistant(interval, self.data.k)
    }
}
