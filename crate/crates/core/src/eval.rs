//! Error metrics and figure data: relative moment errors, Bode magnitudes
//! and the relative H2 error between full and reduced models.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{is_hurwitz, solve_lyapunov, spectrum, Complex64, Matrix, SylvesterSolver};
use crate::psys::ParametricLTI;
use crate::rom::{FullTransfer, MomentMap, ReducedModel, TransferEvaluator};
use crate::siggen::SignalGenerator;

/// Logarithmic frequency grid `[lo, hi]` rad/s with `points` nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreqGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for FreqGrid {
    fn default() -> Self {
        Self { lo: 0.1, hi: 1e4, points: 1000 }
    }
}

impl FreqGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite()) || self.points < 2 {
            return Err(Error::invalid("frequency grid needs 0 < lo < hi and at least two points"));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        (0..self.points).map(|i| (a + (b - a) * i as f64 / (self.points - 1) as f64).exp()).collect()
    }

    pub fn doubled(&self) -> Self {
        Self { points: 2 * self.points - 1, ..*self }
    }
}

/// `|approx(p) - C Pi(p)| / |C Pi(p)|` along `grid`; the reference comes from
/// exact Sylvester solves.
pub fn moment_error_curve(
    system: &ParametricLTI,
    gen: &SignalGenerator,
    approx: &MomentMap,
    grid: &[f64],
) -> Result<Vec<f64>> {
    grid.par_iter()
        .map(|&p| {
            let (a, b, c) = system.eval(p)?;
            let pi = SylvesterSolver::new(&a, gen.s())?.solve(&(b * gen.l()))?;
            let exact = &c * &pi;
            let approx = match approx {
                MomentMap::Series { series } => series.eval_moment(system, p)?,
                MomentMap::Basis { weights } => weights.eval(p)?,
                MomentMap::Exact => exact.clone(),
            };
            Ok((&approx - &exact).norm() / exact.norm())
        })
        .collect()
}

/// Anything with a transfer function at a parameter value.
#[derive(Clone, Copy)]
pub enum Target<'a> {
    System(&'a ParametricLTI),
    Rom(&'a ReducedModel),
}

enum Evaluator {
    Full(FullTransfer),
    Reduced(TransferEvaluator),
}

impl Evaluator {
    fn new(target: Target<'_>, p: f64) -> Result<Self> {
        Ok(match target {
            Target::System(s) => Evaluator::Full(FullTransfer::new(s, p)?),
            Target::Rom(m) => Evaluator::Reduced(TransferEvaluator::new(&m.eval(p)?)),
        })
    }

    fn eval(&self, s: Complex64) -> Result<Complex64> {
        match self {
            Evaluator::Full(f) => f.eval(s),
            Evaluator::Reduced(r) => r.eval(s),
        }
    }
}

/// `|W(i w, p)|` on `freqs`.
pub fn bode_magnitude(target: Target<'_>, p: f64, freqs: &[f64]) -> Result<Vec<f64>> {
    let ev = Evaluator::new(target, p)?;
    freqs.par_iter().map(|&w| Ok(ev.eval(Complex64::new(0.0, w))?.norm())).collect()
}

fn check_stable(target: Target<'_>, p: f64) -> Result<()> {
    let a = match target {
        Target::System(s) => s.eval(p)?.0,
        Target::Rom(m) => m.eval(p)?.f,
    };
    if !is_hurwitz(&a, 0.0)? {
        return Err(Error::NotHurwitz { max_real: spectrum(&a)?.max_real() });
    }
    Ok(())
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// `(int |W - W_r|^2 dw / int |W|^2 dw)^(1/2)` by the trapezoidal rule on a
/// log grid, over positive and (mirrored) negative frequencies.
pub fn h2_relative_error(reference: Target<'_>, model: Target<'_>, p: f64, grid: &FreqGrid) -> Result<f64> {
    grid.validate()?;
    check_stable(reference, p)?;
    check_stable(model, p)?;
    let w = grid.nodes();
    let full = Evaluator::new(reference, p)?;
    let red = Evaluator::new(model, p)?;
    let vals: Vec<(f64, f64)> = w
        .par_iter()
        .map(|&w| {
            let s = Complex64::new(0.0, w);
            let a = full.eval(s)?;
            let b = red.eval(s)?;
            Ok(((a - b).norm_sqr(), a.norm_sqr()))
        })
        .collect::<Result<_>>()?;
    let (num, den): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
    // conjugate symmetry: the negative half-axis doubles both integrals
    let num = 2.0 * trapezoid(&w, &num);
    let den = 2.0 * trapezoid(&w, &den);
    if den <= 0.0 {
        return Err(Error::NumericalFailure("reference transfer function vanishes on the grid".into()));
    }
    Ok((num / den).sqrt())
}

/// `||C (sI - A)^{-1} B||_H2 = sqrt(trace(C P C^T))` with the controllability
/// Gramian `A P + P A^T + B B^T = 0`.
pub fn h2_norm_gramian(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<f64> {
    let p = solve_lyapunov(&a.transpose(), &(b * b.transpose()))?;
    Ok((c * p * c.transpose()).trace().max(0.0).sqrt())
}

/// Root-mean-square of `y - reference` over that of `reference`.
pub fn nrms(y: &[f64], reference: &[f64]) -> Result<f64> {
    if y.len() != reference.len() || y.is_empty() {
        return Err(Error::DimensionMismatch("signals must be nonempty and equally long".into()));
    }
    let err: f64 = y.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm: f64 = reference.iter().map(|b| b * b).sum();
    if norm == 0.0 {
        return Err(Error::invalid("reference signal is identically zero"));
    }
    Ok((err / norm).sqrt())
}

/// Hex SHA-256 of the canonical system JSON.
pub fn system_hash(system: &ParametricLTI) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(system)?)))
}

/// A sampled curve with metadata written as `# key: value` header lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub meta: Vec<(String, String)>,
    pub x_label: String,
    pub columns: Vec<String>,
    pub x: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Curve {
    pub fn new(x_label: &str, x: Vec<f64>) -> Self {
        Self { meta: Vec::new(), x_label: x_label.into(), columns: Vec::new(), x, values: Vec::new() }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn column(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.x.len() {
            return Err(Error::DimensionMismatch(format!("column {name} has {} values for {} rows", values.len(), self.x.len())));
        }
        self.columns.push(name.into());
        self.values.push(values);
        Ok(self)
    }

    /// CSV with `#` metadata lines; `gnuplot` switches to whitespace
    /// separation.
    pub fn write(&self, out: &mut dyn Write, gnuplot: bool) -> Result<()> {
        for (k, v) in &self.meta {
            writeln!(out, "# {k}: {v}")?;
        }
        let sep = if gnuplot { " " } else { "," };
        let mut header = vec![self.x_label.clone()];
        header.extend(self.columns.iter().cloned());
        if gnuplot {
            write!(out, "# ")?;
        }
        writeln!(out, "{}", header.join(sep))?;
        for (i, x) in self.x.iter().enumerate() {
            let mut row = vec![format!("{x:?}")];
            row.extend(self.values.iter().map(|c| format!("{:?}", c[i])));
            writeln!(out, "{}", row.join(sep))?;
        }
        Ok(())
    }

    pub fn write_file(&self, path: &Path, gnuplot: bool) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f, gnuplot)?;
        f.flush()?;
        Ok(())
    }

    pub fn read(text: &str) -> Result<Self> {
        let mut meta = Vec::new();
        let mut lines = text.lines().peekable();
        while let Some(l) = lines.peek() {
            match l.strip_prefix("# ").and_then(|r| r.split_once(": ")) {
                Some((k, v)) => {
                    meta.push((k.to_string(), v.to_string()));
                    lines.next();
                }
                None => break,
            }
        }
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::invalid("curve has no header"))?
            .split(',')
            .map(|s| s.to_string())
            .collect();
        let mut x = Vec::new();
        let mut values = vec![Vec::new(); header.len() - 1];
        for l in lines.filter(|l| !l.trim().is_empty()) {
            let nums: Vec<f64> = l
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::invalid(format!("bad number {v:?}: {e}"))))
                .collect::<Result<_>>()?;
            if nums.len() != header.len() {
                return Err(Error::invalid("ragged curve row"));
            }
            x.push(nums[0]);
            for (c, v) in values.iter_mut().zip(&nums[1..]) {
                c.push(*v);
            }
        }
        Ok(Self { meta, x_label: header[0].clone(), columns: header[1..].to_vec(), x, values })
    }
}

pub const H2_DEFINITION: &str =
    "sqrt(int |W-W_r|^2 dw / int |W|^2 dw), trapezoid on a log grid, both half-axes";
