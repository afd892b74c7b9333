//! Signal generators `w' = S w`, `u = L w` in real Jordan form.

use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, Complex64, Matrix, RANK_TOL};

/// Interpolation data `(S, L, w(0))`.
///
/// `S` is block diagonal: an optional scalar zero block first, then one
/// rotation block `[[0, w], [-w, 0]]` per positive frequency, in input order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeneratorSpec", into = "GeneratorSpec")]
pub struct SignalGenerator {
    s: Matrix,
    l: Matrix,
    omega0: Matrix,
    freqs: Vec<f64>,
    include_zero: bool,
}

/// Serialized form of a generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub freqs: Vec<f64>,
    #[serde(default)]
    pub include_zero: bool,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega0: Option<Vec<f64>>,
}

impl TryFrom<GeneratorSpec> for SignalGenerator {
    type Error = Error;

    fn try_from(spec: GeneratorSpec) -> Result<Self> {
        let mut g = SignalGenerator::from_frequencies(&spec.freqs, spec.include_zero)?;
        if let Some(l) = spec.l {
            g = g.with_l(&l)?;
        }
        if let Some(w) = spec.omega0 {
            g = g.with_omega0(&w)?;
        }
        Ok(g)
    }
}

impl From<SignalGenerator> for GeneratorSpec {
    fn from(g: SignalGenerator) -> Self {
        GeneratorSpec {
            freqs: g.freqs.clone(),
            include_zero: g.include_zero,
            l: Some(g.l.iter().copied().collect()),
            omega0: Some(g.omega0.iter().copied().collect()),
        }
    }
}

/// `count` values equidistant in `log10` between `10^lo_exp` and `10^hi_exp`.
pub fn log_grid(lo_exp: f64, hi_exp: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::invalid("log grid needs count >= 1"));
    }
    if !(lo_exp.is_finite() && hi_exp.is_finite()) || (count > 1 && lo_exp >= hi_exp) {
        return Err(Error::invalid("log grid needs finite exponents with lo < hi"));
    }
    if count == 1 {
        return Ok(vec![10f64.powf(lo_exp)]);
    }
    let step = (hi_exp - lo_exp) / (count - 1) as f64;
    Ok((0..count).map(|j| 10f64.powf(lo_exp + j as f64 * step)).collect())
}

/// Smallest singular value relative to the largest.
fn relative_sigma_min(m: &CMatrix) -> Result<f64> {
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let sv = svd.singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return Ok(0.0);
    }
    Ok(sv.min() / smax)
}

impl SignalGenerator {
    /// Builds `S` from distinct nonnegative frequencies with `L` and `w(0)`
    /// all ones.
    pub fn from_frequencies(freqs: &[f64], include_zero: bool) -> Result<Self> {
        for (i, &f) in freqs.iter().enumerate() {
            if !f.is_finite() || f < 0.0 {
                return Err(Error::invalid(format!("frequency {f} must be finite and nonnegative")));
            }
            if f == 0.0 {
                return Err(Error::invalid("zero frequency: use include_zero instead"));
            }
            if freqs[..i].contains(&f) {
                return Err(Error::DuplicateFrequency(f));
            }
        }
        let nu = 2 * freqs.len() + usize::from(include_zero);
        if nu == 0 {
            return Err(Error::invalid("signal generator needs at least one frequency or the zero block"));
        }
        let mut s = Matrix::zeros(nu, nu);
        let off = usize::from(include_zero);
        for (i, &w) in freqs.iter().enumerate() {
            let j = off + 2 * i;
            s[(j, j + 1)] = w;
            s[(j + 1, j)] = -w;
        }
        let g = Self {
            s,
            l: Matrix::from_element(1, nu, 1.0),
            omega0: Matrix::from_element(nu, 1, 1.0),
            freqs: freqs.to_vec(),
            include_zero,
        };
        g.check_observable()?;
        g.check_excitable()?;
        Ok(g)
    }

    pub fn with_l(mut self, l: &[f64]) -> Result<Self> {
        if l.len() != self.nu() || l.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(format!("L needs {} finite entries", self.nu())));
        }
        self.l = Matrix::from_row_slice(1, l.len(), l);
        self.check_observable()?;
        Ok(self)
    }

    pub fn with_omega0(mut self, w: &[f64]) -> Result<Self> {
        if w.len() != self.nu() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(format!("omega0 needs {} finite entries", self.nu())));
        }
        self.omega0 = Matrix::from_column_slice(w.len(), 1, w);
        self.check_excitable()?;
        Ok(self)
    }

    /// Multiplies `w(0)` by `factor`, which scales the input amplitude.
    pub fn scale_omega0(self, factor: f64) -> Result<Self> {
        let w: Vec<f64> = self.omega0.iter().map(|v| v * factor).collect();
        self.with_omega0(&w)
    }

    pub fn nu(&self) -> usize {
        self.s.nrows()
    }

    pub fn s(&self) -> &Matrix {
        &self.s
    }

    pub fn l(&self) -> &Matrix {
        &self.l
    }

    pub fn omega0(&self) -> &Matrix {
        &self.omega0
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn include_zero(&self) -> bool {
        self.include_zero
    }

    pub fn max_frequency(&self) -> f64 {
        self.freqs.iter().copied().fold(0.0, f64::max)
    }

    /// `sigma(S)`: `0` (if present) then `+i w, -i w` per frequency.
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.nu());
        if self.include_zero {
            out.push(Complex64::new(0.0, 0.0));
        }
        for &w in &self.freqs {
            out.push(Complex64::new(0.0, w));
            out.push(Complex64::new(0.0, -w));
        }
        out
    }

    /// (start, size) of each diagonal block of `S`.
    fn blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if self.include_zero {
            out.push((0, 1));
        }
        let off = usize::from(self.include_zero);
        for i in 0..self.freqs.len() {
            out.push((off + 2 * i, 2));
        }
        out
    }

    // Eigenvalues of S are distinct across blocks, so a Popov-Belevitch-Hautus
    // rank defect can only occur inside the block owning the eigenvalue.
    fn pbh(&self, observability: bool) -> Result<bool> {
        for (lam, (start, size)) in self.block_eigs() {
            let sub = CMatrix::from_fn(size, size, |i, j| {
                let d = if i == j { lam } else { Complex64::new(0.0, 0.0) };
                d - Complex64::new(self.s[(start + i, start + j)], 0.0)
            });
            let m = if observability {
                let mut m = CMatrix::zeros(size + 1, size);
                m.view_mut((0, 0), (size, size)).copy_from(&sub);
                for j in 0..size {
                    m[(size, j)] = Complex64::new(self.l[(0, start + j)], 0.0);
                }
                m
            } else {
                let mut m = CMatrix::zeros(size, size + 1);
                m.view_mut((0, 0), (size, size)).copy_from(&sub);
                for i in 0..size {
                    m[(i, size)] = Complex64::new(self.omega0[(start + i, 0)], 0.0);
                }
                m
            };
            if relative_sigma_min(&m)? < RANK_TOL {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn block_eigs(&self) -> Vec<(Complex64, (usize, usize))> {
        let mut out = Vec::new();
        for (start, size) in self.blocks() {
            if size == 1 {
                out.push((Complex64::new(0.0, 0.0), (start, size)));
            } else {
                let w = self.s[(start, start + 1)];
                out.push((Complex64::new(0.0, w), (start, size)));
                out.push((Complex64::new(0.0, -w), (start, size)));
            }
        }
        out
    }

    pub fn is_observable(&self) -> Result<bool> {
        self.pbh(true)
    }

    pub fn is_excitable(&self) -> Result<bool> {
        self.pbh(false)
    }

    fn check_observable(&self) -> Result<()> {
        if self.is_observable()? {
            Ok(())
        } else {
            Err(Error::ObservabilityFailure)
        }
    }

    fn check_excitable(&self) -> Result<()> {
        if self.is_excitable()? {
            Ok(())
        } else {
            Err(Error::ExcitabilityFailure)
        }
    }

    /// `exp(S t)`, built block by block from cosines and sines.
    pub fn transition(&self, t: f64) -> Matrix {
        let mut e = Matrix::zeros(self.nu(), self.nu());
        for (start, size) in self.blocks() {
            if size == 1 {
                e[(start, start)] = 1.0;
            } else {
                let w = self.s[(start, start + 1)];
                let (sn, cs) = (w * t).sin_cos();
                e[(start, start)] = cs;
                e[(start, start + 1)] = sn;
                e[(start + 1, start)] = -sn;
                e[(start + 1, start + 1)] = cs;
            }
        }
        e
    }

    /// `w(t)` in closed form.
    pub fn omega_at(&self, t: f64) -> Vec<f64> {
        let mut w = vec![0.0; self.nu()];
        for (start, size) in self.blocks() {
            if size == 1 {
                w[start] = self.omega0[(start, 0)];
            } else {
                let f = self.s[(start, start + 1)];
                let (sn, cs) = (f * t).sin_cos();
                let (a, b) = (self.omega0[(start, 0)], self.omega0[(start + 1, 0)]);
                w[start] = cs * a + sn * b;
                w[start + 1] = -sn * a + cs * b;
            }
        }
        w
    }

    /// Row `k` is `w(times[k])^T`.
    pub fn omega_trajectory(&self, times: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(times.len(), self.nu());
        for (k, &t) in times.iter().enumerate() {
            for (j, v) in self.omega_at(t).into_iter().enumerate() {
                m[(k, j)] = v;
            }
        }
        m
    }

    /// `u(t) = L w(t)`.
    pub fn input_at(&self, t: f64) -> f64 {
        self.omega_at(t).iter().zip(self.l.iter()).map(|(w, l)| w * l).sum()
    }

    /// Rejects sampling periods that alias a generator frequency, i.e.
    /// `dt` an integer multiple of `pi / w`.
    pub fn check_sampling_period(&self, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("sampling period {dt} must be positive")));
        }
        for &w in &self.freqs {
            let ratio = dt * w / std::f64::consts::PI;
            let k = ratio.round();
            if k >= 1.0 && (ratio - k).abs() <= 1e-9 * ratio.max(1.0) {
                return Err(Error::invalid(format!(
                    "sampling period {dt} is {k} times pi/{w}: the snapshot matrix would lose rank"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{numerical_rank, spectrum};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn single_block() {
        let g = SignalGenerator::from_frequencies(&[1.0], false).unwrap();
        assert_eq!(g.s(), &Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        assert_eq!(g.l(), &Matrix::from_row_slice(1, 2, &[1.0, 1.0]));
        assert_eq!(g.nu(), 2);
    }

    #[test]
    fn step_generator() {
        let g = SignalGenerator::from_frequencies(&[], true).unwrap();
        assert_eq!(g.s(), &Matrix::zeros(1, 1));
        assert_eq!(g.l(), &Matrix::from_element(1, 1, 1.0));
        assert_eq!(g.omega_at(123.0), vec![1.0]);
    }

    #[test]
    fn paper_grid_generator() {
        let f = log_grid(0.0, 3.1, 50).unwrap();
        assert_eq!(f.len(), 50);
        assert_relative_eq!(f[0], 1.0);
        assert_relative_eq!(f[49], 1258.925411794167, max_relative = 1e-12);
        let g = SignalGenerator::from_frequencies(&f, false).unwrap();
        assert_eq!(g.nu(), 100);
        let eig = spectrum(g.s()).unwrap();
        assert!(eig.eigenvalues.iter().all(|z| z.re.abs() < 1e-12));
    }

    #[test]
    fn log_grid_edges() {
        assert_eq!(log_grid(0.5, 2.0, 1).unwrap(), vec![10f64.powf(0.5)]);
        let g = log_grid(0.0, 1.0, 2).unwrap();
        assert_relative_eq!(g[0], 1.0);
        assert_relative_eq!(g[1], 10.0);
        assert!(log_grid(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn duplicate_rejected() {
        assert!(matches!(
            SignalGenerator::from_frequencies(&[1.0, 2.0, 1.0], false),
            Err(Error::DuplicateFrequency(f)) if f == 1.0
        ));
    }

    #[test]
    fn unobservable_and_unexcitable() {
        let g = SignalGenerator::from_frequencies(&[1.0, 2.0], true).unwrap();
        assert!(matches!(g.clone().with_l(&[0.0, 1.0, 1.0, 1.0, 1.0]), Err(Error::ObservabilityFailure)));
        assert!(matches!(g.clone().with_l(&[1.0, 1.0, 1.0, 0.0, 0.0]), Err(Error::ObservabilityFailure)));
        assert!(matches!(g.clone().with_omega0(&[1.0, 0.0, 0.0, 1.0, 1.0]), Err(Error::ExcitabilityFailure)));
        assert!(g.with_l(&[1.0, 0.0, 1.0, 1.0, 0.0]).is_ok());
    }

    #[test]
    fn rotation_quarter_turn() {
        let g = SignalGenerator::from_frequencies(&[1.0], false).unwrap();
        let traj = g.omega_trajectory(&[0.0, PI / 2.0]);
        assert_eq!(traj.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
        // exp(S pi/2) = [[0, 1], [-1, 0]] applied to (1, 1)
        let e = crate::linalg::expm(&(g.s() * (PI / 2.0))).unwrap();
        let oracle = e * g.omega0();
        assert_relative_eq!(traj[(1, 0)], oracle[(0, 0)], epsilon = 1e-14);
        assert_relative_eq!(traj[(1, 1)], oracle[(1, 0)], epsilon = 1e-14);
        assert_relative_eq!(traj[(1, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(traj[(1, 1)], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn aliasing_guard() {
        let g = SignalGenerator::from_frequencies(&[2.0], false).unwrap();
        assert!(g.check_sampling_period(PI / 2.0).is_err());
        assert!(g.check_sampling_period(PI).is_err());
        assert!(g.check_sampling_period(0.1).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let g = SignalGenerator::from_frequencies(&[1.0, 3.0], true).unwrap().scale_omega0(0.5).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.contains("\"include_zero\":true"));
        let back: SignalGenerator = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        let bad = r#"{"freqs":[1.0,1.0]}"#;
        assert!(serde_json::from_str::<SignalGenerator>(bad).is_err());
    }

    proptest! {
        #[test]
        fn rotation_preserves_norm(seed in 0u64..1000, t in -100.0f64..100.0) {
            let f = log_grid(0.0, 2.0 + (seed % 7) as f64 * 0.1, 5).unwrap();
            let g = SignalGenerator::from_frequencies(&f, false).unwrap();
            let w0: f64 = g.omega0().norm();
            let w: f64 = g.omega_at(t).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((w - w0).abs() <= 1e-12 * w0);
            let e = g.transition(t);
            let dev = (e.transpose() * &e - Matrix::identity(g.nu(), g.nu())).norm();
            prop_assert!(dev <= 1e-12);
        }

        #[test]
        fn snapshot_rank(count in 1usize..6, zero: bool, dt in 0.1f64..0.3) {
            let f = log_grid(0.0, 1.0, count).unwrap();
            let g = SignalGenerator::from_frequencies(&f, zero).unwrap();
            g.check_sampling_period(dt).unwrap();
            let h = g.nu() + 3;
            let times: Vec<f64> = (0..h).map(|k| 1.0 + k as f64 * dt).collect();
            let u = g.omega_trajectory(&times);
            prop_assert_eq!(numerical_rank(&u, 1e-10).unwrap(), g.nu());
        }
    }
}
