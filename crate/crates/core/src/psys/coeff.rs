//! Scalar coefficient functions of the parameter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar function of the parameter from a closed, serializable family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientFunction {
    /// `sum_j coeffs[j] p^j`.
    Polynomial { coeffs: Vec<f64> },
    /// `amplitude sin(frequency p + phase)`.
    Sinusoid { amplitude: f64, frequency: f64, phase: f64 },
    /// `scale exp(rate p)`.
    Exponential { rate: f64, scale: f64 },
    /// Piecewise-linear interpolation; constant beyond the end nodes.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

fn binom(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

impl CoefficientFunction {
    pub fn constant(c: f64) -> Self {
        CoefficientFunction::Polynomial { coeffs: vec![c] }
    }

    /// The identity `f(p) = p`.
    pub fn linear() -> Self {
        CoefficientFunction::Polynomial { coeffs: vec![0.0, 1.0] }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            CoefficientFunction::Polynomial { .. } => "polynomial",
            CoefficientFunction::Sinusoid { .. } => "sinusoid",
            CoefficientFunction::Exponential { .. } => "exponential",
            CoefficientFunction::Tabulated { .. } => "tabulated",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            CoefficientFunction::Polynomial { coeffs } => {
                if coeffs.is_empty() || !finite(coeffs) {
                    return Err(Error::invalid("polynomial needs at least one finite coefficient"));
                }
            }
            CoefficientFunction::Sinusoid { amplitude, frequency, phase } => {
                if !finite(&[*amplitude, *frequency, *phase]) {
                    return Err(Error::invalid("sinusoid parameters must be finite"));
                }
            }
            CoefficientFunction::Exponential { rate, scale } => {
                if !finite(&[*rate, *scale]) {
                    return Err(Error::invalid("exponential parameters must be finite"));
                }
            }
            CoefficientFunction::Tabulated { grid, values } => {
                if grid.is_empty() || grid.len() != values.len() {
                    return Err(Error::invalid("tabulated grid and values must be nonempty and equally long"));
                }
                if !finite(grid) || !finite(values) {
                    return Err(Error::invalid("tabulated entries must be finite"));
                }
                if grid.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("tabulated grid must be strictly increasing"));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, p: f64) -> f64 {
        match self {
            CoefficientFunction::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * p + c),
            CoefficientFunction::Sinusoid { amplitude, frequency, phase } => amplitude * (frequency * p + phase).sin(),
            CoefficientFunction::Exponential { rate, scale } => scale * (rate * p).exp(),
            CoefficientFunction::Tabulated { grid, values } => {
                let last = grid.len() - 1;
                if p <= grid[0] {
                    return values[0];
                }
                if p >= grid[last] {
                    return values[last];
                }
                let k = grid.partition_point(|&g| g <= p);
                let (g0, g1) = (grid[k - 1], grid[k]);
                let (v0, v1) = (values[k - 1], values[k]);
                if p == g0 {
                    return v0;
                }
                v0 + (v1 - v0) * (p - g0) / (g1 - g0)
            }
        }
    }

    /// Taylor coefficients `c_0..c_order` with `f(p) = sum_j c_j (p - p0)^j + ...`.
    pub fn taylor(&self, p0: f64, order: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; order + 1];
        match self {
            CoefficientFunction::Polynomial { coeffs } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = coeffs
                        .iter()
                        .enumerate()
                        .skip(j)
                        .map(|(m, c)| c * binom(m, j) * p0.powi((m - j) as i32))
                        .sum();
                }
            }
            CoefficientFunction::Sinusoid { amplitude, frequency, phase } => {
                let mut fact = 1.0;
                for (k, o) in out.iter_mut().enumerate() {
                    if k > 0 {
                        fact *= k as f64;
                    }
                    let arg = frequency * p0 + phase + k as f64 * std::f64::consts::FRAC_PI_2;
                    *o = amplitude * frequency.powi(k as i32) * arg.sin() / fact;
                }
            }
            CoefficientFunction::Exponential { rate, scale } => {
                let base = scale * (rate * p0).exp();
                let mut term = base;
                for (k, o) in out.iter_mut().enumerate() {
                    if k > 0 {
                        term *= rate / k as f64;
                    }
                    *o = term;
                }
            }
            CoefficientFunction::Tabulated { .. } => {
                return Err(Error::NonAnalyticCoefficient("tabulated"));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn tabulated_hits_nodes_and_clamps() {
        let f = CoefficientFunction::Tabulated { grid: vec![0.0, 1.0, 3.0], values: vec![2.0, 4.0, -1.0] };
        f.validate().unwrap();
        assert_eq!(f.eval(1.0), 4.0);
        assert_eq!(f.eval(3.0), -1.0);
        assert_eq!(f.eval(0.5), 3.0);
        assert_eq!(f.eval(-5.0), 2.0);
        assert_eq!(f.eval(9.0), -1.0);
        assert!(matches!(f.taylor(0.0, 2), Err(Error::NonAnalyticCoefficient("tabulated"))));
    }

    #[test]
    fn sine_maclaurin() {
        let f = CoefficientFunction::Sinusoid { amplitude: 1.0, frequency: 1.0, phase: 0.0 };
        let t = f.taylor(0.0, 3).unwrap();
        for (got, want) in t.iter().zip([0.0, 1.0, 0.0, -1.0 / 6.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn polynomial_shift() {
        // p^2 around 1: 1 + 2(p-1) + (p-1)^2
        let f = CoefficientFunction::Polynomial { coeffs: vec![0.0, 0.0, 1.0] };
        assert_eq!(f.taylor(1.0, 3).unwrap(), vec![1.0, 2.0, 1.0, 0.0]);
        assert_eq!(CoefficientFunction::linear().taylor(0.55, 2).unwrap(), vec![0.55, 1.0, 0.0]);
    }

    #[test]
    fn rejects_bad_tables() {
        let f = CoefficientFunction::Tabulated { grid: vec![0.0, 0.0], values: vec![1.0, 2.0] };
        assert!(f.validate().is_err());
        let g = CoefficientFunction::Polynomial { coeffs: vec![] };
        assert!(g.validate().is_err());
    }

    #[test]
    fn json_shape() {
        let f: CoefficientFunction =
            serde_json::from_str(r#"{"kind":"exponential","rate":-1.0,"scale":2.0}"#).unwrap();
        assert_relative_eq!(f.eval(0.0), 2.0);
    }

    fn taylor_eval(c: &[f64], dp: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, v| acc * dp + v)
    }

    proptest! {
        #[test]
        fn taylor_remainder_order(
            which in 0usize..3,
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
            p0 in -1.0f64..1.0,
        ) {
            let f = match which {
                0 => CoefficientFunction::Polynomial { coeffs: vec![a, b, 0.5, -0.25] },
                1 => CoefficientFunction::Sinusoid { amplitude: a, frequency: b, phase: 0.3 },
                _ => CoefficientFunction::Exponential { rate: b, scale: a },
            };
            let m = 3;
            let c = f.taylor(p0, m).unwrap();
            prop_assert!((c[0] - f.eval(p0)).abs() <= 1e-12 * (1.0 + f.eval(p0).abs()));
            // Lagrange remainder bound |f^(m+1)| h^(m+1) / (m+1)!
            let bound = a.abs() * b.abs().max(1.0).powi(4) * (2.0 * b.abs()).exp().max(1.0) / 24.0 + 1e-12;
            for h in [0.1, 0.05, -0.05] {
                let r = (f.eval(p0 + h) - taylor_eval(&c, h)).abs();
                prop_assert!(r <= bound * h.powi(4) * 1.01 + 1e-14, "h={h} r={r}");
            }
        }
    }
}
