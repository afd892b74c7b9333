//! Matrix exponential by scaling and squaring with a degree-13 Padé approximant.

use super::blocks::{components, scatter, select};
use super::{ensure_square, Matrix};
use crate::error::{Error, Result};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn norm1(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn expm_dense(a: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let nrm = norm1(a);
    if !nrm.is_finite() {
        return Err(Error::invalid("matrix exponential of a non-finite matrix"));
    }
    let s = if nrm > THETA13 { (nrm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * 2f64.powi(-s);
    let eye = Matrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &eye * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &eye * b[0];
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .ok_or_else(|| Error::NumericalFailure("Padé denominator is singular".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// `exp(a)`, evaluated block by block over decoupled components.
pub fn expm(a: &Matrix) -> Result<Matrix> {
    ensure_square(a, "expm input")?;
    let n = a.nrows();
    let mut out = Matrix::zeros(n, n);
    for comp in components(a) {
        let block = select(a, &comp, &comp);
        let e = if comp.len() == 1 {
            Matrix::from_element(1, 1, block[(0, 0)].exp())
        } else {
            expm_dense(&block)?
        };
        scatter(&mut out, &comp, &comp, &e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotation() {
        let w = 3.0;
        let t = 0.7;
        let a = Matrix::from_row_slice(2, 2, &[0.0, w * t, -w * t, 0.0]);
        let e = expm(&a).unwrap();
        let (c, s) = ((w * t).cos(), (w * t).sin());
        assert_relative_eq!(e, Matrix::from_row_slice(2, 2, &[c, s, -s, c]), epsilon = 1e-14);
    }

    #[test]
    fn damped_large_norm() {
        // exp of [[a, b], [-b, a]] is e^a times a rotation
        let (a, b) = (-3.0, 40.0);
        let m = Matrix::from_row_slice(2, 2, &[a, b, -b, a]);
        let e = expm(&m).unwrap();
        let ea = a.exp();
        let expected = Matrix::from_row_slice(2, 2, &[ea * b.cos(), ea * b.sin(), -ea * b.sin(), ea * b.cos()]);
        assert_relative_eq!(e, expected, epsilon = 1e-12);
    }

    #[test]
    fn nilpotent() {
        let m = Matrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let e = expm(&m).unwrap();
        let expected = Matrix::from_row_slice(3, 3, &[1.0, 1.0, 0.5, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(e, expected, epsilon = 1e-14);
    }

    #[test]
    fn diagonal_components() {
        let m = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 2.0]));
        let e = expm(&m).unwrap();
        assert_relative_eq!(e[(0, 0)], (-1f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(e[(1, 1)], 2f64.exp(), epsilon = 1e-14);
        assert_eq!(e[(0, 1)], 0.0);
    }
}
