//! Snapshot windows `(U_i, Y_i(p_k))` and their CSV/JSON layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseMeta {
    pub std: f64,
    pub seed: u64,
}

/// Sampled generator states and outputs over one time window.
///
/// `omega` is `h x nu` (row `i` is `w(times[i])^T`); `outputs` is `h x K`
/// with column `k` the output at parameter `params[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotDataset {
    pub params: Vec<f64>,
    pub times: Vec<f64>,
    pub omega: Matrix,
    pub outputs: Matrix,
    pub noise_meta: Option<NoiseMeta>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    params: Vec<f64>,
    times: Vec<f64>,
    #[serde(default)]
    noise_meta: Option<NoiseMeta>,
}

impl SnapshotDataset {
    pub fn new(params: Vec<f64>, times: Vec<f64>, omega: Matrix, outputs: Matrix) -> Result<Self> {
        let d = Self { params, times, omega, outputs, noise_meta: None };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.times.len();
        if h == 0 || self.params.is_empty() {
            return Err(Error::invalid("dataset needs at least one time and one parameter"));
        }
        if self.omega.nrows() != h || self.outputs.nrows() != h || self.outputs.ncols() != self.params.len() {
            return Err(Error::DimensionMismatch(format!(
                "dataset with {h} times and {} params has omega {}x{} and outputs {}x{}",
                self.params.len(),
                self.omega.nrows(),
                self.omega.ncols(),
                self.outputs.nrows(),
                self.outputs.ncols()
            )));
        }
        for (i, p) in self.params.iter().enumerate() {
            if self.params[..i].contains(p) {
                return Err(Error::invalid(format!("duplicate parameter {p} in dataset")));
            }
        }
        Ok(())
    }

    pub fn h(&self) -> usize {
        self.times.len()
    }

    pub fn nu(&self) -> usize {
        self.omega.ncols()
    }

    pub fn k(&self) -> usize {
        self.params.len()
    }

    /// Writes `omega.csv`, `y_<k>.csv` (1-based) and `metadata.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("omega.csv"))?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.nu()).map(|j| format!("w{j}")));
        w.write_record(&header)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut rec = vec![fmt(*t)];
            rec.extend(self.omega.row(i).iter().map(|v| fmt(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        for k in 0..self.k() {
            let mut w = csv::Writer::from_path(dir.join(format!("y_{}.csv", k + 1)))?;
            w.write_record(["t", "y"])?;
            for (i, t) in self.times.iter().enumerate() {
                w.write_record([fmt(*t), fmt(self.outputs[(i, k)])])?;
            }
            w.flush()?;
        }
        let meta = Metadata { params: self.params.clone(), times: self.times.clone(), noise_meta: self.noise_meta.clone() };
        fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta: Metadata = serde_json::from_str(&fs::read_to_string(dir.join("metadata.json"))?)?;
        let omega_rows = read_numeric(&dir.join("omega.csv"))?;
        let h = meta.times.len();
        if omega_rows.len() != h {
            return Err(Error::DimensionMismatch(format!("omega.csv has {} rows, metadata lists {h} times", omega_rows.len())));
        }
        let nu = omega_rows.first().map(|r| r.len().saturating_sub(1)).unwrap_or(0);
        if nu == 0 || omega_rows.iter().any(|r| r.len() != nu + 1) {
            return Err(Error::invalid("omega.csv must have a time column and at least one omega column"));
        }
        let omega = Matrix::from_fn(h, nu, |i, j| omega_rows[i][j + 1]);
        let mut outputs = Matrix::zeros(h, meta.params.len());
        for k in 0..meta.params.len() {
            let rows = read_numeric(&dir.join(format!("y_{}.csv", k + 1)))?;
            if rows.len() != h || rows.iter().any(|r| r.len() != 2) {
                return Err(Error::DimensionMismatch(format!("y_{}.csv must have {h} rows of (t, y)", k + 1)));
            }
            for i in 0..h {
                outputs[(i, k)] = rows[i][1];
            }
        }
        let d = Self { params: meta.params, times: meta.times, omega, outputs, noise_meta: meta.noise_meta };
        d.validate()?;
        Ok(d)
    }
}

fn fmt(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v:?}")
}

fn read_numeric(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::invalid(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = SnapshotDataset::new(
            vec![0.1, 0.7],
            vec![1.0, 1.5, 2.0],
            Matrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0)),
            Matrix::from_fn(3, 2, |i, j| (i * 7 + j) as f64 * std::f64::consts::PI),
        )
        .unwrap();
        d.noise_meta = Some(NoiseMeta { std: 1e-3, seed: 9 });
        d.write_dir(dir.path()).unwrap();
        let head = fs::read_to_string(dir.path().join("omega.csv")).unwrap();
        assert!(head.starts_with("t,w1,w2\n"));
        assert!(dir.path().join("y_2.csv").exists());
        let back = SnapshotDataset::read_dir(dir.path()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn rejects_duplicates_and_shapes() {
        let r = SnapshotDataset::new(vec![0.1, 0.1], vec![0.0], Matrix::zeros(1, 1), Matrix::zeros(1, 2));
        assert!(r.is_err());
        let r = SnapshotDataset::new(vec![0.1], vec![0.0, 1.0], Matrix::zeros(1, 1), Matrix::zeros(2, 1));
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }
}
