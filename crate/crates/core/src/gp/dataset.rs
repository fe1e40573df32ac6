//! Training data container and its CSV serialization.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::GpError;

/// Noisy samples `y^(j) = f(x^(j)) + w^(j)` of a vector field `f`.
///
/// Inputs and targets are stored row-per-sample (`N x n`); the measurement
/// noise is i.i.d. `N(0, noise_std^2)` in every component.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    noise_std: f64,
}

impl Dataset {
    /// Builds a dataset from row-per-sample input and target matrices.
    ///
    /// `noise_std` may be zero (noise-free data); fitting then relies on the
    /// kernel matrix being well conditioned.
    pub fn new(
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        noise_std: f64,
    ) -> Result<Self, GpError> {
        if inputs.nrows() == 0 {
            return Err(GpError::InvalidData("dataset has no samples".into()));
        }
        if inputs.ncols() == 0 {
            return Err(GpError::InvalidData("dataset has zero state dimension".into()));
        }
        if inputs.nrows() != targets.nrows() || inputs.ncols() != targets.ncols() {
            return Err(GpError::DimensionMismatch(format!(
                "inputs are {}x{} but targets are {}x{}",
                inputs.nrows(),
                inputs.ncols(),
                targets.nrows(),
                targets.ncols()
            )));
        }
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(GpError::InvalidParameter(format!(
                "noise std must be finite and non-negative, got {noise_std}"
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
            return Err(GpError::InvalidData(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Self {
            inputs,
            targets,
            noise_std,
        })
    }

    /// Builds a dataset from per-sample rows.
    pub fn from_rows(
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        noise_std: f64,
    ) -> Result<Self, GpError> {
        if inputs.is_empty() {
            return Err(GpError::InvalidData("dataset has no samples".into()));
        }
        let n = inputs[0].len();
        if inputs.iter().any(|r| r.len() != n) || targets.iter().any(|r| r.len() != n) {
            return Err(GpError::DimensionMismatch(
                "all rows must have the same length".into(),
            ));
        }
        if targets.len() != inputs.len() {
            return Err(GpError::DimensionMismatch(format!(
                "{} input rows but {} target rows",
                inputs.len(),
                targets.len()
            )));
        }
        let im = DMatrix::from_fn(inputs.len(), n, |r, c| inputs[r][c]);
        let tm = DMatrix::from_fn(targets.len(), n, |r, c| targets[r][c]);
        Self::new(im, tm, noise_std)
    }

    /// Number of samples `N`.
    pub fn n_samples(&self) -> usize {
        self.inputs.nrows()
    }

    /// State dimension `n` (inputs and targets share it).
    pub fn state_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Measurement noise standard deviation `sigma_f`.
    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Input matrix, row per sample (`N x n`).
    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    /// Target matrix, row per sample (`N x n`).
    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    /// Input sample `j` as an owned vector.
    pub fn input_point(&self, j: usize) -> DVector<f64> {
        self.inputs.row(j).transpose()
    }

    /// Targets of output dimension `i` across all samples.
    pub fn target_column(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.targets.column(i).as_slice())
    }

    /// Writes the dataset as CSV with header `x_1..x_n,y_1..y_n`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), GpError> {
        let n = self.state_dim();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = Vec::with_capacity(2 * n);
        for i in 1..=n {
            header.push(format!("x_{i}"));
        }
        for i in 1..=n {
            header.push(format!("y_{i}"));
        }
        wtr.write_record(&header)?;
        for j in 0..self.n_samples() {
            let mut rec = Vec::with_capacity(2 * n);
            for c in 0..n {
                rec.push(self.inputs[(j, c)].to_string());
            }
            for c in 0..n {
                rec.push(self.targets[(j, c)].to_string());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::write_csv`]. The noise level is
    /// not part of the file and must be supplied by the caller.
    pub fn read_csv<R: Read>(r: R, noise_std: f64) -> Result<Self, GpError> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.len() % 2 != 0 || headers.is_empty() {
            return Err(GpError::InvalidData(format!(
                "expected an even number of columns (x_1..x_n,y_1..y_n), got {}",
                headers.len()
            )));
        }
        let n = headers.len() / 2;
        for i in 0..n {
            if headers[i] != format!("x_{}", i + 1) || headers[n + i] != format!("y_{}", i + 1) {
                return Err(GpError::InvalidData(format!(
                    "unexpected header {:?}; want x_1..x_{n},y_1..y_{n}",
                    headers
                )));
            }
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 * n {
                return Err(GpError::InvalidData(format!(
                    "row {} has {} fields, expected {}",
                    row + 1,
                    rec.len(),
                    2 * n
                )));
            }
            let parse = |field: &str| -> Result<f64, GpError> {
                field.trim().parse::<f64>().map_err(|_| {
                    GpError::InvalidData(format!("row {}: cannot parse {field:?}", row + 1))
                })
            };
            let mut xin = Vec::with_capacity(n);
            let mut yin = Vec::with_capacity(n);
            for c in 0..n {
                xin.push(parse(&rec[c])?);
            }
            for c in 0..n {
                yin.push(parse(&rec[n + c])?);
            }
            inputs.push(xin);
            targets.push(yin);
        }
        Self::from_rows(&inputs, &targets, noise_std)
    }

    /// Reads a dataset from a CSV file on disk.
    pub fn read_csv_path<P: AsRef<Path>>(path: P, noise_std: f64) -> Result<Self, GpError> {
        let f = std::fs::File::open(path.as_ref()).map_err(|e| {
            GpError::InvalidData(format!("cannot open {}: {e}", path.as_ref().display()))
        })?;
        Self::read_csv(std::io::BufReader::new(f), noise_std)
    }

    /// Writes the dataset to a CSV file on disk.
    pub fn write_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<(), GpError> {
        let f = std::fs::File::create(path.as_ref()).map_err(|e| {
            GpError::InvalidData(format!("cannot create {}: {e}", path.as_ref().display()))
        })?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}
