//! Observation matrices and their file formats.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Float, Result};

/// `n × m` matrix of observations; rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix<T: Float> {
    values: DMatrix<T>,
}

/// JSON envelope `{n, m, values}` with row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataEnvelope {
    pub n: usize,
    pub m: usize,
    pub values: Vec<Vec<f64>>,
}

impl<T: Float> DataMatrix<T> {
    pub fn new(values: DMatrix<T>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidData(format!(
                "data matrix must have at least one row and one column, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let n = values.nrows();
            return Err(Error::InvalidData(format!(
                "non-finite entry at row {}, column {}",
                idx % n,
                idx / n
            )));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != m) {
            return Err(Error::InvalidData(format!(
                "row {i} has {} entries, expected {m}",
                rows[i].len()
            )));
        }
        Self::new(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        (0..self.m()).map(|j| self.values[(i, j)]).collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| *v >= T::zero())
    }

    pub fn require_nonnegative(&self) -> Result<()> {
        let n = self.n();
        match self.values.iter().position(|v| *v < T::zero()) {
            None => Ok(()),
            Some(idx) => Err(Error::Domain(format!(
                "non-negative family requires x >= 0, found {} at row {}, column {}",
                self.values[idx],
                idx % n,
                idx / n
            ))),
        }
    }

    /// Copy with every entry multiplied by `s`.
    pub fn scaled(&self, s: T) -> Self {
        Self { values: self.values.map(|v| v * s) }
    }

    /// Copy with column means removed.
    pub fn centered(&self) -> Self {
        let n = T::from_usize(self.n()).unwrap();
        let mut values = self.values.clone();
        for mut col in values.column_iter_mut() {
            let mean = col.iter().copied().sum::<T>() / n;
            col.iter_mut().for_each(|v| *v -= mean);
        }
        Self { values }
    }

    /// Copy with centered columns scaled to unit (population) variance.
    /// Constant columns are left at zero.
    pub fn standardized(&self) -> Self {
        let n = T::from_usize(self.n()).unwrap();
        let mut out = self.centered();
        for mut col in out.values.column_iter_mut() {
            let var = col.iter().map(|v| *v * *v).sum::<T>() / n;
            if var > T::zero() {
                let sd = var.sqrt();
                col.iter_mut().for_each(|v| *v /= sd);
            }
        }
        out
    }

    /// Copy with `shift` added to every entry.
    pub fn shifted(&self, shift: T) -> Self {
        Self { values: self.values.map(|v| v + shift) }
    }

    pub fn cast<U: Float>(&self) -> DataMatrix<U> {
        DataMatrix { values: self.values.map(|v| U::lit(v.to_f64_lossy())) }
    }

    pub fn to_envelope(&self) -> DataEnvelope {
        DataEnvelope {
            n: self.n(),
            m: self.m(),
            values: (0..self.n())
                .map(|i| self.row(i).into_iter().map(Float::to_f64_lossy).collect())
                .collect(),
        }
    }

    pub fn from_envelope(env: &DataEnvelope) -> Result<Self> {
        if env.values.len() != env.n {
            return Err(Error::InvalidData(format!(
                "envelope declares n = {} but holds {} rows",
                env.n,
                env.values.len()
            )));
        }
        if let Some(i) = env.values.iter().position(|r| r.len() != env.m) {
            return Err(Error::InvalidData(format!(
                "envelope declares m = {} but row {i} has {} entries",
                env.m,
                env.values[i].len()
            )));
        }
        let rows: Vec<Vec<T>> = env
            .values
            .iter()
            .map(|r| r.iter().map(|v| T::lit(*v)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    /// Reads a headerless comma-separated matrix, one sample per line.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .enumerate()
                .map(|(j, field)| {
                    field.parse::<f64>().map(T::lit).map_err(|_| {
                        Error::InvalidData(format!("row {i}, column {j}: cannot parse {field:?}"))
                    })
                })
                .collect::<Result<Vec<T>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for i in 0..self.n() {
            wtr.write_record(self.row(i).iter().map(|v| format!("{}", v.to_f64_lossy())))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let env: DataEnvelope = serde_json::from_reader(reader)?;
        Self::from_envelope(&env)
    }
}

/// Empirical second-moment matrix `W = (1/n) Σ_i x⁽ⁱ⁾ x⁽ⁱ⁾ᵀ`, without mean
/// subtraction.
pub fn sample_covariance<T: Float>(x: &DataMatrix<T>) -> DMatrix<T> {
    let n = T::from_usize(x.n()).unwrap();
    let mut w = x.values.tr_mul(&x.values);
    w.iter_mut().for_each(|v| *v /= n);
    // exact symmetry
    let m = w.nrows();
    for j in 0..m {
        for i in (j + 1)..m {
            let v = w[(i, j)];
            w[(j, i)] = v;
        }
    }
    w
}
