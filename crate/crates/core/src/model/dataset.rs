use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Observed or replicated data.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    /// An ordered sample of scalars.
    Scalar(Vec<f64>),
    /// Fixed covariates `x` (n × d) and a response `y` of length n.
    Regression { x: Arc<DMatrix<f64>>, y: DVector<f64> },
}

impl Dataset {
    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyData);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("dataset entries must be finite");
        }
        Ok(Dataset::Scalar(values))
    }

    pub fn regression(x: Arc<DMatrix<f64>>, y: DVector<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::EmptyData);
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), actual: y.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return invalid("dataset entries must be finite");
        }
        Ok(Dataset::Regression { x, y })
    }

    /// The response values: the sample itself for scalar data, `y` for regression data.
    pub fn response(&self) -> &[f64] {
        match self {
            Dataset::Scalar(v) => v,
            Dataset::Regression { y, .. } => y.as_slice(),
        }
    }

    pub fn len(&self) -> usize {
        self.response().len()
    }

    pub fn is_empty(&self) -> bool {
        self.response().is_empty()
    }

    /// Writes one column `y` for scalar data, or `y,x1,..,xd` for regression data.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        match self {
            Dataset::Scalar(v) => {
                wtr.write_record(["y"])?;
                for x in v {
                    wtr.write_record([format!("{x}")])?;
                }
            }
            Dataset::Regression { x, y } => {
                let mut header = vec!["y".to_string()];
                header.extend((1..=x.ncols()).map(|j| format!("x{j}")));
                wtr.write_record(&header)?;
                for i in 0..y.len() {
                    let mut row = vec![format!("{}", y[i])];
                    row.extend((0..x.ncols()).map(|j| format!("{}", x[(i, j)])));
                    wtr.write_record(&row)?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`Dataset::write_csv`]. A single `y` column
    /// gives scalar data; additional `x*` columns give regression data.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let ncols = rdr.headers()?.len();
        if ncols == 0 {
            return Err(Error::EmptyData);
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| {
                        Error::InvalidParameter(format!("data row {}: cannot parse {f:?}: {e}", line + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != ncols {
                return Err(Error::DimensionMismatch { expected: ncols, actual: row.len() });
            }
            rows.push(row);
        }
        if ncols == 1 {
            return Dataset::scalar(rows.into_iter().map(|r| r[0]).collect());
        }
        let n = rows.len();
        let y = DVector::from_iterator(n, rows.iter().map(|r| r[0]));
        let x = DMatrix::from_fn(n, ncols - 1, |i, j| rows[i][j + 1]);
        Dataset::regression(Arc::new(x), y)
    }
}
