//! The shared `(X, Y)` input of every pipeline, plus its two on-disk formats.
//!
//! CSV: a header row `x_1,..,x_d,y_1,..,y_m` followed by one row per sample.
//!
//! Binary: a 32-byte little-endian header
//!
//! | offset | size | field                  |
//! |--------|------|------------------------|
//! | 0      | 4    | magic `LEVA`           |
//! | 4      | 4    | version (`u32`, = 1)   |
//! | 8      | 8    | n (`u64`)              |
//! | 16     | 4    | d (`u32`)              |
//! | 20     | 4    | m (`u32`)              |
//! | 24     | 8    | reserved, zero         |
//!
//! followed by `n*(d+m)` `f64` values stored column by column: the `d` columns
//! of X, then the `m` columns of Y.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"LEVA";
pub const BINARY_VERSION: u32 = 1;
pub const BINARY_HEADER_LEN: usize = 32;

/// Reciprocal condition number of `XᵀX` below which a design is rejected.
pub const RCOND_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

/// Reciprocal condition number of `XᵀX`, from the singular values of `X`.
pub fn gram_rcond(x: &DMatrix<f64>) -> f64 {
    if x.ncols() == 0 {
        return 1.0;
    }
    let sv = x.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if max == 0.0 {
        return 0.0;
    }
    (min / max).powi(2)
}

impl Dataset {
    /// Builds a dataset, checking shapes, `n >= d` and full column rank of `X`.
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let data = Self::new_unchecked(x, y)?;
        if data.n() < data.d() {
            return Err(Error::InvalidArgument(format!(
                "need n >= d, got n = {} and d = {}",
                data.n(),
                data.d()
            )));
        }
        if !data.x.iter().chain(data.y.iter()).all(|v| v.is_finite()) {
            return Err(Error::Malformed("non-finite value in dataset".into()));
        }
        let rcond = gram_rcond(&data.x);
        if !(rcond >= RCOND_FLOOR) {
            return Err(Error::RankDeficient {
                condition: 1.0 / rcond,
            });
        }
        Ok(data)
    }

    /// Builds a dataset checking only that the row counts agree.
    pub fn new_unchecked(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        Ok(Self { x, y })
    }

    /// Row-major construction; convenient in tests.
    pub fn from_rows(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Self> {
        let n = x.len();
        let d = x.first().map_or(0, Vec::len);
        let m = y.first().map_or(0, Vec::len);
        if x.iter().any(|r| r.len() != d) || y.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let xm = DMatrix::from_fn(n, d, |i, j| x[i][j]);
        let ym = DMatrix::from_fn(y.len(), m, |i, j| y[i][j]);
        Self::new(xm, ym)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.y.ncols()
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn y_row(&self, i: usize) -> Vec<f64> {
        self.y.row(i).iter().copied().collect()
    }

    /// Same design, new responses.
    pub fn with_y(&self, y: DMatrix<f64>) -> Result<Self> {
        Self::new_unchecked(self.x.clone(), y)
    }

    /// Rows `indices`, in the given order. No rank check is performed.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let x = DMatrix::from_fn(indices.len(), self.d(), |r, c| self.x[(indices[r], c)]);
        let y = DMatrix::from_fn(indices.len(), self.m(), |r, c| self.y[(indices[r], c)]);
        Self { x, y }
    }

    /// Appends a constant column to X.
    pub fn with_intercept(&self) -> Result<Self> {
        let n = self.n();
        let d = self.d();
        let x = DMatrix::from_fn(n, d + 1, |i, j| if j < d { self.x[(i, j)] } else { 1.0 });
        Self::new(x, self.y.clone())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = File::open(path)?;
        let mut magic = [0u8; 4];
        let got = file.read(&mut magic)?;
        drop(file);
        if got == 4 && &magic == BINARY_MAGIC {
            Self::read_binary(BufReader::new(File::open(path)?))
        } else {
            Self::read_csv(BufReader::new(File::open(path)?))
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let names: Vec<&str> = header.iter().collect();
        let d = names.iter().take_while(|h| h.starts_with("x_")).count();
        let m = names[d..].iter().take_while(|h| h.starts_with("y_")).count();
        if d == 0 || m == 0 || d + m != names.len() {
            return Err(Error::Malformed(format!(
                "column count: header must be x_1..x_d followed by y_1..y_m with d, m >= 1; \
                 found {} x columns, {} y columns, {} columns total",
                d,
                m,
                names.len()
            )));
        }
        for (k, name) in names[..d].iter().enumerate() {
            if *name != format!("x_{}", k + 1) {
                return Err(Error::Malformed(format!("column {}: expected x_{}, found {name}", k + 1, k + 1)));
            }
        }
        for (k, name) in names[d..].iter().enumerate() {
            if *name != format!("y_{}", k + 1) {
                return Err(Error::Malformed(format!("column {}: expected y_{}, found {name}", d + k + 1, k + 1)));
            }
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != d + m {
                return Err(Error::Malformed(format!(
                    "column count: row {} has {} fields, header has {}",
                    r + 1,
                    rec.len(),
                    d + m
                )));
            }
            let mut vals = Vec::with_capacity(d + m);
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Malformed(format!("row {}, column {}: cannot parse {field:?} as a number", r + 1, c + 1))
                })?;
                vals.push(v);
            }
            ys.push(vals.split_off(d));
            xs.push(vals);
        }
        if xs.is_empty() {
            return Err(Error::Malformed("no data rows".into()));
        }
        Self::from_rows(&xs, &ys)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.d())
            .map(|k| format!("x_{k}"))
            .chain((1..=self.m()).map(|k| format!("y_{k}")))
            .collect();
        w.write_record(&header)?;
        for i in 0..self.n() {
            let row: Vec<String> = self
                .x
                .row(i)
                .iter()
                .chain(self.y.row(i).iter())
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut reader: R) -> Result<Self> {
        let mut header = [0u8; BINARY_HEADER_LEN];
        reader
            .read_exact(&mut header)
            .map_err(|_| Error::Malformed("binary dataset shorter than its 32-byte header".into()))?;
        if &header[0..4] != BINARY_MAGIC {
            return Err(Error::Malformed("bad magic, expected LEVA".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != BINARY_VERSION {
            return Err(Error::Malformed(format!("unsupported binary version {version}")));
        }
        let n = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(header[20..24].try_into().unwrap()) as usize;
        let count = n
            .checked_mul(d + m)
            .ok_or_else(|| Error::Malformed("binary header sizes overflow".into()))?;
        let mut body = Vec::new();
        reader.read_to_end(&mut body)?;
        if body.len() != count * 8 {
            return Err(Error::Malformed(format!(
                "column count: body holds {} bytes, header implies {}",
                body.len(),
                count * 8
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        // Column-major storage matches nalgebra's layout.
        let x = DMatrix::from_column_slice(n, d, &values[..n * d]);
        let y = DMatrix::from_column_slice(n, m, &values[n * d..]);
        Self::new(x, y)
    }

    pub fn write_binary<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.d() as u32).to_le_bytes())?;
        w.write_all(&(self.m() as u32).to_le_bytes())?;
        w.write_all(&[0u8; 8])?;
        for v in self.x.iter().chain(self.y.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        Dataset::from_rows(
            &[vec![1.0, 0.5], vec![0.25, 2.0], vec![-1.0, 3.0]],
            &[vec![0.1], vec![-0.2], vec![1e-300]],
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let data = sample();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_1,x_2,y_1\n"));
        assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), data);
    }

    #[test]
    fn binary_round_trip_and_header_layout() {
        let data = sample();
        let mut buf = Vec::new();
        data.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 3 * 3 * 8);
        assert_eq!(&buf[0..4], b"LEVA");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 1);
        // first stored value is X[0,0], second X[1,0] (columnar)
        assert_eq!(f64::from_le_bytes(buf[32..40].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(buf[40..48].try_into().unwrap()), 0.25);
        assert_eq!(Dataset::read_binary(&buf[..]).unwrap(), data);
    }

    #[test]
    fn missing_y_column_is_a_column_count_error() {
        let text = "x_1,x_2\n1,2\n3,4\n";
        let err = Dataset::read_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Malformed(ref s) if s.contains("column count")), "{err}");
    }

    #[test]
    fn short_row_is_a_column_count_error() {
        let text = "x_1,y_1\n1,2\n3\n";
        let err = Dataset::read_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Malformed(ref s) if s.contains("column count")), "{err}");
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let err = Dataset::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]], &vec![vec![0.0]; 3])
            .unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn row_count_mismatch() {
        let err = Dataset::new(DMatrix::zeros(3, 1), DMatrix::zeros(2, 1)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn too_few_rows() {
        let err = Dataset::new(DMatrix::identity(1, 2), DMatrix::zeros(1, 1)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
