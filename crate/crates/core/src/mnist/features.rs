//! Feature files: one row per image, label first.
//!
//! CSV: header `label,f0,f1,...`, then `label,v0,v1,...` with shortest
//! round-trip floats. Binary (little endian): the 8-byte magic `DSTNFEAT`,
//! u32 version, u64 rows, u64 cols, then per row one u8 label followed by
//! `cols` f64 values.

use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DSTNFEAT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub labels: Vec<u8>,
    /// `labels.len() x dim`
    pub values: Array2<f64>,
}

impl FeatureTable {
    pub fn new(labels: Vec<u8>, values: Array2<f64>) -> Result<Self> {
        if labels.len() != values.nrows() {
            return Err(Error::Consistency(format!(
                "{} labels for {} feature rows",
                labels.len(),
                values.nrows()
            )));
        }
        Ok(FeatureTable { labels, values })
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        write!(w, "label").map_err(io)?;
        for i in 0..self.dim() {
            write!(w, ",f{i}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for (label, row) in self.labels.iter().zip(self.values.rows()) {
            write!(w, "{label}").map_err(io)?;
            for v in row {
                write!(w, ",{v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dim() as u64).to_le_bytes()).map_err(io)?;
        for (label, row) in self.labels.iter().zip(self.values.rows()) {
            w.write_all(&[*label]).map_err(io)?;
            for v in row {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                path: path.into(),
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Snapshot(format!("{}: not a feature file", path.display())));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Snapshot(format!(
                "{}: feature file version {version} not supported",
                path.display()
            )));
        }
        let rows = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let cols = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
        let row_len = 1 + 8 * cols;
        let expected = HEADER_LEN + rows * row_len;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                path: path.into(),
                expected: expected as u64,
                actual: bytes.len() as u64,
            });
        }
        let mut labels = Vec::with_capacity(rows);
        let mut values = Vec::with_capacity(rows * cols);
        for chunk in bytes[HEADER_LEN..].chunks_exact(row_len) {
            labels.push(chunk[0]);
            values.extend(
                chunk[1..]
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))),
            );
        }
        let values = Array2::from_shape_vec((rows, cols), values).expect("length checked");
        FeatureTable::new(labels, values)
    }
}
