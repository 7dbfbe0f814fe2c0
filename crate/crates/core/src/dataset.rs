//! Pre-featurized labelled datasets.
//!
//! Two on-disk layouts are accepted: CSV with header `label,f0,...,f{d-1}`, and
//! a little-endian binary `[u32 N][u32 d][N*d f64, row-major][N u8 labels]`.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::objectives::CLASSES;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<u8>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension(format!("{} labels for {} rows", labels.len(), features.nrows())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| usize::from(y) >= CLASSES) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..{CLASSES}")));
        }
        Ok(Dataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty dataset CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"label") || cols[1..].iter().enumerate().any(|(c, h)| *h != format!("f{c}")) {
            return Err(Error::Parse(format!("dataset header must be `label,f0,...`, got `{header}`")));
        }
        let d = cols.len() - 1;
        let (mut values, mut labels) = (Vec::new(), Vec::new());
        for (line_no, line) in lines.enumerate() {
            let mut cells = line.split(',').map(str::trim);
            let label = cells.next().unwrap_or_default();
            labels.push(
                label
                    .parse::<u8>()
                    .map_err(|e| Error::Parse(format!("row {}: label `{label}`: {e}", line_no + 1)))?,
            );
            let before = values.len();
            for cell in cells {
                values.push(
                    cell.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {}: `{cell}`: {e}", line_no + 1)))?,
                );
            }
            if values.len() - before != d {
                return Err(Error::Parse(format!("row {} has {} features, expected {d}", line_no + 1, values.len() - before)));
            }
        }
        Self::new(DMatrix::from_row_slice(labels.len(), d, &values), labels)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for c in 0..self.dim() {
            out.push_str(&format!(",f{c}"));
        }
        out.push('\n');
        for (row, y) in self.features.row_iter().zip(&self.labels) {
            out.push_str(&y.to_string());
            for v in row.iter() {
                out.push(',');
                out.push_str(&crate::fmt::g17(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_binary(bytes: &[u8]) -> Result<Self> {
        let word = |at: usize| -> Result<usize> {
            let b = bytes
                .get(at..at + 4)
                .ok_or_else(|| Error::Parse("binary dataset shorter than its header".into()))?;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
        };
        let (n, d) = (word(0)?, word(4)?);
        let body = 8 + n * d * 8;
        if bytes.len() != body + n {
            return Err(Error::Parse(format!(
                "binary dataset of {n} x {d} needs {} bytes, found {}",
                body + n,
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes[8..body]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::new(DMatrix::from_row_slice(n, d, &values), bytes[body..].to_vec())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.len() * (self.dim() * 8 + 1));
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for row in self.features.row_iter() {
            for v in row.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.labels);
        out
    }

    /// Reads CSV when the extension is `csv`, binary otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            let text = String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
            Self::parse_csv(&text)
        } else {
            Self::parse_binary(&bytes)
        };
        parsed.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(DMatrix::from_row_slice(3, 2, &[0.5, -1.0, 0.1, 1e-300, 3.0, 2.0]), vec![0, 9, 4]).unwrap()
    }

    #[test]
    fn both_formats_round_trip_exactly() {
        let ds = tiny();
        assert_eq!(Dataset::parse_csv(&ds.to_csv()).unwrap(), ds);
        assert_eq!(Dataset::parse_binary(&ds.to_binary()).unwrap(), ds);
        assert_eq!(ds.to_binary().len(), 8 + 3 * 16 + 3);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(Dataset::parse_csv("y,f0\n1,2\n").is_err());
        assert!(Dataset::parse_csv("label,f0\n1,2,3\n").is_err());
        assert!(Dataset::parse_csv("label,f0\n10,2\n").is_err());
        let mut bin = tiny().to_binary();
        bin.pop();
        assert!(Dataset::parse_binary(&bin).is_err());
    }

    #[test]
    fn subset_keeps_order() {
        let s = tiny().subset(&[2, 0]);
        assert_eq!(s.labels, vec![4, 0]);
        assert_eq!(s.features[(0, 0)], 3.0);
    }
}
