//! Binary (±1) samples and datasets, plus the on-disk dataset formats.
//!
//! Two encodings are supported:
//!
//! * text: a header line `ISING-DATA v1 p=<p> n=<n>` followed by `n` lines of
//!   space separated `-1`/`1` values;
//! * binary: magic `ISD1`, `u32` p, `u64` n (little endian), then `n * p`
//!   signed bytes in row-major order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const TEXT_HEADER: &str = "ISING-DATA v1";
const BINARY_MAGIC: &[u8; 4] = b"ISD1";

/// A single observation: every entry is exactly `-1` or `+1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinarySample {
    values: Vec<i8>,
}

impl BinarySample {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        check_spins(&values)?;
        Ok(Self { values })
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self {
            values: bits.iter().map(|&b| if b { 1 } else { -1 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    /// Copy of this sample with coordinate `j` negated.
    pub fn flipped(&self, j: usize) -> Result<Self> {
        if j >= self.values.len() {
            return Err(Error::IndexOutOfRange {
                index: j,
                dim: self.values.len(),
            });
        }
        let mut values = self.values.clone();
        values[j] = -values[j];
        Ok(Self { values })
    }

    /// Copy of this sample with coordinate `j` set to `v`.
    pub fn with_value(&self, j: usize, v: i8) -> Result<Self> {
        if j >= self.values.len() {
            return Err(Error::IndexOutOfRange {
                index: j,
                dim: self.values.len(),
            });
        }
        check_spins(&[v])?;
        let mut values = self.values.clone();
        values[j] = v;
        Ok(Self { values })
    }
}

impl AsRef<[i8]> for BinarySample {
    fn as_ref(&self) -> &[i8] {
        &self.values
    }
}

fn check_spins(values: &[i8]) -> Result<()> {
    match values.iter().find(|&&v| v != 1 && v != -1) {
        Some(v) => Err(Error::invalid(format!("sample entry {v} is not ±1"))),
        None => Ok(()),
    }
}

/// `n` samples of dimension `p`, stored row-major as signed bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryDataset {
    p: usize,
    n: usize,
    data: Vec<i8>,
}

impl BinaryDataset {
    /// Build a dataset from a flat row-major buffer of `n * p` spins.
    pub fn from_flat(p: usize, data: Vec<i8>) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if data.len() % p != 0 {
            return Err(Error::invalid(format!(
                "buffer of {} entries is not a multiple of p={p}",
                data.len()
            )));
        }
        check_spins(&data)?;
        let n = data.len() / p;
        Ok(Self { p, n, data })
    }

    pub fn from_samples(samples: &[BinarySample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let p = first.len();
        let mut data = Vec::with_capacity(p * samples.len());
        for s in samples {
            if s.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    actual: s.len(),
                });
            }
            data.extend_from_slice(s.values());
        }
        Self::from_flat(p, data)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sample(&self, i: usize) -> &[i8] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = &[i8]> {
        self.data.chunks_exact(self.p)
    }

    pub fn as_flat(&self) -> &[i8] {
        &self.data
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n {
            return Err(Error::invalid(format!(
                "row range {range:?} invalid for n={}",
                self.n
            )));
        }
        Ok(Self {
            p: self.p,
            n: range.len(),
            data: self.data[range.start * self.p..range.end * self.p].to_vec(),
        })
    }

    /// Concatenate datasets sharing the same `p`.
    pub fn concat(parts: &[BinaryDataset]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyDataset)?;
        let mut data = Vec::new();
        for part in parts {
            if part.p != first.p {
                return Err(Error::DimensionMismatch {
                    expected: first.p,
                    actual: part.p,
                });
            }
            data.extend_from_slice(&part.data);
        }
        Self::from_flat(first.p, data)
    }

    /// Dense `n × p` copy with `±1.0` entries, used by the matrix kernels.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.n, self.p, self.data.iter().map(|&v| f64::from(v)))
    }

    pub fn write_text(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "{TEXT_HEADER} p={} n={}", self.p, self.n)?;
        let mut line = String::with_capacity(3 * self.p);
        for row in self.samples() {
            line.clear();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(' ');
                }
                line.push_str(if *v > 0 { "1" } else { "-1" });
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_text(r: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("missing header line".into()))??;
        let (p, n) = parse_text_header(&header)?;
        let mut data = Vec::with_capacity(p * n);
        let mut rows = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for tok in line.split_whitespace() {
                let v = match tok {
                    "1" | "+1" => 1,
                    "-1" => -1,
                    other => {
                        return Err(Error::Format(format!(
                            "row {}: entry {other:?} is not ±1",
                            rows + 1
                        )))
                    }
                };
                data.push(v);
            }
            if data.len() - before != p {
                return Err(Error::Format(format!(
                    "row {} has {} entries, expected {p}",
                    rows + 1,
                    data.len() - before
                )));
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Format(format!("header declares n={n}, found {rows} rows")));
        }
        Self::from_flat(p, data)
    }

    pub fn write_binary(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.p as u32).to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| v as u8).collect();
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut head = [0u8; 16];
        r.read_exact(&mut head)
            .map_err(|_| Error::Format("binary dataset header truncated".into()))?;
        if &head[..4] != BINARY_MAGIC {
            return Err(Error::Format("bad binary dataset magic".into()));
        }
        let p = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
        let len = p
            .checked_mul(n)
            .ok_or_else(|| Error::Format("dataset size overflows".into()))?;
        let mut bytes = Vec::with_capacity(len);
        r.read_to_end(&mut bytes)?;
        if bytes.len() != len {
            return Err(Error::Format(format!(
                "binary dataset holds {} bytes, header declares {len}",
                bytes.len()
            )));
        }
        Self::from_flat(p, bytes.into_iter().map(|b| b as i8).collect())
    }

    /// Write to `path`, choosing the binary format for a `.isd` extension and
    /// text otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        if is_binary_path(path) {
            self.write_binary(file)
        } else {
            self.write_text(file)
        }
    }

    /// Read either format, sniffing the magic bytes.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::read_binary(bytes.as_slice())
        } else {
            Self::read_text(bytes.as_slice())
        }
    }
}

fn is_binary_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "isd")
}

fn parse_text_header(header: &str) -> Result<(usize, usize)> {
    let rest = header
        .strip_prefix(TEXT_HEADER)
        .ok_or_else(|| Error::Format(format!("unexpected header {header:?}")))?;
    let mut p = None;
    let mut n = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("p=") {
            p = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("n=") {
            n = v.parse().ok();
        }
    }
    match (p, n) {
        (Some(p), Some(n)) => Ok((p, n)),
        _ => Err(Error::Format(format!("header {header:?} lacks p= or n="))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BinaryDataset {
        BinaryDataset::from_flat(3, vec![1, -1, 1, -1, -1, 1]).unwrap()
    }

    #[test]
    fn rejects_non_spin_entries() {
        assert!(BinarySample::new(vec![1, 0, -1]).is_err());
        assert!(BinaryDataset::from_flat(2, vec![1, 2]).is_err());
    }

    #[test]
    fn rejects_ragged_and_empty() {
        assert!(matches!(
            BinaryDataset::from_flat(2, vec![]),
            Err(Error::EmptyDataset)
        ));
        assert!(BinaryDataset::from_flat(2, vec![1, 1, 1]).is_err());
        let a = BinarySample::new(vec![1, 1]).unwrap();
        let b = BinarySample::new(vec![1]).unwrap();
        assert!(BinaryDataset::from_samples(&[a, b]).is_err());
    }

    #[test]
    fn text_format_layout() {
        let mut buf = Vec::new();
        tiny().write_text(&mut buf).unwrap();
        let s = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(s, "ISING-DATA v1 p=3 n=2\n1 -1 1\n-1 -1 1\n");
        assert_eq!(BinaryDataset::read_text(buf.as_slice()).unwrap(), tiny());
    }

    #[test]
    fn binary_format_layout() {
        let mut buf = Vec::new();
        tiny().write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"ISD1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 16 + 6);
        assert_eq!(buf[17], 0xff);
        assert_eq!(BinaryDataset::read_binary(buf.as_slice()).unwrap(), tiny());
    }

    #[test]
    fn text_row_count_must_match_header() {
        let text = "ISING-DATA v1 p=2 n=2\n1 1\n";
        assert!(BinaryDataset::read_text(text.as_bytes()).is_err());
        let text = "ISING-DATA v1 p=2 n=1\n1 0\n";
        assert!(BinaryDataset::read_text(text.as_bytes()).is_err());
    }

    #[test]
    fn slicing_and_concat_round_trip() {
        let d = tiny();
        let a = d.slice(0..1).unwrap();
        let b = d.slice(1..2).unwrap();
        assert_eq!(BinaryDataset::concat(&[a, b]).unwrap(), d);
        assert!(d.slice(1..1).is_err());
        assert!(d.slice(0..3).is_err());
    }
}
