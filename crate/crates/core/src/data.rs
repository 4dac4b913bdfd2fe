//! Teacher-generated datasets and their on-disk formats.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 4    | magic `ECDS`                              |
//! | 4      | 4    | format version, `u32` (= 1)               |
//! | 8      | 8    | header length `h`, `u64`                  |
//! | 16     | h    | UTF-8 JSON header (see [`DatasetHeader`]) |
//! | 16+h   | 8·n·d_in  | `X`, row-major `f64`                 |
//! | …      | 8·n·d_out | `Y`, row-major `f64`                 |
//!
//! Nothing may follow `Y`. The JSON form is
//! `{"provenance": {...}, "x": [[...], ...], "y": [[...], ...]}`; both forms
//! are lossless for finite 64-bit floats.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetworkParams;

pub const MAGIC: &[u8; 4] = b"ECDS";
pub const FORMAT_VERSION: u32 = 1;

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    /// Identifier of the generating network (a content hash for teachers).
    pub teacher: String,
    pub seed: u64,
}

/// Full-batch regression data: `x` is `n × d_in`, `y` is `n × d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub provenance: Provenance,
    pub n: u64,
    pub d_in: u64,
    pub d_out: u64,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Argument("dataset must contain at least one sample".into()));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::Shape(format!("{} inputs but {} targets", x.nrows(), y.nrows())));
        }
        if x.ncols() == 0 || y.ncols() == 0 {
            return Err(Error::Shape("dataset has an empty dimension".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Format("dataset contains non-finite values".into()));
        }
        Ok(Dataset { x, y, provenance })
    }

    /// Inputs labelled by `teacher`.
    pub fn from_teacher(teacher: &NetworkParams, x: DMatrix<f64>, seed: u64) -> Result<Self> {
        let y = teacher.predict(&x)?;
        Dataset::new(
            x,
            y,
            Provenance {
                teacher: network_id(teacher),
                seed,
            },
        )
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn d_in(&self) -> usize {
        self.x.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.y.ncols()
    }

    /// Mean over output dimensions of the per-dimension target variance.
    pub fn target_variance(&self) -> f64 {
        column_variances(&self.y).iter().sum::<f64>() / self.d_out() as f64
    }

    /// Same targets, different inputs (used to retrain on a reconstructed prefix).
    pub fn with_inputs(&self, x: DMatrix<f64>) -> Result<Self> {
        Dataset::new(x, self.y.clone(), self.provenance.clone())
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            provenance: self.provenance.clone(),
            n: self.len() as u64,
            d_in: self.d_in() as u64,
            d_out: self.d_out() as u64,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serialises");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * (self.x.len() + self.y.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for m in [&self.x, &self.y] {
            for row in m.row_iter() {
                for v in row.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    /// Decode the binary form. Never panics on malformed input.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
        let header_len = usize::try_from(header_len).map_err(|_| Error::Format("header length overflows".into()))?;
        let header: DatasetHeader = serde_json::from_slice(cur.take(header_len)?)?;
        let dims = |v: u64| usize::try_from(v).map_err(|_| Error::Format("dimension overflows".into()));
        let (n, d_in, d_out) = (dims(header.n)?, dims(header.d_in)?, dims(header.d_out)?);
        let x_len = n
            .checked_mul(d_in)
            .ok_or_else(|| Error::Format("size overflows".into()))?;
        let y_len = n
            .checked_mul(d_out)
            .ok_or_else(|| Error::Format("size overflows".into()))?;
        let payload = x_len
            .checked_add(y_len)
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| Error::Format("size overflows".into()))?;
        if cur.remaining() != payload {
            return Err(Error::Format(format!(
                "payload is {} bytes, header implies {payload}",
                cur.remaining()
            )));
        }
        let x = DMatrix::from_row_iterator(n, d_in, cur.f64s(x_len)?);
        let y = DMatrix::from_row_iterator(n, d_out, cur.f64s(y_len)?);
        Dataset::new(x, y, header.provenance)
    }

    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            provenance: self.provenance.clone(),
            x: rows(&self.x),
            y: rows(&self.y),
        };
        serde_json::to_string(&file).expect("dataset serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        let x = from_rows(file.x)?;
        let y = from_rows(file.y)?;
        Dataset::new(x, y, file.provenance)
    }

    /// Load by extension: `.json` files use the JSON form, everything else binary.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if is_json(path) {
            Dataset::from_json(&std::fs::read_to_string(path)?)
        } else {
            Dataset::from_bytes(&std::fs::read(path)?)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if is_json(path) {
            std::fs::write(path, self.to_json())?;
        } else {
            std::fs::write(path, self.to_bytes())?;
        }
        Ok(())
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    provenance: Provenance,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Format("ragged matrix".into()));
    }
    Ok(DMatrix::from_row_iterator(n, d, rows.into_iter().flatten()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.remaining() < k {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let out = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(out)
    }

    fn f64s(&mut self, count: usize) -> Result<impl Iterator<Item = f64> + 'a> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))))
    }
}

/// Per-column population variance.
pub fn column_variances(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    m.column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
        })
        .collect()
}

/// Short content hash identifying a network.
pub fn network_id(net: &NetworkParams) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(net.to_json().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Dataset {
        Dataset::new(
            DMatrix::from_row_slice(3, 2, &[0.1, -0.2, 1e-300, 3.5, -7.25, f64::MIN_POSITIVE]),
            DMatrix::from_row_slice(3, 1, &[1.0 / 3.0, -0.0, 12345.678]),
            Provenance {
                teacher: "abc".into(),
                seed: 9,
            },
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let d = sample();
        assert_eq!(Dataset::from_bytes(&d.to_bytes()).unwrap(), d);
    }

    #[test]
    fn json_round_trip() {
        let d = sample();
        assert_eq!(Dataset::from_json(&d.to_json()).unwrap(), d);
    }

    #[test]
    fn truncated_and_padded_payloads_are_rejected() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 8, 15, 20, bytes.len() - 1] {
            assert!(Dataset::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(Dataset::from_bytes(&padded).is_err());
    }

    #[test]
    fn huge_header_dimensions_do_not_allocate() {
        let mut d = sample();
        d.provenance.seed = 1;
        let header = DatasetHeader {
            provenance: d.provenance.clone(),
            n: u64::MAX / 2,
            d_in: 3,
            d_out: 1,
        };
        let h = serde_json::to_vec(&header).unwrap();
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(h.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&h);
        assert!(Dataset::from_bytes(&bytes).is_err());
    }

    #[test]
    fn empty_and_mismatched_datasets_are_rejected() {
        assert!(Dataset::new(DMatrix::zeros(0, 2), DMatrix::zeros(0, 1), Provenance::default()).is_err());
        assert!(Dataset::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 1), Provenance::default()).is_err());
        let nan = DMatrix::from_element(1, 1, f64::NAN);
        assert!(Dataset::new(nan, DMatrix::zeros(1, 1), Provenance::default()).is_err());
    }

    proptest! {
        #[test]
        fn binary_form_is_lossless(
            n in 1usize..6,
            d_in in 1usize..4,
            vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO | proptest::num::f64::SUBNORMAL, 40),
            seed in any::<u64>(),
        ) {
            let x = DMatrix::from_fn(n, d_in, |i, j| vals[(i * d_in + j) % vals.len()]);
            let y = DMatrix::from_fn(n, 1, |i, _| vals[(i + 17) % vals.len()]);
            let d = Dataset::new(x, y, Provenance { teacher: "t".into(), seed }).unwrap();
            let back = Dataset::from_bytes(&d.to_bytes()).unwrap();
            prop_assert!(back.x.iter().zip(d.x.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(Dataset::from_json(&d.to_json()).unwrap(), d);
        }

        #[test]
        fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = Dataset::from_bytes(&bytes);
            let mut prefixed = MAGIC.to_vec();
            prefixed.extend_from_slice(&bytes);
            let _ = Dataset::from_bytes(&prefixed);
        }
    }
}
