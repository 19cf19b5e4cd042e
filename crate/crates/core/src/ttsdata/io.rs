//! On-disk formats.
//!
//! Binary tensor layout (all little-endian):
//!
//! ```text
//! b"MOST" | version: u32 | d1: u64 | d2: u64 | T: u64 | d1*d2*T f64 in (i, j, t) order
//! ```
//!
//! CSV long layout: header `mode1_id,mode2_id,time_index,value`, one row per
//! entry, every `(i, j, t)` present exactly once.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::TtsWindow;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MOST";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 3 * 8;

/// A full `(d1, d2, T)` series as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTensor {
    pub d1: usize,
    pub d2: usize,
    pub len: usize,
    pub values: Vec<f64>,
}

impl SeriesTensor {
    pub fn new(d1: usize, d2: usize, len: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != d1 * d2 * len {
            return Err(Error::dim("SeriesTensor", &[values.len()], &[d1, d2, len]));
        }
        Ok(Self { d1, d2, len, values })
    }

    pub fn at(&self, i: usize, j: usize, t: usize) -> f64 {
        self.values[(i * self.d2 + j) * self.len + t]
    }

    /// Concatenates equally shaped windows along time.
    pub fn from_windows(windows: &[TtsWindow]) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::arg("no windows"))?;
        let (d1, d2, w) = (first.d1(), first.d2(), first.len());
        if windows.iter().any(|x| (x.d1(), x.d2(), x.len()) != (d1, d2, w)) {
            return Err(Error::arg("windows differ in shape"));
        }
        let len = w * windows.len();
        let mut values = Vec::with_capacity(d1 * d2 * len);
        for i in 0..d1 {
            for j in 0..d2 {
                for x in windows {
                    values.extend_from_slice(x.series(i, j));
                }
            }
        }
        Self::new(d1, d2, len, values)
    }

    /// Windows of length `w` starting every `stride` steps.
    pub fn windows(&self, w: usize, stride: usize) -> Result<Vec<TtsWindow>> {
        if w < 2 || w > self.len {
            return Err(Error::Config(format!("window length {w} invalid for series length {}", self.len)));
        }
        if stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start + w <= self.len {
            let mut values = Vec::with_capacity(self.d1 * self.d2 * w);
            for i in 0..self.d1 {
                for j in 0..self.d2 {
                    let base = (i * self.d2 + j) * self.len + start;
                    values.extend_from_slice(&self.values[base..base + w]);
                }
            }
            out.push(TtsWindow::new(values, self.d1, self.d2, w)?.with_sample_id(start));
            start += stride;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.values.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        for d in [self.d1, self.d2, self.len] {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < HEADER_LEN {
            return Err(Error::Data(format!("tensor file too short ({} bytes)", buf.len())));
        }
        if &buf[..4] != MAGIC {
            return Err(Error::Data("bad magic, expected MOST".into()));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Data(format!("unsupported tensor version {version}")));
        }
        let dim = |k: usize| u64::from_le_bytes(buf[8 + 8 * k..16 + 8 * k].try_into().unwrap()) as usize;
        let (d1, d2, len) = (dim(0), dim(1), dim(2));
        let count = d1
            .checked_mul(d2)
            .and_then(|v| v.checked_mul(len))
            .ok_or_else(|| Error::Data("tensor dims overflow".into()))?;
        let payload = &buf[HEADER_LEN..];
        if payload.len() != count * 8 {
            return Err(Error::Data(format!(
                "payload has {} bytes, dims ({d1}, {d2}, {len}) need {}",
                payload.len(),
                count * 8
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(d1, d2, len, values)
    }
}

pub fn write_binary(path: &Path, tensor: &SeriesTensor) -> Result<()> {
    fs::write(path, tensor.to_bytes())?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<SeriesTensor> {
    SeriesTensor::from_bytes(&fs::read(path)?)
}

pub fn write_csv_long(path: &Path, tensor: &SeriesTensor) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "mode1_id,mode2_id,time_index,value")?;
    for i in 0..tensor.d1 {
        for j in 0..tensor.d2 {
            for t in 0..tensor.len {
                writeln!(out, "{i},{j},{t},{}", tensor.at(i, j, t))?;
            }
        }
    }
    Ok(())
}

pub fn read_csv_long(path: &Path) -> Result<SeriesTensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let expected = ["mode1_id", "mode2_id", "time_index", "value"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}, got {:?}", expected.join(","), headers),
        });
    }
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| -> Result<&str> {
            record.get(k).ok_or_else(|| Error::Parse {
                line,
                msg: format!("missing column {}", expected[k]),
            })
        };
        let index = |k: usize| -> Result<usize> {
            field(k)?.parse().map_err(|e| Error::Parse {
                line,
                msg: format!("{}: {e}", expected[k]),
            })
        };
        let (i, j, t) = (index(0)?, index(1)?, index(2)?);
        let value: f64 = field(3)?.parse().map_err(|e| Error::Parse {
            line,
            msg: format!("value: {e}"),
        })?;
        entries.push((i, j, t, value));
    }
    if entries.is_empty() {
        return Err(Error::Data("csv contains no rows".into()));
    }
    let d1 = entries.iter().map(|e| e.0).max().unwrap() + 1;
    let d2 = entries.iter().map(|e| e.1).max().unwrap() + 1;
    let len = entries.iter().map(|e| e.2).max().unwrap() + 1;
    let mut values = vec![f64::NAN; d1 * d2 * len];
    let mut seen = vec![false; values.len()];
    for (i, j, t, v) in entries {
        let k = (i * d2 + j) * len + t;
        if seen[k] {
            return Err(Error::Data(format!("duplicate entry ({i}, {j}, {t})")));
        }
        seen[k] = true;
        values[k] = v;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        let (i, j, t) = (k / (d2 * len), (k / len) % d2, k % len);
        return Err(Error::Data(format!("missing entry ({i}, {j}, {t})")));
    }
    SeriesTensor::new(d1, d2, len, values)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            msg: format!("{kind:?}"),
        },
    }
}

/// Per-window labels: header `window,label`.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "window,label")?;
    for (k, l) in labels.iter().enumerate() {
        writeln!(out, "{k},{l}")?;
    }
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut labels = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(k + 2, |p| p.line() as usize);
        let parse = |idx: usize| -> Result<usize> {
            record
                .get(idx)
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: "missing column".into(),
                })?
                .trim()
                .parse()
                .map_err(|e| Error::Parse {
                    line,
                    msg: format!("{e}"),
                })
        };
        if parse(0)? != k {
            return Err(Error::Parse {
                line,
                msg: format!("expected window index {k}"),
            });
        }
        labels.push(parse(1)?);
    }
    Ok(labels)
}
