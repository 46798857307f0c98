//! `AVTS` tensor files and report emitters.
//!
//! Layout (all little-endian):
//!
//! | bytes        | field                         |
//! |--------------|-------------------------------|
//! | 4            | magic `AVTS`                  |
//! | 4            | version, `u32` = 1            |
//! | 1            | dtype, `0` = f32, `1` = f64   |
//! | 1            | ndim                          |
//! | 8 · ndim     | dims, `u64`                   |
//! | rest         | row-major payload             |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: [u8; 4] = *b"AVTS";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            Self::F32 => 0,
            Self::F64 => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Self::F32),
            1 => Ok(Self::F64),
            other => Err(Error::Format(format!("unsupported dtype code {other} (expected 0 = f32 or 1 = f64)"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

impl std::str::FromStr for DType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(format!("unknown dtype `{other}` (f32|f64)")),
        }
    }
}

/// An n-dimensional tensor as stored on disk; values widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub dtype: DType,
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

impl TensorFile {
    pub fn from_matrix(m: &Matrix, dtype: DType) -> Self {
        Self { dtype, dims: vec![m.rows() as u64, m.cols() as u64], data: m.data().to_vec() }
    }

    fn numel(dims: &[u64]) -> Result<usize> {
        dims.iter()
            .try_fold(1usize, |acc, &d| usize::try_from(d).ok().and_then(|d| acc.checked_mul(d)))
            .ok_or_else(|| Error::Format(format!("tensor dims {dims:?} overflow")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let n = Self::numel(&self.dims)?;
        if n != self.data.len() {
            return Err(Error::Format(format!("dims {:?} hold {n} values, data has {}", self.dims, self.data.len())));
        }
        let ndim = u8::try_from(self.dims.len()).map_err(|_| Error::Format("more than 255 dims".into()))?;
        let mut out = Vec::with_capacity(10 + 8 * self.dims.len() + n * self.dtype.size());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype.code());
        out.push(ndim);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match self.dtype {
            DType::F32 => self.data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            DType::F64 => self.data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let header = |need: usize| {
            if bytes.len() < need {
                Err(Error::Truncated { expected: need, actual: bytes.len() })
            } else {
                Ok(())
            }
        };
        header(10)?;
        if bytes[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}, expected \"AVTS\"", &bytes[..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
        }
        let dtype = DType::from_code(bytes[8])?;
        let ndim = bytes[9] as usize;
        let start = 10 + 8 * ndim;
        header(start)?;
        let dims: Vec<u64> = bytes[10..start]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let n = Self::numel(&dims)?;
        let expected = n
            .checked_mul(dtype.size())
            .and_then(|p| p.checked_add(start))
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        if bytes.len() != expected {
            if bytes.len() < expected {
                return Err(Error::Truncated { expected, actual: bytes.len() });
            }
            return Err(Error::Format(format!("{} trailing bytes after payload", bytes.len() - expected)));
        }
        let payload = &bytes[start..];
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            DType::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
        };
        Ok(Self { dtype, dims, data })
    }

    /// 1-D tensors load as a single row; `(b, s, m)` flattens to `(b·s, m)`.
    pub fn into_matrix(self) -> Result<Matrix> {
        let d: Vec<usize> = self.dims.iter().map(|&x| x as usize).collect();
        let (rows, cols) = match d.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            [b, s, m] => (b * s, *m),
            _ => return Err(Error::Format(format!("expected 1 to 3 dims, got {}", d.len()))),
        };
        Matrix::new(rows, cols, self.data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.encode()?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Matrix> {
    TensorFile::read(path)?.into_matrix()
}

/// Writing as `F32` rounds each value to the nearest `f32`.
pub fn write_tensor(path: impl AsRef<Path>, m: &Matrix, dtype: DType) -> Result<()> {
    TensorFile::from_matrix(m, dtype).write(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown format `{other}` (json|csv)")),
        }
    }
}

/// Envelope written around every result.
#[derive(Clone, Debug, Serialize)]
pub struct Report<C: Serialize, R: Serialize> {
    pub command: String,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    pub seed: u64,
    pub config: C,
    pub result: R,
}

impl<C: Serialize, R: Serialize> Report<C, R> {
    pub fn new(command: &str, seed: u64, config: C, result: R, with_timestamp: bool) -> Self {
        let timestamp = with_timestamp.then(|| {
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
        });
        Self { command: command.to_string(), version: env!("CARGO_PKG_VERSION").to_string(), timestamp, seed, config, result }
    }
}

/// Pretty JSON; struct fields keep declaration order, maps are sorted.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Depth-first `(dotted.path, scalar)` pairs; array elements are indexed.
pub fn flatten(value: &Value) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(map) => map.iter().for_each(|(k, x)| walk(&join(k), x, out)),
            Value::Array(xs) => xs.iter().enumerate().for_each(|(i, x)| walk(&join(&i.to_string()), x, out)),
            scalar => out.push((prefix.to_string(), scalar_text(scalar))),
        }
    }
    let mut out = Vec::new();
    walk("", value, &mut out);
    out
}

/// Two-column `key,value` CSV of every scalar in `value`.
pub fn to_csv_long<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["key", "value"])?;
    for (k, x) in flatten(&v) {
        w.write_record([k, x])?;
    }
    finish_csv(w)
}

/// One row per record, columns from the flattened fields of the first
/// record. Every record must flatten to the same keys.
pub fn to_csv_table<T: Serialize>(records: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Option<Vec<String>> = None;
    for r in records {
        let flat = flatten(&serde_json::to_value(r)?);
        let keys: Vec<String> = flat.iter().map(|(k, _)| k.clone()).collect();
        match &header {
            None => {
                w.write_record(&keys)?;
                header = Some(keys);
            }
            Some(h) if *h != keys => {
                return Err(Error::Format(format!("record columns {keys:?} differ from header {h:?}")));
            }
            Some(_) => {}
        }
        w.write_record(flat.iter().map(|(_, v)| v))?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("csv is not UTF-8: {e}")))
}
