//! Logit/label files.
//!
//! CSV: one sample per line, `C` logit columns followed by an integer
//! label, with an optional single header line.
//!
//! Raw binary (all little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SCLG"
//!      4     2  version (u16) = 1
//!      6     2  reserved (u16) = 0
//!      8     4  N (u32)
//!     12     4  C (u32)
//!     16  4*N*C logits, f32, row-major
//!      .   4*N  labels, u32
//! ```

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Dataset, LabelVector, LogitMatrix};

pub const RAW_MAGIC: &[u8; 4] = b"SCLG";
pub const RAW_VERSION: u16 = 1;
const RAW_HEADER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
    RawBinary,
}

impl DatasetFormat {
    /// `.csv` selects CSV; anything else is raw binary.
    pub fn from_extension(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::RawBinary,
        }
    }
}

/// Loads a dataset, recognising raw binary by its magic bytes.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(RAW_MAGIC) {
        read_raw_binary(&bytes)
    } else {
        read_csv(bytes.as_slice())
    }
    .map_err(|e| match e {
        Error::Parse { location, reason } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            reason,
        },
        other => other,
    })
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>, format: DatasetFormat) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        DatasetFormat::Csv => write_csv(ds, &mut w),
        DatasetFormat::RawBinary => write_raw_binary(ds, &mut w),
    }
    .and_then(|_| w.flush().map_err(|e| Error::io(path, e)))
}

fn parse_err(line: u64, reason: impl Into<String>) -> Error {
    Error::parse(format!("line {line}"), reason)
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut columns: Option<usize> = None;
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(idx as u64 + 1, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        // A first line that is not all numbers is a header.
        if idx == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            columns = Some(record.len());
            continue;
        }
        let width = *columns.get_or_insert(record.len());
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        if width < 3 {
            return Err(parse_err(line, "need at least two logit columns and a label"));
        }
        for (k, field) in record.iter().take(width - 1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("column {}: '{field}' is not a number", k + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite logit", k + 1)));
            }
            values.push(v);
        }
        let raw = &record[width - 1];
        let y: usize = raw
            .parse()
            .map_err(|_| parse_err(line, format!("label '{raw}' is not a non-negative integer")))?;
        if y >= width - 1 {
            return Err(parse_err(
                line,
                format!("label {y} out of range for {} classes", width - 1),
            ));
        }
        labels.push(y);
    }
    let classes = columns.map_or(0, |w| w.saturating_sub(1));
    if labels.is_empty() {
        return Err(Error::parse("end of file", "no samples"));
    }
    let logits = LogitMatrix::new(labels.len(), classes, values)?;
    let labels = LabelVector::new(labels, classes)?;
    Dataset::new(logits, labels)
}

pub fn write_csv<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let to_io = |e: std::io::Error| Error::io("<csv>", e);
    let mut line = String::new();
    for (row, y) in ds.logits.iter_rows().zip(ds.labels.as_slice()) {
        line.clear();
        for v in row {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&y.to_string());
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(to_io)?;
    }
    Ok(())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn read_raw_binary(bytes: &[u8]) -> Result<Dataset> {
    let off = |o: usize| format!("byte offset {o}");
    if bytes.len() < RAW_HEADER {
        return Err(Error::parse(off(0), "truncated header"));
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(Error::parse(off(0), "bad magic, expected \"SCLG\""));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RAW_VERSION {
        return Err(Error::Version {
            found: version as u32,
            expected: RAW_VERSION as u32,
        });
    }
    let n = u32_at(bytes, 8) as usize;
    let c = u32_at(bytes, 12) as usize;
    if n == 0 {
        return Err(Error::parse(off(8), "N must be at least 1"));
    }
    if c < 2 {
        return Err(Error::parse(off(12), format!("C must be at least 2, got {c}")));
    }
    let expected = n
        .checked_mul(c)
        .and_then(|nc| nc.checked_add(n))
        .and_then(|words| words.checked_mul(4))
        .and_then(|b| b.checked_add(RAW_HEADER))
        .ok_or_else(|| Error::parse(off(8), "dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::parse(
            off(bytes.len().min(expected)),
            format!("expected {expected} bytes for N={n}, C={c}, found {}", bytes.len()),
        ));
    }
    let mut values = Vec::with_capacity(n * c);
    for (j, chunk) in bytes[RAW_HEADER..RAW_HEADER + 4 * n * c].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::parse(
                off(RAW_HEADER + 4 * j),
                format!("non-finite logit (sample {}, class {})", j / c, j % c),
            ));
        }
        values.push(v as f64);
    }
    let label_base = RAW_HEADER + 4 * n * c;
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let at = label_base + 4 * i;
        let y = u32_at(bytes, at) as usize;
        if y >= c {
            return Err(Error::parse(
                off(at),
                format!("label {y} of sample {i} out of range for {c} classes"),
            ));
        }
        labels.push(y);
    }
    Dataset::new(LogitMatrix::new(n, c, values)?, LabelVector::new(labels, c)?)
}

/// Writes the raw binary format. Logits are narrowed to `f32`.
pub fn write_raw_binary<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let n = u32::try_from(ds.len()).map_err(|_| Error::param("too many samples for u32 header"))?;
    let c = u32::try_from(ds.classes()).map_err(|_| Error::param("too many classes for u32 header"))?;
    let mut buf = Vec::with_capacity(RAW_HEADER + 4 * (ds.len() * ds.classes() + ds.len()));
    buf.extend_from_slice(RAW_MAGIC);
    buf.extend_from_slice(&RAW_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&c.to_le_bytes());
    for &v in ds.logits.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &y in ds.labels.as_slice() {
        buf.extend_from_slice(&(y as u32).to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io("<raw>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_bytes(n: u32, c: u32, logits: &[f32], labels: &[u32]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(RAW_MAGIC);
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&0u16.to_le_bytes());
        b.extend_from_slice(&n.to_le_bytes());
        b.extend_from_slice(&c.to_le_bytes());
        for v in logits {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for y in labels {
            b.extend_from_slice(&y.to_le_bytes());
        }
        b
    }

    #[test]
    fn csv_line_parses() {
        let ds = read_csv("1.5,-0.5,2.0,2\n".as_bytes()).unwrap();
        assert_eq!(ds.logits.row(0), &[1.5, -0.5, 2.0]);
        assert_eq!(ds.labels.as_slice(), &[2]);
    }

    #[test]
    fn csv_header_is_skipped() {
        let ds = read_csv("z0,z1,label\n0.1,0.2,1\n0.3,-1,0\n".as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.classes(), 2);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = read_csv("0.1,0.2,1\n0.3,0.4,2\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse { location, reason } => {
                assert_eq!(location, "line 2");
                assert!(reason.contains("label 2"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
        assert!(read_csv("0.1,abc,1\n".as_bytes()).is_err());
        assert!(read_csv("0.1,0.2,1\n0.1,1\n".as_bytes()).is_err());
        assert!(read_csv("0.1,inf,1\n".as_bytes()).is_err());
        assert!(read_csv("0.1,0.2,-1\n".as_bytes()).is_err());
        assert!(read_csv("".as_bytes()).is_err());
    }

    #[test]
    fn raw_binary_parses() {
        let b = raw_bytes(2, 2, &[1.0, 2.0, 0.5, -0.5], &[1, 0]);
        let ds = read_raw_binary(&b).unwrap();
        assert_eq!(ds.logits.row(1), &[0.5, -0.5]);
        assert_eq!(ds.labels.as_slice(), &[1, 0]);
    }

    #[test]
    fn raw_binary_rejects_bad_input() {
        assert!(read_raw_binary(&raw_bytes(0, 3, &[], &[])).is_err());
        assert!(read_raw_binary(&raw_bytes(1, 2, &[1.0, 2.0], &[2])).is_err());
        assert!(read_raw_binary(&raw_bytes(1, 2, &[1.0, f32::NAN], &[0])).is_err());
        assert!(read_raw_binary(&raw_bytes(1, 2, &[1.0], &[0])).is_err());
        let mut b = raw_bytes(1, 2, &[1.0, 2.0], &[0]);
        b[4] = 2;
        assert!(matches!(read_raw_binary(&b), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn csv_and_raw_agree_on_f32_data() {
        let logits: Vec<f32> = vec![0.1, -3.25, 7.0e-3, 12.5, -0.333, 1e-7];
        let b = raw_bytes(3, 2, &logits, &[0, 1, 1]);
        let from_raw = read_raw_binary(&b).unwrap();
        let mut csv = Vec::new();
        write_csv(&from_raw, &mut csv).unwrap();
        let from_csv = read_csv(csv.as_slice()).unwrap();
        assert_eq!(from_raw, from_csv);
        let mut raw = Vec::new();
        write_raw_binary(&from_csv, &mut raw).unwrap();
        assert_eq!(raw, b);
    }
}
