//! Headered CSV input and atomic file output.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use tempfile::NamedTempFile;

/// Malformed input, located by line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: u64,
    pub message: String,
}

impl ParseError {
    pub fn new(line: u64, message: impl Into<String>) -> Self {
        Self { line, message: message.into() }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

/// Expected header: `x1..xD`, optionally followed by `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `x1..xD,y` with `D` taken from the header.
    Training,
    /// `x1..xD` with a known `D`.
    Points(usize),
}

fn check_header(names: &[&str], layout: Layout) -> Result<usize, ParseError> {
    let xs = match layout {
        Layout::Training => match names.split_last() {
            Some((&"y", xs)) if !xs.is_empty() => xs,
            _ => return Err(ParseError::new(1, format!("expected header x1,..,xD,y, got {:?}", names.join(",")))),
        },
        Layout::Points(d) => {
            if names.len() != d {
                let err = kpgp_core::Error::DimensionMismatch { expected: d, got: names.len() };
                return Err(ParseError::new(1, err.to_string()));
            }
            names
        }
    };
    for (i, name) in xs.iter().enumerate() {
        if *name != format!("x{}", i + 1) {
            return Err(ParseError::new(1, format!("column {} is {name:?}, expected \"x{}\"", i + 1, i + 1)));
        }
    }
    Ok(xs.len())
}

/// Calls `row` with the line number and values of every data row. Returns the number of input
/// columns, or `None` for an empty file.
pub fn for_each_row(path: &Path, layout: Layout, mut row: impl FnMut(u64, &[f64]) -> Result<()>) -> Result<Option<usize>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(|e| ParseError::new(1, e.to_string()))?.clone();
    if header.is_empty() {
        return Ok(None);
    }
    let names: Vec<&str> = header.iter().collect();
    let d = check_header(&names, layout)?;
    let mut record = csv::StringRecord::new();
    let mut values = Vec::with_capacity(names.len());
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ParseError::new(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(ParseError::new(line, format!("expected {} fields, found {}", names.len(), record.len())).into());
        }
        values.clear();
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| ParseError::new(line, format!("column {}: {field:?} is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(ParseError::new(line, format!("column {}: {field:?} is not finite", col + 1)).into());
            }
            values.push(v);
        }
        row(line, &values)?;
    }
    Ok(Some(d))
}

/// Inputs in row-major order and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub d: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TrainingData {
    pub fn read(path: &Path) -> Result<Self> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let d = for_each_row(path, Layout::Training, |_, v| {
            let (last, xs) = v.split_last().expect("header has a y column");
            x.extend_from_slice(xs);
            y.push(*last);
            Ok(())
        })?
        .ok_or_else(|| ParseError::new(1, "empty file"))?;
        Ok(Self { d, x, y })
    }

    /// Range of each input column.
    pub fn widths(&self) -> Vec<f64> {
        (0..self.d)
            .map(|k| {
                let col = self.x.iter().skip(k).step_by(self.d);
                let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
                if hi > lo { hi - lo } else { 0.0 }
            })
            .collect()
    }
}

/// Writes `path` through a temporary file in the same directory, renamed into place on success.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    let mut out = BufWriter::new(tmp);
    body(&mut out)?;
    let tmp = out.into_inner().map_err(|e| e.into_error()).context("flushing output")?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn parse_error(err: anyhow::Error) -> ParseError {
        err.downcast::<ParseError>().unwrap()
    }

    #[test]
    fn reads_training_rows() {
        let f = file("x1,x2,y\n0.5,1,2\n-1, 2e-3 ,3\n");
        let data = TrainingData::read(f.path()).unwrap();
        assert_eq!(data, TrainingData { d: 2, x: vec![0.5, 1.0, -1.0, 2e-3], y: vec![2.0, 3.0] });
        assert_eq!(data.widths(), vec![1.5, 1.0 - 2e-3]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let short = file("x1,y\n1,2\n3\n");
        assert_eq!(parse_error(TrainingData::read(short.path()).unwrap_err()).line, 3);
        let word = file("x1,y\n1,2\n3,4\nfive,6\n");
        let err = parse_error(TrainingData::read(word.path()).unwrap_err());
        assert_eq!(err.line, 4);
        assert!(err.message.contains("five"));
        let nan = file("x1,y\nNaN,1\n");
        assert_eq!(parse_error(TrainingData::read(nan.path()).unwrap_err()).line, 2);
    }

    #[test]
    fn header_is_checked() {
        for bad in ["x1,x2\n1,2\n", "x2,y\n1,2\n", "y\n1\n", "a,b,y\n1,2,3\n"] {
            let f = file(bad);
            assert_eq!(parse_error(TrainingData::read(f.path()).unwrap_err()).line, 1, "{bad}");
        }
        let f = file("x1,x2,x3\n1,2,3\n");
        assert!(for_each_row(f.path(), Layout::Points(2), |_, _| Ok(())).is_err());
        assert_eq!(for_each_row(f.path(), Layout::Points(3), |_, _| Ok(())).unwrap(), Some(3));
    }

    #[test]
    fn empty_files() {
        let f = file("");
        assert_eq!(for_each_row(f.path(), Layout::Points(2), |_, _| Ok(())).unwrap(), None);
        assert!(TrainingData::read(f.path()).is_err());
    }

    #[test]
    fn atomic_write_replaces_or_leaves_target() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, |w| Ok(w.write_all(b"first")?)).unwrap();
        assert!(write_atomic(&path, |w| {
            w.write_all(b"partial")?;
            anyhow::bail!("interrupted")
        })
        .is_err());
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "first");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
