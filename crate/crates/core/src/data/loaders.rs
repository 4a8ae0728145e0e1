use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{fit_unit_range, Dataset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let unreadable = |source| Error::DataUnreadable {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(unreadable)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(unreadable)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            needed: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Loads an IDX image/label pair (optionally gzipped). Pixels are divided by
/// 255 and images flattened row-major.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_maybe_gz(images)?;
    check_magic(&img, IMAGES_MAGIC, images)?;
    let n = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let dim = rows * cols;
    let needed = 16 + n * dim;
    if img.len() < needed {
        return Err(Error::Truncated {
            path: images.to_path_buf(),
            needed,
            found: img.len(),
        });
    }

    let lab = read_maybe_gz(labels)?;
    check_magic(&lab, LABELS_MAGIC, labels)?;
    let m = be_u32(&lab, 4, labels)? as usize;
    if m != n {
        return Err(Error::CountMismatch { images: n, labels: m });
    }
    if lab.len() < 8 + m {
        return Err(Error::Truncated {
            path: labels.to_path_buf(),
            needed: 8 + m,
            found: lab.len(),
        });
    }

    let data: Vec<f64> = img[16..needed].iter().map(|&p| p as f64 / 255.0).collect();
    let label_vec: Vec<usize> = lab[8..8 + m].iter().map(|&l| l as usize).collect();
    Dataset::new(
        Matrix::from_vec(n, dim, data)?,
        Some(label_vec),
        format!("idx {} ({n}x{rows}x{cols})", images.display()),
    )
}

fn parse_number(s: &str, row: usize, column: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::NonNumeric {
            row,
            column,
            value: s.to_string(),
        })
}

/// Loads a comma-separated numeric table. A first row that does not parse as
/// numbers is taken as a header. When `label_column` is given, that column is
/// removed and parsed as a non-negative integer class. Values outside `[0, 1]`
/// are rescaled jointly into that range.
pub fn load_csv(path: &Path, label_column: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?);
    }
    let is_header = rows
        .first()
        .is_some_and(|r| r.iter().any(|f| f.trim().parse::<f64>().is_err()));
    let body = if is_header { &rows[1..] } else { &rows[..] };
    let Some(first) = body.first() else {
        return Err(Error::EmptyInput("csv table"));
    };
    let width = first.len();
    if let Some(c) = label_column {
        if c >= width {
            return Err(Error::config(
                "data.label_column",
                format!("column {c} does not exist in a table of width {width}"),
            ));
        }
    }
    let dim = width - label_column.map_or(0, |_| 1);
    let mut data = Vec::with_capacity(body.len() * dim);
    let mut labels = Vec::new();
    for (i, rec) in body.iter().enumerate() {
        let row = i + is_header as usize;
        if rec.len() != width {
            return Err(Error::RaggedRows {
                row,
                expected: width,
                got: rec.len(),
            });
        }
        for (c, f) in rec.iter().enumerate() {
            if Some(c) == label_column {
                let v = parse_number(f, row, c)?;
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::NonNumeric {
                        row,
                        column: c,
                        value: f.to_string(),
                    });
                }
                labels.push(v as usize);
            } else {
                data.push(parse_number(f, row, c)?);
            }
        }
    }
    fit_unit_range(&mut data);
    Dataset::new(
        Matrix::from_vec(body.len(), dim, data)?,
        label_column.map(|_| labels),
        format!("csv {}", path.display()),
    )
}

/// Writes samples (and labels, as the last column) without a header.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    for (i, row) in dataset.samples().iter_rows().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(l) = dataset.labels() {
            fields.push(l[i].to_string());
        }
        w.write_record(&fields)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
