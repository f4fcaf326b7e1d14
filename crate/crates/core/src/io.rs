//! CSV datasets (`y,z1,...,zk`) and JSON output.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Dataset;

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::data(line, format!("column '{column}': '{cell}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::data(line, format!("column '{column}': non-finite value '{cell}'")));
    }
    Ok(v)
}

fn check_header(header: &csv::StringRecord, want_y: bool) -> Result<usize> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let offset = usize::from(want_y);
    if want_y && names.first() != Some(&"y") {
        return Err(Error::data(1, "header must start with 'y'"));
    }
    let k = names.len() - offset.min(names.len());
    if k == 0 {
        return Err(Error::data(1, "header has no predictor columns z1..zk"));
    }
    for (j, name) in names[offset..].iter().enumerate() {
        if *name != format!("z{}", j + 1) {
            return Err(Error::data(1, format!("expected column 'z{}', found '{name}'", j + 1)));
        }
    }
    Ok(k)
}

/// Parses a dataset from CSV text with header `y,z1,...,zk`.
pub fn read_csv_from<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::data(1, e.to_string()))?.clone();
    let k = check_header(&header, true)?;
    let mut y = Vec::new();
    let mut z = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(e.position().map(|p| p.line() as usize), e.to_string()))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != k + 1 {
            return Err(Error::data(line, format!("expected {} columns, found {}", k + 1, record.len())));
        }
        y.push(parse_cell(&record[0], line, "y")?);
        for j in 0..k {
            z.push(parse_cell(&record[j + 1], line, &header[j + 1])?);
        }
    }
    if y.is_empty() {
        return Err(Error::data(None, "file has no data rows"));
    }
    Dataset::new(y, z, k)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::data(None, format!("cannot open {}: {e}", path.display())))?;
    read_csv_from(file)
}

/// Reads only the predictor columns of a CSV; a leading `y` column is
/// allowed and ignored. Returns row-major `z` and `k`.
pub fn read_predictors(path: impl AsRef<Path>) -> Result<(Vec<f64>, usize)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::data(None, format!("cannot open {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let header = rdr.headers().map_err(|e| Error::data(1, e.to_string()))?.clone();
    let has_y = header.get(0).map(str::trim) == Some("y");
    let k = check_header(&header, has_y)?;
    let offset = usize::from(has_y);
    let mut z = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(e.position().map(|p| p.line() as usize), e.to_string()))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != k + offset {
            return Err(Error::data(line, format!("expected {} columns, found {}", k + offset, record.len())));
        }
        for j in 0..k {
            z.push(parse_cell(&record[j + offset], line, &header[j + offset])?);
        }
    }
    Ok((z, k))
}

pub fn write_csv_to<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.k()).map(|j| format!("z{j}")));
    w.write_record(&header).map_err(csv_io)?;
    for i in 0..data.len() {
        let mut row = vec![data.y()[i].to_string()];
        row.extend(data.z(i).iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv_to(data, BufWriter::new(File::create(path)?))
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes rows of already formatted cells as CSV.
pub fn write_table(header: &[&str], rows: &[Vec<String>], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header).map_err(csv_io)?;
    for r in rows {
        w.write_record(r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_parse() {
        let d = read_csv_from("y,z1\n1.5,2.0\n".as_bytes()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.k(), 1);
        assert_eq!(d.y(), &[1.5]);
        assert_eq!(d.z(0), &[2.0]);
    }

    #[test]
    fn malformed_cell_names_line() {
        let err = read_csv_from("y,z1\n1.5,abc\n".as_bytes()).unwrap_err();
        match err {
            Error::Data { line: Some(2), .. } => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn rejects_non_finite_and_short_rows() {
        assert!(matches!(
            read_csv_from("y,z1\n1,2\nNaN,1\n".as_bytes()),
            Err(Error::Data { line: Some(3), .. })
        ));
        assert!(matches!(
            read_csv_from("y,z1,z2\n1,2\n".as_bytes()),
            Err(Error::Data { line: Some(2), .. })
        ));
        assert!(read_csv_from("y,x1\n1,2\n".as_bytes()).is_err());
        assert!(read_csv_from("z1,y\n1,2\n".as_bytes()).is_err());
        assert!(read_csv_from("y,z1\n".as_bytes()).is_err());
    }

    #[test]
    fn round_trip() {
        let d = Dataset::new(vec![0.1, -2.5e-17], vec![1.0 / 3.0, 2.0, -7.25, 1e300], 2).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&d, &mut buf).unwrap();
        let back = read_csv_from(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }
}
