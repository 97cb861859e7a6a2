//! CSV batches: header `class_id,sample_id,e_0,...,e_{p-1}`, one row per
//! sample, rows in any order.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scatter::EmbeddingBatch;

pub fn read_csv_batch(path: impl AsRef<Path>, n: usize, q: usize) -> Result<EmbeddingBatch> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv_batch(file, n, q)
}

pub fn parse_csv_batch(input: impl Read, n: usize, q: usize) -> Result<EmbeddingBatch> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.len() < 3 || &headers[0] != "class_id" || &headers[1] != "sample_id" {
        return Err(Error::BadShape(
            "header must be class_id,sample_id,e_0,...".into(),
        ));
    }
    let p = headers.len() - 2;
    for (k, h) in headers.iter().skip(2).enumerate() {
        if h != format!("e_{k}") {
            return Err(Error::BadShape(format!("column {} is {h:?}, expected \"e_{k}\"", k + 2)));
        }
    }

    let mut data = vec![0.0; n * q * p];
    let mut seen = vec![false; n * q];
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|pos| pos.line()).unwrap_or(0);
        for column in 0..headers.len() {
            if record.get(column).map_or(true, str::is_empty) {
                return Err(Error::MissingCell { line, column });
            }
        }
        if record.len() > headers.len() {
            return Err(Error::BadShape(format!("line {line}: {} cells, expected {}", record.len(), headers.len())));
        }
        let index = |column: usize, bound: usize| -> Result<usize> {
            let v: usize = record[column].parse().map_err(|e| Error::Parse {
                line,
                message: format!("{}: {e}", &headers[column]),
            })?;
            if v >= bound {
                return Err(Error::BadShape(format!("line {line}: {} = {v} not below {bound}", &headers[column])));
            }
            Ok(v)
        };
        let class_id = index(0, n)?;
        let sample_id = index(1, q)?;
        let slot = class_id * q + sample_id;
        if seen[slot] {
            return Err(Error::DuplicatePair { class_id, sample_id });
        }
        seen[slot] = true;
        for k in 0..p {
            data[slot * p + k] = record[k + 2].parse().map_err(|e| Error::Parse {
                line,
                message: format!("e_{k}: {e}"),
            })?;
        }
        rows += 1;
    }
    if rows != n * q {
        return Err(Error::BadShape(format!("{rows} rows, expected n*q = {}", n * q)));
    }
    EmbeddingBatch::new(n, q, p, data, None)
}

/// Writes `batch` in class/sample order; values use Rust's shortest
/// round-trip formatting.
pub fn write_csv_batch(batch: &EmbeddingBatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header = vec!["class_id".to_string(), "sample_id".to_string()];
    header.extend((0..batch.p()).map(|k| format!("e_{k}")));
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..batch.n() {
        for j in 0..batch.q() {
            let mut row = vec![i.to_string(), j.to_string()];
            row.extend(batch.sample(i, j).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}
