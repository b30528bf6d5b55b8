//! Row files on disk: NDJSON (one row object per line) or CSV with a
//! `row_id` and a `sensitive` column.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use crate::error::{QbError, Result};
use crate::model::{AttributeValue, Row};
use crate::stores::{read_ndjson, write_ndjson};

fn cell(s: &str) -> AttributeValue {
    s.parse::<i64>().map(AttributeValue::Int).unwrap_or_else(|_| AttributeValue::Str(s.to_string()))
}

fn flag(s: &str, line: usize) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(QbError::Parse {
            line,
            message: format!("`{other}` is not a sensitivity flag"),
        }),
    }
}

pub fn read_csv_rows<R: Read>(r: R) -> Result<Vec<Row>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| QbError::Parse {
            line: 1,
            message: format!("missing `{name}` column"),
        })
    };
    let (id, sens) = (col("row_id")?, col("sensitive")?);
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut row = Row::new(&rec[id], flag(&rec[sens], n + 2)?);
        for (i, h) in headers.iter().enumerate() {
            if i != id && i != sens && !rec[i].is_empty() {
                row.attributes.insert(h.to_string(), cell(&rec[i]));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reads rows by file extension: `.csv` is CSV, anything else NDJSON.
pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let f = BufReader::new(File::open(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv_rows(f)
    } else {
        read_ndjson(f)
    }
}

pub fn write_rows<W: Write>(rows: &[Row], w: W) -> Result<()> {
    write_ndjson(rows, w)
}
