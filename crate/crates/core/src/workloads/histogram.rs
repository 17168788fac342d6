use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mechanism::DataVector;

use super::Domain;

/// Column layout of a histogram CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvLayout {
    /// `cell_index,count`
    CellIndex,
    /// `attr1,…,attrk,count`
    Tuple,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::ParseError {
        line,
        message: message.into(),
    }
}

fn parse_usize(field: &str, line: usize, what: &str) -> Result<usize> {
    field.parse::<usize>().map_err(|_| {
        parse_err(
            line,
            format!("{what} {field:?} is not a nonnegative integer"),
        )
    })
}

/// Reads a histogram CSV. The header picks the layout: a first column named
/// `cell_index` with two columns total, else one column per attribute plus a
/// count. Missing cells are zero; repeated cells add up.
pub fn read_histogram<R: Read>(reader: R, domain: &Domain) -> Result<DataVector> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let k = domain.num_attributes();
    let layout = if header.len() == 2 && header.get(0) == Some("cell_index") {
        CsvLayout::CellIndex
    } else if header.len() == k + 1 {
        CsvLayout::Tuple
    } else if header.is_empty() {
        // Empty file: no header, no rows.
        return Ok(DataVector::zeros(domain.size()));
    } else {
        return Err(parse_err(
            1,
            format!(
                "header has {} columns; expected `cell_index,count` or {} attribute columns plus count",
                header.len(),
                k
            ),
        ));
    };

    let d = domain.size();
    let mut counts = vec![0u64; d];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cell = match layout {
            CsvLayout::CellIndex => {
                let i = parse_usize(&rec[0], line, "cell index")?;
                if i >= d {
                    return Err(parse_err(
                        line,
                        format!("cell index {i} out of range 0..{d}"),
                    ));
                }
                i
            }
            CsvLayout::Tuple => {
                let tuple = (0..k)
                    .map(|j| parse_usize(&rec[j], line, "attribute value"))
                    .collect::<Result<Vec<_>>>()?;
                domain
                    .cell_index(&tuple)
                    .map_err(|e| parse_err(line, e.to_string()))?
            }
        };
        let raw = &rec[rec.len() - 1];
        let count: i64 = raw
            .parse()
            .map_err(|_| parse_err(line, format!("count {raw:?} is not an integer")))?;
        if count < 0 {
            return Err(parse_err(line, format!("negative count {count}")));
        }
        counts[cell] = counts[cell]
            .checked_add(count as u64)
            .ok_or_else(|| parse_err(line, "count overflow"))?;
    }
    Ok(DataVector::new(counts))
}

pub fn ingest_histogram(path: impl AsRef<Path>, domain: &Domain) -> Result<DataVector> {
    read_histogram(File::open(path)?, domain)
}

/// Writes the nonzero cells of `x` in the given layout.
pub fn write_histogram<W: Write>(
    writer: W,
    domain: &Domain,
    x: &DataVector,
    layout: CsvLayout,
) -> Result<()> {
    if x.len() != domain.size() {
        return Err(Error::invalid(
            "data vector length does not match the domain",
        ));
    }
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    match layout {
        CsvLayout::CellIndex => w.write_record(["cell_index", "count"]).map_err(csv_err)?,
        CsvLayout::Tuple => {
            let mut h: Vec<&str> = domain.names().iter().map(String::as_str).collect();
            h.push("count");
            w.write_record(h).map_err(csv_err)?;
        }
    }
    for (i, &c) in x.counts().iter().enumerate().filter(|(_, &c)| c > 0) {
        let mut row: Vec<String> = match layout {
            CsvLayout::CellIndex => vec![i.to_string()],
            CsvLayout::Tuple => domain.cell_tuple(i).iter().map(usize::to_string).collect(),
        };
        row.push(c.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_histogram(
    path: impl AsRef<Path>,
    domain: &Domain,
    x: &DataVector,
    layout: CsvLayout,
) -> Result<()> {
    write_histogram(File::create(path)?, domain, x, layout)
}
