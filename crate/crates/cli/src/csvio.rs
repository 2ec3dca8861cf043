//! Dataset CSV: header `y,z1,…,zp,x@<t0>,…`, one row per observation.
//! Numbers are written in shortest round-trip form.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use pflr_core::bspline::FunctionalSample;
use pflr_core::numerics::Grid;
use pflr_core::pflr::Dataset;

use crate::error::{CliError, CliResult};

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> std::io::Result<()> {
    let mut w = writer(out);
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.p()).map(|j| format!("z{j}")));
    header.extend(data.x().grid().points().iter().map(|t| format!("x@{t}")));
    w.write_record(&header)?;
    let curves = data.x().curves();
    let mut row = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        row.clear();
        row.push(data.y()[i].to_string());
        row.extend(data.z().row(i).iter().map(f64::to_string));
        row.extend(curves.row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn write_dataset_file(data: &Dataset, path: &Path) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_dataset(data, std::io::BufWriter::new(file)).map_err(|e| CliError::io(path, e))
}

pub fn read_dataset_file(path: &Path) -> CliResult<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_dataset(file, path)
}

/// Parses a dataset; `origin` only labels error messages.
pub fn read_dataset<R: Read>(input: R, origin: &Path) -> CliResult<Dataset> {
    let parse_err = |line: u64, message: String| CliError::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();

    if header.get(0).map(str::trim) != Some("y") {
        return Err(parse_err(1, "first column must be y".into()));
    }
    let mut p = 0;
    while header.get(1 + p).map(str::trim) == Some(format!("z{}", p + 1).as_str()) {
        p += 1;
    }
    let mut grid_points = Vec::new();
    for name in header.iter().skip(1 + p) {
        let t = name
            .trim()
            .strip_prefix("x@")
            .and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| {
                parse_err(
                    1,
                    format!("unexpected column {name:?}; expected z<j> or x@<t>"),
                )
            })?;
        grid_points.push(t);
    }
    if p == 0 {
        return Err(parse_err(1, "no z columns".into()));
    }
    let grid = Grid::new(grid_points).map_err(|e| parse_err(1, e.to_string()))?;
    let m = grid.len();

    let mut y = Vec::new();
    let mut z = Vec::new();
    let mut x = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |pos| pos.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |pos| pos.line());
        if record.len() != 1 + p + m {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", 1 + p + m, record.len()),
            ));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(
                    line,
                    format!(
                        "column {}: {field:?} is not a number",
                        header.get(j).unwrap_or("?")
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("column {}: non-finite value", header.get(j).unwrap_or("?")),
                ));
            }
            match j {
                0 => y.push(v),
                j if j <= p => z.push(v),
                _ => x.push(v),
            }
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(parse_err(2, "no observations".into()));
    }
    let curves = DMatrix::from_row_slice(n, m, &x);
    let sample = FunctionalSample::new(grid, curves)?;
    Ok(Dataset::new(
        DMatrix::from_row_slice(n, p, &z),
        DVector::from_vec(y),
        sample,
    )?)
}
