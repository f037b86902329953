//! CSV readers/writers and serde helpers for matrices.
//!
//! CSV dialect: comma separated, header row, `.` decimal, no quoting.
//! Floats are written with 17 significant digits so files round-trip
//! bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::stats::TimeSeries;

/// Format a float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write a `T x N` matrix as CSV with `dim_0,dim_1,...` headers.
pub fn write_matrix_csv(path: &Path, data: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..data.ncols()).map(|j| format!("dim_{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for row in data.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_float(v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Write a time series observation file.
pub fn write_series_csv(path: &Path, series: &TimeSeries) -> Result<()> {
    write_matrix_csv(path, &series.data().to_owned())
}

/// Read a numeric CSV (any numeric columns, one header row) into a matrix.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(File::open(path)?));
    let width = reader.headers()?.len();
    if width == 0 {
        return Err(Error::Data(format!("{}: empty header row", path.display())));
    }
    let mut values = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != width {
            return Err(Error::Data(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                rows + 2,
                record.len(),
                width
            )));
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: cannot parse '{}' as a number",
                    path.display(),
                    field
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, width), values)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))
}

/// Read an observation CSV into a [`TimeSeries`].
pub fn read_series_csv(path: &Path) -> Result<TimeSeries> {
    TimeSeries::new(read_matrix_csv(path)?)
}

/// Write hidden/discrete state labels with a `state` header.
pub fn write_states_csv(path: &Path, states: &[usize]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "state")?;
    for s in states {
        writeln!(out, "{s}")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a state label CSV written by [`write_states_csv`].
pub fn read_states_csv(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(File::open(path)?));
    let mut states = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = record
            .get(0)
            .ok_or_else(|| Error::Data(format!("{}: empty row", path.display())))?;
        let s: usize = field.trim().parse().map_err(|_| {
            Error::Data(format!(
                "{}: cannot parse '{}' as a state index",
                path.display(),
                field
            ))
        })?;
        states.push(s);
    }
    Ok(states)
}

/// Serde representation of dense matrices: row-major with explicit shape.
pub mod serde_mat {
    use ndarray::Array2;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct MatRepr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let repr = MatRepr {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().copied().collect(),
        };
        repr.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let repr = MatRepr::deserialize(d)?;
        Array2::from_shape_vec((repr.rows, repr.cols), repr.data)
            .map_err(|e| D::Error::custom(format!("bad matrix shape: {e}")))
    }
}

/// Serde representation of vectors as plain JSON arrays.
pub mod serde_vec {
    use ndarray::Array1;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.to_vec().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        Ok(Array1::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
