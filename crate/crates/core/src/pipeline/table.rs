//! Gridded series on disk: CSV with a header row of location labels and one
//! row per time whose first cell is the time label. Lines starting with `#`
//! are comments.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridSeries {
    pub times: Vec<String>,
    pub locations: Vec<String>,
    /// `T × n_z`, one row per time.
    pub values: DMatrix<f64>,
}

impl GridSeries {
    pub fn new(times: Vec<String>, locations: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != (times.len(), locations.len()) {
            return Err(Error::dims(
                "grid series",
                format!("{} x {}", times.len(), locations.len()),
                format!("{:?}", values.shape()),
            ));
        }
        Ok(GridSeries { times, locations, values })
    }

    /// Series with numeric time labels `0..T` and locations `prefix0..`.
    pub fn from_values(values: DMatrix<f64>, prefix: &str) -> Self {
        GridSeries {
            times: (0..values.nrows()).map(|t| t.to_string()).collect(),
            locations: (0..values.ncols()).map(|l| format!("{prefix}{l}")).collect(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `n_z × T` view used by the models (columns are times).
    pub fn by_time(&self) -> DMatrix<f64> {
        self.values.transpose()
    }
}

fn parse_err(path: &Path, row: usize, column: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        reason: reason.into(),
    }
}

/// Reads a grid CSV. Rows and columns in errors are 1-based file lines and
/// fields.
pub fn load_csv(path: &Path) -> Result<GridSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut header: Option<Vec<String>> = None;
    let mut times = Vec::new();
    let mut seen = HashSet::new();
    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let Some(head) = &header else {
            if rec.len() < 2 {
                return Err(parse_err(path, line, rec.len(), "header needs a time column and at least one location"));
            }
            header = Some(rec.iter().skip(1).map(str::to_string).collect());
            continue;
        };
        if rec.len() != head.len() + 1 {
            return Err(parse_err(
                path,
                line,
                rec.len(),
                format!("ragged row: {} fields, expected {}", rec.len(), head.len() + 1),
            ));
        }
        let label = rec[0].to_string();
        if !seen.insert(label.clone()) {
            return Err(parse_err(path, line, 1, format!("duplicate time label {label:?}")));
        }
        for (c, s) in rec.iter().enumerate().skip(1) {
            let v: f64 = s
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(path, line, c + 1, format!("non-numeric or missing cell {s:?}")))?;
            cells.push(v);
        }
        times.push(label);
    }
    let locations = header.ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        reason: "no header row".into(),
    })?;
    let values = DMatrix::from_row_slice(times.len(), locations.len(), &cells);
    Ok(GridSeries { times, locations, values })
}

/// Writes a grid CSV, preceded by `# `-prefixed comment lines.
pub fn save_csv(path: &Path, series: &GridSeries, comments: &[String]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    (|| {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "time,{}", series.locations.join(","))?;
        for (t, label) in series.times.iter().enumerate() {
            write!(w, "{label}")?;
            for v in series.values.row(t).iter() {
                // Display is the shortest exact representation
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Per-column affine scaling `(v − mean) / sd`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Scaling {
    /// Statistics of the first `train_len` rows (sample sd, `n − 1`).
    pub fn fit(series: &GridSeries, train_len: usize) -> Result<Self> {
        if train_len < 2 || train_len > series.len() {
            return Err(Error::InvalidConfig(format!(
                "standardization needs 2..={} training rows, got {train_len}",
                series.len()
            )));
        }
        let train = series.values.rows(0, train_len);
        let mut mean = Vec::with_capacity(series.locations.len());
        let mut sd = Vec::with_capacity(series.locations.len());
        for (c, col) in train.column_iter().enumerate() {
            let m = col.mean();
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (train_len - 1) as f64;
            if !(var > 0.0) {
                return Err(Error::ZeroVariance(series.locations[c].clone()));
            }
            mean.push(m);
            sd.push(var.sqrt());
        }
        Ok(Scaling { mean, sd })
    }

    pub fn identity(n: usize) -> Self {
        Scaling {
            mean: vec![0.0; n],
            sd: vec![1.0; n],
        }
    }

    pub fn apply(&self, series: &GridSeries) -> Result<GridSeries> {
        self.check(series)?;
        let mut out = series.clone();
        for (c, mut col) in out.values.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - self.mean[c]) / self.sd[c]);
        }
        Ok(out)
    }

    pub fn invert(&self, series: &GridSeries) -> Result<GridSeries> {
        self.check(series)?;
        let mut out = series.clone();
        for (c, mut col) in out.values.column_iter_mut().enumerate() {
            col.apply(|v| *v = *v * self.sd[c] + self.mean[c]);
        }
        Ok(out)
    }

    fn check(&self, series: &GridSeries) -> Result<()> {
        if series.locations.len() != self.mean.len() {
            return Err(Error::dims("scaling", self.mean.len(), series.locations.len()));
        }
        Ok(())
    }
}

/// Fits the scaling on the first `train_len` rows and applies it to all rows.
pub fn standardize(series: &GridSeries, train_len: usize) -> Result<(GridSeries, Scaling)> {
    let s = Scaling::fit(series, train_len)?;
    Ok((s.apply(series)?, s))
}
