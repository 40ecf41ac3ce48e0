//! Price CSV ingestion and return computation.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;

/// Cells treated as missing prices.
const MISSING: [&str; 5] = ["", "na", "nan", "null", "."];

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Header name of the date column; `None` numbers the rows instead.
    pub date_column: Option<String>,
    /// Price columns to use; `None` takes every column except the date.
    pub price_columns: Option<Vec<String>>,
    /// `ln(p_i / p_{i-1})` when set, otherwise `p_i / p_{i-1} - 1`.
    pub log_returns: bool,
}

impl LoadOptions {
    pub fn log() -> Self {
        Self { log_returns: true, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    /// Label of the later price row of each return.
    pub dates: Vec<String>,
    pub values: DMatrix<f64>,
    pub series_names: Vec<String>,
    /// Price rows removed because a selected column was missing.
    pub dropped_rows: usize,
}

impl ReturnsPanel {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    /// CSV with a `date` column and one column per series.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["date".to_string()];
        header.extend(self.series_names.iter().cloned());
        w.write_record(&header)?;
        for (i, date) in self.dates.iter().enumerate() {
            let mut row = vec![date.clone()];
            row.extend(self.values.row(i).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

pub fn load_returns(path: &Path, opts: &LoadOptions) -> Result<ReturnsPanel> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_returns(file, opts).with_context(|| format!("reading {}", path.display()))
}

/// Keeps the price rows where every selected column parses, then differences
/// consecutive kept rows.
pub fn read_returns<R: Read>(reader: R, opts: &LoadOptions) -> Result<ReturnsPanel> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header.iter().position(|h| h == name).with_context(|| format!("no column named '{name}' in the header"))
    };
    let date_idx = opts.date_column.as_deref().map(find).transpose()?;
    let cols: Vec<usize> = match &opts.price_columns {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&i| Some(i) != date_idx).collect(),
    };
    if cols.is_empty() {
        bail!("no price columns selected");
    }
    if cols.iter().any(|c| Some(*c) == date_idx) {
        bail!("the date column cannot also be a price column");
    }

    let mut dates = Vec::new();
    let mut prices: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    let mut seen = HashSet::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        // header is line 1
        let line = k + 2;
        let date = match date_idx {
            Some(i) => rec.get(i).unwrap_or("").to_string(),
            None => (k + 1).to_string(),
        };
        let mut row = Vec::with_capacity(cols.len());
        for &c in &cols {
            let cell = rec.get(c).unwrap_or("");
            if MISSING.contains(&cell.to_ascii_lowercase().as_str()) {
                break;
            }
            let v: f64 = cell.parse().with_context(|| format!("line {line}: cannot parse '{cell}' in column '{}'", header[c]))?;
            if !v.is_finite() {
                break;
            }
            row.push(v);
        }
        if row.len() < cols.len() {
            dropped += 1;
            continue;
        }
        if opts.log_returns {
            if let Some(j) = row.iter().position(|&v| v <= 0.0) {
                bail!("line {line}: price {} in column '{}' is not positive", row[j], header[cols[j]]);
            }
        }
        if !seen.insert(date.clone()) {
            bail!("line {line}: duplicate date '{date}'");
        }
        dates.push(date);
        prices.push(row);
    }
    if prices.len() < 2 {
        bail!("need at least 2 complete price rows, got {}", prices.len());
    }
    let n = prices.len() - 1;
    let values = DMatrix::from_fn(n, cols.len(), |i, j| {
        let (a, b) = (prices[i][j], prices[i + 1][j]);
        if opts.log_returns {
            (b / a).ln()
        } else {
            b / a - 1.0
        }
    });
    Ok(ReturnsPanel {
        dates: dates.split_off(1),
        values,
        series_names: cols.iter().map(|&c| header[c].clone()).collect(),
        dropped_rows: dropped,
    })
}

/// Reads a plain numeric CSV with a header (an optional leading `date`
/// column is kept as labels) as returns, without differencing.
pub fn read_return_matrix<R: Read>(reader: R) -> Result<ReturnsPanel> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let dated = header.first().is_some_and(|h| h.eq_ignore_ascii_case("date"));
    let skip = usize::from(dated);
    let mut dates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        dates.push(if dated { rec.get(0).unwrap_or("").to_string() } else { (k + 1).to_string() });
        let row = rec
            .iter()
            .skip(skip)
            .map(|c| c.parse::<f64>().with_context(|| format!("line {}: cannot parse '{c}'", k + 2)))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() - skip {
            bail!("line {}: expected {} values", k + 2, header.len() - skip);
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        bail!("need at least 2 rows");
    }
    let d = header.len() - skip;
    Ok(ReturnsPanel {
        dates,
        values: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
        series_names: header[skip..].to_vec(),
        dropped_rows: 0,
    })
}
