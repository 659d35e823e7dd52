//! CSV and key-value file formats.
//!
//! Numbers are written in the shortest form that parses back to the same
//! `f64`, so every format survives a write, read, write cycle byte for byte.

use std::io::{BufRead, BufReader, Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SarError};
use crate::hvb::AcceptanceRecord;
use crate::model::Dataset;
use crate::model_select::{DicReport, SummaryRow};
use crate::spatial::SpatialWeights;
use crate::variational::{Trace, TraceRow, VariationalParams};

/// Shortest round-tripping text for `v`, in exponent form for very large
/// or very small magnitudes.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse_f64(field: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| SarError::Format(format!("line {line}, column {column}: '{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(SarError::Format(format!("line {line}, column {column}: value must be finite")));
    }
    Ok(v)
}

fn parse_usize(field: &str, line: u64, column: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| SarError::Format(format!("line {line}, column {column}: '{field}' is not a non-negative integer")))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(input)
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(out)
}

fn headers<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>> {
    Ok(rdr.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

fn expect_headers<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let found = headers(rdr)?;
    if found != expected {
        return Err(SarError::Format(format!(
            "expected header '{}', found '{}'",
            expected.join(","),
            found.join(",")
        )));
    }
    Ok(())
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// A wide numeric table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn write_table<W: Write>(out: W, table: &Table) -> Result<()> {
    let mut w = writer(out);
    w.write_record(&table.names)?;
    for row in &table.rows {
        if row.len() != table.names.len() {
            return Err(SarError::mismatch("table row width", table.names.len(), row.len()));
        }
        w.write_record(row.iter().map(|v| format_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut rdr = reader(input);
    let names = headers(&mut rdr)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        rows.push(
            rec.iter()
                .zip(&names)
                .map(|(f, name)| parse_f64(f, line, name))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(Table { names, rows })
}

/// Writes `y,x1..xr,xs1..xsq`; intercept columns are implicit and a missing
/// response is an empty cell.
pub fn write_dataset<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let r = data.x.ncols() - 1;
    let q = data.xstar.ncols() - 1;
    let mut w = writer(out);
    let mut header = vec!["y".to_string()];
    header.extend((1..=r).map(|j| format!("x{j}")));
    header.extend((1..=q).map(|j| format!("xs{j}")));
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![data.y[i].map(format_f64).unwrap_or_default()];
        rec.extend((1..=r).map(|j| format_f64(data.x[(i, j)])));
        rec.extend((1..=q).map(|j| format_f64(data.xstar[(i, j)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the format of [`write_dataset`] and attaches `weights`.
pub fn read_dataset<R: Read>(input: R, weights: Arc<SpatialWeights>) -> Result<Dataset> {
    let mut rdr = reader(input);
    let names = headers(&mut rdr)?;
    if names.first().map(String::as_str) != Some("y") {
        return Err(SarError::Format("the first column must be 'y'".into()));
    }
    let mut x_cols = Vec::new();
    let mut xs_cols = Vec::new();
    for (k, name) in names.iter().enumerate().skip(1) {
        if let Some(idx) = name.strip_prefix("xs") {
            expect_index(idx, xs_cols.len() + 1, name)?;
            xs_cols.push(k);
        } else if let Some(idx) = name.strip_prefix('x') {
            if !xs_cols.is_empty() {
                return Err(SarError::Format(format!("column '{name}' follows the missingness covariates")));
            }
            expect_index(idx, x_cols.len() + 1, name)?;
            x_cols.push(k);
        } else {
            return Err(SarError::Format(format!("unrecognised column '{name}'")));
        }
    }
    let mut y = Vec::new();
    let mut x_vals = Vec::new();
    let mut xs_vals = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let cell = rec[0].trim();
        y.push(if cell.is_empty() { None } else { Some(parse_f64(cell, line, "y")?) });
        x_vals.push(1.0);
        for &k in &x_cols {
            x_vals.push(parse_f64(&rec[k], line, &names[k])?);
        }
        xs_vals.push(1.0);
        for &k in &xs_cols {
            xs_vals.push(parse_f64(&rec[k], line, &names[k])?);
        }
    }
    let n = y.len();
    let x = DMatrix::from_row_slice(n, x_cols.len() + 1, &x_vals);
    let xstar = DMatrix::from_row_slice(n, xs_cols.len() + 1, &xs_vals);
    Dataset::new(y, x, xstar, weights)
}

fn expect_index(idx: &str, expected: usize, name: &str) -> Result<()> {
    if idx.parse::<usize>().ok() != Some(expected) {
        return Err(SarError::Format(format!(
            "column '{name}' out of order; expected index {expected}"
        )));
    }
    Ok(())
}

/// Writes nonzero weights as `i,j,w` in row-major order.
pub fn write_weights<W: Write>(out: W, weights: &SpatialWeights) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["i", "j", "w"])?;
    for (i, j, v) in weights.entries() {
        w.write_record([i.to_string(), j.to_string(), format_f64(v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `i,j,w` triplets for an `n`-site matrix. With `row_standardize`,
/// rows that already sum to one are kept verbatim and the rest rescaled.
pub fn read_weights<R: Read>(input: R, n: usize, row_standardize: bool) -> Result<SpatialWeights> {
    let mut rdr = reader(input);
    expect_headers(&mut rdr, &["i", "j", "w"])?;
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 3 {
            return Err(SarError::Format(format!("line {line}: expected 3 fields")));
        }
        entries.push((
            parse_usize(&rec[0], line, "i")?,
            parse_usize(&rec[1], line, "j")?,
            parse_f64(&rec[2], line, "w")?,
        ));
    }
    let raw = SpatialWeights::from_entries(n, entries.iter().copied(), false).map_err(to_format)?;
    if !row_standardize {
        return Ok(raw);
    }
    if raw.rows_sum_to_one() {
        raw.into_row_standardized()
    } else {
        SpatialWeights::from_entries(n, entries, true).map_err(to_format)
    }
}

fn to_format(e: SarError) -> SarError {
    match e {
        SarError::Argument(m) => SarError::Format(m),
        other => other,
    }
}

/// Writes a trace in long form `iter,param_name,value`.
pub fn write_trace<W: Write>(out: W, trace: &Trace) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["iter", "param_name", "value"])?;
    for row in &trace.rows {
        for (name, v) in trace.names.iter().zip(&row.values) {
            w.write_record([row.iter.to_string(), name.clone(), format_f64(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Trace> {
    let mut rdr = reader(input);
    expect_headers(&mut rdr, &["iter", "param_name", "value"])?;
    let mut names: Vec<String> = Vec::new();
    let mut rows: Vec<TraceRow> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let iter = parse_usize(&rec[0], line, "iter")?;
        let name = rec[1].to_string();
        let value = parse_f64(&rec[2], line, "value")?;
        if rows.last().is_none_or(|r| r.iter != iter) {
            rows.push(TraceRow { iter, values: Vec::new() });
        }
        let first_row = rows.len() == 1;
        let row = rows.last_mut().expect("row just pushed");
        let k = row.values.len();
        if first_row {
            names.push(name);
        } else if names.get(k) != Some(&name) {
            return Err(SarError::Format(format!("line {line}: unexpected parameter '{name}'")));
        }
        row.values.push(value);
    }
    if let Some(bad) = rows.iter().find(|r| r.values.len() != names.len()) {
        return Err(SarError::Format(format!("iteration {} has an incomplete row", bad.iter)));
    }
    Ok(Trace { names, rows })
}

/// Writes `lambda` as `block,i,j,value` rows for `mu`, the lower trapezoid
/// of `B`, and `d`.
pub fn write_lambda<W: Write>(out: W, lambda: &VariationalParams) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["block", "i", "j", "value"])?;
    for (i, v) in lambda.mu.iter().enumerate() {
        w.write_record(["mu".into(), i.to_string(), "0".into(), format_f64(*v)])?;
    }
    for j in 0..lambda.n_factors() {
        for i in j..lambda.dim() {
            w.write_record(["B".into(), i.to_string(), j.to_string(), format_f64(lambda.b[(i, j)])])?;
        }
    }
    for (i, v) in lambda.d.iter().enumerate() {
        w.write_record(["d".into(), i.to_string(), "0".into(), format_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_lambda<R: Read>(input: R) -> Result<VariationalParams> {
    let mut rdr = reader(input);
    expect_headers(&mut rdr, &["block", "i", "j", "value"])?;
    let mut mu = Vec::new();
    let mut b = Vec::new();
    let mut d = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let i = parse_usize(&rec[1], line, "i")?;
        let j = parse_usize(&rec[2], line, "j")?;
        let v = parse_f64(&rec[3], line, "value")?;
        match &rec[0] {
            "mu" => mu.push((i, v)),
            "B" => b.push((i, j, v)),
            "d" => d.push((i, v)),
            other => return Err(SarError::Format(format!("line {line}: unknown block '{other}'"))),
        }
    }
    let s = mu.len();
    let dense = |entries: Vec<(usize, f64)>, what: &str| -> Result<DVector<f64>> {
        let mut v = DVector::zeros(s);
        for (k, (i, x)) in entries.into_iter().enumerate() {
            if i != k {
                return Err(SarError::Format(format!("{what} entries must be listed in order")));
            }
            v[i] = x;
        }
        Ok(v)
    };
    if d.len() != s {
        return Err(SarError::Format(format!("expected {s} d entries, found {}", d.len())));
    }
    let p = b.iter().map(|t| t.1 + 1).max().unwrap_or(0);
    if b.len() != crate::variational::vech_len(s, p) {
        return Err(SarError::Format("loading entries do not form a lower trapezoid".into()));
    }
    let mut bm = DMatrix::zeros(s, p);
    for (i, j, v) in b {
        if i < j || i >= s {
            return Err(SarError::Format(format!("loading entry ({i}, {j}) outside the lower trapezoid")));
        }
        bm[(i, j)] = v;
    }
    VariationalParams::new(dense(mu, "mu")?, bm, dense(d, "d")?).map_err(to_format)
}

pub fn write_acceptance<W: Write>(out: W, records: &[AcceptanceRecord]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["iter", "block", "accepts", "proposals"])?;
    for r in records {
        w.write_record([r.iter, r.block, r.accepts, r.proposals].map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_acceptance<R: Read>(input: R) -> Result<Vec<AcceptanceRecord>> {
    let mut rdr = reader(input);
    expect_headers(&mut rdr, &["iter", "block", "accepts", "proposals"])?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = line_of(&rec);
            Ok(AcceptanceRecord {
                iter: parse_usize(&rec[0], line, "iter")?,
                block: parse_usize(&rec[1], line, "block")?,
                accepts: parse_usize(&rec[2], line, "accepts")?,
                proposals: parse_usize(&rec[3], line, "proposals")?,
            })
        })
        .collect()
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["param", "mean", "q2.5", "q97.5"])?;
    for r in rows {
        w.write_record([r.name.clone(), format_f64(r.mean), format_f64(r.lower), format_f64(r.upper)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut rdr = reader(input);
    expect_headers(&mut rdr, &["param", "mean", "q2.5", "q97.5"])?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = line_of(&rec);
            Ok(SummaryRow {
                name: rec[0].to_string(),
                mean: parse_f64(&rec[1], line, "mean")?,
                lower: parse_f64(&rec[2], line, "q2.5")?,
                upper: parse_f64(&rec[3], line, "q97.5")?,
            })
        })
        .collect()
}

/// One line of a model-comparison report.
#[derive(Debug, Clone, PartialEq)]
pub struct DicRow {
    pub model: String,
    pub report: DicReport,
}

pub fn write_dic<W: Write>(out: W, rows: &[DicRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["model", "dic1", "dic2", "dic5", "n_draws"])?;
    let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.model.clone(),
            opt(r.report.dic1),
            opt(r.report.dic2),
            opt(r.report.dic5),
            r.report.n_draws.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dic<R: Read>(input: R) -> Result<Vec<DicRow>> {
    let mut rdr = reader(input);
    expect_headers(&mut rdr, &["model", "dic1", "dic2", "dic5", "n_draws"])?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = line_of(&rec);
            let opt = |k: usize, name: &str| -> Result<Option<f64>> {
                let f = rec[k].trim();
                if f.is_empty() { Ok(None) } else { parse_f64(f, line, name).map(Some) }
            };
            Ok(DicRow {
                model: rec[0].to_string(),
                report: DicReport {
                    dic1: opt(1, "dic1")?,
                    dic2: opt(2, "dic2")?,
                    dic5: opt(3, "dic5")?,
                    n_draws: parse_usize(&rec[4], line, "n_draws")?,
                },
            })
        })
        .collect()
}

/// Ground truth kept beside an amputated dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub site: usize,
    pub missing: bool,
    pub true_y: f64,
}

pub fn write_truth<W: Write>(out: W, rows: &[TruthRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["i", "m", "true_y"])?;
    for r in rows {
        w.write_record([r.site.to_string(), (r.missing as u8).to_string(), format_f64(r.true_y)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth<R: Read>(input: R) -> Result<Vec<TruthRow>> {
    let mut rdr = reader(input);
    expect_headers(&mut rdr, &["i", "m", "true_y"])?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = line_of(&rec);
            let missing = match rec[1].trim() {
                "0" => false,
                "1" => true,
                other => return Err(SarError::Format(format!("line {line}: indicator '{other}' must be 0 or 1"))),
            };
            Ok(TruthRow {
                site: parse_usize(&rec[0], line, "i")?,
                missing,
                true_y: parse_f64(&rec[2], line, "true_y")?,
            })
        })
        .collect()
}

/// Writes `(site, value)` pairs under the header `i,<value_name>`.
pub fn write_site_values<W: Write>(out: W, value_name: &str, rows: &[(usize, f64)]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["i", value_name])?;
    for (i, v) in rows {
        w.write_record([i.to_string(), format_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_site_values<R: Read>(input: R) -> Result<(String, Vec<(usize, f64)>)> {
    let mut rdr = reader(input);
    let names = headers(&mut rdr)?;
    if names.len() != 2 || names[0] != "i" {
        return Err(SarError::Format("expected header 'i,<value>'".into()));
    }
    let rows = rdr
        .records()
        .map(|rec| {
            let rec = rec?;
            let line = line_of(&rec);
            Ok((parse_usize(&rec[0], line, "i")?, parse_f64(&rec[1], line, &names[1])?))
        })
        .collect::<Result<_>>()?;
    Ok((names[1].clone(), rows))
}

/// Writes `key=value` lines in the given order.
pub fn write_key_values<W: Write>(mut out: W, pairs: &[(String, String)]) -> Result<()> {
    for (k, v) in pairs {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(SarError::Format(format!("key '{k}' cannot be written as a single line")));
        }
        writeln!(out, "{k}={v}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `key=value` lines, skipping blank lines and `#` comments.
pub fn read_key_values<R: Read>(input: R) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (k, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| SarError::Format(format!("line {}: expected key=value", k + 1)))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}
