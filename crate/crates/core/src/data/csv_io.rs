//! CSV schemas: series values `id,t,value`, predictions
//! `id,step,mean,variance`, ground-truth variances `id,step,variance`, and
//! decisions `id,start,end`. Floats are written in shortest round-trip form.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::forecaster::{ForecastBundle, SeriesWindow};
use crate::risk::SelectionDecision;

use super::SeriesTruth;

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn expect_header(path: &Path, rdr: &mut csv::Reader<File>, want: &[&str]) -> Result<()> {
    let headers = rdr.headers()?;
    if headers.iter().ne(want.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header `{}`, found `{}`",
                want.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(())
}

/// First column of the header, used to tell file kinds apart.
pub fn sniff_header(path: &Path) -> Result<Vec<String>> {
    let mut rdr = open(path)?;
    Ok(rdr.headers()?.iter().map(str::to_owned).collect())
}

/// Rows grouped per id in first-appearance order, each a map from 1-based
/// index to values, with gaps and duplicates rejected.
fn grouped<const N: usize>(path: &Path, want: &[&str]) -> Result<Vec<(String, Vec<[f64; N]>)>> {
    let mut rdr = open(path)?;
    expect_header(path, &mut rdr, want)?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(usize, [f64; N], u64)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != want.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", want.len(), rec.len()),
            ));
        }
        let id = rec[0].to_owned();
        let idx: usize = rec[1].parse().map_err(|_| {
            parse_err(
                path,
                line,
                format!("series `{id}`: bad index `{}`", &rec[1]),
            )
        })?;
        if idx == 0 {
            return Err(parse_err(
                path,
                line,
                format!("series `{id}`: indices start at 1"),
            ));
        }
        let mut vals = [0.0f64; N];
        for (k, v) in vals.iter_mut().enumerate() {
            let field = &rec[2 + k];
            *v = field.parse().map_err(|_| {
                parse_err(path, line, format!("series `{id}`: bad number `{field}`"))
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    line,
                    format!("series `{id}`: non-finite value"),
                ));
            }
        }
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        entry.push((idx, vals, line));
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut entries = rows.remove(&id).expect("id recorded");
        entries.sort_by_key(|e| (e.0, e.2));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(parse_err(
                    path,
                    pair[1].2,
                    format!("series `{id}`: duplicate index {}", pair[1].0),
                ));
            }
        }
        for (expected, e) in (1..).zip(&entries) {
            if e.0 != expected {
                return Err(parse_err(
                    path,
                    e.2,
                    format!("series `{id}`: index {expected} is missing"),
                ));
            }
        }
        out.push((id, entries.into_iter().map(|e| e.1).collect()));
    }
    Ok(out)
}

/// Reads `id,t,value` and splits each series into `past_len` past values and
/// `horizon` future values. Series with exactly `past_len` values get no
/// future.
pub fn read_series_csv(path: &Path, past_len: usize, horizon: usize) -> Result<Vec<SeriesWindow>> {
    if past_len == 0 {
        return Err(Error::invalid("past length must be positive"));
    }
    let groups = grouped::<1>(path, &["id", "t", "value"])?;
    let mut windows = Vec::with_capacity(groups.len());
    for (id, vals) in groups {
        let values: Vec<f64> = vals.into_iter().map(|[v]| v).collect();
        let future = if values.len() == past_len + horizon && horizon > 0 {
            Some(values[past_len..].to_vec())
        } else if values.len() == past_len {
            None
        } else {
            return Err(parse_err(
                path,
                0,
                format!(
                    "series `{id}` has {} values, expected {} or {}",
                    values.len(),
                    past_len,
                    past_len + horizon
                ),
            ));
        };
        let mut past = values;
        past.truncate(past_len);
        windows.push(SeriesWindow { id, past, future });
    }
    Ok(windows)
}

/// Length of the first series in an `id,t,value` file.
pub fn series_length(path: &Path) -> Result<usize> {
    let groups = grouped::<1>(path, &["id", "t", "value"])?;
    groups
        .first()
        .map(|(_, v)| v.len())
        .ok_or_else(|| parse_err(path, 1, "file has no series"))
}

pub fn write_series_csv(path: &Path, windows: &[SeriesWindow]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "id,t,value").map_err(io)?;
    for w in windows {
        let future = w.future.as_deref().unwrap_or(&[]);
        for (t, v) in w.past.iter().chain(future).enumerate() {
            writeln!(out, "{},{},{}", w.id, t + 1, v).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<ForecastBundle>> {
    let groups = grouped::<2>(path, &["id", "step", "mean", "variance"])?;
    let mut bundles = Vec::with_capacity(groups.len());
    let horizon = groups.first().map(|g| g.1.len());
    for (id, rows) in groups {
        if Some(rows.len()) != horizon {
            return Err(parse_err(
                path,
                0,
                format!(
                    "series `{id}` has {} steps, expected {}",
                    rows.len(),
                    horizon.unwrap_or(0)
                ),
            ));
        }
        let means = rows.iter().map(|r| r[0]).collect();
        let variances: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        if variances.iter().any(|&v| v <= 0.0) {
            return Err(parse_err(
                path,
                0,
                format!("series `{id}` has a non-positive variance"),
            ));
        }
        bundles.push(ForecastBundle::new(id, means, variances)?);
    }
    if bundles.is_empty() {
        return Err(parse_err(path, 1, "file has no predictions"));
    }
    Ok(bundles)
}

pub fn write_predictions_csv(path: &Path, bundles: &[ForecastBundle]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "id,step,mean,variance").map_err(io)?;
    for b in bundles {
        for (t, (m, v)) in b.means.iter().zip(&b.variances).enumerate() {
            writeln!(out, "{},{},{},{}", b.id, t + 1, m, v).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn write_truth_csv(path: &Path, truth: &[SeriesTruth]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "id,step,variance").map_err(io)?;
    for s in truth {
        for (t, v) in s.variances.iter().enumerate() {
            writeln!(out, "{},{},{}", s.id, t + 1, v).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn write_decisions_csv(path: &Path, rows: &[(String, SelectionDecision)]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "id,start,end").map_err(io)?;
    for (id, d) in rows {
        writeln!(out, "{},{},{}", id, d.start, d.end).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}
