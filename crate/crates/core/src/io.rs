//! On-disk formats: pool CSV, trace JSONL, QoI CSV, report JSON, plot CSV
//! and phase-field snapshots.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::evaluation::{ModelOutput, OutputPool, RowStatus};
use crate::phasefield::{PhaseFieldParams, Snapshot};
use crate::sample::SamplePool;
use crate::selection::{ConvergenceReport, PolicyCurve, SelectionTrace};
use crate::wasserstein::WassersteinVector;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl ToString) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(file_err(path))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    let mut s = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(file_err(path))?;
    Ok(s)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// `path` with `suffix` appended to the file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn pool_to_csv(pool: &SamplePool) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..pool.dim()).map(|j| format!("x{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in pool.rows() {
        push_row(&mut out, row);
        out.push('\n');
    }
    out
}

fn push_row(out: &mut String, row: &[f64]) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        write!(out, "{v}").unwrap();
    }
}

pub fn write_pool(path: &Path, pool: &SamplePool) -> Result<(), IoError> {
    write_text(path, &pool_to_csv(pool))
}

pub fn read_pool(path: &Path) -> Result<SamplePool, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(fs::File::open(path).map_err(file_err(path))?);
    let header = reader.headers().map_err(|e| parse_err(path, 1, e))?.clone();
    let d = header.len();
    for (j, h) in header.iter().enumerate() {
        if h.trim() != format!("x{j}") {
            return Err(parse_err(path, 1, format!("expected column x{j}, found {h:?}")));
        }
    }
    let mut data = Vec::new();
    let mut n = 0;
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, k + 2, e))?;
        if rec.len() != d {
            return Err(parse_err(path, k + 2, format!("expected {d} fields, found {}", rec.len())));
        }
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|e| parse_err(path, k + 2, e))?;
            data.push(v);
        }
        n += 1;
    }
    SamplePool::from_flat(n, d, data).map_err(|e| parse_err(path, 0, e))
}

/// One line of a trace file after the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub iter: usize,
    pub picked: Vec<usize>,
    pub w: Vec<f64>,
    pub manhattan: f64,
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub meta: serde_json::Value,
    pub lines: Vec<TraceLine>,
}

impl TraceFile {
    pub fn order(&self) -> Vec<usize> {
        self.lines.iter().flat_map(|l| l.picked.iter().copied()).collect()
    }

    pub fn pool_hash(&self) -> Option<&str> {
        self.meta.get("pool_hash").and_then(|v| v.as_str())
    }

    pub fn label(&self) -> Option<&str> {
        self.meta.get("policy").and_then(|v| v.as_str())
    }
}

/// Meta header line followed by one object per iteration. Wall times are
/// written only when `timing` is set, so untimed files are reproducible.
pub fn trace_to_jsonl(meta: &serde_json::Value, trace: &SelectionTrace, timing: bool) -> String {
    let mut out = serde_json::to_string(&json!({ "meta": meta })).expect("serializable");
    out.push('\n');
    for e in &trace.events {
        let line = TraceLine {
            iter: e.iter,
            picked: e.picked.clone(),
            w: e.w.w.clone(),
            manhattan: e.w.manhattan,
            elapsed_ms: timing.then_some(e.elapsed.as_secs_f64() * 1e3),
        };
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn read_trace(path: &Path) -> Result<TraceFile, IoError> {
    let file = fs::File::open(path).map_err(file_err(path))?;
    let mut meta = serde_json::Value::Null;
    let mut lines = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(file_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        if k == 0 {
            if let Ok(h) = serde_json::from_str::<TraceHeader>(&line) {
                meta = h.meta;
                continue;
            }
        }
        lines.push(serde_json::from_str(&line).map_err(|e| parse_err(path, k + 1, e))?);
    }
    Ok(TraceFile { meta, lines })
}

impl From<&TraceLine> for WassersteinVector {
    fn from(l: &TraceLine) -> Self {
        WassersteinVector::new(l.w.clone())
    }
}

/// `sample_id,<names>,flags`, one row per evaluated sample in index order.
/// Failed rows carry `NaN` values and a `failed: <reason>` flag.
pub fn outputs_to_csv(outputs: &OutputPool) -> String {
    let mut out = String::from("sample_id,");
    for name in outputs.names() {
        out.push_str(name);
        out.push(',');
    }
    out.push_str("flags\n");
    let q = outputs.names().len();
    for (i, row) in outputs.rows().iter().enumerate() {
        let (values, flags) = match row {
            RowStatus::Pending => continue,
            RowStatus::Done(o) => (o.values.clone(), o.flags.clone()),
            RowStatus::Failed(msg) => (vec![f64::NAN; q], format!("failed: {msg}")),
        };
        write!(out, "{i},").unwrap();
        push_row(&mut out, &values);
        out.push(',');
        out.push_str(&csv_field(&flags));
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Reads a QoI CSV back into an output pool of `n` rows; rows absent from
/// the file stay pending.
pub fn read_outputs(path: &Path, n: usize) -> Result<OutputPool, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(fs::File::open(path).map_err(file_err(path))?);
    let header = reader.headers().map_err(|e| parse_err(path, 1, e))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 2 || cols[0] != "sample_id" || cols[cols.len() - 1] != "flags" {
        return Err(parse_err(path, 1, "expected header sample_id,...,flags"));
    }
    let names: Vec<String> = cols[1..cols.len() - 1].iter().map(|s| s.to_string()).collect();
    let mut rows = vec![RowStatus::Pending; n];
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e))?;
        if rec.len() != cols.len() {
            return Err(parse_err(path, line, format!("expected {} fields", cols.len())));
        }
        let id: usize = rec[0].parse().map_err(|e| parse_err(path, line, e))?;
        if id >= n {
            return Err(parse_err(path, line, format!("sample id {id} outside pool of {n}")));
        }
        let flags = rec[rec.len() - 1].to_string();
        rows[id] = if let Some(msg) = flags.strip_prefix("failed: ") {
            RowStatus::Failed(msg.to_string())
        } else {
            let values = rec
                .iter()
                .skip(1)
                .take(names.len())
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| parse_err(path, line, e))?;
            RowStatus::Done(ModelOutput { values, flags })
        };
    }
    Ok(OutputPool::from_rows(names, rows))
}

/// Tidy `policy,b,m,mean,lo,hi` rows, checkpoint-major.
pub fn plot_csv(rows: &[(String, &PolicyCurve)], checkpoints: &[usize]) -> String {
    let mut out = String::from("policy,b,m,mean,lo,hi\n");
    for (c, m) in checkpoints.iter().enumerate() {
        for (label, curve) in rows {
            let b = curve.batch_size.map(|b| b.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{b},{m},{},{},{}",
                csv_field(label),
                curve.mean[c],
                curve.lo[c],
                curve.hi[c]
            )
            .unwrap();
        }
    }
    out
}

pub fn report_plot_csv(report: &ConvergenceReport) -> String {
    let rows: Vec<(String, &PolicyCurve)> = report.policies.iter().map(|p| (p.label.clone(), p)).collect();
    plot_csv(&rows, &report.checkpoints)
}

#[derive(Debug, Serialize)]
struct SnapshotMeta<'a> {
    sample_id: usize,
    step: usize,
    time: f64,
    energy: f64,
    mean: f64,
    params: &'a PhaseFieldParams,
}

/// Grid dump (`n` rows of `n` values, row index `y`) plus a JSON sidecar.
pub fn write_snapshot(dir: &Path, sample_id: usize, snap: &Snapshot, params: &PhaseFieldParams) -> Result<PathBuf, IoError> {
    let stem = format!("sample{sample_id:05}_step{:07}", snap.step);
    let grid = dir.join(format!("{stem}.csv"));
    let n = snap.field.n;
    let mut out = String::new();
    for y in 0..n {
        push_row(&mut out, &snap.field.data[y * n..(y + 1) * n]);
        out.push('\n');
    }
    write_text(&grid, &out)?;
    let meta = SnapshotMeta {
        sample_id,
        step: snap.step,
        time: snap.time,
        energy: snap.energy,
        mean: snap.mean,
        params,
    };
    write_text(&dir.join(format!("{stem}.json")), &to_json(&meta))?;
    Ok(grid)
}
