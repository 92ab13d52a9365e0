//! Deterministic metrics plumbing: a fixed-order CSV schema, an
//! append-only writer flushed per row, and tidy per-figure exports
//! with min/max seed bands.
//!
//! The column order is normative for downstream tooling; floats print
//! in Rust's shortest-roundtrip form and NaN becomes an empty field,
//! so identical runs produce bitwise-identical files.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const METRIC_COLUMNS: [&str; 15] = [
    "run_id",
    "cycle",
    "phase",
    "step",
    "mean_return",
    "policy_loss",
    "q_loss",
    "v_loss",
    "kl_to_prev",
    "tv_to_prev",
    "adv_mean",
    "adv_absmax",
    "env_steps_cum",
    "traj_cum",
    "wall_ms",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Offline,
    Online,
    Eval,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Offline => "offline",
            Phase::Online => "online",
            Phase::Eval => "eval",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(Phase::Offline),
            "online" => Ok(Phase::Online),
            "eval" => Ok(Phase::Eval),
            other => Err(Error::schema(format!("unknown phase {other:?}"))),
        }
    }
}

/// One row of the training log. Float fields may be NaN when the
/// phase has no such quantity; counters are cumulative over the run.
#[derive(Clone, Debug)]
pub struct MetricRow {
    pub run_id: String,
    pub cycle: usize,
    pub phase: Phase,
    pub step: usize,
    pub mean_return: f64,
    pub policy_loss: f64,
    pub q_loss: f64,
    pub v_loss: f64,
    pub kl_to_prev: f64,
    pub tv_to_prev: f64,
    pub adv_mean: f64,
    pub adv_absmax: f64,
    pub env_steps_cum: u64,
    pub traj_cum: u64,
    pub wall_ms: u64,
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn parse_float(field: &str, col: &str, line: usize) -> Result<f64> {
    if field.is_empty() {
        return Ok(f64::NAN);
    }
    field
        .parse()
        .map_err(|_| Error::schema(format!("line {line}: bad {col} value {field:?}")))
}

fn parse_int(field: &str, col: &str, line: usize) -> Result<u64> {
    field
        .parse()
        .map_err(|_| Error::schema(format!("line {line}: bad {col} value {field:?}")))
}

impl MetricRow {
    fn to_csv_line(&self) -> String {
        [
            self.run_id.clone(),
            self.cycle.to_string(),
            self.phase.to_string(),
            self.step.to_string(),
            fmt_float(self.mean_return),
            fmt_float(self.policy_loss),
            fmt_float(self.q_loss),
            fmt_float(self.v_loss),
            fmt_float(self.kl_to_prev),
            fmt_float(self.tv_to_prev),
            fmt_float(self.adv_mean),
            fmt_float(self.adv_absmax),
            self.env_steps_cum.to_string(),
            self.traj_cum.to_string(),
            self.wall_ms.to_string(),
        ]
        .join(",")
    }

    fn from_csv_line(line: &str, lineno: usize) -> Result<MetricRow> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != METRIC_COLUMNS.len() {
            return Err(Error::schema(format!(
                "line {lineno}: expected {} fields, found {}",
                METRIC_COLUMNS.len(),
                f.len()
            )));
        }
        Ok(MetricRow {
            run_id: f[0].to_string(),
            cycle: parse_int(f[1], "cycle", lineno)? as usize,
            phase: f[2].parse()?,
            step: parse_int(f[3], "step", lineno)? as usize,
            mean_return: parse_float(f[4], "mean_return", lineno)?,
            policy_loss: parse_float(f[5], "policy_loss", lineno)?,
            q_loss: parse_float(f[6], "q_loss", lineno)?,
            v_loss: parse_float(f[7], "v_loss", lineno)?,
            kl_to_prev: parse_float(f[8], "kl_to_prev", lineno)?,
            tv_to_prev: parse_float(f[9], "tv_to_prev", lineno)?,
            adv_mean: parse_float(f[10], "adv_mean", lineno)?,
            adv_absmax: parse_float(f[11], "adv_absmax", lineno)?,
            env_steps_cum: parse_int(f[12], "env_steps_cum", lineno)?,
            traj_cum: parse_int(f[13], "traj_cum", lineno)?,
            wall_ms: parse_int(f[14], "wall_ms", lineno)?,
        })
    }
}

/// Enforces that cumulative counters never move backwards and that
/// offline rows never advance them.
#[derive(Clone, Copy, Debug, Default)]
struct CounterGuard {
    env_steps: u64,
    traj: u64,
}

impl CounterGuard {
    fn admit(&mut self, row: &MetricRow) -> Result<()> {
        if row.env_steps_cum < self.env_steps || row.traj_cum < self.traj {
            return Err(Error::schema("cumulative counters went backwards"));
        }
        if row.phase == Phase::Offline
            && (row.env_steps_cum > self.env_steps || row.traj_cum > self.traj)
        {
            return Err(Error::schema("offline rows must not advance env counters"));
        }
        self.env_steps = row.env_steps_cum;
        self.traj = row.traj_cum;
        Ok(())
    }
}

/// Destination for metric rows as a run produces them.
pub trait RowSink {
    fn row(&mut self, row: MetricRow) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl RowSink for NullSink {
    fn row(&mut self, _row: MetricRow) -> Result<()> {
        Ok(())
    }
}

/// Collects rows in memory, with the same counter checks the file
/// writer applies.
#[derive(Default)]
pub struct MemorySink {
    pub rows: Vec<MetricRow>,
    guard: CounterGuard,
}

impl RowSink for MemorySink {
    fn row(&mut self, row: MetricRow) -> Result<()> {
        self.guard.admit(&row)?;
        self.rows.push(row);
        Ok(())
    }
}

/// Append-only CSV writer; every row is flushed so a killed run loses
/// at most the row in flight.
pub struct MetricWriter {
    out: BufWriter<File>,
    guard: CounterGuard,
}

pub(crate) fn validate_text_field(value: &str, what: &str) -> Result<()> {
    if value.is_empty() || value.contains([',', '"', '\n', '\r']) {
        return Err(Error::input(format!(
            "{what} must be non-empty and free of commas, quotes and newlines"
        )));
    }
    Ok(())
}

impl MetricWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create_new(true).write(true).open(path)?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", METRIC_COLUMNS.join(","))?;
        out.flush()?;
        Ok(MetricWriter { out, guard: CounterGuard::default() })
    }
}

impl RowSink for MetricWriter {
    fn row(&mut self, row: MetricRow) -> Result<()> {
        validate_text_field(&row.run_id, "run_id")?;
        self.guard.admit(&row)?;
        writeln!(self.out, "{}", row.to_csv_line())?;
        self.out.flush()?;
        Ok(())
    }
}

/// Reads a metrics CSV written by [`MetricWriter`], rejecting any
/// header that deviates from the normative column set.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == METRIC_COLUMNS.join(",") => {}
        Some(header) => {
            return Err(Error::schema(format!("unexpected metrics header {header:?}")))
        }
        None => return Err(Error::schema("metrics file is empty")),
    }
    lines
        .enumerate()
        .map(|(i, line)| MetricRow::from_csv_line(line, i + 2))
        .collect()
}

/// `label_s3` and `label_s12` belong to the same curve `label`.
pub fn curve_label(run_id: &str) -> &str {
    if let Some(pos) = run_id.rfind("_s") {
        let suffix = &run_id[pos + 2..];
        if !suffix.is_empty() && suffix.bytes().all(|b| b.is_ascii_digit()) {
            return &run_id[..pos];
        }
    }
    run_id
}

#[derive(Clone, Debug)]
struct BandPoint {
    curve: String,
    x: u64,
    ys: Vec<f64>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn band_csv(points: &mut [BandPoint]) -> String {
    points.sort_by(|a, b| a.curve.cmp(&b.curve).then(a.x.cmp(&b.x)));
    let mut out = String::from("curve,x,y,y_lo,y_hi\n");
    for p in points {
        p.ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (lo, hi) = (p.ys[0], p.ys[p.ys.len() - 1]);
        let y = median(&p.ys);
        out.push_str(&format!("{},{},{},{},{}\n", p.curve, p.x, y, lo, hi));
    }
    out
}

fn collect_band(rows: &[MetricRow], x_of: impl Fn(&MetricRow) -> u64) -> Vec<BandPoint> {
    let mut points: Vec<BandPoint> = Vec::new();
    for row in rows.iter().filter(|r| r.phase == Phase::Eval && !r.mean_return.is_nan()) {
        let curve = curve_label(&row.run_id).to_string();
        let x = x_of(row);
        match points.iter_mut().find(|p| p.curve == curve && p.x == x) {
            Some(p) => p.ys.push(row.mean_return),
            None => points.push(BandPoint { curve, x, ys: vec![row.mean_return] }),
        }
    }
    points
}

/// Builds the per-figure tidy CSVs (`curve,x,y,y_lo,y_hi`) from raw
/// metrics files: eval return against cumulative trajectories and
/// against cumulative env steps. Seeds sharing a run label merge into
/// min/max bands around the median.
pub fn export_plots(metrics_files: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if metrics_files.is_empty() {
        return Err(Error::input("export needs at least one metrics file"));
    }
    let mut rows = Vec::new();
    for path in metrics_files {
        rows.extend(read_metrics(path)?);
    }
    std::fs::create_dir_all(out_dir)?;
    let figures: [(&str, fn(&MetricRow) -> u64); 2] = [
        ("return_vs_trajectories.csv", |r| r.traj_cum),
        ("return_vs_env_steps.csv", |r| r.env_steps_cum),
    ];
    let mut written = Vec::new();
    for (name, x_of) in figures {
        let mut points = collect_band(&rows, x_of);
        let path = out_dir.join(name);
        std::fs::write(&path, band_csv(&mut points))?;
        written.push(path);
    }
    Ok(written)
}
