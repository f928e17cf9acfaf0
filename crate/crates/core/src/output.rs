//! Run artifacts: diagnostics CSV, snapshot grids, the TOML report and plots.
//!
//! Snapshot layout (`snapshots/<field>_t<time>.csv`):
//!
//! ```text
//! nx=<nx>,ny=<ny>,h=<h>,t=<t>,x0=<x0>,y0=<y0>
//! <row j = 0: nx comma-separated values, x increasing>
//! ...
//! <row j = ny - 1>
//! ```
//!
//! Row 0 is the bottom (smallest y) row. Values use Rust's shortest
//! round-trip exponent formatting (`{:e}`), so reading a snapshot back gives
//! the exact `f64`s that were written.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::grid::{Grid, SpatialField};
use crate::model::{Compartment, Model, SimState};
use crate::scenario::{RunReport, ScenarioConfig};
use crate::solver::Observer;

pub const CONFIG_FILE: &str = "config.toml";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const REPORT_FILE: &str = "report.toml";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const PLOT_DIR: &str = "plots";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SnapshotField {
    #[serde(rename = "V_s")]
    Vs,
    #[serde(rename = "V_i")]
    Vi,
    #[serde(rename = "V")]
    V,
    /// Host compartments, summed over sites.
    S,
    E,
    I,
}

impl SnapshotField {
    pub fn name(self) -> &'static str {
        match self {
            SnapshotField::Vs => "V_s",
            SnapshotField::Vi => "V_i",
            SnapshotField::V => "V",
            SnapshotField::S => "S",
            SnapshotField::E => "E",
            SnapshotField::I => "I",
        }
    }

    pub fn extract(self, state: &SimState, model: &Model) -> SpatialField {
        match self {
            SnapshotField::Vs => state.vs.clone(),
            SnapshotField::Vi => state.vi.clone(),
            SnapshotField::V => state.total_vector(),
            SnapshotField::S => state.host_field(model, Compartment::Susceptible),
            SnapshotField::E => state.host_field(model, Compartment::Exposed),
            SnapshotField::I => state.host_field(model, Compartment::Infected),
        }
    }
}

pub fn snapshot_file_name(field: SnapshotField, t: f64) -> String {
    format!("{}_t{:07.3}.csv", field.name(), t)
}

/// A snapshot read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub t: f64,
    pub origin: [f64; 2],
    /// Flat, `j * nx + i`.
    pub values: Vec<f64>,
}

pub fn write_snapshot(path: &Path, grid: &Grid, field: &SpatialField, t: f64) -> Result<()> {
    if field.shape != grid.shape {
        return Err(Error::GridMismatch {
            expected: (grid.nx(), grid.ny()),
            actual: (field.shape.nx, field.shape.ny),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "nx={},ny={},h={:e},t={:e},x0={:e},y0={:e}",
        grid.nx(),
        grid.ny(),
        grid.h(),
        t,
        grid.origin[0],
        grid.origin[1]
    )
    .map_err(io)?;
    let mut line = String::new();
    for row in field.values.chunks(grid.nx()) {
        line.clear();
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:e}"));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        message: msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty snapshot".into()))?;
    let get = |key: &str| -> Result<String> {
        header
            .split(',')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.to_string())
            .ok_or_else(|| bad(format!("header lacks {key}")))
    };
    let num = |s: String| s.parse::<f64>().map_err(|e| bad(format!("line 1: {e}")));
    let nx: usize = get("nx")?.parse().map_err(|e| bad(format!("line 1: {e}")))?;
    let ny: usize = get("ny")?.parse().map_err(|e| bad(format!("line 1: {e}")))?;
    let h = num(get("h")?)?;
    let t = num(get("t")?)?;
    let origin = [num(get("x0")?)?, num(get("y0")?)?];
    let mut values = Vec::with_capacity(nx * ny);
    for (n, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
        if row.len() != nx {
            return Err(bad(format!("line {}: {} values, expected {nx}", n + 2, row.len())));
        }
        values.extend(row);
    }
    if values.len() != nx * ny {
        return Err(bad(format!("{} rows, expected {ny}", values.len() / nx.max(1))));
    }
    Ok(Snapshot {
        nx,
        ny,
        h,
        t,
        origin,
        values,
    })
}

/// Column names of the diagnostics CSV for the given site labels.
pub fn diagnostics_header(labels: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = [
        "step",
        "t",
        "V_s",
        "V_i",
        "V",
        "V_max",
        "V_i_max",
        "outflow",
        "logistic_source",
        "min_value",
        "flag_negative",
        "flag_above_bound",
        "flag_non_finite",
        "flag_s_increase",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for l in labels {
        for c in ["S", "E", "I", "E_max", "I_max", "exposure"] {
            cols.push(format!("{c}_{l}"));
        }
    }
    cols
}

fn record_row(rec: &DiagnosticsRecord) -> Vec<String> {
    let f = rec.flags;
    let mut row = vec![rec.step.to_string()];
    for v in [
        rec.t,
        rec.vs_total,
        rec.vi_total,
        rec.v_total,
        rec.v_max,
        rec.vi_max,
        rec.outflow,
        rec.logistic_source,
        rec.min_value,
    ] {
        row.push(format!("{v:e}"));
    }
    for b in [f.negative, f.above_bound, f.non_finite, f.susceptible_increase] {
        row.push(u8::from(b).to_string());
    }
    for s in &rec.sites {
        for v in [s.s, s.e, s.i, s.e_max, s.i_max, s.exposure] {
            row.push(format!("{v:e}"));
        }
    }
    row
}

/// Diagnostics CSV read back as named numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DiagnosticsTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Site labels found in the `S_<label>` columns.
    pub fn site_labels(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter_map(|c| c.strip_prefix("S_").map(str::to_string))
            .collect()
    }
}

pub fn read_diagnostics(path: &Path) -> Result<DiagnosticsTable> {
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        message: msg,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => bad(format!("{other:?}")),
    })?;
    let columns: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", rows.len() + 2)))?;
        rows.push(row);
    }
    Ok(DiagnosticsTable { columns, rows })
}

pub fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    let text = toml::to_string(report).map_err(|e| Error::config(format!("cannot serialize report: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Observer that streams the diagnostics CSV and writes snapshots.
pub struct RunWriter {
    path: PathBuf,
    csv: csv::Writer<BufWriter<File>>,
    snapshot_dir: PathBuf,
    times: Vec<f64>,
    fields: Vec<SnapshotField>,
    written: Vec<PathBuf>,
}

impl RunWriter {
    pub fn create(run_dir: &Path, model: &Model, config: &ScenarioConfig) -> Result<RunWriter> {
        let path = run_dir.join(DIAGNOSTICS_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut csv = csv::Writer::from_writer(BufWriter::new(file));
        let labels: Vec<String> = model.sites.iter().map(|s| s.label.clone()).collect();
        csv.write_record(diagnostics_header(&labels)).map_err(|e| csv_error(&path, e))?;
        let snapshot_dir = run_dir.join(SNAPSHOT_DIR);
        if !config.output.snapshot_times_months.is_empty() {
            match fs::create_dir(&snapshot_dir) {
                Err(e) if e.kind() != std::io::ErrorKind::AlreadyExists => return Err(Error::io(&snapshot_dir, e)),
                _ => {}
            }
        }
        Ok(RunWriter {
            path,
            csv,
            snapshot_dir,
            times: config.output.snapshot_times_months.clone(),
            fields: config.output.snapshot_fields.clone(),
            written: Vec::new(),
        })
    }

    pub fn snapshots(&self) -> &[PathBuf] {
        &self.written
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Domain(format!("{}: {other:?}", path.display())),
    }
}

impl Observer for RunWriter {
    fn on_record(&mut self, record: &DiagnosticsRecord) -> Result<()> {
        self.csv.write_record(record_row(record)).map_err(|e| csv_error(&self.path, e))
    }

    fn snapshot_times(&self) -> Vec<f64> {
        self.times.clone()
    }

    fn on_snapshot(&mut self, state: &SimState, model: &Model) -> Result<()> {
        for &f in &self.fields {
            let path = self.snapshot_dir.join(snapshot_file_name(f, state.t));
            write_snapshot(&path, &model.grid, &f.extract(state, model), state.t)?;
            self.written.push(path);
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.csv.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Sequential colour ramp from dark blue through teal to yellow.
fn ramp(x: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 4] = [
        [0.27, 0.00, 0.33],
        [0.19, 0.41, 0.56],
        [0.21, 0.72, 0.47],
        [0.99, 0.91, 0.15],
    ];
    let x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
    let pos = x * (STOPS.len() - 1) as f64;
    let k = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - k as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = ((STOPS[k][c] * (1.0 - f) + STOPS[k + 1][c] * f) * 255.0).round() as u8;
    }
    out
}

/// Writes a heatmap PNG of a snapshot, one pixel per cell, y upwards,
/// linearly scaled between the snapshot's min and max.
pub fn write_heatmap(snap: &Snapshot, path: &Path) -> Result<()> {
    let lo = snap.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = snap.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = image::RgbImage::from_fn(snap.nx as u32, snap.ny as u32, |px, py| {
        let j = snap.ny - 1 - py as usize;
        image::Rgb(ramp((snap.values[j * snap.nx + px as usize] - lo) / span))
    });
    img.save(path)
        .map_err(|e| Error::Domain(format!("cannot write {}: {e}", path.display())))
}

/// Time-series panels (host S totals, host I totals, total `V_i`) as SVG.
pub fn write_time_series(table: &DiagnosticsTable, path: &Path) -> Result<()> {
    use plotters::prelude::*;

    let t = table
        .column("t")
        .ok_or_else(|| Error::Domain("diagnostics lack a t column".into()))?;
    if t.len() < 2 {
        return Err(Error::Domain("time series needs at least two records".into()));
    }
    let labels = table.site_labels();
    let mut panels: Vec<Vec<Vec<f64>>> = vec![Vec::new(), Vec::new(), Vec::new()];
    for l in &labels {
        panels[0].push(table.column(&format!("S_{l}")).unwrap_or_default());
        panels[1].push(table.column(&format!("I_{l}")).unwrap_or_default());
    }
    panels[2].push(table.column("V_i").unwrap_or_default());
    let palette = [RED, BLUE, GREEN, MAGENTA, CYAN, BLACK];
    let t_end = t[t.len() - 1];

    let plot_err = |e: String| Error::Domain(format!("cannot draw {}: {e}", path.display()));
    let root = SVGBackend::new(path, (900, 900)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
    for (area, curves) in root.split_evenly((3, 1)).iter().zip(&panels) {
        let top = curves
            .iter()
            .flatten()
            .copied()
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut chart = ChartBuilder::on(area)
            .margin(15)
            .build_cartesian_2d(t[0]..t_end, 0.0..top * 1.05)
            .map_err(|e| plot_err(e.to_string()))?;
        chart
            .plotting_area()
            .draw(&Rectangle::new([(t[0], 0.0), (t_end, top * 1.05)], BLACK.stroke_width(1)))
            .map_err(|e| plot_err(e.to_string()))?;
        for (k, y) in curves.iter().enumerate() {
            let color = palette[k % palette.len()];
            chart
                .draw_series(LineSeries::new(t.iter().copied().zip(y.iter().copied()), color.stroke_width(2)))
                .map_err(|e| plot_err(e.to_string()))?;
        }
    }
    root.present().map_err(|e| plot_err(e.to_string()))?;
    Ok(())
}

/// Renders every snapshot in `<run_dir>/snapshots` to a PNG heatmap and the
/// diagnostics to `timeseries.svg`, all under `<run_dir>/plots`.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let diag = run_dir.join(DIAGNOSTICS_FILE);
    if !diag.is_file() {
        return Err(Error::io(
            &diag,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing diagnostics"),
        ));
    }
    let table = read_diagnostics(&diag)?;
    if table.rows.is_empty() {
        return Err(Error::Domain(format!("{} has no records", diag.display())));
    }
    let plots = run_dir.join(PLOT_DIR);
    match fs::create_dir(&plots) {
        Err(e) if e.kind() != std::io::ErrorKind::AlreadyExists => return Err(Error::io(&plots, e)),
        _ => {}
    }
    let mut out = Vec::new();
    let series = plots.join("timeseries.svg");
    write_time_series(&table, &series)?;
    out.push(series);

    let snap_dir = run_dir.join(SNAPSHOT_DIR);
    if snap_dir.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&snap_dir)
            .map_err(|e| Error::io(&snap_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            let snap = read_snapshot(&f)?;
            let png = plots.join(f.with_extension("png").file_name().expect("snapshot file name"));
            write_heatmap(&snap, &png)?;
            out.push(png);
        }
    }
    Ok(out)
}
