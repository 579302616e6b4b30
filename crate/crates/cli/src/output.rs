use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::Format;
use crate::error::CliError;

pub const TOOL: &str = "eamac";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(command: &str, config_bytes: &[u8], seed: u64) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            command: command.into(),
            config_sha256: sha256_hex(config_bytes),
            seed,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Rows with a fixed column set. Cells are JSON values so one table renders to
/// both formats; `null` becomes an empty CSV field.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the column set");
        self.rows.push(row);
    }

    pub fn render(&self, meta: &Meta, format: Format) -> Result<Vec<u8>, CliError> {
        match format {
            Format::Csv => self.render_csv(meta),
            Format::Json => self.render_json(meta),
        }
    }

    fn render_csv(&self, meta: &Meta) -> Result<Vec<u8>, CliError> {
        let mut out = Vec::new();
        writeln!(out, "# {} {}", meta.tool, meta.version)?;
        writeln!(out, "# command: {}", meta.command)?;
        writeln!(out, "# config_sha256: {}", meta.config_sha256)?;
        writeln!(out, "# seed: {}", meta.seed)?;
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(csv_cell))?;
        }
        w.flush()?;
        drop(w);
        Ok(out)
    }

    fn render_json(&self, meta: &Meta) -> Result<Vec<u8>, CliError> {
        let rows: Vec<Map<String, Value>> = self
            .rows
            .iter()
            .map(|r| {
                self.columns
                    .iter()
                    .cloned()
                    .zip(r.iter().cloned())
                    .collect()
            })
            .collect();
        let doc = serde_json::json!({ "meta": meta, "rows": rows });
        let mut out = serde_json::to_vec_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn write_bytes(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// One (D, policy) measurement feeding the figure files.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub num_devices: u32,
    pub label: String,
    pub aaoi: f64,
    pub avp: Option<f64>,
}

/// Pivot `points` to one row per D and one column per label.
fn pivot(points: &[PlotPoint], labels: &[String], avp: bool) -> Table {
    let mut columns = vec!["D"];
    columns.extend(labels.iter().map(String::as_str));
    let mut by_d: BTreeMap<u32, BTreeMap<&str, Value>> = BTreeMap::new();
    for p in points.iter().filter(|p| labels.contains(&p.label)) {
        let v = if avp { p.avp } else { Some(p.aaoi) };
        by_d.entry(p.num_devices)
            .or_default()
            .insert(&p.label, v.map_or(Value::Null, Value::from));
    }
    let mut t = Table::new(&columns);
    for (d, vals) in by_d {
        let mut row = vec![Value::from(d)];
        row.extend(labels.iter().map(|l| vals.get(l.as_str()).cloned().unwrap_or(Value::Null)));
        t.push(row);
    }
    t
}

/// The figure files that `points` can populate, in a fixed order:
/// `fig4.csv` (no policy against threshold only), `fig5_aaoi.csv` and
/// `fig5_avp.csv` (the probability functions), `fig6.csv` (ADRA against elliptical).
pub fn plot_tables(points: &[PlotPoint]) -> Vec<(&'static str, Table)> {
    let mut labels: Vec<String> = Vec::new();
    for p in points {
        if !labels.contains(&p.label) {
            labels.push(p.label.clone());
        }
    }
    let has = |l: &str| labels.iter().any(|x| x == l);
    let mut out = Vec::new();
    if has("none") && has("threshold_only") {
        let mut t = Table::new(&[
            "D",
            "none_aaoi",
            "none_avp",
            "threshold_only_aaoi",
            "threshold_only_avp",
        ]);
        let aaoi = pivot(points, &["none".into(), "threshold_only".into()], false);
        let avp = pivot(points, &["none".into(), "threshold_only".into()], true);
        for (a, v) in aaoi.rows.iter().zip(&avp.rows) {
            t.push(vec![a[0].clone(), a[1].clone(), v[1].clone(), a[2].clone(), v[2].clone()]);
        }
        out.push(("fig4.csv", t));
    }
    let proposed: Vec<String> = labels
        .iter()
        .filter(|l| l.starts_with("proposed_"))
        .cloned()
        .collect();
    if !proposed.is_empty() {
        out.push(("fig5_aaoi.csv", pivot(points, &proposed, false)));
        out.push(("fig5_avp.csv", pivot(points, &proposed, true)));
    }
    if has("adra") && has("proposed_elliptical") {
        out.push((
            "fig6.csv",
            pivot(points, &["proposed_elliptical".into(), "adra".into()], false),
        ));
    }
    out
}

/// Write every figure file into `dir`.
pub fn emit_plotdata(dir: &Path, points: &[PlotPoint], meta: &Meta) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    for (name, table) in plot_tables(points) {
        let path = dir.join(name);
        write_bytes(Some(&path), &table.render(meta, Format::Csv)?)?;
        written.push(path);
    }
    Ok(written)
}
