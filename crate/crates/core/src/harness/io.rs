use std::io::{BufRead, BufReader, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::metrics::MetricsReport;
use crate::planner::{Path, SearchTree};
use crate::stability::StableState;

/// Provenance embedded in or stored next to every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Goal bias in effect; present for RRT-sim runs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_bias: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_min: Option<f64>,
    /// Simulator steps the run consumed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_steps: Option<u64>,
}

impl RunMeta {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("metadata serializes")
    }
}

fn io_err(path: &FsPath) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.into(), source }
}

fn parse_err(path: &FsPath, message: impl ToString) -> HarnessError {
    HarnessError::Parse { path: path.into(), message: message.to_string() }
}

pub(crate) fn write_file(path: &FsPath, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    f.write_all(bytes).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn read_lines(path: &FsPath) -> Result<Vec<String>, HarnessError> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    BufReader::new(f)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .collect::<Result<_, _>>()
        .map_err(io_err(path))
}

/// Writes one stable state per line plus a `.meta.json` sidecar.
pub(crate) fn write_stable(path: &FsPath, states: &[StableState], meta: &RunMeta) -> Result<(), HarnessError> {
    write_file(path, jsonl(states).as_bytes())?;
    let sidecar = path.with_extension("meta.json");
    let text = serde_json::to_string_pretty(meta).expect("metadata serializes") + "\n";
    write_file(&sidecar, text.as_bytes())
}

pub fn read_stable(path: &FsPath) -> Result<Vec<StableState>, HarnessError> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(path, format!("line {}: {e}", i + 1))))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: RunMeta,
}

/// Retained paths of one run: a metadata line followed by one path per line.
#[derive(Debug, Clone, PartialEq)]
pub struct PathsFile {
    pub meta: RunMeta,
    pub paths: Vec<Path>,
}

impl PathsFile {
    pub fn to_jsonl(&self) -> String {
        let mut out = jsonl([Header { meta: self.meta.clone() }]);
        out.push_str(&jsonl(&self.paths));
        out
    }
}

pub fn read_paths(path: &FsPath) -> Result<PathsFile, HarnessError> {
    let lines = read_lines(path)?;
    let (first, rest) = lines.split_first().ok_or_else(|| parse_err(path, "empty paths file"))?;
    let header: Header = serde_json::from_str(first).map_err(|e| parse_err(path, format!("line 1: {e}")))?;
    let paths = rest
        .iter()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(path, format!("line {}: {e}", i + 2))))
        .collect::<Result<_, _>>()?;
    Ok(PathsFile { meta: header.meta, paths })
}

/// Search tree of one run with its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub meta: RunMeta,
    pub tree: SearchTree,
}

impl TreeFile {
    pub fn read(path: &FsPath) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| parse_err(path, e))
    }
}

/// One line of a metrics table. `seed` is the seed number or `mean`;
/// coverage is in percent and entropy in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scene: String,
    pub method: String,
    pub seed: String,
    #[serde(rename = "count")]
    pub path_count: f64,
    #[serde(rename = "coverage")]
    pub coverage_pct: f64,
    #[serde(rename = "entropy")]
    pub entropy_nats: Option<f64>,
    pub avg_hausdorff: Option<f64>,
}

impl MetricsRow {
    pub fn from_report(scene: &str, method: &str, seed: u64, report: &MetricsReport) -> Self {
        Self {
            scene: scene.into(),
            method: method.into(),
            seed: seed.to_string(),
            path_count: report.path_count as f64,
            coverage_pct: report.coverage_pct,
            entropy_nats: report.entropy_nats,
            avg_hausdorff: report.avg_hausdorff,
        }
    }

    /// The `mean` row over `rows`. Optional metrics are averaged over the
    /// rows that have them.
    pub fn mean(scene: &str, method: &str, rows: &[MetricsRow]) -> Self {
        let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Self {
            scene: scene.into(),
            method: method.into(),
            seed: "mean".into(),
            path_count: mean(rows.iter().map(|r| r.path_count).collect()).unwrap_or(0.0),
            coverage_pct: mean(rows.iter().map(|r| r.coverage_pct).collect()).unwrap_or(0.0),
            entropy_nats: mean(rows.iter().filter_map(|r| r.entropy_nats).collect()),
            avg_hausdorff: mean(rows.iter().filter_map(|r| r.avg_hausdorff).collect()),
        }
    }
}

/// A metrics CSV: an optional `#` comment line with metadata, a header and rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub meta: Option<String>,
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("row serializes");
        }
        if self.rows.is_empty() {
            w.write_record(["scene", "method", "seed", "count", "coverage", "entropy", "avg_hausdorff"])
                .expect("header writes");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv");
        match &self.meta {
            Some(m) => format!("# {m}\n{body}"),
            None => body,
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let (meta, body) = match text.strip_prefix("# ") {
            Some(rest) => {
                let (line, body) = rest.split_once('\n').unwrap_or((rest, ""));
                (Some(line.to_string()), body)
            }
            None => (None, text),
        };
        let rows = csv::Reader::from_reader(body.as_bytes())
            .deserialize()
            .collect::<Result<Vec<MetricsRow>, _>>()
            .map_err(|e| e.to_string())?;
        Ok(Self { meta, rows })
    }
}

pub fn write_metrics_csv(path: &FsPath, table: &MetricsTable) -> Result<(), HarnessError> {
    write_file(path, table.to_csv().as_bytes())
}

pub fn read_metrics_csv(path: &FsPath) -> Result<MetricsTable, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    MetricsTable::parse(&text).map_err(|e| parse_err(path, e))
}
