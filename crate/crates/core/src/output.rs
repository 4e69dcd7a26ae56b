//! Result tables, CSV/JSON writers with a hashed manifest, and CSV readers
//! for the command-line inputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::OutputFormat;
use crate::error::{Error, Result};
use crate::ple::Spectrum;
use crate::trajectory::{ChargeTrajectory, PhotonTrace, ReadoutWindow};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(i64::from(v))
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageData {
    Table(Table),
    Record(serde_json::Value),
}

/// One named output of a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub data: StageData,
}

impl Stage {
    pub fn table(name: &str, table: Table) -> Self {
        Self { name: name.into(), data: StageData::Table(table) }
    }

    pub fn record(name: &str, value: serde_json::Value) -> Self {
        Self { name: name.into(), data: StageData::Record(value) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub pipeline: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub metadata: RunMetadata,
    pub stages: Vec<Stage>,
    /// Wall-clock timings; written separately and never hashed.
    pub timings: Vec<Timing>,
}

impl ResultBundle {
    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn record(&self, name: &str) -> Option<&serde_json::Value> {
        match &self.stage(name)?.data {
            StageData::Record(v) => Some(v),
            StageData::Table(_) => None,
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        match &self.stage(name)?.data {
            StageData::Table(t) => Some(t),
            StageData::Record(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub metadata: RunMetadata,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<ManifestEntry> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(ManifestEntry {
        file: name.to_string(),
        sha256: hex::encode(Sha256::digest(bytes)),
        bytes: bytes.len() as u64,
    })
}

fn pretty(value: &impl Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

/// Writes one file per stage, `timings.json`, and `manifest.json` listing
/// every stage file with its SHA-256.
pub fn write_results(bundle: &ResultBundle, format: OutputFormat, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(bundle.stages.len());
    for stage in &bundle.stages {
        let entry = match (&stage.data, format) {
            (StageData::Table(t), OutputFormat::Csv) => write_file(dir, &format!("{}.csv", stage.name), &t.to_csv())?,
            (StageData::Table(t), OutputFormat::Json) => write_file(dir, &format!("{}.json", stage.name), &pretty(t))?,
            (StageData::Record(v), _) => write_file(dir, &format!("{}.json", stage.name), &pretty(v))?,
        };
        files.push(entry);
    }
    write_file(dir, TIMINGS_FILE, &pretty(&bundle.timings))?;
    let manifest = Manifest { schema_version: SCHEMA_VERSION, metadata: bundle.metadata.clone(), files };
    write_file(dir, MANIFEST_FILE, &pretty(&manifest))?;
    Ok(manifest)
}

/// `rep,window_index,t_start_ms,t_stop_ms,count`
pub fn traces_table(traces: &[PhotonTrace]) -> Table {
    let mut t = Table::new(&["rep", "window_index", "t_start_ms", "t_stop_ms", "count"]);
    for (rep, trace) in traces.iter().enumerate() {
        for w in &trace.windows {
            t.push(vec![rep.into(), w.index.into(), (w.t_start * 1e3).into(), (w.t_stop * 1e3).into(), w.count.into()]);
        }
    }
    t
}

/// `rep,jump_time_s,new_state`
pub fn jumps_table(trajectories: &[ChargeTrajectory]) -> Table {
    let mut t = Table::new(&["rep", "jump_time_s", "new_state"]);
    for (rep, traj) in trajectories.iter().enumerate() {
        for j in &traj.jumps {
            t.push(vec![rep.into(), j.time.into(), j.state.label().into()]);
        }
    }
    t
}

/// `detuning_GHz,counts`
pub fn spectrum_table(spec: &Spectrum) -> Table {
    let mut t = Table::new(&["detuning_GHz", "counts"]);
    for (d, c) in spec.detuning_ghz.iter().zip(&spec.counts) {
        t.push(vec![(*d).into(), (*c).into()]);
    }
    t
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Reads the named columns as numbers; an optional column may be absent or
/// have empty cells (returned as `None`).
fn read_columns(path: &Path, required: &[&str], optional: Option<&str>) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let idx: Vec<usize> = required
        .iter()
        .map(|name| find(name).ok_or_else(|| Error::Csv(format!("{}: missing column `{name}`", path.display()))))
        .collect::<Result<_>>()?;
    let opt_idx = optional.and_then(find);
    let mut cols = vec![Vec::new(); required.len()];
    let mut opt_vals: Vec<Option<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
        let parse = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<f64>().map_err(|_| {
                Error::Csv(format!("{}: row {}: column `{name}`: cannot parse `{raw}`", path.display(), line + 2))
            })
        };
        for (k, (&i, name)) in idx.iter().zip(required).enumerate() {
            cols[k].push(parse(i, name)?);
        }
        if let Some(i) = opt_idx {
            let raw = record.get(i).unwrap_or("");
            opt_vals.push(if raw.is_empty() { None } else { Some(parse(i, optional.unwrap_or(""))?) });
        }
    }
    let opt = match opt_idx {
        Some(_) if !opt_vals.is_empty() && opt_vals.iter().all(Option::is_some) => {
            Some(opt_vals.into_iter().flatten().collect())
        }
        Some(_) if opt_vals.iter().any(Option::is_some) => {
            return Err(Error::Csv(format!(
                "{}: column `{}` must be filled on every row or left empty",
                path.display(),
                optional.unwrap_or("")
            )))
        }
        _ => None,
    };
    Ok((cols, opt))
}

/// `t_s,signal`
pub fn read_decay_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut cols, _) = read_columns(path, &["t_s", "signal"], None)?;
    let y = cols.pop().unwrap_or_default();
    let t = cols.pop().unwrap_or_default();
    Ok((t, y))
}

/// `power_uW,rate_Hz[,rate_err_Hz]`
pub type PowerData = (Vec<f64>, Vec<f64>, Option<Vec<f64>>);

pub fn read_power_csv(path: &Path) -> Result<PowerData> {
    let (mut cols, err) = read_columns(path, &["power_uW", "rate_Hz"], Some("rate_err_Hz"))?;
    let g = cols.pop().unwrap_or_default();
    let p = cols.pop().unwrap_or_default();
    Ok((p, g, err))
}

/// `detuning_GHz,counts`
pub fn read_spectrum_csv(path: &Path, dwell_ms: f64) -> Result<Spectrum> {
    let (mut cols, _) = read_columns(path, &["detuning_GHz", "counts"], None)?;
    let counts = cols.pop().unwrap_or_default();
    let detuning_ghz = cols.pop().unwrap_or_default();
    Ok(Spectrum { detuning_ghz, counts, dwell_ms })
}

/// `rep,window_index,t_start_ms,t_stop_ms,count`, grouped by `rep` in order
/// of first appearance.
pub fn read_traces_csv(path: &Path) -> Result<Vec<PhotonTrace>> {
    let (cols, _) = read_columns(path, &["rep", "window_index", "t_start_ms", "t_stop_ms", "count"], None)?;
    let mut traces: Vec<(i64, PhotonTrace)> = Vec::new();
    for i in 0..cols[0].len() {
        let rep = cols[0][i];
        let count = cols[4][i];
        if rep.fract() != 0.0 || count < 0.0 || count.fract() != 0.0 || cols[1][i] < 0.0 || cols[1][i].fract() != 0.0 {
            return Err(Error::Csv(format!(
                "{}: row {}: rep, window_index and count must be non-negative integers",
                path.display(),
                i + 2
            )));
        }
        let window = ReadoutWindow {
            index: cols[1][i] as usize,
            t_start: cols[2][i] * 1e-3,
            t_stop: cols[3][i] * 1e-3,
            detuning: 0.0,
            count: count as u64,
        };
        match traces.iter_mut().find(|(r, _)| *r == rep as i64) {
            Some((_, t)) => t.windows.push(window),
            None => traces.push((rep as i64, PhotonTrace { windows: vec![window] })),
        }
    }
    Ok(traces.into_iter().map(|(_, t)| t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> ResultBundle {
        let mut t = Table::new(&["x", "y"]);
        t.push(vec![1.5.into(), 2u64.into()]);
        t.push(vec![0.1.into(), 3u64.into()]);
        ResultBundle {
            metadata: RunMetadata { pipeline: "test".into(), config_hash: "abc".into(), seed: 1, version: "0".into() },
            stages: vec![Stage::table("points", t), Stage::record("fit", serde_json::json!({"slope": 32.0}))],
            timings: vec![Timing { stage: "points".into(), seconds: 0.25 }],
        }
    }

    #[test]
    fn csv_layout() {
        let text = String::from_utf8(bundle().table("points").unwrap().to_csv()).unwrap();
        assert_eq!(text, "x,y\n1.5,2\n0.1,3\n");
    }

    #[test]
    fn same_bundle_same_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle();
        let m1 = write_results(&b, OutputFormat::Csv, &dir.path().join("a")).unwrap();
        let mut b2 = b.clone();
        b2.timings[0].seconds = 99.0;
        let m2 = write_results(&b2, OutputFormat::Csv, &dir.path().join("b")).unwrap();
        assert_eq!(m1, m2);
        let names: Vec<_> = m1.files.iter().map(|f| f.file.as_str()).collect();
        assert_eq!(names, ["points.csv", "fit.json"]);
        let a = fs::read(dir.path().join("a").join(MANIFEST_FILE)).unwrap();
        let b = fs::read(dir.path().join("b").join(MANIFEST_FILE)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_one_file_per_stage() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_results(&bundle(), OutputFormat::Json, dir.path()).unwrap();
        let names: Vec<_> = m.files.iter().map(|f| f.file.as_str()).collect();
        assert_eq!(names, ["points.json", "fit.json"]);
        assert!(dir.path().join(MANIFEST_FILE).exists());
        let back: Table = serde_json::from_slice(&fs::read(dir.path().join("points.json")).unwrap()).unwrap();
        assert_eq!(&back, bundle().table("points").unwrap());
    }

    #[test]
    fn unwritable_dir_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let target = blocker.join("sub");
        match write_results(&bundle(), OutputFormat::Csv, &target).unwrap_err() {
            Error::Io { path, .. } => assert_eq!(path, target),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn read_power_with_and_without_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        fs::write(&p, "power_uW,rate_Hz,rate_err_Hz\n20,20,2\n30,45,4.5\n").unwrap();
        let (pw, g, e) = read_power_csv(&p).unwrap();
        assert_eq!(pw, [20.0, 30.0]);
        assert_eq!(g, [20.0, 45.0]);
        assert_eq!(e.unwrap(), [2.0, 4.5]);
        fs::write(&p, "power_uW,rate_Hz,rate_err_Hz\n20,20,\n30,45,\n").unwrap();
        assert!(read_power_csv(&p).unwrap().2.is_none());
        fs::write(&p, "power_uW,rate_Hz\n20,x\n").unwrap();
        assert!(matches!(read_power_csv(&p), Err(Error::Csv(_))));
        assert!(matches!(read_power_csv(&dir.path().join("none.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn traces_round_trip() {
        let traces = vec![
            PhotonTrace {
                windows: vec![
                    ReadoutWindow { index: 0, t_start: 0.0, t_stop: 1e-3, detuning: 0.0, count: 14 },
                    ReadoutWindow { index: 1, t_start: 2e-3, t_stop: 3e-3, detuning: 0.0, count: 0 },
                ],
            },
            PhotonTrace { windows: vec![ReadoutWindow { index: 0, t_start: 0.0, t_stop: 1e-3, detuning: 0.0, count: 3 }] },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traces.csv");
        fs::write(&p, traces_table(&traces).to_csv()).unwrap();
        let back = read_traces_csv(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].counts(), [14, 0]);
        assert_eq!(back[1].counts(), [3]);
        assert!((back[0].windows[1].t_start - 2e-3).abs() < 1e-15);
    }
}
