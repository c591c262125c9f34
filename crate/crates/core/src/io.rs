// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! CSV and JSON files for traces, spectra and reports.
//!
//! Every file is written to a temporary sibling and renamed into place, so
//! readers never see partial output. CSV files may start with a
//! `# generated_unix=<seconds>` line; JSON documents carry the same stamp as
//! a `generated_unix` field. Both are omitted when stamping is off, which
//! makes output byte-identical across runs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nms::SpectrumData;
use crate::params::JumpRates;
use crate::reconstruct::{Resolution, SpinTrace};
use crate::telegraph::{CountTrace, LevelModel, SpinState};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Format { path: PathBuf, line: u64, message: String },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Whether outputs carry a generation timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stamp(pub Option<u64>);

impl Stamp {
    pub fn now() -> Self {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Stamp(Some(secs))
    }

    pub fn none() -> Self {
        Stamp(None)
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| IoError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Column-oriented CSV output.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self, stamp: Stamp) -> Vec<u8> {
        let mut out = Vec::new();
        if let Some(t) = stamp.0 {
            out.extend_from_slice(format!("# generated_unix={t}\n").as_bytes());
        }
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
        drop(w);
        out
    }

    pub fn write(&self, path: &Path, stamp: Stamp) -> Result<(), IoError> {
        write_atomic(path, &self.to_bytes(stamp))
    }
}

/// Shortest round-trip representation.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Pretty JSON with a trailing newline, stamped if requested.
pub fn json_bytes<T: Serialize>(value: &T, stamp: Stamp) -> Vec<u8> {
    let mut v = serde_json::to_value(value).expect("serializable value");
    if let (Some(t), Some(obj)) = (stamp.0, v.as_object_mut()) {
        obj.insert("generated_unix".into(), t.into());
    }
    let mut out = serde_json::to_vec_pretty(&v).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, stamp: Stamp) -> Result<(), IoError> {
    write_atomic(path, &json_bytes(value, stamp))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("generated_unix");
    }
    serde_json::from_value(v).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a headed CSV, skipping `#` lines, and returns (line, fields) records.
fn read_records(path: &Path, expected: &[&str]) -> Result<Vec<(u64, Vec<String>)>, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let fmt = |line: u64, message: String| IoError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = r.headers().map_err(|e| fmt(1, e.to_string()))?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(fmt(1, format!("expected columns {expected:?}, found {got:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| fmt(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(path: &Path, line: u64, column: &str, s: &str) -> Result<T, IoError> {
    s.parse().map_err(|_| IoError::Format {
        path: path.to_path_buf(),
        line,
        message: format!("bad {column} value {s:?}"),
    })
}

pub fn count_trace_table(t: &CountTrace) -> Table {
    let mut table = Table::new(&["t_ms", "counts"]);
    for (time, c) in t.times_ms().zip(&t.counts) {
        table.push(vec![num(time), c.to_string()]);
    }
    table
}

/// Reads a `t_ms, counts` trace; the bin width comes from the time column
/// unless given.
pub fn read_count_trace(path: &Path, bin_ms: Option<f64>) -> Result<CountTrace, IoError> {
    let recs = read_records(path, &["t_ms", "counts"])?;
    let mut times = Vec::with_capacity(recs.len());
    let mut counts = Vec::with_capacity(recs.len());
    for (line, f) in &recs {
        times.push(parse::<f64>(path, *line, "t_ms", &f[0])?);
        counts.push(parse::<u64>(path, *line, "counts", &f[1])?);
    }
    let fmt = |message: &str| IoError::Format {
        path: path.to_path_buf(),
        line: 0,
        message: message.into(),
    };
    let bin = match (bin_ms, times.len()) {
        (Some(b), _) => b,
        (None, n) if n >= 2 => times[1] - times[0],
        _ => return Err(fmt("cannot infer the bin width from fewer than two rows")),
    };
    if !(bin > 0.0) {
        return Err(fmt("bin width must be positive"));
    }
    Ok(CountTrace::new(bin, times.first().copied().unwrap_or(0.0), counts))
}

pub fn spin_trace_table(s: &SpinTrace) -> Table {
    let mut table = Table::new(&["t_ms", "state", "rule"]);
    for (i, (st, rule)) in s.states.iter().zip(&s.resolution_log).enumerate() {
        let code = match st {
            SpinState::F4 => "0",
            SpinState::F3 => "1",
        };
        table.push(vec![
            num(s.t0_ms + i as f64 * s.bin_ms),
            code.into(),
            rule.label().into(),
        ]);
    }
    table
}

/// Reads a `t_ms, state, rule` spin trace (state 0 = F4, 1 = F3).
pub fn read_spin_trace(path: &Path, bin_ms: Option<f64>) -> Result<SpinTrace, IoError> {
    let recs = read_records(path, &["t_ms", "state", "rule"])?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut log = Vec::new();
    for (line, f) in &recs {
        times.push(parse::<f64>(path, *line, "t_ms", &f[0])?);
        states.push(match f[1].as_str() {
            "0" => SpinState::F4,
            "1" => SpinState::F3,
            other => {
                return Err(IoError::Format {
                    path: path.to_path_buf(),
                    line: *line,
                    message: format!("state must be 0 or 1, got {other:?}"),
                })
            }
        });
        log.push(Resolution::from_label(&f[2]).ok_or_else(|| IoError::Format {
            path: path.to_path_buf(),
            line: *line,
            message: format!("unknown rule {:?}", f[2]),
        })?);
    }
    let bin = bin_ms
        .or_else(|| (times.len() >= 2).then(|| times[1] - times[0]))
        .unwrap_or(0.0);
    if !(bin > 0.0) {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            line: 0,
            message: "cannot determine a positive bin width".into(),
        });
    }
    Ok(SpinTrace {
        bin_ms: bin,
        t0_ms: times.first().copied().unwrap_or(0.0),
        states,
        resolution_log: log,
    })
}

pub fn spectrum_table(s: &SpectrumData) -> Table {
    let mut table = Table::new(&["detuning_mhz", "p_f3", "n_cycles"]);
    for i in 0..s.len() {
        table.push(vec![num(s.detunings_mhz[i]), num(s.p_f3[i]), s.n_cycles[i].to_string()]);
    }
    table
}

pub fn read_spectrum(path: &Path) -> Result<SpectrumData, IoError> {
    let recs = read_records(path, &["detuning_mhz", "p_f3", "n_cycles"])?;
    let mut s = SpectrumData {
        detunings_mhz: Vec::new(),
        p_f3: Vec::new(),
        n_cycles: Vec::new(),
    };
    for (line, f) in &recs {
        s.detunings_mhz.push(parse(path, *line, "detuning_mhz", &f[0])?);
        s.p_f3.push(parse(path, *line, "p_f3", &f[1])?);
        s.n_cycles.push(parse(path, *line, "n_cycles", &f[2])?);
    }
    Ok(s)
}

/// One trace file listed in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub presence: Option<(usize, usize)>,
}

/// Index of an ensemble of trace files, relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `counts` or `spins`.
    pub kind: String,
    pub bin_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub master_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rates: Option<JumpRates>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub level: Option<LevelModel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub det_eff: Option<f64>,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    fn resolve(manifest: &Path, file: &str) -> PathBuf {
        manifest.parent().unwrap_or(Path::new(".")).join(file)
    }

    fn expect_kind(&self, path: &Path, kind: &str) -> Result<(), IoError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(IoError::Json {
                path: path.to_path_buf(),
                message: format!("manifest kind is {:?}, expected {kind:?}", self.kind),
            })
        }
    }

    pub fn read_counts(path: &Path) -> Result<(Manifest, Vec<CountTrace>), IoError> {
        let m: Manifest = read_json(path)?;
        m.expect_kind(path, "counts")?;
        let traces = m
            .files
            .iter()
            .map(|e| read_count_trace(&Self::resolve(path, &e.file), Some(m.bin_ms)))
            .collect::<Result<_, _>>()?;
        Ok((m, traces))
    }

    pub fn read_spins(path: &Path) -> Result<(Manifest, Vec<SpinTrace>), IoError> {
        let m: Manifest = read_json(path)?;
        m.expect_kind(path, "spins")?;
        let traces = m
            .files
            .iter()
            .map(|e| read_spin_trace(&Self::resolve(path, &e.file), Some(m.bin_ms)))
            .collect::<Result<_, _>>()?;
        Ok((m, traces))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = CountTrace::new(2.0, 10.0, vec![3, 40, 0, 17]);
        let p = dir.path().join("t.csv");
        count_trace_table(&t).write(&p, Stamp(Some(5))).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# generated_unix=5\nt_ms,counts\n10,3\n12,40\n"));
        let back = read_count_trace(&p, None).unwrap();
        assert_eq!((back.bin_ms, back.t0_ms, back.counts), (2.0, 10.0, t.counts));
    }

    #[test]
    fn unstamped_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let rates = JumpRates::observed();
        write_json(&p, &rates, Stamp::none()).unwrap();
        assert!(!fs::read_to_string(&p).unwrap().contains("generated_unix"));
        write_json(&p, &rates, Stamp(Some(1))).unwrap();
        assert_eq!(read_json::<JumpRates>(&p).unwrap(), rates);
    }

    #[test]
    fn bad_rows_report_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "detuning_mhz,p_f3,n_cycles\n1,0.2,300\n2,x,300\n").unwrap();
        let e = read_spectrum(&p).unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("p_f3"), "{e}");
    }
}
