//! Signal CSV, reconstruction CSV and JSON artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use odesig_core::datagen::{EvalCase, Observation, RoiSeries, SignalSample, Target};
use odesig_core::training::Reconstruction;
use serde::Serialize;
use serde::de::DeserializeOwned;

pub const SIGNAL_HEADER: [&str; 5] = ["sample_id", "roi", "timestamp", "value", "observed"];
pub const RECONSTRUCTION_HEADER: [&str; 4] = ["sample_id", "roi", "timestamp", "value"];

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid sample {id}: {source}")]
    Sample { id: u64, source: odesig_core::Error },
}

/// Config hash and seed stamped on every artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn comment_line(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

/// Creates `dir` when its parent exists.
pub fn ensure_dir(dir: &Path) -> Result<(), IoError> {
    if dir.is_dir() {
        return Ok(());
    }
    fs::create_dir(dir).map_err(|e| file_err(dir, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|e| file_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Shortest text that parses back to the same `f64`.
fn exact(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_signals<W: Write>(
    out: W,
    samples: &[SignalSample],
    provenance: &Provenance,
) -> Result<(), IoError> {
    let mut out = out;
    out.write_all(provenance.comment_line().as_bytes())
        .map_err(|e| file_err(Path::new("<signals>"), e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SIGNAL_HEADER)?;
    for s in samples {
        for (r, series) in s.rois.iter().enumerate() {
            for p in &series.points {
                w.write_record([
                    s.id.to_string(),
                    r.to_string(),
                    format!("{:.9}", p.t),
                    exact(p.value),
                    if p.observed { "1" } else { "0" }.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| file_err(Path::new("<signals>"), e))?;
    Ok(())
}

pub fn write_signals_file(
    path: &Path,
    samples: &[SignalSample],
    provenance: &Provenance,
) -> Result<(), IoError> {
    let mut buf = Vec::new();
    write_signals(&mut buf, samples, provenance)?;
    write_file(path, &buf)
}

/// Samples read from a signal CSV.
///
/// Points marked unobserved are kept as such; their values become scoring
/// targets in [`LoadedSignals::cases`].
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSignals {
    pub samples: Vec<SignalSample>,
    pub provenance: Option<Provenance>,
}

impl LoadedSignals {
    pub fn cases(&self) -> Vec<EvalCase> {
        self.samples
            .iter()
            .map(|s| {
                let targets = s
                    .rois
                    .iter()
                    .enumerate()
                    .flat_map(|(r, series)| {
                        series
                            .points
                            .iter()
                            .filter(|p| !p.observed)
                            .map(move |p| Target {
                                roi: r,
                                t: p.t,
                                value: p.value,
                            })
                    })
                    .collect();
                EvalCase {
                    sample: s.clone(),
                    targets,
                }
            })
            .collect()
    }
}

fn parse_comment(line: &str) -> Option<Provenance> {
    let body = line.strip_prefix('#')?.trim();
    let mut hash = None;
    let mut seed = None;
    for part in body.split_whitespace() {
        if let Some(v) = part.strip_prefix("config_hash=") {
            hash = Some(v.to_string());
        } else if let Some(v) = part.strip_prefix("seed=") {
            seed = v.parse().ok();
        }
    }
    Some(Provenance {
        config_hash: hash?,
        seed: seed?,
    })
}

fn field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    line: u64,
) -> Result<T, IoError> {
    let raw = record.get(idx).unwrap_or("");
    raw.trim().parse().map_err(|_| IoError::Parse {
        line,
        message: format!("column '{}' has invalid value '{raw}'", SIGNAL_HEADER[idx]),
    })
}

pub fn read_signals<R: Read>(input: R) -> Result<LoadedSignals, IoError> {
    let mut reader = BufReader::new(input);
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| file_err(Path::new("<signals>"), e))?;
    let provenance = text.lines().next().and_then(parse_comment);
    let mut csv_reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let header_line = text.lines().position(|l| !l.starts_with('#')).unwrap_or(0) as u64 + 1;
    let headers = csv_reader.headers()?.clone();
    if headers.iter().map(str::trim).ne(SIGNAL_HEADER) {
        return Err(IoError::Parse {
            line: header_line,
            message: format!("expected header '{}'", SIGNAL_HEADER.join(",")),
        });
    }
    // sample id → roi → points
    let mut grouped: BTreeMap<u64, BTreeMap<usize, Vec<Observation>>> = BTreeMap::new();
    for record in csv_reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != SIGNAL_HEADER.len() {
            return Err(IoError::Parse {
                line,
                message: format!(
                    "expected {} columns, found {}",
                    SIGNAL_HEADER.len(),
                    record.len()
                ),
            });
        }
        let id: u64 = field(&record, 0, line)?;
        let roi: usize = field(&record, 1, line)?;
        let t: f64 = field(&record, 2, line)?;
        let value: f64 = field(&record, 3, line)?;
        let observed = match record.get(4).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(IoError::Parse {
                    line,
                    message: format!(
                        "column 'observed' must be 0 or 1, got '{}'",
                        other.unwrap_or("")
                    ),
                });
            }
        };
        if !t.is_finite() || !value.is_finite() {
            return Err(IoError::Parse {
                line,
                message: "timestamp and value must be finite".into(),
            });
        }
        grouped
            .entry(id)
            .or_default()
            .entry(roi)
            .or_default()
            .push(Observation { t, value, observed });
    }
    let mut samples = Vec::with_capacity(grouped.len());
    for (id, rois) in grouped {
        let n = rois.len();
        if rois.keys().copied().ne(0..n) {
            return Err(IoError::Parse {
                line: 0,
                message: format!("sample {id}: ROI indices must be 0..{n}"),
            });
        }
        let rois: Vec<RoiSeries> = rois
            .into_values()
            .map(|mut points| {
                points.sort_by(|a, b| a.t.total_cmp(&b.t));
                RoiSeries { points }
            })
            .collect();
        let first = rois
            .iter()
            .flat_map(|r| r.points.iter().map(|p| p.t))
            .fold(f64::INFINITY, f64::min);
        let sample = SignalSample {
            id,
            // Whole-second origin, so small timestamp offsets stay visible
            // to the model as they do in memory.
            origin: (first + 1e-6).floor().min(first),
            rois,
            truth: None,
        };
        sample
            .validate()
            .map_err(|source| IoError::Sample { id, source })?;
        samples.push(sample);
    }
    Ok(LoadedSignals {
        samples,
        provenance,
    })
}

pub fn read_signals_file(path: &Path) -> Result<LoadedSignals, IoError> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    read_signals(file)
}

/// Writes `sample_id,roi,timestamp,value` rows.
pub fn write_reconstructions<W: Write>(
    out: W,
    rows: &[(u64, Reconstruction)],
    provenance: &Provenance,
) -> Result<(), IoError> {
    let mut out = out;
    out.write_all(provenance.comment_line().as_bytes())
        .map_err(|e| file_err(Path::new("<reconstruction>"), e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECONSTRUCTION_HEADER)?;
    for (id, rec) in rows {
        for (r, values) in rec.values.iter().enumerate() {
            for (t, v) in rec.times.iter().zip(values) {
                w.write_record([id.to_string(), r.to_string(), format!("{t:.9}"), exact(*v)])?;
            }
        }
    }
    w.flush()
        .map_err(|e| file_err(Path::new("<reconstruction>"), e))?;
    Ok(())
}

/// Writes held-out points as `sample_id,roi,timestamp,value` rows.
pub fn write_targets_file(
    path: &Path,
    cases: &[EvalCase],
    provenance: &Provenance,
) -> Result<(), IoError> {
    let mut buf = provenance.comment_line().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(RECONSTRUCTION_HEADER)?;
        for case in cases {
            for t in &case.targets {
                w.write_record([
                    case.sample.id.to_string(),
                    t.roi.to_string(),
                    format!("{:.9}", t.t),
                    exact(t.value),
                ])?;
            }
        }
        w.flush().map_err(|e| file_err(path, e))?;
    }
    write_file(path, &buf)
}

/// Line reader that skips `#` comments, for simple CSV consumers.
pub fn data_lines<R: Read>(input: R) -> impl Iterator<Item = String> {
    BufReader::new(input)
        .lines()
        .map_while(Result::ok)
        .filter(|l| !l.starts_with('#'))
}
