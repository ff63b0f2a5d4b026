//! Multi-zone DAS recordings: data model, dataset manifest, and the binary
//! trace container.
//!
//! A trace file holds whole [`SampleRecord`]s (three adjacent defense zones
//! each). Labels and radial distances are also carried in the line-oriented
//! manifest so that tooling can select records without touching the payload.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Acquisition rate of the interrogator.
pub const SAMPLE_RATE_HZ: f64 = 2000.0;
/// Samples in one canonical window (10 s at 2 kHz).
pub const WINDOW_LEN: usize = 20_000;
/// Axial length of one defense zone.
pub const ZONE_PITCH_M: f64 = 10.0;

pub const TRACE_MAGIC: &[u8; 4] = b"DAST";
pub const TRACE_VERSION: u16 = 1;

const RECORD_HEADER_BYTES: usize = 4 + 4 + 1;
const RECORD_BYTES: usize = RECORD_HEADER_BYTES + 3 * WINDOW_LEN * 4;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic in {path}: expected \"DAST\"")]
    BadMagic { path: PathBuf },
    #[error("unsupported trace file version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u16 },
    #[error("truncated trace file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("unknown label code {0}")]
    UnknownLabel(u8),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("class {class} has {count} records; at least 5 are needed for a 4:1 split")]
    ClassTooSmall { class: ThreatClass, count: usize },
    #[error("empty dataset")]
    Empty,
}

/// Radial threat area. The integer codes are part of the file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ThreatClass {
    Alarm = 0,
    Tracking = 1,
    NoThreat = 2,
}

impl ThreatClass {
    pub const ALL: [ThreatClass; 3] = [ThreatClass::Alarm, ThreatClass::Tracking, ThreatClass::NoThreat];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Result<Self, TraceError> {
        match code {
            0 => Ok(ThreatClass::Alarm),
            1 => Ok(ThreatClass::Tracking),
            2 => Ok(ThreatClass::NoThreat),
            other => Err(TraceError::UnknownLabel(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ThreatClass::Alarm => "Alarm",
            ThreatClass::Tracking => "Tracking",
            ThreatClass::NoThreat => "NoThreat",
        }
    }
}

impl fmt::Display for ThreatClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ThreatClass {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Alarm" | "alarm" | "0" => Ok(ThreatClass::Alarm),
            "Tracking" | "tracking" | "1" => Ok(ThreatClass::Tracking),
            "NoThreat" | "nothreat" | "no-threat" | "2" => Ok(ThreatClass::NoThreat),
            other => Err(TraceError::Invalid(format!("unknown threat class {other:?}"))),
        }
    }
}

/// One defense zone's waveform window.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneTrace {
    pub zone_index: u32,
    pub samples: Vec<f32>,
    pub sample_rate_hz: f64,
}

impl ZoneTrace {
    pub fn new(zone_index: u32, samples: Vec<f32>) -> Self {
        Self {
            zone_index,
            samples,
            sample_rate_hz: SAMPLE_RATE_HZ,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let ss: f64 = self.samples.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        (ss / self.samples.len() as f64).sqrt()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| f64::from(v)).collect()
    }

    /// Checks the canonical-window invariants.
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.samples.len() != WINDOW_LEN {
            return Err(TraceError::Invalid(format!(
                "zone {} has {} samples, expected {WINDOW_LEN}",
                self.zone_index,
                self.samples.len()
            )));
        }
        if self.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(TraceError::Invalid(format!(
                "zone {} sampled at {} Hz, expected {SAMPLE_RATE_HZ}",
                self.zone_index, self.sample_rate_hz
            )));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(TraceError::Invalid(format!(
                "zone {} sample {i} is not finite",
                self.zone_index
            )));
        }
        Ok(())
    }
}

/// An event window: the center zone plus both neighbours, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub center_zone: u32,
    pub traces: [ZoneTrace; 3],
    pub label: ThreatClass,
    pub radial_distance_m: f32,
}

impl SampleRecord {
    pub fn center(&self) -> &ZoneTrace {
        &self.traces[1]
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.center_zone == 0 {
            return Err(TraceError::Invalid(
                "center zone 0 has no lower neighbour".into(),
            ));
        }
        for (offset, trace) in self.traces.iter().enumerate() {
            let expected = self.center_zone - 1 + offset as u32;
            if trace.zone_index != expected {
                return Err(TraceError::Invalid(format!(
                    "trace {offset} has zone {}, expected {expected}",
                    trace.zone_index
                )));
            }
            trace.validate()?;
        }
        if !(self.radial_distance_m.is_finite() && self.radial_distance_m >= 0.0) {
            return Err(TraceError::Invalid(format!(
                "radial distance {} must be finite and non-negative",
                self.radial_distance_m
            )));
        }
        Ok(())
    }
}

/// Writes `records` to `path`. Every record is validated before the file is
/// created, so an invalid set leaves the filesystem untouched.
pub fn write_trace_file(records: &[SampleRecord], path: &Path) -> Result<(), TraceError> {
    for r in records {
        r.validate()?;
    }
    let count = u32::try_from(records.len())
        .map_err(|_| TraceError::Invalid("too many records for one file".into()))?;
    let io_err = |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(10);
    header.extend_from_slice(TRACE_MAGIC);
    header.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    header.extend_from_slice(&count.to_le_bytes());
    w.write_all(&header).map_err(io_err)?;

    let mut buf = Vec::with_capacity(RECORD_BYTES);
    for r in records {
        buf.clear();
        buf.extend_from_slice(&r.center_zone.to_le_bytes());
        buf.extend_from_slice(&r.radial_distance_m.to_le_bytes());
        buf.push(r.label.code());
        for t in &r.traces {
            for s in &t.samples {
                buf.extend_from_slice(&s.to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<SampleRecord>, TraceError> {
    let bytes = fs::read(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace_bytes(&bytes, path)
}

/// Parses an in-memory trace container; `origin` is only used in errors.
pub fn parse_trace_bytes(bytes: &[u8], origin: &Path) -> Result<Vec<SampleRecord>, TraceError> {
    let truncated = |expected: usize| TraceError::Truncated {
        path: origin.to_path_buf(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(10));
    }
    if &bytes[..4] != TRACE_MAGIC {
        return Err(TraceError::BadMagic {
            path: origin.to_path_buf(),
        });
    }
    if bytes.len() < 10 {
        return Err(truncated(10));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TRACE_VERSION {
        return Err(TraceError::UnsupportedVersion {
            path: origin.to_path_buf(),
            version,
        });
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let expected = 10 + count * RECORD_BYTES;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(TraceError::Invalid(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - expected
        )));
    }

    let mut records = Vec::with_capacity(count);
    let mut at = 10;
    for _ in 0..count {
        let center_zone = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let radial = f32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap());
        let label = ThreatClass::from_code(bytes[at + 8])?;
        at += RECORD_HEADER_BYTES;
        if center_zone == 0 {
            return Err(TraceError::Invalid("center zone 0 has no lower neighbour".into()));
        }
        let traces: [ZoneTrace; 3] = std::array::from_fn(|k| {
            let start = at + k * WINDOW_LEN * 4;
            let samples = bytes[start..start + WINDOW_LEN * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ZoneTrace::new(center_zone - 1 + k as u32, samples)
        });
        at += 3 * WINDOW_LEN * 4;
        let record = SampleRecord {
            center_zone,
            traces,
            label,
            radial_distance_m: radial,
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// One manifest line: `<trace-file>:<record-index>:<label>:<radial_m>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub trace_file: String,
    pub record_index: usize,
    pub label: ThreatClass,
    pub radial_m: f32,
}

impl fmt::Display for ManifestEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.trace_file, self.record_index, self.label, self.radial_m
        )
    }
}

impl FromStr for ManifestEntry {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        // split from the right so the path may itself contain ':'
        let mut parts = line.rsplitn(4, ':');
        let radial = parts.next().ok_or("missing radial distance")?;
        let label = parts.next().ok_or("missing label")?;
        let index = parts.next().ok_or("missing record index")?;
        let file = parts.next().ok_or("missing trace file")?;
        if file.is_empty() {
            return Err("empty trace file".into());
        }
        Ok(ManifestEntry {
            trace_file: file.to_string(),
            record_index: index.parse().map_err(|e| format!("record index: {e}"))?,
            label: label.parse().map_err(|e: TraceError| e.to_string())?,
            radial_m: radial.parse().map_err(|e| format!("radial distance: {e}"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split_seed: u64,
    /// (train, test) proportions.
    pub split_ratio: (u32, u32),
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, split_seed: u64) -> Self {
        Self {
            entries,
            split_seed,
            split_ratio: (4, 1),
        }
    }

    pub fn labels(&self) -> Vec<ThreatClass> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# split_seed={}\n# split_ratio={}:{}\n",
            self.split_seed, self.split_ratio.0, self.split_ratio.1
        );
        for e in &self.entries {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut manifest = DatasetManifest::new(Vec::new(), 0);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let bad = |reason: String| TraceError::Manifest { line: i + 1, reason };
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((key, value)) = meta.trim().split_once('=') {
                    match key.trim() {
                        "split_seed" => {
                            manifest.split_seed =
                                value.trim().parse().map_err(|e| bad(format!("split_seed: {e}")))?
                        }
                        "split_ratio" => {
                            let (a, b) = value
                                .trim()
                                .split_once(':')
                                .ok_or_else(|| bad("split_ratio must be a:b".into()))?;
                            manifest.split_ratio = (
                                a.parse().map_err(|e| bad(format!("split_ratio: {e}")))?,
                                b.parse().map_err(|e| bad(format!("split_ratio: {e}")))?,
                            );
                        }
                        _ => {}
                    }
                }
                continue;
            }
            manifest.entries.push(line.parse().map_err(bad)?);
        }
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<(), TraceError> {
        fs::write(path, self.to_text()).map_err(|source| TraceError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, TraceError> {
        let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Stratified train/test partition, deterministic in `seed`.
    pub fn split(&self, seed: u64) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>), TraceError> {
        split_dataset(self, seed)
    }
}

pub fn split_dataset(
    manifest: &DatasetManifest,
    seed: u64,
) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>), TraceError> {
    let (train, test) = stratified_split(&manifest.labels(), manifest.split_ratio, seed)?;
    Ok((
        train.iter().map(|&i| manifest.entries[i].clone()).collect(),
        test.iter().map(|&i| manifest.entries[i].clone()).collect(),
    ))
}

/// Per-class shuffled partition of indices into (train, test) at `ratio`.
///
/// Each class contributes `round(n * test / (train + test))` test items.
/// Classes absent from `labels` are skipped; classes with 1..=4 items are
/// rejected.
pub fn stratified_split(
    labels: &[ThreatClass],
    ratio: (u32, u32),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), TraceError> {
    if labels.is_empty() {
        return Err(TraceError::Empty);
    }
    let (tr, te) = (ratio.0 as f64, ratio.1 as f64);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in ThreatClass::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 5 {
            return Err(TraceError::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(class.code() as u64 + 1));
        members.shuffle(&mut rng);
        let n_test = ((members.len() as f64) * te / (tr + te)).round() as usize;
        let (a, b) = members.split_at(n_test);
        test.extend_from_slice(a);
        train.extend_from_slice(b);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(center: u32, fill: f32) -> SampleRecord {
        SampleRecord {
            center_zone: center,
            traces: std::array::from_fn(|k| ZoneTrace::new(center - 1 + k as u32, vec![fill; WINDOW_LEN])),
            label: ThreatClass::Tracking,
            radial_distance_m: 20.0,
        }
    }

    #[test]
    fn zero_record_payload_is_all_zero_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.dast");
        write_trace_file(&[record(3, 0.0)], &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 10 + RECORD_BYTES);
        assert_eq!(&bytes[..4], b"DAST");
        assert!(bytes[10 + RECORD_HEADER_BYTES..].iter().all(|&b| b == 0));
    }

    #[test]
    fn short_trace_rejected_without_creating_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dast");
        let mut r = record(3, 0.5);
        r.traces[1].samples.pop();
        assert!(matches!(write_trace_file(&[r], &path), Err(TraceError::Invalid(_))));
        assert!(!path.exists());
    }

    #[test]
    fn corrupted_magic_and_truncation_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.dast");
        write_trace_file(&[record(3, 0.25)], &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(parse_trace_bytes(&bad, &path), Err(TraceError::BadMagic { .. })));

        let mut vers = bytes.clone();
        vers[4] = 9;
        assert!(matches!(
            parse_trace_bytes(&vers, &path),
            Err(TraceError::UnsupportedVersion { version: 9, .. })
        ));

        bytes.truncate(bytes.len() / 2);
        assert!(matches!(parse_trace_bytes(&bytes, &path), Err(TraceError::Truncated { .. })));
    }

    #[test]
    fn non_finite_samples_rejected() {
        let mut r = record(2, 0.0);
        r.traces[2].samples[17] = f32::NAN;
        assert!(r.validate().is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = DatasetManifest::new(
            vec![
                ManifestEntry {
                    trace_file: "C:/data/a.dast".into(),
                    record_index: 4,
                    label: ThreatClass::NoThreat,
                    radial_m: 41.25,
                },
                ManifestEntry {
                    trace_file: "b.dast".into(),
                    record_index: 0,
                    label: ThreatClass::Alarm,
                    radial_m: 5.0,
                },
            ],
            77,
        );
        let back = DatasetManifest::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn split_thousand_per_class() {
        let labels: Vec<_> = ThreatClass::ALL.iter().flat_map(|&c| std::iter::repeat_n(c, 1000)).collect();
        let (train, test) = stratified_split(&labels, (4, 1), 3).unwrap();
        for c in ThreatClass::ALL {
            assert_eq!(train.iter().filter(|&&i| labels[i] == c).count(), 800);
            assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 200);
        }
    }

    #[test]
    fn split_smallest_legal_and_too_small() {
        let labels = vec![ThreatClass::Alarm; 5];
        let (train, test) = stratified_split(&labels, (4, 1), 0).unwrap();
        assert_eq!((train.len(), test.len()), (4, 1));
        let labels = vec![ThreatClass::Alarm; 4];
        assert!(matches!(
            stratified_split(&labels, (4, 1), 0),
            Err(TraceError::ClassTooSmall { count: 4, .. })
        ));
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let labels: Vec<_> = ThreatClass::ALL.iter().flat_map(|&c| std::iter::repeat_n(c, 40)).collect();
        let a = stratified_split(&labels, (4, 1), 11).unwrap();
        let b = stratified_split(&labels, (4, 1), 11).unwrap();
        let c = stratified_split(&labels, (4, 1), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.1, c.1);
    }
}
