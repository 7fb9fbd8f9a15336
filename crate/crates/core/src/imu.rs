//! IMU domain types, recording ingestion, annotation-driven segmentation,
//! and sliding-window sampling.
//!
//! A recording is an ordered stream of 10-channel samples (acceleration,
//! angular velocity, orientation quaternion) at a nominal 50 Hz. Annotations
//! carve out single-activity durations; each duration is then sampled with a
//! fixed-width sliding window to produce the unit every later stage works
//! on: the [`ImuWindow`].

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat::{Quaternion, Vec3};

/// Channel order shared by every window and image row: Eq.-of-motion order
/// (accel xyz, gyro xyz, quaternion xyzw).
pub const CHANNEL_NAMES: [&str; 10] = [
    "ax", "ay", "az", "gx", "gy", "gz", "qx", "qy", "qz", "qw",
];
pub const NUM_CHANNELS: usize = 10;

/// Default window width in timestamps.
pub const DEFAULT_WINDOW_LEN: usize = 64;
/// Default window overlap fraction.
pub const DEFAULT_OVERLAP: f64 = 0.75;

/// One timestamped IMU sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuRecord {
    /// Timestamp in integer milliseconds.
    pub t: i64,
    pub accel: Vec3,
    pub gyro: Vec3,
    pub orientation: Quaternion,
}

impl ImuRecord {
    /// Channel value in the canonical order.
    pub fn channel(&self, idx: usize) -> f64 {
        match idx {
            0 => self.accel.x,
            1 => self.accel.y,
            2 => self.accel.z,
            3 => self.gyro.x,
            4 => self.gyro.y,
            5 => self.gyro.z,
            6 => self.orientation.x,
            7 => self.orientation.y,
            8 => self.orientation.z,
            9 => self.orientation.w,
            _ => panic!("channel index {idx} out of range"),
        }
    }

    fn all_finite(&self) -> bool {
        self.accel.x.is_finite()
            && self.accel.y.is_finite()
            && self.accel.z.is_finite()
            && self.gyro.x.is_finite()
            && self.gyro.y.is_finite()
            && self.gyro.z.is_finite()
            && self.orientation.is_finite()
    }
}

/// An ordered single-subject sensor stream.
#[derive(Debug, Clone)]
pub struct Recording {
    pub subject: String,
    pub records: Vec<ImuRecord>,
    /// Nominal sample rate. Mismatches against observed spacing are
    /// surfaced by [`Recording::rate_mismatch`], never resampled.
    pub rate_hz: f64,
}

impl Recording {
    pub fn new(subject: impl Into<String>, records: Vec<ImuRecord>, rate_hz: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidParameter("recording has no records".into()));
        }
        if !(rate_hz > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rate_hz must be positive, got {rate_hz}"
            )));
        }
        Ok(Self {
            subject: subject.into(),
            records,
            rate_hz,
        })
    }

    /// Returns the observed mean inter-sample interval when it deviates
    /// more than 10% from the nominal rate.
    pub fn rate_mismatch(&self) -> Option<f64> {
        if self.records.len() < 2 {
            return None;
        }
        let span = (self.records.last().unwrap().t - self.records[0].t) as f64;
        let mean_dt = span / (self.records.len() - 1) as f64;
        let nominal_dt = 1000.0 / self.rate_hz;
        if (mean_dt - nominal_dt).abs() > 0.1 * nominal_dt {
            Some(mean_dt)
        } else {
            None
        }
    }
}

/// A labeled activity duration inside one subject's stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub subject: String,
    pub label: String,
    pub start_ms: i64,
    pub end_ms: i64,
}

impl Annotation {
    pub fn new(
        subject: impl Into<String>,
        label: impl Into<String>,
        start_ms: i64,
        end_ms: i64,
    ) -> Result<Self> {
        if start_ms >= end_ms {
            return Err(Error::InvalidParameter(format!(
                "annotation bounds must satisfy start < end, got [{start_ms},{end_ms})"
            )));
        }
        Ok(Self {
            subject: subject.into(),
            label: label.into(),
            start_ms,
            end_ms,
        })
    }
}

/// One fixed-width 10-channel sample: the unit of classification.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow {
    /// Stable id, assigned when the window joins a dataset.
    pub id: u64,
    /// Row-major 10 x t_len channel matrix in [`CHANNEL_NAMES`] order.
    pub channels: Vec<f64>,
    pub t_len: usize,
    pub subject: String,
    pub label: String,
    /// Timestamp of the first sample.
    pub t0: i64,
}

impl ImuWindow {
    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx * self.t_len..(idx + 1) * self.t_len]
    }

    /// Orientation sample at timestep `t`.
    pub fn orientation_at(&self, t: usize) -> Quaternion {
        Quaternion::new(
            self.channels[6 * self.t_len + t],
            self.channels[7 * self.t_len + t],
            self.channels[8 * self.t_len + t],
            self.channels[9 * self.t_len + t],
        )
    }

    pub fn set_orientation_at(&mut self, t: usize, q: Quaternion) {
        self.channels[6 * self.t_len + t] = q.x;
        self.channels[7 * self.t_len + t] = q.y;
        self.channels[8 * self.t_len + t] = q.z;
        self.channels[9 * self.t_len + t] = q.w;
    }
}

/// A window collection with its label and subject catalogs.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub windows: Vec<ImuWindow>,
    pub class_names: Vec<String>,
    pub subjects: Vec<String>,
}

impl Dataset {
    /// Builds catalogs from the windows themselves (sorted, deduplicated)
    /// and assigns sequential window ids.
    pub fn assemble(mut windows: Vec<ImuWindow>) -> Self {
        let class_names: Vec<String> = windows
            .iter()
            .map(|w| w.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let subjects: Vec<String> = windows
            .iter()
            .map(|w| w.subject.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for (i, w) in windows.iter_mut().enumerate() {
            w.id = i as u64;
        }
        Self {
            windows,
            class_names,
            subjects,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "dataset needs at least 2 classes, has {}",
                self.class_names.len()
            )));
        }
        for w in &self.windows {
            if !self.class_names.contains(&w.label) {
                return Err(Error::InvalidParameter(format!(
                    "window label '{}' missing from class catalog",
                    w.label
                )));
            }
            if !self.subjects.contains(&w.subject) {
                return Err(Error::InvalidParameter(format!(
                    "window subject '{}' missing from subject catalog",
                    w.subject
                )));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == label)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// How a source column is referenced: by header name or 0-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    Comma,
    Tab,
    Semicolon,
    Whitespace,
}

impl Delimiter {
    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
            Delimiter::Semicolon => line.split(';').map(str::trim).collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    /// Integer milliseconds (canonical).
    Ms,
    /// Decimal seconds, converted to the nearest millisecond.
    S,
}

/// Binds the 11 source columns (t plus the 10 channels) to a file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub delimiter: Delimiter,
    pub has_header: bool,
    pub time_unit: TimeUnit,
    pub t: ColumnRef,
    pub ax: ColumnRef,
    pub ay: ColumnRef,
    pub az: ColumnRef,
    pub gx: ColumnRef,
    pub gy: ColumnRef,
    pub gz: ColumnRef,
    pub qx: ColumnRef,
    pub qy: ColumnRef,
    pub qz: ColumnRef,
    pub qw: ColumnRef,
}

impl Default for ColumnMap {
    /// The canonical layout written by this crate: comma-delimited with a
    /// `t,ax,..,qw` header and millisecond timestamps.
    fn default() -> Self {
        let name = |s: &str| ColumnRef::Name(s.to_string());
        Self {
            delimiter: Delimiter::Comma,
            has_header: true,
            time_unit: TimeUnit::Ms,
            t: name("t"),
            ax: name("ax"),
            ay: name("ay"),
            az: name("az"),
            gx: name("gx"),
            gy: name("gy"),
            gz: name("gz"),
            qx: name("qx"),
            qy: name("qy"),
            qz: name("qz"),
            qw: name("qw"),
        }
    }
}

impl ColumnMap {
    /// Preset for space-delimited PAMAP2-style dumps: headerless, decimal
    /// seconds in column 0, hand-IMU 16g accelerometer, gyro, and 4-channel
    /// orientation at their published column positions.
    pub fn pamap2_hand() -> Self {
        let idx = ColumnRef::Index;
        Self {
            delimiter: Delimiter::Whitespace,
            has_header: false,
            time_unit: TimeUnit::S,
            t: idx(0),
            ax: idx(4),
            ay: idx(5),
            az: idx(6),
            gx: idx(10),
            gy: idx(11),
            gz: idx(12),
            qx: idx(16),
            qy: idx(17),
            qz: idx(18),
            qw: idx(19),
        }
    }

    fn ordered(&self) -> [(&'static str, &ColumnRef); 11] {
        [
            ("t", &self.t),
            ("ax", &self.ax),
            ("ay", &self.ay),
            ("az", &self.az),
            ("gx", &self.gx),
            ("gy", &self.gy),
            ("gz", &self.gz),
            ("qx", &self.qx),
            ("qy", &self.qy),
            ("qz", &self.qz),
            ("qw", &self.qw),
        ]
    }

    /// Resolves every reference to a concrete column index given the header
    /// (absent for headerless files).
    fn resolve(&self, header: Option<&[&str]>) -> Result<[usize; 11]> {
        let mut out = [0usize; 11];
        for (slot, (field, re)) in self.ordered().iter().enumerate() {
            out[slot] = match re {
                ColumnRef::Index(i) => *i,
                ColumnRef::Name(name) => {
                    let header = header.ok_or_else(|| Error::MissingColumn(name.clone()))?;
                    header
                        .iter()
                        .position(|h| h == name)
                        .ok_or_else(|| Error::MissingColumn(format!("{field} -> {name}")))?
                }
            };
        }
        Ok(out)
    }
}

/// Result of ingesting one recording file.
#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub recording: Recording,
    /// Rows removed because a channel value was NaN or infinite.
    pub dropped_non_finite: usize,
}

/// Parses a delimited recording file into timestamp-ordered records.
///
/// Rows containing non-finite channel values are dropped and counted.
/// Timestamps must strictly increase; the first violation is reported with
/// its data-row index.
pub fn ingest_recording(
    path: &Path,
    map: &ColumnMap,
    subject: &str,
    rate_hz: f64,
) -> Result<IngestOutcome> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let path_str = path.display().to_string();

    let mut lines = reader.lines().enumerate();
    let indices = if map.has_header {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                let fields = map.delimiter.split(&line);
                map.resolve(Some(&fields))?
            }
            None => return Err(Error::EmptyFile(path_str)),
        }
    } else {
        map.resolve(None)?
    };

    let mut records = Vec::new();
    let mut dropped = 0usize;
    let mut data_row = 0usize;
    let mut row_of = Vec::new();
    for (line_no, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = map.delimiter.split(&line);
        let get = |slot: usize| -> Result<&str> {
            fields.get(indices[slot]).copied().ok_or(Error::Parse {
                path: path_str.clone(),
                line: line_no + 1,
                detail: format!("row has {} fields, need column {}", fields.len(), indices[slot]),
            })
        };
        let t: i64 = match map.time_unit {
            TimeUnit::Ms => get(0)?.parse().map_err(|e| Error::Parse {
                path: path_str.clone(),
                line: line_no + 1,
                detail: format!("timestamp: {e}"),
            })?,
            TimeUnit::S => {
                let secs: f64 = get(0)?.parse().map_err(|e| Error::Parse {
                    path: path_str.clone(),
                    line: line_no + 1,
                    detail: format!("timestamp: {e}"),
                })?;
                (secs * 1000.0).round() as i64
            }
        };
        let mut vals = [0.0f64; 10];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = get(k + 1)?.parse().map_err(|e| Error::Parse {
                path: path_str.clone(),
                line: line_no + 1,
                detail: format!("channel {}: {e}", CHANNEL_NAMES[k]),
            })?;
        }
        let rec = ImuRecord {
            t,
            accel: Vec3::new(vals[0], vals[1], vals[2]),
            gyro: Vec3::new(vals[3], vals[4], vals[5]),
            orientation: Quaternion::new(vals[6], vals[7], vals[8], vals[9]),
        };
        if rec.all_finite() {
            records.push(rec);
            row_of.push(data_row);
        } else {
            dropped += 1;
        }
        data_row += 1;
    }

    if records.is_empty() {
        return Err(Error::EmptyFile(path_str));
    }
    for i in 1..records.len() {
        if records[i].t <= records[i - 1].t {
            return Err(Error::NonMonotonicTimestamps {
                row: row_of[i],
                t: records[i].t,
                prev: records[i - 1].t,
            });
        }
    }

    Ok(IngestOutcome {
        recording: Recording::new(subject, records, rate_hz)?,
        dropped_non_finite: dropped,
    })
}

/// Writes a recording in the canonical comma-delimited layout.
pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "t,{}", CHANNEL_NAMES.join(","))?;
    for r in &rec.records {
        write!(out, "{}", r.t)?;
        for c in 0..NUM_CHANNELS {
            write!(out, ",{}", r.channel(c))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a `subject,label,start_ms,end_ms` annotation file.
pub fn read_annotations(path: &Path, delimiter: Delimiter) -> Result<Vec<Annotation>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let path_str = path.display().to_string();
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(Error::EmptyFile(path_str)),
    };
    let cols = delimiter.split(&header);
    let col = |name: &str| -> Result<usize> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (si, li, st, en) = (col("subject")?, col("label")?, col("start_ms")?, col("end_ms")?);
    let mut anns = Vec::new();
    for (line_no, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = delimiter.split(&line);
        let parse_i64 = |idx: usize, what: &str| -> Result<i64> {
            fields
                .get(idx)
                .ok_or_else(|| Error::Parse {
                    path: path_str.clone(),
                    line: line_no + 1,
                    detail: format!("missing {what}"),
                })?
                .parse()
                .map_err(|e| Error::Parse {
                    path: path_str.clone(),
                    line: line_no + 1,
                    detail: format!("{what}: {e}"),
                })
        };
        anns.push(Annotation::new(
            fields.get(si).copied().unwrap_or_default(),
            fields.get(li).copied().unwrap_or_default(),
            parse_i64(st, "start_ms")?,
            parse_i64(en, "end_ms")?,
        )?);
    }
    Ok(anns)
}

pub fn write_annotations(path: &Path, anns: &[Annotation]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "subject,label,start_ms,end_ms")?;
    for a in anns {
        writeln!(out, "{},{},{},{}", a.subject, a.label, a.start_ms, a.end_ms)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Segmentation and sampling
// ---------------------------------------------------------------------------

/// One annotation's slice of records.
#[derive(Debug, Clone)]
pub struct Segment {
    pub label: String,
    pub subject: String,
    pub records: Vec<ImuRecord>,
    /// Index of the producing annotation in the input list.
    pub ann_index: usize,
}

/// Segmentation result with short-slice diagnostics.
#[derive(Debug, Clone)]
pub struct Segmentation {
    /// One slice per annotation, input order preserved.
    pub segments: Vec<Segment>,
    /// Annotations whose slice is shorter than the window width; these are
    /// reported rather than silently dropped.
    pub short: Vec<ShortSegment>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortSegment {
    pub ann_index: usize,
    pub label: String,
    pub len: usize,
}

/// Slices a recording by annotations: each slice holds exactly the records
/// with start_ms <= t < end_ms. Annotations must belong to the recording's
/// subject and must not overlap.
pub fn segment(rec: &Recording, anns: &[Annotation], min_len: usize) -> Result<Segmentation> {
    for a in anns {
        if a.subject != rec.subject {
            return Err(Error::SubjectMismatch {
                ann: a.subject.clone(),
                rec: rec.subject.clone(),
            });
        }
    }
    let mut sorted: Vec<&Annotation> = anns.iter().collect();
    sorted.sort_by_key(|a| a.start_ms);
    for pair in sorted.windows(2) {
        if pair[1].start_ms < pair[0].end_ms {
            return Err(Error::OverlappingAnnotations {
                subject: rec.subject.clone(),
                a_start: pair[0].start_ms,
                a_end: pair[0].end_ms,
                b_start: pair[1].start_ms,
                b_end: pair[1].end_ms,
            });
        }
    }

    let mut segments = Vec::with_capacity(anns.len());
    let mut short = Vec::new();
    for (ann_index, a) in anns.iter().enumerate() {
        let lo = rec.records.partition_point(|r| r.t < a.start_ms);
        let hi = rec.records.partition_point(|r| r.t < a.end_ms);
        let records = rec.records[lo..hi].to_vec();
        if records.len() < min_len {
            short.push(ShortSegment {
                ann_index,
                label: a.label.clone(),
                len: records.len(),
            });
        }
        segments.push(Segment {
            label: a.label.clone(),
            subject: rec.subject.clone(),
            records,
            ann_index,
        });
    }
    Ok(Segmentation { segments, short })
}

/// Stride implied by a window width and overlap fraction.
pub fn window_stride(t_len: usize, overlap: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidParameter(format!(
            "overlap must be in [0,1), got {overlap}"
        )));
    }
    let stride = (t_len as f64 * (1.0 - overlap)).round() as usize;
    if stride < 1 {
        return Err(Error::InvalidParameter(format!(
            "stride rounds to zero for T={t_len}, overlap={overlap}"
        )));
    }
    Ok(stride)
}

/// Cuts a segment into fixed-width windows. A slice of length L yields
/// floor((L-T)/stride)+1 windows when L >= T, otherwise none. Window ids
/// are assigned later by [`Dataset::assemble`].
pub fn sliding_windows(seg: &Segment, t_len: usize, overlap: f64) -> Result<Vec<ImuWindow>> {
    let stride = window_stride(t_len, overlap)?;
    let len = seg.records.len();
    if len < t_len {
        return Ok(Vec::new());
    }
    let count = (len - t_len) / stride + 1;
    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        let mut channels = vec![0.0f64; NUM_CHANNELS * t_len];
        for c in 0..NUM_CHANNELS {
            for t in 0..t_len {
                channels[c * t_len + t] = seg.records[start + t].channel(c);
            }
        }
        windows.push(ImuWindow {
            id: 0,
            channels,
            t_len,
            subject: seg.subject.clone(),
            label: seg.label.clone(),
            t0: seg.records[start].t,
        });
    }
    Ok(windows)
}

/// Builds a dataset from recordings and their annotations: segment, window,
/// assemble, validate.
pub fn build_dataset(
    recordings: &[Recording],
    annotations: &[Annotation],
    t_len: usize,
    overlap: f64,
) -> Result<(Dataset, Vec<ShortSegment>)> {
    let mut windows = Vec::new();
    let mut short_all = Vec::new();
    for rec in recordings {
        // Annotations bind to a recording by subject and time overlap, so
        // several recordings per subject can live on one session timeline.
        let first_t = rec.records[0].t;
        let last_t = rec.records.last().unwrap().t;
        let anns: Vec<Annotation> = annotations
            .iter()
            .filter(|a| a.subject == rec.subject && a.start_ms <= last_t && a.end_ms > first_t)
            .cloned()
            .collect();
        let seg = segment(rec, &anns, t_len)?;
        short_all.extend(seg.short);
        for s in &seg.segments {
            windows.extend(sliding_windows(s, t_len, overlap)?);
        }
    }
    let ds = Dataset::assemble(windows);
    ds.validate()?;
    Ok((ds, short_all))
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

/// Per-subject, per-class window counts.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryTable {
    pub subjects: Vec<String>,
    pub classes: Vec<String>,
    /// counts[subject][class]
    pub counts: Vec<Vec<usize>>,
    pub total: usize,
}

pub fn dataset_summary(ds: &Dataset) -> SummaryTable {
    let mut counts = vec![vec![0usize; ds.class_names.len()]; ds.subjects.len()];
    for w in &ds.windows {
        let si = ds.subjects.iter().position(|s| *s == w.subject);
        let ci = ds.class_names.iter().position(|c| *c == w.label);
        if let (Some(si), Some(ci)) = (si, ci) {
            counts[si][ci] += 1;
        }
    }
    SummaryTable {
        subjects: ds.subjects.clone(),
        classes: ds.class_names.clone(),
        counts,
        total: ds.windows.len(),
    }
}

impl fmt::Display for SummaryTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self
            .subjects
            .iter()
            .map(|s| s.len())
            .chain([7])
            .max()
            .unwrap_or(7);
        write!(f, "{:w$}", "subject")?;
        for c in &self.classes {
            write!(f, " {c:>6}")?;
        }
        writeln!(f, " {:>7}", "total")?;
        for (si, s) in self.subjects.iter().enumerate() {
            write!(f, "{s:w$}")?;
            let mut row_total = 0;
            for &n in &self.counts[si] {
                write!(f, " {n:>6}")?;
                row_total += n;
            }
            writeln!(f, " {row_total:>7}")?;
        }
        write!(f, "{:w$}", "total")?;
        for ci in 0..self.classes.len() {
            let col: usize = self.counts.iter().map(|r| r[ci]).sum();
            write!(f, " {col:>6}")?;
        }
        writeln!(f, " {:>7}", self.total)
    }
}
