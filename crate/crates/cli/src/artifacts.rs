//! On-disk stage artifacts: the windows container, per-stage manifests,
//! and provenance checks between stages.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use har_core::features::{read_feature_image, read_sidecar, FeatureImage, ImageSidecar};
use har_core::imu::{Dataset, ImuWindow, NUM_CHANNELS};

const HARB_MAGIC: &[u8; 4] = b"HARB";
const HARB_VERSION: u8 = 1;
const NO_ORIGIN: u64 = u64::MAX;

/// Per-window provenance inside a windows container.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WindowProvenance {
    pub origin: Option<u64>,
    pub descriptor: Option<String>,
}

/// A dataset plus parallel provenance rows, as stored on disk.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub dataset: Dataset,
    pub provenance: Vec<WindowProvenance>,
}

impl WindowSet {
    pub fn originals(dataset: Dataset) -> Self {
        let provenance = vec![WindowProvenance::default(); dataset.windows.len()];
        Self {
            dataset,
            provenance,
        }
    }
}

pub fn write_windows(path: &Path, set: &WindowSet) -> Result<()> {
    let ds = &set.dataset;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(HARB_MAGIC)?;
    out.write_all(&[HARB_VERSION])?;
    let t_len = ds.windows.first().map(|w| w.t_len).unwrap_or(0);
    out.write_all(&(ds.windows.len() as u32).to_le_bytes())?;
    out.write_all(&(t_len as u32).to_le_bytes())?;
    let write_names = |out: &mut dyn Write, names: &[String]| -> Result<()> {
        out.write_all(&(names.len() as u32).to_le_bytes())?;
        for n in names {
            let b = n.as_bytes();
            out.write_all(&(b.len() as u16).to_le_bytes())?;
            out.write_all(b)?;
        }
        Ok(())
    };
    write_names(&mut out, &ds.class_names)?;
    write_names(&mut out, &ds.subjects)?;
    for (w, prov) in ds.windows.iter().zip(&set.provenance) {
        let class_idx = ds
            .class_index(&w.label)
            .ok_or_else(|| anyhow!("label '{}' missing from catalog", w.label))?;
        let subject_idx = ds
            .subjects
            .iter()
            .position(|s| *s == w.subject)
            .ok_or_else(|| anyhow!("subject '{}' missing from catalog", w.subject))?;
        out.write_all(&w.id.to_le_bytes())?;
        out.write_all(&(class_idx as u32).to_le_bytes())?;
        out.write_all(&(subject_idx as u32).to_le_bytes())?;
        out.write_all(&w.t0.to_le_bytes())?;
        out.write_all(&prov.origin.unwrap_or(NO_ORIGIN).to_le_bytes())?;
        let desc = prov.descriptor.as_deref().unwrap_or("");
        out.write_all(&(desc.len() as u16).to_le_bytes())?;
        out.write_all(desc.as_bytes())?;
        for &v in &w.channels {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_windows(path: &Path) -> Result<WindowSet> {
    let mut file = std::io::BufReader::new(
        std::fs::File::open(path).with_context(|| format!("opening '{}'", path.display()))?,
    );
    let mut head = [0u8; 4 + 1 + 4 + 4];
    file.read_exact(&mut head)?;
    if &head[0..4] != HARB_MAGIC || head[4] != HARB_VERSION {
        bail!("'{}' is not a version-{HARB_VERSION} windows file", path.display());
    }
    let n = u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize;
    let t_len = u32::from_le_bytes(head[9..13].try_into().unwrap()) as usize;

    let read_u16 = |file: &mut dyn Read| -> Result<u16> {
        let mut b = [0u8; 2];
        file.read_exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    };
    let read_u32 = |file: &mut dyn Read| -> Result<u32> {
        let mut b = [0u8; 4];
        file.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let read_u64 = |file: &mut dyn Read| -> Result<u64> {
        let mut b = [0u8; 8];
        file.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let read_names = |file: &mut dyn Read| -> Result<Vec<String>> {
        let count = read_u32(file)? as usize;
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u16(file)? as usize;
            let mut buf = vec![0u8; len];
            file.read_exact(&mut buf)?;
            names.push(String::from_utf8(buf)?);
        }
        Ok(names)
    };

    let class_names = read_names(&mut file)?;
    let subjects = read_names(&mut file)?;
    let mut windows = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    for _ in 0..n {
        let id = read_u64(&mut file)?;
        let class_idx = read_u32(&mut file)? as usize;
        let subject_idx = read_u32(&mut file)? as usize;
        let mut t0b = [0u8; 8];
        file.read_exact(&mut t0b)?;
        let t0 = i64::from_le_bytes(t0b);
        let origin = read_u64(&mut file)?;
        let desc_len = read_u16(&mut file)? as usize;
        let mut desc = vec![0u8; desc_len];
        file.read_exact(&mut desc)?;
        let mut raw = vec![0u8; NUM_CHANNELS * t_len * 8];
        file.read_exact(&mut raw)?;
        let channels = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        windows.push(ImuWindow {
            id,
            channels,
            t_len,
            subject: subjects
                .get(subject_idx)
                .ok_or_else(|| anyhow!("subject index out of range"))?
                .clone(),
            label: class_names
                .get(class_idx)
                .ok_or_else(|| anyhow!("class index out of range"))?
                .clone(),
            t0,
        });
        provenance.push(WindowProvenance {
            origin: (origin != NO_ORIGIN).then_some(origin),
            descriptor: if desc.is_empty() {
                None
            } else {
                Some(String::from_utf8(desc)?)
            },
        });
    }
    Ok(WindowSet {
        dataset: Dataset {
            windows,
            class_names,
            subjects,
        },
        provenance,
    })
}

// ---------------------------------------------------------------------------
// Manifests and provenance
// ---------------------------------------------------------------------------

/// Stage manifest, written next to each stage's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let file = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), manifest)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let file = std::fs::File::open(&path)
        .with_context(|| format!("missing stage output '{}'", path.display()))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// A stage-order violation: a required upstream artifact is absent.
#[derive(Debug, thiserror::Error)]
#[error("stage '{needed}' must run before '{current}': {detail}")]
pub struct StageOrderError {
    pub needed: String,
    pub current: String,
    pub detail: String,
}

/// Loads an upstream manifest, surfacing stage order and provenance
/// problems. Hash or seed mismatches warn; absence is fatal.
pub fn require_stage(dir: &Path, needed: &str, current: &str, expected_hash: &str, expected_seed: u64) -> Result<Manifest> {
    let manifest = read_manifest(dir).map_err(|e| {
        anyhow!(StageOrderError {
            needed: needed.to_string(),
            current: current.to_string(),
            detail: format!("{e:#}"),
        })
    })?;
    if manifest.config_hash != expected_hash {
        eprintln!(
            "warning: '{needed}' was produced under config {} but the current config hashes to {expected_hash}",
            manifest.config_hash
        );
    }
    if manifest.seed != expected_seed {
        eprintln!(
            "warning: '{needed}' used seed {} but the current run uses {expected_seed}",
            manifest.seed
        );
    }
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Feature directories
// ---------------------------------------------------------------------------

/// One feature image row joined with its sidecar.
#[derive(Debug, Clone)]
pub struct FeatureRow {
    pub id: u64,
    pub image: FeatureImage,
    pub meta: ImageSidecar,
}

/// Reads every image in a feature directory, ordered by window id.
pub fn read_feature_dir(dir: &Path) -> Result<Vec<FeatureRow>> {
    let mut by_id = BTreeMap::new();
    for entry in std::fs::read_dir(dir)
        .with_context(|| format!("reading feature directory '{}'", dir.display()))?
    {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("hari") {
            continue;
        }
        let mut image = read_feature_image(&path)?;
        let meta = read_sidecar(&path.with_extension("json"))?;
        image.provenance = meta.window_id;
        by_id.insert(meta.window_id, FeatureRow {
            id: meta.window_id,
            image,
            meta,
        });
    }
    if by_id.is_empty() {
        bail!("feature directory '{}' holds no .hari files", dir.display());
    }
    Ok(by_id.into_values().collect())
}

pub fn image_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("{id:08}.hari"))
}
