//! Feature image persistence: a flat binary tensor file plus a JSON
//! sidecar with window metadata.
//!
//! Layout: 16-byte header (magic "HARI", u8 version, u8 kind, u16 reserved,
//! u32 height, u32 width, little-endian), then H*W*D 32-bit little-endian
//! floats, row-major, channel-last.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureImage, ImageKind};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HARI";
const VERSION: u8 = 1;

pub fn write_feature_image(path: &Path, img: &FeatureImage) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION, img.kind.code()])?;
    out.write_all(&0u16.to_le_bytes())?;
    out.write_all(&(img.height as u32).to_le_bytes())?;
    out.write_all(&(img.width as u32).to_le_bytes())?;
    for &v in &img.pixels {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a feature image. Provenance comes from the sidecar; the returned
/// image carries 0 until the caller joins the two.
pub fn read_feature_image(path: &Path) -> Result<FeatureImage> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let path_str = path.display().to_string();
    let malformed = |detail: &str| Error::MalformedFile {
        path: path_str.clone(),
        detail: detail.to_string(),
    };

    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| malformed("header shorter than 16 bytes"))?;
    if &header[0..4] != MAGIC {
        return Err(malformed("bad magic"));
    }
    if header[4] != VERSION {
        return Err(malformed(&format!("unsupported version {}", header[4])));
    }
    let kind = ImageKind::from_code(header[5]).ok_or_else(|| malformed("unknown image kind"))?;
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;

    let n = height * width * kind.depth();
    let mut raw = vec![0u8; n * 4];
    file.read_exact(&mut raw)
        .map_err(|_| malformed("pixel payload truncated"))?;
    let mut trailing = [0u8; 1];
    if file.read(&mut trailing)? != 0 {
        return Err(malformed("trailing bytes after pixel payload"));
    }
    let pixels = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(FeatureImage {
        height,
        width,
        kind,
        pixels,
        provenance: 0,
    })
}

/// Per-image metadata stored next to the tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSidecar {
    pub window_id: u64,
    pub label: String,
    pub subject: String,
    /// Origin window id when the image derives from an augmented sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<u64>,
    /// Human-readable transform descriptor for augmented samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<String>,
    /// Hash of the pipeline config that produced the artifact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub fn write_sidecar(path: &Path, meta: &ImageSidecar) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), meta)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<ImageSidecar> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_image() -> FeatureImage {
        FeatureImage {
            height: 3,
            width: 4,
            kind: ImageKind::Freq,
            pixels: (0..12).map(|i| i as f64 / 11.0).collect(),
            provenance: 9,
        }
    }

    #[test]
    fn round_trip_preserves_header_and_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.hari");
        let img = sample_image();
        write_feature_image(&path, &img).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"HARI");
        assert_eq!(bytes.len(), 16 + 12 * 4);

        let back = read_feature_image(&path).unwrap();
        assert_eq!((back.height, back.width, back.kind), (3, 4, ImageKind::Freq));
        for (a, b) in back.pixels.iter().zip(&img.pixels) {
            assert!((a - b).abs() < 1e-7); // f32 storage
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.hari");
        write_feature_image(&path, &sample_image()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            read_feature_image(&path),
            Err(Error::MalformedFile { .. })
        ));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.json");
        let meta = ImageSidecar {
            window_id: 12,
            label: "HN".into(),
            subject: "s2".into(),
            origin: Some(4),
            transform: Some("rot(+0.3927)".into()),
            config_hash: Some("abc123".into()),
        };
        write_sidecar(&path, &meta).unwrap();
        assert_eq!(read_sidecar(&path).unwrap(), meta);
    }
}
