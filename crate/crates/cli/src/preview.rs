//! Portable image previews: binary PGM for single-channel features, PPM
//! for three-channel ones. Pixel values in [0,1] map to 8-bit.

use std::io::Write;
use std::path::Path;

use anyhow::Result;

use har_core::features::FeatureImage;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_pgm(path: &Path, img: &FeatureImage) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img.pixels.iter().map(|&v| to_byte(v)).collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn write_ppm(path: &Path, img: &FeatureImage) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img.pixels.iter().map(|&v| to_byte(v)).collect();
    out.write_all(&bytes)?;
    Ok(())
}
