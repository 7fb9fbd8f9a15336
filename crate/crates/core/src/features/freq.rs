//! Frequency feature transform: 2D DFT of the row-expanded signal image,
//! log magnitude, centered half-spectrum, min-max normalized.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureImage, ImageKind, SignalImage};
use crate::error::{Error, Result};

/// Full 2D DFT of a real matrix, uncentered, no normalization factor.
pub fn dft2(img: &SignalImage) -> Vec<Complex<f64>> {
    let (rows, cols) = (img.rows, img.cols);
    let mut buf: Vec<Complex<f64>> = img.data.iter().map(|&v| Complex::new(v, 0.0)).collect();

    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(cols);
    for r in 0..rows {
        row_fft.process(&mut buf[r * cols..(r + 1) * cols]);
    }
    let col_fft = planner.plan_fft_forward(rows);
    let mut column = vec![Complex::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = buf[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            buf[r * cols + c] = column[r];
        }
    }
    buf
}

/// The pre-normalization frequency image: log(1+|F|) with the spectrum
/// centered vertically (DC row at floor(R/2)) and only the nonnegative
/// column frequencies 0..T/2-1 kept — the half that remains informative
/// under conjugate symmetry. Output is R x T/2.
pub fn freq_pre_norm(expanded: &SignalImage) -> Result<SignalImage> {
    let (rows, cols) = (expanded.rows, expanded.cols);
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidParameter(format!(
            "frequency transform needs at least a 2x2 image, got {rows}x{cols}"
        )));
    }
    if cols % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "frequency transform needs an even width, got {cols}"
        )));
    }
    if expanded.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "frequency transform input".into(),
        });
    }

    let spectrum = dft2(expanded);
    let half = cols / 2;
    let mut out = SignalImage::zeros(rows, half);
    for r in 0..rows {
        // Output row r holds source frequency u = r - floor(R/2).
        let u = (r as i64 - (rows / 2) as i64).rem_euclid(rows as i64) as usize;
        for v in 0..half {
            out.data[r * half + v] = (1.0 + spectrum[u * cols + v].norm()).ln();
        }
    }
    Ok(out)
}

/// Full frequency feature transform: [`freq_pre_norm`] followed by per-image
/// min-max normalization to [0,1]. A constant image maps to all zeros.
pub fn freq_transform(expanded: &SignalImage, provenance: u64) -> Result<FeatureImage> {
    let pre = freq_pre_norm(expanded)?;
    let mut pixels = pre.data;
    let (lo, hi) = pixels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi > lo {
        let span = hi - lo;
        for v in pixels.iter_mut() {
            *v = (*v - lo) / span;
        }
    } else {
        pixels.fill(0.0);
    }
    Ok(FeatureImage {
        height: pre.rows,
        width: pre.cols,
        kind: ImageKind::Freq,
        pixels,
        provenance,
    })
}
