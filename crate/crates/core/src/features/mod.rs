//! Window-to-image feature transforms.
//!
//! Two representations are produced per window: a log-magnitude frequency
//! spectrum of the row-expanded channel image ([`freq_transform`]) and an
//! orientation-changing-history raster of the rotated reference vector's
//! trajectory ([`och_transform`]). Both are network inputs in [0,1].

mod freq;
mod image;
mod och;
mod plan;

pub use freq::{dft2, freq_pre_norm, freq_transform};
pub use image::{read_feature_image, read_sidecar, write_feature_image, write_sidecar, ImageSidecar};
pub use och::och_transform;
pub use plan::{build_expansion_plan, RowExpansionPlan};

use crate::error::{Error, Result};
use crate::imu::{ImuWindow, NUM_CHANNELS};

/// A single-channel intermediate matrix (stacked or row-expanded signals).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalImage {
    pub rows: usize,
    pub cols: usize,
    /// Row-major values.
    pub data: Vec<f64>,
}

impl SignalImage {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    Freq,
    Och,
}

impl ImageKind {
    pub fn depth(&self) -> usize {
        match self {
            ImageKind::Freq => 1,
            ImageKind::Och => 3,
        }
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            ImageKind::Freq => 0,
            ImageKind::Och => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ImageKind::Freq),
            1 => Some(ImageKind::Och),
            _ => None,
        }
    }
}

/// A finished network input: H x W x D floats in [0,1], channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub height: usize,
    pub width: usize,
    pub kind: ImageKind,
    /// Row-major, channel-last pixel data of length H*W*D.
    pub pixels: Vec<f64>,
    /// Id of the source window.
    pub provenance: u64,
}

impl FeatureImage {
    pub fn depth(&self) -> usize {
        self.kind.depth()
    }

    pub fn pixel(&self, y: usize, x: usize, d: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.depth() + d]
    }
}

/// Stacks the 10 window channels row by row into a 10 x T image.
pub fn stack_channels(w: &ImuWindow) -> SignalImage {
    SignalImage {
        rows: NUM_CHANNELS,
        cols: w.t_len,
        data: w.channels.clone(),
    }
}

/// Duplicates/reorders rows per the expansion plan: output row i is input
/// row `plan.sequence[i]`.
pub fn expand_rows(stacked: &SignalImage, plan: &RowExpansionPlan) -> Result<SignalImage> {
    let mut out = SignalImage::zeros(plan.sequence.len(), stacked.cols);
    for (i, &src) in plan.sequence.iter().enumerate() {
        if src >= stacked.rows {
            return Err(Error::InvalidParameter(format!(
                "plan row {i} references channel {src}, image has {} rows",
                stacked.rows
            )));
        }
        out.data[i * stacked.cols..(i + 1) * stacked.cols].copy_from_slice(stacked.row(src));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::ImuWindow;

    pub(crate) fn window_with(t_len: usize, fill: impl Fn(usize, usize) -> f64) -> ImuWindow {
        let mut channels = vec![0.0; NUM_CHANNELS * t_len];
        for c in 0..NUM_CHANNELS {
            for t in 0..t_len {
                channels[c * t_len + t] = fill(c, t);
            }
        }
        ImuWindow {
            id: 7,
            channels,
            t_len,
            subject: "s1".into(),
            label: "GT".into(),
            t0: 0,
        }
    }

    #[test]
    fn stack_produces_10_by_t() {
        let w = window_with(64, |c, t| (c * 100 + t) as f64);
        let img = stack_channels(&w);
        assert_eq!((img.rows, img.cols), (10, 64));
        // Row 0 equals the ax series bit for bit.
        assert_eq!(img.row(0), w.channel(0));
    }

    #[test]
    fn stack_of_zero_window_is_zero() {
        let w = window_with(16, |_, _| 0.0);
        let img = stack_channels(&w);
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn expand_identity_prefix_copies_rows() {
        let w = window_with(16, |c, t| (c * 16 + t) as f64);
        let stacked = stack_channels(&w);
        let plan = RowExpansionPlan::from_sequence((0..10).collect(), false).unwrap();
        let out = expand_rows(&stacked, &plan).unwrap();
        assert_eq!(out.data, stacked.data);
    }

    #[test]
    fn expand_default_plan_gives_50_rows() {
        let w = window_with(64, |c, t| (c + t) as f64);
        let plan = build_expansion_plan(10, 0).unwrap();
        let out = expand_rows(&stack_channels(&w), &plan).unwrap();
        assert_eq!((out.rows, out.cols), (50, 64));
    }

    #[test]
    fn expand_explicit_42_row_sequence() {
        let seq: Vec<usize> = (0..42).map(|i| i % 10).collect();
        let plan = RowExpansionPlan::from_sequence(seq, true).unwrap();
        let w = window_with(64, |c, t| (c + t) as f64);
        let out = expand_rows(&stack_channels(&w), &plan).unwrap();
        assert_eq!((out.rows, out.cols), (42, 64));
    }

    #[test]
    fn expand_rejects_out_of_range_plan() {
        let plan = RowExpansionPlan::from_sequence(vec![0, 11], false).unwrap();
        let w = window_with(8, |_, _| 0.0);
        assert!(expand_rows(&stack_channels(&w), &plan).is_err());
    }
}
