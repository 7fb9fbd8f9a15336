//! Orientation-changing-history image: the window's orientation stream
//! rotates a fixed reference vector over the unit sphere; the resulting
//! point trajectory is projected onto the xy, yz, and xz planes and each
//! projection is rasterized as a polyline into one color channel.

use super::{FeatureImage, ImageKind};
use crate::error::{Error, Result};
use crate::imu::ImuWindow;
use crate::quat::{rotate_vec, Vec3};

/// Builds the size x size x 3 OCH image. Channel 0 is the xy projection,
/// channel 1 yz, channel 2 xz. Pixels are 0 or 1.
pub fn och_transform(w: &ImuWindow, size: usize) -> Result<FeatureImage> {
    if size < 8 {
        return Err(Error::InvalidParameter(format!(
            "och image size must be at least 8, got {size}"
        )));
    }

    let mut points = Vec::with_capacity(w.t_len);
    for t in 0..w.t_len {
        let q = w.orientation_at(t);
        if !q.is_finite() {
            return Err(Error::NonFinite {
                context: format!("orientation at sample {t}"),
            });
        }
        let q = q
            .normalized()
            .map_err(|_| Error::ZeroNormQuaternion { index: t })?;
        points.push(rotate_vec(&q, &Vec3::Z)?);
    }

    let mut pixels = vec![0.0f64; size * size * 3];
    let planes: [fn(&Vec3) -> (f64, f64); 3] = [
        |v| (v.x, v.y),
        |v| (v.y, v.z),
        |v| (v.x, v.z),
    ];
    for (ch, project) in planes.iter().enumerate() {
        let mut prev: Option<(i64, i64)> = None;
        for p in &points {
            let (u, v) = project(p);
            let px = to_pixel(u, size);
            let py = to_pixel(-v, size);
            if let Some((x0, y0)) = prev {
                draw_line(&mut pixels, size, ch, x0, y0, px, py);
            } else {
                set_pixel(&mut pixels, size, ch, px, py);
            }
            prev = Some((px, py));
        }
    }

    Ok(FeatureImage {
        height: size,
        width: size,
        kind: ImageKind::Och,
        pixels,
        provenance: w.id,
    })
}

/// Maps a coordinate in [-1,1] to a pixel index in [0, size-1]. The sign
/// flip for the vertical axis happens at the call site.
fn to_pixel(coord: f64, size: usize) -> i64 {
    let scaled = (coord + 1.0) / 2.0 * (size - 1) as f64;
    (scaled.round() as i64).clamp(0, size as i64 - 1)
}

fn set_pixel(pixels: &mut [f64], size: usize, ch: usize, x: i64, y: i64) {
    pixels[((y as usize) * size + (x as usize)) * 3 + ch] = 1.0;
}

/// Bresenham segment at constant intensity 1.
fn draw_line(pixels: &mut [f64], size: usize, ch: usize, x0: i64, y0: i64, x1: i64, y1: i64) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y) = (x0, y0);
    let mut err = dx + dy;
    loop {
        set_pixel(pixels, size, ch, x, y);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::NUM_CHANNELS;
    use crate::quat::{axis_angle_quat, Quaternion};
    use std::f64::consts::PI;

    fn window_from_orientations(quats: &[Quaternion]) -> ImuWindow {
        let t_len = quats.len();
        let mut w = ImuWindow {
            id: 3,
            channels: vec![0.0; NUM_CHANNELS * t_len],
            t_len,
            subject: "s1".into(),
            label: "GT".into(),
            t0: 0,
        };
        for (t, q) in quats.iter().enumerate() {
            w.set_orientation_at(t, *q);
        }
        w
    }

    fn lit(img: &FeatureImage, ch: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..img.height {
            for x in 0..img.width {
                if img.pixel(y, x, ch) > 0.0 {
                    out.push((x, y));
                }
            }
        }
        out
    }

    #[test]
    fn constant_identity_orientation_lights_one_pixel_per_channel() {
        let w = window_from_orientations(&[Quaternion::IDENTITY; 16]);
        let img = och_transform(&w, 64).unwrap();
        // [0,0,1]: xy projects to the center, yz and xz to top-center.
        assert_eq!(lit(&img, 0), vec![(32, 32)]);
        assert_eq!(lit(&img, 1), vec![(32, 0)]);
        assert_eq!(lit(&img, 2), vec![(32, 0)]);
    }

    #[test]
    fn x_axis_sweep_traces_quarter_circle_in_yz() {
        let size = 64usize;
        let quats: Vec<Quaternion> = (0..32)
            .map(|i| {
                let theta = i as f64 / 31.0 * PI / 2.0;
                axis_angle_quat(&Vec3::X, theta).unwrap()
            })
            .collect();
        let w = window_from_orientations(&quats);
        let img = och_transform(&w, size).unwrap();

        // yz channel: arc of radius ~1 around the image center.
        let center = (size - 1) as f64 / 2.0;
        let g = lit(&img, 1);
        assert!(g.len() > 20, "arc should light many pixels, got {}", g.len());
        for &(x, y) in &g {
            let r = ((x as f64 - center).powi(2) + (y as f64 - center).powi(2)).sqrt();
            assert!((r - center).abs() <= 1.5, "pixel ({x},{y}) off the arc, r={r}");
        }

        // xy channel: x stays 0, so all pixels sit in the center column.
        for &(x, _) in &lit(&img, 0) {
            assert_eq!(x, 32);
        }
    }

    #[test]
    fn output_is_three_channel_binary() {
        let quats: Vec<Quaternion> = (0..16)
            .map(|i| axis_angle_quat(&Vec3::Y, i as f64 * 0.1).unwrap())
            .collect();
        let img = och_transform(&window_from_orientations(&quats), 32).unwrap();
        assert_eq!(img.depth(), 3);
        assert_eq!(img.pixels.len(), 32 * 32 * 3);
        assert!(img.pixels.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn independent_of_window_timestamp_origin() {
        let quats: Vec<Quaternion> = (0..16)
            .map(|i| axis_angle_quat(&Vec3::Y, i as f64 * 0.05).unwrap())
            .collect();
        let mut a = window_from_orientations(&quats);
        let mut b = window_from_orientations(&quats);
        a.t0 = 0;
        b.t0 = 123_456;
        let ia = och_transform(&a, 32).unwrap();
        let ib = och_transform(&b, 32).unwrap();
        assert_eq!(ia.pixels, ib.pixels);
    }

    #[test]
    fn rejects_zero_norm_quaternion() {
        let mut quats = vec![Quaternion::IDENTITY; 8];
        quats[5] = Quaternion::new(0.0, 0.0, 0.0, 0.0);
        let err = och_transform(&window_from_orientations(&quats), 32).unwrap_err();
        assert!(matches!(err, Error::ZeroNormQuaternion { index: 5 }));
    }

    #[test]
    fn rejects_tiny_sizes() {
        let w = window_from_orientations(&[Quaternion::IDENTITY; 4]);
        assert!(och_transform(&w, 4).is_err());
    }
}
