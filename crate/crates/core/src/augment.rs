//! Data augmentation.
//!
//! Kinematics augmentation (KA) acts on raw windows: each orientation
//! sample is rotated by a fixed quaternion or mirrored through a plane
//! (via the reference-vector transition), while accelerometer and gyro
//! channels receive bounded uniform noise. Jittering augmentation (JA)
//! acts on finished feature images with small random affine transforms.
//! Both are bit-reproducible: every original sample owns a derived seed
//! stream, so augmentation parallelizes without changing results.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureImage;
use crate::imu::ImuWindow;
use crate::quat::{axis_angle_quat, mirror_vec, qmul, rotate_vec, transition_quat, Vec3};
use crate::seed;

const PI: f64 = std::f64::consts::PI;

/// Kinematics augmentation settings. Defaults follow the four rotation
/// angles {±pi/8, ±pi/4} about the vertical axis, mirrors through the yz
/// and xz planes, and ±5% signal noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KaConfig {
    pub rotation_angles: Vec<f64>,
    pub rotation_axis: Vec3,
    /// Plane normals; each must be unit length.
    pub mirror_planes: Vec<Vec3>,
    pub noise_frac: f64,
    pub seed: u64,
}

impl Default for KaConfig {
    fn default() -> Self {
        Self {
            rotation_angles: vec![PI / 8.0, -PI / 8.0, PI / 4.0, -PI / 4.0],
            rotation_axis: Vec3::Z,
            mirror_planes: vec![Vec3::X, Vec3::Y],
            noise_frac: 0.05,
            seed: 0,
        }
    }
}

impl KaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_frac < 0.0 || !self.noise_frac.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise_frac must be a nonnegative finite number, got {}",
                self.noise_frac
            )));
        }
        if self.rotation_angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter("non-finite rotation angle".into()));
        }
        Ok(())
    }

    /// Augmented samples produced per original.
    pub fn outputs_per_original(&self) -> usize {
        self.rotation_angles.len() + self.mirror_planes.len()
    }
}

/// Jittering augmentation settings: translate within ±10% of the extent,
/// scale in [0.9, 1.1], rotate within ±5 degrees, six outputs per
/// original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JaConfig {
    pub translate_frac: f64,
    pub scale_range: [f64; 2],
    pub rotate_deg_range: [f64; 2],
    pub per_original: usize,
    pub seed: u64,
}

impl Default for JaConfig {
    fn default() -> Self {
        Self {
            translate_frac: 0.10,
            scale_range: [0.9, 1.1],
            rotate_deg_range: [-5.0, 5.0],
            per_original: 6,
            seed: 0,
        }
    }
}

impl JaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale_range[0] <= 0.0 || self.scale_range[0] > self.scale_range[1] {
            return Err(Error::InvalidParameter(format!(
                "scale_range must be positive and ordered, got {:?}",
                self.scale_range
            )));
        }
        if self.rotate_deg_range[0] > self.rotate_deg_range[1] {
            return Err(Error::InvalidParameter(format!(
                "rotate_deg_range must be ordered, got {:?}",
                self.rotate_deg_range
            )));
        }
        Ok(())
    }
}

/// Which augmentation pools join the originals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    None,
    Ja,
    Ka,
    #[serde(rename = "ja+ka")]
    JaKa,
}

impl AugmentMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "ja" => Ok(Self::Ja),
            "ka" => Ok(Self::Ka),
            "ja+ka" | "ka+ja" => Ok(Self::JaKa),
            _ => Err(Error::InvalidParameter(format!(
                "unknown augmentation mode '{s}' (expected none|ja|ka|ja+ka)"
            ))),
        }
    }

    /// Training-set size multiplier including the retained originals.
    pub fn multiplier(&self, ka: &KaConfig, ja: &JaConfig) -> usize {
        match self {
            AugmentMode::None => 1,
            AugmentMode::Ja => 1 + ja.per_original,
            AugmentMode::Ka => 1 + ka.outputs_per_original(),
            AugmentMode::JaKa => 1 + ja.per_original + ka.outputs_per_original(),
        }
    }
}

/// A derived sample with its provenance.
#[derive(Debug, Clone)]
pub struct AugmentedWindow {
    pub window: ImuWindow,
    pub origin: u64,
    pub descriptor: String,
}

#[derive(Debug, Clone)]
pub struct AugmentedImage {
    pub image: FeatureImage,
    pub origin: u64,
    pub descriptor: String,
}

/// Kinematics augmentation of one window: one output per rotation angle
/// (orientations left-multiplied by the rotation quaternion) plus one per
/// mirror plane (orientations re-encoded through the mirrored direction
/// vector). Accel/gyro channels get independent uniform noise within
/// ±noise_frac of each original value. Labels and subjects are copied;
/// ids are left for the caller to assign.
pub fn ka_augment(w: &ImuWindow, cfg: &KaConfig) -> Result<Vec<AugmentedWindow>> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "ka-noise", w.id));
    let mut out = Vec::with_capacity(cfg.outputs_per_original());

    for &angle in &cfg.rotation_angles {
        let r = axis_angle_quat(&cfg.rotation_axis, angle)?;
        let mut aug = w.clone();
        for t in 0..w.t_len {
            let q = w.orientation_at(t).normalized().map_err(|_| {
                Error::ZeroNormQuaternion { index: t }
            })?;
            aug.set_orientation_at(t, qmul(&r, &q));
        }
        noise_accel_gyro(&mut aug, cfg.noise_frac, &mut rng);
        out.push(AugmentedWindow {
            window: aug,
            origin: w.id,
            descriptor: format!("ka:rot({angle:+.6})"),
        });
    }

    for normal in &cfg.mirror_planes {
        let n = normal.normalized()?;
        let mut aug = w.clone();
        for t in 0..w.t_len {
            let q = w.orientation_at(t).normalized().map_err(|_| {
                Error::ZeroNormQuaternion { index: t }
            })?;
            let v = rotate_vec(&q, &Vec3::Z)?;
            let vm = mirror_vec(&v, &n)?;
            let vm = vm.normalized()?;
            aug.set_orientation_at(t, transition_quat(&Vec3::Z, &vm)?);
        }
        noise_accel_gyro(&mut aug, cfg.noise_frac, &mut rng);
        out.push(AugmentedWindow {
            window: aug,
            origin: w.id,
            descriptor: format!("ka:mirror([{:.0},{:.0},{:.0}])", n.x, n.y, n.z),
        });
    }
    Ok(out)
}

fn noise_accel_gyro(w: &mut ImuWindow, frac: f64, rng: &mut impl Rng) {
    if frac == 0.0 {
        return;
    }
    let t_len = w.t_len;
    for c in 0..6 {
        for t in 0..t_len {
            let v = w.channels[c * t_len + t];
            w.channels[c * t_len + t] = v + rng.gen_range(-1.0..1.0) * frac * v.abs();
        }
    }
}

/// Jittering augmentation of one image: `per_original` affine variants
/// (translate, scale, rotate about the center) with bilinear resampling,
/// zero fill outside, and output clamped to [0,1].
pub fn ja_augment(img: &FeatureImage, cfg: &JaConfig) -> Result<Vec<AugmentedImage>> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "ja-affine", img.provenance));
    let mut out = Vec::with_capacity(cfg.per_original);
    for _ in 0..cfg.per_original {
        let tx = rng.gen_range(-1.0..1.0) * cfg.translate_frac * img.width as f64;
        let ty = rng.gen_range(-1.0..1.0) * cfg.translate_frac * img.height as f64;
        let s = rng.gen_range(cfg.scale_range[0]..=cfg.scale_range[1]);
        let deg = rng.gen_range(cfg.rotate_deg_range[0]..=cfg.rotate_deg_range[1]);
        let image = affine_resample(img, tx, ty, s, deg.to_radians());
        out.push(AugmentedImage {
            image,
            origin: img.provenance,
            descriptor: format!("ja:t({tx:+.3},{ty:+.3});s({s:.4});r({deg:+.3}deg)"),
        });
    }
    Ok(out)
}

/// Inverse-mapped affine: for each output pixel, sample the source at
/// S(1/s) R(-theta) (dst - center - t) + center with bilinear weights.
fn affine_resample(img: &FeatureImage, tx: f64, ty: f64, scale: f64, theta: f64) -> FeatureImage {
    let (h, w, d) = (img.height, img.width, img.depth());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin_t, cos_t) = theta.sin_cos();
    let mut pixels = vec![0.0f64; h * w * d];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx - tx;
            let dy = y as f64 - cy - ty;
            let sx = (cos_t * dx + sin_t * dy) / scale + cx;
            let sy = (-sin_t * dx + cos_t * dy) / scale + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            for ch in 0..d {
                let sample = |ix: f64, iy: f64| -> f64 {
                    if ix < 0.0 || iy < 0.0 || ix >= w as f64 || iy >= h as f64 {
                        0.0
                    } else {
                        img.pixels[((iy as usize) * w + ix as usize) * d + ch]
                    }
                };
                let v = sample(x0, y0) * (1.0 - fx) * (1.0 - fy)
                    + sample(x0 + 1.0, y0) * fx * (1.0 - fy)
                    + sample(x0, y0 + 1.0) * (1.0 - fx) * fy
                    + sample(x0 + 1.0, y0 + 1.0) * fx * fy;
                pixels[(y * w + x) * d + ch] = v.clamp(0.0, 1.0);
            }
        }
    }
    FeatureImage {
        height: h,
        width: w,
        kind: img.kind,
        pixels,
        provenance: img.provenance,
    }
}

/// KA over a window list: originals retained (unchanged ids) followed by
/// the augmented pool with fresh sequential ids.
pub fn ka_augment_dataset(
    windows: &[ImuWindow],
    cfg: &KaConfig,
) -> Result<(Vec<ImuWindow>, Vec<AugmentedWindow>)> {
    let mut next_id = windows.iter().map(|w| w.id + 1).max().unwrap_or(0);
    let mut augmented = Vec::with_capacity(windows.len() * cfg.outputs_per_original());
    for w in windows {
        for mut a in ka_augment(w, cfg)? {
            a.window.id = next_id;
            next_id += 1;
            augmented.push(a);
        }
    }
    Ok((windows.to_vec(), augmented))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ImageKind;
    use crate::imu::NUM_CHANNELS;
    use crate::quat::Quaternion;

    fn test_window(id: u64) -> ImuWindow {
        let t_len = 16;
        let mut w = ImuWindow {
            id,
            channels: vec![0.0; NUM_CHANNELS * t_len],
            t_len,
            subject: "s1".into(),
            label: "TS".into(),
            t0: 100,
        };
        for t in 0..t_len {
            for c in 0..6 {
                w.channels[c * t_len + t] = ((t + c) as f64 * 0.37).sin();
            }
            let q = axis_angle_quat(&Vec3::X, t as f64 * 0.05).unwrap();
            w.set_orientation_at(t, q);
        }
        w
    }

    #[test]
    fn default_config_yields_six_labeled_outputs() {
        let w = test_window(1);
        let out = ka_augment(&w, &KaConfig::default()).unwrap();
        assert_eq!(out.len(), 6);
        for a in &out {
            assert_eq!(a.window.label, "TS");
            assert_eq!(a.window.subject, "s1");
            assert_eq!(a.window.t_len, w.t_len);
            assert_eq!(a.origin, 1);
        }
    }

    #[test]
    fn identity_rotation_without_noise_preserves_orientations() {
        let w = test_window(2);
        let cfg = KaConfig {
            rotation_angles: vec![0.0],
            mirror_planes: vec![],
            noise_frac: 0.0,
            ..KaConfig::default()
        };
        let out = ka_augment(&w, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        for t in 0..w.t_len {
            let a = out[0].window.orientation_at(t);
            let b = w.orientation_at(t);
            assert!((a.x - b.x).abs() < 1e-12);
            assert!((a.y - b.y).abs() < 1e-12);
            assert!((a.z - b.z).abs() < 1e-12);
            assert!((a.w - b.w).abs() < 1e-12);
        }
        // Accel and gyro untouched at zero noise.
        assert_eq!(out[0].window.channels[..6 * 16], w.channels[..6 * 16]);
    }

    #[test]
    fn opposite_rotations_compose_to_identity() {
        let w = test_window(3);
        let cfg_pos = KaConfig {
            rotation_angles: vec![PI / 4.0],
            mirror_planes: vec![],
            noise_frac: 0.0,
            ..KaConfig::default()
        };
        let cfg_neg = KaConfig {
            rotation_angles: vec![-PI / 4.0],
            ..cfg_pos.clone()
        };
        let step1 = ka_augment(&w, &cfg_pos).unwrap().remove(0).window;
        let step2 = ka_augment(&step1, &cfg_neg).unwrap().remove(0).window;
        for t in 0..w.t_len {
            let a = step2.orientation_at(t);
            let b = w.orientation_at(t);
            assert!((a.x - b.x).abs() < 1e-9);
            assert!((a.y - b.y).abs() < 1e-9);
            assert!((a.z - b.z).abs() < 1e-9);
            assert!((a.w - b.w).abs() < 1e-9);
        }
    }

    #[test]
    fn ka_outputs_unit_quaternions_and_bounded_noise() {
        let w = test_window(4);
        let cfg = KaConfig::default();
        for a in ka_augment(&w, &cfg).unwrap() {
            for t in 0..w.t_len {
                assert!(a.window.orientation_at(t).is_unit());
            }
            for c in 0..6 {
                for t in 0..w.t_len {
                    let orig = w.channels[c * 16 + t];
                    let aug = a.window.channels[c * 16 + t];
                    assert!((aug - orig).abs() <= cfg.noise_frac * orig.abs() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn ka_noise_on_zero_samples_is_zero() {
        let mut w = test_window(5);
        for c in 0..6 {
            for t in 0..w.t_len {
                w.channels[c * 16 + t] = 0.0;
            }
        }
        for a in ka_augment(&w, &KaConfig::default()).unwrap() {
            assert!(a.window.channels[..6 * 16].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ka_mirror_is_involution_at_direction_level() {
        let w = test_window(6);
        let n = Vec3::X;
        for t in 0..w.t_len {
            let q = w.orientation_at(t).normalized().unwrap();
            let v = rotate_vec(&q, &Vec3::Z).unwrap();
            let once = mirror_vec(&v, &n).unwrap();
            let twice = mirror_vec(&once, &n).unwrap();
            assert!((twice.x - v.x).abs() < 1e-9);
            assert!((twice.y - v.y).abs() < 1e-9);
            assert!((twice.z - v.z).abs() < 1e-9);
        }
    }

    #[test]
    fn ka_mirror_windows_encode_the_mirrored_direction() {
        let w = test_window(7);
        let cfg = KaConfig {
            rotation_angles: vec![],
            mirror_planes: vec![Vec3::X],
            noise_frac: 0.0,
            ..KaConfig::default()
        };
        let out = ka_augment(&w, &cfg).unwrap().remove(0).window;
        for t in 0..w.t_len {
            let q = w.orientation_at(t).normalized().unwrap();
            let expected = mirror_vec(&rotate_vec(&q, &Vec3::Z).unwrap(), &Vec3::X).unwrap();
            let got = rotate_vec(&out.orientation_at(t), &Vec3::Z).unwrap();
            assert!((got.x - expected.x).abs() < 1e-9);
            assert!((got.y - expected.y).abs() < 1e-9);
            assert!((got.z - expected.z).abs() < 1e-9);
        }
    }

    #[test]
    fn ka_is_bit_reproducible_per_seed() {
        let w = test_window(8);
        let cfg = KaConfig::default();
        let a = ka_augment(&w, &cfg).unwrap();
        let b = ka_augment(&w, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.window.channels, y.window.channels);
        }
    }

    #[test]
    fn ka_rejects_degenerate_quaternions() {
        let mut w = test_window(9);
        w.set_orientation_at(3, Quaternion::new(0.0, 0.0, 0.0, 0.0));
        assert!(matches!(
            ka_augment(&w, &KaConfig::default()),
            Err(Error::ZeroNormQuaternion { index: 3 })
        ));
    }

    fn test_image(provenance: u64) -> FeatureImage {
        let (h, w) = (16, 16);
        let mut pixels = vec![0.0; h * w];
        for y in 4..12 {
            for x in 4..12 {
                pixels[y * w + x] = ((x + y) % 5) as f64 / 4.0;
            }
        }
        FeatureImage {
            height: h,
            width: w,
            kind: ImageKind::Freq,
            pixels,
            provenance,
        }
    }

    #[test]
    fn degenerate_ja_config_is_identity() {
        let img = test_image(1);
        let cfg = JaConfig {
            translate_frac: 0.0,
            scale_range: [1.0, 1.0],
            rotate_deg_range: [0.0, 0.0],
            per_original: 2,
            seed: 0,
        };
        for a in ja_augment(&img, &cfg).unwrap() {
            for (x, y) in a.image.pixels.iter().zip(&img.pixels) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn default_ja_yields_six_in_range_outputs() {
        let img = test_image(2);
        let out = ja_augment(&img, &JaConfig::default()).unwrap();
        assert_eq!(out.len(), 6);
        for a in &out {
            assert_eq!((a.image.height, a.image.width), (16, 16));
            assert!(a.image.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(a.origin, 2);
        }
    }

    #[test]
    fn ja_of_zero_image_is_zero() {
        let img = FeatureImage {
            height: 12,
            width: 12,
            kind: ImageKind::Freq,
            pixels: vec![0.0; 144],
            provenance: 3,
        };
        for a in ja_augment(&img, &JaConfig::default()).unwrap() {
            assert!(a.image.pixels.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ja_is_bit_reproducible_per_seed() {
        let img = test_image(4);
        let a = ja_augment(&img, &JaConfig::default()).unwrap();
        let b = ja_augment(&img, &JaConfig::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.pixels, y.image.pixels);
            assert_eq!(x.descriptor, y.descriptor);
        }
    }

    #[test]
    fn multipliers_match_the_documented_counts() {
        let ka = KaConfig::default();
        let ja = JaConfig::default();
        assert_eq!(AugmentMode::None.multiplier(&ka, &ja), 1);
        assert_eq!(AugmentMode::Ja.multiplier(&ka, &ja), 7);
        assert_eq!(AugmentMode::Ka.multiplier(&ka, &ja), 7);
        assert_eq!(AugmentMode::JaKa.multiplier(&ka, &ja), 13);
    }

    #[test]
    fn dataset_level_ka_keeps_originals_and_renumbers() {
        let windows: Vec<ImuWindow> = (0..5).map(test_window).collect();
        let (orig, aug) = ka_augment_dataset(&windows, &KaConfig::default()).unwrap();
        assert_eq!(orig.len(), 5);
        assert_eq!(aug.len(), 30);
        // 100 originals -> 700 total at the default multiplier.
        assert_eq!((orig.len() + aug.len()) * 100 / 5, 700);
        let mut ids: Vec<u64> = aug.iter().map(|a| a.window.id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 30);
        assert!(ids.iter().all(|&id| id >= 5));
    }
}
