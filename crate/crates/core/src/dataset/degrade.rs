//! Synthetic document degradation: handwriting overlay plus Gaussian noise.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::raster::{catmull_rom, Coverage, Point};
use crate::error::{json_error_offset, Error, Result};
use crate::image::{ColorSpace, ImageTensor, ValueRange, MIN_SIDE};

/// Parameters of the synthetic degradation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationConfig {
    pub stroke_count_range: [u32; 2],
    /// Stroke width in pixels; the lower bound must be at least one pixel.
    pub stroke_thickness_range: [f32; 2],
    /// Per-channel (r, g, b) byte intervals of the ink color.
    pub stroke_color_range: [[u8; 2]; 3],
    /// Noise standard deviation in byte units.
    pub gaussian_sigma: f32,
    /// Strength of the low-frequency paper texture on synthesized backgrounds.
    pub background_texture_strength: f32,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            stroke_count_range: [3, 6],
            stroke_thickness_range: [1.0, 2.5],
            stroke_color_range: [[20, 90], [10, 60], [0, 40]],
            gaussian_sigma: 10.0,
            background_texture_strength: 0.3,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        let [c0, c1] = self.stroke_count_range;
        if c0 > c1 {
            return Err(Error::validation(format!(
                "stroke_count_range lower bound {c0} exceeds upper bound {c1}"
            )));
        }
        let [t0, t1] = self.stroke_thickness_range;
        if !(t0.is_finite() && t1.is_finite()) || t0 > t1 {
            return Err(Error::validation(
                "stroke_thickness_range must be a finite ordered interval",
            ));
        }
        if t0 < 1.0 {
            return Err(Error::validation(format!(
                "stroke thickness lower bound {t0} is below one pixel"
            )));
        }
        for (name, [lo, hi]) in ["r", "g", "b"].iter().zip(self.stroke_color_range) {
            if lo > hi {
                return Err(Error::validation(format!(
                    "stroke_color_range channel {name}: {lo} > {hi}"
                )));
            }
        }
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::validation("gaussian_sigma must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.background_texture_strength) {
            return Err(Error::validation(
                "background_texture_strength must lie in [0, 1]",
            ));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: DegradationConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: json_error_offset(text, &e),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_json_str(&text)
    }
}

/// One rendered handwriting stroke.
#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    /// Dense polyline in `(x, y)` pixel coordinates.
    pub path: Vec<Point>,
    pub thickness: f32,
    pub color: [u8; 3],
}

impl Stroke {
    pub fn coverage(&self, height: usize, width: usize) -> Coverage {
        let mut cov = Coverage::new(height, width);
        cov.stroke_polyline(&self.path, self.thickness);
        cov
    }
}

/// Handwriting layer: pure ink colors where stroked, white elsewhere.
#[derive(Debug, Clone)]
pub struct HandwritingOverlay {
    pub overlay: ImageTensor,
    /// Per-pixel ink opacity in `[0, 1]`.
    pub alpha: Vec<f32>,
    /// Pixels with opacity of at least one half.
    pub mask: Vec<bool>,
    pub strokes: Vec<Stroke>,
}

fn check_shape(height: usize, width: usize) -> Result<()> {
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(Error::validation(format!(
            "shape {height}x{width} below the {MIN_SIDE}x{MIN_SIDE} minimum"
        )));
    }
    Ok(())
}

/// Cursive-looking control points: a rightward drift with alternating
/// vertical excursions.
fn stroke_controls<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Vec<Point> {
    let (h, w) = (height as f32, width as f32);
    let margin = 2.0;
    let n = rng.random_range(4..=8);
    let mut x = rng.random_range(margin..(w * 0.6).max(margin + 1.0));
    let base_y = rng.random_range(margin..(h - margin));
    let slope = rng.random_range(-0.25f32..0.25);
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        let swing = rng.random_range(0.02..0.09) * h * if i % 2 == 0 { 1.0 } else { -1.0 };
        let y = base_y + slope * (x - pts.first().map_or(x, |p: &Point| p.0)) + swing;
        pts.push((
            x.clamp(margin, w - 1.0 - margin),
            y.clamp(margin, h - 1.0 - margin),
        ));
        x += rng.random_range(0.03..0.1) * w;
    }
    pts
}

/// Renders `k` random smooth strokes, `k` drawn from `stroke_count_range`.
pub fn synthesize_handwriting<R: Rng + ?Sized>(
    shape: (usize, usize),
    cfg: &DegradationConfig,
    rng: &mut R,
) -> Result<HandwritingOverlay> {
    cfg.validate()?;
    let (height, width) = shape;
    check_shape(height, width)?;
    let [c0, c1] = cfg.stroke_count_range;
    let count = rng.random_range(c0..=c1);
    let mut overlay = vec![255.0f32; height * width * 3];
    let mut alpha = vec![0.0f32; height * width];
    let mut strokes = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let controls = stroke_controls(height, width, rng);
        let [t0, t1] = cfg.stroke_thickness_range;
        let thickness = if t0 == t1 {
            t0
        } else {
            rng.random_range(t0..=t1)
        };
        let mut color = [0u8; 3];
        for (c, [lo, hi]) in color.iter_mut().zip(cfg.stroke_color_range) {
            *c = rng.random_range(lo..=hi);
        }
        let stroke = Stroke {
            path: catmull_rom(&controls, 10),
            thickness,
            color,
        };
        let cov = stroke.coverage(height, width);
        for (i, c) in cov.values.iter().enumerate() {
            if *c > 0.0 {
                // later strokes paint over earlier ones
                for k in 0..3 {
                    overlay[i * 3 + k] = f32::from(color[k]);
                }
                alpha[i] = alpha[i].max(*c);
            }
        }
        strokes.push(stroke);
    }
    let mask = alpha.iter().map(|a| *a >= 0.5).collect();
    Ok(HandwritingOverlay {
        overlay: ImageTensor::new(height, width, ColorSpace::Rgb, ValueRange::Byte, overlay)?,
        alpha,
        mask,
        strokes,
    })
}

/// Composites the ink layer over `clean` (alpha blending).
pub fn composite(clean: &ImageTensor, layer: &HandwritingOverlay) -> Result<ImageTensor> {
    let clean = clean.to_range(ValueRange::Byte);
    let (h, w, c) = clean.shape();
    if (layer.overlay.height(), layer.overlay.width()) != (h, w) {
        return Err(Error::validation("overlay shape differs from image shape"));
    }
    let ink = layer.overlay.to_colorspace(clean.color());
    let mut data = clean.data().to_vec();
    for (i, a) in layer.alpha.iter().enumerate() {
        if *a > 0.0 {
            for k in 0..c {
                let j = i * c + k;
                data[j] = data[j] * (1.0 - a) + ink.data()[j] * a;
            }
        }
    }
    ImageTensor::new(h, w, clean.color(), ValueRange::Byte, data)
}

/// `clip(composite(clean, handwriting) + N(0, sigma²), 0, 255)`, rounded to
/// integral byte values.
pub fn degrade_image<R: Rng + ?Sized>(
    clean: &ImageTensor,
    cfg: &DegradationConfig,
    rng: &mut R,
) -> Result<ImageTensor> {
    cfg.validate()?;
    if clean.range() != ValueRange::Byte {
        return Err(Error::validation(
            "degrade_image expects a byte-range image",
        ));
    }
    let layer = synthesize_handwriting((clean.height(), clean.width()), cfg, rng)?;
    let inked = composite(clean, &layer)?;
    let (h, w, _) = inked.shape();
    let color = inked.color();
    let mut data = inked.into_data();
    if cfg.gaussian_sigma > 0.0 {
        let normal = Normal::new(0.0f32, cfg.gaussian_sigma)
            .map_err(|e| Error::validation(e.to_string()))?;
        for v in data.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    for v in data.iter_mut() {
        *v = v.round().clamp(0.0, 255.0);
    }
    ImageTensor::new(h, w, color, ValueRange::Byte, data)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dataset::raster::connected_components;
    use crate::quality_metrics::{mse, ssim, SsimParams};

    fn gray(v: f32, side: usize) -> ImageTensor {
        ImageTensor::filled(side, side, ColorSpace::Rgb, ValueRange::Byte, v).unwrap()
    }

    #[test]
    fn zero_strokes_gives_empty_overlay() {
        let cfg = DegradationConfig {
            stroke_count_range: [0, 0],
            ..Default::default()
        };
        let hw = synthesize_handwriting((32, 48), &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(hw.mask.iter().all(|m| !m));
        assert!(hw.overlay.data().iter().all(|v| *v == 255.0));
        assert!(hw.strokes.is_empty());
    }

    #[test]
    fn degenerate_thickness_rejected() {
        let cfg = DegradationConfig {
            stroke_thickness_range: [0.0, 0.0],
            ..Default::default()
        };
        let err = synthesize_handwriting((32, 32), &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::Validation(_))));
        let cfg = DegradationConfig {
            stroke_count_range: [4, 2],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn five_strokes_give_five_components_unless_overlapping() {
        let cfg = DegradationConfig {
            stroke_count_range: [5, 5],
            ..Default::default()
        };
        for seed in 0..40 {
            let (h, w) = (64, 64);
            let hw =
                synthesize_handwriting((h, w), &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(hw.strokes.len(), 5);
            let n = connected_components(&hw.mask, h, w);
            if n < 5 {
                // some pair of strokes must share or touch pixels
                let masks: Vec<Vec<bool>> =
                    hw.strokes.iter().map(|s| s.coverage(h, w).mask()).collect();
                let mut touching = false;
                for i in 0..5 {
                    for j in i + 1..5 {
                        let mut both = masks[i].clone();
                        for (b, m) in both.iter_mut().zip(&masks[j]) {
                            *b |= *m;
                        }
                        let separate = connected_components(&masks[i], h, w)
                            + connected_components(&masks[j], h, w);
                        if connected_components(&both, h, w) < separate {
                            touching = true;
                        }
                    }
                }
                assert!(touching, "seed {seed}: {n} components without overlap");
            }
        }
    }

    #[test]
    fn stroke_colors_within_range() {
        let cfg = DegradationConfig {
            stroke_count_range: [6, 6],
            ..Default::default()
        };
        let hw = synthesize_handwriting((64, 64), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut min = [255.0f32; 3];
        let mut max = [0.0f32; 3];
        for (i, m) in hw.mask.iter().enumerate() {
            if *m {
                for k in 0..3 {
                    let v = hw.overlay.data()[i * 3 + k];
                    min[k] = min[k].min(v);
                    max[k] = max[k].max(v);
                }
            }
        }
        for k in 0..3 {
            let [lo, hi] = cfg.stroke_color_range[k];
            assert!(min[k] >= f32::from(lo) && max[k] <= f32::from(hi));
        }
    }

    #[test]
    fn identity_degradation() {
        let cfg = DegradationConfig {
            stroke_count_range: [0, 0],
            gaussian_sigma: 0.0,
            ..Default::default()
        };
        let clean =
            ImageTensor::gray_from_fn(32, 32, |y, x| ((y * 5 + x * 3) % 256) as f32).unwrap();
        let noisy = degrade_image(&clean, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(noisy, clean);
    }

    #[test]
    fn noise_only_mse_matches_sigma_squared() {
        let cfg = DegradationConfig {
            stroke_count_range: [0, 0],
            gaussian_sigma: 10.0,
            ..Default::default()
        };
        let clean = gray(128.0, 256);
        let noisy = degrade_image(&clean, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let m = mse(&noisy, &clean).unwrap();
        // E[(round(n))^2] = sigma^2 + 1/12
        assert!((m - 100.0).abs() < 10.0, "mse {m}");
    }

    #[test]
    fn strokes_lower_ssim_at_equal_sigma() {
        let clean = ImageTensor::gray_from_fn(64, 64, |y, x| {
            200.0 + 20.0 * ((x as f32 / 6.0).sin() * (y as f32 / 9.0).cos())
        })
        .unwrap();
        let with = DegradationConfig {
            stroke_count_range: [6, 6],
            gaussian_sigma: 5.0,
            ..Default::default()
        };
        let without = DegradationConfig {
            stroke_count_range: [0, 0],
            ..with.clone()
        };
        let p = SsimParams::default();
        for seed in 0..5 {
            let a = degrade_image(&clean, &with, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = degrade_image(&clean, &without, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(ssim(&a, &clean, &p).unwrap() < ssim(&b, &clean, &p).unwrap());
        }
    }

    #[test]
    fn degradation_is_reproducible_and_in_range() {
        let cfg = DegradationConfig::default();
        let clean = gray(240.0, 48);
        let a = degrade_image(&clean, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = degrade_image(&clean, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), clean.shape());
        assert!(a.data().iter().all(|v| (0.0..=255.0).contains(v)));
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let err = DegradationConfig::from_json_str(r#"{"gaussian_sigma": 3, "blur": 1}"#);
        assert!(matches!(err, Err(Error::Parse { .. })));
        let cfg = DegradationConfig::from_json_str(r#"{"gaussian_sigma": 3}"#).unwrap();
        assert_eq!(cfg.gaussian_sigma, 3.0);
        assert_eq!(
            cfg.stroke_count_range,
            DegradationConfig::default().stroke_count_range
        );
    }
}
