//! Full-reference (MSE, RMSE, PSNR, SSIM) and no-reference (BRISQUE
//! natural-scene statistics) image quality measures.

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{json_error_offset, Error, Result};
use crate::image::{ColorSpace, ImageTensor, ValueRange};

pub const BRISQUE_FEATURES: usize = 36;
const ALPHA_MIN: f64 = 0.2;
const ALPHA_MAX: f64 = 10.0;
const ALPHA_STEP: f64 = 0.001;

fn byte_pair<'a>(a: &'a ImageTensor, b: &'a ImageTensor) -> Result<(ImageTensor, ImageTensor)> {
    if a.shape() != b.shape() {
        return Err(Error::validation(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok((a.to_range(ValueRange::Byte), b.to_range(ValueRange::Byte)))
}

/// Mean squared per-pixel difference on the byte scale.
pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let (a, b) = byte_pair(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Mean absolute per-pixel difference on the byte scale.
pub fn mean_abs_error(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let (a, b) = byte_pair(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
        .sum();
    Ok(sum / a.data().len() as f64)
}

pub fn rmse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

pub fn rmse_from_mse(mse_value: f64) -> Result<f64> {
    if mse_value.is_nan() || mse_value < 0.0 {
        return Err(Error::validation(format!("mse {mse_value} must be >= 0")));
    }
    Ok(mse_value.sqrt())
}

/// `10·log10(max² / mse)` in decibels; `+inf` for a zero error.
pub fn psnr(mse_value: f64, max_value: f64) -> Result<f64> {
    if mse_value.is_nan() || mse_value < 0.0 {
        return Err(Error::validation(format!("mse {mse_value} must be >= 0")));
    }
    if mse_value == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / mse_value).log10())
}

/// Renders a PSNR value for reports, with `inf` for identical images.
pub fn format_psnr(db: f64) -> String {
    if db.is_infinite() {
        "inf".to_string()
    } else {
        format!("{db:.4}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Normalized 1-D Gaussian taps.
fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - center).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable "valid" filtering: output is `(h - k + 1) × (w - k + 1)`.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * src[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

fn gray_f64(img: &ImageTensor) -> Vec<f64> {
    let g = match img.color() {
        ColorSpace::Gray => img.to_range(ValueRange::Byte),
        ColorSpace::Rgb => img.to_range(ValueRange::Byte).to_gray(),
    };
    g.data().iter().map(|v| f64::from(*v)).collect()
}

/// Mean structural similarity over all fully-contained Gaussian windows.
/// Color inputs are reduced to luminance first.
pub fn ssim(x: &ImageTensor, y: &ImageTensor, params: &SsimParams) -> Result<f64> {
    if (x.height(), x.width()) != (y.height(), y.width()) {
        return Err(Error::validation(format!(
            "shape mismatch: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let (h, w) = (x.height(), x.width());
    if h < params.window || w < params.window {
        return Err(Error::validation(format!(
            "image {h}x{w} smaller than the {0}x{0} window",
            params.window
        )));
    }
    let (a, b) = (gray_f64(x), gray_f64(y));
    let taps = gaussian_taps(params.window, params.sigma);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_a = filter_valid(&a, h, w, &taps);
    let mu_b = filter_valid(&b, h, w, &taps);
    let e_aa = filter_valid(&prod(&a, &a), h, w, &taps);
    let e_bb = filter_valid(&prod(&b, &b), h, w, &taps);
    let e_ab = filter_valid(&prod(&a, &b), h, w, &taps);
    let (c1, c2) = (params.c1(), params.c2());
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

/// 36 natural-scene statistics: per scale, the generalized Gaussian fit of
/// the normalized luminance (shape, variance) followed by asymmetric fits of
/// its horizontal, vertical, main-diagonal and anti-diagonal neighbour
/// products (shape, mean, left variance, right variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrisqueFeatures(pub Vec<f64>);

impl BrisqueFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Indices holding fitted shape parameters.
    pub fn shape_indices() -> Vec<usize> {
        let mut idx = Vec::new();
        for scale in 0..2 {
            let base = scale * 18;
            idx.push(base);
            for k in 0..4 {
                idx.push(base + 2 + 4 * k);
            }
        }
        idx
    }
}

/// Mean-subtracted contrast-normalized coefficients with a 7×7 Gaussian
/// (sigma 7/6) and reflected borders; returns (coefficients, any variance).
pub fn mscn(gray: &[f64], h: usize, w: usize) -> (Vec<f64>, bool) {
    let taps = gaussian_taps(7, 7.0 / 6.0);
    let r = 3isize;
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - i - 1;
        }
        i.clamp(0, n - 1) as usize
    };
    let blur = |src: &[f64]| -> Vec<f64> {
        let mut rows = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    s += t * src[y * w + reflect(x as isize + i as isize - r, w)];
                }
                rows[y * w + x] = s;
            }
        }
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    s += t * rows[reflect(y as isize + i as isize - r, h) * w + x];
                }
                out[y * w + x] = s;
            }
        }
        out
    };
    let mu = blur(gray);
    let sq: Vec<f64> = gray.iter().map(|v| v * v).collect();
    let mu_sq = blur(&sq);
    let mut any_variance = false;
    let coeffs = gray
        .iter()
        .zip(mu.iter().zip(&mu_sq))
        .map(|(v, (m, m2))| {
            let sigma = (m2 - m * m).abs().sqrt();
            if sigma > 1e-6 {
                any_variance = true;
            }
            (v - m) / (sigma + 1.0)
        })
        .collect();
    (coeffs, any_variance)
}

struct GammaTable {
    alphas: Vec<f64>,
    /// Γ(2/α)² / (Γ(1/α)·Γ(3/α))
    ratio: Vec<f64>,
}

fn gamma_table() -> &'static GammaTable {
    static TABLE: OnceLock<GammaTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ((ALPHA_MAX - ALPHA_MIN) / ALPHA_STEP).round() as usize + 1;
        let alphas: Vec<f64> = (0..n).map(|i| ALPHA_MIN + i as f64 * ALPHA_STEP).collect();
        let ratio = alphas
            .iter()
            .map(|a| {
                libm::tgamma(2.0 / a).powi(2) / (libm::tgamma(1.0 / a) * libm::tgamma(3.0 / a))
            })
            .collect();
        GammaTable { alphas, ratio }
    })
}

/// Shape whose moment ratio `Γ(2/α)²/(Γ(1/α)Γ(3/α))` is closest to `target`.
fn match_shape(target: f64) -> f64 {
    let table = gamma_table();
    let mut best = (f64::INFINITY, ALPHA_MIN);
    for (a, r) in table.alphas.iter().zip(&table.ratio) {
        let d = (r - target).abs();
        if d < best.0 {
            best = (d, *a);
        }
    }
    best.1
}

/// Symmetric generalized Gaussian fit by moment matching: (shape, variance).
pub fn fit_ggd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let var = values.iter().map(|v| v * v).sum::<f64>() / n;
    let mean_abs = values.iter().map(|v| v.abs()).sum::<f64>() / n;
    // E|x|² / E[x²] as a function of shape
    let alpha = match_shape(mean_abs * mean_abs / var);
    (alpha, var)
}

/// Asymmetric generalized Gaussian fit: (shape, mean, left var, right var).
pub fn fit_aggd(values: &[f64]) -> (f64, f64, f64, f64) {
    let (mut l_sum, mut l_n, mut r_sum, mut r_n) = (0.0, 0usize, 0.0, 0usize);
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    for v in values {
        if *v < 0.0 {
            l_sum += v * v;
            l_n += 1;
        } else if *v > 0.0 {
            r_sum += v * v;
            r_n += 1;
        }
        abs_sum += v.abs();
        sq_sum += v * v;
    }
    let n = values.len() as f64;
    let left_std = if l_n > 0 {
        (l_sum / l_n as f64).sqrt()
    } else {
        0.0
    };
    let right_std = if r_n > 0 {
        (r_sum / r_n as f64).sqrt()
    } else {
        0.0
    };
    let r_hat = (abs_sum / n).powi(2) / (sq_sum / n);
    let target = if left_std > 0.0 && right_std > 0.0 {
        let g = left_std / right_std;
        r_hat * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2)
    } else {
        r_hat
    };
    let alpha = match_shape(target);
    let mean = (right_std - left_std)
        * (libm::tgamma(2.0 / alpha) / libm::tgamma(1.0 / alpha))
        * (libm::tgamma(1.0 / alpha) / libm::tgamma(3.0 / alpha)).sqrt();
    (alpha, mean, left_std * left_std, right_std * right_std)
}

/// Neighbour products of the coefficient map in the order horizontal,
/// vertical, main diagonal, anti-diagonal.
pub fn neighbour_products(m: &[f64], h: usize, w: usize) -> [Vec<f64>; 4] {
    let at = |y: usize, x: usize| m[y * w + x];
    let mut hz = Vec::with_capacity(h * (w - 1));
    let mut vt = Vec::with_capacity((h - 1) * w);
    let mut d1 = Vec::with_capacity((h - 1) * (w - 1));
    let mut d2 = Vec::with_capacity((h - 1) * (w - 1));
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                hz.push(at(y, x) * at(y, x + 1));
            }
            if y + 1 < h {
                vt.push(at(y, x) * at(y + 1, x));
                if x + 1 < w {
                    d1.push(at(y, x) * at(y + 1, x + 1));
                }
                if x >= 1 {
                    d2.push(at(y, x) * at(y + 1, x - 1));
                }
            }
        }
    }
    [hz, vt, d1, d2]
}

fn scale_features(gray: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
    let (m, any_variance) = mscn(gray, h, w);
    if !any_variance || m.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateInput(
            "image has no local contrast (constant input)".into(),
        ));
    }
    let (alpha, var) = fit_ggd(&m);
    let mut feats = vec![alpha, var];
    for prod in neighbour_products(&m, h, w) {
        let (a, mean, lv, rv) = fit_aggd(&prod);
        feats.extend([a, mean, lv, rv]);
    }
    Ok(feats)
}

/// 2×2 box downsampling; a trailing odd row/column is dropped.
fn half_scale(gray: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let s = gray[2 * y * w + 2 * x]
                + gray[2 * y * w + 2 * x + 1]
                + gray[(2 * y + 1) * w + 2 * x]
                + gray[(2 * y + 1) * w + 2 * x + 1];
            out.push(s / 4.0);
        }
    }
    (out, oh, ow)
}

pub fn brisque_features(image: &ImageTensor) -> Result<BrisqueFeatures> {
    let (h, w) = (image.height(), image.width());
    if h < 32 || w < 32 {
        return Err(Error::validation(format!(
            "BRISQUE needs at least 32x32 pixels, got {h}x{w}"
        )));
    }
    let gray = gray_f64(image);
    if gray.iter().all(|v| *v == gray[0]) {
        return Err(Error::DegenerateInput(
            "image has no local contrast (constant input)".into(),
        ));
    }
    let mut feats = scale_features(&gray, h, w)?;
    let (half, hh, hw) = half_scale(&gray, h, w);
    feats.extend(scale_features(&half, hh, hw)?);
    debug_assert_eq!(feats.len(), BRISQUE_FEATURES);
    Ok(BrisqueFeatures(feats))
}

/// Linear quality regressor over range-normalized BRISQUE features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrisqueModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feat_min: Vec<f64>,
    pub feat_max: Vec<f64>,
}

impl BrisqueModel {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let model: BrisqueModel = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: json_error_offset(text, &e),
            message: e.to_string(),
        })?;
        for (name, v) in [
            ("weights", &model.weights),
            ("feat_min", &model.feat_min),
            ("feat_max", &model.feat_max),
        ] {
            if v.len() != BRISQUE_FEATURES {
                return Err(Error::Parse {
                    offset: text.find(name).unwrap_or(0),
                    message: format!(
                        "`{name}` holds {} values, expected {BRISQUE_FEATURES}",
                        v.len()
                    ),
                });
            }
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_json_str(&text)
    }

    pub fn score(&self, features: &BrisqueFeatures) -> f64 {
        let mut s = self.bias;
        for (k, f) in features.as_slice().iter().enumerate() {
            let span = self.feat_max[k] - self.feat_min[k];
            let norm = if span != 0.0 {
                (f - self.feat_min[k]) / span
            } else {
                0.0
            };
            s += self.weights[k] * norm;
        }
        s
    }
}

/// Score when a model is supplied, `None` otherwise.
pub fn brisque_score(features: &BrisqueFeatures, model: Option<&BrisqueModel>) -> Option<f64> {
    model.map(|m| m.score(features))
}


#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    fn gray(side: usize) -> impl Strategy<Value = ImageTensor> {
        prop::collection::vec(0u8..=255, side * side).prop_map(move |v| {
            let data = v.into_iter().map(f32::from).collect();
            ImageTensor::new(side, side, ColorSpace::Gray, ValueRange::Byte, data).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mse_dominates_squared_mae(a in gray(16), b in gray(16)) {
            let m = mse(&a, &b).unwrap();
            let mae = mean_abs_error(&a, &b).unwrap();
            prop_assert!(m + 1e-9 >= mae * mae);
        }

        #[test]
        fn ssim_symmetric_and_bounded(a in gray(16), b in gray(16)) {
            let p = SsimParams::default();
            let ab = ssim(&a, &b, &p).unwrap();
            let ba = ssim(&b, &a, &p).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
        }
    }
}
