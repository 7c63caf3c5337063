//! Pixel containers shared by every stage of the pipeline.
//!
//! Images live at rest in byte range (`[0, 255]`, integral values stored as
//! `f32`) and are mapped to the signed unit range only at model boundaries.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    /// `[-1, 1]`, the generator's Tanh range.
    UnitSigned,
    /// `[0, 255]`.
    Byte,
}

impl ValueRange {
    pub fn bounds(self) -> (f32, f32) {
        match self {
            ValueRange::UnitSigned => (-1.0, 1.0),
            ValueRange::Byte => (0.0, 255.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    Gray,
    Rgb,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Gray => 1,
            ColorSpace::Rgb => 3,
        }
    }

    pub fn from_channels(channels: usize) -> Result<Self> {
        match channels {
            1 => Ok(ColorSpace::Gray),
            3 => Ok(ColorSpace::Rgb),
            c => Err(Error::validation(format!(
                "channel count must be 1 or 3, got {c}"
            ))),
        }
    }
}

/// Height × width × channels pixel array with an explicit value range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    color: ColorSpace,
    range: ValueRange,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Builds an image from interleaved (HWC) pixel data, checking every invariant.
    pub fn new(
        height: usize,
        width: usize,
        color: ColorSpace,
        range: ValueRange,
        data: Vec<f32>,
    ) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::validation(format!(
                "image {height}x{width} is below the {MIN_SIDE}x{MIN_SIDE} minimum"
            )));
        }
        let expected = height * width * color.channels();
        if data.len() != expected {
            return Err(Error::validation(format!(
                "pixel buffer holds {} values, expected {expected}",
                data.len()
            )));
        }
        let (lo, hi) = range.bounds();
        if let Some(v) = data.iter().find(|v| !(**v >= lo && **v <= hi)) {
            return Err(Error::validation(format!(
                "pixel value {v} outside {range:?} bounds [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            height,
            width,
            color,
            range,
            data,
        })
    }

    pub fn filled(
        height: usize,
        width: usize,
        color: ColorSpace,
        range: ValueRange,
        value: f32,
    ) -> Result<Self> {
        Self::new(
            height,
            width,
            color,
            range,
            vec![value; height * width * color.channels()],
        )
    }

    /// Single-channel byte image from a per-pixel function.
    pub fn gray_from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x).clamp(0.0, 255.0));
            }
        }
        Self::new(height, width, ColorSpace::Gray, ValueRange::Byte, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.color.channels()
    }

    pub fn color(&self) -> ColorSpace {
        self.color
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels())
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels() + c]
    }

    pub fn same_layout(&self, other: &ImageTensor) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.color == other.color
            && self.range == other.range
    }

    pub(crate) fn ensure_same_layout(&self, other: &ImageTensor) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "image layout mismatch: {:?}/{:?}/{:?} vs {:?}/{:?}/{:?}",
                self.shape(),
                self.color,
                self.range,
                other.shape(),
                other.color,
                other.range
            )))
        }
    }

    pub fn to_range(&self, range: ValueRange) -> ImageTensor {
        let data = match (self.range, range) {
            (a, b) if a == b => self.data.clone(),
            (ValueRange::Byte, ValueRange::UnitSigned) => self
                .data
                .iter()
                .map(|v| (v / 127.5 - 1.0).clamp(-1.0, 1.0))
                .collect(),
            (ValueRange::UnitSigned, ValueRange::Byte) => self
                .data
                .iter()
                .map(|v| ((v + 1.0) * 127.5).clamp(0.0, 255.0))
                .collect(),
            _ => unreachable!(),
        };
        ImageTensor {
            data,
            range,
            ..self.clone()
        }
    }

    /// Rounds byte-range values to integers, as they would be stored on disk.
    pub fn quantized(&self) -> ImageTensor {
        let img = self.to_range(ValueRange::Byte);
        ImageTensor {
            data: img.data.iter().map(|v| v.round()).collect(),
            ..img
        }
    }

    /// Luminance (ITU-R BT.601 weights) for RGB input; identity for gray.
    pub fn to_gray(&self) -> ImageTensor {
        if self.color == ColorSpace::Gray {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        ImageTensor {
            data,
            color: ColorSpace::Gray,
            ..self.clone()
        }
    }

    /// Mean over the color channels (the alternative to luminance weighting).
    pub fn to_gray_mean(&self) -> ImageTensor {
        if self.color == ColorSpace::Gray {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect();
        ImageTensor {
            data,
            color: ColorSpace::Gray,
            ..self.clone()
        }
    }

    pub fn to_rgb(&self) -> ImageTensor {
        if self.color == ColorSpace::Rgb {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|v| [*v, *v, *v]).collect();
        ImageTensor {
            data,
            color: ColorSpace::Rgb,
            ..self.clone()
        }
    }

    pub fn to_colorspace(&self, color: ColorSpace) -> ImageTensor {
        match color {
            ColorSpace::Gray => self.to_gray(),
            ColorSpace::Rgb => self.to_rgb(),
        }
    }

    /// Rotates by 90 degrees counter-clockwise.
    pub fn rotate90(&self) -> ImageTensor {
        let c = self.channels();
        let (h, w) = (self.height, self.width);
        let mut data = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let (ny, nx) = (w - 1 - x, y);
                for k in 0..c {
                    data[(ny * h + nx) * c + k] = self.get(y, x, k);
                }
            }
        }
        ImageTensor {
            height: w,
            width: h,
            data,
            ..self.clone()
        }
    }

    /// Sub-image `[y0, y0 + height) × [x0, x0 + width)`.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<ImageTensor> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::validation("crop window exceeds image bounds"));
        }
        let c = self.channels();
        let mut data = Vec::with_capacity(height * width * c);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        ImageTensor::new(height, width, self.color, self.range, data)
    }

    pub fn load(path: &Path) -> Result<ImageTensor> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let decoded = ::image::open(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_dynamic(decoded, path)
    }

    /// Decodes and resizes to `(height, width)` with a triangle filter.
    pub fn load_resized(path: &Path, height: usize, width: usize) -> Result<ImageTensor> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let decoded = ::image::open(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let resized = if decoded.height() as usize == height && decoded.width() as usize == width {
            decoded
        } else {
            decoded.resize_exact(
                width as u32,
                height as u32,
                ::image::imageops::FilterType::Triangle,
            )
        };
        Self::from_dynamic(resized, path)
    }

    fn from_dynamic(img: ::image::DynamicImage, path: &Path) -> Result<ImageTensor> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (color, data): (ColorSpace, Vec<f32>) = match img.color() {
            ::image::ColorType::L8 | ::image::ColorType::L16 | ::image::ColorType::La8 => (
                ColorSpace::Gray,
                img.to_luma8()
                    .into_raw()
                    .into_iter()
                    .map(f32::from)
                    .collect(),
            ),
            _ => (
                ColorSpace::Rgb,
                img.to_rgb8()
                    .into_raw()
                    .into_iter()
                    .map(f32::from)
                    .collect(),
            ),
        };
        ImageTensor::new(h, w, color, ValueRange::Byte, data).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_range(ValueRange::Byte)
            .data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let (w, h) = (self.width as u32, self.height as u32);
        let color = match self.color {
            ColorSpace::Gray => ::image::ExtendedColorType::L8,
            ColorSpace::Rgb => ::image::ExtendedColorType::Rgb8,
        };
        ::image::save_buffer_with_format(
            path,
            &self.to_bytes(),
            w,
            h,
            color,
            ::image::ImageFormat::Png,
        )
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }
}

/// Stacks images into an `(N, C, H, W)` tensor in signed unit range.
pub fn to_batch(images: &[&ImageTensor], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::validation("cannot batch an empty image list"))?;
    let (h, w, c) = first.shape();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.shape() != (h, w, c) {
            return Err(Error::validation(format!(
                "batch shape mismatch: {:?} vs {:?}",
                img.shape(),
                (h, w, c)
            )));
        }
        let unit = img.to_range(ValueRange::UnitSigned);
        for k in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(unit.get(y, x, k));
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), c, h, w), device)?.to_dtype(dtype)?)
}

/// Inverse of [`to_batch`]; values are clamped to `[-1, 1]`.
pub fn from_batch(batch: &Tensor) -> Result<Vec<ImageTensor>> {
    let (n, c, h, w) = batch.dims4()?;
    let color = ColorSpace::from_channels(c)?;
    let flat: Vec<f32> = batch.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let base = i * c * h * w;
        let mut data = Vec::with_capacity(c * h * w);
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    data.push(flat[base + (k * h + y) * w + x].clamp(-1.0, 1.0));
                }
            }
        }
        out.push(ImageTensor::new(h, w, color, ValueRange::UnitSigned, data)?);
    }
    Ok(out)
}
