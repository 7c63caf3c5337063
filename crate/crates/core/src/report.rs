//! Figures and tables: triplet panels, loss curves, per-image metric reports.

use std::fmt::Write as _;
use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::write_atomic;
use crate::error::{Error, Result};
use crate::gan_training::HistoryRecord;
use crate::image::{ColorSpace, ImageTensor, ValueRange};
use crate::quality_metrics::{
    brisque_features, brisque_score, format_psnr, mse, psnr, rmse_from_mse, ssim, BrisqueModel,
    SsimParams,
};

const PANEL_GAP: usize = 4;

/// Side-by-side PNG: ground truth | noisy | generated.
pub fn plot_triplet_panel(
    ground: &ImageTensor,
    noisy: &ImageTensor,
    generated: &ImageTensor,
    out_path: &Path,
) -> Result<()> {
    if ground.shape() != noisy.shape() || ground.shape() != generated.shape() {
        return Err(Error::validation(format!(
            "triplet shapes differ: {:?}, {:?}, {:?}",
            ground.shape(),
            noisy.shape(),
            generated.shape()
        )));
    }
    let (h, w) = (ground.height(), ground.width());
    let pw = 3 * w + 2 * PANEL_GAP;
    let mut data = vec![255.0f32; h * pw * 3];
    for (slot, img) in [ground, noisy, generated].into_iter().enumerate() {
        let rgb = img.to_rgb().to_range(ValueRange::Byte);
        let x0 = slot * (w + PANEL_GAP);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[(y * pw + x0 + x) * 3 + c] = rgb.get(y, x, c);
                }
            }
        }
    }
    ImageTensor::new(h, pw, ColorSpace::Rgb, ValueRange::Byte, data)?.save_png(out_path)
}

/// SVG line chart of `loss_D` and `loss_G` against step.
pub fn plot_loss_curves(history: &[HistoryRecord], out_path: &Path) -> Result<()> {
    let (first, last) = match (history.first(), history.last()) {
        (Some(f), Some(l)) => (f.step, l.step),
        _ => return Err(Error::validation("cannot plot an empty history")),
    };
    let y_max = history
        .iter()
        .flat_map(|r| [r.loss_d, r.loss_g])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-6)
        * 1.05;
    let x_hi = if last > first { last } else { first + 1 };
    let mut svg = String::new();
    {
        let plot_err = |e: &dyn std::fmt::Display| Error::validation(format!("plot: {e}"));
        let root = SVGBackend::with_string(&mut svg, (800, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption("GAN losses", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(first..x_hi, 0.0..y_max)
            .map_err(|e| plot_err(&e))?;
        chart
            .configure_mesh()
            .x_desc("step")
            .y_desc("loss")
            .draw()
            .map_err(|e| plot_err(&e))?;
        for (label, color, pick) in [
            (
                "loss_D",
                RED,
                (|r: &HistoryRecord| r.loss_d) as fn(&HistoryRecord) -> f64,
            ),
            ("loss_G", BLUE, |r: &HistoryRecord| r.loss_g),
        ] {
            chart
                .draw_series(LineSeries::new(
                    history.iter().map(|r| (r.step, pick(r))),
                    color,
                ))
                .map_err(|e| plot_err(&e))?
                .label(label)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE)
            .draw()
            .map_err(|e| plot_err(&e))?;
        root.present().map_err(|e| plot_err(&e))?;
    }
    write_atomic(out_path, svg.as_bytes())
}

/// How color images are reduced before full-reference metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricColor {
    /// BT.601 luminance.
    #[default]
    Luminance,
    /// Plain mean of the three channels.
    RgbMean,
}

impl MetricColor {
    fn reduce(self, img: &ImageTensor) -> ImageTensor {
        match self {
            MetricColor::Luminance => img.to_gray(),
            MetricColor::RgbMean => img.to_gray_mean(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub image_id: String,
    pub mse: f64,
    pub rmse: f64,
    /// `f64::INFINITY` for identical images; rendered as "inf".
    #[serde(with = "psnr_serde")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub brisque_score: Option<f64>,
}

mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad psnr `{t}`"))),
        }
    }
}

/// Full-reference metrics of one prediction against its reference.
pub fn image_metrics(
    image_id: &str,
    pred: &ImageTensor,
    reference: &ImageTensor,
    color: MetricColor,
    model: Option<&BrisqueModel>,
) -> Result<ImageMetrics> {
    let (p, r) = (color.reduce(pred), color.reduce(reference));
    let m = mse(&p, &r)?;
    let brisque = match model {
        Some(model) => brisque_score(&brisque_features(&p)?, Some(model)),
        None => None,
    };
    Ok(ImageMetrics {
        image_id: image_id.to_string(),
        mse: m,
        rmse: rmse_from_mse(m)?,
        psnr_db: psnr(m, 255.0)?,
        ssim: ssim(&p, &r, &SsimParams::default())?,
        brisque_score: brisque,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub color: MetricColor,
    pub rows: Vec<ImageMetrics>,
    pub mean_mse: f64,
    pub mean_rmse: f64,
    #[serde(with = "psnr_serde")]
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub mean_brisque_score: Option<f64>,
}

impl MetricsReport {
    pub fn new(color: MetricColor, rows: Vec<ImageMetrics>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::validation("no images to report"));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let brisque: Option<Vec<f64>> = rows.iter().map(|r| r.brisque_score).collect();
        Ok(Self {
            color,
            mean_mse: mean(|r| r.mse),
            mean_rmse: mean(|r| r.rmse),
            mean_psnr_db: mean(|r| r.psnr_db),
            mean_ssim: mean(|r| r.ssim),
            mean_brisque_score: brisque.map(|b| b.iter().sum::<f64>() / n),
            rows,
        })
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("image_id,mse,rmse,psnr_db,ssim,brisque_score\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.image_id,
                r.mse,
                r.rmse,
                format_psnr(r.psnr_db),
                r.ssim,
                opt(r.brisque_score)
            );
        }
        let _ = writeln!(
            out,
            "mean,{},{},{},{},{}",
            self.mean_mse,
            self.mean_rmse,
            format_psnr(self.mean_psnr_db),
            self.mean_ssim,
            opt(self.mean_brisque_score)
        );
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::validation(e.to_string()))
    }
}
