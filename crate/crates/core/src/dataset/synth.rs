//! Procedural watermark-like corpus: per-class line-art motifs drawn on a
//! warm paper tone, paired with degraded copies.

use std::f32::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::degrade::{degrade_image, DegradationConfig};
use super::raster::{value_noise, Coverage, Point};
use super::{GanPair, LabeledImageSet};
use crate::error::{Error, Result};
use crate::image::{ColorSpace, ImageTensor, ValueRange};

const PAPER_TONE: [f32; 3] = [226.0, 213.0, 186.0];
const LINE_TONE: [f32; 3] = [70.0, 58.0, 48.0];

/// Drawing primitive in a normalized `[-1, 1]²` frame.
#[derive(Debug, Clone)]
enum Primitive {
    Circle {
        c: Point,
        r: f32,
    },
    Arc {
        c: Point,
        r: f32,
        start: f32,
        sweep: f32,
    },
    Segment {
        a: Point,
        b: Point,
    },
    Polygon {
        c: Point,
        r: f32,
        sides: usize,
        phase: f32,
    },
    Zigzag {
        a: Point,
        b: Point,
        teeth: usize,
        amp: f32,
    },
    Cross {
        c: Point,
        r: f32,
        phase: f32,
    },
}

impl Primitive {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let pt = |rng: &mut ChaCha8Rng, s: f32| (rng.random_range(-s..s), rng.random_range(-s..s));
        match rng.random_range(0..6) {
            0 => Primitive::Circle {
                c: pt(rng, 0.5),
                r: rng.random_range(0.15..0.45),
            },
            1 => Primitive::Arc {
                c: pt(rng, 0.5),
                r: rng.random_range(0.2..0.6),
                start: rng.random_range(0.0..TAU),
                sweep: rng.random_range(1.0..4.5),
            },
            2 => Primitive::Segment {
                a: pt(rng, 0.9),
                b: pt(rng, 0.9),
            },
            3 => Primitive::Polygon {
                c: pt(rng, 0.5),
                r: rng.random_range(0.2..0.5),
                sides: rng.random_range(3..=6),
                phase: rng.random_range(0.0..TAU),
            },
            4 => Primitive::Zigzag {
                a: pt(rng, 0.8),
                b: pt(rng, 0.8),
                teeth: rng.random_range(3..=6),
                amp: rng.random_range(0.06..0.16),
            },
            _ => Primitive::Cross {
                c: pt(rng, 0.5),
                r: rng.random_range(0.2..0.5),
                phase: rng.random_range(0.0..PI),
            },
        }
    }

    fn polylines(&self) -> Vec<Vec<Point>> {
        let ring = |c: Point, r: f32, start: f32, sweep: f32, n: usize| -> Vec<Point> {
            (0..=n)
                .map(|i| {
                    let t = start + sweep * i as f32 / n as f32;
                    (c.0 + r * t.cos(), c.1 + r * t.sin())
                })
                .collect()
        };
        match *self {
            Primitive::Circle { c, r } => vec![ring(c, r, 0.0, TAU, 48)],
            Primitive::Arc { c, r, start, sweep } => vec![ring(c, r, start, sweep, 32)],
            Primitive::Segment { a, b } => vec![vec![a, b]],
            Primitive::Polygon { c, r, sides, phase } => {
                vec![ring(c, r, phase, TAU, sides)]
            }
            Primitive::Zigzag { a, b, teeth, amp } => {
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let len = (dx * dx + dy * dy).sqrt().max(1e-3);
                let (nx, ny) = (-dy / len, dx / len);
                let n = teeth * 2;
                vec![(0..=n)
                    .map(|i| {
                        let t = i as f32 / n as f32;
                        let s = if i % 2 == 0 { 0.0 } else { amp };
                        (a.0 + t * dx + s * nx, a.1 + t * dy + s * ny)
                    })
                    .collect()]
            }
            Primitive::Cross { c, r, phase } => {
                let arm = |ang: f32| {
                    vec![
                        (c.0 - r * ang.cos(), c.1 - r * ang.sin()),
                        (c.0 + r * ang.cos(), c.1 + r * ang.sin()),
                    ]
                };
                vec![arm(phase), arm(phase + PI / 2.0)]
            }
        }
    }
}

/// A class's motif: a fixed set of primitives.
#[derive(Debug, Clone)]
pub struct Motif {
    primitives: Vec<Primitive>,
}

impl Motif {
    pub fn for_class(seed: u64, class_id: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(class_id as u64 + 1)),
        );
        let n = rng.random_range(3..=5);
        Self {
            primitives: (0..n).map(|_| Primitive::random(&mut rng)).collect(),
        }
    }
}

/// Per-instance nuisance variation applied to a motif.
#[derive(Debug, Clone, Copy)]
struct InstancePose {
    shift: Point,
    rotation: f32,
    scale: f32,
    thickness: f32,
    tone_jitter: f32,
}

impl InstancePose {
    fn random(rng: &mut ChaCha8Rng, side: usize) -> Self {
        let s = side as f32;
        Self {
            shift: (
                rng.random_range(-0.06..0.06) * s,
                rng.random_range(-0.06..0.06) * s,
            ),
            rotation: rng.random_range(-0.15..0.15),
            scale: rng.random_range(0.9..1.1),
            thickness: (s / 64.0 * rng.random_range(1.3..2.0)).max(1.0),
            tone_jitter: rng.random_range(-8.0..8.0),
        }
    }
}

/// Renders one clean instance of `motif` at `side × side`.
fn render_clean(
    motif: &Motif,
    side: usize,
    pose: InstancePose,
    texture_strength: f32,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor> {
    let mut cov = Coverage::new(side, side);
    let half = side as f32 * 0.5;
    let extent = side as f32 * 0.36 * pose.scale;
    let (sin, cos) = pose.rotation.sin_cos();
    let place = |(x, y): Point| -> Point {
        let (rx, ry) = (x * cos - y * sin, x * sin + y * cos);
        (
            half - 0.5 + rx * extent + pose.shift.0,
            half - 0.5 + ry * extent + pose.shift.1,
        )
    };
    for prim in &motif.primitives {
        for line in prim.polylines() {
            let pts: Vec<Point> = line.into_iter().map(place).collect();
            cov.stroke_polyline(&pts, pose.thickness);
        }
    }
    let texture = if texture_strength > 0.0 {
        value_noise(side, side, 6, rng)
    } else {
        vec![0.0; side * side]
    };
    let mut data = Vec::with_capacity(side * side * 3);
    for (i, a) in cov.values.iter().enumerate() {
        let paper = 1.0 + 0.08 * texture_strength * texture[i];
        for k in 0..3 {
            let bg = (PAPER_TONE[k] + pose.tone_jitter) * paper;
            data.push(
                (bg * (1.0 - a) + LINE_TONE[k] * a)
                    .round()
                    .clamp(0.0, 255.0),
            );
        }
    }
    ImageTensor::new(side, side, ColorSpace::Rgb, ValueRange::Byte, data)
}

/// One generated (clean, noisy) sample.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub class_id: u32,
    pub class_name: String,
    pub file_name: String,
    pub clean: ImageTensor,
    pub noisy: ImageTensor,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusSpec {
    pub classes: u32,
    pub per_class: u32,
    pub size: usize,
    pub seed: u64,
    pub degradation: DegradationConfig,
}

/// Builds `classes × per_class` clean/noisy pairs. Deterministic in `spec.seed`.
pub fn synthesize_corpus(spec: &CorpusSpec) -> Result<Vec<CorpusItem>> {
    spec.degradation.validate()?;
    if spec.classes == 0 || spec.per_class == 0 {
        return Err(Error::validation(
            "corpus needs at least one class and one image",
        ));
    }
    let mut items = Vec::with_capacity((spec.classes * spec.per_class) as usize);
    for class_id in 0..spec.classes {
        let motif = Motif::for_class(spec.seed, class_id);
        for k in 0..spec.per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(
                spec.seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((class_id as u64) << 20 | k as u64),
            );
            let pose = InstancePose::random(&mut rng, spec.size);
            let clean = render_clean(
                &motif,
                spec.size,
                pose,
                spec.degradation.background_texture_strength,
                &mut rng,
            )?;
            let mut noise_rng = ChaCha8Rng::seed_from_u64(
                spec.degradation
                    .seed
                    .wrapping_mul(0x2545_f491_4f6c_dd1d)
                    .wrapping_add(rng.random::<u64>()),
            );
            let noisy = degrade_image(&clean, &spec.degradation, &mut noise_rng)?;
            items.push(CorpusItem {
                class_id,
                class_name: format!("class_{class_id:03}"),
                file_name: format!("img_{k:03}.png"),
                clean,
                noisy,
            });
        }
    }
    Ok(items)
}

pub fn corpus_clean_set(items: &[CorpusItem]) -> Result<LabeledImageSet> {
    LabeledImageSet::new(
        items
            .iter()
            .map(|it| (it.clean.clone(), it.class_id))
            .collect(),
    )
}

pub fn corpus_noisy_set(items: &[CorpusItem]) -> Result<LabeledImageSet> {
    LabeledImageSet::new(
        items
            .iter()
            .map(|it| (it.noisy.clone(), it.class_id))
            .collect(),
    )
}

pub fn corpus_pairs(items: &[CorpusItem]) -> Result<Vec<GanPair>> {
    items
        .iter()
        .map(|it| GanPair::new(it.noisy.clone(), it.clean.clone(), it.class_id))
        .collect()
}

/// Writes `out/clean/<class>/<file>` and `out/noisy/<class>/<file>`; returns
/// the written paths.
pub fn write_corpus(items: &[CorpusItem], out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(items.len() * 2);
    for it in items {
        for (kind, img) in [("clean", &it.clean), ("noisy", &it.noisy)] {
            let path = out.join(kind).join(&it.class_name).join(&it.file_name);
            img.save_png(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}
