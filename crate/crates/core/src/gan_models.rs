//! U-Net generator and patch discriminator.
//!
//! Block recipe: a down block is a 4×4 stride-2 convolution, instance
//! normalization and a leaky rectifier (slope 0.2); an up block is a 4×4
//! stride-2 transposed convolution, normalization, dropout on the first three
//! up blocks, and a rectifier. The first down block, any block whose output is
//! a single pixel, and the output block carry a bias instead of normalization.
//! The output block ends in Tanh.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{from_batch, to_batch, ImageTensor, ValueRange};
use crate::nn::{
    self, conv2d, conv_transpose2d, dropout, instance_norm, leaky_relu, Init, Mode, ParamStore,
};

const INIT_STD: f64 = 0.02;
const NORM_EPS: f64 = 1e-5;
const LEAK: f64 = 0.2;
const DROPOUT_BLOCKS: usize = 3;
/// Scores are kept inside the open unit interval at single precision.
const SCORE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub dropout_rate: f64,
    pub input_channels: usize,
    pub output_channels: usize,
}

impl GeneratorConfig {
    /// Eight levels at 256×256, reaching a 1×1 bottleneck.
    pub fn paper_scale() -> Self {
        Self {
            image_size: 256,
            depth: 8,
            base_channels: 64,
            dropout_rate: 0.5,
            input_channels: 3,
            output_channels: 3,
        }
    }

    /// Six levels at 64×64.
    pub fn desk_scale() -> Self {
        Self {
            image_size: 64,
            depth: 6,
            base_channels: 16,
            ..Self::paper_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.image_size.is_power_of_two() {
            return Err(Error::validation(format!(
                "image_size {} is not a power of two",
                self.image_size
            )));
        }
        if self.depth < 3 {
            return Err(Error::validation(format!("depth {} < 3", self.depth)));
        }
        if self.depth >= usize::BITS as usize || self.image_size >> self.depth == 0 {
            return Err(Error::validation(format!(
                "depth {} does not fit image_size {} (bottleneck below 1x1)",
                self.depth, self.image_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::validation("dropout_rate must lie in [0, 1)"));
        }
        if self.base_channels == 0 || self.input_channels == 0 || self.output_channels == 0 {
            return Err(Error::validation("channel counts must be positive"));
        }
        Ok(())
    }

    /// Feature width of encoder level `i`.
    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level.min(3)
    }

    fn down_normed(&self, level: usize) -> bool {
        level > 0 && self.image_size >> (level + 1) > 1
    }
}

/// U-Net generator with skip connections between mirrored levels.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    params: ParamStore,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, dtype: DType, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = nn::seeded_rng(seed);
        let mut params = ParamStore::new(dtype);
        let weight = Init::Normal {
            mean: 0.0,
            std: INIT_STD,
        };
        let depth = cfg.depth;
        for i in 0..depth {
            let c_in = if i == 0 {
                cfg.input_channels
            } else {
                cfg.level_channels(i - 1)
            };
            let c_out = cfg.level_channels(i);
            params.add(
                &format!("down.{i}.weight"),
                &[c_out, c_in, 4, 4],
                weight,
                &mut rng,
            )?;
            if cfg.down_normed(i) {
                params.add(
                    &format!("down.{i}.gamma"),
                    &[c_out],
                    Init::Constant(1.0),
                    &mut rng,
                )?;
                params.add(
                    &format!("down.{i}.beta"),
                    &[c_out],
                    Init::Constant(0.0),
                    &mut rng,
                )?;
            } else {
                params.add(
                    &format!("down.{i}.bias"),
                    &[c_out],
                    Init::Constant(0.0),
                    &mut rng,
                )?;
            }
        }
        let mut prev = cfg.level_channels(depth - 1);
        for j in 0..depth - 1 {
            let c_in = if j == 0 {
                prev
            } else {
                prev + cfg.level_channels(depth - 1 - j)
            };
            let c_out = cfg.level_channels(depth - 2 - j);
            params.add(
                &format!("up.{j}.weight"),
                &[c_in, c_out, 4, 4],
                weight,
                &mut rng,
            )?;
            params.add(
                &format!("up.{j}.gamma"),
                &[c_out],
                Init::Constant(1.0),
                &mut rng,
            )?;
            params.add(
                &format!("up.{j}.beta"),
                &[c_out],
                Init::Constant(0.0),
                &mut rng,
            )?;
            prev = c_out;
        }
        let c_in = prev + cfg.level_channels(0);
        params.add(
            "out.weight",
            &[c_in, cfg.output_channels, 4, 4],
            weight,
            &mut rng,
        )?;
        params.add(
            "out.bias",
            &[cfg.output_channels],
            Init::Constant(0.0),
            &mut rng,
        )?;
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x
            .dims4()
            .map_err(|_| Error::validation(format!("expected NCHW input, got {:?}", x.dims())))?;
        let s = self.cfg.image_size;
        if c != self.cfg.input_channels || h != s || w != s {
            return Err(Error::validation(format!(
                "generator expects (N, {}, {s}, {s}), got {:?}",
                self.cfg.input_channels,
                x.dims()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode<'_>) -> Result<Tensor> {
        Ok(self.forward_inspect(x, mode, None)?.0)
    }

    /// Forward pass that also returns every decoder block's output (up blocks
    /// in order, then the final image). `zero_skip = Some(i)` replaces the
    /// skip copy of encoder level `i` with zeros before it is concatenated.
    pub fn forward_inspect(
        &self,
        x: &Tensor,
        mode: &mut Mode<'_>,
        zero_skip: Option<usize>,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        self.check_input(x)?;
        let x = x.to_dtype(self.params.dtype())?;
        let p = &self.params;
        let depth = self.cfg.depth;
        let mut skips = Vec::with_capacity(depth);
        let mut h = x;
        for i in 0..depth {
            h = if self.cfg.down_normed(i) {
                let y = conv2d(&h, p.get(&format!("down.{i}.weight"))?, None, 2, 1)?;
                instance_norm(
                    &y,
                    p.get(&format!("down.{i}.gamma"))?,
                    p.get(&format!("down.{i}.beta"))?,
                    NORM_EPS,
                )?
            } else {
                conv2d(
                    &h,
                    p.get(&format!("down.{i}.weight"))?,
                    Some(p.get(&format!("down.{i}.bias"))?),
                    2,
                    1,
                )?
            };
            h = leaky_relu(&h, LEAK)?;
            skips.push(h.clone());
        }
        let skip = |level: usize| -> Result<Tensor> {
            if zero_skip == Some(level) {
                Ok(skips[level].zeros_like()?)
            } else {
                Ok(skips[level].clone())
            }
        };
        let mut decoded = Vec::with_capacity(depth);
        let mut u = skips[depth - 1].clone();
        for j in 0..depth - 1 {
            let input = if j == 0 {
                u
            } else {
                Tensor::cat(&[&u, &skip(depth - 1 - j)?], 1)?
            };
            let y = conv_transpose2d(&input, p.get(&format!("up.{j}.weight"))?, None, 2, 1)?;
            let y = instance_norm(
                &y,
                p.get(&format!("up.{j}.gamma"))?,
                p.get(&format!("up.{j}.beta"))?,
                NORM_EPS,
            )?;
            let y = if j < DROPOUT_BLOCKS {
                dropout(&y, self.cfg.dropout_rate, mode)?
            } else {
                y
            };
            u = y.relu()?;
            decoded.push(u.clone());
        }
        let input = Tensor::cat(&[&u, &skip(0)?], 1)?;
        let out = conv_transpose2d(&input, p.get("out.weight")?, Some(p.get("out.bias")?), 2, 1)?
            .tanh()?;
        decoded.push(out.clone());
        Ok((out, decoded))
    }

    /// Evaluation-mode translation of byte or unit images, `batch` at a time.
    pub fn translate(&self, images: &[&ImageTensor], batch: usize) -> Result<Vec<ImageTensor>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(batch.max(1)) {
            let x = to_batch(chunk, self.params.dtype(), self.params.device())?;
            let y = self.forward(&x, &mut Mode::Eval)?;
            out.extend(
                from_batch(&y)?
                    .into_iter()
                    .map(|img| img.to_range(ValueRange::Byte)),
            );
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Candidate plus condition channels.
    pub input_channels: usize,
    /// Number of stride-2 blocks.
    pub layers: usize,
    pub base_channels: usize,
}

impl DiscriminatorConfig {
    /// Three stride-2 blocks and two stride-1 heads: 70-pixel receptive field.
    pub fn paper_scale() -> Self {
        Self {
            input_channels: 6,
            layers: 3,
            base_channels: 64,
        }
    }

    pub fn desk_scale() -> Self {
        Self {
            input_channels: 6,
            layers: 2,
            base_channels: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::validation(format!(
                "discriminator layers {} < 2",
                self.layers
            )));
        }
        if self.input_channels == 0 || self.base_channels == 0 {
            return Err(Error::validation("channel counts must be positive"));
        }
        Ok(())
    }

    fn block_channels(&self, block: usize) -> usize {
        self.base_channels << block.min(3)
    }
}

fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad).checked_sub(kernel).map(|n| n / stride + 1)
}

/// Spatial sizes after each discriminator block, ending with the score map.
fn block_sizes(image_size: usize, cfg: &DiscriminatorConfig) -> Result<Vec<usize>> {
    let mut sizes = Vec::with_capacity(cfg.layers + 2);
    let mut s = image_size;
    let schedule = std::iter::repeat_n(2usize, cfg.layers).chain([1, 1]);
    for stride in schedule {
        s = match conv_out(s, 4, stride, 1) {
            Some(v) if v >= 1 => v,
            _ => {
                return Err(Error::validation(format!(
                    "image size {image_size} is too small for {} stride-2 blocks",
                    cfg.layers
                )))
            }
        };
        sizes.push(s);
    }
    Ok(sizes)
}

/// Closed-form score-grid shape for a square input.
pub fn patch_grid_shape(image_size: usize, cfg: &DiscriminatorConfig) -> Result<(usize, usize)> {
    cfg.validate()?;
    let s = *block_sizes(image_size, cfg)?
        .last()
        .expect("non-empty schedule");
    Ok((s, s))
}

/// Per-patch realness probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchScoreMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub scores: Vec<f64>,
}

impl PatchScoreMap {
    pub fn new(grid_h: usize, grid_w: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != grid_h * grid_w || scores.is_empty() {
            return Err(Error::validation("score map size mismatch"));
        }
        if let Some(s) = scores.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
            return Err(Error::validation(format!("score {s} outside (0, 1)")));
        }
        Ok(Self {
            grid_h,
            grid_w,
            scores,
        })
    }

    /// Splits an `(N, 1, H, W)` score tensor into per-image maps.
    pub fn from_batch(t: &Tensor) -> Result<Vec<Self>> {
        let (n, _, h, w) = t.dims4()?;
        let flat: Vec<f64> = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        flat.chunks(h * w)
            .take(n)
            .map(|c| Self::new(h, w, c.to_vec()))
            .collect()
    }
}

/// Conditional patch discriminator scoring (candidate, condition) pairs.
#[derive(Debug, Clone)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    params: ParamStore,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, dtype: DType, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = nn::seeded_rng(seed);
        let mut params = ParamStore::new(dtype);
        let weight = Init::Normal {
            mean: 0.0,
            std: INIT_STD,
        };
        let mut c_in = cfg.input_channels;
        for b in 0..=cfg.layers {
            let c_out = cfg.block_channels(b);
            params.add(
                &format!("conv.{b}.weight"),
                &[c_out, c_in, 4, 4],
                weight,
                &mut rng,
            )?;
            if b == 0 {
                params.add("conv.0.bias", &[c_out], Init::Constant(0.0), &mut rng)?;
            } else {
                params.add(
                    &format!("conv.{b}.gamma"),
                    &[c_out],
                    Init::Constant(1.0),
                    &mut rng,
                )?;
                params.add(
                    &format!("conv.{b}.beta"),
                    &[c_out],
                    Init::Constant(0.0),
                    &mut rng,
                )?;
            }
            c_in = c_out;
        }
        params.add("head.weight", &[1, c_in, 4, 4], weight, &mut rng)?;
        params.add("head.bias", &[1], Init::Constant(0.0), &mut rng)?;
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Scores `(N, 1, gh, gw)` in `(0, 1)` for channel-concatenated
    /// (candidate, condition) batches.
    pub fn forward(&self, candidate: &Tensor, condition: &Tensor) -> Result<Tensor> {
        if candidate.dims() != condition.dims() {
            return Err(Error::validation(format!(
                "candidate {:?} and condition {:?} differ in shape",
                candidate.dims(),
                condition.dims()
            )));
        }
        let x = Tensor::cat(&[candidate, condition], 1)?.to_dtype(self.params.dtype())?;
        let (_, c, h, w) = x.dims4()?;
        if c != self.cfg.input_channels {
            return Err(Error::validation(format!(
                "discriminator expects {} stacked channels, got {c}",
                self.cfg.input_channels
            )));
        }
        if h != w {
            return Err(Error::validation("discriminator expects square inputs"));
        }
        let sizes = block_sizes(h, &self.cfg)?;
        let p = &self.params;
        let mut y = x;
        for b in 0..=self.cfg.layers {
            let stride = if b < self.cfg.layers { 2 } else { 1 };
            let w = p.get(&format!("conv.{b}.weight"))?;
            y = if b == 0 {
                conv2d(&y, w, Some(p.get("conv.0.bias")?), stride, 1)?
            } else {
                let z = conv2d(&y, w, None, stride, 1)?;
                if sizes[b] > 1 {
                    instance_norm(
                        &z,
                        p.get(&format!("conv.{b}.gamma"))?,
                        p.get(&format!("conv.{b}.beta"))?,
                        NORM_EPS,
                    )?
                } else {
                    z.broadcast_add(&p.get(&format!("conv.{b}.beta"))?.reshape((1, (), 1, 1))?)?
                }
            };
            y = leaky_relu(&y, LEAK)?;
        }
        let logits = conv2d(&y, p.get("head.weight")?, Some(p.get("head.bias")?), 1, 1)?;
        Ok(nn::sigmoid(&logits)?.affine(1.0 - 2.0 * SCORE_EPS, SCORE_EPS)?)
    }

    pub fn score_maps(&self, candidate: &Tensor, condition: &Tensor) -> Result<Vec<PatchScoreMap>> {
        PatchScoreMap::from_batch(&self.forward(candidate, condition)?)
    }
}

#[cfg(test)]
mod tests {
    use candle_core::Device;

    use super::*;

    fn small_gen(size: usize, depth: usize) -> Generator {
        Generator::new(
            GeneratorConfig {
                image_size: size,
                depth,
                base_channels: 4,
                ..GeneratorConfig::desk_scale()
            },
            DType::F32,
            1,
        )
        .unwrap()
    }

    fn random_input(n: usize, c: usize, s: usize) -> Tensor {
        Tensor::rand(-1f32, 1f32, (n, c, s, s), &Device::Cpu).unwrap()
    }

    #[test]
    fn config_validation() {
        let bad = GeneratorConfig {
            depth: 7,
            ..GeneratorConfig::desk_scale()
        };
        assert!(bad.validate().is_err());
        let bad = GeneratorConfig {
            image_size: 48,
            ..GeneratorConfig::desk_scale()
        };
        assert!(bad.validate().is_err());
        let bad = GeneratorConfig {
            depth: 2,
            ..GeneratorConfig::desk_scale()
        };
        assert!(bad.validate().is_err());
        assert!(GeneratorConfig::paper_scale().validate().is_ok());
    }

    #[test]
    fn generator_preserves_shape_and_range() {
        let g = small_gen(64, 6);
        let x = random_input(2, 3, 64);
        let y = g.forward(&x, &mut Mode::Eval).unwrap();
        assert_eq!(y.dims(), &[2, 3, 64, 64]);
        let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let g = small_gen(32, 4);
        let x = random_input(1, 3, 32);
        let a: Vec<f32> = g
            .forward(&x, &mut Mode::Eval)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let b: Vec<f32> = g
            .forward(&x, &mut Mode::Eval)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generator_rejects_wrong_shape() {
        let g = small_gen(32, 4);
        assert!(matches!(
            g.forward(&random_input(1, 3, 64), &mut Mode::Eval),
            Err(Error::Validation(_))
        ));
        assert!(g.forward(&random_input(1, 1, 32), &mut Mode::Eval).is_err());
    }

    #[test]
    fn patch_grid_reference_sizes() {
        assert_eq!(
            patch_grid_shape(256, &DiscriminatorConfig::paper_scale()).unwrap(),
            (30, 30)
        );
        let cfg = DiscriminatorConfig::paper_scale();
        // 24 -> 12 -> 6 -> 3 -> 2 -> 1
        assert_eq!(patch_grid_shape(24, &cfg).unwrap(), (1, 1));
        assert!(patch_grid_shape(16, &cfg).is_err());
        let mut prev = patch_grid_shape(
            256,
            &DiscriminatorConfig {
                layers: 2,
                ..cfg.clone()
            },
        )
        .unwrap()
        .0;
        for layers in 3..=5 {
            let g = patch_grid_shape(
                256,
                &DiscriminatorConfig {
                    layers,
                    ..cfg.clone()
                },
            )
            .unwrap()
            .0;
            assert!((g as isize - prev as isize / 2).abs() <= 1, "{prev} -> {g}");
            prev = g;
        }
    }

    #[test]
    fn discriminator_scores_in_open_interval() {
        let d = Discriminator::new(
            DiscriminatorConfig {
                base_channels: 4,
                ..DiscriminatorConfig::desk_scale()
            },
            DType::F32,
            2,
        )
        .unwrap();
        let a = random_input(2, 3, 64);
        let b = random_input(2, 3, 64);
        let maps = d.score_maps(&a, &b).unwrap();
        assert_eq!(maps.len(), 2);
        let (gh, gw) = patch_grid_shape(64, d.config()).unwrap();
        assert_eq!((maps[0].grid_h, maps[0].grid_w), (gh, gw));
        assert!((1..64).contains(&gh));
        assert!(d.forward(&a, &random_input(2, 3, 32)).is_err());
    }
}
