//! Twin embedding network with shared parameters, contrastive training and
//! one-shot classification by nearest support exemplar.

use std::collections::BTreeSet;

use candle_core::{DType, Tensor, D};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{Checkpoint, Component};
use crate::dataset::{sample_pair, LabeledImageSet, PairSample};
use crate::error::{Error, Result};
use crate::image::{to_batch, ImageTensor};
use crate::nn::{self, Adam, Init, ParamStore};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;
const EMBED_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backbone {
    #[serde(rename = "residual-18")]
    Residual18,
    #[serde(rename = "efficient-b0")]
    EfficientB0,
    #[serde(rename = "mobile-v3-small")]
    MobileV3Small,
    #[serde(rename = "tiny-cnn")]
    TinyCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiameseConfig {
    pub backbone: Backbone,
    pub embedding_dim: usize,
    pub margin: f64,
    pub distance: Distance,
    pub pretrained: bool,
    pub image_size: usize,
    /// Base width of the tiny-cnn backbone; the named backbones ignore it.
    pub tiny_width: usize,
}

impl Default for SiameseConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Residual18,
            embedding_dim: 128,
            margin: 1.0,
            distance: Distance::Cosine,
            pretrained: false,
            image_size: 256,
            tiny_width: 16,
        }
    }
}

impl SiameseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::validation(format!(
                "margin {} must be positive",
                self.margin
            )));
        }
        if self.embedding_dim < 8 {
            return Err(Error::validation(format!(
                "embedding_dim {} < 8",
                self.embedding_dim
            )));
        }
        if self.image_size < 32 {
            return Err(Error::validation(format!(
                "image_size {} < 32",
                self.image_size
            )));
        }
        if self.tiny_width == 0 {
            return Err(Error::validation("tiny_width must be positive"));
        }
        if self.pretrained {
            return Err(Error::validation(
                "pretrained weights are not bundled; set pretrained to false",
            ));
        }
        Ok(())
    }
}

/// Learned representation of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateInput("non-finite embedding entry".into()));
        }
        Ok(Self(v))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0.iter().map(|x| x * k).collect())
    }
}

/// `1 - cos(angle)`, in `[0, 2]`.
pub fn cosine_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.0.len() != b.0.len() {
        return Err(Error::validation("embedding lengths differ"));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::validation(
            "cosine distance of a zero-norm embedding",
        ));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

pub fn euclidean_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.0.len() != b.0.len() {
        return Err(Error::validation("embedding lengths differ"));
    }
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}

pub fn distance(kind: Distance, a: &Embedding, b: &Embedding) -> Result<f64> {
    match kind {
        Distance::Cosine => cosine_distance(a, b),
        Distance::Euclidean => euclidean_distance(a, b),
    }
}

/// `(1-y)·D² + y·max(0, m-D)²`; `y = 0` marks a same-class pair.
pub fn contrastive_loss(d: f64, y: u8, margin: f64) -> f64 {
    if y == 0 {
        d * d
    } else {
        (margin - d).max(0.0).powi(2)
    }
}

/// Derivative of [`contrastive_loss`] with respect to `d`.
pub fn contrastive_loss_grad(d: f64, y: u8, margin: f64) -> f64 {
    if y == 0 {
        2.0 * d
    } else if d < margin {
        -2.0 * (margin - d)
    } else {
        0.0
    }
}

/// Row-wise distances between two `(N, E)` embedding batches.
pub fn distance_tensor(kind: Distance, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(match kind {
        Distance::Cosine => {
            let dot = (a * b)?.sum(D::Minus1)?;
            let norms = (a.sqr()?.sum(D::Minus1)? * b.sqr()?.sum(D::Minus1)?)?;
            (dot / (norms + 1e-12)?.sqrt()?)?.affine(-1.0, 1.0)?
        }
        Distance::Euclidean => ((a - b)?.sqr()?.sum(D::Minus1)? + 1e-12)?.sqrt()?,
    })
}

/// Batch mean of the contrastive loss; `labels` holds 0/1 values.
pub fn contrastive_loss_tensor(d: &Tensor, labels: &Tensor, margin: f64) -> Result<Tensor> {
    let similar = (labels.affine(-1.0, 1.0)? * d.sqr()?)?;
    let dissimilar = (labels * d.affine(-1.0, margin)?.relu()?.sqr()?)?;
    Ok((similar + dissimilar)?.mean_all()?)
}

struct Builder<'a> {
    ps: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn conv(
        &mut self,
        name: &str,
        c_out: usize,
        c_in_per_group: usize,
        k: usize,
        bias: bool,
    ) -> Result<()> {
        let std = (2.0 / (c_in_per_group * k * k) as f64).sqrt();
        self.ps.add(
            &format!("{name}.weight"),
            &[c_out, c_in_per_group, k, k],
            Init::Normal { mean: 0.0, std },
            self.rng,
        )?;
        if bias {
            self.ps.add(
                &format!("{name}.bias"),
                &[c_out],
                Init::Constant(0.0),
                self.rng,
            )?;
        }
        Ok(())
    }

    fn bn(&mut self, name: &str, c: usize) -> Result<()> {
        self.ps.add(
            &format!("{name}.gamma"),
            &[c],
            Init::Constant(1.0),
            self.rng,
        )?;
        self.ps
            .add(&format!("{name}.beta"), &[c], Init::Constant(0.0), self.rng)?;
        self.ps
            .add_buffer(&format!("{name}.running_mean"), &[c], 0.0)?;
        self.ps
            .add_buffer(&format!("{name}.running_var"), &[c], 1.0)
    }

    fn conv_bn(&mut self, name: &str, c_out: usize, c_in_per_group: usize, k: usize) -> Result<()> {
        self.conv(&format!("{name}.conv"), c_out, c_in_per_group, k, false)?;
        self.bn(&format!("{name}.bn"), c_out)
    }

    fn linear(&mut self, name: &str, out: usize, inp: usize) -> Result<()> {
        let std = (1.0 / inp as f64).sqrt();
        self.ps.add(
            &format!("{name}.weight"),
            &[out, inp],
            Init::Normal { mean: 0.0, std },
            self.rng,
        )?;
        self.ps.add(
            &format!("{name}.bias"),
            &[out],
            Init::Constant(0.0),
            self.rng,
        )
    }
}

struct Fwd<'a> {
    ps: &'a ParamStore,
    train: bool,
}

#[derive(Clone, Copy)]
enum Act {
    None,
    Relu,
    Swish,
    HardSwish,
}

fn activate(x: Tensor, act: Act) -> Result<Tensor> {
    match act {
        Act::None => Ok(x),
        Act::Relu => Ok(x.relu()?),
        Act::Swish => nn::swish(&x),
        Act::HardSwish => nn::hard_swish(&x),
    }
}

impl Fwd<'_> {
    fn conv_bn(
        &self,
        x: &Tensor,
        name: &str,
        stride: usize,
        groups: usize,
        act: Act,
    ) -> Result<Tensor> {
        let w = self.ps.get(&format!("{name}.conv.weight"))?;
        let k = w.dims()[2];
        let y = nn::conv2d_grouped(x, w, None, stride, k / 2, groups)?;
        let y = nn::batch_norm(
            &y,
            self.ps.get(&format!("{name}.bn.gamma"))?,
            self.ps.get(&format!("{name}.bn.beta"))?,
            self.ps.buffer(&format!("{name}.bn.running_mean"))?,
            self.ps.buffer(&format!("{name}.bn.running_var"))?,
            self.train,
            BN_MOMENTUM,
            BN_EPS,
        )?;
        activate(y, act)
    }

    fn conv_bias(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        nn::conv2d(
            x,
            self.ps.get(&format!("{name}.weight"))?,
            Some(self.ps.get(&format!("{name}.bias"))?),
            1,
            0,
        )
    }

    fn linear(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        nn::linear(
            x,
            self.ps.get(&format!("{name}.weight"))?,
            self.ps.get(&format!("{name}.bias"))?,
        )
    }

    /// Squeeze-and-excitation gate.
    fn se(&self, x: &Tensor, name: &str, inner: Act, hard_gate: bool) -> Result<Tensor> {
        let s = x.mean_keepdim(3)?.mean_keepdim(2)?;
        let s = activate(self.conv_bias(&s, &format!("{name}.reduce"))?, inner)?;
        let s = self.conv_bias(&s, &format!("{name}.expand"))?;
        let gate = if hard_gate {
            nn::hard_sigmoid(&s)?
        } else {
            nn::sigmoid(&s)?
        };
        Ok(x.broadcast_mul(&gate)?)
    }
}

fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let rounded = ((v + d / 2.0) / d).floor() as usize * divisor;
    let rounded = rounded.max(divisor);
    if (rounded as f64) < 0.9 * v {
        rounded + divisor
    } else {
        rounded
    }
}

/// (expand ratio, out channels, repeats, first stride, kernel)
const EFFICIENT_B0_STAGES: [(usize, usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1, 3),
    (6, 24, 2, 2, 3),
    (6, 40, 2, 2, 5),
    (6, 80, 3, 2, 3),
    (6, 112, 3, 1, 5),
    (6, 192, 4, 2, 5),
    (6, 320, 1, 1, 3),
];

/// (kernel, expanded, out, squeeze-excite, hard-swish, stride)
const MOBILE_V3_SMALL_BLOCKS: [(usize, usize, usize, bool, bool, usize); 11] = [
    (3, 16, 16, true, false, 2),
    (3, 72, 24, false, false, 2),
    (3, 88, 24, false, false, 1),
    (5, 96, 40, true, true, 2),
    (5, 240, 40, true, true, 1),
    (5, 240, 40, true, true, 1),
    (5, 120, 48, true, true, 1),
    (5, 144, 48, true, true, 1),
    (5, 288, 96, true, true, 2),
    (5, 576, 96, true, true, 1),
    (5, 576, 96, true, true, 1),
];

/// Shared-parameter embedding network.
#[derive(Debug, Clone)]
pub struct SiameseModel {
    cfg: SiameseConfig,
    params: ParamStore,
}

impl SiameseModel {
    pub fn new(cfg: SiameseConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new(DType::F32);
        let mut rng = nn::seeded_rng(seed);
        let mut b = Builder {
            ps: &mut params,
            rng: &mut rng,
        };
        let e = cfg.embedding_dim;
        match cfg.backbone {
            Backbone::TinyCnn => {
                let mut c_in = 3;
                for i in 0..4 {
                    let c = cfg.tiny_width << i;
                    b.conv_bn(&format!("block{i}"), c, c_in, 3)?;
                    c_in = c;
                }
                b.linear("proj", e, c_in)?;
            }
            Backbone::Residual18 => {
                b.conv_bn("stem", 64, 3, 7)?;
                let mut c_in = 64;
                for (s, c) in [64usize, 128, 256, 512].into_iter().enumerate() {
                    for k in 0..2 {
                        let name = format!("layer{s}.{k}");
                        b.conv_bn(&format!("{name}.a"), c, c_in, 3)?;
                        b.conv_bn(&format!("{name}.b"), c, c, 3)?;
                        if k == 0 && (s > 0 || c_in != c) {
                            b.conv_bn(&format!("{name}.down"), c, c_in, 1)?;
                        }
                        c_in = c;
                    }
                }
                b.linear("proj", e, 512)?;
            }
            Backbone::EfficientB0 => {
                b.conv_bn("stem", 32, 3, 3)?;
                let mut c_in = 32;
                for (s, &(expand, c_out, repeats, _, k)) in EFFICIENT_B0_STAGES.iter().enumerate() {
                    for r in 0..repeats {
                        let name = format!("stage{s}.{r}");
                        let mid = c_in * expand;
                        if expand != 1 {
                            b.conv_bn(&format!("{name}.expand"), mid, c_in, 1)?;
                        }
                        b.conv_bn(&format!("{name}.dw"), mid, 1, k)?;
                        let squeezed = (c_in / 4).max(1);
                        b.conv(&format!("{name}.se.reduce"), squeezed, mid, 1, true)?;
                        b.conv(&format!("{name}.se.expand"), mid, squeezed, 1, true)?;
                        b.conv_bn(&format!("{name}.project"), c_out, mid, 1)?;
                        c_in = c_out;
                    }
                }
                b.conv_bn("head", 1280, c_in, 1)?;
                b.linear("proj", e, 1280)?;
            }
            Backbone::MobileV3Small => {
                b.conv_bn("stem", 16, 3, 3)?;
                let mut c_in = 16;
                for (i, &(k, exp, c_out, se, _, _)) in MOBILE_V3_SMALL_BLOCKS.iter().enumerate() {
                    let name = format!("block{i}");
                    if exp != c_in {
                        b.conv_bn(&format!("{name}.expand"), exp, c_in, 1)?;
                    }
                    b.conv_bn(&format!("{name}.dw"), exp, 1, k)?;
                    if se {
                        let squeezed = make_divisible(exp as f64 / 4.0, 8);
                        b.conv(&format!("{name}.se.reduce"), squeezed, exp, 1, true)?;
                        b.conv(&format!("{name}.se.expand"), exp, squeezed, 1, true)?;
                    }
                    b.conv_bn(&format!("{name}.project"), c_out, exp, 1)?;
                    c_in = c_out;
                }
                b.conv_bn("head", 576, c_in, 1)?;
                b.linear("hidden", 1024, 576)?;
                b.linear("proj", e, 1024)?;
            }
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &SiameseConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `(N, 3, s, s)` unit-signed images to `(N, embedding_dim)`. Training
    /// mode uses batch statistics and updates the running buffers.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let s = self.cfg.image_size;
        match x.dims4() {
            Ok((_, 3, h, w)) if h == s && w == s => {}
            _ => {
                return Err(Error::validation(format!(
                    "embedding network expects (N, 3, {s}, {s}), got {:?}",
                    x.dims()
                )))
            }
        }
        let f = Fwd {
            ps: &self.params,
            train,
        };
        let pooled = match self.cfg.backbone {
            Backbone::TinyCnn => {
                let mut h = x.clone();
                for i in 0..4 {
                    h = f.conv_bn(&h, &format!("block{i}"), 2, 1, Act::Relu)?;
                }
                nn::global_avg_pool(&h)?
            }
            Backbone::Residual18 => {
                let h = f.conv_bn(x, "stem", 2, 1, Act::Relu)?;
                let mut h = nn::max_pool_3x3_s2(&h)?;
                for s in 0..4 {
                    for k in 0..2 {
                        let name = format!("layer{s}.{k}");
                        let stride = if k == 0 && s > 0 { 2 } else { 1 };
                        let y = f.conv_bn(&h, &format!("{name}.a"), stride, 1, Act::Relu)?;
                        let y = f.conv_bn(&y, &format!("{name}.b"), 1, 1, Act::None)?;
                        let shortcut = if self
                            .params
                            .var(&format!("{name}.down.conv.weight"))
                            .is_some()
                        {
                            f.conv_bn(&h, &format!("{name}.down"), stride, 1, Act::None)?
                        } else {
                            h
                        };
                        h = (y + shortcut)?.relu()?;
                    }
                }
                nn::global_avg_pool(&h)?
            }
            Backbone::EfficientB0 => {
                let mut h = f.conv_bn(x, "stem", 2, 1, Act::Swish)?;
                let mut c_in = 32;
                for (s, &(expand, c_out, repeats, stride, _)) in
                    EFFICIENT_B0_STAGES.iter().enumerate()
                {
                    for r in 0..repeats {
                        let name = format!("stage{s}.{r}");
                        let mid = c_in * expand;
                        let st = if r == 0 { stride } else { 1 };
                        let mut y = if expand != 1 {
                            f.conv_bn(&h, &format!("{name}.expand"), 1, 1, Act::Swish)?
                        } else {
                            h.clone()
                        };
                        y = f.conv_bn(&y, &format!("{name}.dw"), st, mid, Act::Swish)?;
                        y = f.se(&y, &format!("{name}.se"), Act::Swish, false)?;
                        y = f.conv_bn(&y, &format!("{name}.project"), 1, 1, Act::None)?;
                        h = if st == 1 && c_in == c_out {
                            (y + h)?
                        } else {
                            y
                        };
                        c_in = c_out;
                    }
                }
                let h = f.conv_bn(&h, "head", 1, 1, Act::Swish)?;
                nn::global_avg_pool(&h)?
            }
            Backbone::MobileV3Small => {
                let mut h = f.conv_bn(x, "stem", 2, 1, Act::HardSwish)?;
                let mut c_in = 16;
                for (i, &(_, exp, c_out, se, hs, stride)) in
                    MOBILE_V3_SMALL_BLOCKS.iter().enumerate()
                {
                    let name = format!("block{i}");
                    let act = if hs { Act::HardSwish } else { Act::Relu };
                    let mut y = if exp != c_in {
                        f.conv_bn(&h, &format!("{name}.expand"), 1, 1, act)?
                    } else {
                        h.clone()
                    };
                    y = f.conv_bn(&y, &format!("{name}.dw"), stride, exp, act)?;
                    if se {
                        y = f.se(&y, &format!("{name}.se"), Act::Relu, true)?;
                    }
                    y = f.conv_bn(&y, &format!("{name}.project"), 1, 1, Act::None)?;
                    h = if stride == 1 && c_in == c_out {
                        (y + h)?
                    } else {
                        y
                    };
                    c_in = c_out;
                }
                let h = f.conv_bn(&h, "head", 1, 1, Act::HardSwish)?;
                let pooled = nn::global_avg_pool(&h)?;
                nn::hard_swish(&f.linear(&pooled, "hidden")?)?
            }
        };
        f.linear(&pooled, "proj")
    }

    fn prepare(&self, images: &[&ImageTensor]) -> Result<Tensor> {
        let s = self.cfg.image_size;
        if let Some(img) = images.iter().find(|i| i.height() != s || i.width() != s) {
            return Err(Error::validation(format!(
                "image is {}x{}, embedding network expects {s}x{s}",
                img.height(),
                img.width()
            )));
        }
        let rgb: Vec<ImageTensor> = images.iter().map(|i| i.to_rgb()).collect();
        to_batch(
            &rgb.iter().collect::<Vec<_>>(),
            self.params.dtype(),
            self.params.device(),
        )
    }

    /// Evaluation-mode embeddings, one per image.
    pub fn embed_many(&self, images: &[&ImageTensor]) -> Result<Vec<Embedding>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EMBED_BATCH) {
            let y = self.forward(&self.prepare(chunk)?, false)?;
            let rows: Vec<Vec<f64>> = y.to_dtype(DType::F64)?.to_vec2()?;
            for r in rows {
                out.push(Embedding::new(r)?);
            }
        }
        Ok(out)
    }

    pub fn embed(&self, image: &ImageTensor) -> Result<Embedding> {
        Ok(self.embed_many(&[image])?.remove(0))
    }

    /// Contrastive loss of a pair batch. Both members run through one
    /// forward pass of the same parameters.
    pub fn pair_loss(&self, pairs: &[&PairSample], train: bool) -> Result<Tensor> {
        let n = pairs.len();
        let images: Vec<&ImageTensor> = pairs
            .iter()
            .map(|p| &p.x1)
            .chain(pairs.iter().map(|p| &p.x2))
            .collect();
        let emb = self.forward(&self.prepare(&images)?, train)?;
        let (a, b) = (emb.narrow(0, 0, n)?, emb.narrow(0, n, n)?);
        let d = distance_tensor(self.cfg.distance, &a, &b)?;
        let labels: Vec<f32> = pairs.iter().map(|p| p.label as f32).collect();
        let labels = Tensor::from_vec(labels, n, emb.device())?.to_dtype(emb.dtype())?;
        contrastive_loss_tensor(&d, &labels, self.cfg.margin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiameseRunConfig {
    pub backbone: Backbone,
    pub embedding_dim: usize,
    pub margin: f64,
    pub distance: Distance,
    pub pretrained: bool,
    pub pairs_per_epoch: usize,
    pub val_pairs: usize,
    pub batch: usize,
    pub lr: f64,
    pub betas: [f64; 2],
    pub epochs: usize,
    pub seed: u64,
    pub image_size: usize,
    pub p_similar: f64,
    pub tiny_width: usize,
}

impl Default for SiameseRunConfig {
    fn default() -> Self {
        let m = SiameseConfig::default();
        Self {
            backbone: m.backbone,
            embedding_dim: m.embedding_dim,
            margin: m.margin,
            distance: m.distance,
            pretrained: m.pretrained,
            pairs_per_epoch: 10_000,
            val_pairs: 1_000,
            batch: 8,
            lr: 1e-3,
            betas: [0.9, 0.999],
            epochs: 35,
            seed: 0,
            image_size: m.image_size,
            p_similar: 0.5,
            tiny_width: m.tiny_width,
        }
    }
}

impl SiameseRunConfig {
    /// tiny-cnn at 64×64, 500 pairs per epoch, 5 epochs.
    pub fn desk() -> Self {
        Self {
            backbone: Backbone::TinyCnn,
            pairs_per_epoch: 500,
            val_pairs: 100,
            epochs: 5,
            image_size: 64,
            ..Self::default()
        }
    }

    pub fn model_config(&self) -> SiameseConfig {
        SiameseConfig {
            backbone: self.backbone,
            embedding_dim: self.embedding_dim,
            margin: self.margin,
            distance: self.distance,
            pretrained: self.pretrained,
            image_size: self.image_size,
            tiny_width: self.tiny_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if self.batch == 0 || self.epochs == 0 || self.pairs_per_epoch == 0 {
            return Err(Error::validation(
                "batch, epochs and pairs_per_epoch must be positive",
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::validation("lr must be positive"));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::validation("betas must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.p_similar) {
            return Err(Error::validation("p_similar must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when no validation pairs were requested.
    pub val_loss: Option<f64>,
}

#[derive(Debug)]
pub struct SiameseRun {
    pub model: SiameseModel,
    pub optimizer: Adam,
    pub history: Vec<EpochRecord>,
}

impl SiameseRun {
    pub fn to_checkpoint(&self, cfg: &SiameseRunConfig) -> Result<Checkpoint> {
        Ok(Checkpoint {
            component: Component::Siamese,
            params: self.model.params().export()?,
            optimizer: self.optimizer.export()?,
            optimizer_step: self.optimizer.step,
            config: serde_json::to_value(cfg).map_err(|e| Error::validation(e.to_string()))?,
            seed: cfg.seed,
            epoch: self.history.len() as u64,
        })
    }
}

pub fn load_siamese(ckpt: &Checkpoint) -> Result<(SiameseModel, SiameseRunConfig)> {
    ckpt.expect_component(Component::Siamese)?;
    let cfg: SiameseRunConfig = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| Error::Corruption(format!("config echo: {e}")))?;
    let model = SiameseModel::new(cfg.model_config(), cfg.seed)?;
    model.params().import(&ckpt.params)?;
    Ok((model, cfg))
}

fn mean_loss(model: &SiameseModel, pairs: &[PairSample], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in pairs.chunks(batch) {
        let refs: Vec<&PairSample> = chunk.iter().collect();
        total += nn::scalar(&model.pair_loss(&refs, false)?)? * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Contrastive training over freshly sampled pairs each epoch. Validation
/// pairs come from `val` (or `train` when absent), are drawn once from an
/// independent stream, and are only monitored.
pub fn train_siamese(
    cfg: &SiameseRunConfig,
    train: &LabeledImageSet,
    val: Option<&LabeledImageSet>,
) -> Result<SiameseRun> {
    cfg.validate()?;
    let eligible = train
        .classes()
        .iter()
        .filter(|c| train.indices_of(**c).len() >= 2)
        .count();
    if eligible < 2 {
        return Err(Error::validation(
            "training needs at least two classes with two or more images each",
        ));
    }
    let model = SiameseModel::new(cfg.model_config(), cfg.seed)?;
    let mut optimizer = Adam::new(cfg.lr, cfg.betas);
    let mut val_rng = nn::seeded_rng(cfg.seed ^ 0x7f4a_7c15_9e37_79b9);
    let val_set = val.unwrap_or(train);
    let val_pairs = (0..cfg.val_pairs)
        .map(|_| sample_pair(val_set, &mut val_rng, cfg.p_similar))
        .collect::<Result<Vec<_>>>()?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = nn::seeded_rng(
            cfg.seed
                .wrapping_add(0x9e37_79b9u64.wrapping_mul(epoch as u64 + 1)),
        );
        let pairs = (0..cfg.pairs_per_epoch)
            .map(|_| sample_pair(train, &mut rng, cfg.p_similar))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        for chunk in pairs.chunks(cfg.batch) {
            let refs: Vec<&PairSample> = chunk.iter().collect();
            let loss = model.pair_loss(&refs, true)?;
            let value = nn::scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Divergence {
                    step: epoch as u64,
                    what: "contrastive loss (epoch index)".into(),
                });
            }
            total += value * chunk.len() as f64;
            let grads = loss.backward()?;
            optimizer.step(model.params(), &grads)?;
        }
        let val_loss = if val_pairs.is_empty() {
            None
        } else {
            Some(mean_loss(&model, &val_pairs, cfg.batch)?)
        };
        history.push(EpochRecord {
            epoch,
            train_loss: total / pairs.len() as f64,
            val_loss,
        });
    }
    Ok(SiameseRun {
        model,
        optimizer,
        history,
    })
}

/// One support image per class plus targets to classify.
#[derive(Debug, Clone)]
pub struct OneShotEpisode {
    pub support: Vec<(u32, ImageTensor)>,
    pub targets: Vec<(u32, ImageTensor)>,
}

impl OneShotEpisode {
    pub fn validate(&self) -> Result<()> {
        let classes: BTreeSet<u32> = self.support.iter().map(|(c, _)| *c).collect();
        if classes.len() != self.support.len() {
            return Err(Error::validation("support classes must be unique"));
        }
        if self.support.is_empty() {
            return Err(Error::validation("empty support set"));
        }
        if let Some((c, _)) = self.targets.iter().find(|(c, _)| !classes.contains(c)) {
            return Err(Error::validation(format!(
                "target class {c} has no support image"
            )));
        }
        Ok(())
    }
}

/// Class of the nearest support embedding; ties go to the lowest class id.
pub fn nearest_class(
    kind: Distance,
    support: &[(u32, Embedding)],
    query: &Embedding,
) -> Result<u32> {
    let mut best: Option<(f64, u32)> = None;
    for (class, e) in support {
        let d = distance(kind, query, e)?;
        best = match best {
            Some((bd, bc)) if bd < d || (bd == d && bc < *class) => Some((bd, bc)),
            _ => Some((d, *class)),
        };
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| Error::validation("empty support set"))
}

pub fn one_shot_classify(
    model: &SiameseModel,
    episode: &OneShotEpisode,
    target_index: usize,
) -> Result<u32> {
    episode.validate()?;
    let (_, target) = episode
        .targets
        .get(target_index)
        .ok_or_else(|| Error::validation(format!("target index {target_index} out of range")))?;
    let images: Vec<&ImageTensor> = episode.support.iter().map(|(_, i)| i).collect();
    let support: Vec<(u32, Embedding)> = episode
        .support
        .iter()
        .map(|(c, _)| *c)
        .zip(model.embed_many(&images)?)
        .collect();
    nearest_class(model.config().distance, &support, &model.embed(target)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub classes: Vec<u32>,
    pub support_indices: Vec<usize>,
    pub target_class: u32,
    pub target_index: usize,
    pub predicted: u32,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneShotReport {
    pub n_way: usize,
    pub episodes: usize,
    pub accuracy: f64,
    pub records: Vec<EpisodeRecord>,
}

/// Episodic n-way one-shot accuracy from precomputed embeddings. When
/// `distinct_target` is set, a target never reuses its class's support index
/// (for classes holding more than one image).
pub fn evaluate_embeddings<R: Rng + ?Sized>(
    kind: Distance,
    eval: (&LabeledImageSet, &[Embedding]),
    support: (&LabeledImageSet, &[Embedding]),
    episodes: usize,
    n_way: usize,
    distinct_target: bool,
    rng: &mut R,
) -> Result<OneShotReport> {
    let (eval_set, eval_emb) = eval;
    let (support_set, support_emb) = support;
    let classes = eval_set.classes();
    if n_way < 2 || n_way > classes.len() {
        return Err(Error::validation(format!(
            "n_way {n_way} needs between 2 and {} evaluation classes",
            classes.len()
        )));
    }
    if let Some(c) = classes
        .iter()
        .find(|c| support_set.indices_of(**c).is_empty())
    {
        return Err(Error::validation(format!("class {c} has no support image")));
    }
    if episodes == 0 {
        return Err(Error::validation("episodes must be positive"));
    }
    let mut records = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut chosen: Vec<u32> = classes.choose_multiple(rng, n_way).copied().collect();
        chosen.sort_unstable();
        let support_indices: Vec<usize> = chosen
            .iter()
            .map(|c| *support_set.indices_of(*c).choose(rng).expect("non-empty"))
            .collect();
        let slot = rng.random_range(0..n_way);
        let target_class = chosen[slot];
        let pool = eval_set.indices_of(target_class);
        let candidates: Vec<usize> = if distinct_target && pool.len() > 1 {
            pool.iter()
                .copied()
                .filter(|i| *i != support_indices[slot])
                .collect()
        } else {
            pool.to_vec()
        };
        let target_index = *candidates.choose(rng).expect("non-empty");
        let sup: Vec<(u32, Embedding)> = chosen
            .iter()
            .zip(&support_indices)
            .map(|(c, i)| (*c, support_emb[*i].clone()))
            .collect();
        let predicted = nearest_class(kind, &sup, &eval_emb[target_index])?;
        records.push(EpisodeRecord {
            classes: chosen,
            support_indices,
            target_class,
            target_index,
            predicted,
            correct: predicted == target_class,
        });
    }
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(OneShotReport {
        n_way,
        episodes,
        accuracy: correct as f64 / episodes as f64,
        records,
    })
}

/// Episodic evaluation: supports come from `support_source`, targets from
/// `eval_set`. Passing the same set for both draws targets distinct from
/// the support exemplar.
pub fn evaluate_one_shot<R: Rng + ?Sized>(
    model: &SiameseModel,
    eval_set: &LabeledImageSet,
    support_source: &LabeledImageSet,
    episodes: usize,
    n_way: usize,
    rng: &mut R,
) -> Result<OneShotReport> {
    let embed = |set: &LabeledImageSet| -> Result<Vec<Embedding>> {
        let images: Vec<&ImageTensor> = set.samples().iter().map(|(i, _)| i).collect();
        model.embed_many(&images)
    };
    let same = std::ptr::eq(eval_set, support_source);
    let eval_emb = embed(eval_set)?;
    let support_emb = if same {
        eval_emb.clone()
    } else {
        embed(support_source)?
    };
    evaluate_embeddings(
        model.config().distance,
        (eval_set, &eval_emb),
        (support_source, &support_emb),
        episodes,
        n_way,
        same,
        rng,
    )
}


#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    fn emb(dim: usize) -> impl Strategy<Value = Embedding> {
        prop::collection::vec(-10.0f64..10.0, dim)
            .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
            .prop_map(Embedding)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn cosine_symmetric(a in emb(8), b in emb(8)) {
            let ab = cosine_distance(&a, &b).unwrap();
            let ba = cosine_distance(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
        }

        #[test]
        fn cosine_scale_invariant(a in emb(8), b in emb(8), k in 0.01f64..100.0) {
            let d = cosine_distance(&a, &b).unwrap();
            let ds = cosine_distance(&a.scaled(k), &b).unwrap();
            prop_assert!((d - ds).abs() <= 1e-9);
        }

        #[test]
        fn contrastive_gradient_matches_differences(d in 0.0f64..3.0, y in 0u8..=1, m in 0.5f64..2.0) {
            // keep away from the kink at d = m
            prop_assume!((d - m).abs() > 1e-3);
            let h = 1e-6;
            let fd = (contrastive_loss(d + h, y, m) - contrastive_loss(d - h, y, m)) / (2.0 * h);
            prop_assert!((fd - contrastive_loss_grad(d, y, m)).abs() < 1e-6);
        }

        #[test]
        fn nearest_class_matches_exhaustive_search(
            support in prop::collection::vec(emb(4), 2..8),
            query in emb(4),
            euclid in any::<bool>(),
        ) {
            let kind = if euclid { Distance::Euclidean } else { Distance::Cosine };
            let labelled: Vec<(u32, Embedding)> = support
                .into_iter()
                .enumerate()
                .map(|(i, e)| (i as u32 * 3 + 1, e))
                .collect();
            let dists: Vec<f64> = labelled
                .iter()
                .map(|(_, e)| distance(kind, &query, e).unwrap())
                .collect();
            let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let want = labelled
                .iter()
                .zip(&dists)
                .filter(|(_, d)| **d == min)
                .map(|((c, _), _)| *c)
                .min()
                .unwrap();
            prop_assert_eq!(nearest_class(kind, &labelled, &query).unwrap(), want);
        }
    }

    #[test]
    fn nearest_class_breaks_ties_toward_lowest_id() {
        let e = Embedding(vec![1.0, 0.0]);
        let support = vec![
            (7, e.clone()),
            (2, e.clone()),
            (5, Embedding(vec![0.0, 1.0])),
        ];
        assert_eq!(nearest_class(Distance::Cosine, &support, &e).unwrap(), 2);
    }
}
