//! Alternating least-squares adversarial training of the generator and the
//! patch discriminator.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, Checkpoint, Component};
use crate::dataset::GanPair;
use crate::error::{Error, Result};
use crate::gan_models::{
    patch_grid_shape, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, PatchScoreMap,
};
use crate::image::{to_batch, ImageTensor, ValueRange};
use crate::nn::{self, Adam, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanLossWeights {
    #[serde(rename = "w_D_real")]
    pub w_d_real: f64,
    #[serde(rename = "w_D_gen")]
    pub w_d_gen: f64,
    #[serde(rename = "w_G_real")]
    pub w_g_real: f64,
    #[serde(rename = "w_G_gen")]
    pub w_g_gen: f64,
}

impl Default for GanLossWeights {
    fn default() -> Self {
        Self {
            w_d_real: 1.0,
            w_d_gen: 1.0,
            w_g_real: 1.0,
            w_g_gen: 1.0,
        }
    }
}

impl GanLossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_d_real, self.w_d_gen, self.w_g_real, self.w_g_gen];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation(
                "loss weights must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Which discriminator output the generator's adversarial term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialMode {
    /// `MSE(D(G(N), N), 1)`: gradient reaches the generator.
    #[default]
    Standard,
    /// `MSE(D(C, N), 0)` as printed; independent of the generator.
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanRunConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub betas: [f64; 2],
    pub epochs: usize,
    pub image_size: usize,
    pub depth: usize,
    pub adversarial_mode: AdversarialMode,
    pub weights: GanLossWeights,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub base_channels: usize,
    pub disc_layers: usize,
    pub dropout_rate: f64,
}

impl Default for GanRunConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 2e-4,
            betas: [0.5, 0.999],
            epochs: 200,
            image_size: 256,
            depth: 8,
            adversarial_mode: AdversarialMode::Standard,
            weights: GanLossWeights::default(),
            seed: 0,
            checkpoint_every: 10,
            base_channels: 64,
            disc_layers: 3,
            dropout_rate: 0.5,
        }
    }
}

impl GanRunConfig {
    /// 64×64, depth 6, batch 4, 75 epochs: 300 steps over 16 pairs.
    pub fn desk() -> Self {
        Self {
            batch_size: 4,
            epochs: 75,
            image_size: 64,
            depth: 6,
            checkpoint_every: 25,
            base_channels: 16,
            disc_layers: 2,
            ..Self::default()
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            image_size: self.image_size,
            depth: self.depth,
            base_channels: self.base_channels,
            dropout_rate: self.dropout_rate,
            input_channels: 3,
            output_channels: 3,
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            input_channels: 6,
            layers: self.disc_layers,
            base_channels: self.base_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.checkpoint_every == 0 {
            return Err(Error::validation(
                "batch_size, epochs and checkpoint_every must be positive",
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::validation("lr must be positive"));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::validation("betas must lie in [0, 1)"));
        }
        self.weights.validate()?;
        self.generator_config().validate()?;
        patch_grid_shape(self.image_size, &self.discriminator_config())?;
        Ok(())
    }
}

/// Mean of `(score - target)²` over a score map; `target` is 0 or 1.
pub fn mse_map_loss(map: &PatchScoreMap, target: f64) -> Result<f64> {
    check_target(target)?;
    Ok(map.scores.iter().map(|s| (s - target).powi(2)).sum::<f64>() / map.scores.len() as f64)
}

fn check_target(target: f64) -> Result<()> {
    if target != 0.0 && target != 1.0 {
        return Err(Error::validation(format!(
            "patch target must be 0 or 1, got {target}"
        )));
    }
    Ok(())
}

/// Differentiable counterpart of [`mse_map_loss`] over a batch of maps.
pub fn mse_map_loss_tensor(maps: &Tensor, target: f64) -> Result<Tensor> {
    check_target(target)?;
    Ok((maps - target)?.sqr()?.mean_all()?)
}

/// Mean absolute per-value difference.
pub fn l1_loss(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_layout(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum();
    Ok(sum / a.data().len() as f64)
}

pub fn l1_loss_tensor(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::validation(format!(
            "shape mismatch {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

/// `(w_real·real + w_gen·gen) / 2`.
pub fn discriminator_objective(real: f64, gen: f64, w: &GanLossWeights) -> f64 {
    (w.w_d_real * real + w.w_d_gen * gen) / 2.0
}

/// `(w_real·adv + w_gen·l1) / 2`.
pub fn generator_objective(adv: f64, l1: f64, w: &GanLossWeights) -> f64 {
    (w.w_g_real * adv + w.w_g_gen * l1) / 2.0
}

/// One history row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_g_gen: f64,
}

pub fn history_csv(history: &[HistoryRecord]) -> String {
    let mut out = String::from("step,loss_D,loss_G,loss_G_gen\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.loss_d, r.loss_g, r.loss_g_gen);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorStep {
    pub loss_d: f64,
    pub loss_real: f64,
    pub loss_gen: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorStep {
    pub loss_g: f64,
    pub loss_adv: f64,
    pub loss_l1: f64,
}

/// Noisy and clean images stacked as unit-signed `(N, 3, H, W)` tensors.
#[derive(Debug, Clone)]
pub struct GanBatch {
    pub noisy: Tensor,
    pub clean: Tensor,
}

impl GanBatch {
    pub fn from_pairs(pairs: &[&GanPair], dtype: DType) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        let noisy: Vec<ImageTensor> = pairs.iter().map(|p| p.noisy.to_rgb()).collect();
        let clean: Vec<ImageTensor> = pairs.iter().map(|p| p.clean.to_rgb()).collect();
        let device = candle_core::Device::Cpu;
        Ok(Self {
            noisy: to_batch(&noisy.iter().collect::<Vec<_>>(), dtype, &device)?,
            clean: to_batch(&clean.iter().collect::<Vec<_>>(), dtype, &device)?,
        })
    }
}

/// Both networks, both optimizers and the step history.
#[derive(Debug)]
pub struct GanTrainState {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    /// Completed epochs.
    pub epoch: u64,
    /// Index of the next step to run.
    pub step: u64,
    pub history: Vec<HistoryRecord>,
}

fn finite(value: f64, step: u64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence {
            step,
            what: what.into(),
        })
    }
}

impl GanTrainState {
    pub fn new(cfg: &GanRunConfig, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            generator: Generator::new(cfg.generator_config(), dtype, cfg.seed)?,
            discriminator: Discriminator::new(
                cfg.discriminator_config(),
                dtype,
                cfg.seed.wrapping_add(1),
            )?,
            opt_g: Adam::new(cfg.lr, cfg.betas),
            opt_d: Adam::new(cfg.lr, cfg.betas),
            epoch: 0,
            step: 0,
            history: Vec::new(),
        })
    }

    /// Discriminator update against a precomputed generator output, which is
    /// detached so no gradient reaches the generator.
    pub fn discriminator_update(
        &mut self,
        batch: &GanBatch,
        generated: &Tensor,
        w: &GanLossWeights,
    ) -> Result<DiscriminatorStep> {
        let real = self.discriminator.forward(&batch.clean, &batch.noisy)?;
        let fake = self
            .discriminator
            .forward(&generated.detach(), &batch.noisy)?;
        let loss_real = mse_map_loss_tensor(&real, 1.0)?;
        let loss_gen = mse_map_loss_tensor(&fake, 0.0)?;
        let loss = ((loss_real.clone() * w.w_d_real)? + (loss_gen.clone() * w.w_d_gen)?)?;
        let loss = (loss / 2.0)?;
        let value = finite(nn::scalar(&loss)?, self.step, "discriminator loss")?;
        let grads = loss.backward()?;
        self.opt_d.step(self.discriminator.params(), &grads)?;
        Ok(DiscriminatorStep {
            loss_d: value,
            loss_real: nn::scalar(&loss_real)?,
            loss_gen: nn::scalar(&loss_gen)?,
        })
    }

    /// Generator update; `generated` must still carry its graph to the
    /// generator parameters.
    pub fn generator_update(
        &mut self,
        batch: &GanBatch,
        generated: &Tensor,
        w: &GanLossWeights,
        mode: AdversarialMode,
    ) -> Result<GeneratorStep> {
        let (loss, adv, l1) = self.generator_loss(batch, generated, w, mode)?;
        let value = finite(nn::scalar(&loss)?, self.step, "generator loss")?;
        let grads = loss.backward()?;
        self.opt_g.step(self.generator.params(), &grads)?;
        Ok(GeneratorStep {
            loss_g: value,
            loss_adv: nn::scalar(&adv)?,
            loss_l1: nn::scalar(&l1)?,
        })
    }

    /// `(loss_G, adversarial term, L1 term)` as differentiable scalars.
    pub fn generator_loss(
        &self,
        batch: &GanBatch,
        generated: &Tensor,
        w: &GanLossWeights,
        mode: AdversarialMode,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let adv = match mode {
            AdversarialMode::Standard => {
                mse_map_loss_tensor(&self.discriminator.forward(generated, &batch.noisy)?, 1.0)?
            }
            AdversarialMode::PaperLiteral => mse_map_loss_tensor(
                &self.discriminator.forward(&batch.clean, &batch.noisy)?,
                0.0,
            )?,
        };
        let l1 = l1_loss_tensor(generated, &batch.clean)?;
        let loss = (((adv.clone() * w.w_g_real)? + (l1.clone() * w.w_g_gen)?)? / 2.0)?;
        Ok((loss, adv, l1))
    }

    fn dropout_rng(&self, seed: u64) -> rand_chacha::ChaCha8Rng {
        nn::seeded_rng(seed ^ 0xd1b5_4a32_d192_ed03u64.wrapping_mul(self.step + 1))
    }

    /// Standalone discriminator step: runs the generator in training mode,
    /// then updates only the discriminator.
    pub fn discriminator_step(
        &mut self,
        batch: &GanBatch,
        w: &GanLossWeights,
        seed: u64,
    ) -> Result<DiscriminatorStep> {
        let mut rng = self.dropout_rng(seed);
        let generated = self
            .generator
            .forward(&batch.noisy, &mut Mode::Train(&mut rng))?;
        self.discriminator_update(batch, &generated, w)
    }

    /// Standalone generator step: updates only the generator.
    pub fn generator_step(
        &mut self,
        batch: &GanBatch,
        w: &GanLossWeights,
        mode: AdversarialMode,
        seed: u64,
    ) -> Result<GeneratorStep> {
        let mut rng = self.dropout_rng(seed);
        let generated = self
            .generator
            .forward(&batch.noisy, &mut Mode::Train(&mut rng))?;
        self.generator_update(batch, &generated, w, mode)
    }

    /// One iteration: a single training-mode generator pass feeds the
    /// discriminator update (detached) and then the generator update.
    pub fn train_iteration(
        &mut self,
        batch: &GanBatch,
        cfg: &GanRunConfig,
    ) -> Result<HistoryRecord> {
        let mut rng = self.dropout_rng(cfg.seed);
        let generated = self
            .generator
            .forward(&batch.noisy, &mut Mode::Train(&mut rng))?;
        let d = self.discriminator_update(batch, &generated, &cfg.weights)?;
        let g = self.generator_update(batch, &generated, &cfg.weights, cfg.adversarial_mode)?;
        let record = HistoryRecord {
            step: self.step,
            loss_d: d.loss_d,
            loss_g: g.loss_g,
            loss_g_gen: g.loss_l1,
        };
        self.history.push(record);
        self.step += 1;
        Ok(record)
    }

    pub fn to_checkpoints(&self, cfg: &GanRunConfig) -> Result<(Checkpoint, Checkpoint)> {
        let config = serde_json::to_value(cfg).map_err(|e| Error::validation(e.to_string()))?;
        let make = |component, params: &nn::ParamStore, opt: &Adam| -> Result<Checkpoint> {
            Ok(Checkpoint {
                component,
                params: params.export()?,
                optimizer: opt.export()?,
                optimizer_step: opt.step,
                config: config.clone(),
                seed: cfg.seed,
                epoch: self.epoch,
            })
        };
        Ok((
            make(Component::Generator, self.generator.params(), &self.opt_g)?,
            make(
                Component::Discriminator,
                self.discriminator.params(),
                &self.opt_d,
            )?,
        ))
    }

    /// Restores a state saved at an epoch boundary. The history restarts
    /// empty; the step counter resumes at `epoch × steps_per_epoch`.
    pub fn from_checkpoints(
        gen: &Checkpoint,
        disc: &Checkpoint,
        dtype: DType,
        steps_per_epoch: u64,
    ) -> Result<(Self, GanRunConfig)> {
        gen.expect_component(Component::Generator)?;
        disc.expect_component(Component::Discriminator)?;
        if gen.epoch != disc.epoch {
            return Err(Error::Corruption(format!(
                "generator epoch {} and discriminator epoch {} differ",
                gen.epoch, disc.epoch
            )));
        }
        let cfg: GanRunConfig = serde_json::from_value(gen.config.clone())
            .map_err(|e| Error::Corruption(format!("config echo: {e}")))?;
        let mut state = Self::new(&cfg, dtype)?;
        state.generator.params().import(&gen.params)?;
        state.discriminator.params().import(&disc.params)?;
        state
            .opt_g
            .import(gen.optimizer_step, &gen.optimizer, state.generator.params())?;
        state.opt_d.import(
            disc.optimizer_step,
            &disc.optimizer,
            state.discriminator.params(),
        )?;
        state.epoch = gen.epoch;
        state.step = gen.epoch * steps_per_epoch;
        Ok((state, cfg))
    }

    pub fn save(&self, cfg: &GanRunConfig, dir: &Path, tag: &str) -> Result<(PathBuf, PathBuf)> {
        let (g, d) = self.to_checkpoints(cfg)?;
        let gp = dir.join(format!("generator{tag}.{}", artifacts::CHECKPOINT_EXT));
        let dp = dir.join(format!("discriminator{tag}.{}", artifacts::CHECKPOINT_EXT));
        artifacts::save_checkpoint(&g, &gp)?;
        artifacts::save_checkpoint(&d, &dp)?;
        Ok((gp, dp))
    }
}

pub fn steps_per_epoch(pairs: usize, batch_size: usize) -> u64 {
    pairs.div_ceil(batch_size.max(1)) as u64
}

/// Output of a training run.
#[derive(Debug)]
pub struct GanRun {
    pub state: GanTrainState,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains from scratch. See [`continue_gan`].
pub fn train_gan(
    cfg: &GanRunConfig,
    data: &[GanPair],
    checkpoint_dir: Option<&Path>,
) -> Result<GanRun> {
    let state = GanTrainState::new(cfg, DType::F32)?;
    continue_gan(state, cfg, data, checkpoint_dir)
}

/// Runs epochs `state.epoch..cfg.epochs`. Each epoch's order comes from a
/// generator seeded by `(seed, epoch)` and each step's dropout from
/// `(seed, step)`, so a resumed run replays exactly what an uninterrupted
/// run would have done. Checkpoints are written every `checkpoint_every`
/// epochs and after the last one.
pub fn continue_gan(
    mut state: GanTrainState,
    cfg: &GanRunConfig,
    data: &[GanPair],
    checkpoint_dir: Option<&Path>,
) -> Result<GanRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::validation("no training pairs"));
    }
    let size = cfg.image_size;
    if let Some(p) = data
        .iter()
        .find(|p| p.noisy.height() != size || p.noisy.width() != size)
    {
        return Err(Error::validation(format!(
            "pair is {}x{}, run expects {size}x{size}",
            p.noisy.height(),
            p.noisy.width()
        )));
    }
    let data: Vec<GanPair> = data
        .iter()
        .map(|p| GanPair {
            noisy: p.noisy.to_range(ValueRange::UnitSigned),
            clean: p.clean.to_range(ValueRange::UnitSigned),
            class_id: p.class_id,
        })
        .collect();
    let dtype = state.generator.params().dtype();
    let mut checkpoints = Vec::new();
    let mut last_good: Option<PathBuf> = None;
    while (state.epoch as usize) < cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut nn::seeded_rng(
            cfg.seed ^ 0x5851_f42d_4c95_7f2du64.wrapping_mul(state.epoch + 1),
        ));
        for chunk in order.chunks(cfg.batch_size) {
            let pairs: Vec<&GanPair> = chunk.iter().map(|&i| &data[i]).collect();
            let batch = GanBatch::from_pairs(&pairs, dtype)?;
            state
                .train_iteration(&batch, cfg)
                .map_err(|e| match (e, &last_good) {
                    (Error::Divergence { step, what }, Some(p)) => Error::Divergence {
                        step,
                        what: format!("{what} (last good checkpoint: {})", p.display()),
                    },
                    (e, _) => e,
                })?;
        }
        state.epoch += 1;
        if let Some(dir) = checkpoint_dir {
            let done = state.epoch as usize == cfg.epochs;
            if done || (state.epoch as usize).is_multiple_of(cfg.checkpoint_every) {
                let (g, d) = state.save(cfg, dir, &format!("_e{:04}", state.epoch))?;
                last_good = Some(g.clone());
                checkpoints.extend([g, d]);
            }
            if done {
                let (g, d) = state.save(cfg, dir, "")?;
                checkpoints.extend([g, d]);
            }
        }
    }
    Ok(GanRun { state, checkpoints })
}

/// Restores a generator for inference.
pub fn load_generator(ckpt: &Checkpoint) -> Result<Generator> {
    ckpt.expect_component(Component::Generator)?;
    let cfg: GanRunConfig = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| Error::Corruption(format!("config echo: {e}")))?;
    let g = Generator::new(cfg.generator_config(), DType::F32, cfg.seed)?;
    g.params().import(&ckpt.params)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{corpus_pairs, synthesize_corpus, CorpusSpec};
    use crate::dataset::DegradationConfig;

    fn tiny_cfg() -> GanRunConfig {
        GanRunConfig {
            batch_size: 2,
            epochs: 2,
            image_size: 16,
            depth: 3,
            base_channels: 2,
            disc_layers: 2,
            checkpoint_every: 1,
            seed: 3,
            ..GanRunConfig::default()
        }
    }

    fn tiny_pairs(n: u32) -> Vec<GanPair> {
        let items = synthesize_corpus(&CorpusSpec {
            classes: 1,
            per_class: n,
            size: 16,
            seed: 1,
            degradation: DegradationConfig::default(),
        })
        .unwrap();
        corpus_pairs(&items).unwrap()
    }

    fn map(v: f64) -> PatchScoreMap {
        PatchScoreMap::new(2, 2, vec![v; 4]).unwrap()
    }

    #[test]
    fn map_loss_cases() {
        assert!(mse_map_loss(&map(1.0 - 1e-12), 1.0).unwrap() < 1e-20);
        assert!((mse_map_loss(&map(0.5), 0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((mse_map_loss(&map(1e-12), 1.0).unwrap() - 1.0).abs() < 1e-9);
        assert!(mse_map_loss(&map(0.5), 0.5).is_err());
    }

    #[test]
    fn objectives() {
        let w = GanLossWeights::default();
        assert_eq!(discriminator_objective(0.25, 0.25, &w), 0.25);
        assert_eq!(discriminator_objective(0.0, 0.0, &w), 0.0);
        let w0 = GanLossWeights { w_g_real: 0.0, ..w };
        assert_eq!(generator_objective(0.9, 0.3, &w0), 0.15);
    }

    #[test]
    fn l1_cases() {
        let a = ImageTensor::filled(
            16,
            16,
            crate::image::ColorSpace::Gray,
            ValueRange::UnitSigned,
            0.1,
        )
        .unwrap();
        let b = ImageTensor::filled(
            16,
            16,
            crate::image::ColorSpace::Gray,
            ValueRange::UnitSigned,
            0.3,
        )
        .unwrap();
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert!((l1_loss(&a, &b).unwrap() - 0.2).abs() < 1e-7);
        let c = ImageTensor::filled(
            32,
            16,
            crate::image::ColorSpace::Gray,
            ValueRange::UnitSigned,
            0.3,
        )
        .unwrap();
        assert!(l1_loss(&a, &c).is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let d = GanRunConfig::default();
        assert_eq!(
            (d.batch_size, d.lr, d.betas, d.epochs, d.image_size),
            (16, 2e-4, [0.5, 0.999], 200, 256)
        );
        assert!(d.validate().is_ok());
        assert!(GanRunConfig::desk().validate().is_ok());
        assert!(GanRunConfig {
            lr: 0.0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(GanRunConfig { depth: 9, ..d }.validate().is_err());
    }

    #[test]
    fn steps_are_update_scoped() {
        let cfg = tiny_cfg();
        let pairs = tiny_pairs(2);
        let refs: Vec<&GanPair> = pairs.iter().collect();
        let mut state = GanTrainState::new(&cfg, DType::F32).unwrap();
        let batch = GanBatch::from_pairs(&refs, DType::F32).unwrap();
        let g0 = state.generator.params().export().unwrap();
        let d0 = state.discriminator.params().export().unwrap();
        state.discriminator_step(&batch, &cfg.weights, 1).unwrap();
        assert_eq!(state.generator.params().export().unwrap(), g0);
        assert_ne!(state.discriminator.params().export().unwrap(), d0);
        let d1 = state.discriminator.params().export().unwrap();
        state
            .generator_step(&batch, &cfg.weights, AdversarialMode::Standard, 1)
            .unwrap();
        assert_eq!(state.discriminator.params().export().unwrap(), d1);
        assert_ne!(state.generator.params().export().unwrap(), g0);
    }

    #[test]
    fn training_records_history_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let run = train_gan(&cfg, &tiny_pairs(3), Some(dir.path())).unwrap();
        let steps: Vec<u64> = run.state.history.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 1, 2, 3]);
        assert!(run
            .state
            .history
            .iter()
            .all(|r| r.loss_d >= 0.0 && r.loss_g >= 0.0 && r.loss_g_gen.is_finite()));
        assert_eq!(run.checkpoints.len(), 6);
        assert!(history_csv(&run.state.history).starts_with("step,loss_D,loss_G,loss_G_gen\n0,"));
    }
}
