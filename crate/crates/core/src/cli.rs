//! Command-line entry points. Every command writes under `--out` and appends
//! a manifest to `<out>/run.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::artifacts::{
    self, append_manifest, dataset_fingerprint, load_checkpoint, load_config, read_manifests,
    unix_time, write_atomic, FileHash, RunManifest,
};
use crate::dataset::synth::{synthesize_corpus, write_corpus, CorpusSpec};
use crate::dataset::{
    list_images, load_class_dataset, load_pair_dataset, split_by_class, DegradationConfig,
    LabeledImageSet,
};
use crate::error::{Error, Result};
use crate::gan_training::{
    continue_gan, history_csv, load_generator, steps_per_epoch, GanRunConfig, GanTrainState,
};
use crate::image::ImageTensor;
use crate::nn;
use crate::quality_metrics::BrisqueModel;
use crate::report::{
    image_metrics, plot_loss_curves, plot_triplet_panel, MetricColor, MetricsReport,
};
use crate::siamese::{evaluate_one_shot, load_siamese, train_siamese, SiameseRunConfig};

/// Outcome of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandResult {
    /// 0 success, 1 validation failure, 2 runtime failure.
    pub exit_code: i32,
    pub artifacts_written: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Debug, Parser)]
#[command(
    name = "npx",
    version,
    about = "Watermark denoising and one-shot classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SupportSource {
    Clean,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ColorArg {
    Luminance,
    RgbMean,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic clean/noisy corpus.
    Synth {
        #[arg(long, default_value_t = 5)]
        classes: u32,
        #[arg(long, default_value_t = 8)]
        per_class: u32,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, env = "NPX_SEED", default_value_t = 0)]
        seed: u64,
        /// Degradation settings (JSON).
        #[arg(long)]
        degradation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoising GAN on `<data>/noisy` and `<data>/clean`.
    TrainGan {
        #[arg(long)]
        data: PathBuf,
        /// Run configuration (JSON); missing keys take the published defaults.
        #[arg(long, conflicts_with = "desk")]
        config: Option<PathBuf>,
        /// Small 64×64 preset.
        #[arg(long)]
        desk: bool,
        #[arg(long, env = "NPX_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Directory holding generator/discriminator checkpoints to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate every image under `--in` with a trained generator.
    Denoise {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the Siamese network on the training-class split of `--data`.
    TrainSiamese {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "desk")]
        config: Option<PathBuf>,
        #[arg(long)]
        desk: bool,
        #[arg(long, env = "NPX_SEED")]
        seed: Option<u64>,
        /// Fraction of classes used for training; 1 trains on all classes.
        #[arg(long, default_value_t = 0.6)]
        split: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Episodic n-way one-shot evaluation.
    EvalOneshot {
        #[arg(long)]
        ckpt: PathBuf,
        /// Original clean images (class layout).
        #[arg(long)]
        clean: PathBuf,
        /// Generated images (class layout); defaults to `--clean`.
        #[arg(long)]
        generated: Option<PathBuf>,
        /// Which set supplies the support exemplars; targets come from the other.
        #[arg(long, value_enum, default_value_t = SupportSource::Clean)]
        support: SupportSource,
        #[arg(long, default_value_t = 5)]
        n_way: usize,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, env = "NPX_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full-reference metrics of `--pred` against `--ref` (matched by path).
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_enum, default_value_t = ColorArg::Luminance)]
        color: ColorArg,
        /// Linear BRISQUE scoring model (JSON).
        #[arg(long)]
        brisque_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate run manifests into markdown and CSV tables.
    Report {
        /// Run directories (each holding run.json).
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn dispatch<I, T>(argv: I) -> CommandResult
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            return CommandResult {
                exit_code: code,
                artifacts_written: Vec::new(),
                summary: e.render().to_string(),
            };
        }
    };
    match run(cli.command) {
        Ok((artifacts_written, summary)) => CommandResult {
            exit_code: 0,
            artifacts_written,
            summary,
        },
        Err(e) => CommandResult {
            exit_code: e.exit_code(),
            artifacts_written: Vec::new(),
            summary: format!("error: {e}"),
        },
    }
}

type Outcome = Result<(Vec<PathBuf>, String)>;

fn run(command: Command) -> Outcome {
    match command {
        Command::Synth {
            classes,
            per_class,
            size,
            seed,
            degradation,
            out,
        } => cmd_synth(classes, per_class, size, seed, degradation.as_deref(), &out),
        Command::TrainGan {
            data,
            config,
            desk,
            seed,
            epochs,
            resume,
            out,
        } => cmd_train_gan(
            &data,
            config.as_deref(),
            desk,
            seed,
            epochs,
            resume.as_deref(),
            &out,
        ),
        Command::Denoise {
            ckpt,
            input,
            batch,
            out,
        } => cmd_denoise(&ckpt, &input, batch, &out),
        Command::TrainSiamese {
            data,
            config,
            desk,
            seed,
            split,
            out,
        } => cmd_train_siamese(&data, config.as_deref(), desk, seed, split, &out),
        Command::EvalOneshot {
            ckpt,
            clean,
            generated,
            support,
            n_way,
            episodes,
            seed,
            out,
        } => cmd_eval_oneshot(
            &ckpt,
            &clean,
            generated.as_deref(),
            support,
            n_way,
            episodes,
            seed,
            &out,
        ),
        Command::Metrics {
            pred,
            reference,
            color,
            brisque_model,
            out,
        } => cmd_metrics(&pred, &reference, color, brisque_model.as_deref(), &out),
        Command::Report { runs, out } => cmd_report(&runs, &out),
    }
}

fn write_text(path: &Path, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    written.push(path.to_path_buf());
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::validation(e.to_string()))
}

fn fingerprint_under(roots: &[(&str, &Path)]) -> Result<Vec<FileHash>> {
    let mut all = Vec::new();
    for (prefix, root) in roots {
        for mut f in dataset_fingerprint(root)? {
            f.path = format!("{prefix}/{}", f.path);
            all.push(f);
        }
    }
    Ok(all)
}

fn finish_manifest(
    mut manifest: RunManifest,
    out: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    manifest.finished_unix = unix_time();
    let path = out.join("run.json");
    append_manifest(&path, &manifest)?;
    written.push(path);
    Ok(())
}

fn path_strings(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn cmd_synth(
    classes: u32,
    per_class: u32,
    size: usize,
    seed: u64,
    degradation: Option<&Path>,
    out: &Path,
) -> Outcome {
    let started = unix_time();
    let degradation = match degradation {
        Some(p) => DegradationConfig::load(p)?,
        None => DegradationConfig::default(),
    };
    let spec = CorpusSpec {
        classes,
        per_class,
        size,
        seed,
        degradation,
    };
    let items = synthesize_corpus(&spec)?;
    let mut written = write_corpus(&items, out)?;
    let mut manifest = RunManifest::new("synth", &spec, started)?;
    manifest.dataset_fingerprint =
        fingerprint_under(&[("clean", &out.join("clean")), ("noisy", &out.join("noisy"))])?;
    manifest.metrics.insert("images".into(), items.len() as f64);
    finish_manifest(manifest, out, &mut written)?;
    let summary = format!(
        "wrote {} clean and {} noisy images ({classes} classes) under {}",
        items.len(),
        items.len(),
        out.display()
    );
    Ok((written, summary))
}

fn gan_config(
    config: Option<&Path>,
    desk: bool,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> Result<GanRunConfig> {
    let mut cfg = match (config, desk) {
        (Some(p), _) => load_config::<GanRunConfig>(p)?,
        (None, true) => GanRunConfig::desk(),
        (None, false) => GanRunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train_gan(
    data: &Path,
    config: Option<&Path>,
    desk: bool,
    seed: Option<u64>,
    epochs: Option<usize>,
    resume: Option<&Path>,
    out: &Path,
) -> Outcome {
    let started = unix_time();
    let (noisy_root, clean_root) = (data.join("noisy"), data.join("clean"));
    let (state, cfg) = match resume {
        Some(dir) => {
            let g = load_checkpoint(&dir.join(format!("generator.{}", artifacts::CHECKPOINT_EXT)))?;
            let d =
                load_checkpoint(&dir.join(format!("discriminator.{}", artifacts::CHECKPOINT_EXT)))?;
            let echo: GanRunConfig = serde_json::from_value(g.config.clone())
                .map_err(|e| Error::Corruption(format!("config echo: {e}")))?;
            let size = echo.image_size;
            let pairs = load_pair_dataset(&noisy_root, &clean_root, (size, size))?;
            let spe = steps_per_epoch(pairs.len(), echo.batch_size);
            let (state, mut cfg) =
                GanTrainState::from_checkpoints(&g, &d, candle_core::DType::F32, spe)?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            (state, cfg)
        }
        None => {
            let cfg = gan_config(config, desk, seed, epochs)?;
            (GanTrainState::new(&cfg, candle_core::DType::F32)?, cfg)
        }
    };
    let size = cfg.image_size;
    let pairs = load_pair_dataset(&noisy_root, &clean_root, (size, size))?;
    let ckpt_dir = out.join("checkpoints");
    let run = continue_gan(state, &cfg, &pairs, Some(&ckpt_dir))?;
    let mut written = run.checkpoints.clone();

    let history_path = out.join("history.csv");
    let mut csv = history_csv(&run.state.history);
    if resume.is_some() && history_path.exists() {
        let previous =
            fs::read_to_string(&history_path).map_err(|e| Error::io(&history_path, e))?;
        csv = previous + csv.split_once('\n').map_or("", |(_, rows)| rows);
    }
    write_text(&history_path, &csv, &mut written)?;
    if !run.state.history.is_empty() {
        let plot = out.join("loss_curves.svg");
        plot_loss_curves(&run.state.history, &plot)?;
        written.push(plot);
    }

    let generator = &run.state.generator;
    let noisy: Vec<&ImageTensor> = pairs.iter().map(|p| &p.noisy).collect();
    let generated = generator.translate(&noisy, cfg.batch_size)?;
    let (mut ssim_gen, mut ssim_noisy) = (0.0, 0.0);
    for (i, (p, g)) in pairs.iter().zip(&generated).enumerate() {
        ssim_gen += image_metrics("", g, &p.clean, MetricColor::Luminance, None)?.ssim;
        ssim_noisy += image_metrics("", &p.noisy, &p.clean, MetricColor::Luminance, None)?.ssim;
        if i < 4 {
            let panel = out.join("panels").join(format!("triplet_{i:02}.png"));
            plot_triplet_panel(&p.clean, &p.noisy, g, &panel)?;
            written.push(panel);
        }
    }
    let n = pairs.len() as f64;
    let mut manifest = RunManifest::new("train-gan", &cfg, started)?;
    manifest.dataset_fingerprint =
        fingerprint_under(&[("clean", &clean_root), ("noisy", &noisy_root)])?;
    manifest
        .metrics
        .insert("mean_ssim_generated".into(), ssim_gen / n);
    manifest
        .metrics
        .insert("mean_ssim_noisy".into(), ssim_noisy / n);
    if let Some(last) = run.state.history.last() {
        manifest.metrics.insert("final_loss_D".into(), last.loss_d);
        manifest.metrics.insert("final_loss_G".into(), last.loss_g);
        manifest
            .metrics
            .insert("final_loss_G_gen".into(), last.loss_g_gen);
    }
    manifest.checkpoints = path_strings(&run.checkpoints);
    finish_manifest(manifest, out, &mut written)?;
    let summary = format!(
        "trained {} epochs ({} steps); mean SSIM generated {:.4} vs noisy {:.4}",
        run.state.epoch,
        run.state.step,
        ssim_gen / n,
        ssim_noisy / n
    );
    Ok((written, summary))
}

/// Image files directly under `root` and one level of subdirectories, as
/// paths relative to `root`.
fn relative_images(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::NotFound(root.to_path_buf()));
    }
    let mut rels: Vec<PathBuf> = list_images(root)?
        .into_iter()
        .filter_map(|p| p.file_name().map(PathBuf::from))
        .collect();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let name = PathBuf::from(dir.file_name().unwrap_or_default());
        for f in list_images(&dir)? {
            rels.push(name.join(f.file_name().unwrap_or_default()));
        }
    }
    if rels.is_empty() {
        return Err(Error::validation(format!(
            "{} holds no images",
            root.display()
        )));
    }
    Ok(rels)
}

fn cmd_denoise(ckpt: &Path, input: &Path, batch: usize, out: &Path) -> Outcome {
    let started = unix_time();
    let ck = load_checkpoint(ckpt)?;
    let generator = load_generator(&ck)?;
    let size = generator.config().image_size;
    let rels = relative_images(input)?;
    let mut written = Vec::with_capacity(rels.len() + 1);
    for chunk in rels.chunks(batch.max(1)) {
        let images = chunk
            .iter()
            .map(|rel| Ok(ImageTensor::load_resized(&input.join(rel), size, size)?.to_rgb()))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ImageTensor> = images.iter().collect();
        for (rel, img) in chunk.iter().zip(generator.translate(&refs, batch)?) {
            let path = out.join(rel);
            img.save_png(&path)?;
            written.push(path);
        }
    }
    let mut manifest = RunManifest::new("denoise", &ck.config, started)?;
    manifest.dataset_fingerprint = fingerprint_under(&[("in", input)])?;
    manifest.metrics.insert("images".into(), rels.len() as f64);
    manifest.checkpoints = vec![ckpt.display().to_string()];
    finish_manifest(manifest, out, &mut written)?;
    Ok((
        written,
        format!("denoised {} images into {}", rels.len(), out.display()),
    ))
}

fn cmd_train_siamese(
    data: &Path,
    config: Option<&Path>,
    desk: bool,
    seed: Option<u64>,
    split: f64,
    out: &Path,
) -> Outcome {
    let started = unix_time();
    let mut cfg = match (config, desk) {
        (Some(p), _) => load_config::<SiameseRunConfig>(p)?,
        (None, true) => SiameseRunConfig::desk(),
        (None, false) => SiameseRunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let set = load_class_dataset(data, (cfg.image_size, cfg.image_size))?;
    let (train, eval) = if split >= 1.0 {
        (set.clone(), None)
    } else {
        let (t, e) = split_by_class(&set, split, cfg.seed)?;
        (t, Some(e))
    };
    let run = train_siamese(&cfg, &train, None)?;
    let mut written = Vec::new();
    let ckpt = out.join(format!("siamese.{}", artifacts::CHECKPOINT_EXT));
    artifacts::save_checkpoint(&run.to_checkpoint(&cfg)?, &ckpt)?;
    written.push(ckpt.clone());
    write_text(
        &out.join("history.json"),
        &to_json(&run.history)?,
        &mut written,
    )?;
    let names = |s: &LabeledImageSet| -> Vec<String> {
        s.classes()
            .iter()
            .map(|c| s.class_name(*c).unwrap_or_default().to_string())
            .collect()
    };
    let split_doc = serde_json::json!({
        "train_classes": names(&train),
        "eval_classes": eval.as_ref().map(names).unwrap_or_default(),
    });
    write_text(&out.join("split.json"), &to_json(&split_doc)?, &mut written)?;
    let mut manifest = RunManifest::new("train-siamese", &cfg, started)?;
    manifest.dataset_fingerprint = fingerprint_under(&[("data", data)])?;
    if let Some(last) = run.history.last() {
        manifest
            .metrics
            .insert("final_train_loss".into(), last.train_loss);
        if let Some(v) = last.val_loss {
            manifest.metrics.insert("final_val_loss".into(), v);
        }
    }
    manifest.checkpoints = vec![ckpt.display().to_string()];
    finish_manifest(manifest, out, &mut written)?;
    let summary = format!(
        "trained {} epochs on {} classes; final train loss {:.4}",
        run.history.len(),
        train.class_count(),
        run.history.last().map_or(f64::NAN, |r| r.train_loss)
    );
    Ok((written, summary))
}

/// Relabels `set` so that class ids follow `reference`'s class names.
fn align_classes(set: &LabeledImageSet, reference: &LabeledImageSet) -> Result<LabeledImageSet> {
    let by_name: BTreeMap<&str, u32> = reference
        .classes()
        .into_iter()
        .filter_map(|c| reference.class_name(c).map(|n| (n, c)))
        .collect();
    let mut samples = Vec::with_capacity(set.len());
    for (img, class) in set.samples() {
        let name = set.class_name(*class).unwrap_or_default();
        let id = by_name.get(name).ok_or_else(|| {
            Error::validation(format!("class `{name}` missing from the support images"))
        })?;
        samples.push((img.clone(), *id));
    }
    let names = reference
        .classes()
        .into_iter()
        .filter_map(|c| reference.class_name(c).map(|n| (c, n.to_string())))
        .collect();
    Ok(LabeledImageSet::new(samples)?.with_class_names(names))
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval_oneshot(
    ckpt: &Path,
    clean: &Path,
    generated: Option<&Path>,
    support: SupportSource,
    n_way: usize,
    episodes: usize,
    seed: u64,
    out: &Path,
) -> Outcome {
    let started = unix_time();
    let (model, cfg) = load_siamese(&load_checkpoint(ckpt)?)?;
    let size = (cfg.image_size, cfg.image_size);
    let clean_set = load_class_dataset(clean, size)?;
    let generated_set = match generated {
        Some(dir) => Some(align_classes(&load_class_dataset(dir, size)?, &clean_set)?),
        None => None,
    };
    let mut rng = nn::seeded_rng(seed);
    let report = match (&generated_set, support) {
        (None, _) => evaluate_one_shot(&model, &clean_set, &clean_set, episodes, n_way, &mut rng)?,
        (Some(g), SupportSource::Clean) => {
            evaluate_one_shot(&model, g, &clean_set, episodes, n_way, &mut rng)?
        }
        (Some(g), SupportSource::Generated) => {
            let targets = clean_set.restrict_to(&g.classes())?;
            evaluate_one_shot(&model, &targets, g, episodes, n_way, &mut rng)?
        }
    };
    let mut written = Vec::new();
    write_text(
        &out.join("oneshot_report.json"),
        &to_json(&report)?,
        &mut written,
    )?;
    let run_cfg = serde_json::json!({
        "siamese": cfg,
        "n_way": n_way,
        "episodes": episodes,
        "seed": seed,
        "support": format!("{support:?}").to_lowercase(),
    });
    let mut manifest = RunManifest::new("eval-oneshot", &run_cfg, started)?;
    let mut roots = vec![("clean", clean)];
    if let Some(g) = generated {
        roots.push(("generated", g));
    }
    manifest.dataset_fingerprint = fingerprint_under(&roots)?;
    manifest.metrics.insert("accuracy".into(), report.accuracy);
    manifest.metrics.insert("n_way".into(), n_way as f64);
    manifest.metrics.insert("episodes".into(), episodes as f64);
    manifest.checkpoints = vec![ckpt.display().to_string()];
    finish_manifest(manifest, out, &mut written)?;
    Ok((
        written,
        format!(
            "{n_way}-way one-shot accuracy {:.4} over {episodes} episodes",
            report.accuracy
        ),
    ))
}

fn cmd_metrics(
    pred: &Path,
    reference: &Path,
    color: ColorArg,
    brisque_model: Option<&Path>,
    out: &Path,
) -> Outcome {
    let started = unix_time();
    let model = brisque_model.map(BrisqueModel::load).transpose()?;
    let color = match color {
        ColorArg::Luminance => MetricColor::Luminance,
        ColorArg::RgbMean => MetricColor::RgbMean,
    };
    let rels = relative_images(pred)?;
    let mut rows = Vec::with_capacity(rels.len());
    for rel in &rels {
        let ref_path = reference.join(rel);
        if !ref_path.exists() {
            return Err(Error::NotFound(ref_path));
        }
        let p = ImageTensor::load(&pred.join(rel))?;
        let r = ImageTensor::load(&ref_path)?;
        let id = rel.to_string_lossy().replace('\\', "/");
        rows.push(image_metrics(&id, &p, &r, color, model.as_ref())?);
    }
    let report = MetricsReport::new(color, rows)?;
    let mut written = Vec::new();
    write_text(&out.join("metrics.csv"), &report.to_csv(), &mut written)?;
    write_text(&out.join("metrics.json"), &report.to_json()?, &mut written)?;
    let run_cfg = serde_json::json!({ "color": color, "brisque_model": brisque_model.map(|p| p.display().to_string()) });
    let mut manifest = RunManifest::new("metrics", &run_cfg, started)?;
    manifest.dataset_fingerprint = fingerprint_under(&[("pred", pred), ("ref", reference)])?;
    manifest.metrics.insert("mean_mse".into(), report.mean_mse);
    manifest
        .metrics
        .insert("mean_rmse".into(), report.mean_rmse);
    if report.mean_psnr_db.is_finite() {
        manifest
            .metrics
            .insert("mean_psnr_db".into(), report.mean_psnr_db);
    }
    manifest
        .metrics
        .insert("mean_ssim".into(), report.mean_ssim);
    finish_manifest(manifest, out, &mut written)?;
    Ok((
        written,
        format!(
            "{} images: mean MSE {:.3}, RMSE {:.3}, PSNR {} dB, SSIM {:.4}",
            report.rows.len(),
            report.mean_mse,
            report.mean_rmse,
            crate::quality_metrics::format_psnr(report.mean_psnr_db),
            report.mean_ssim
        ),
    ))
}

fn cmd_report(runs: &[PathBuf], out: &Path) -> Outcome {
    let mut manifests = Vec::new();
    for dir in runs {
        let path = dir.join("run.json");
        if !path.exists() {
            return Err(Error::NotFound(path));
        }
        manifests.extend(read_manifests(&path)?);
    }
    let keys: Vec<String> = manifests
        .iter()
        .flat_map(|m| m.metrics.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let cell = |m: &RunManifest, k: &str| {
        m.metrics
            .get(k)
            .map(|v| format!("{v:.4}"))
            .unwrap_or_default()
    };
    let mut csv = format!("run_id,command,config_hash,{}\n", keys.join(","));
    let mut md = format!(
        "| run | command | config | {} |\n|---|---|---|{}\n",
        keys.join(" | "),
        "---|".repeat(keys.len())
    );
    for m in &manifests {
        let cells: Vec<String> = keys.iter().map(|k| cell(m, k)).collect();
        csv.push_str(&format!(
            "{},{},{},{}\n",
            m.run_id,
            m.command,
            m.config_hash,
            cells.join(",")
        ));
        md.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            m.run_id,
            m.command,
            &m.config_hash[..12.min(m.config_hash.len())],
            cells.join(" | ")
        ));
    }
    let mut written = Vec::new();
    write_text(&out.join("summary.csv"), &csv, &mut written)?;
    write_text(&out.join("summary.md"), &md, &mut written)?;
    Ok((written, format!("summarized {} runs", manifests.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_and_flag_exit_one() {
        let r = dispatch(["npx", "bogus"]);
        assert_eq!(r.exit_code, 1);
        assert!(r.summary.to_lowercase().contains("usage"));
        let r = dispatch(["npx", "synth", "--out", "x", "--nope"]);
        assert_eq!(r.exit_code, 1);
        assert_eq!(dispatch(["npx", "--help"]).exit_code, 0);
    }

    #[test]
    fn runtime_and_validation_codes() {
        let dir = tempfile::tempdir().unwrap();
        let r = dispatch([
            "npx",
            "denoise",
            "--ckpt",
            dir.path().join("missing.npxckpt").to_str().unwrap(),
            "--in",
            dir.path().to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ]);
        assert_eq!(r.exit_code, 1, "{}", r.summary);
        let bad = dir.path().join("bad.npxckpt");
        fs::write(&bad, b"NPXCKPT\0garbage").unwrap();
        let r = dispatch([
            "npx",
            "denoise",
            "--ckpt",
            bad.to_str().unwrap(),
            "--in",
            dir.path().to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ]);
        assert_eq!(r.exit_code, 2, "{}", r.summary);
    }

    #[test]
    fn synth_then_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let r = dispatch([
            "npx",
            "synth",
            "--classes",
            "2",
            "--per-class",
            "2",
            "--size",
            "32",
            "--seed",
            "7",
            "--out",
            corpus.to_str().unwrap(),
        ]);
        assert_eq!(r.exit_code, 0, "{}", r.summary);
        assert_eq!(relative_images(&corpus.join("clean")).unwrap().len(), 4);
        let rep = dir.path().join("rep");
        let r = dispatch([
            "npx",
            "metrics",
            "--pred",
            corpus.join("noisy").to_str().unwrap(),
            "--ref",
            corpus.join("clean").to_str().unwrap(),
            "--out",
            rep.to_str().unwrap(),
        ]);
        assert_eq!(r.exit_code, 0, "{}", r.summary);
        let csv = fs::read_to_string(rep.join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 6);
        let r = dispatch([
            "npx",
            "report",
            "--runs",
            corpus.to_str().unwrap(),
            rep.to_str().unwrap(),
            "--out",
            dir.path().join("sum").to_str().unwrap(),
        ]);
        assert_eq!(r.exit_code, 0, "{}", r.summary);
    }
}
